"""Location-privacy simulation toolkit for raw-data cooperative perception.

Core pieces: synthetic driving scenarios (`scene`), pose obfuscation policies
(`obfuscation`), a tracking-and-matching adversary with privacy metrics
(`adversary`), geometric novel-view rendering (`nvs`), a dual-stack duty-cycle
scheduler (`scheduler`), usage-based billing (`billing`), a versioned wire
codec (`wire`), and an experiment runner (`experiments`) exposed through both
a FastAPI service (`rawshare.service`) and a thin CLI (`rawshare.cli`).
"""

__version__ = "0.1.0"

from .adversary import (  # noqa: E402
    AssignmentResult,
    SweepSpec,
    evaluate_privacy,
    hungarian_assign,
    rollout_sweep,
    standard_suite,
)
from .obfuscation import (  # noqa: E402
    ObfuscationPolicy,
    PseudonymPolicy,
    SharedFrame,
    emit_shared_stream,
)
from .scene import Pose, Scenario, Trajectory, generate_scenario, import_trajectories  # noqa: E402

__all__ = [
    "AssignmentResult",
    "ObfuscationPolicy",
    "Pose",
    "PseudonymPolicy",
    "Scenario",
    "SharedFrame",
    "SweepSpec",
    "Trajectory",
    "emit_shared_stream",
    "evaluate_privacy",
    "generate_scenario",
    "hungarian_assign",
    "import_trajectories",
    "rollout_sweep",
    "standard_suite",
    "__version__",
]
