"""Exception types shared across the simulation modules."""


class InvalidParameterError(ValueError):
    """An operation was called with parameters outside its contract."""


class DegenerateScenarioError(RuntimeError):
    """Privacy evaluation is undefined: no sharer was ever observed by the ego."""
