"""Usage-based billing over served open-stack frames.

All monetary amounts are integer minor units, so settlement conservation is
exact. A line item's amount depends only on its priority, never on when the
frame was produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import InvalidParameterError
from .scheduler import OPEN, FrameRecord


@dataclass(frozen=True)
class Tariff:
    unit_cost: int = 1
    priority_multiplier: float = 1.0
    subscription_flat: int = 0

    def __post_init__(self):
        if self.unit_cost < 0 or self.subscription_flat < 0:
            raise InvalidParameterError("costs must be non-negative")
        if self.priority_multiplier < 1.0:
            raise InvalidParameterError("priority_multiplier must be >= 1")

    def amount(self, priority: str) -> int:
        if priority == "elevated":
            return round(self.unit_cost * self.priority_multiplier)
        return self.unit_cost


@dataclass(frozen=True)
class LineItem:
    t: float
    priority: str
    amount: int


@dataclass
class Invoice:
    recipient_id: str
    period: tuple[float, float]
    line_items: list[LineItem] = field(default_factory=list)
    subscription_flat: int = 0

    @property
    def total(self) -> int:
        return self.subscription_flat + sum(item.amount for item in self.line_items)


def meter(
    ledger: Sequence[FrameRecord],
    tariff: Tariff,
    period: tuple[float, float],
    recipients: Sequence[str] = (),
) -> list[Invoice]:
    """One invoice per recipient over the half-open period [start, end).

    Every served request on an open frame in the period becomes a line item.
    Subscribed recipients with no requests still owe the flat fee.
    """
    start, end = period
    if end < start:
        raise InvalidParameterError("period end must be >= start")
    invoices: dict[str, Invoice] = {
        r: Invoice(recipient_id=r, period=period, subscription_flat=tariff.subscription_flat)
        for r in recipients
    }
    for rec in ledger:
        if rec.stack != OPEN or not (start <= rec.t_produced < end):
            continue
        for req in rec.served_requests:
            inv = invoices.get(req.recipient_id)
            if inv is None:
                inv = Invoice(
                    recipient_id=req.recipient_id,
                    period=period,
                    subscription_flat=tariff.subscription_flat,
                )
                invoices[req.recipient_id] = inv
            inv.line_items.append(
                LineItem(t=rec.t_produced, priority=req.priority, amount=tariff.amount(req.priority))
            )
    return [invoices[r] for r in sorted(invoices)]


@dataclass
class SettlementMatrix:
    """Amounts owed, payer (recipient) -> payee (sharer), in minor units."""

    entries: dict[str, dict[str, int]]

    def amount(self, payer: str, payee: str) -> int:
        return self.entries.get(payer, {}).get(payee, 0)

    def payer_total(self, payer: str) -> int:
        return sum(self.entries.get(payer, {}).values())

    def payee_total(self, payee: str) -> int:
        return sum(row.get(payee, 0) for row in self.entries.values())

    def grand_total(self) -> int:
        return sum(sum(row.values()) for row in self.entries.values())

    def to_csv(self) -> str:
        lines = ["payer,payee,amount"]
        for payer in sorted(self.entries):
            for payee in sorted(self.entries[payer]):
                lines.append(f"{payer},{payee},{self.entries[payer][payee]}")
        return "\n".join(lines) + "\n"


def settle(
    invoices_by_sharer: Mapping[str, Sequence[Invoice]],
    recipients: Sequence[str] = (),
) -> SettlementMatrix:
    """Aggregate invoices from every sharer into a payer -> payee matrix."""
    entries: dict[str, dict[str, int]] = {r: {} for r in recipients}
    for sharer, invoices in invoices_by_sharer.items():
        for inv in invoices:
            row = entries.setdefault(inv.recipient_id, {})
            row[sharer] = row.get(sharer, 0) + inv.total
    return SettlementMatrix(entries=entries)


def invoice_to_dict(invoice: Invoice) -> dict:
    return {
        "recipient_id": invoice.recipient_id,
        "period": list(invoice.period),
        "subscription_flat": invoice.subscription_flat,
        "line_items": [
            {"t": item.t, "priority": item.priority, "amount": item.amount}
            for item in invoice.line_items
        ],
        "total": invoice.total,
    }
