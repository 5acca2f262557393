"""Token-bond ledger and the bond policies that write to it."""

from compliance_lab.ledger.adaptive_penalty import AdaptivePenaltyPolicy
from compliance_lab.ledger.base import LedgerPolicy, PolicyKind
from compliance_lab.ledger.book import (
    Ledger,
    LedgerTransaction,
    TokenAmount,
    TxKind,
    bond_price,
    verify_conservation,
)
from compliance_lab.ledger.event_driven import EventDrivenPolicy
from compliance_lab.ledger.fixed_penalty import FixedPenaltyPolicy

POLICY_MAP: dict[PolicyKind, type[LedgerPolicy]] = {
    PolicyKind.FIXED_PENALTY: FixedPenaltyPolicy,
    PolicyKind.ADAPTIVE_PENALTY: AdaptivePenaltyPolicy,
    PolicyKind.EVENT_DRIVEN: EventDrivenPolicy,
}


def make_policy(kind: PolicyKind, contract_length: int) -> LedgerPolicy:
    """Fresh policy instance for one run."""
    if kind is PolicyKind.FIXED_PENALTY:
        return FixedPenaltyPolicy(contract_length)
    return POLICY_MAP[kind]()


def apply_policy(
    policy: LedgerPolicy,
    agent_id: int,
    complied: int,
    price: TokenAmount,
    ledger: Ledger,
    step: int,
) -> list[LedgerTransaction]:
    return policy.apply(agent_id, complied, price, ledger, step)


__all__ = [
    "POLICY_MAP", "make_policy", "apply_policy",
    "LedgerPolicy", "PolicyKind",
    "FixedPenaltyPolicy", "AdaptivePenaltyPolicy", "EventDrivenPolicy",
    "Ledger", "LedgerTransaction", "TokenAmount", "TxKind",
    "bond_price", "verify_conservation",
]
