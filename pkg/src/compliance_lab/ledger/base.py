"""Abstract bond policy: how compliance outcomes turn into ledger transactions."""

from __future__ import annotations

import abc
from enum import Enum

from compliance_lab.ledger.book import Ledger, LedgerTransaction, TokenAmount, TxKind


class PolicyKind(str, Enum):
    FIXED_PENALTY = "fixed"
    ADAPTIVE_PENALTY = "adaptive"
    EVENT_DRIVEN = "event"


class LedgerPolicy(abc.ABC):
    """Per-run policy state machine writing to one Ledger.

    Instances hold per-agent contract state, so each run owns its own policy.
    """

    kind: PolicyKind

    def enroll(self, agent_id: int, price: TokenAmount, ledger: Ledger, step: int) -> list[LedgerTransaction]:
        """Initial deposit at the agent's first step in the scheme."""
        return [ledger.deposit(step, agent_id, price)]

    @abc.abstractmethod
    def apply(
        self,
        agent_id: int,
        complied: int,
        price: TokenAmount,
        ledger: Ledger,
        step: int,
    ) -> list[LedgerTransaction]:
        """Process M_i(step) for one agent, with `price` the bond for the signals at `step`.

        Returns the transactions emitted, already appended to the ledger.
        """

    @staticmethod
    def infer_compliance(kinds: list[TxKind]) -> int | None:
        """Compliance M_i(k) implied by the agent's transactions at step k, or None if silent."""
        if TxKind.FORFEIT in kinds:
            return 0
        if TxKind.RETURN in kinds:
            return 1
        return None
