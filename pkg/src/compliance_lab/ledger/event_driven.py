"""Event-driven policy: tokens are lost only when a violation happens."""

from __future__ import annotations

from compliance_lab.ledger.base import LedgerPolicy, PolicyKind
from compliance_lab.ledger.book import Ledger, LedgerTransaction, TokenAmount


class EventDrivenPolicy(LedgerPolicy):
    """A violation forfeits the stake and the agent re-deposits at the current price.

    Compliance emits nothing, so compliant steps are silent on the ledger.
    An agent with no stake on record is re-enrolled with a deposit.
    """

    kind = PolicyKind.EVENT_DRIVEN

    def apply(
        self,
        agent_id: int,
        complied: int,
        price: TokenAmount,
        ledger: Ledger,
        step: int,
    ) -> list[LedgerTransaction]:
        if not ledger.is_enrolled(agent_id):
            return self.enroll(agent_id, price, ledger, step)
        if complied:
            return []
        return [ledger.forfeit_stake(step, agent_id), ledger.deposit(step, agent_id, price)]
