"""Adaptive penalty policy: the contract is reissued at every step."""

from __future__ import annotations

from compliance_lab.ledger.base import LedgerPolicy, PolicyKind
from compliance_lab.ledger.book import Ledger, LedgerTransaction, TokenAmount


class AdaptivePenaltyPolicy(LedgerPolicy):
    """Compliers get the previous stake back, non-compliers forfeit it; both re-stake at the current price.

    Every step settles every agent, so compliance is readable from the ledger
    at every step.
    """

    kind = PolicyKind.ADAPTIVE_PENALTY

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
        settle = ledger.return_stake(step, agent_id) if complied else ledger.forfeit_stake(step, agent_id)
        return [settle, ledger.deposit(step, agent_id, price)]
