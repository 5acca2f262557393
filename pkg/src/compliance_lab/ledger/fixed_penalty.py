"""Fixed penalty policy: one deposit per contract, settled at contract end."""

from __future__ import annotations

from compliance_lab.ledger.base import LedgerPolicy, PolicyKind
from compliance_lab.ledger.book import Ledger, LedgerTransaction, TokenAmount


class FixedPenaltyPolicy(LedgerPolicy):
    """Deposit at enrollment; after `contract_length` steps the full stake is
    returned if the agent complied at every step of the contract, otherwise
    forfeited. The agent then re-enrolls at the current price for the next
    contract, whatever the outcome.
    """

    kind = PolicyKind.FIXED_PENALTY

    def __init__(self, contract_length: int):
        if contract_length < 1:
            raise ValueError(f"contract_length {contract_length} must be >= 1")
        self.contract_length = contract_length
        self._started: dict[int, int] = {}
        self._violated: dict[int, bool] = {}

    def enroll(self, agent_id: int, price: TokenAmount, ledger: Ledger, step: int) -> list[LedgerTransaction]:
        self._started[agent_id] = step
        self._violated[agent_id] = False
        return super().enroll(agent_id, price, ledger, step)

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
        if not complied:
            self._violated[agent_id] = True
        if step - self._started[agent_id] < self.contract_length:
            return []

        if self._violated[agent_id]:
            settle = ledger.forfeit_stake(step, agent_id)
        else:
            settle = ledger.return_stake(step, agent_id)
        return [settle, *self.enroll(agent_id, price, ledger, step)]
