"""Append-only token ledger in integer micro-tokens.

Conservation: total deposits == total returns + total forfeits + outstanding
stakes, exactly, after every transaction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

MICRO_PER_TOKEN = 1_000_000
LEDGER_HEADER = "# ledger v1"
LEDGER_COLUMNS = ["step", "agent_id", "kind", "amount"]


class LedgerFormatError(Exception):
    """Raised when a ledger file cannot be parsed."""

    def __init__(self, path: str | Path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{path}: line {line}: {reason}")


class TxKind(str, Enum):
    DEPOSIT = "DEP"
    RETURN = "RET"
    FORFEIT = "FOR"


@dataclass(frozen=True, slots=True)
class TokenAmount:
    """Non-negative amount in micro-tokens (1 token = 10**6)."""

    micro_tokens: int

    def __post_init__(self):
        if not isinstance(self.micro_tokens, int) or isinstance(self.micro_tokens, bool):
            raise ValueError(f"token amount {self.micro_tokens!r} is not an integer")
        if self.micro_tokens < 0:
            raise ValueError(f"token amount {self.micro_tokens} is negative")

    def __add__(self, other: TokenAmount) -> TokenAmount:
        return TokenAmount(self.micro_tokens + other.micro_tokens)

    @property
    def tokens(self) -> float:
        return self.micro_tokens / MICRO_PER_TOKEN


ZERO = TokenAmount(0)


@dataclass(frozen=True, slots=True)
class LedgerTransaction:
    step: int
    agent_id: int
    kind: TxKind
    amount: TokenAmount


def bond_price(c_global: float, c: float, unit_scale: int) -> TokenAmount:
    """Bond value staked for signals (C, c): round-half-up of unit_scale * max(0, C + c)."""
    if unit_scale < 1:
        raise ValueError(f"unit_scale {unit_scale} must be >= 1")
    return TokenAmount(int(math.floor(unit_scale * max(0.0, c_global + c) + 0.5)))


def bond_prices(c_global: float, c: np.ndarray, unit_scale: int) -> np.ndarray:
    """bond_price over a column of individual signals, as int64 micro-tokens."""
    if unit_scale < 1:
        raise ValueError(f"unit_scale {unit_scale} must be >= 1")
    return np.floor(unit_scale * np.maximum(0.0, c_global + c) + 0.5).astype(np.int64)


class Ledger:
    """Transaction log plus the per-agent outstanding stake record."""

    def __init__(self):
        self.log: list[LedgerTransaction] = []
        self.stakes: dict[int, TokenAmount] = {}
        self.forfeited_total: TokenAmount = ZERO

    @classmethod
    def from_records(
        cls,
        log: list[LedgerTransaction],
        stakes: dict[int, TokenAmount],
        forfeited_total: TokenAmount | None = None,
    ) -> Ledger:
        ledger = cls()
        ledger.log = list(log)
        ledger.stakes = dict(stakes)
        ledger.forfeited_total = (
            forfeited_total
            if forfeited_total is not None
            else TokenAmount(sum(t.amount.micro_tokens for t in log if t.kind is TxKind.FORFEIT))
        )
        return ledger

    def outstanding(self, agent_id: int) -> TokenAmount:
        return self.stakes.get(agent_id, ZERO)

    def is_enrolled(self, agent_id: int) -> bool:
        return agent_id in self.stakes

    def deposit(self, step: int, agent_id: int, amount: TokenAmount) -> LedgerTransaction:
        tx = LedgerTransaction(step, agent_id, TxKind.DEPOSIT, amount)
        self.log.append(tx)
        self.stakes[agent_id] = self.outstanding(agent_id) + amount
        return tx

    def return_stake(self, step: int, agent_id: int) -> LedgerTransaction:
        """Return the agent's full outstanding stake."""
        tx = LedgerTransaction(step, agent_id, TxKind.RETURN, self._release(agent_id))
        self.log.append(tx)
        return tx

    def forfeit_stake(self, step: int, agent_id: int) -> LedgerTransaction:
        """Forfeit the agent's full outstanding stake."""
        amount = self._release(agent_id)
        tx = LedgerTransaction(step, agent_id, TxKind.FORFEIT, amount)
        self.log.append(tx)
        self.forfeited_total = self.forfeited_total + amount
        return tx

    def _release(self, agent_id: int) -> TokenAmount:
        if agent_id not in self.stakes:
            raise ValueError(f"agent {agent_id} has no stake to settle")
        return self.stakes.pop(agent_id)

    def __len__(self) -> int:
        return len(self.log)


def replay_balances(log: list[LedgerTransaction]) -> tuple[dict[int, int], list[str]]:
    """Replay a log in order, returning per-agent balances and any overdraws.

    Balances are plain ints so an overdrawn agent shows up negative instead of
    raising.
    """
    balances: dict[int, int] = {}
    problems: list[str] = []
    for idx, tx in enumerate(log):
        bal = balances.get(tx.agent_id, 0)
        if tx.kind is TxKind.DEPOSIT:
            balances[tx.agent_id] = bal + tx.amount.micro_tokens
            continue
        if tx.amount.micro_tokens > bal:
            problems.append(
                f"tx {idx} (step {tx.step}, agent {tx.agent_id}): "
                f"{tx.kind.value} {tx.amount.micro_tokens} exceeds outstanding {bal}"
            )
        balances[tx.agent_id] = bal - tx.amount.micro_tokens
    return balances, problems


def verify_conservation(ledger: Ledger) -> bool:
    """True iff deposits == returns + forfeits + outstanding stakes at every transaction."""
    balances, problems = replay_balances(ledger.log)
    if problems:
        return False
    agents = set(balances) | set(ledger.stakes)
    if any(balances.get(a, 0) != ledger.outstanding(a).micro_tokens for a in agents):
        return False
    forfeited = sum(t.amount.micro_tokens for t in ledger.log if t.kind is TxKind.FORFEIT)
    return forfeited == ledger.forfeited_total.micro_tokens


@dataclass(frozen=True)
class AgentTokenFlow:
    agent_id: int
    deposited: int
    returned: int
    forfeited: int
    outstanding: int

    @property
    def net_loss(self) -> int:
        """Tokens the agent has lost for good (settled deposits minus returns)."""
        return self.deposited - self.returned - self.outstanding


def agent_token_summary(ledger: Ledger) -> list[AgentTokenFlow]:
    """Per-agent deposited / returned / forfeited / outstanding, by agent id."""
    totals: dict[int, dict[TxKind, int]] = {}
    for tx in ledger.log:
        per_kind = totals.setdefault(tx.agent_id, {k: 0 for k in TxKind})
        per_kind[tx.kind] += tx.amount.micro_tokens
    return [
        AgentTokenFlow(
            agent_id=agent_id,
            deposited=per_kind[TxKind.DEPOSIT],
            returned=per_kind[TxKind.RETURN],
            forfeited=per_kind[TxKind.FORFEIT],
            outstanding=ledger.outstanding(agent_id).micro_tokens,
        )
        for agent_id, per_kind in sorted(totals.items())
    ]


# ── File I/O ─────────────────────────────────────────────────────────────


def write_ledger(ledger: Ledger, path: str | Path) -> Path:
    """Write `# ledger v1` followed by step,agent_id,kind,amount rows."""
    path = Path(path)
    frame = pd.DataFrame(
        {
            "step": np.fromiter((t.step for t in ledger.log), dtype=np.int64, count=len(ledger.log)),
            "agent_id": np.fromiter((t.agent_id for t in ledger.log), dtype=np.int64, count=len(ledger.log)),
            "kind": [t.kind.value for t in ledger.log],
            "amount": np.fromiter(
                (t.amount.micro_tokens for t in ledger.log), dtype=np.int64, count=len(ledger.log)
            ),
        },
        columns=LEDGER_COLUMNS,
    )
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(LEDGER_HEADER + "\n")
            frame.to_csv(fh, header=False, index=False, lineterminator="\n")
    except OSError as exc:
        raise OSError(f"cannot write ledger {path}: {exc}") from exc
    return path


def read_ledger(path: str | Path) -> Ledger:
    """Parse a ledger file. Stakes are rebuilt by replaying the log."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            first = fh.readline().rstrip("\r\n")
            if first != LEDGER_HEADER:
                raise LedgerFormatError(path, 1, f"expected header {LEDGER_HEADER!r}, got {first!r}")
            frame = pd.read_csv(
                fh, header=None, names=LEDGER_COLUMNS, dtype=str, keep_default_na=False
            )
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=LEDGER_COLUMNS, dtype=str)
    except pd.errors.ParserError as exc:
        raise LedgerFormatError(path, 0, f"malformed rows: {exc}") from exc
    except OSError as exc:
        raise OSError(f"cannot read ledger {path}: {exc}") from exc

    kinds = {k.value: k for k in TxKind}
    log: list[LedgerTransaction] = []
    for idx, row in enumerate(frame.itertuples(index=False)):
        line = idx + 2
        try:
            step, agent_id, amount = int(row.step), int(row.agent_id), int(row.amount)
        except ValueError:
            raise LedgerFormatError(path, line, f"non-integer field in {tuple(row)}") from None
        kind = kinds.get(row.kind.strip())
        if kind is None:
            raise LedgerFormatError(path, line, f"unknown kind {row.kind!r}")
        if amount < 0:
            raise LedgerFormatError(path, line, f"negative amount {amount}")
        log.append(LedgerTransaction(step, agent_id, kind, TokenAmount(amount)))

    balances, _ = replay_balances(log)
    last_kind = {tx.agent_id: tx.kind for tx in log}
    # an agent whose last transaction is a deposit holds a (possibly zero) stake
    stakes = {
        a: TokenAmount(max(0, b))
        for a, b in balances.items()
        if b != 0 or last_kind[a] is TxKind.DEPOSIT
    }
    return Ledger.from_records(log, stakes)
