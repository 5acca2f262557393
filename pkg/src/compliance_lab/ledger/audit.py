"""Ledger audit: rebuild the control signals from the public ledger alone.

The replay runs the same update functions, in the same order and on the same
dtypes, as the simulator, so an untampered AdaptivePenalty or EventDriven
ledger reproduces C(k) and c_i(k) bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from compliance_lab.dynamics import ema_update, global_update, individual_update
from compliance_lab.ledger.base import LedgerPolicy, PolicyKind
from compliance_lab.ledger.book import Ledger, TxKind, bond_prices, replay_balances
from compliance_lab.scenarios import proclivities_for

logger = logging.getLogger(__name__)

UNKNOWN = -1


class AuditFailure(Exception):
    """Raised when a ledger does not match the configuration it claims to come from."""

    def __init__(self, findings: list[str]):
        self.findings = findings
        super().__init__("ledger audit failed:\n  " + "\n  ".join(findings))


@dataclass(eq=False)
class Reconstruction:
    c_global: np.ndarray        # C(k), shape (horizon+1,)
    c: np.ndarray               # c_i(k), shape (horizon+1, n)
    compliance: np.ndarray      # M_i(k) read from the ledger, UNKNOWN where unreadable
    complete: bool              # every M_i(k), k >= 1, was readable
    ambiguous: int              # number of (agent, step) pairs assumed compliant

    @property
    def horizon(self) -> int:
        return len(self.c_global) - 1


def _group_kinds(ledger: Ledger) -> dict[tuple[int, int], list[TxKind]]:
    grouped: dict[tuple[int, int], list[TxKind]] = {}
    for tx in ledger.log:
        grouped.setdefault((tx.step, tx.agent_id), []).append(tx.kind)
    return grouped


def infer_compliance_matrix(ledger: Ledger, n: int, horizon: int, policy: PolicyKind) -> np.ndarray:
    """M_i(k) for k in 1..horizon as int8, UNKNOWN where the ledger does not tell.

    AdaptivePenalty settles every draw at its own step. EventDriven writes only
    violations, so a silent step after enrolment reads as compliant. FixedPenalty
    settlements reflect a whole contract and leave every step UNKNOWN.
    """
    matrix = np.full((horizon + 1, n), UNKNOWN, dtype=np.int8)
    matrix[0] = 0
    if policy is PolicyKind.FIXED_PENALTY:
        return matrix
    if policy is PolicyKind.EVENT_DRIVEN:
        matrix[1:] = 1
    for (step, agent_id), kinds in _group_kinds(ledger).items():
        if 1 <= step <= horizon and 0 <= agent_id < n:
            inferred = LedgerPolicy.infer_compliance(kinds)
            matrix[step, agent_id] = UNKNOWN if inferred is None else inferred
    return matrix


def reconstruct_signals(ledger: Ledger, cfg, horizon: int | None = None) -> Reconstruction:
    """Replay the signal recursions from the compliance outcomes on the ledger.

    `cfg` is the SimConfig of the run; q and the start state are rebuilt from it.
    The horizon defaults to the last step on the ledger (0 for an empty one).
    Unreadable steps are replayed as compliant and the result is flagged incomplete.
    """
    if horizon is None:
        horizon = max((tx.step for tx in ledger.log), default=0)
    n = cfg.n
    control = cfg.control

    inferred = infer_compliance_matrix(ledger, n, horizon, cfg.policy)
    unknown = inferred == UNKNOWN
    ambiguous = int(unknown.sum())
    draws = np.where(unknown, 1, inferred).astype(np.int8)

    c_global = np.empty(horizon + 1)
    c = np.empty((horizon + 1, n))
    c_g = 0.0
    c_i = cfg.initial_c(proclivities_for(cfg))
    m_bar = np.full(n, cfg.initial_mbar, dtype=np.float64)
    c_global[0], c[0] = c_g, c_i
    for k in range(horizon):
        mean_m = float(np.mean(draws[k]))
        c_g = global_update(c_g, mean_m, control.alpha, control.q_star, control.enable_global)
        c_i = individual_update(c_i, m_bar, control.beta, control.q_star, control.enable_individual)
        m_bar = ema_update(m_bar, draws[k + 1], control.gamma)
        c_global[k + 1], c[k + 1] = c_g, c_i

    if ambiguous:
        logger.info("Partial reconstruction: %d agent-steps not readable from the ledger", ambiguous)
    return Reconstruction(c_global, c, inferred, ambiguous == 0, ambiguous)


@dataclass
class AuditReport:
    n_transactions: int
    horizon: int
    complete: bool
    deposits_checked: int
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


def _structure_findings(ledger: Ledger, n: int, horizon: int) -> list[str]:
    findings: list[str] = []
    last_step = 0
    for idx, tx in enumerate(ledger.log):
        if not 0 <= tx.agent_id < n:
            findings.append(f"tx {idx}: agent {tx.agent_id} outside 0..{n - 1}")
        if not 0 <= tx.step <= horizon:
            findings.append(f"tx {idx}: step {tx.step} outside 0..{horizon}")
        if tx.step < last_step:
            findings.append(f"tx {idx}: step {tx.step} after step {last_step} (log out of order)")
        last_step = max(last_step, tx.step)
    return findings


def _settlement_findings(ledger: Ledger) -> list[str]:
    """Every Return/Forfeit must settle exactly the outstanding stake."""
    findings: list[str] = []
    balances: dict[int, int] = {}
    for idx, tx in enumerate(ledger.log):
        bal = balances.get(tx.agent_id, 0)
        if tx.kind is TxKind.DEPOSIT:
            balances[tx.agent_id] = bal + tx.amount.micro_tokens
            continue
        if tx.amount.micro_tokens != bal:
            findings.append(
                f"tx {idx} (step {tx.step}, agent {tx.agent_id}): "
                f"{tx.kind.value} {tx.amount.micro_tokens} != outstanding stake {bal}"
            )
        balances[tx.agent_id] = 0
    return findings


def _shape_findings(ledger: Ledger, n: int, horizon: int, policy: PolicyKind) -> list[str]:
    """Per-step transaction pattern of the step-settled policies.

    Both enrol every agent with one deposit at step 0. AdaptivePenalty then
    writes one settlement plus one deposit per agent and step; EventDriven
    writes nothing or a forfeit plus a deposit.
    """
    grouped = _group_kinds(ledger)
    settled = [[TxKind.RETURN, TxKind.DEPOSIT], [TxKind.FORFEIT, TxKind.DEPOSIT]]
    allowed = settled if policy is PolicyKind.ADAPTIVE_PENALTY else [[], settled[1]]
    findings: list[str] = []
    for k in range(horizon + 1):
        for i in range(n):
            kinds = grouped.get((k, i), [])
            if kinds not in ([[TxKind.DEPOSIT]] if k == 0 else allowed):
                findings.append(f"step {k}, agent {i}: unexpected transactions {[t.value for t in kinds]}")
    return findings


def _price_findings(ledger: Ledger, rec: Reconstruction, unit_scale: int) -> tuple[list[str], int]:
    prices = [bond_prices(rec.c_global[k], rec.c[k], unit_scale) for k in range(rec.horizon + 1)]
    findings: list[str] = []
    checked = 0
    for idx, tx in enumerate(ledger.log):
        if tx.kind is not TxKind.DEPOSIT or not 0 <= tx.step <= rec.horizon:
            continue
        if not 0 <= tx.agent_id < len(rec.c[0]):
            continue
        expected = int(prices[tx.step][tx.agent_id])
        checked += 1
        if tx.amount.micro_tokens != expected:
            findings.append(
                f"tx {idx} (step {tx.step}, agent {tx.agent_id}): "
                f"deposit {tx.amount.micro_tokens} != bond price {expected}"
            )
    return findings, checked


def audit_ledger(ledger: Ledger, cfg) -> AuditReport:
    """Check a ledger against the SimConfig that produced it.

    Checks conservation, full-stake settlements, ids and steps in range, and,
    when compliance is readable at every step, that every deposit equals the
    bond price of the reconstructed signals at its step.
    """
    horizon = cfg.horizon
    findings = _structure_findings(ledger, cfg.n, horizon)

    _, overdraws = replay_balances(ledger.log)
    findings.extend(f"conservation: {p}" for p in overdraws)
    findings.extend(_settlement_findings(ledger))
    if cfg.policy is not PolicyKind.FIXED_PENALTY:
        findings.extend(_shape_findings(ledger, cfg.n, horizon, cfg.policy))

    rec = reconstruct_signals(ledger, cfg, horizon=horizon)
    checked = 0
    if rec.complete:
        price_findings, checked = _price_findings(ledger, rec, cfg.unit_scale)
        findings.extend(price_findings)

    report = AuditReport(
        n_transactions=len(ledger),
        horizon=horizon,
        complete=rec.complete,
        deposits_checked=checked,
        findings=findings,
    )
    logger.info(
        "Ledger audit %s: %d transactions, %d deposits re-priced, %d findings",
        "passed" if report.ok else "failed",
        report.n_transactions,
        checked,
        len(findings),
    )
    return report
