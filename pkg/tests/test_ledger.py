"""Tests for the token ledger, bond policies and the ledger audit."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from compliance_lab.dynamics import step_ensemble
from compliance_lab.ledger import (
    AdaptivePenaltyPolicy,
    EventDrivenPolicy,
    FixedPenaltyPolicy,
    Ledger,
    LedgerTransaction,
    PolicyKind,
    TokenAmount,
    TxKind,
    apply_policy,
    bond_price,
    make_policy,
    verify_conservation,
)
from compliance_lab.ledger.audit import UNKNOWN, audit_ledger, reconstruct_signals
from compliance_lab.ledger.book import (
    LEDGER_HEADER,
    LedgerFormatError,
    agent_token_summary,
    bond_prices,
    read_ledger,
    write_ledger,
)
from compliance_lab.models import EnsembleState
from compliance_lab.montecarlo import RunConfig, run_single
from compliance_lab.scenarios import build_scenario, proclivities_for
from compliance_lab.seeding import make_generator


def _tok(n: int) -> TokenAmount:
    return TokenAmount(n)


def _enrolled(stake: int, policy=None) -> tuple[Ledger, object]:
    ledger = Ledger()
    policy = policy or AdaptivePenaltyPolicy()
    policy.enroll(0, _tok(stake), ledger, 0)
    return ledger, policy


def _kinds_and_amounts(txs: list[LedgerTransaction]) -> list[tuple[TxKind, int]]:
    return [(t.kind, t.amount.micro_tokens) for t in txs]


def _small_run(policy: PolicyKind = PolicyKind.ADAPTIVE_PENALTY, n: int = 20, horizon: int = 60, **overrides):
    sim = build_scenario("II", n=n, horizon=horizon, reps=1, base_seed=3, policy=policy, **overrides)
    return sim, run_single(RunConfig.for_rep(sim, 0), record_ledger=True, record_signals=True)


# ── Token amounts and bond price ─────────────────────────────────────────


class TestTokenAmount:
    def test_rejects_negative(self):
        with pytest.raises(ValueError, match="negative"):
            TokenAmount(-1)

    def test_rejects_float(self):
        with pytest.raises(ValueError, match="integer"):
            TokenAmount(1.5)

    def test_addition_is_exact(self):
        assert (_tok(10**12) + _tok(1)).micro_tokens == 10**12 + 1

    def test_tokens_property(self):
        assert _tok(2_500_000).tokens == 2.5


class TestBondPrice:
    def test_scaled_sum(self):
        assert bond_price(0.3, 0.1, 100).micro_tokens == 40

    def test_negative_sum_clamps(self):
        assert bond_price(-0.5, 0.2, 100).micro_tokens == 0

    def test_zero(self):
        assert bond_price(0.0, 0.0, 100).micro_tokens == 0

    def test_rounds_half_up(self):
        assert bond_price(0.0, 0.125, 100).micro_tokens == 13

    def test_rejects_zero_scale(self):
        with pytest.raises(ValueError):
            bond_price(0.1, 0.1, 0)

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_monotone_in_signal_sum(self, x, y):
        lo, hi = min(x, y), max(x, y)
        assert bond_price(lo, 0.0, 1_000_000).micro_tokens <= bond_price(hi, 0.0, 1_000_000).micro_tokens

    def test_vectorised_matches_scalar(self):
        c = np.array([-0.4, 0.0, 0.1234567, 0.75])
        expected = [bond_price(0.3, ci, 1_000_000).micro_tokens for ci in c]
        assert list(bond_prices(0.3, c, 1_000_000)) == expected


# ── Policies ─────────────────────────────────────────────────────────────


class TestAdaptivePenalty:
    def test_complier_gets_stake_back(self):
        ledger, policy = _enrolled(50)
        txs = apply_policy(policy, 0, 1, _tok(60), ledger, 1)
        assert _kinds_and_amounts(txs) == [(TxKind.RETURN, 50), (TxKind.DEPOSIT, 60)]
        assert ledger.outstanding(0).micro_tokens == 60

    def test_violator_forfeits_stake(self):
        ledger, policy = _enrolled(50)
        txs = apply_policy(policy, 0, 0, _tok(60), ledger, 1)
        assert _kinds_and_amounts(txs) == [(TxKind.FORFEIT, 50), (TxKind.DEPOSIT, 60)]
        assert ledger.forfeited_total.micro_tokens == 50

    def test_unenrolled_agent_enrolls(self):
        ledger = Ledger()
        txs = AdaptivePenaltyPolicy().apply(4, 1, _tok(7), ledger, 3)
        assert _kinds_and_amounts(txs) == [(TxKind.DEPOSIT, 7)]


class TestEventDriven:
    def test_compliance_is_silent(self):
        ledger, policy = _enrolled(50, EventDrivenPolicy())
        assert policy.apply(0, 1, _tok(60), ledger, 1) == []

    def test_violation_forfeits_and_restakes(self):
        ledger, policy = _enrolled(50, EventDrivenPolicy())
        txs = policy.apply(0, 0, _tok(60), ledger, 1)
        assert _kinds_and_amounts(txs) == [(TxKind.FORFEIT, 50), (TxKind.DEPOSIT, 60)]

    def test_zero_stake_agent_reenrolls(self):
        ledger = Ledger()
        txs = EventDrivenPolicy().apply(0, 0, _tok(60), ledger, 5)
        assert _kinds_and_amounts(txs) == [(TxKind.DEPOSIT, 60)]
        assert ledger.is_enrolled(0)


class TestFixedPenalty:
    def test_clean_contract_returns_full_stake(self):
        ledger, policy = _enrolled(50, FixedPenaltyPolicy(contract_length=3))
        assert policy.apply(0, 1, _tok(60), ledger, 1) == []
        assert policy.apply(0, 1, _tok(70), ledger, 2) == []
        txs = policy.apply(0, 1, _tok(80), ledger, 3)
        assert _kinds_and_amounts(txs) == [(TxKind.RETURN, 50), (TxKind.DEPOSIT, 80)]

    def test_any_violation_forfeits_at_contract_end(self):
        ledger, policy = _enrolled(50, FixedPenaltyPolicy(contract_length=3))
        policy.apply(0, 0, _tok(60), ledger, 1)
        policy.apply(0, 1, _tok(70), ledger, 2)
        txs = policy.apply(0, 1, _tok(80), ledger, 3)
        assert _kinds_and_amounts(txs) == [(TxKind.FORFEIT, 50), (TxKind.DEPOSIT, 80)]

    def test_new_contract_starts_clean(self):
        ledger, policy = _enrolled(50, FixedPenaltyPolicy(contract_length=1))
        policy.apply(0, 0, _tok(60), ledger, 1)
        txs = policy.apply(0, 1, _tok(70), ledger, 2)
        assert _kinds_and_amounts(txs) == [(TxKind.RETURN, 60), (TxKind.DEPOSIT, 70)]

    def test_rejects_zero_length(self):
        with pytest.raises(ValueError):
            FixedPenaltyPolicy(contract_length=0)

    def test_registry_builds_each_kind(self):
        assert isinstance(make_policy(PolicyKind.FIXED_PENALTY, 5), FixedPenaltyPolicy)
        assert isinstance(make_policy(PolicyKind.ADAPTIVE_PENALTY, 5), AdaptivePenaltyPolicy)
        assert isinstance(make_policy(PolicyKind.EVENT_DRIVEN, 5), EventDrivenPolicy)


# ── Conservation ─────────────────────────────────────────────────────────


class TestVerifyConservation:
    def test_empty_ledger(self):
        assert verify_conservation(Ledger())

    def test_single_deposit(self):
        ledger = Ledger()
        ledger.deposit(0, 0, _tok(5))
        assert verify_conservation(ledger)

    def test_hand_built_partial_return(self):
        log = [
            LedgerTransaction(0, 0, TxKind.DEPOSIT, _tok(5)),
            LedgerTransaction(1, 0, TxKind.RETURN, _tok(3)),
        ]
        assert verify_conservation(Ledger.from_records(log, {0: _tok(2)}))
        assert not verify_conservation(Ledger.from_records(log, {0: _tok(1)}))

    def test_overdraw_fails(self):
        log = [
            LedgerTransaction(0, 0, TxKind.DEPOSIT, _tok(5)),
            LedgerTransaction(1, 0, TxKind.FORFEIT, _tok(6)),
            LedgerTransaction(2, 0, TxKind.DEPOSIT, _tok(1)),
        ]
        assert not verify_conservation(Ledger.from_records(log, {0: _tok(0)}))

    def test_simulated_run_conserves(self):
        for policy in PolicyKind:
            _, run = _small_run(policy)
            assert verify_conservation(run.ledger)

    def test_never_forfeiting_agent_has_zero_net_flow(self):
        _, run = _small_run(n=40, horizon=30)
        flows = agent_token_summary(run.ledger)
        assert len(flows) == 40
        for flow in flows:
            if flow.forfeited == 0:
                assert flow.net_loss == 0
            else:
                assert flow.net_loss == flow.forfeited


# ── File format ──────────────────────────────────────────────────────────


class TestLedgerFile:
    def test_round_trip(self, tmp_path):
        _, run = _small_run(horizon=10)
        path = write_ledger(run.ledger, tmp_path / "ledger.csv")
        loaded = read_ledger(path)
        assert loaded.log == run.ledger.log
        assert loaded.stakes == run.ledger.stakes
        assert loaded.forfeited_total == run.ledger.forfeited_total

    def test_header_and_row_layout(self, tmp_path):
        ledger = Ledger()
        ledger.deposit(0, 1, _tok(40))
        ledger.forfeit_stake(1, 1)
        path = write_ledger(ledger, tmp_path / "l.csv")
        assert path.read_text() == f"{LEDGER_HEADER}\n0,1,DEP,40\n1,1,FOR,40\n"

    def test_zero_deposit_keeps_stake_on_read(self, tmp_path):
        ledger = Ledger()
        ledger.deposit(0, 0, _tok(0))
        loaded = read_ledger(write_ledger(ledger, tmp_path / "l.csv"))
        assert loaded.is_enrolled(0)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("0,0,DEP,5\n")
        with pytest.raises(LedgerFormatError, match="line 1"):
            read_ledger(path)

    def test_unknown_kind_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(f"{LEDGER_HEADER}\n0,0,DEP,5\n1,0,XXX,5\n")
        with pytest.raises(LedgerFormatError, match="line 3"):
            read_ledger(path)

    def test_non_integer_amount(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(f"{LEDGER_HEADER}\n0,0,DEP,5.5\n")
        with pytest.raises(LedgerFormatError, match="non-integer"):
            read_ledger(path)


# ── Signal reconstruction ────────────────────────────────────────────────


class TestReconstructSignals:
    def test_empty_ledger_gives_initial_signals(self):
        sim = build_scenario("II", n=3)
        rec = reconstruct_signals(Ledger(), sim)
        assert rec.horizon == 0
        assert rec.c_global[0] == 0.0
        assert np.array_equal(rec.c[0], np.zeros(3))
        assert rec.complete

    def test_hand_driven_three_steps(self):
        sim = build_scenario("II", n=2, horizon=3, reps=1)
        state = EnsembleState.initial(proclivities_for(sim))
        rng = make_generator(99)
        ledger, policy = Ledger(), AdaptivePenaltyPolicy()
        for i in range(2):
            policy.enroll(i, bond_price(0.0, 0.0, sim.unit_scale), ledger, 0)
        c_global, c = [state.global_signal.c_global], [state.c]
        for k in range(1, 4):
            state = step_ensemble(state, sim.control, rng)
            for i in range(2):
                price = bond_price(state.global_signal.c_global, state.c[i], sim.unit_scale)
                txs = policy.apply(i, int(state.last_m[i]), price, ledger, k)
                forfeited = any(t.kind is TxKind.FORFEIT for t in txs)
                assert forfeited == (state.last_m[i] == 0)
            c_global.append(state.global_signal.c_global)
            c.append(state.c)

        rec = reconstruct_signals(ledger, sim)
        assert rec.complete
        assert np.array_equal(rec.c_global, np.array(c_global))
        assert np.array_equal(rec.c, np.array(c))

    def test_scenario_run_replays_bit_for_bit(self):
        sim, run = _small_run(n=30, horizon=80)
        rec = reconstruct_signals(run.ledger, sim)
        assert rec.complete
        assert rec.ambiguous == 0
        assert np.array_equal(rec.c_global, run.signals.c_global)
        assert np.array_equal(rec.c, run.signals.c)

    def test_event_driven_replays_bit_for_bit(self):
        sim, run = _small_run(PolicyKind.EVENT_DRIVEN, horizon=40)
        rec = reconstruct_signals(run.ledger, sim, horizon=40)
        assert rec.complete
        assert rec.ambiguous == 0
        assert np.array_equal(rec.c_global, run.signals.c_global)
        assert np.array_equal(rec.c, run.signals.c)

    def test_settled_start_replays_bit_for_bit(self):
        sim, run = _small_run(n=25, horizon=30, start="settled")
        rec = reconstruct_signals(run.ledger, sim)
        assert np.array_equal(rec.c[0], sim.control.q_star - proclivities_for(sim))
        assert np.array_equal(rec.c, run.signals.c)

    def test_fixed_penalty_is_partial(self):
        sim, run = _small_run(PolicyKind.FIXED_PENALTY, horizon=20, contract_length=5)
        rec = reconstruct_signals(run.ledger, sim, horizon=20)
        assert not rec.complete
        assert rec.ambiguous == 20 * sim.n
        assert np.all(rec.compliance[1:] == UNKNOWN)


# ── Audit ────────────────────────────────────────────────────────────────


class TestAuditLedger:
    def test_untampered_run_passes(self):
        sim, run = _small_run()
        report = audit_ledger(run.ledger, sim)
        assert report.ok, report.findings
        assert report.complete
        assert report.deposits_checked == sim.n * (sim.horizon + 1)

    def test_mutated_deposit_fails(self):
        sim, run = _small_run()
        log = list(run.ledger.log)
        idx = next(i for i, t in enumerate(log) if t.kind is TxKind.DEPOSIT and t.step == 10)
        log[idx] = dataclasses.replace(log[idx], amount=_tok(log[idx].amount.micro_tokens + 1))
        report = audit_ledger(Ledger.from_records(log, run.ledger.stakes), sim)
        assert not report.ok
        assert any("bond price" in f for f in report.findings)

    def test_mutated_return_fails(self):
        sim, run = _small_run()
        log = list(run.ledger.log)
        idx = next(i for i, t in enumerate(log) if t.kind is TxKind.RETURN and t.amount.micro_tokens > 0)
        log[idx] = dataclasses.replace(log[idx], amount=_tok(log[idx].amount.micro_tokens - 1))
        report = audit_ledger(Ledger.from_records(log, run.ledger.stakes), sim)
        assert any("outstanding stake" in f for f in report.findings)

    def test_wrong_gains_fail(self):
        sim, run = _small_run()
        other = dataclasses.replace(sim, control=dataclasses.replace(sim.control, beta=0.2))
        assert not audit_ledger(run.ledger, other).ok

    def test_out_of_range_agent(self):
        sim, run = _small_run(horizon=5)
        log = list(run.ledger.log) + [LedgerTransaction(5, sim.n, TxKind.DEPOSIT, _tok(0))]
        report = audit_ledger(Ledger.from_records(log, run.ledger.stakes), sim)
        assert any("outside" in f for f in report.findings)

    def test_event_driven_run_reprices_deposits(self):
        sim, run = _small_run(PolicyKind.EVENT_DRIVEN, horizon=40)
        report = audit_ledger(run.ledger, sim)
        assert report.ok, report.findings
        assert report.complete
        assert report.deposits_checked == sum(1 for tx in run.ledger.log if tx.kind is TxKind.DEPOSIT)

    def test_event_driven_inflated_deposit_fails(self):
        sim, run = _small_run(PolicyKind.EVENT_DRIVEN, n=25, horizon=30)
        log = list(run.ledger.log)
        idx = max(i for i, tx in enumerate(log) if tx.kind is TxKind.DEPOSIT and tx.amount.micro_tokens > 0)
        tx = log[idx]
        log[idx] = LedgerTransaction(tx.step, tx.agent_id, tx.kind, _tok(tx.amount.micro_tokens + 1000))
        report = audit_ledger(Ledger.from_records(log, run.ledger.stakes), sim)
        assert any("bond price" in f for f in report.findings)

    def test_event_driven_return_is_unexpected(self):
        sim, run = _small_run(PolicyKind.EVENT_DRIVEN, n=5, horizon=10)
        log = list(run.ledger.log) + [LedgerTransaction(10, 0, TxKind.RETURN, _tok(0))]
        report = audit_ledger(Ledger.from_records(log, run.ledger.stakes), sim)
        assert any("unexpected transactions" in f for f in report.findings)
