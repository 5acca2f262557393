"""Full-size reproduction runs. Deselect with `-m "not slow"`."""

from __future__ import annotations

import numpy as np
import pytest

from compliance_lab.cli import cli_dispatch
from compliance_lab.config import serialize_config
from compliance_lab.ledger.audit import audit_ledger, reconstruct_signals
from compliance_lab.ledger.book import (
    agent_token_summary,
    replay_balances,
    verify_conservation,
    write_ledger,
)
from compliance_lab.models import ScalingParams
from compliance_lab.montecarlo import (
    RunConfig,
    deviation_probability,
    epsilon_sweep,
    fairness_summary,
    martingale_diagnostic,
    run_ensemble,
    run_single,
    synthetic_innovations,
)
from compliance_lab.scenarios import build_scenario

pytestmark = pytest.mark.slow

REPS = 150
SEED = 0


def _window_mean(series: np.ndarray, lo: int, hi: int) -> float:
    return float(np.mean(series[lo : hi + 1]))


@pytest.fixture(scope="module")
def scenario_runs():
    runs = {
        kind: run_ensemble(build_scenario(kind, reps=REPS, base_seed=SEED, record_diagnostics=(kind == "II")))
        for kind in ("I", "II", "IV")
    }
    for kind in ("III", "IV"):
        runs[f"{kind}/settled"] = run_ensemble(build_scenario(kind, reps=REPS, base_seed=SEED, start="settled"))
    return runs


# ── Scenario reproduction ────────────────────────────────────────────────


class TestScenarioReproduction:
    def test_both_loops_reach_target(self, scenario_runs):
        agg = scenario_runs["II"]
        assert _window_mean(agg.mean["mean_m"], 400, 500) == pytest.approx(0.85, abs=0.02)
        assert agg.mean["mean_mbar"][-1] == pytest.approx(0.85, abs=0.02)

    def test_global_loop_alone_is_unfair(self, scenario_runs):
        one, two = scenario_runs["I"], scenario_runs["II"]
        assert _window_mean(one.mean["mean_m"], 400, 500) == pytest.approx(0.85, abs=0.02)
        fair_one, fair_two = fairness_summary(one), fairness_summary(two)
        assert fair_one.spearman >= 0.9
        assert fair_one.spread >= 3.0 * fair_two.spread

    def test_individual_loop_alone_fails_under_defection(self, scenario_runs):
        three = scenario_runs["III/settled"]
        assert _window_mean(three.mean["mean_m"], 60, 100) <= 0.80
        assert _window_mean(three.mean["mean_m"], 400, 500) == pytest.approx(0.85, abs=0.02)

    def test_global_loop_corrects_defection(self, scenario_runs):
        three, four = scenario_runs["III/settled"], scenario_runs["IV/settled"]
        assert _window_mean(four.mean["mean_m"], 60, 100) >= _window_mean(three.mean["mean_m"], 60, 100) + 0.01
        wins = sum(
            _window_mean(b.series["mean_m"], 60, 100) > _window_mean(a.series["mean_m"], 60, 100)
            for a, b in zip(three.runs, four.runs)
        )
        assert wins >= 0.9 * REPS
        assert _window_mean(four.mean["mean_m"], 400, 500) == pytest.approx(0.85, abs=0.02)

    def test_compliers_offset_defection_by_gain_ratio(self, scenario_runs):
        # quasi-steady level 0.9 * Q* (1 + a/b) / (1 + 0.9 a/b) with 10% defectors at zero
        ratio = 0.025 / 0.1
        level = 0.9 * 0.85 * (1 + ratio) / (1 + 0.9 * ratio)
        four = scenario_runs["IV/settled"]
        assert _window_mean(four.mean["mean_m"], 60, 100) == pytest.approx(level, abs=0.02)

    def test_cold_start_holds_level_through_defection(self, scenario_runs):
        # from M̄(0) = 0 the individual loops overshoot and compliers saturate over k in [60, 100]
        assert _window_mean(scenario_runs["IV"].mean["mean_m"], 60, 100) >= 0.82

    def test_live_innovations_within_variance_bound(self, scenario_runs):
        runs = scenario_runs["II"].runs
        diag = martingale_diagnostic([r.diagnostics for r in runs], w=1.0)
        assert diag.within_bound
        assert np.nanmax(diag.ratio) <= 0.25 * 1.05


# ── Step-size scaling ────────────────────────────────────────────────────


class TestEpsilonScaling:
    def test_msd_scales_linearly_in_epsilon(self):
        base = build_scenario("II", n=200, base_seed=SEED)
        result = epsilon_sweep(base, ScalingParams(epsilon=0.08), [0.08, 0.04, 0.02], reps=50)
        assert 0.5 <= result.slope <= 1.5
        probs = [row.deviation_prob for row in result.rows]
        assert probs[0] >= probs[1] >= probs[2]
        assert result.monotone
        assert result.k3_stable

    def test_fair_coin_innovations_meet_bound(self):
        runs = [synthetic_innovations(0.5, 10, 200, seed=s) for s in range(500)]
        diag = martingale_diagnostic(runs, w=1.0)
        assert 0.23 <= diag.ratio[200] <= 0.27


# ── Ledger integrity ─────────────────────────────────────────────────────


class TestLedgerIntegrity:
    @pytest.fixture(scope="class")
    def recorded(self):
        sim = build_scenario("II", reps=1, base_seed=SEED)
        run = run_single(RunConfig.for_rep(sim, 0), record_ledger=True, record_signals=True)
        return sim, run

    def test_conservation_at_every_transaction(self, recorded):
        _, run = recorded
        _, problems = replay_balances(run.ledger.log)
        assert problems == []
        assert verify_conservation(run.ledger)

    def test_agents_that_never_forfeit_lose_nothing(self, recorded):
        _, run = recorded
        flows = agent_token_summary(run.ledger)
        assert len(flows) == 1000
        assert all(f.net_loss == 0 for f in flows if f.forfeited == 0)
        assert all(f.net_loss == f.forfeited for f in flows)

    def test_signals_replay_bit_for_bit(self, recorded):
        sim, run = recorded
        rec = reconstruct_signals(run.ledger, sim)
        assert rec.complete
        assert np.array_equal(rec.c_global, run.signals.c_global)
        assert np.array_equal(rec.c, run.signals.c)
        assert audit_ledger(run.ledger, sim).ok

    def test_single_mutation_fails_audit(self, recorded, tmp_path):
        sim, run = recorded
        ledger_path = write_ledger(run.ledger, tmp_path / "ledger.csv")
        config_path = tmp_path / "config.txt"
        config_path.write_text(serialize_config(sim), encoding="utf-8")
        assert cli_dispatch(["audit", "--ledger", str(ledger_path), "--config", str(config_path)]) == 0

        lines = ledger_path.read_text().splitlines()
        step, agent, kind, amount = lines[-1].split(",")
        lines[-1] = f"{step},{agent},{kind},{int(amount) + 1}"
        ledger_path.write_text("\n".join(lines) + "\n")
        assert cli_dispatch(["audit", "--ledger", str(ledger_path), "--config", str(config_path)]) == 2


# ── Determinism ──────────────────────────────────────────────────────────


class TestDeterminism:
    def test_full_cli_run_is_byte_identical(self, tmp_path):
        args = ["scenario", "--kind", "IV", "--reps", "8", "--seed", "7", "--n", "300", "--horizon", "200"]
        assert cli_dispatch([*args, "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
        assert cli_dispatch([*args, "--out", str(tmp_path / "b"), "--workers", "4"]) == 0
        for name in ("timeseries.csv", "timeseries_std.csv", "agents.csv", "ledger.csv", "config.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_deviation_probability_at_unit_delta(self, scenario_runs):
        assert deviation_probability(scenario_runs["II"].runs, 1.0) == 0.0
