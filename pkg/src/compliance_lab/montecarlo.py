"""Seeded Monte Carlo engine for the closed loop.

Rep r of an ensemble draws from the generator seeded with
mix_seed(base_seed, r); the proclivity vector q and the defector set are
shared by all reps. Reps run in worker processes and are reduced in rep
order, so results do not depend on the number of workers.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from compliance_lab.config import SimConfig
from compliance_lab.dynamics import derive_gains, ensemble_probabilities, step_ensemble
from compliance_lab.ledger import Ledger, TokenAmount, make_policy
from compliance_lab.ledger.book import bond_prices
from compliance_lab.models import ConfigError, EnsembleState, ScalingParams
from compliance_lab.scenarios import proclivities_for, select_defectors
from compliance_lab.seeding import make_generator, mix_seed, worker_count

logger = logging.getLogger(__name__)

SERIES = ("mean_m", "mean_mbar", "C", "mean_c", "mbar_p10", "mbar_p90")
RATE_WINDOW = 100               # steps behind compliance_rate, independent of SimConfig.window


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig
    seed: int
    horizon: int

    def __post_init__(self):
        if self.horizon < 0:
            raise ConfigError([f"horizon {self.horizon} must be >= 0"])

    @classmethod
    def for_rep(cls, sim: SimConfig, rep: int) -> RunConfig:
        return cls(sim=sim, seed=mix_seed(sim.base_seed, rep), horizon=sim.horizon)


@dataclass(eq=False)
class Diagnostics:
    """Innovation xi_i(k) = M_i(k) - p(X_i(k-1)) summarised per step."""

    xi_sq_partial: np.ndarray   # mean over agents of (sum_{j<=k} xi_i(j))^2, shape (horizon+1,)
    n_agents: int


@dataclass(eq=False)
class SignalTrace:
    """Full signal history of one run, for ledger replay checks."""

    c_global: np.ndarray        # C(k), shape (horizon+1,)
    c: np.ndarray               # c_i(k), shape (horizon+1, n)


@dataclass(eq=False)
class RunResult:
    seed: int
    q_star: float
    series: dict[str, np.ndarray]
    q: np.ndarray
    final_mbar: np.ndarray
    compliance_rate: np.ndarray  # per-agent mean of M_i over the last RATE_WINDOW steps
    final_c: np.ndarray
    mbar_tail: np.ndarray        # per-agent M̄_i over the trailing window, shape (window, n)
    diagnostics: Diagnostics | None = None
    ledger: Ledger | None = None
    signals: SignalTrace | None = None

    @property
    def horizon(self) -> int:
        return len(self.series["mean_m"]) - 1

    def identical_to(self, other: RunResult) -> bool:
        arrays = ("q", "final_mbar", "compliance_rate", "final_c", "mbar_tail")
        return (
            self.seed == other.seed
            and all(np.array_equal(self.series[s], other.series[s]) for s in SERIES)
            and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in arrays)
        )


@dataclass(eq=False)
class AggregateResult:
    reps: int
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    runs: list[RunResult] = field(repr=False)

    @property
    def horizon(self) -> int:
        return len(self.mean["mean_m"]) - 1

    def per_agent(self) -> dict[str, np.ndarray]:
        """Per-agent summaries averaged across reps (q is shared by all reps)."""
        return {
            "agent_id": np.arange(len(self.runs[0].q)),
            "q": self.runs[0].q,
            "final_mbar": np.mean([r.final_mbar for r in self.runs], axis=0),
            "compliance_rate": np.mean([r.compliance_rate for r in self.runs], axis=0),
            "final_c": np.mean([r.final_c for r in self.runs], axis=0),
        }


# ── Single run ───────────────────────────────────────────────────────────


def run_single(
    cfg: RunConfig,
    record_ledger: bool = False,
    record_signals: bool = False,
) -> RunResult:
    """One closed-loop realisation; bit-identical for identical (cfg, seed)."""
    sim = cfg.sim
    horizon = cfg.horizon
    q = proclivities_for(sim)
    rng = make_generator(cfg.seed)
    state = EnsembleState.initial(q, c=sim.initial_c(q), m_bar=sim.initial_mbar)

    defector_ids = select_defectors(sim.n, sim.defectors)
    is_defector = np.zeros(sim.n, dtype=bool)
    is_defector[defector_ids] = True
    defect_until = sim.defectors.defect_until if sim.defectors else -1

    series = {name: np.empty(horizon + 1) for name in SERIES}
    tail_len = max(1, min(sim.window, horizon))
    mbar_tail = np.empty((tail_len, sim.n))
    rate_len = max(1, min(RATE_WINDOW, horizon))
    m_rate_sum = np.zeros(sim.n)

    def record(k: int, s: EnsembleState) -> None:
        series["mean_m"][k] = np.mean(s.last_m)
        series["mean_mbar"][k] = np.mean(s.m_bar)
        series["C"][k] = s.global_signal.c_global
        series["mean_c"][k] = np.mean(s.c)
        series["mbar_p10"][k], series["mbar_p90"][k] = np.percentile(s.m_bar, [10, 90])
        slot = k - (horizon + 1 - tail_len)
        if slot >= 0:
            mbar_tail[slot] = s.m_bar
        if k > horizon - rate_len:
            m_rate_sum[:] += s.last_m

    record(0, state)

    ledger = policy = None
    if record_ledger:
        ledger = Ledger()
        policy = make_policy(sim.policy, sim.effective_contract_length)
        prices = bond_prices(state.global_signal.c_global, state.c, sim.unit_scale)
        for i in range(sim.n):
            policy.enroll(i, TokenAmount(int(prices[i])), ledger, 0)

    trace = None
    if record_signals:
        trace = SignalTrace(c_global=np.empty(horizon + 1), c=np.empty((horizon + 1, sim.n)))
        trace.c_global[0] = state.global_signal.c_global
        trace.c[0] = state.c

    diagnostics = None
    if sim.record_diagnostics:
        diagnostics = Diagnostics(xi_sq_partial=np.zeros(horizon + 1), n_agents=sim.n)
        partial = np.zeros(sim.n)

    for k in range(horizon):
        if defect_until >= 0:
            state = state.with_defecting(is_defector & (k + 1 <= defect_until))
        if diagnostics is not None:
            probs = ensemble_probabilities(state)
        state = step_ensemble(state, sim.control, rng)
        record(k + 1, state)

        if diagnostics is not None:
            partial += state.last_m - probs
            diagnostics.xi_sq_partial[k + 1] = np.mean(partial ** 2)
        if trace is not None:
            trace.c_global[k + 1] = state.global_signal.c_global
            trace.c[k + 1] = state.c
        if ledger is not None:
            prices = bond_prices(state.global_signal.c_global, state.c, sim.unit_scale)
            for i in range(sim.n):
                policy.apply(i, int(state.last_m[i]), TokenAmount(int(prices[i])), ledger, k + 1)

    return RunResult(
        seed=cfg.seed,
        q_star=sim.control.q_star,
        series=series,
        q=q,
        final_mbar=state.m_bar.copy(),
        compliance_rate=m_rate_sum / rate_len,
        final_c=np.array(state.c, dtype=np.float64),
        mbar_tail=mbar_tail,
        diagnostics=diagnostics,
        ledger=ledger,
        signals=trace,
    )


def _run_rep(job: tuple[int, RunConfig, bool]) -> RunResult:
    rep, cfg, record_ledger = job
    start = time.monotonic()
    result = run_single(cfg, record_ledger=record_ledger)
    logger.debug(
        "Rep finished",
        extra={"rep": rep, "seed": cfg.seed, "duration_ms": round((time.monotonic() - start) * 1000)},
    )
    return result


# ── Ensembles ────────────────────────────────────────────────────────────


def aggregate(runs: list[RunResult]) -> AggregateResult:
    """Per-step mean and population std across reps, reduced in rep order."""
    if not runs:
        raise ValueError("cannot aggregate zero runs")
    mean: dict[str, np.ndarray] = {}
    std: dict[str, np.ndarray] = {}
    for name in SERIES:
        stacked = np.stack([r.series[name] for r in runs])
        mean[name] = stacked.mean(axis=0)
        std[name] = stacked.std(axis=0)
    return AggregateResult(reps=len(runs), mean=mean, std=std, runs=runs)


def run_ensemble(
    sim: SimConfig,
    reps: int | None = None,
    base_seed: int | None = None,
    workers: int | None = None,
    record_ledger: bool = False,
) -> AggregateResult:
    """Run `reps` independent reps (default sim.reps) and aggregate them.

    Rep r uses seed mix_seed(base_seed, r). With record_ledger, rep 0 also
    records its token ledger.
    """
    if base_seed is not None:
        sim = dataclasses.replace(sim, base_seed=base_seed)
    reps = sim.reps if reps is None else reps
    if reps < 1:
        raise ConfigError([f"reps {reps} must be >= 1"])

    jobs = [(r, RunConfig.for_rep(sim, r), record_ledger and r == 0) for r in range(reps)]
    n_workers = min(worker_count(workers), reps)
    start = time.monotonic()
    logger.info(
        "Ensemble started",
        extra={"scenario": sim.scenario.value, "seed": sim.base_seed, "reps": reps, "workers": n_workers},
    )

    if n_workers == 1:
        runs = [_run_rep(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            runs = list(pool.map(_run_rep, jobs, chunksize=max(1, reps // (4 * n_workers))))

    logger.info(
        "Ensemble finished",
        extra={
            "scenario": sim.scenario.value,
            "reps": reps,
            "workers": n_workers,
            "duration_ms": round((time.monotonic() - start) * 1000),
        },
    )
    return aggregate(runs)


# ── Statistics ───────────────────────────────────────────────────────────


def _tails(runs: list[RunResult], window: int | None) -> np.ndarray:
    available = min(len(r.mbar_tail) for r in runs)
    window = available if window is None else window
    if not 1 <= window <= available:
        raise ValueError(f"window {window} must be in [1, {available}] (recorded trailing steps)")
    return np.stack([r.mbar_tail[-window:] for r in runs])   # (reps, window, n)


def deviation_probability(
    runs: list[RunResult],
    delta: float,
    window: int | None = None,
    per_agent: bool = False,
):
    """Empirical P(|M̄_i(k) - Q*| > delta) over reps x trailing steps (x agents).

    With per_agent=True returns one estimate per agent instead of the pooled one.
    """
    if not delta > 0:
        raise ValueError(f"delta {delta} must be > 0")
    exceed = np.abs(_tails(runs, window) - runs[0].q_star) > delta
    if per_agent:
        return exceed.mean(axis=(0, 1))
    return float(exceed.mean())


def mean_squared_deviation(runs: list[RunResult], window: int | None = None) -> float:
    """Trailing-window E[(M̄_i - Q*)^2] pooled over reps, steps and agents."""
    return float(np.mean((_tails(runs, window) - runs[0].q_star) ** 2))


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    alpha: float
    beta: float
    gamma: float
    msd: float
    deviation_prob: float
    k3_hat: float               # sqrt(msd) / (2 sqrt(eps))


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    slope: float                # log-log slope of msd vs eps; nan with one row
    monotone: bool              # msd non-decreasing in eps up to the tolerance
    k3_stable: bool             # all k3_hat within +-50% of their median


def epsilon_sweep(
    base: SimConfig,
    scaling: ScalingParams,
    eps_list: list[float],
    reps: int,
    delta: float = 0.1,
    horizon_time: float = 60.0,
    window_time: float = 20.0,
    tolerance: float = 0.25,
    workers: int | None = None,
) -> SweepResult:
    """Theorem-mode runs at each eps, gains derived from `scaling` with eps swapped in.

    Horizon and trailing window are fixed in rescaled time t = k * eps, so each
    run covers horizon_time / eps steps and the statistics use the last
    window_time / eps of them.
    """
    if not eps_list:
        raise ValueError("eps_list is empty")
    rows: list[SweepRow] = []
    for eps in eps_list:
        s = dataclasses.replace(scaling, epsilon=eps)
        control = derive_gains(s, base.control.q_star, base.control.enable_global, base.control.enable_individual)
        horizon = int(math.ceil(horizon_time / eps))
        window = min(horizon, max(1, int(math.ceil(window_time / eps))))
        sim = dataclasses.replace(base, control=control, scaling=s, horizon=horizon, window=window, reps=reps)
        agg = run_ensemble(sim, workers=workers)
        msd = mean_squared_deviation(agg.runs)
        row = SweepRow(
            epsilon=eps,
            alpha=control.alpha,
            beta=control.beta,
            gamma=control.gamma,
            msd=msd,
            deviation_prob=deviation_probability(agg.runs, delta),
            k3_hat=math.sqrt(msd) / (2.0 * math.sqrt(eps)),
        )
        logger.info("Sweep row eps=%g msd=%.6g dev=%.6g", eps, row.msd, row.deviation_prob)
        rows.append(row)

    by_eps = sorted(rows, key=lambda r: r.epsilon)
    if len(by_eps) >= 2:
        slope = float(np.polyfit(np.log([r.epsilon for r in by_eps]), np.log([r.msd for r in by_eps]), 1)[0])
    else:
        slope = float("nan")
    monotone = all(b.msd >= a.msd * (1.0 - tolerance) for a, b in zip(by_eps, by_eps[1:]))
    k3 = np.array([r.k3_hat for r in rows])
    k3_stable = bool(np.all(np.abs(k3 - np.median(k3)) <= 0.5 * np.median(k3)))
    return SweepResult(tuple(rows), slope, monotone, k3_stable)


@dataclass(frozen=True)
class MartingaleDiagnostic:
    second_moment: np.ndarray   # E|sum_{j<=k} theta(j)|^2, index k
    bound: np.ndarray           # w^2 k / 4
    ratio: np.ndarray           # second_moment / (w^2 k); nan at k = 0
    within_bound: bool          # second_moment <= bound * (1 + margin) for all k >= 1


def martingale_diagnostic(
    diagnostics: list[Diagnostics], w: float, margin: float = 0.05
) -> MartingaleDiagnostic:
    """Empirical second moment of the partial sums of theta_1 = w xi, across reps."""
    if not diagnostics:
        raise ValueError("no diagnostics recorded (set record_diagnostics)")
    curve = w ** 2 * np.mean([d.xi_sq_partial for d in diagnostics], axis=0)
    k = np.arange(len(curve), dtype=np.float64)
    bound = w ** 2 * k / 4.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(k > 0, curve / (w ** 2 * k), np.nan)
    within = bool(np.all(curve[1:] <= bound[1:] * (1.0 + margin)))
    return MartingaleDiagnostic(curve, bound, ratio, within)


def synthetic_innovations(prob: float, n: int, horizon: int, seed: int) -> Diagnostics:
    """Innovation diagnostics with the compliance probability held at `prob`."""
    rng = make_generator(seed)
    partial = np.zeros(n)
    out = np.zeros(horizon + 1)
    for k in range(1, horizon + 1):
        partial += (rng.random(n) < prob) - prob
        out[k] = np.mean(partial ** 2)
    return Diagnostics(xi_sq_partial=out, n_agents=n)


@dataclass(frozen=True)
class FairnessSummary:
    spearman: float             # rank correlation of q_i vs trailing compliance rate
    rate_p10: float
    rate_p90: float
    mean_rate: float

    @property
    def spread(self) -> float:
        return self.rate_p90 - self.rate_p10


def fairness_summary(agg: AggregateResult) -> FairnessSummary:
    agents = agg.per_agent()
    rates = agents["compliance_rate"]
    rho = stats.spearmanr(agents["q"], rates).statistic if len(rates) > 1 else float("nan")
    p10, p90 = np.percentile(rates, [10, 90])
    return FairnessSummary(float(rho), float(p10), float(p90), float(np.mean(rates)))
