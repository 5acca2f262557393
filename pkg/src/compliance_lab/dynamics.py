"""One-step stochastic recursions of the closed-loop compliance system.

Per step k -> k+1, with the ordering fixed by step_ensemble():

    C(k+1)    = C(k)    + alpha * (Q* - mean_i M_i(k))
    c_i(k+1)  = c_i(k)  + beta  * (Q* - M̄_i(k))
    M_i(k+1)  ~ Bernoulli(p(q_i + C(k) + c_i(k)))
    M̄_i(k+1) = gamma * M̄_i(k) + (1 - gamma) * M_i(k+1)

The update functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math

import numpy as np

from compliance_lab.models import (
    AgentParams,
    AgentState,
    ConfigError,
    ControlConfig,
    EnsembleState,
    GlobalSignal,
    ScalingParams,
)


def clamp_probability(x: float) -> float:
    """p(x) = mid{0, 1, x}."""
    if not math.isfinite(x):
        raise ValueError(f"probability argument {x} is not finite")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return float(x)


def clamp_probabilities(x: np.ndarray) -> np.ndarray:
    """Vectorised clamp_probability."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("probability arguments contain non-finite values")
    return np.clip(x, 0.0, 1.0)


def compliance_probability(
    agent: AgentParams, state: AgentState, signal: GlobalSignal
) -> float:
    """P(M_i(k+1) = 1) given the signals at step k. Defectors never comply."""
    if state.defecting:
        return 0.0
    return clamp_probability(agent.q + signal.c_global + state.c)


def ensemble_probabilities(state: EnsembleState) -> np.ndarray:
    """compliance_probability for every agent, in id order."""
    probs = clamp_probabilities(state.q + state.global_signal.c_global + state.c)
    probs[state.defecting] = 0.0
    return probs


def draw_compliance(rng: np.random.Generator, prob: float) -> int:
    """Bernoulli draw consuming exactly one uniform variate."""
    return int(rng.random() < prob)


def ema_update(m_bar, m_new, gamma: float):
    """M̄(k+1) = gamma * M̄(k) + (1 - gamma) * M(k+1), kept inside [0, 1]."""
    return np.clip(gamma * m_bar + (1.0 - gamma) * m_new, 0.0, 1.0)


def global_update(
    c_global: float, mean_m: float, alpha: float, q_star: float, enabled: bool = True
) -> float:
    if not enabled:
        return c_global
    return c_global + alpha * (q_star - mean_m)


def individual_update(c, m_bar, beta: float, q_star: float, enabled: bool = True):
    if not enabled:
        return c
    return c + beta * (q_star - m_bar)


def derive_gains(
    s: ScalingParams,
    q_star: float,
    enable_global: bool = True,
    enable_individual: bool = True,
) -> ControlConfig:
    """Theorem-mode gains: alpha = eps^1.5 alpha0, beta = eps beta0 w, gamma = 1 - eps w."""
    errors: list[str] = []
    if not s.epsilon > 0:
        errors.append(f"epsilon {s.epsilon} must be > 0")
    if not s.w > 0:
        errors.append(f"w {s.w} must be > 0")
    if not s.alpha0 > 0:
        errors.append(f"alpha0 {s.alpha0} must be > 0")
    if not 0.0 < s.beta0 <= 1.0:
        errors.append(f"beta0 {s.beta0} out of range (0, 1]")
    if s.epsilon > 0 and s.w > 0 and s.epsilon * s.w >= 1.0:
        errors.append(f"epsilon*w = {s.epsilon * s.w} must be < 1 (gamma would be <= 0)")
    if errors:
        raise ConfigError(errors)

    return ControlConfig(
        alpha=s.epsilon ** 1.5 * s.alpha0,
        beta=s.epsilon * s.beta0 * s.w,
        gamma=1.0 - s.epsilon * s.w,
        q_star=q_star,
        enable_global=enable_global,
        enable_individual=enable_individual,
    )


def step_ensemble(
    state: EnsembleState, cfg: ControlConfig, rng: np.random.Generator
) -> EnsembleState:
    """Advance the ensemble by one step.

    Signals are computed from M(k) and M̄(k) before the draw; the draw uses
    the old signals C(k), c_i(k); the EMA is updated from the new draw.
    Agents consume one variate each, in ascending id order.
    """
    mean_m = float(np.mean(state.last_m))
    c_global_next = global_update(
        state.global_signal.c_global, mean_m, cfg.alpha, cfg.q_star, cfg.enable_global
    )
    c_next = individual_update(state.c, state.m_bar, cfg.beta, cfg.q_star, cfg.enable_individual)

    probs = ensemble_probabilities(state)
    draws = (rng.random(state.n) < probs).astype(np.int8)
    m_bar_next = ema_update(state.m_bar, draws, cfg.gamma)

    return EnsembleState(
        step=state.step + 1,
        global_signal=GlobalSignal(c_global_next),
        q=state.q,
        c=c_next,
        m_bar=m_bar_next,
        last_m=draws,
        defecting=state.defecting,
    )
