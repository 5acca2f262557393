"""Deterministic reference dynamics for the compliance loop.

With y = (y1, y2) = (M̄_i, q_i + C + c_i) and the mean field

    h1(y) = w * (p(y2) - y1)
    h2(y) = beta0 * w * (Q* - y1)

the noise-free map is y(k+1) = y(k) + eps * h(y(k)) and the ODE is
dz/dt = h(z). Both have the unique fixed point y* = (Q*, Q*). Inside the unit
square p(z2) = z2 and the ODE is linear: d(z - y*)/dt = w A (z - y*) with
A = [[-1, 1], [-beta0, 0]].

Points and trajectories are numpy arrays with a trailing axis of length 2, so
every function here also accepts a batch of points of shape (m, 2).
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

logger = logging.getLogger(__name__)


class ContractionProbeError(Exception):
    """Raised when no horizon below the cap certifies the halving property."""


@dataclass(frozen=True)
class RefPoint:
    y1: float                   # compliance coordinate
    y2: float                   # signal coordinate X = q + C + c

    def __post_init__(self):
        if not (math.isfinite(self.y1) and math.isfinite(self.y2)):
            raise ValueError(f"reference point ({self.y1}, {self.y2}) is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.y1, self.y2], dtype=np.float64)


@dataclass(frozen=True)
class RefParams:
    w: float = 1.0
    beta0: float = 1.0
    q_star: float = 0.85
    epsilon: float = 0.01       # discrete map only

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError(f"w {self.w} must be > 0")
        if not 0.0 < self.beta0 <= 1.0:
            raise ValueError(f"beta0 {self.beta0} out of range (0, 1]")
        if not 0.0 <= self.q_star <= 1.0:
            raise ValueError(f"qstar {self.q_star} out of range [0, 1]")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon {self.epsilon} must be > 0")

    @property
    def fixed_point(self) -> np.ndarray:
        return np.array([self.q_star, self.q_star], dtype=np.float64)

    @property
    def default_dt(self) -> float:
        return min(0.01 / self.w, 0.01)


def _points(y) -> np.ndarray:
    if isinstance(y, RefPoint):
        return y.as_array()
    return np.asarray(y, dtype=np.float64)


def vector_field_h(y, p: RefParams) -> np.ndarray:
    """(w (p(y2) - y1), beta0 w (Q* - y1))."""
    y = _points(y)
    y1, y2 = y[..., 0], y[..., 1]
    return np.stack(
        [p.w * (np.clip(y2, 0.0, 1.0) - y1), p.beta0 * p.w * (p.q_star - y1)],
        axis=-1,
    )


def discrete_iterate(y0, p: RefParams, steps: int) -> np.ndarray:
    """Trajectory of y(k+1) = y(k) + eps h(y(k)); shape (steps + 1, ..., 2)."""
    if steps < 0:
        raise ValueError(f"steps {steps} must be >= 0")
    y = _points(y0)
    traj = np.empty((steps + 1, *y.shape))
    traj[0] = y
    for k in range(steps):
        y = y + p.epsilon * vector_field_h(y, p)
        traj[k + 1] = y
    return traj


def ode_integrate(z0, p: RefParams, T: float, dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 with a fixed step on dz/dt = h(z).

    The step is shrunk so that it divides T exactly. Returns (t, z) with z of
    shape (len(t), ..., 2).
    """
    if dt is None:
        dt = p.default_dt
    if not 0 < dt <= 0.01 / p.w + 1e-15:
        raise ValueError(f"dt {dt} must be in (0, 0.01/w = {0.01 / p.w}]")
    if T < 0:
        raise ValueError(f"T {T} must be >= 0")

    n_steps = int(math.ceil(T / dt - 1e-9)) if T > 0 else 0
    h = T / n_steps if n_steps else 0.0
    z = _points(z0)
    traj = np.empty((n_steps + 1, *z.shape))
    traj[0] = z
    for j in range(n_steps):
        k1 = vector_field_h(z, p)
        k2 = vector_field_h(z + 0.5 * h * k1, p)
        k3 = vector_field_h(z + 0.5 * h * k2, p)
        k4 = vector_field_h(z + h * k3, p)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[j + 1] = z
    return np.linspace(0.0, T, n_steps + 1), traj


def region_excursion_solution(z2_0: float, z1_0: float, p: RefParams, t):
    """Closed-form z2(t) while the trajectory stays in z2 >= 1 (where p = 1)."""
    t = np.asarray(t, dtype=np.float64)
    return (
        z2_0
        - p.beta0 * p.w * t * (1.0 - p.q_star)
        + p.beta0 * (1.0 - z1_0) * (1.0 - np.exp(-p.w * t))
    )


def lyapunov_value(z, p: RefParams):
    """V(z) = beta0 (z1 - Q*)^2 + (z2 - Q*)^2."""
    z = _points(z)
    return p.beta0 * (z[..., 0] - p.q_star) ** 2 + (z[..., 1] - p.q_star) ** 2


def stability_eigenvalues(p: RefParams) -> tuple[complex, complex]:
    """Eigenvalues of w A, from the characteristic polynomial lambda^2 + lambda + beta0.

    Ordered by descending imaginary part, then descending real part.
    """
    disc = complex(1.0 - 4.0 * p.beta0)
    root = np.sqrt(disc)
    lam_plus = (-1.0 + root) / 2.0
    lam_minus = (-1.0 - root) / 2.0
    pair = sorted((lam_plus, lam_minus), key=lambda z: (-z.imag, -z.real))
    return complex(p.w * pair[0]), complex(p.w * pair[1])


def system_matrix(p: RefParams) -> np.ndarray:
    return np.array([[-1.0, 1.0], [-p.beta0, 0.0]])


def linear_flow(z0, p: RefParams, t: np.ndarray) -> np.ndarray:
    """Exact solution of the linear system inside the unit square, at times t."""
    z0 = _points(z0)
    A = system_matrix(p)
    offset = z0 - p.fixed_point
    return np.array([p.fixed_point + expm(p.w * A * ti) @ offset for ti in np.atleast_1d(t)])


def signed_angles(z: np.ndarray, p: RefParams) -> np.ndarray:
    """Unwrapped polar angle of z - y* along a trajectory."""
    d = _points(z) - p.fixed_point
    return np.unwrap(np.arctan2(d[..., 1], d[..., 0]), axis=0)


def start_grid(size: int, y2_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """size x size grid of start points with y1 in [0, 1]; shape (size**2, 2)."""
    y1, y2 = np.meshgrid(np.linspace(0.0, 1.0, size), np.linspace(*y2_range, size), indexing="ij")
    return np.column_stack([y1.ravel(), y2.ravel()])


def estimate_signal_bound(p: RefParams, steps: int, grid: int = 21) -> float:
    """Empirical K2': max |y2(k)| over discrete trajectories from a grid on [0, 1]^2."""
    traj = discrete_iterate(start_grid(grid), p, steps)
    return float(np.max(np.abs(traj[..., 1])))


@dataclass(frozen=True)
class DiscretizationGap:
    epsilons: tuple[float, ...]
    gaps: tuple[float, ...]     # sup over t <= T of |y_hat(t) - z(t)|
    c_T: float                  # max gap / eps


def discretization_gap(y0, p: RefParams, T: float, eps_list: list[float]) -> DiscretizationGap:
    """Compare the map with step eps against the ODE at times k * eps <= T."""
    gaps: list[float] = []
    for eps in eps_list:
        steps = int(math.floor(T / eps + 1e-9))
        mapped = discrete_iterate(y0, dataclasses.replace(p, epsilon=eps), steps)
        # ODE step that divides eps, so every map time is an ODE grid time
        sub = int(math.ceil(eps / p.default_dt - 1e-9))
        _, z = ode_integrate(y0, p, steps * eps, dt=eps / sub)
        gaps.append(float(np.max(np.linalg.norm(mapped - z[::sub], axis=-1))))
    c_T = max(g / e for g, e in zip(gaps, eps_list))
    return DiscretizationGap(tuple(eps_list), tuple(gaps), c_T)


@dataclass(frozen=True)
class ContractionCertificate:
    tau: float                  # horizon in ODE time; map steps = ceil(tau / eps)
    b1: float
    epsilons: tuple[float, ...]
    n_starts: int


def contraction_probe(
    p: RefParams,
    eps_list: list[float],
    starts: np.ndarray | None = None,
    tau_min: float = 0.5,
    tau_cap: float = 512.0,
    b1_cap: float = 1.0,
) -> ContractionCertificate:
    """Smallest tau on the grid tau_min * 2**j with

        |y(ceil(tau/eps)) - y*| <= 0.5 |y(0) - y*| + b1 * eps

    for every start and every eps, where the fitted b1 must not exceed b1_cap.
    """
    starts = start_grid(5) if starts is None else np.atleast_2d(np.asarray(starts, dtype=np.float64))
    if np.any((starts[:, 0] < 0.0) | (starts[:, 0] > 1.0)):
        raise ValueError("start points need y1 in [0, 1]")

    d0 = np.linalg.norm(starts - p.fixed_point, axis=-1)
    tau = tau_min
    tried: list[tuple[float, float]] = []
    while tau <= tau_cap:
        b1 = 0.0
        for eps in eps_list:
            steps = int(math.ceil(tau / eps))
            traj = discrete_iterate(starts, dataclasses.replace(p, epsilon=eps), steps)
            d_end = np.linalg.norm(traj[-1] - p.fixed_point, axis=-1)
            b1 = max(b1, float(np.max((d_end - 0.5 * d0) / eps)))
        b1 = max(b1, 0.0)
        tried.append((tau, b1))
        logger.debug("contraction probe tau=%.3g fitted b1=%.4g", tau, b1)
        if b1 <= b1_cap:
            return ContractionCertificate(tau, b1, tuple(eps_list), len(starts))
        tau *= 2.0

    summary = ", ".join(f"tau={t:g}: b1={b:.3g}" for t, b in tried)
    raise ContractionProbeError(
        f"no tau <= {tau_cap} certifies halving with b1 <= {b1_cap} ({summary})"
    )
