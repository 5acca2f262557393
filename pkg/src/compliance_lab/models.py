"""Data models for the closed-loop compliance system."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ConfigError(Exception):
    """Raised when a configuration fails validation."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__(f"Invalid configuration: {'; '.join(errors)}")


@dataclass(frozen=True)
class AgentParams:
    """Static description of one agent."""

    id: int
    q: float                    # base proclivity, additive offset inside p(.)

    def __post_init__(self):
        if not math.isfinite(self.q):
            raise ValueError(f"agent {self.id}: q={self.q} is not finite")


@dataclass(frozen=True)
class AgentState:
    """Dynamic state of one agent at step k."""

    c: float                    # individual price signal c_i(k)
    m_bar: float                # EMA compliance
    last_m: int                 # M_i(k), 0 or 1
    defecting: bool = False

    def __post_init__(self):
        if not 0.0 <= self.m_bar <= 1.0:
            raise ValueError(f"m_bar {self.m_bar} out of range [0, 1]")
        if self.last_m not in (0, 1):
            raise ValueError(f"last_m {self.last_m} not in {{0, 1}}")


@dataclass(frozen=True)
class GlobalSignal:
    c_global: float             # C(k)

    def __post_init__(self):
        if not math.isfinite(self.c_global):
            raise ValueError(f"C={self.c_global} is not finite")


@dataclass(frozen=True)
class ControlConfig:
    """Controller gains and target compliance."""

    alpha: float
    beta: float
    gamma: float
    q_star: float
    enable_global: bool = True
    enable_individual: bool = True

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self) -> list[str]:
        errors: list[str] = []
        if not self.alpha > 0:
            errors.append(f"alpha {self.alpha} must be > 0")
        if not self.beta > 0:
            errors.append(f"beta {self.beta} must be > 0")
        if not 0.0 <= self.gamma < 1.0:
            errors.append(f"gamma {self.gamma} out of range [0, 1)")
        if not 0.0 <= self.q_star <= 1.0:
            errors.append(f"qstar {self.q_star} out of range [0, 1]")
        return errors


@dataclass(frozen=True)
class ScalingParams:
    """Theorem-mode gain source; validated by dynamics.derive_gains."""

    epsilon: float
    w: float = 1.0
    alpha0: float = 1.0
    beta0: float = 1.0


@dataclass(eq=False)
class EnsembleState:
    """State of all n agents at step k, stored column-wise.

    Column i holds agent id i; the ordered (AgentParams, AgentState) view is
    available through agents().
    """

    step: int
    global_signal: GlobalSignal
    q: np.ndarray               # float64, shape (n,)
    c: np.ndarray               # float64
    m_bar: np.ndarray           # float64
    last_m: np.ndarray          # int8, values in {0, 1}
    defecting: np.ndarray = field(default=None)  # bool

    def __post_init__(self):
        if self.defecting is None:
            self.defecting = np.zeros(len(self.q), dtype=bool)
        n = len(self.q)
        for name in ("c", "m_bar", "last_m", "defecting"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")

    @property
    def n(self) -> int:
        return len(self.q)

    @classmethod
    def initial(
        cls,
        q: np.ndarray,
        c_global: float = 0.0,
        c: np.ndarray | None = None,
        m_bar: float = 0.0,
    ) -> EnsembleState:
        """State at k=0 with M_i(0) = 0 and a uniform EMA start."""
        q = np.asarray(q, dtype=np.float64)
        n = len(q)
        return cls(
            step=0,
            global_signal=GlobalSignal(c_global),
            q=q,
            c=np.zeros(n) if c is None else np.asarray(c, dtype=np.float64),
            m_bar=np.full(n, m_bar, dtype=np.float64),
            last_m=np.zeros(n, dtype=np.int8),
        )

    @classmethod
    def from_agents(
        cls,
        agents: list[tuple[AgentParams, AgentState]],
        global_signal: GlobalSignal,
        step: int = 0,
    ) -> EnsembleState:
        ordered = sorted(agents, key=lambda pair: pair[0].id)
        if [p.id for p, _ in ordered] != list(range(len(ordered))):
            raise ValueError("agent ids must be exactly 0..n-1")
        return cls(
            step=step,
            global_signal=global_signal,
            q=np.array([p.q for p, _ in ordered], dtype=np.float64),
            c=np.array([s.c for _, s in ordered], dtype=np.float64),
            m_bar=np.array([s.m_bar for _, s in ordered], dtype=np.float64),
            last_m=np.array([s.last_m for _, s in ordered], dtype=np.int8),
            defecting=np.array([s.defecting for _, s in ordered], dtype=bool),
        )

    def agents(self) -> list[tuple[AgentParams, AgentState]]:
        return [
            (
                AgentParams(id=i, q=float(self.q[i])),
                AgentState(
                    c=float(self.c[i]),
                    m_bar=float(self.m_bar[i]),
                    last_m=int(self.last_m[i]),
                    defecting=bool(self.defecting[i]),
                ),
            )
            for i in range(self.n)
        ]

    def with_defecting(self, mask: np.ndarray) -> EnsembleState:
        return EnsembleState(
            step=self.step,
            global_signal=self.global_signal,
            q=self.q,
            c=self.c,
            m_bar=self.m_bar,
            last_m=self.last_m,
            defecting=np.asarray(mask, dtype=bool),
        )

    def identical_to(self, other: EnsembleState) -> bool:
        """Bitwise equality of every field."""
        return (
            self.step == other.step
            and self.global_signal.c_global == other.global_signal.c_global
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("q", "c", "m_bar", "last_m", "defecting")
            )
        )


class ScenarioKind(str, Enum):
    I_GLOBAL_ONLY = "I"
    II_BOTH = "II"
    III_INDIVIDUAL_ONLY_DEFECTORS = "III"
    IV_BOTH_DEFECTORS = "IV"


@dataclass(frozen=True)
class DefectorConfig:
    """Agents whose draws are forced to 0 while step <= defect_until."""

    fraction: float
    defect_until: int = 100
    selection_seed: int = 0
    selection: str = "random"   # "random" or "lowest"

    def __post_init__(self):
        errors: list[str] = []
        if not 0.0 <= self.fraction < 1.0:
            errors.append(f"defector_frac {self.fraction} out of range [0, 1)")
        if self.defect_until < 0:
            errors.append(f"defect_until {self.defect_until} must be >= 0")
        if self.selection not in ("random", "lowest"):
            errors.append(f"defector_selection '{self.selection}' not in (random, lowest)")
        if errors:
            raise ConfigError(errors)

    def count(self, n: int) -> int:
        """round(fraction * n), halves rounded up."""
        return int(math.floor(self.fraction * n + 0.5))
