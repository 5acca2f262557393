"""Scenario registry: the four simulation scenarios and their shared defaults.

All scenarios use n=1000, alpha=0.025, beta=0.1, Q*=0.85, gamma=0.95,
C(0)=0, c_i(0)=0 and q_i ~ U[0.1, 0.35]. They differ in which feedback loops
are active and whether 10% of the agents refuse to comply for k <= 100.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

import numpy as np

from compliance_lab.config import SimConfig
from compliance_lab.models import ConfigError, ControlConfig, DefectorConfig, ScenarioKind
from compliance_lab.seeding import PROCLIVITY_STREAM, make_generator, mix_seed

DEFAULT_CONTROL = ControlConfig(alpha=0.025, beta=0.1, gamma=0.95, q_star=0.85)
DEFAULT_DEFECTORS = DefectorConfig(fraction=0.10, defect_until=100)


@dataclass(frozen=True)
class ScenarioPreset:
    kind: ScenarioKind
    description: str
    enable_global: bool
    enable_individual: bool
    defectors: DefectorConfig | None = None


SCENARIOS: dict[ScenarioKind, ScenarioPreset] = {
    ScenarioKind.I_GLOBAL_ONLY: ScenarioPreset(
        kind=ScenarioKind.I_GLOBAL_ONLY,
        description="global signal only (c_i = 0)",
        enable_global=True,
        enable_individual=False,
    ),
    ScenarioKind.II_BOTH: ScenarioPreset(
        kind=ScenarioKind.II_BOTH,
        description="global and individual signals",
        enable_global=True,
        enable_individual=True,
    ),
    ScenarioKind.III_INDIVIDUAL_ONLY_DEFECTORS: ScenarioPreset(
        kind=ScenarioKind.III_INDIVIDUAL_ONLY_DEFECTORS,
        description="individual signal only, 10% defectors until k=100",
        enable_global=False,
        enable_individual=True,
        defectors=DEFAULT_DEFECTORS,
    ),
    ScenarioKind.IV_BOTH_DEFECTORS: ScenarioPreset(
        kind=ScenarioKind.IV_BOTH_DEFECTORS,
        description="global and individual signals, 10% defectors until k=100",
        enable_global=True,
        enable_individual=True,
        defectors=DEFAULT_DEFECTORS,
    ),
}


def build_scenario(kind: ScenarioKind | str, **overrides: Any) -> SimConfig:
    """SimConfig for a scenario, with SimConfig field overrides applied.

    The scenario decides which loops are enabled, also when `control` is
    overridden. Raises ConfigError on invalid overrides.
    """
    try:
        preset = SCENARIOS[ScenarioKind(kind)]
    except ValueError:
        raise ConfigError([f"scenario {kind!r} not in (I, II, III, IV)"]) from None

    unknown = set(overrides) - {f.name for f in dataclasses.fields(SimConfig)}
    if unknown:
        raise ConfigError([f"unknown SimConfig field(s): {', '.join(sorted(unknown))}"])

    control = dataclasses.replace(
        overrides.pop("control", DEFAULT_CONTROL),
        enable_global=preset.enable_global,
        enable_individual=preset.enable_individual,
    )
    fields: dict[str, Any] = {
        "control": control,
        "scenario": preset.kind,
        "defectors": preset.defectors,
    }
    fields.update(overrides)
    fields["scenario"] = preset.kind
    return SimConfig(**fields)


def sample_proclivities(n: int, low: float, high: float, seed: int) -> np.ndarray:
    """n independent U[low, high] draws, deterministic in seed."""
    if not 0.0 <= low <= high <= 1.0:
        raise ValueError(f"need 0 <= low <= high <= 1, got ({low}, {high})")
    if low == high:
        return np.full(n, low, dtype=np.float64)
    return make_generator(seed).uniform(low, high, size=n)


def proclivities_for(cfg: SimConfig) -> np.ndarray:
    """q vector shared by every rep of a config (drawn from base_seed only)."""
    return sample_proclivities(cfg.n, cfg.q_low, cfg.q_high, mix_seed(cfg.base_seed, PROCLIVITY_STREAM))


def select_defectors(n: int, defectors: DefectorConfig | None) -> np.ndarray:
    """Sorted ids of the defecting agents."""
    if defectors is None:
        return np.empty(0, dtype=np.int64)
    count = min(n, defectors.count(n))
    if defectors.selection == "lowest":
        return np.arange(count, dtype=np.int64)
    chosen = make_generator(defectors.selection_seed).choice(n, size=count, replace=False)
    return np.sort(chosen).astype(np.int64)
