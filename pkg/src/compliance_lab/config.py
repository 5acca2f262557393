"""Experiment configuration: SimConfig and its flat `key = value` text form.

    # Scenario II with theorem-mode gains
    scenario = II
    epsilon = 0.04
    w = 1
    reps = 50

Missing keys take the Scenario II defaults (or the named scenario's). The raw
gains (alpha, beta, gamma) and the scaling parameters (epsilon, w, alpha0,
beta0) are mutually exclusive gain sources.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from compliance_lab.dynamics import derive_gains
from compliance_lab.ledger.base import PolicyKind
from compliance_lab.models import (
    ConfigError,
    ControlConfig,
    DefectorConfig,
    ScalingParams,
    ScenarioKind,
)

START_CHOICES = ("zero", "target", "settled")


@dataclass(frozen=True)
class SimConfig:
    """Full experiment description."""

    control: ControlConfig
    n: int = 1000
    scaling: ScalingParams | None = None    # set => theorem mode, control derived from it
    q_low: float = 0.1
    q_high: float = 0.35
    horizon: int = 500
    scenario: ScenarioKind = ScenarioKind.II_BOTH
    defectors: DefectorConfig | None = None
    policy: PolicyKind = PolicyKind.ADAPTIVE_PENALTY
    unit_scale: int = 1_000_000             # micro-tokens per unit of C + c
    reps: int = 150
    base_seed: int = 0
    record_diagnostics: bool = False
    start: str = "zero"                     # zero | target | settled
    contract_length: int | None = None      # FixedPenalty; None = horizon
    window: int = 100                       # trailing statistics window

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self) -> list[str]:
        errors: list[str] = []
        if self.n < 1:
            errors.append(f"n {self.n} must be >= 1")
        if not 0.0 <= self.q_low <= self.q_high <= 1.0:
            errors.append(f"q_low/q_high ({self.q_low}, {self.q_high}) must satisfy 0 <= q_low <= q_high <= 1")
        if self.horizon < 0:
            errors.append(f"horizon {self.horizon} must be >= 0")
        if self.unit_scale < 1:
            errors.append(f"unit_scale {self.unit_scale} must be >= 1")
        if self.reps < 1:
            errors.append(f"reps {self.reps} must be >= 1")
        if not 0 <= self.base_seed < 2 ** 64:
            errors.append(f"seed {self.base_seed} must be a 64-bit unsigned integer")
        if self.start not in START_CHOICES:
            errors.append(f"start '{self.start}' not in {START_CHOICES}")
        if self.contract_length is not None and self.contract_length < 1:
            errors.append(f"contract_length {self.contract_length} must be >= 1")
        if self.window < 1:
            errors.append(f"window {self.window} must be >= 1")
        if self.scaling is not None:
            try:
                derived = derive_gains(
                    self.scaling,
                    self.control.q_star,
                    self.control.enable_global,
                    self.control.enable_individual,
                )
            except ConfigError as exc:
                errors.extend(exc.errors)
            else:
                if derived != self.control:
                    errors.append("control gains disagree with the scaling parameters")
        return errors

    @property
    def theorem_mode(self) -> bool:
        return self.scaling is not None

    @property
    def effective_contract_length(self) -> int:
        return self.contract_length if self.contract_length is not None else max(1, self.horizon)

    @property
    def initial_mbar(self) -> float:
        return self.control.q_star if self.start in ("target", "settled") else 0.0

    def initial_c(self, q: np.ndarray) -> np.ndarray:
        """c_i(0): zero, or Q* - q_i under the settled start (individual loop only)."""
        if self.start == "settled" and self.control.enable_individual:
            return self.control.q_star - np.asarray(q, dtype=np.float64)
        return np.zeros(len(q))


# ── Text form ────────────────────────────────────────────────────────────

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_enum(enum_cls) -> Callable[[str], Any]:
    def parse(raw: str):
        try:
            return enum_cls(raw.strip())
        except ValueError:
            choices = ", ".join(m.value for m in enum_cls)
            raise ValueError(f"{raw!r} not in ({choices})") from None
    return parse


def _parse_seed(raw: str) -> int:
    return int(raw, 16) if raw.lower().startswith("0x") else int(raw)


# key -> (parser, range check returning an error message or None)
KEY_SPECS: dict[str, tuple[Callable[[str], Any], Callable[[Any], str | None]]] = {
    "n": (int, lambda v: None if v >= 1 else "must be >= 1"),
    "alpha": (float, lambda v: None if v > 0 else "must be > 0"),
    "beta": (float, lambda v: None if v > 0 else "must be > 0"),
    "gamma": (float, lambda v: None if 0 <= v < 1 else "out of range [0, 1)"),
    "qstar": (float, lambda v: None if 0 <= v <= 1 else "out of range [0, 1]"),
    "epsilon": (float, lambda v: None if v > 0 else "must be > 0"),
    "w": (float, lambda v: None if v > 0 else "must be > 0"),
    "alpha0": (float, lambda v: None if v > 0 else "must be > 0"),
    "beta0": (float, lambda v: None if 0 < v <= 1 else "out of range (0, 1]"),
    "q_low": (float, lambda v: None if 0 <= v <= 1 else "out of range [0, 1]"),
    "q_high": (float, lambda v: None if 0 <= v <= 1 else "out of range [0, 1]"),
    "horizon": (int, lambda v: None if v >= 0 else "must be >= 0"),
    "scenario": (_parse_enum(ScenarioKind), lambda v: None),
    "defector_frac": (float, lambda v: None if 0 <= v < 1 else "out of range [0, 1)"),
    "defect_until": (int, lambda v: None if v >= 0 else "must be >= 0"),
    "defector_seed": (int, lambda v: None if v >= 0 else "must be >= 0"),
    "defector_selection": (str, lambda v: None if v in ("random", "lowest") else "not in (random, lowest)"),
    "policy": (_parse_enum(PolicyKind), lambda v: None),
    "unit_scale": (int, lambda v: None if v >= 1 else "must be >= 1"),
    "reps": (int, lambda v: None if v >= 1 else "must be >= 1"),
    "seed": (_parse_seed, lambda v: None if 0 <= v < 2 ** 64 else "must be a 64-bit unsigned integer"),
    "record_diagnostics": (_parse_bool, lambda v: None),
    "start": (str, lambda v: None if v in START_CHOICES else f"not in {START_CHOICES}"),
    "contract_length": (int, lambda v: None if v >= 1 else "must be >= 1"),
    "window": (int, lambda v: None if v >= 1 else "must be >= 1"),
}

RAW_GAIN_KEYS = ("alpha", "beta", "gamma")
SCALING_KEYS = ("epsilon", "w", "alpha0", "beta0")


def _read_pairs(text: str) -> tuple[dict[str, tuple[int, Any]], list[str]]:
    values: dict[str, tuple[int, Any]] = {}
    errors: list[str] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw_line.strip()!r}")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEY_SPECS:
            errors.append(f"line {lineno}: {key}: unknown key")
            continue
        if key in values:
            errors.append(f"line {lineno}: {key}: duplicate key (first set on line {values[key][0]})")
            continue
        parser, check = KEY_SPECS[key]
        try:
            value = parser(raw)
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")
            continue
        problem = check(value)
        if problem:
            errors.append(f"line {lineno}: {key}: {raw} {problem}")
            continue
        values[key] = (lineno, value)
    return values, errors


def parse_config(text: str) -> SimConfig:
    """Parse flat `key = value` text into a SimConfig. Raises ConfigError."""
    from compliance_lab.scenarios import build_scenario

    values, errors = _read_pairs(text)
    raw_keys = [k for k in RAW_GAIN_KEYS if k in values]
    scaling_keys = [k for k in SCALING_KEYS if k in values]
    if raw_keys and scaling_keys:
        lines = sorted(values[k][0] for k in raw_keys + scaling_keys)
        errors.append(
            f"line {lines[-1]}: {', '.join(raw_keys + scaling_keys)}: "
            "raw gains and scaling parameters are mutually exclusive gain sources"
        )
    if scaling_keys and "epsilon" not in values:
        errors.append(f"line {values[scaling_keys[0]][0]}: epsilon: required when scaling parameters are given")
    if errors:
        raise ConfigError(errors)

    def get(key: str, default: Any = None) -> Any:
        return values[key][1] if key in values else default

    kind = get("scenario", ScenarioKind.II_BOTH)
    base = build_scenario(kind)

    overrides: dict[str, Any] = {}
    for key, field_name in (
        ("n", "n"), ("q_low", "q_low"), ("q_high", "q_high"), ("horizon", "horizon"),
        ("policy", "policy"), ("unit_scale", "unit_scale"), ("reps", "reps"),
        ("seed", "base_seed"), ("record_diagnostics", "record_diagnostics"),
        ("start", "start"), ("contract_length", "contract_length"), ("window", "window"),
    ):
        if key in values:
            overrides[field_name] = get(key)

    q_star = get("qstar", base.control.q_star)
    try:
        if "epsilon" in values:
            scaling = ScalingParams(
                epsilon=get("epsilon"), w=get("w", 1.0), alpha0=get("alpha0", 1.0), beta0=get("beta0", 1.0)
            )
            overrides["scaling"] = scaling
            overrides["control"] = derive_gains(scaling, q_star)
        else:
            overrides["control"] = dataclasses.replace(
                base.control,
                alpha=get("alpha", base.control.alpha),
                beta=get("beta", base.control.beta),
                gamma=get("gamma", base.control.gamma),
                q_star=q_star,
            )

        defector_keys = ("defector_frac", "defect_until", "defector_seed", "defector_selection")
        if any(k in values for k in defector_keys):
            fraction = get("defector_frac", base.defectors.fraction if base.defectors else 0.0)
            if fraction == 0.0:
                overrides["defectors"] = None
            else:
                template = base.defectors or DefectorConfig(fraction=fraction)
                overrides["defectors"] = DefectorConfig(
                    fraction=fraction,
                    defect_until=get("defect_until", template.defect_until),
                    selection_seed=get("defector_seed", template.selection_seed),
                    selection=get("defector_selection", template.selection),
                )
        return build_scenario(kind, **overrides)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from exc


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config: {exc}"]) from exc
    except UnicodeDecodeError as exc:
        raise ConfigError([f"{path}: not UTF-8 text: {exc}"]) from exc
    return parse_config(text)


def serialize_config(cfg: SimConfig) -> str:
    """Text form that parse_config maps back to an equal SimConfig."""
    lines = [
        f"scenario = {cfg.scenario.value}",
        f"n = {cfg.n}",
    ]
    if cfg.scaling is not None:
        lines += [
            f"epsilon = {cfg.scaling.epsilon!r}",
            f"w = {cfg.scaling.w!r}",
            f"alpha0 = {cfg.scaling.alpha0!r}",
            f"beta0 = {cfg.scaling.beta0!r}",
        ]
    else:
        lines += [
            f"alpha = {cfg.control.alpha!r}",
            f"beta = {cfg.control.beta!r}",
            f"gamma = {cfg.control.gamma!r}",
        ]
    lines += [
        f"qstar = {cfg.control.q_star!r}",
        f"q_low = {cfg.q_low!r}",
        f"q_high = {cfg.q_high!r}",
        f"horizon = {cfg.horizon}",
    ]
    if cfg.defectors is None:
        lines.append("defector_frac = 0.0")
    else:
        lines += [
            f"defector_frac = {cfg.defectors.fraction!r}",
            f"defect_until = {cfg.defectors.defect_until}",
            f"defector_seed = {cfg.defectors.selection_seed}",
            f"defector_selection = {cfg.defectors.selection}",
        ]
    lines += [
        f"policy = {cfg.policy.value}",
        f"unit_scale = {cfg.unit_scale}",
        f"reps = {cfg.reps}",
        f"seed = {cfg.base_seed}",
        f"record_diagnostics = {'true' if cfg.record_diagnostics else 'false'}",
        f"start = {cfg.start}",
        f"window = {cfg.window}",
    ]
    if cfg.contract_length is not None:
        lines.append(f"contract_length = {cfg.contract_length}")
    return "\n".join(lines) + "\n"
