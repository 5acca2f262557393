"""CSV emission for simulation outputs.

All files use `\\n` line endings, no index column and 10 significant digits,
so a fixed input always produces the same bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from compliance_lab.montecarlo import SERIES, AggregateResult, SweepResult
from compliance_lab.reference import RefParams, lyapunov_value

FLOAT_FORMAT = "%.10g"
TIMESERIES_COLUMNS = ["k", *SERIES]
AGENT_COLUMNS = ["agent_id", "q", "final_mbar", "compliance_rate_last100", "final_c"]
SWEEP_COLUMNS = ["epsilon", "alpha", "beta", "gamma", "msd", "deviation_prob", "k3_hat"]
ODE_COLUMNS = ["t", "z1", "z2", "V"]


def _write_frame(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def timeseries_frame(agg: AggregateResult, stat: str = "mean") -> pd.DataFrame:
    if stat not in ("mean", "std"):
        raise ValueError(f"stat '{stat}' not in (mean, std)")
    series = agg.mean if stat == "mean" else agg.std
    frame = pd.DataFrame({name: series[name] for name in SERIES})
    frame.insert(0, "k", np.arange(len(frame), dtype=np.int64))
    return frame


def write_timeseries(agg: AggregateResult, path: str | Path, stat: str = "mean") -> Path:
    """One row per step k = 0..horizon of the across-rep mean (or std)."""
    return _write_frame(timeseries_frame(agg, stat), path)


def read_timeseries(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if list(frame.columns) != TIMESERIES_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {list(frame.columns)}")
    return frame


def write_agents(agg: AggregateResult, path: str | Path) -> Path:
    agents = agg.per_agent()
    frame = pd.DataFrame(
        {
            "agent_id": agents["agent_id"],
            "q": agents["q"],
            "final_mbar": agents["final_mbar"],
            "compliance_rate_last100": agents["compliance_rate"],
            "final_c": agents["final_c"],
        },
        columns=AGENT_COLUMNS,
    )
    return _write_frame(frame, path)


def write_sweep(result: SweepResult, path: str | Path) -> Path:
    frame = pd.DataFrame(
        [[getattr(row, col) for col in SWEEP_COLUMNS] for row in result.rows],
        columns=SWEEP_COLUMNS,
    )
    return _write_frame(frame, path)


def write_ode(t: np.ndarray, z: np.ndarray, p: RefParams, path: str | Path) -> Path:
    frame = pd.DataFrame(
        {"t": t, "z1": z[:, 0], "z2": z[:, 1], "V": lyapunov_value(z, p)},
        columns=ODE_COLUMNS,
    )
    return _write_frame(frame, path)
