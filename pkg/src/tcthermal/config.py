"""Pipeline configuration as a flat ``key = value`` text file."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .profiles import LEVEL_NAMES


def _intervals(text) -> tuple:
    """``"-2.5:-1.5, -0.5:0.5"`` -> ((-2.5, -1.5), (-0.5, 0.5))."""
    out = []
    for item in str(text).split(","):
        if item.strip():
            lo, hi = item.split(":")
            out.append((float(lo), float(hi)))
    return tuple(out)


def _fmt_intervals(v) -> str:
    return ", ".join(f"{lo:g}:{hi:g}" for lo, hi in v)


@dataclass(frozen=True)
class PipelineConfig:
    # pairing
    pair_radius_deg: float = 0.2
    baseline_lo: float = -12.0
    baseline_hi: float = -2.0
    signal_lo: float = -2.0
    signal_hi: float = 20.0
    lineage_separation_days: float = 3.0
    max_signals: int = 6
    incidental_deg: float = 8.0
    # TC / non-TC partition
    tc_deg: float = 8.0
    tc_before_days: float = 12.0
    tc_after_days: float = 30.0
    # mean field
    meanfield_half_width: float = 8.0
    meanfield_n_min: int = 50
    max_ring: int = 10
    # GP
    gp_half_width: float = 5.0
    gp_months: str = "8,9,10"
    gp_n_min: int = 30
    gp_n_starts: int = 5
    gp_nugget_alpha: float = 0.05
    gp_max_obs: int = 0  # 0 keeps every window observation
    gp_cell_step: int = 1  # fit GP cells on a lattice with this spacing in degrees
    # smoothing
    knot_spacing: float = 0.5
    lambda_lo: float = 1e-3
    lambda_hi: float = 500.0
    lambda_n: int = 40
    lambda_tolerance: float = 1.01
    side_condition: bool = True
    alpha: float = 0.05
    log_variance_floor: float = -4.5
    hurricane_threshold_kt: float = 64.0
    grid_nd: int = 400
    grid_nt: int = 100
    levels: str = "all"
    crosstrack_bands: tuple = ((-2.5, -1.5), (-0.5, 0.5), (1.5, 2.5))
    time_bins: tuple = ((0.0, 3.0), (3.0, 20.0))
    # execution
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        positive = ["pair_radius_deg", "lineage_separation_days", "max_signals", "incidental_deg", "tc_deg",
                    "meanfield_half_width", "meanfield_n_min", "gp_half_width", "gp_n_min", "gp_n_starts",
                    "gp_cell_step", "knot_spacing", "lambda_lo", "lambda_hi", "lambda_n", "grid_nd",
                    "grid_nt", "threads"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.baseline_lo < self.baseline_hi <= self.signal_lo < self.signal_hi):
            raise ValueError("pairing windows must be ordered baseline_lo < baseline_hi <= signal_lo < signal_hi")
        if not self.lambda_lo < self.lambda_hi:
            raise ValueError("lambda_lo must be below lambda_hi")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.lambda_tolerance < 1:
            raise ValueError("lambda_tolerance must be >= 1")
        for lo, hi in self.crosstrack_bands + self.time_bins:
            if not lo < hi:
                raise ValueError(f"interval ({lo}, {hi}) is not ordered")
        self.level_indices()

    @property
    def variance_floor(self) -> float:
        return math.exp(self.log_variance_floor)

    @property
    def months(self) -> tuple:
        return tuple(int(m) for m in self.gp_months.replace(",", " ").split())

    def level_indices(self) -> list[int]:
        if self.levels.strip().lower() == "all":
            return list(range(len(LEVEL_NAMES)))
        names = [v.strip().upper() for v in self.levels.replace(",", " ").split()]
        bad = [n for n in names if n not in LEVEL_NAMES]
        if bad:
            raise ValueError(f"unknown levels {bad}")
        return sorted(LEVEL_NAMES.index(n) for n in set(names))

    def pairing_kwargs(self) -> dict:
        return dict(radius=self.pair_radius_deg, min_sep=self.lineage_separation_days,
                    max_signals=self.max_signals, deg=self.incidental_deg,
                    baseline_window=(self.baseline_lo, self.baseline_hi),
                    signal_window=(self.signal_lo, self.signal_hi))

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    # ------------------------------------------------------------ text form

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("crosstrack_bands", "time_bins"):
                v = _fmt_intervals(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {n}: unknown key {key!r}")
            kw[key] = _convert(key, types[key], value)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def load(cls, path, **overrides) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def parse_value(key, value):
    """Convert the text form of one entry to its typed value."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    if key not in types:
        raise ValueError(f"unknown config key {key!r}")
    return _convert(key, types[key], value)


def _convert(key, typ, value):
    if key in ("crosstrack_bands", "time_bins"):
        return _intervals(value)
    if typ == "bool":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value
