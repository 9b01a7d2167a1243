"""Energy accounting and accuracy metrics.

Energy is instruction count times energy-per-instruction (EPI), summed over
the accounting categories.  Accuracy losses are percentages in [0, 100].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from aisc.interp import RunStats
from aisc.isa import Category

METRICS = ("rel-l2", "ssim", "mismatch")
FIXED_FRACTION_PRESETS = {"penryn": 0.56, "haswell": 0.75}
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_KEY_ALIASES = {
    "fp64": "fp64",
    "fp32": "fp32",
    "fp16": "fp16",
    "int": "integer",
    "integer": "integer",
    "critical": "critical",
}


@dataclass(frozen=True)
class EpiTable:
    """Energy units per dynamic instruction of each category."""

    fp64: float = 2.0
    fp32: float = 1.0
    fp16: float = 0.5
    integer: float = 1.0
    critical: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"EPI for {f.name} must be a positive finite number, got {v!r}")
        if not self.fp16 < self.fp32 < self.fp64:
            raise ValueError("EPI must satisfy fp16 < fp32 < fp64")

    def __getitem__(self, cat: Category) -> float:
        return {
            Category.CRITICAL: self.critical,
            Category.INTEGER: self.integer,
            Category.FP64: self.fp64,
            Category.FP32: self.fp32,
            Category.FP16: self.fp16,
        }[Category(cat)]

    @classmethod
    def from_text(cls, text: str) -> "EpiTable":
        """Parse ``key=value`` lines (fp64, fp32, fp16, int, critical); ``#`` comments."""
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            key = key.strip().lower()
            if not eq or key not in _KEY_ALIASES:
                raise ValueError(f"line {lineno}: expected <fp64|fp32|fp16|int|critical>=<number>")
            name = _KEY_ALIASES[key]
            if name in values:
                raise ValueError(f"line {lineno}: duplicate key {key}")
            try:
                values[name] = float(value)
            except ValueError:
                raise ValueError(f"line {lineno}: bad number {value.strip()!r}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "EpiTable":
        return cls.from_text(Path(path).read_text())

    def to_text(self):
        return "".join(
            f"{key}={getattr(self, name)!r}\n"
            for key, name in (("fp64", "fp64"), ("fp32", "fp32"), ("fp16", "fp16"), ("int", "integer"), ("critical", "critical"))
        )


DEFAULT_EPI = EpiTable()


def energy(stats: RunStats, table: EpiTable = DEFAULT_EPI) -> float:
    """Variable energy of a run; substitutes count at their attributed category."""
    return float(sum(stats.category_total(c) * table[c] for c in Category))


def combined_relative(rel_var: float, f: float) -> float:
    if not 0.0 <= f < 1.0:
        raise ValueError(f"fixed fraction {f} outside [0, 1)")
    if rel_var < 0:
        raise ValueError("relative energy cannot be negative")
    return f + (1.0 - f) * rel_var


@dataclass(frozen=True)
class EnergyReport:
    variable_energy: float
    relative_variable: float
    combined_relative: float
    fixed_fraction: float


def energy_report(stats: RunStats, native: RunStats, table: EpiTable = DEFAULT_EPI, fixed_fraction: float = 0.0) -> EnergyReport:
    e = energy(stats, table)
    base = energy(native, table)
    rel = e / base if base > 0 else (1.0 if e == 0 else math.inf)
    return EnergyReport(e, rel, combined_relative(rel, fixed_fraction), fixed_fraction)


# --- accuracy ----------------------------------------------------------------


def _pair(out, ref):
    out = np.asarray(out, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if out.shape != ref.shape:
        raise ValueError(f"length mismatch: {out.size} vs {ref.size}")
    if out.size == 0:
        raise ValueError("empty output")
    return out, ref


def _clamp(loss):
    if not math.isfinite(loss):
        return 100.0
    return min(100.0, max(0.0, loss))


def rel_l2_loss(out, ref) -> float:
    """``100 * ||out - ref|| / ||ref||`` clamped to 100; non-finite output scores 100."""
    out, ref = _pair(out, ref)
    norm = float(np.linalg.norm(ref))
    if norm == 0.0:
        raise ValueError("reference is all zero")
    if not np.all(np.isfinite(out)):
        return 100.0
    with np.errstate(over="ignore", invalid="ignore"):
        return _clamp(100.0 * float(np.linalg.norm(out - ref)) / norm)


def ssim(a, b, value_range: float, shape=None) -> float:
    """Global structural similarity of two images with dynamic range ``value_range``.

    Images containing non-finite pixels score -1.
    """
    a, b = _pair(a, b)
    if shape is not None and int(np.prod(shape)) != a.size:
        raise ValueError(f"image size {a.size} does not match shape {tuple(shape)}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return -1.0
    c1 = (SSIM_K1 * value_range) ** 2
    c2 = (SSIM_K2 * value_range) ** 2
    with np.errstate(over="ignore", invalid="ignore"):
        mu_a, mu_b = a.mean(), b.mean()
        da, db = a - mu_a, b - mu_b
        var_a, var_b = (da * da).mean(), (db * db).mean()
        cov = (da * db).mean()
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        s = float(num / den)
    if not math.isfinite(s):
        return -1.0
    return max(-1.0, min(1.0, s))


def ssim_loss(out, ref, value_range: float, shape=None) -> float:
    return _clamp(100.0 * (1.0 - ssim(out, ref, value_range, shape)))


def mismatch_rate(out, ref) -> float:
    """Percentage of positions whose discrete label differs."""
    out, ref = _pair(out, ref)
    return _clamp(100.0 * float(np.count_nonzero(out != ref)) / out.size)


def accuracy_loss(metric: str, out, ref, value_range=None, shape=None) -> float:
    if metric == "rel-l2":
        return rel_l2_loss(out, ref)
    if metric == "ssim":
        lo, hi = value_range
        return ssim_loss(out, ref, hi - lo, shape)
    if metric == "mismatch":
        return mismatch_rate(out, ref)
    raise ValueError(f"unknown metric {metric!r}; expected one of {', '.join(METRICS)}")


def random_output(ref, metric: str, seed: int, value_range) -> np.ndarray:
    """Uniform random vector over ``value_range``; integer labels for ``mismatch``."""
    ref = np.asarray(ref, dtype=np.float64).ravel()
    lo, hi = value_range
    rng = np.random.default_rng(seed)
    if metric == "mismatch":
        return rng.integers(int(lo), int(hi), size=ref.size, endpoint=True).astype(np.float64)
    return rng.uniform(lo, hi, size=ref.size)


def random_baseline(ref, metric: str, seed: int, value_range, shape=None) -> float:
    """Close-to-worst-case loss: that of a seeded uniform random output."""
    out = random_output(ref, metric, seed, value_range)
    return accuracy_loss(metric, out, ref, value_range, shape)


@dataclass(frozen=True)
class AccuracyReport:
    metric: str
    loss_percent: float
    random_baseline_percent: float
