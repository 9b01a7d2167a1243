"""Shipped kernels: assembly sources, sidecar specs and seeded input generators.

A sidecar ``<name>.kspec`` holds ``key = value`` lines:

name, source, description, metric, output (data symbol), shape (``n`` or
``HxW``), range (``lo, hi`` of output values), convergence (prose),
native_budget (pinned native dynamic count at the default seed), seed
(default input seed) and ``param.<key>`` generator parameters.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from aisc.interp import Status, read_output, run
from aisc.isa import Program, assemble

KERNEL_NAMES = ("newton_sqrt", "kmeans", "power_iter", "srr_mini")


class KernelError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    name: str
    source: str
    metric: str
    output: str
    shape: tuple[int, ...]
    value_range: tuple[float, float]
    convergence: str
    native_budget: int
    seed: int = 1
    description: str = ""
    params: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def is_image(self):
        return len(self.shape) == 2

    @property
    def output_length(self):
        return int(np.prod(self.shape))

    def program(self) -> Program:
        return _program(self.source)

    def output_region(self) -> tuple[int, int]:
        base, size = self.program().symbols[self.output]
        if size != self.output_length:
            raise KernelError(f"{self.name}: output symbol holds {size} words, shape needs {self.output_length}")
        return base, size


def _parse_number(text):
    try:
        return int(text, 0)
    except ValueError:
        return float(text)


def parse_kspec(text: str) -> KernelSpec:
    raw = {}
    params = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise KernelError(f"kspec line {lineno}: expected key = value")
        key, value = key.strip(), value.strip()
        if key.startswith("param."):
            params[key[6:]] = _parse_number(value)
        else:
            raw[key] = value
    try:
        shape = tuple(int(s) for s in raw["shape"].lower().split("x"))
        lo, hi = (float(s) for s in raw["range"].split(","))
        return KernelSpec(
            name=raw["name"],
            source=raw["source"],
            metric=raw["metric"],
            output=raw["output"],
            shape=shape,
            value_range=(lo, hi),
            convergence=raw.get("convergence", ""),
            native_budget=int(raw["native_budget"]),
            seed=int(raw.get("seed", "1")),
            description=raw.get("description", ""),
            params=params,
        )
    except KeyError as exc:
        raise KernelError(f"kspec missing key {exc.args[0]!r}") from None


def _read(filename):
    return resources.files(__name__).joinpath(filename).read_text()


@functools.lru_cache(maxsize=None)
def _program(source: str) -> Program:
    return assemble(_read(source))


@functools.lru_cache(maxsize=None)
def load_kernel(name: str) -> KernelSpec:
    if name not in KERNEL_NAMES:
        raise KernelError(f"unknown kernel {name!r}; available: {', '.join(KERNEL_NAMES)}")
    return parse_kspec(_read(f"{name}.kspec"))


def all_kernels() -> list[KernelSpec]:
    return [load_kernel(n) for n in KERNEL_NAMES]


# --- input generation --------------------------------------------------------


def _put(image, program, symbol, values):
    base, size = program.symbols[symbol]
    values = np.asarray(values)
    if values.size != size:
        raise KernelError(f"{symbol}: expected {size} words, got {values.size}")
    if values.dtype.kind == "f":
        image.view(np.float64)[base:base + size] = values.ravel()
    else:
        image[base:base + size] = values.ravel().astype(np.int64)


def _gen_newton_sqrt(spec, p, rng):
    if "values" in p:
        x = np.resize(np.asarray(p["values"], dtype=np.float64), spec.output_length)
    else:
        x = rng.uniform(p["low"], p["high"], spec.output_length)
    return {"x": x, "conv": np.array([float(p["tol"])])}


def _gen_kmeans(spec, p, rng):
    n, k, hi = int(p["points"]), int(p["clusters"]), float(p["extent"])
    centers = rng.uniform(0.2 * hi, 0.8 * hi, size=(k, 2))
    which = rng.integers(0, k, size=n)
    pts = centers[which] + rng.normal(0.0, p["spread"], size=(n, 2))
    pts = np.clip(pts, 0.0, np.nextafter(hi, 0.0))
    return {"pts": pts.ravel(), "conv": np.array([int(p["threshold"])], dtype=np.int64)}


def _gen_power_iter(spec, p, rng):
    n = spec.output_length
    b = rng.uniform(-1.0, 1.0, size=(n, n))
    sym = (b + b.T) / 2.0
    u = rng.uniform(0.5, 1.0, size=n)
    w = float(p["dominance"])
    a = (1.0 - w) * sym + w * np.outer(u, u)
    v = np.zeros(n)
    v[0] = 1.0
    return {"a": a.ravel(), "v": v, "conv": np.array([float(p["tol"])])}


def scene(size, rng, noise):
    """Synthetic grayscale scene in [0, 255]: gradient, disc, bar and noise."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = 40.0 + 120.0 * xx / (size - 1)
    cy, cx = rng.uniform(0.3 * size, 0.7 * size, 2)
    r = rng.uniform(0.15 * size, 0.3 * size)
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 230.0
    row = int(rng.integers(1, size - 3))
    img[row:row + 2, 1:size // 2] = 15.0
    img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 255.0)


def degrade(hr, shifts):
    """Low-res frames: 2x2 box average of ``hr`` rolled by ``-(dy, dx)``."""
    frames = []
    for dy, dx in shifts:
        s = np.roll(hr, (-dy, -dx), axis=(0, 1))
        frames.append((s[0::2, 0::2] + s[0::2, 1::2] + s[1::2, 0::2] + s[1::2, 1::2]) / 4.0)
    return np.stack(frames)


SRR_SHIFTS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _gen_srr_mini(spec, p, rng):
    hr = scene(spec.shape[0], rng, float(p["noise"]))
    return {"lr": degrade(hr, SRR_SHIFTS).ravel()}


_GENERATORS = {
    "newton_sqrt": _gen_newton_sqrt,
    "kmeans": _gen_kmeans,
    "power_iter": _gen_power_iter,
    "srr_mini": _gen_srr_mini,
}


def generate_input(spec: KernelSpec, seed: int | None = None, params: dict | None = None) -> np.ndarray:
    """Deterministic memory image for ``spec``; ``params`` override sidecar parameters."""
    p = {**spec.params, **(params or {})}
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    program = spec.program()
    image = program.initial_image()
    for symbol, values in _GENERATORS[spec.name](spec, p, rng).items():
        _put(image, program, symbol, values)
    return image


# Generous guard against non-termination; every shipped kernel also has its
# own iteration cap, which 100x the pinned count comfortably covers.
BUDGET_MULT = 100


def reference_output(spec: KernelSpec, image, budget=None, jit=None) -> np.ndarray:
    """Output region after a hook-free run; raises :class:`KernelError` unless it halts."""
    result = run(spec.program(), image, budget=budget or BUDGET_MULT * spec.native_budget, jit=jit)
    if result.status is not Status.HALTED:
        raise KernelError(f"{spec.name} native run ended with {result.status.value} {result.trap_reason or ''}".strip())
    return read_output(result.final_state, spec.output_region())


def read_symbol(spec: KernelSpec, image, symbol, as_float=True) -> np.ndarray:
    base, size = spec.program().symbols[symbol]
    words = np.asarray(image, dtype=np.int64)[base:base + size]
    return words.view(np.float64).copy() if as_float else words.copy()
