"""Kernel x technique experiment matrix with energy/accuracy reporting.

Every cell assembles a kernel, applies one technique, runs it under a budget
proportional to the native instruction count, and compares energy and output
against the cached native run of the same input.  Failures (budget, traps,
emulation cap, the energy filter) are recorded, never raised.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aisc.interp import RunResult, Status, read_output, run
from aisc.isa import Category
from aisc.kernels import BUDGET_MULT, KERNEL_NAMES, KernelSpec, generate_input, load_kernel
from aisc.models import DEFAULT_EPI, EpiTable, accuracy_loss, combined_relative, energy, random_baseline
from aisc.transforms import Technique, Variant, make_technique, slug

ENERGY_LIMIT = 1.4
DROP_THRESHOLDS = (0.01, 0.04, 0.07, 0.10)
BASE_TECHNIQUES = ("native", "dptosp", "dptohp", "dptoint", "dropdiv")
EMULATION_TECHNIQUES = ("multoadd", "divtomul12", "divtomulnr")

MIX_COLUMNS = [
    "kernel", "technique", "status", "critical", "integer", "fp64", "fp32", "fp16",
    "dropped", "emulation_extra", "total_dynamic", "rel_instr",
]
TRADEOFF_COLUMNS = [
    "kernel", "technique", "metric", "accuracy_loss", "random_baseline",
    "rel_energy_var", "rel_energy_combined", "rel_instr",
]


def derive_seed(*parts) -> int:
    """Stable unsigned 64-bit seed from arbitrary parts (blake2b)."""
    text = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class Config:
    kernels: tuple = KERNEL_NAMES
    techniques: tuple = ("all",)
    seed: int = 0
    epi: EpiTable = DEFAULT_EPI
    fixed_fraction: float = 0.0
    budget_mult: float = float(BUDGET_MULT)
    replicates: int = 3
    jobs: int = 1
    jit: bool | None = None

    def __post_init__(self):
        if not 0.0 <= self.fixed_fraction < 1.0:
            raise ValueError("fixed fraction must lie in [0, 1)")
        if self.budget_mult < 1.0:
            raise ValueError("budget multiplier must be >= 1")
        if self.replicates < 1 or self.jobs < 1:
            raise ValueError("replicates and jobs must be positive")


@dataclass
class ExperimentRecord:
    kernel: str
    technique: str
    status: str
    mix: dict
    dropped_dynamic: int
    emulation_extra: int
    total_dynamic: int
    rel_instr: float
    rel_energy_var: float
    rel_energy_combined: float
    accuracy_loss: float | None
    random_baseline: float
    metric: str
    threshold: float | None = None
    seed: int | None = None
    replicate: int | None = None
    opcode_counts: dict = field(default_factory=dict)
    detail: str = ""
    output: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def record_id(self):
        return f"{self.kernel}@{self.technique}"

    def to_json(self):
        d = asdict(self)
        d.pop("output")
        d["id"] = self.record_id
        return d


@dataclass
class NativeRun:
    spec: KernelSpec
    image: np.ndarray
    result: RunResult
    reference: np.ndarray
    baseline: float


# --- technique expansion -----------------------------------------------------


@dataclass(frozen=True)
class Cell:
    kernel: str
    technique: Technique
    replicate: int | None = None


ALL_TECHNIQUES = BASE_TECHNIQUES + tuple(f"drop:t={t!r}" for t in DROP_THRESHOLDS) + EMULATION_TECHNIQUES


def expand_cells(config: Config) -> list[Cell]:
    """One cell per (kernel, technique); seedless drops get ``replicates`` derived seeds."""
    requested = []
    for text in config.techniques:
        requested += ["all"] if text == "all" else [text]
    cells = []
    for kernel in config.kernels:
        seen = set()
        for text in requested:
            for item in ALL_TECHNIQUES if text == "all" else (text,):
                for cell in _cells_for(kernel, item, config):
                    key = str(cell.technique)
                    if key not in seen:
                        seen.add(key)
                        cells.append(cell)
    return cells


def _cells_for(kernel, text, config):
    name, _, params = text.partition(":")
    if name.strip().lower() == "drop" and "seed=" not in params:
        t = float(params.split("=", 1)[1]) if "t=" in params else None
        if t is None:
            raise ValueError(f"drop needs a threshold: {text!r}")
        return [
            Cell(kernel, Technique(Variant.RANDOM_DROP, t=t, seed=derive_seed(config.seed, kernel, f"drop:t={t!r}", r)), r)
            for r in range(config.replicates)
        ]
    return [Cell(kernel, Technique.parse(text))]


# --- running -----------------------------------------------------------------

class NativeCache:
    """Native run per kernel, computed once and shared read-only."""

    def __init__(self, config: Config):
        self.config = config
        self._runs: dict[str, NativeRun] = {}
        self._lock = threading.Lock()

    def get(self, kernel: str) -> NativeRun:
        with self._lock:
            if kernel not in self._runs:
                self._runs[kernel] = self._compute(kernel)
            return self._runs[kernel]

    def _compute(self, kernel):
        spec = load_kernel(kernel)
        image = generate_input(spec)
        budget = int(math.ceil(self.config.budget_mult * spec.native_budget))
        result = run(spec.program(), image, budget=budget, jit=self.config.jit)
        if result.status is not Status.HALTED:
            raise RuntimeError(f"native {kernel} did not halt: {result.status.value}")
        ref = read_output(result.final_state, spec.output_region())
        baseline = random_baseline(ref, spec.metric, derive_seed(self.config.seed, kernel, "baseline"), spec.value_range, spec.shape)
        return NativeRun(spec, image, result, ref, baseline)


def _mix(stats):
    return {c.label: stats.category_total(c) for c in Category}


def run_experiment(kernel: str, technique, config: Config = Config(), cache: NativeCache | None = None, replicate=None) -> ExperimentRecord:
    tech = technique if isinstance(technique, Technique) else Technique.parse(technique)
    native = (cache or NativeCache(config)).get(kernel)
    spec = native.spec
    outcome = make_technique(spec.program(), tech)
    budget = int(math.ceil(config.budget_mult * native.result.stats.total_dynamic))
    result = run(outcome.program, native.image, outcome.hooks, budget=budget, jit=config.jit)
    stats = result.stats

    base_energy = energy(native.result.stats, config.epi)
    rel_var = energy(stats, config.epi) / base_energy
    rel_instr = stats.total_dynamic / native.result.stats.total_dynamic
    output = None
    loss = None
    detail = outcome.notes
    if result.status is Status.BUDGET_EXCEEDED:
        status = "budget-exceeded"
    elif result.status is Status.TRAP:
        status = "trap"
        detail = f"{detail}; trap: {result.trap_reason}"
    elif stats.cap_exceeded:
        status = "cap-exceeded"
        detail = f"{detail}; {stats.cap_exceeded} multiplications beyond the add cap"
    elif rel_var > ENERGY_LIMIT:
        status = "infeasible-energy"
    else:
        status = "ok"
    if result.status is Status.HALTED:
        output = read_output(result.final_state, spec.output_region())
        if status == "ok":
            loss = accuracy_loss(spec.metric, output, native.reference, spec.value_range, spec.shape)
    return ExperimentRecord(
        kernel=kernel,
        technique=str(tech),
        status=status,
        mix=_mix(stats),
        dropped_dynamic=stats.dropped_dynamic,
        emulation_extra=sum(stats.emulation_extra.values()),
        total_dynamic=stats.total_dynamic,
        rel_instr=rel_instr,
        rel_energy_var=rel_var,
        rel_energy_combined=combined_relative(rel_var, config.fixed_fraction),
        accuracy_loss=loss,
        random_baseline=native.baseline,
        metric=spec.metric,
        threshold=tech.t,
        seed=tech.seed,
        replicate=replicate,
        opcode_counts=dict(sorted(stats.opcode_counts.items())),
        detail=detail,
        output=output,
    )


def run_matrix(config: Config) -> list[ExperimentRecord]:
    """Every configured cell, in a deterministic order regardless of ``jobs``."""
    cells = expand_cells(config)
    cache = NativeCache(config)
    for kernel in dict.fromkeys(c.kernel for c in cells):
        cache.get(kernel)

    def work(cell):
        return run_experiment(cell.kernel, cell.technique, config, cache, cell.replicate)

    if config.jobs == 1:
        return [work(c) for c in cells]
    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        return list(pool.map(work, cells))


# --- outputs -----------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def mix_csv(records) -> str:
    rows = []
    for r in records:
        row = {"kernel": r.kernel, "technique": r.technique, "status": r.status}
        row.update({c.label.lower(): r.mix[c.label] for c in Category})
        row.update(dropped=r.dropped_dynamic, emulation_extra=r.emulation_extra, total_dynamic=r.total_dynamic, rel_instr=r.rel_instr)
        rows.append(row)
    return _csv_text(MIX_COLUMNS, rows)


def tradeoff_csv(records) -> str:
    rows = [
        {c: getattr(r, c) for c in TRADEOFF_COLUMNS}
        for r in records
        if r.status == "ok"
    ]
    return _csv_text(TRADEOFF_COLUMNS, rows)


def report_json(records, config: Config) -> str:
    doc = {
        "config": {
            "kernels": list(config.kernels),
            "techniques": list(config.techniques),
            "seed": config.seed,
            "epi": asdict(config.epi),
            "fixed_fraction": config.fixed_fraction,
            "budget_mult": config.budget_mult,
            "replicates": config.replicates,
            "energy_limit": ENERGY_LIMIT,
        },
        "records": [r.to_json() for r in records],
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def to_pgm(values, shape, value_range) -> bytes:
    """Binary 8-bit PGM of ``values`` scaled from ``value_range`` to 0..255."""
    h, w = shape
    lo, hi = value_range
    v = np.asarray(values, dtype=np.float64).reshape(h, w)
    with np.errstate(invalid="ignore", over="ignore"):
        scaled = np.rint((v - lo) / (hi - lo) * 255.0)
    pixels = np.clip(np.nan_to_num(scaled, nan=0.0, posinf=255.0, neginf=0.0), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Decode a binary PGM (maxval <= 255) into a uint8 array."""
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    pos += 1
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w)


def emit_image(record: ExperimentRecord, path) -> Path:
    spec = load_kernel(record.kernel)
    if not spec.is_image:
        raise ValueError(f"{record.kernel} output is not an image")
    if record.output is None:
        raise ValueError(f"{record.record_id} has no output ({record.status})")
    path = Path(path)
    path.write_bytes(to_pgm(record.output, spec.shape, spec.value_range))
    return path


def write_reports(records, config: Config, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in (
        ("mix.csv", mix_csv(records)),
        ("tradeoff.csv", tradeoff_csv(records)),
        ("report.json", report_json(records, config)),
    ):
        (out / name).write_text(text)
        written.append(out / name)
    for r in records:
        if load_kernel(r.kernel).is_image and r.output is not None:
            img_dir = out / "images"
            img_dir.mkdir(exist_ok=True)
            written.append(emit_image(r, img_dir / f"{r.kernel}@{slug(r.technique)}.pgm"))
    return written
