"""Approximation techniques and engine lowering.

Breadth narrows FP operands, Depth drops FP instructions, and Breadth+Depth
replaces an instruction with an approximate sequence of simpler ones.  Every
technique is expressed as a :class:`~aisc.interp.HookPlan`; the Python
callables in :class:`~aisc.interp.ExecHooks` are derived from that plan.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from aisc.interp import NO_HOOKS, Emulated, ExecHooks, HookPlan
from aisc.isa import (
    WIDTHS,
    Category,
    EngineProfile,
    Kind,
    Policy,
    Program,
    check_engine_support,
    classify,
)
from aisc.numerics import (
    discard_mantissa_bits,
    rcp12,
    round_to_nearest_int,
    splitmix_uniforms,
)

__all__ = [
    "Variant",
    "Technique",
    "TransformOutcome",
    "discard_mantissa_bits",
    "round_to_nearest_int",
    "rcp12",
    "expand_mul_to_add",
    "div_to_mul",
    "make_breadth_hooks",
    "drop_div",
    "random_static_drop",
    "make_technique",
    "lower_for_engine",
]

DEFAULT_ADD_CAP = 4096


class Variant(enum.Enum):
    NATIVE = "native"
    DPTOSP = "dptosp"
    DPTOHP = "dptohp"
    SPTOHP = "sptohp"
    DPTOINT = "dptoint"
    SPTOINT = "sptoint"
    DROPDIV = "dropdiv"
    RANDOM_DROP = "drop"
    MULTOADD = "multoadd"
    DIVTOMUL12 = "divtomul12"
    DIVTOMUL_NR = "divtomulnr"


BREADTH = frozenset({Variant.DPTOSP, Variant.DPTOHP, Variant.SPTOHP, Variant.DPTOINT, Variant.SPTOINT})
DEPTH = frozenset({Variant.DROPDIV, Variant.RANDOM_DROP})
BREADTH_DEPTH = frozenset({Variant.MULTOADD, Variant.DIVTOMUL12, Variant.DIVTOMUL_NR})

# (width -> operand rule, accounting recount) per Breadth variant.  Discard
# counts are on the binary64 pattern: a width-32 operand already lacks the low
# 32 mantissa bits, so dropping 16 more of its bits means discarding 48.
_BREADTH_PLANS = {
    Variant.DPTOSP: ({64: ("discard", 32)}, {Category.FP64: Category.FP32}),
    Variant.DPTOHP: ({64: ("discard", 48)}, {Category.FP64: Category.FP16}),
    Variant.SPTOHP: ({32: ("discard", 48)}, {Category.FP32: Category.FP16}),
    Variant.DPTOINT: ({64: ("round", 0)}, {Category.FP64: Category.INTEGER}),
    Variant.SPTOINT: ({32: ("round", 0)}, {Category.FP32: Category.INTEGER}),
}

_DIV_SUBSTITUTES = {
    Variant.DIVTOMUL12: {"FRCP": 1, "FMUL": 1},
    Variant.DIVTOMUL_NR: {"FRCP": 1, "FMUL": 3, "FADD": 1, "FSUB": 1},
}


class TechniqueError(ValueError):
    pass


class LoweringError(ValueError):
    """Raised when a program cannot be mapped onto an engine profile."""


@dataclass(frozen=True)
class Technique:
    variant: Variant
    t: float | None = None
    seed: int | None = None
    add_cap: int | None = None

    def __post_init__(self):
        if self.variant is Variant.RANDOM_DROP:
            if self.t is None or self.seed is None:
                raise TechniqueError("random drop needs a threshold and a seed")
            if not 0.0 <= self.t <= 1.0:
                raise TechniqueError(f"threshold {self.t} outside [0, 1]")
            if not 0 <= self.seed < 1 << 64:
                raise TechniqueError("seed must be an unsigned 64-bit integer")
        elif self.t is not None or self.seed is not None:
            raise TechniqueError(f"{self.variant.value} takes no threshold or seed")
        if self.variant is Variant.MULTOADD:
            if self.add_cap is None:
                object.__setattr__(self, "add_cap", DEFAULT_ADD_CAP)
            if self.add_cap < 1:
                raise TechniqueError("add cap must be positive")
        elif self.add_cap is not None:
            raise TechniqueError(f"{self.variant.value} takes no add cap")

    @classmethod
    def parse(cls, text: str) -> "Technique":
        """Parse a CLI technique string such as ``drop:t=0.03,seed=7``."""
        name, _, params = text.strip().partition(":")
        name = name.strip().lower().replace("_", "").replace(".", "")
        try:
            variant = Variant(name)
        except ValueError:
            raise TechniqueError(f"unknown technique {text!r}") from None
        kv = {}
        for part in filter(None, (p.strip() for p in params.split(","))):
            key, eq, value = part.partition("=")
            if not eq:
                raise TechniqueError(f"bad parameter {part!r} in {text!r}")
            kv[key.strip().lower()] = value.strip()
        try:
            if variant is Variant.RANDOM_DROP:
                extra = set(kv) - {"t", "seed"}
                if extra or len(kv) != 2:
                    raise TechniqueError(f"drop needs exactly t=<float>,seed=<u64>: {text!r}")
                return cls(variant, t=float(kv["t"]), seed=int(kv["seed"], 0))
            if variant is Variant.MULTOADD:
                if set(kv) - {"cap"}:
                    raise TechniqueError(f"multoadd only takes cap=<n>: {text!r}")
                return cls(variant, add_cap=int(kv["cap"], 0) if "cap" in kv else None)
        except ValueError as exc:
            if isinstance(exc, TechniqueError):
                raise
            raise TechniqueError(f"bad parameter value in {text!r}") from None
        if kv:
            raise TechniqueError(f"{variant.value} takes no parameters: {text!r}")
        return cls(variant)

    def __str__(self):
        if self.variant is Variant.RANDOM_DROP:
            return f"drop:t={self.t!r},seed={self.seed}"
        if self.variant is Variant.MULTOADD and self.add_cap != DEFAULT_ADD_CAP:
            return f"multoadd:cap={self.add_cap}"
        return self.variant.value


@dataclass(frozen=True)
class TransformOutcome:
    program: Program
    hooks: ExecHooks = NO_HOOKS
    dropped_static: tuple[int, ...] = ()
    notes: str = ""
    plan: HookPlan = field(default_factory=HookPlan)


# --- scalar operations -------------------------------------------------------


class MulToAdd(NamedTuple):
    result: float
    adds: int
    cap_exceeded: bool = False


def expand_mul_to_add(a: float, b: float, cap: int = DEFAULT_ADD_CAP) -> MulToAdd:
    """Multiply by repeated addition of the larger factor.

    The smaller-magnitude factor, rounded to the nearest integer ``m``, sets
    the number of copies; ``m`` copies take ``m - 1`` additions.  Beyond
    ``cap`` the exact product is returned and flagged.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        return MulToAdd(a * b, 0)
    multiplier, c = (a, b) if abs(a) <= abs(b) else (b, a)
    m = round_to_nearest_int(abs(multiplier))
    negative = math.copysign(1.0, a) * math.copysign(1.0, b) < 0
    if m > cap:
        return MulToAdd(a * b, 0, True)
    if m == 0:
        return MulToAdd(-0.0 if negative else 0.0, 0)
    c = abs(c)
    total = c
    for _ in range(int(m) - 1):
        total += c
    return MulToAdd(-total if negative else total, int(m) - 1)


def div_to_mul(dividend: float, divisor: float, variant=Variant.DIVTOMUL_NR):
    """Division through a 12-bit reciprocal, optionally refined once.

    Returns ``(result, substitutes)`` where ``substitutes`` counts the
    instructions that replace the division.  A zero or non-finite reciprocal
    skips refinement so that ``x / 0`` still yields a signed infinity.
    """
    variant = Variant(variant)
    if variant not in _DIV_SUBSTITUTES:
        raise TechniqueError(f"{variant.value} is not a division emulation")
    x = rcp12(divisor)
    if variant is Variant.DIVTOMUL_NR and math.isfinite(x) and x != 0.0:
        t = divisor * x
        t = t * x
        u = x + x
        x = u - t
    return x * dividend, dict(_DIV_SUBSTITUTES[variant])


# --- hooks -------------------------------------------------------------------


def hooks_from_plan(plan: HookPlan) -> ExecHooks:
    """Python callables implementing ``plan`` for the reference interpreter."""
    if plan.is_identity:
        return ExecHooks(plan=plan)
    maps = dict(plan.width_maps)
    operand_map = None
    if maps:
        def operand_map(width, value):
            rule = maps.get(width)
            if rule is None:
                return value
            if rule[0] == "discard":
                return discard_mantissa_bits(value, rule[1])
            return round_to_nearest_int(value)

    should_drop = plan.drop.__contains__ if plan.drop else None
    emulates = set()
    if plan.mul_cap is not None:
        emulates.add("FMUL")
    if plan.div is not None:
        emulates.add("FDIV")
    div_variant = Variant.DIVTOMUL_NR if plan.div == "nr" else Variant.DIVTOMUL12
    cap = plan.mul_cap

    def op_emulator(mnemonic, width, operands):
        if mnemonic == "FMUL":
            r = expand_mul_to_add(operands[0], operands[1], cap)
            return Emulated(r.result, {"FADD": r.adds}, r.cap_exceeded)
        value, subs = div_to_mul(operands[0], operands[1], div_variant)
        return Emulated(value, subs)

    return ExecHooks(
        operand_map=operand_map,
        should_drop=should_drop,
        op_emulator=op_emulator if emulates else None,
        emulates=frozenset(emulates),
        recount=dict(plan.recount),
        plan=plan,
    )


def _breadth_plan(variant):
    maps, recount = _BREADTH_PLANS[variant]
    return HookPlan(width_maps=dict(maps), recount=dict(recount))


def make_breadth_hooks(variant) -> ExecHooks:
    variant = Variant(variant)
    if variant not in BREADTH:
        raise TechniqueError(f"{variant.value} is not a Breadth technique")
    return hooks_from_plan(_breadth_plan(variant))


def _outcome(program, plan, dropped=(), notes=""):
    return TransformOutcome(program, hooks_from_plan(plan), tuple(dropped), notes, plan)


def drop_div(program: Program) -> TransformOutcome:
    dropped = [i.static_id for i in program.instructions if i.mnemonic == "FDIV"]
    return _outcome(
        program, HookPlan(drop=frozenset(dropped)), dropped, f"dropped {len(dropped)} static FDIV"
    )


def drop_candidates(program: Program) -> list[int]:
    """Static FP-arithmetic instructions eligible for random dropping."""
    return [
        i.static_id
        for i in program.instructions
        if i.kind is Kind.FP_ALU and classify(i) is not Category.CRITICAL
    ]


def random_static_drop(program: Program, t: float, seed: int) -> TransformOutcome:
    """Drop each candidate whose SplitMix64 draw (ascending static id) is below ``t``."""
    if not 0.0 <= t <= 1.0:
        raise TechniqueError(f"threshold {t} outside [0, 1]")
    candidates = drop_candidates(program)
    draws = splitmix_uniforms(seed, len(candidates))
    dropped = [sid for sid, r in zip(candidates, draws) if r < t]
    return _outcome(
        program,
        HookPlan(drop=frozenset(dropped)),
        dropped,
        f"dropped {len(dropped)} of {len(candidates)} FP arithmetic statics (t={t!r}, seed={seed})",
    )


def make_technique(program: Program, tech: Technique) -> TransformOutcome:
    v = tech.variant
    if v is Variant.NATIVE:
        return TransformOutcome(program, ExecHooks(plan=HookPlan()), (), "native")
    if v in BREADTH:
        return _outcome(program, _breadth_plan(v), notes=f"{v.value} operand narrowing")
    if v is Variant.DROPDIV:
        return drop_div(program)
    if v is Variant.RANDOM_DROP:
        return random_static_drop(program, tech.t, tech.seed)
    if v is Variant.MULTOADD:
        return _outcome(program, HookPlan(mul_cap=tech.add_cap), notes=f"FMUL as additions (cap {tech.add_cap})")
    div = "rcp12" if v is Variant.DIVTOMUL12 else "nr"
    return _outcome(program, HookPlan(div=div), notes=f"FDIV emulated ({v.value})")


# --- engine lowering ---------------------------------------------------------

_DIV_NEEDS = ("FRCP", "FMUL", "FADD", "FSUB")
_MUL_NEEDS = ("FADD",)
_NARROW_BITS = {(64, 32): 32, (64, 16): 48, (32, 16): 48}


def _emulatable(profile, mnemonic, width):
    if profile.supports(mnemonic, width):
        return True
    if mnemonic == "FDIV":
        return all(profile.supports(m, width) for m in _DIV_NEEDS)
    if mnemonic == "FMUL":
        return all(profile.supports(m, width) for m in _MUL_NEEDS)
    return False


def lower_for_engine(program: Program, profile: EngineProfile) -> TransformOutcome:
    """Map ``program`` onto ``profile`` according to the profile's policy."""
    missing = check_engine_support(program, profile)
    if not missing:
        return TransformOutcome(program, ExecHooks(plan=HookPlan()), (), f"runs natively on {profile.name}")
    listing = ", ".join(f"#{sid} {m}{'.' + str(w) if w else ''}" for sid, m, w in missing)
    if profile.policy is Policy.REJECT:
        raise LoweringError(f"{profile.name} lacks: {listing}")

    by_id = {i.static_id: i for i in program.instructions}
    protected = [sid for sid, _, _ in missing if classify(by_id[sid]) in (Category.CRITICAL, Category.INTEGER)]
    if protected:
        names = ", ".join(f"#{sid} {by_id[sid].mnemonic}" for sid in protected)
        raise LoweringError(f"not emulatable on {profile.name}: control/integer instructions {names}")

    if profile.policy is Policy.DROP:
        dropped = sorted(sid for sid, _, _ in missing)
        return _outcome(program, HookPlan(drop=frozenset(dropped)), dropped, f"dropped unsupported: {listing}")

    width_maps = {}
    recount = {}
    effective = {w: w for w in WIDTHS}
    for w in WIDTHS:
        ops_w = {i.mnemonic for i in program.instructions if i.width == w and classify(i) is not Category.CRITICAL}
        unsupported_w = {m for _, m, width in missing if width == w}
        if not unsupported_w or all(_emulatable(profile, m, w) for m in unsupported_w):
            continue
        for nw in (x for x in WIDTHS if x < w):
            if all(_emulatable(profile, m, nw) for m in ops_w):
                width_maps[w] = ("discard", _NARROW_BITS[(w, nw)])
                recount[Category.for_width(w)] = Category.for_width(nw)
                effective[w] = nw
                break
        else:
            bad = sorted(m for m in unsupported_w if not _emulatable(profile, m, w))
            raise LoweringError(f"not emulatable on {profile.name}: {', '.join(f'{m}.{w}' for m in bad)}")

    mul_cap = None
    div = None
    notes = [f"{w}->{effective[w]} bit narrowing" for w in sorted(width_maps, reverse=True)]
    for i in program.instructions:
        if not i.opcode.has_width or classify(i) is Category.CRITICAL:
            continue
        ew = effective[i.width]
        if profile.supports(i.mnemonic, ew):
            continue
        if i.mnemonic == "FDIV" and _emulatable(profile, "FDIV", ew):
            div = "nr"
        elif i.mnemonic == "FMUL" and _emulatable(profile, "FMUL", ew):
            mul_cap = DEFAULT_ADD_CAP
        else:
            raise LoweringError(f"not emulatable on {profile.name}: {i.mnemonic}.{ew}")
    if div:
        notes.append("FDIV via reciprocal + Newton-Raphson")
    if mul_cap is not None:
        notes.append("FMUL via additions")
    plan = HookPlan(width_maps=width_maps, recount=recount, mul_cap=mul_cap, div=div)
    return _outcome(program, plan, notes="; ".join(notes))


def technique_names() -> list[str]:
    return [v.value for v in Variant]


_SANITIZE = re.compile(r"[^A-Za-z0-9._-]+")


def slug(technique: str) -> str:
    """Filesystem-safe form of a technique string."""
    return _SANITIZE.sub("_", technique).strip("_")


def drop_fraction(program: Program, t: float, seeds) -> np.ndarray:
    """Dropped fraction of the candidates for each seed (vectorised draws)."""
    n = len(drop_candidates(program))
    return np.array([(splitmix_uniforms(s, n) < t).mean() for s in seeds])

