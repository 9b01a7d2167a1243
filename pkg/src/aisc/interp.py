"""Deterministic interpreter with approximation hooks and dynamic statistics.

:func:`step` is the reference semantics and accepts arbitrary Python hooks.
:func:`run` uses it directly unless the hooks were built from a
:class:`HookPlan` (everything :mod:`aisc.transforms` produces), in which case
the numba engine in :mod:`aisc._engine` executes the same semantics over
flat arrays.  ``AISC_DISABLE_JIT=1`` or ``run(..., jit=False)`` forces the
reference path.
"""
from __future__ import annotations

import enum
import math
from array import array
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from aisc import _accel
from aisc.isa import Category, Kind, Program, STACK_REG, classify, narrow
from aisc.numerics import ieee_div, rcp12

_I64_MIN = -(1 << 63)
_U64 = (1 << 64) - 1


def wrap64(x):
    return ((x - _I64_MIN) & _U64) + _I64_MIN


def image_from_values(values) -> np.ndarray:
    """Build a memory image (int64 bit patterns) from ints and floats."""
    image = np.zeros(len(values), dtype=np.int64)
    fview = image.view(np.float64)
    for i, v in enumerate(values):
        if isinstance(v, (float, np.floating)):
            fview[i] = v
        else:
            image[i] = v
    return image


class Trap(Exception):
    """Raised by :func:`step`; ``run`` turns it into a TRAP status."""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


class Status(enum.Enum):
    HALTED = "halted"
    BUDGET_EXCEEDED = "budget-exceeded"
    TRAP = "trap"


class MachineState:
    """Registers, memory and pc.

    Memory is an ``array('q')`` of bit patterns with a float64 memoryview
    over the same buffer, so LD/FLD reinterpret words without copying.
    """

    __slots__ = ("pc", "iregs", "fregs", "mem", "fmem", "halted")

    def __init__(self, image, pc=0):
        self.pc = pc
        self.iregs = [0] * 32
        self.fregs = [0.0] * 32
        self.mem = array("q", np.asarray(image, dtype=np.int64).tobytes())
        self.fmem = memoryview(self.mem).cast("B").cast("d")
        self.halted = False

    def memory_bits(self) -> np.ndarray:
        return np.frombuffer(self.mem.tobytes(), dtype=np.int64).copy()

    def memory_floats(self) -> np.ndarray:
        return self.memory_bits().view(np.float64)

    def fregs_bits(self):
        return np.asarray(self.fregs, dtype=np.float64).view(np.int64)

    def same_as(self, other: "MachineState") -> bool:
        """Bit-level equality of the full architectural state."""
        return (
            self.pc == other.pc
            and self.halted == other.halted
            and self.iregs == other.iregs
            and np.array_equal(self.fregs_bits(), other.fregs_bits())
            and self.mem.tobytes() == other.mem.tobytes()
        )


@dataclass
class RunStats:
    dynamic_counts: dict = field(default_factory=lambda: {c: 0 for c in Category})
    opcode_counts: Counter = field(default_factory=Counter)
    dropped_dynamic: int = 0
    emulation_extra: dict = field(default_factory=lambda: {c: 0 for c in Category})
    emulated_ops: Counter = field(default_factory=Counter)
    emulated_instances: int = 0
    cap_exceeded: int = 0
    # running total_dynamic, kept so the budget check stays O(1)
    _counted: int = field(default=0, repr=False, compare=False)

    @property
    def total_dynamic(self):
        return sum(self.dynamic_counts.values()) + sum(self.emulation_extra.values())

    def category_total(self, cat):
        return self.dynamic_counts[cat] + self.emulation_extra[cat]

    def mnemonic_total(self, mnemonic):
        """Executed plus substituted instances of ``mnemonic``."""
        return self.opcode_counts.get(mnemonic, 0) + self.emulated_ops.get(mnemonic, 0)

    def as_dict(self):
        return {
            "dynamic_counts": {c.label: n for c, n in self.dynamic_counts.items()},
            "emulation_extra": {c.label: n for c, n in self.emulation_extra.items()},
            "opcode_counts": dict(sorted(self.opcode_counts.items())),
            "emulated_ops": dict(sorted(self.emulated_ops.items())),
            "dropped_dynamic": self.dropped_dynamic,
            "emulated_instances": self.emulated_instances,
            "cap_exceeded": self.cap_exceeded,
            "total_dynamic": self.total_dynamic,
        }

    def __eq__(self, other):
        if not isinstance(other, RunStats):
            return NotImplemented
        return self.as_dict() == other.as_dict()


@dataclass
class RunResult:
    status: Status
    stats: RunStats
    final_state: MachineState
    trap_reason: str | None = None

    @property
    def halted(self):
        return self.status is Status.HALTED


@dataclass(frozen=True)
class Emulated:
    """What an ``op_emulator`` returns for one dynamic instruction."""

    value: float
    substitutes: Mapping[str, int]
    cap_exceeded: bool = False


@dataclass(frozen=True)
class HookPlan:
    """Array-friendly description of a hook set, runnable by the numba engine.

    ``width_maps`` maps an operand width to ``("discard", k)`` or
    ``("round", 0)``; ``mul_cap`` enables MUL-to-ADD emulation; ``div`` is
    ``None``, ``"rcp12"`` or ``"nr"``.
    """

    width_maps: Mapping[int, tuple[str, int]] = field(default_factory=dict)
    drop: frozenset = frozenset()
    recount: Mapping[Category, Category] = field(default_factory=dict)
    mul_cap: int | None = None
    div: str | None = None

    @property
    def is_identity(self):
        return not (self.width_maps or self.drop or self.recount or self.mul_cap is not None or self.div)


@dataclass(frozen=True)
class ExecHooks:
    """Interception points; only FP-kind, non-Critical instructions reach them.

    ``op_emulator(mnemonic, width, operands) -> Emulated`` is consulted for
    mnemonics listed in ``emulates``.  ``recount`` reassigns the accounting
    category of intercepted instructions (and their substitutes).
    """

    operand_map: Callable[[int, float], float] | None = None
    should_drop: Callable[[int], bool] | None = None
    op_emulator: Callable[[str, int, tuple], Emulated] | None = None
    emulates: frozenset = frozenset()
    recount: Mapping[Category, Category] = field(default_factory=dict)
    plan: HookPlan | None = None

    @property
    def is_empty(self):
        return self.operand_map is None and self.should_drop is None and self.op_emulator is None and not self.recount


NO_HOOKS = ExecHooks()


def _decode(program: Program):
    cached = program.__dict__.get("_decoded")
    if cached is None:
        cached = (
            tuple(classify(i) for i in program.instructions),
            tuple(program.labels[i.label] if i.label else -1 for i in program.instructions),
        )
        program.__dict__["_decoded"] = cached
    return cached


def new_state(program: Program, image=None) -> MachineState:
    if image is None:
        image = program.initial_image()
    state = MachineState(image, program.entry)
    if "stack" in program.symbols:
        state.iregs[STACK_REG] = program.symbols["stack"][0]
    return state


def _int_op(op, a, b):
    if op == "IADD":
        return wrap64(a + b)
    if op == "ISUB":
        return wrap64(a - b)
    if op == "IMUL":
        return wrap64(a * b)
    if op == "IDIV":
        if b == 0:
            raise Trap("divide-by-zero")
        q = abs(a) // abs(b)
        return wrap64(-q if (a < 0) != (b < 0) else q)
    if op == "IAND":
        return a & b
    if op == "IOR":
        return a | b
    if op == "IXOR":
        return a ^ b
    if op == "ISHL":
        return wrap64(a << (b & 63))
    if op == "ISHR":
        return a >> (b & 63)
    raise AssertionError(op)  # pragma: no cover


def _fp_op(op, a, b):
    if op == "FADD":
        return a + b
    if op == "FSUB":
        return a - b
    if op == "FMUL":
        return a * b
    return ieee_div(a, b)


def step(state: MachineState, program: Program, hooks: ExecHooks = NO_HOOKS, stats: RunStats | None = None) -> MachineState:
    """Execute (or drop) exactly one dynamic instruction in place."""
    if state.halted:
        raise RuntimeError("machine is halted")
    if stats is None:
        stats = RunStats()
    cats, targets = _decode(program)
    pc = state.pc
    if not 0 <= pc < len(program.instructions):
        raise Trap("pc-out-of-range")
    ins = program.instructions[pc]
    cat = cats[pc]
    kind = ins.opcode.kind
    op = ins.opcode.mnemonic
    ir = state.iregs
    fr = state.fregs
    next_pc = pc + 1

    if kind is Kind.CONTROL:
        if op == "HALT":
            state.halted = True
        elif op == "BR":
            next_pc = targets[pc]
        elif op[0] == "F":
            a = fr[ins.srcs[0]]
            b = fr[ins.srcs[1]]
            if _compare(op[2:], a, b):
                next_pc = targets[pc]
        else:
            a = ir[ins.srcs[0]]
            b = ins.imm if ins.imm is not None else ir[ins.srcs[1]]
            if _compare(op[1:], a, b):
                next_pc = targets[pc]
    elif kind is Kind.INT_ALU:
        a = ir[ins.srcs[0]]
        b = ins.imm if ins.imm is not None else ir[ins.srcs[1]]
        r = _int_op(op, a, b)
        if ins.dst:
            ir[ins.dst] = r
    elif kind is Kind.INT_MEM:
        if op == "LD":
            addr = ir[ins.srcs[0]] + (ins.imm if ins.imm is not None else ir[ins.srcs[1]])
            _check_addr(state, addr)
            if ins.dst:
                ir[ins.dst] = state.mem[addr]
        else:
            addr = ir[ins.srcs[1]] + ins.imm
            _check_addr(state, addr)
            state.mem[addr] = ir[ins.srcs[0]]
    else:
        intercept = cat is not Category.CRITICAL
        if intercept:
            if hooks.should_drop is not None and hooks.should_drop(ins.static_id):
                stats.dropped_dynamic += 1
                state.pc = next_pc
                return state
            if hooks.recount:
                cat = hooks.recount.get(cat, cat)
        w = ins.width
        omap = hooks.operand_map if intercept else None

        if kind is Kind.FP_ALU:
            a = narrow(w, fr[ins.srcs[0]])
            if omap is not None:
                a = omap(w, a)
            if op == "FMOV" or op == "FRCP":
                operands = (a,)
            else:
                b = narrow(w, fr[ins.srcs[1]])
                if omap is not None:
                    b = omap(w, b)
                operands = (a, b)
            if intercept and op in hooks.emulates:
                em = hooks.op_emulator(op, w, operands)
                r = em.value
                stats.emulated_instances += 1
                if em.cap_exceeded:
                    stats.cap_exceeded += 1
                for m, n in em.substitutes.items():
                    if n:
                        stats.emulated_ops[m] += n
                        stats.emulation_extra[cat] += n
                        stats._counted += n
                r = narrow(w, r)
                if omap is not None:
                    r = omap(w, r)
                fr[ins.dst] = r
                state.pc = next_pc
                return state
            if op == "FMOV":
                r = a
            elif op == "FRCP":
                r = rcp12(a)
            else:
                r = _fp_op(op, a, operands[1])
            r = narrow(w, r)
            if omap is not None:
                r = omap(w, r)
            fr[ins.dst] = r
        elif kind is Kind.FP_MEM:
            if op == "FLD":
                addr = ir[ins.srcs[0]] + (ins.imm if ins.imm is not None else ir[ins.srcs[1]])
                _check_addr(state, addr)
                v = narrow(w, state.fmem[addr])
                if omap is not None:
                    v = omap(w, v)
                v = narrow(w, v)
                if omap is not None:
                    v = omap(w, v)
                fr[ins.dst] = v
            else:
                addr = ir[ins.srcs[1]] + ins.imm
                _check_addr(state, addr)
                v = narrow(w, fr[ins.srcs[0]])
                if omap is not None:
                    v = omap(w, v)
                v = narrow(w, v)
                if omap is not None:
                    v = omap(w, v)
                state.fmem[addr] = v
        else:
            if op == "ITOF":
                v = narrow(w, float(ir[ins.srcs[0]]))
                if omap is not None:
                    v = omap(w, v)
                fr[ins.dst] = v
            else:
                v = narrow(w, fr[ins.srcs[0]])
                if omap is not None:
                    v = omap(w, v)
                if not math.isfinite(v) or not -(2.0**63) <= v < 2.0**63:
                    raise Trap("fp-to-int")
                if ins.dst:
                    ir[ins.dst] = int(v)

    stats.dynamic_counts[cat] += 1
    stats.opcode_counts[op] += 1
    stats._counted += 1
    state.pc = next_pc
    return state


def _compare(cond, a, b):
    if cond == "EQ":
        return a == b
    if cond == "NE":
        return a != b
    if cond == "LT":
        return a < b
    return a >= b


def _check_addr(state, addr):
    if not 0 <= addr < len(state.mem):
        raise Trap("oob")


def run(
    program: Program,
    image=None,
    hooks: ExecHooks = NO_HOOKS,
    budget: int = 10_000_000,
    jit: bool | None = None,
) -> RunResult:
    """Execute from the entry point until HALT, a trap, or ``budget`` dynamic instructions."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if image is None:
        image = program.initial_image()
    use_jit = _accel.USE_JIT if jit is None else (jit and _accel.HAVE_NUMBA)
    plan = hooks.plan if hooks.plan is not None else (HookPlan() if hooks.is_empty else None)
    if use_jit and plan is not None:
        from aisc import _engine

        return _engine.run_plan(program, image, plan, budget)

    state = new_state(program, image)
    stats = RunStats()
    try:
        while not state.halted:
            if stats._counted >= budget:
                return RunResult(Status.BUDGET_EXCEEDED, stats, state)
            step(state, program, hooks, stats)
    except Trap as trap:
        return RunResult(Status.TRAP, stats, state, trap.reason)
    return RunResult(Status.HALTED, stats, state)


def read_output(state: MachineState, region: tuple[int, int]) -> np.ndarray:
    """Words ``[base, base+length)`` reinterpreted as binary64."""
    base, length = region
    if length < 0 or base < 0 or base + length > len(state.mem):
        raise IndexError(f"region {region} outside memory of {len(state.mem)} words")
    return np.array(state.fmem[base:base + length], dtype=np.float64)
