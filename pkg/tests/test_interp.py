import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aisc.interp import (
    Emulated,
    ExecHooks,
    HookPlan,
    RunStats,
    Status,
    new_state,
    read_output,
    run,
    step,
)
from aisc.isa import Category, assemble
from aisc.kernels import KERNEL_NAMES, generate_input, load_kernel, reference_output
from aisc.transforms import Technique, make_technique


def test_halt_only(jit):
    r = run(assemble("HALT"), budget=10, jit=jit)
    assert r.status is Status.HALTED and r.stats.total_dynamic == 1
    assert r.final_state.pc == 1


def test_infinite_loop_hits_budget(jit):
    r = run(assemble("l: BR l"), budget=1000, jit=jit)
    assert r.status is Status.BUDGET_EXCEEDED
    assert r.stats.total_dynamic == 1000


def test_budget_must_be_positive():
    with pytest.raises(ValueError):
        run(assemble("HALT"), budget=0)


def test_step_examples():
    p = assemble("IADD r1, r0, #5\nFDIV.64 f1, f2, f3\nHALT")
    s = new_state(p)
    s.fregs[2] = 1.0
    step(s, p)
    assert s.iregs[1] == 5 and s.pc == 1
    step(s, p)
    assert s.fregs[1] == math.inf and s.pc == 2


def test_dropped_fmul_keeps_destination():
    p = assemble("FMUL.64 f1, f2, f3\nHALT")
    s = new_state(p)
    s.fregs[1:4] = [9.0, 2.0, 3.0]
    stats = RunStats()
    step(s, p, ExecHooks(should_drop=lambda sid: sid == 0), stats)
    assert s.fregs[1] == 9.0 and stats.dropped_dynamic == 1 and s.pc == 1
    assert stats.total_dynamic == 0


INT_PROGRAM = """
.data m 8
.data stack 2
    IADD r1, r0, #-7
    IDIV r2, r1, #2          ; -3 (toward zero)
    IMUL r3, r1, r1          ; 49
    ISHL r4, r3, #2          ; 196
    ISHR r5, r1, #1          ; -4 (arithmetic)
    IXOR r6, r4, #255
    IOR  r7, r0, #12
    IAND r8, r7, #10
    ISUB r9, r0, r1
    IADD r0, r0, #3          ; writes to r0 are discarded
    ST   r3, r0, #m+2
    LD   r10, r0, #m+2
    ST   r9, r31, #0
    LD   r11, r31, #0
    BGE  r1, #0, skip
    IADD r12, r0, #1
skip: BLT r0, #1, out
    IADD r12, r0, #99
out: HALT
"""


def test_integer_semantics(jit):
    r = run(assemble(INT_PROGRAM), jit=jit)
    assert r.status is Status.HALTED
    ir = r.final_state.iregs
    assert ir[0] == 0
    assert ir[2] == -3 and ir[3] == 49 and ir[4] == 196 and ir[5] == -4
    assert ir[6] == 196 ^ 255 and ir[7] == 12 and ir[8] == 8 and ir[9] == 7
    assert ir[10] == 49 and ir[11] == 7 and ir[12] == 1
    assert r.stats.dynamic_counts[Category.CRITICAL] == 2 + 2 + 1  # stack mem + branches + halt


def test_integer_wraps(jit):
    p = assemble("IADD r1, r0, #1\nISHL r1, r1, #63\nISUB r2, r1, #1\nHALT")
    ir = run(p, jit=jit).final_state.iregs
    assert ir[1] == -(2**63) and ir[2] == 2**63 - 1


@pytest.mark.parametrize(
    "src,reason",
    [
        ("IDIV r1, r1, r0\nHALT", "divide-by-zero"),
        (".data m 2\nLD r1, r0, #2\nHALT", "oob"),
        (".data m 2\nISUB r1, r0, #1\nST r1, r1, #0\nHALT", "oob"),
        ("IADD r1, r0, #1", "pc-out-of-range"),
        ("FDIV.64 f1, f1, f0\nFTOI r1, f1\nHALT", None),
    ],
)
def test_traps(src, reason, jit):
    if reason is None:
        with pytest.raises(Exception):
            assemble(src)
        src = "FDIV.64 f1, f1, f0\nFTOI.64 r1, f1\nHALT"
        reason = "fp-to-int"
    r = run(assemble(src), jit=jit)
    assert r.status is Status.TRAP and r.trap_reason == reason


def test_fp_semantics_and_widths(jit):
    src = """
    .data c 4
    .init c 0 1.0
    .init c 1 3.0
    .init c 2 0.1
    .init c 3 -2.5
        FLD.64 f1, r0, #c
        FLD.64 f2, r0, #c+1
        FDIV.64 f3, f1, f2
        FDIV.32 f4, f1, f2
        FDIV.16 f5, f1, f2
        FRCP.64 f6, f2
        FLD.32 f7, r0, #c+2
        FST.16 f7, r0, #c+2
        FLD.64 f8, r0, #c+3
        FTOI.64 r1, f8
        ITOF.64 f9, r1
        FSUB.64 f10, f0, f8
        FMOV.64 f11, f10
        HALT
    """
    r = run(assemble(src), jit=jit)
    fr = r.final_state.fregs
    assert fr[3] == 1 / 3
    assert fr[4] == pytest.approx(1 / 3, rel=2**-20) and fr[4] != 1 / 3
    assert fr[5] == 0.328125  # 1.0101b x 2^-2: 1/3 cut to 4 mantissa bits
    assert abs(fr[6] * 3 - 1) <= 2**-11
    assert r.final_state.memory_floats()[2] == 0.09765625
    assert r.final_state.iregs[1] == -2 and fr[9] == -2.0
    assert fr[11] == 2.5
    mix = r.stats.dynamic_counts
    assert mix[Category.FP32] == 2 and mix[Category.FP16] == 2


def test_fst16_narrows_memory(jit):
    src = ".data c 1\n.init c 0 0.1\nFLD.64 f1, r0, #c\nFST.16 f1, r0, #c\nHALT"
    r = run(assemble(src), jit=jit)
    assert r.final_state.memory_floats()[0] == 0.09765625  # 1.1001b x 2^-4


def test_read_output():
    p = assemble(".data m 6\n.init m 4 1.5\n.init m 5 2.5\nHALT")
    r = run(p)
    assert read_output(r.final_state, (0, 0)).size == 0
    assert list(read_output(r.final_state, (4, 2))) == [1.5, 2.5]
    with pytest.raises(IndexError):
        read_output(r.final_state, (5, 2))


def test_newton_native_is_sqrt():
    spec = load_kernel("newton_sqrt")
    img = generate_input(spec, params={"values": [2.0]})
    out = reference_output(spec, img)
    assert out[0] == pytest.approx(math.sqrt(2), rel=1e-12)
    img = generate_input(spec)
    x = img.view(np.float64)[spec.program().address("x"):][:32]
    assert np.allclose(reference_output(spec, img), np.sqrt(x), rtol=1e-12, atol=0)


def test_kmeans_centroids_match_oracle():
    from aisc.kernels.oracles import kmeans

    spec = load_kernel("kmeans")
    p = spec.program()
    img = generate_input(spec)
    r = run(p, img)
    cent = read_output(r.final_state, p.symbols["cent"])
    pts = img.view(np.float64)[p.symbols["pts"][0]:][:128].reshape(-1, 2)
    _, oracle_cent, _ = kmeans(pts)
    assert np.allclose(cent, oracle_cent.ravel(), rtol=1e-9, atol=0)


# --- hook semantics -----------------------------------------------------------

HOOK_PROGRAM = """
.data c 3
.data stack 2
.init c 0 1.75
.init c 1 3.0
    FLD.64 f1, r0, #c
    FLD.64 f2, r0, #c+1
    FMUL.64 f3, f1, f2
    FST.64 f3, r0, #c+2
    FST.64 f3, r31, #0      ; stack access: Critical, never hooked
    FLD.64 f4, r31, #0
    IADD r1, r0, #1
    FBGE f3, f1, end
end: HALT
"""


def test_hook_confinement_and_order():
    calls = []

    def omap(width, value):
        calls.append(value)
        return math.floor(value)

    p = assemble(HOOK_PROGRAM)
    r = run(p, hooks=ExecHooks(operand_map=omap), jit=False)
    s = r.stats
    hooked_fp = s.dynamic_counts[Category.FP64]
    # FLD: source + result; FMUL: 2 sources + result; FST: source + result
    assert hooked_fp == 4 and len(calls) == 2 + 2 + 3 + 2
    assert r.final_state.fregs[3] == 3.0  # floor(1.75) * 3
    assert r.final_state.memory_floats()[2] == 3.0


def test_recount_and_emulation_accounting():
    p = assemble(HOOK_PROGRAM)

    def emu(op, width, operands):
        return Emulated(-1.0, {"FADD": 2, "FSUB": 1})

    hooks = ExecHooks(op_emulator=emu, emulates=frozenset({"FMUL"}), recount={Category.FP64: Category.FP16})
    r = run(p, hooks=hooks, jit=False)
    s = r.stats
    assert r.final_state.fregs[3] == -1.0
    assert s.dynamic_counts[Category.FP64] == 0
    assert s.dynamic_counts[Category.FP16] == 3  # two FLD + one FST (FMUL replaced)
    assert s.emulation_extra[Category.FP16] == 3
    assert s.emulated_instances == 1 and s.opcode_counts["FMUL"] == 0
    assert s.total_dynamic == sum(s.dynamic_counts.values()) + 3


@given(st.sets(st.integers(0, 6)))
def test_drop_accounting_straight_line(dropped):
    src = """
    .data c 4
    .init c 0 1.5
    .init c 1 2.0
        FLD.64 f1, r0, #c
        FLD.64 f2, r0, #c+1
        FADD.64 f3, f1, f2
        FMUL.64 f4, f3, f2
        FDIV.64 f5, f4, f1
        FSUB.64 f6, f5, f3
        FST.64 f6, r0, #c+2
        HALT
    """
    p = assemble(src)
    native = run(p, jit=False).stats
    r = run(p, hooks=ExecHooks(should_drop=dropped.__contains__), jit=False).stats
    assert native.total_dynamic == r.total_dynamic + r.dropped_dynamic


def test_drop_never_reaches_critical_or_integer():
    p = assemble(HOOK_PROGRAM)
    seen = []
    r = run(p, hooks=ExecHooks(should_drop=lambda sid: seen.append(sid) or True), jit=False)
    assert set(seen) == {0, 1, 2, 3}
    assert r.stats.dynamic_counts[Category.CRITICAL] == 4


# --- engine equivalence ------------------------------------------------------

TECHNIQUES = [
    "native", "dptosp", "dptohp", "sptohp", "dptoint", "sptoint", "dropdiv",
    "drop:t=0.2,seed=11", "drop:t=1.0,seed=1", "multoadd", "multoadd:cap=3", "divtomul12", "divtomulnr",
]


@pytest.mark.parametrize("technique", TECHNIQUES)
@pytest.mark.parametrize("kernel", KERNEL_NAMES)
def test_engine_matches_reference_interpreter(kernel, technique):
    spec = load_kernel(kernel)
    p = spec.program()
    img = generate_input(spec, seed=5)
    outcome = make_technique(p, Technique.parse(technique))
    budget = 3 * spec.native_budget
    a = run(p, img, outcome.hooks, budget=budget, jit=True)
    b = run(p, img, outcome.hooks, budget=budget, jit=False)
    assert a.status == b.status and a.trap_reason == b.trap_reason
    assert a.stats == b.stats
    assert a.final_state.same_as(b.final_state)


def test_engine_handles_32_and_16_bit_programs():
    src = """
    .data c 3
    .init c 0 1.3
    .init c 1 0.7
        FLD.32 f1, r0, #c
        FLD.16 f2, r0, #c+1
        FMUL.32 f3, f1, f2
        FDIV.16 f4, f1, f2
        FADD.32 f5, f3, f4
        FST.32 f5, r0, #c+2
        HALT
    """
    p = assemble(src)
    for t in TECHNIQUES:
        hooks = make_technique(p, Technique.parse(t)).hooks
        a, b = run(p, hooks=hooks, jit=True), run(p, hooks=hooks, jit=False)
        assert a.stats == b.stats and a.final_state.same_as(b.final_state), t


def test_image_not_mutated(jit):
    spec = load_kernel("kmeans")
    img = generate_input(spec)
    before = img.copy()
    run(spec.program(), img, jit=jit)
    assert np.array_equal(img, before)


def test_custom_callables_use_reference_path():
    p = assemble(HOOK_PROGRAM)
    hooks = ExecHooks(operand_map=lambda w, v: v, plan=None)
    r = run(p, hooks=hooks, jit=True)
    assert r.status is Status.HALTED


def test_plan_identity():
    assert HookPlan().is_identity
    assert not HookPlan(div="nr").is_identity
