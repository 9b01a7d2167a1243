"""numba execution engine for plan-described hooks.

Mirrors :func:`aisc.interp.step` instruction for instruction; the equivalence
is enforced by tests that run every kernel and technique through both paths
and compare final states and statistics bit for bit.
"""
import math

import numpy as np

from aisc._accel import njit
from aisc.isa import OPCODES, OPCODE_BY_CODE, Category, Kind, WIDTH_MANTISSA
from aisc.interp import MachineState, RunResult, RunStats, Status, _decode

_C = {m: op.code for m, op in OPCODES.items()}
HALT, BR = _C["HALT"], _C["BR"]
BEQ, BNE, BLT, BGE = _C["BEQ"], _C["BNE"], _C["BLT"], _C["BGE"]
FBEQ, FBNE, FBLT, FBGE = _C["FBEQ"], _C["FBNE"], _C["FBLT"], _C["FBGE"]
IADD, ISUB, IMUL, IDIV = _C["IADD"], _C["ISUB"], _C["IMUL"], _C["IDIV"]
IAND, IOR, IXOR, ISHL, ISHR = _C["IAND"], _C["IOR"], _C["IXOR"], _C["ISHL"], _C["ISHR"]
LD, ST = _C["LD"], _C["ST"]
FADD, FSUB, FMUL, FDIV, FMOV, FRCP = (_C[m] for m in ("FADD", "FSUB", "FMUL", "FDIV", "FMOV", "FRCP"))
FLD, FST, ITOF, FTOI = _C["FLD"], _C["FST"], _C["ITOF"], _C["FTOI"]
NOPS = len(OPCODES)

_WIDTH_INDEX = {64: 0, 32: 1, 16: 2}
# native view: bits discarded per width index
_NATIVE_DISCARD = np.array([52 - WIDTH_MANTISSA[w] for w in (64, 32, 16)], dtype=np.int64)

ST_HALTED, ST_BUDGET, ST_TRAP = 0, 1, 2
TRAP_NAMES = {1: "divide-by-zero", 2: "oob", 3: "pc-out-of-range", 4: "fp-to-int"}

MAP_NONE, MAP_DISCARD, MAP_ROUND = 0, 1, 2
DIV_NONE, DIV_RCP12, DIV_NR = 0, 1, 2

_EXPM = np.int64(0x7FF0000000000000)


@njit(inline="always")
def _discard(x, k, buf, bb):
    if k == 0:
        return x
    buf[0] = x
    b = bb[0]
    if (b & _EXPM) == _EXPM:
        return x
    bb[0] = b & ~((np.int64(1) << k) - 1)
    return buf[0]


@njit(inline="always")
def _round_away(x):
    if not math.isfinite(x):
        return x
    t = np.trunc(x)
    if abs(x - t) >= 0.5:
        t += math.copysign(1.0, x)
    return math.copysign(t, x)


@njit(inline="always")
def _view(wi, x, mapmode, mapbits, intercept, buf, bb):
    x = _discard(x, _NATIVE_DISCARD[wi], buf, bb)
    if intercept:
        mode = mapmode[wi]
        if mode == MAP_DISCARD:
            x = _discard(x, mapbits[wi], buf, bb)
        elif mode == MAP_ROUND:
            x = _round_away(x)
    return x


@njit
def mul_to_add(a, b, cap):
    """Returns (value, additions, cap_exceeded); see transforms.expand_mul_to_add."""
    if not (math.isfinite(a) and math.isfinite(b)):
        return a * b, 0, False
    if abs(a) <= abs(b):
        msrc = a
        c = b
    else:
        msrc = b
        c = a
    m = _round_away(abs(msrc))
    neg = math.copysign(1.0, a) * math.copysign(1.0, b) < 0
    if m > cap:
        return a * b, 0, True
    if m == 0.0:
        return (-0.0 if neg else 0.0), 0, False
    cabs = abs(c)
    s = cabs
    n = int(m)
    for _ in range(n - 1):
        s += cabs
    return (-s if neg else s), n - 1, False


@njit
def div_emulate(dividend, divisor, refine):
    buf = np.empty(1)
    bb = buf.view(np.int64)
    x0 = _discard(1.0 / divisor, 40, buf, bb)
    if refine and math.isfinite(x0) and x0 != 0.0:
        t = divisor * x0
        t = t * x0
        u = x0 + x0
        x0 = u - t
    return x0 * dividend


@njit(nogil=True, error_model="numpy")
def execute(op, dst, s0, s1, s2, imm, hasimm, wid, target, cat, fpk,
            drop, mapmode, mapbits, recount, mulcap, divmode,
            ir, fr, mem, pc, budget, cat_counts, op_counts, extra_cat, extra_op, misc):
    """Run until HALT/trap/budget.  Returns (status, pc, halted)."""
    n = op.shape[0]
    fmem = mem.view(np.float64)
    nmem = mem.shape[0]
    buf = np.empty(1)
    bb = buf.view(np.int64)
    counted = 0
    while True:
        if counted >= budget:
            return ST_BUDGET, pc, False
        if pc < 0 or pc >= n:
            misc[3] = 3
            return ST_TRAP, pc, False
        o = op[pc]
        c = cat[pc]
        npc = pc + 1
        k = fpk[pc]
        if k == 0:
            # control
            if o == HALT:
                cat_counts[c] += 1
                op_counts[o] += 1
                return ST_HALTED, npc, True
            elif o == BR:
                npc = target[pc]
            elif o >= FBEQ and o <= FBGE:
                a = fr[s0[pc]]
                b = fr[s1[pc]]
                if o == FBEQ:
                    t = a == b
                elif o == FBNE:
                    t = a != b
                elif o == FBLT:
                    t = a < b
                else:
                    t = a >= b
                if t:
                    npc = target[pc]
            else:
                ia = ir[s0[pc]]
                ib = imm[pc] if hasimm[pc] else ir[s1[pc]]
                if o == BEQ:
                    t = ia == ib
                elif o == BNE:
                    t = ia != ib
                elif o == BLT:
                    t = ia < ib
                else:
                    t = ia >= ib
                if t:
                    npc = target[pc]
        elif k == 1:
            # integer alu / memory
            if o == ST:
                addr = ir[s1[pc]] + imm[pc]
                if addr < 0 or addr >= nmem:
                    misc[3] = 2
                    return ST_TRAP, pc, False
                mem[addr] = ir[s0[pc]]
            else:
                ia = ir[s0[pc]]
                ib = imm[pc] if hasimm[pc] else ir[s1[pc]]
                if o == LD:
                    addr = ia + ib
                    if addr < 0 or addr >= nmem:
                        misc[3] = 2
                        return ST_TRAP, pc, False
                    ri = mem[addr]
                elif o == IADD:
                    ri = ia + ib
                elif o == ISUB:
                    ri = ia - ib
                elif o == IMUL:
                    ri = ia * ib
                elif o == IDIV:
                    if ib == 0:
                        misc[3] = 1
                        return ST_TRAP, pc, False
                    qa = -ia if ia < 0 else ia
                    qb = -ib if ib < 0 else ib
                    q = qa // qb
                    ri = -q if (ia < 0) != (ib < 0) else q
                elif o == IAND:
                    ri = ia & ib
                elif o == IOR:
                    ri = ia | ib
                elif o == IXOR:
                    ri = ia ^ ib
                elif o == ISHL:
                    ri = ia << (ib & 63)
                else:
                    ri = ia >> (ib & 63)
                if dst[pc] != 0:
                    ir[dst[pc]] = ri
        else:
            intercept = c != 0
            if intercept:
                if drop[pc]:
                    misc[0] += 1
                    pc = npc
                    continue
                c = recount[c]
            wi = wid[pc]
            if k == 2:
                # fp alu
                a = _view(wi, fr[s0[pc]], mapmode, mapbits, intercept, buf, bb)
                b = 0.0
                if o != FMOV and o != FRCP:
                    b = _view(wi, fr[s1[pc]], mapmode, mapbits, intercept, buf, bb)
                if intercept and o == FMUL and mulcap >= 0:
                    r, adds, over = mul_to_add(a, b, mulcap)
                    misc[1] += 1
                    if over:
                        misc[2] += 1
                    if adds > 0:
                        extra_op[FADD] += adds
                        extra_cat[c] += adds
                        counted += adds
                    fr[dst[pc]] = _view(wi, r, mapmode, mapbits, intercept, buf, bb)
                    pc = npc
                    continue
                if intercept and o == FDIV and divmode != DIV_NONE:
                    r = div_emulate(a, b, divmode == DIV_NR)
                    misc[1] += 1
                    extra_op[FRCP] += 1
                    if divmode == DIV_NR:
                        extra_op[FMUL] += 3
                        extra_op[FADD] += 1
                        extra_op[FSUB] += 1
                        extra_cat[c] += 6
                        counted += 6
                    else:
                        extra_op[FMUL] += 1
                        extra_cat[c] += 2
                        counted += 2
                    fr[dst[pc]] = _view(wi, r, mapmode, mapbits, intercept, buf, bb)
                    pc = npc
                    continue
                if o == FADD:
                    r = a + b
                elif o == FSUB:
                    r = a - b
                elif o == FMUL:
                    r = a * b
                elif o == FDIV:
                    r = a / b
                elif o == FMOV:
                    r = a
                else:
                    r = _discard(1.0 / a, 40, buf, bb)
                fr[dst[pc]] = _view(wi, r, mapmode, mapbits, intercept, buf, bb)
            elif k == 3:
                # fp memory
                if o == FLD:
                    addr = ir[s0[pc]] + (imm[pc] if hasimm[pc] else ir[s1[pc]])
                    if addr < 0 or addr >= nmem:
                        misc[3] = 2
                        return ST_TRAP, pc, False
                    v = _view(wi, fmem[addr], mapmode, mapbits, intercept, buf, bb)
                    fr[dst[pc]] = _view(wi, v, mapmode, mapbits, intercept, buf, bb)
                else:
                    addr = ir[s1[pc]] + imm[pc]
                    if addr < 0 or addr >= nmem:
                        misc[3] = 2
                        return ST_TRAP, pc, False
                    v = _view(wi, fr[s0[pc]], mapmode, mapbits, intercept, buf, bb)
                    fmem[addr] = _view(wi, v, mapmode, mapbits, intercept, buf, bb)
            else:
                # fp conversion
                if o == ITOF:
                    fr[dst[pc]] = _view(wi, float(ir[s0[pc]]), mapmode, mapbits, intercept, buf, bb)
                else:
                    v = _view(wi, fr[s0[pc]], mapmode, mapbits, intercept, buf, bb)
                    if not (math.isfinite(v) and v >= -9.223372036854775808e18 and v < 9.223372036854775808e18):
                        misc[3] = 4
                        return ST_TRAP, pc, False
                    if dst[pc] != 0:
                        ir[dst[pc]] = np.int64(v)
        cat_counts[c] += 1
        op_counts[o] += 1
        counted += 1
        pc = npc


_KIND_CODE = {
    Kind.CONTROL: 0,
    Kind.INT_ALU: 1,
    Kind.INT_MEM: 1,
    Kind.FP_ALU: 2,
    Kind.FP_MEM: 3,
    Kind.FP_CVT: 4,
}


def encode(program):
    """Flat int64 arrays describing ``program`` (cached on the program)."""
    cached = program.__dict__.get("_encoded")
    if cached is not None:
        return cached
    cats, targets = _decode(program)
    n = len(program.instructions)
    arr = {name: np.zeros(n, dtype=np.int64) for name in
           ("op", "dst", "s0", "s1", "s2", "imm", "hasimm", "wid", "target", "cat", "fpk")}
    for i, ins in enumerate(program.instructions):
        arr["op"][i] = ins.opcode.code
        arr["dst"][i] = ins.dst if ins.dst is not None else 0
        srcs = list(ins.srcs) + [0, 0, 0]
        arr["s0"][i], arr["s1"][i], arr["s2"][i] = srcs[:3]
        arr["imm"][i] = ins.imm if ins.imm is not None else 0
        arr["hasimm"][i] = ins.imm is not None
        arr["wid"][i] = _WIDTH_INDEX.get(ins.width, 0)
        arr["target"][i] = targets[i]
        arr["cat"][i] = int(cats[i])
        arr["fpk"][i] = _KIND_CODE[ins.opcode.kind]
    program.__dict__["_encoded"] = arr
    return arr


def plan_arrays(program, plan):
    n = len(program.instructions)
    drop = np.zeros(n, dtype=np.bool_)
    for sid in plan.drop:
        drop[sid] = True
    mapmode = np.zeros(3, dtype=np.int64)
    mapbits = np.zeros(3, dtype=np.int64)
    for width, (mode, bits) in plan.width_maps.items():
        wi = _WIDTH_INDEX[width]
        mapmode[wi] = MAP_DISCARD if mode == "discard" else MAP_ROUND
        mapbits[wi] = bits
    recount = np.arange(len(Category), dtype=np.int64)
    for src, dst in plan.recount.items():
        recount[int(src)] = int(dst)
    mulcap = -1 if plan.mul_cap is None else int(plan.mul_cap)
    divmode = {None: DIV_NONE, "rcp12": DIV_RCP12, "nr": DIV_NR}[plan.div]
    return drop, mapmode, mapbits, recount, mulcap, divmode


def run_plan(program, image, plan, budget):
    from aisc.interp import new_state

    state = new_state(program, image)
    enc = encode(program)
    drop, mapmode, mapbits, recount, mulcap, divmode = plan_arrays(program, plan)
    ir = np.array(state.iregs, dtype=np.int64)
    fr = np.array(state.fregs, dtype=np.float64)
    mem = np.asarray(image, dtype=np.int64).copy()
    cat_counts = np.zeros(len(Category), dtype=np.int64)
    extra_cat = np.zeros(len(Category), dtype=np.int64)
    op_counts = np.zeros(NOPS, dtype=np.int64)
    extra_op = np.zeros(NOPS, dtype=np.int64)
    misc = np.zeros(4, dtype=np.int64)
    status, pc, halted = execute(
        enc["op"], enc["dst"], enc["s0"], enc["s1"], enc["s2"], enc["imm"], enc["hasimm"],
        enc["wid"], enc["target"], enc["cat"], enc["fpk"],
        drop, mapmode, mapbits, recount, mulcap, divmode,
        ir, fr, mem, state.pc, budget, cat_counts, op_counts, extra_cat, extra_op, misc,
    )
    final = MachineState(mem, int(pc))
    final.iregs = [int(v) for v in ir]
    final.fregs = [float(v) for v in fr]
    final.halted = bool(halted)
    stats = RunStats()
    for c in Category:
        stats.dynamic_counts[c] = int(cat_counts[int(c)])
        stats.emulation_extra[c] = int(extra_cat[int(c)])
    for code in range(NOPS):
        m = OPCODE_BY_CODE[code].mnemonic
        if op_counts[code]:
            stats.opcode_counts[m] = int(op_counts[code])
        if extra_op[code]:
            stats.emulated_ops[m] = int(extra_op[code])
    stats.dropped_dynamic = int(misc[0])
    stats.emulated_instances = int(misc[1])
    stats.cap_exceeded = int(misc[2])
    stats._counted = stats.total_dynamic
    if status == ST_HALTED:
        return RunResult(Status.HALTED, stats, final)
    if status == ST_BUDGET:
        return RunResult(Status.BUDGET_EXCEEDED, stats, final)
    return RunResult(Status.TRAP, stats, final, TRAP_NAMES[int(misc[3])])
