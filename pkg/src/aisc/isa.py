"""The toy load-store ISA: opcodes, programs, text assembly and engine profiles.

Machine model: 32 integer registers ``r0``-``r31`` (``r0`` reads as zero,
``r31`` is the stack pointer), 32 FP registers ``f0``-``f31`` holding binary64
values, and a word-addressed memory of untyped 64-bit words.

FP instructions carry an operand width of 64, 32 or 16 bits.  Storage is always
binary64; a narrower width is a view of it with a shorter mantissa (see
:data:`WIDTH_MANTISSA`) and an untouched 11-bit exponent.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from aisc.numerics import MANTISSA_BITS, discard_mantissa_bits

NUM_REGS = 32
STACK_REG = 31
WIDTHS = (64, 32, 16)
# Mantissa bits kept by each operand width.  32 keeps 20 because dropping from
# 64 to 32 discards exactly 32 low bits; 16 keeps 4 (48 discarded).
WIDTH_MANTISSA = {64: 52, 32: 20, 16: 4}


class Kind(enum.Enum):
    CONTROL = "control"
    INT_ALU = "int-alu"
    INT_MEM = "int-mem"
    FP_ALU = "fp-alu"
    FP_MEM = "fp-mem"
    FP_CVT = "fp-cvt"

    @property
    def is_fp(self):
        return self in (Kind.FP_ALU, Kind.FP_MEM, Kind.FP_CVT)


class Category(enum.IntEnum):
    CRITICAL = 0
    INTEGER = 1
    FP64 = 2
    FP32 = 3
    FP16 = 4

    @property
    def label(self):
        return _CATEGORY_LABELS[self]

    @classmethod
    def for_width(cls, width):
        return {64: cls.FP64, 32: cls.FP32, 16: cls.FP16}[width]


_CATEGORY_LABELS = {
    Category.CRITICAL: "Critical",
    Category.INTEGER: "Integer",
    Category.FP64: "FP64",
    Category.FP32: "FP32",
    Category.FP16: "FP16",
}


@dataclass(frozen=True)
class Opcode:
    """An opcode and its operand signature.

    ``operands`` lists operand slots in textual order: ``d``/``D`` integer/FP
    destination, ``s``/``S`` integer/FP source, ``i`` integer source register
    or ``#immediate``, ``m`` mandatory immediate, ``L`` branch label.
    """

    mnemonic: str
    kind: Kind
    operands: str
    code: int

    @property
    def has_width(self):
        return self.kind.is_fp


_OPCODE_ROWS = [
    ("HALT", Kind.CONTROL, ""),
    ("BR", Kind.CONTROL, "L"),
    ("BEQ", Kind.CONTROL, "siL"),
    ("BNE", Kind.CONTROL, "siL"),
    ("BLT", Kind.CONTROL, "siL"),
    ("BGE", Kind.CONTROL, "siL"),
    ("FBEQ", Kind.CONTROL, "SSL"),
    ("FBNE", Kind.CONTROL, "SSL"),
    ("FBLT", Kind.CONTROL, "SSL"),
    ("FBGE", Kind.CONTROL, "SSL"),
    ("IADD", Kind.INT_ALU, "dsi"),
    ("ISUB", Kind.INT_ALU, "dsi"),
    ("IMUL", Kind.INT_ALU, "dsi"),
    ("IDIV", Kind.INT_ALU, "dsi"),
    ("IAND", Kind.INT_ALU, "dsi"),
    ("IOR", Kind.INT_ALU, "dsi"),
    ("IXOR", Kind.INT_ALU, "dsi"),
    ("ISHL", Kind.INT_ALU, "dsi"),
    ("ISHR", Kind.INT_ALU, "dsi"),
    ("LD", Kind.INT_MEM, "dsi"),
    ("ST", Kind.INT_MEM, "ssm"),
    ("FADD", Kind.FP_ALU, "DSS"),
    ("FSUB", Kind.FP_ALU, "DSS"),
    ("FMUL", Kind.FP_ALU, "DSS"),
    ("FDIV", Kind.FP_ALU, "DSS"),
    ("FMOV", Kind.FP_ALU, "DS"),
    ("FRCP", Kind.FP_ALU, "DS"),
    ("FLD", Kind.FP_MEM, "Dsi"),
    ("FST", Kind.FP_MEM, "Ssm"),
    ("ITOF", Kind.FP_CVT, "Ds"),
    ("FTOI", Kind.FP_CVT, "dS"),
]

OPCODES: dict[str, Opcode] = {
    m: Opcode(m, kind, ops, code) for code, (m, kind, ops) in enumerate(_OPCODE_ROWS)
}
OPCODE_BY_CODE = [OPCODES[row[0]] for row in _OPCODE_ROWS]
MEMORY_OPS = frozenset({"LD", "ST", "FLD", "FST"})


def all_opcode_widths():
    """Every (mnemonic, width) pair of the ISA; width is None for non-FP ops."""
    pairs = []
    for op in OPCODES.values():
        if op.has_width:
            pairs.extend((op.mnemonic, w) for w in WIDTHS)
        else:
            pairs.append((op.mnemonic, None))
    return pairs


def narrow(width, x):
    """Apply the native mantissa view of ``width`` to a binary64 value."""
    if width == 64:
        return x
    return discard_mantissa_bits(x, MANTISSA_BITS - WIDTH_MANTISSA[width])


class AsmError(ValueError):
    """Assembly failed; carries the 1-based line and column when known."""

    def __init__(self, message, line=None, column=None):
        where = f"line {line}" if line is not None else ""
        if column is not None:
            where += f", column {column}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Instruction:
    """One static instruction.

    For stores and compare-and-branch ops there is no destination; every
    register operand sits in ``srcs`` in textual order.
    """

    opcode: Opcode
    dst: int | None = None
    srcs: tuple[int, ...] = ()
    imm: int | None = None
    width: int | None = None
    label: str | None = None
    static_id: int = 0

    @property
    def mnemonic(self):
        return self.opcode.mnemonic

    @property
    def kind(self):
        return self.opcode.kind

    @property
    def key(self):
        """The (mnemonic, width) pair engine profiles reason about."""
        return (self.opcode.mnemonic, self.width)

    @property
    def base_reg(self):
        """Address base register of a memory instruction, else None."""
        if self.mnemonic in ("LD", "FLD"):
            return self.srcs[0]
        if self.mnemonic in ("ST", "FST"):
            return self.srcs[1]
        return None


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...] = ()
    labels: Mapping[str, int] = field(default_factory=dict)
    entry: int = 0
    data_size: int = 0
    symbols: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    inits: tuple[tuple[str, int, int | float], ...] = ()

    def __len__(self):
        return len(self.instructions)

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return (
            self.instructions == other.instructions
            and dict(self.labels) == dict(other.labels)
            and self.entry == other.entry
            and self.data_size == other.data_size
            and dict(self.symbols) == dict(other.symbols)
            and _inits_key(self.inits) == _inits_key(other.inits)
        )

    __hash__ = None

    def address(self, name, offset=0):
        base, size = self.symbols[name]
        if not 0 <= offset < max(size, 1):
            raise IndexError(f"{name}[{offset}] outside its {size} words")
        return base + offset

    def target(self, ins):
        return self.labels[ins.label]

    def initial_image(self):
        """Memory image with every ``.init`` word preloaded (int64 bit patterns)."""
        from aisc.interp import image_from_values

        image = image_from_values([0] * self.data_size)
        view = image.view("float64")
        for name, idx, value in self.inits:
            addr = self.address(name, idx)
            if isinstance(value, float):
                view[addr] = value
            else:
                image[addr] = value
        return image


def _inits_key(inits):
    from aisc.numerics import float_to_bits

    return tuple(
        (n, i, ("f", float_to_bits(v)) if isinstance(v, float) else ("i", v)) for n, i, v in inits
    )


# --- classification ----------------------------------------------------------


def classify(ins: Instruction) -> Category:
    """Category used for instruction mix and energy accounting."""
    kind = ins.opcode.kind
    if kind is Kind.CONTROL:
        return Category.CRITICAL
    if ins.mnemonic in MEMORY_OPS and ins.base_reg == STACK_REG:
        return Category.CRITICAL
    if kind in (Kind.INT_ALU, Kind.INT_MEM):
        return Category.INTEGER
    return Category.for_width(ins.width)


def static_mix(program: Program) -> dict[Category, int]:
    mix = {c: 0 for c in Category}
    for ins in program.instructions:
        mix[classify(ins)] += 1
    return mix


# --- assembler ---------------------------------------------------------------

_LABEL_RE = re.compile(r"^([A-Za-z_][\w.]*)\s*:")
_IDENT_RE = re.compile(r"^[A-Za-z_][\w.]*$")
_SYMREF_RE = re.compile(r"^([A-Za-z_]\w*)\s*(?:([+-])\s*(\d+))?$")


def _strip_comment(line):
    pos = line.find(";")
    return line if pos < 0 else line[:pos]


def _parse_int(text):
    return int(text, 0)


def _parse_value(text, line, col):
    t = text.strip()
    try:
        if re.fullmatch(r"[+-]?(0[xXbBoO][0-9a-fA-F_]+|\d+)", t):
            return int(t, 0)
        return float(t)
    except ValueError:
        raise AsmError(f"bad value {text!r}", line, col) from None


def assemble(source: str) -> Program:
    """Assemble text into a validated :class:`Program` (two passes)."""
    lines = source.splitlines()
    symbols: dict[str, tuple[int, int]] = {}
    labels: dict[str, int] = {}
    pending = []  # (lineno, col, mnemonic, width, operand strings)
    inits_raw = []
    data_size = 0

    for lineno, raw in enumerate(lines, 1):
        text = _strip_comment(raw)
        col0 = len(text) - len(text.lstrip())
        text = text.strip()
        while text:
            m = _LABEL_RE.match(text)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise AsmError(f"duplicate label {name!r}", lineno, col0 + 1)
            labels[name] = len(pending)
            text = text[m.end():].strip()
        if not text:
            continue
        if text.startswith("."):
            parts = text.split()
            if parts[0] == ".data":
                if len(parts) != 3 or not _IDENT_RE.match(parts[1]):
                    raise AsmError("expected '.data name size'", lineno, col0 + 1)
                if parts[1] in symbols:
                    raise AsmError(f"duplicate data symbol {parts[1]!r}", lineno, col0 + 1)
                try:
                    size = _parse_int(parts[2])
                except ValueError:
                    raise AsmError(f"bad size {parts[2]!r}", lineno, col0 + 1) from None
                if size < 0:
                    raise AsmError("negative data size", lineno, col0 + 1)
                symbols[parts[1]] = (data_size, size)
                data_size += size
            elif parts[0] == ".init":
                if len(parts) != 4:
                    raise AsmError("expected '.init name idx value'", lineno, col0 + 1)
                try:
                    idx = _parse_int(parts[2])
                except ValueError:
                    raise AsmError(f"bad index {parts[2]!r}", lineno, col0 + 1) from None
                inits_raw.append((lineno, parts[1], idx, _parse_value(parts[3], lineno, col0 + 1)))
            else:
                raise AsmError(f"unknown directive {parts[0]!r}", lineno, col0 + 1)
            continue
        head, _, rest = text.partition(" ")
        mnem, dot, wtext = head.partition(".")
        operands = [o.strip() for o in rest.split(",")] if rest.strip() else []
        pending.append((lineno, col0 + 1, mnem.upper(), wtext if dot else None, operands, col0 + len(head) + 2))

    inits = []
    for lineno, name, idx, value in inits_raw:
        if name not in symbols:
            raise AsmError(f"unknown data symbol {name!r}", lineno)
        if not 0 <= idx < symbols[name][1]:
            raise AsmError(f"index {idx} outside {name!r}", lineno)
        inits.append((name, idx, value))

    instructions = []
    for static_id, (lineno, col, mnem, wtext, operands, opcol) in enumerate(pending):
        instructions.append(
            _build_instruction(static_id, lineno, col, mnem, wtext, operands, opcol, labels, symbols)
        )
    for name, idx in labels.items():
        if idx > len(instructions):  # pragma: no cover - cannot happen by construction
            raise AsmError(f"label {name!r} out of range")
    return Program(tuple(instructions), labels, 0, data_size, symbols, tuple(inits))


def _reg(text, prefix, lineno, col):
    t = text.strip().lower()
    if not t.startswith(prefix) or not t[1:].isdigit():
        other = "integer" if prefix == "r" else "FP"
        raise AsmError(f"expected {other} register, got {text!r}", lineno, col)
    n = int(t[1:])
    if not 0 <= n < NUM_REGS:
        raise AsmError(f"register out of range: {text!r}", lineno, col)
    return n


def _imm(text, symbols, lineno, col):
    body = text.strip()[1:].strip()
    try:
        return int(body, 0)
    except ValueError:
        pass
    m = _SYMREF_RE.match(body)
    if not m or m.group(1) not in symbols:
        raise AsmError(f"bad immediate {text!r}", lineno, col)
    value = symbols[m.group(1)][0]
    if m.group(2):
        off = int(m.group(3))
        value += off if m.group(2) == "+" else -off
    return value


def _build_instruction(static_id, lineno, col, mnem, wtext, operands, opcol, labels, symbols):
    op = OPCODES.get(mnem)
    if op is None:
        raise AsmError(f"unknown mnemonic {mnem!r}", lineno, col)
    width = None
    if wtext is not None:
        if not op.has_width:
            raise AsmError(f"width suffix on non-FP opcode {mnem}", lineno, col)
        if wtext not in ("64", "32", "16"):
            raise AsmError(f"bad width .{wtext}", lineno, col)
        width = int(wtext)
    elif op.has_width:
        raise AsmError(f"{mnem} needs a width suffix (.64, .32 or .16)", lineno, col)
    if len(operands) != len(op.operands):
        raise AsmError(f"{mnem} takes {len(op.operands)} operands, got {len(operands)}", lineno, opcol)
    dst = None
    srcs = []
    imm = None
    label = None
    for slot, text in zip(op.operands, operands):
        if not text:
            raise AsmError("empty operand", lineno, opcol)
        if slot == "d":
            dst = _reg(text, "r", lineno, opcol)
        elif slot == "D":
            dst = _reg(text, "f", lineno, opcol)
        elif slot == "s":
            srcs.append(_reg(text, "r", lineno, opcol))
        elif slot == "S":
            srcs.append(_reg(text, "f", lineno, opcol))
        elif slot in "im":
            if text.startswith("#"):
                imm = _imm(text, symbols, lineno, opcol)
            elif slot == "m":
                raise AsmError(f"{mnem} expects an immediate offset, got {text!r}", lineno, opcol)
            else:
                srcs.append(_reg(text, "r", lineno, opcol))
        elif slot == "L":
            if not _IDENT_RE.match(text):
                raise AsmError(f"bad label {text!r}", lineno, opcol)
            if text not in labels:
                raise AsmError(f"unresolved label {text!r}", lineno, opcol)
            label = text
    return Instruction(op, dst, tuple(srcs), imm, width, label, static_id)


# --- disassembler ------------------------------------------------------------


def format_instruction(ins: Instruction) -> str:
    head = ins.mnemonic if ins.width is None else f"{ins.mnemonic}.{ins.width}"
    parts = []
    srcs = iter(ins.srcs)
    for slot in ins.opcode.operands:
        if slot == "d":
            parts.append(f"r{ins.dst}")
        elif slot == "D":
            parts.append(f"f{ins.dst}")
        elif slot == "s":
            parts.append(f"r{next(srcs)}")
        elif slot == "S":
            parts.append(f"f{next(srcs)}")
        elif slot in "im":
            if ins.imm is not None:
                parts.append(f"#{ins.imm}")
            else:
                parts.append(f"r{next(srcs)}")
        elif slot == "L":
            parts.append(ins.label)
    return head + (" " + ", ".join(parts) if parts else "")


def disassemble(program: Program) -> str:
    """Canonical text: data directives, then one instruction per line.

    Labels get their own line before the instruction they mark.
    """
    out = []
    for name, (_, size) in sorted(program.symbols.items(), key=lambda kv: kv[1][0]):
        out.append(f".data {name} {size}")
    for name, idx, value in program.inits:
        out.append(f".init {name} {idx} {value!r}")
    by_index: dict[int, list[str]] = {}
    for name, idx in program.labels.items():
        by_index.setdefault(idx, []).append(name)
    for i, ins in enumerate(program.instructions):
        for name in sorted(by_index.get(i, ())):
            out.append(f"{name}:")
        out.append(format_instruction(ins))
    for name in sorted(by_index.get(len(program.instructions), ())):
        out.append(f"{name}:")
    return "".join(line + "\n" for line in out)


# --- engine profiles ---------------------------------------------------------


class Policy(enum.Enum):
    REJECT = "reject"
    DROP = "drop"
    EMULATE = "emulate"


@dataclass(frozen=True)
class EngineProfile:
    """The (mnemonic, width) subset one compute engine implements."""

    name: str
    supported: frozenset
    policy: Policy = Policy.REJECT

    def supports(self, mnemonic, width=None):
        return (mnemonic, width) in self.supported

    @classmethod
    def full(cls, name="full"):
        return cls(name, frozenset(all_opcode_widths()), Policy.REJECT)

    @classmethod
    def from_text(cls, text: str) -> "EngineProfile":
        """Parse ``key=value`` lines: ``name``, ``policy``, ``support``, ``exclude``.

        Support tokens are ``MNEMONIC`` (non-FP), ``MNEMONIC.width``, or
        wildcards ``*`` (everything), ``*.32`` and ``FADD.*``.
        """
        fields: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ValueError(f"line {n}: expected key=value")
            key = key.strip().lower()
            if key in ("support", "exclude") and key in fields:
                fields[key] += "," + value.strip()
            else:
                fields[key] = value.strip()
        unknown = set(fields) - {"name", "policy", "support", "exclude"}
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        supported = _expand_tokens(fields.get("support", ""))
        supported -= _expand_tokens(fields.get("exclude", ""))
        try:
            policy = Policy(fields.get("policy", "reject").strip().lower())
        except ValueError:
            raise ValueError(f"bad policy {fields.get('policy')!r}") from None
        return cls(fields.get("name", "unnamed"), frozenset(supported), policy)

    @classmethod
    def load(cls, path) -> "EngineProfile":
        return cls.from_text(Path(path).read_text())

    def to_text(self):
        tokens = sorted(f"{m}.{w}" if w else m for m, w in self.supported)
        return f"name={self.name}\npolicy={self.policy.value}\nsupport={','.join(tokens)}\n"


def _expand_tokens(text):
    universe = all_opcode_widths()
    out = set()
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        mnem, dot, w = token.partition(".")
        mnem = mnem.upper()
        if mnem != "*" and mnem not in OPCODES:
            raise ValueError(f"unknown mnemonic in profile: {token!r}")
        if dot and w != "*" and w not in ("64", "32", "16"):
            raise ValueError(f"bad width in profile: {token!r}")
        if mnem != "*" and dot and not OPCODES[mnem].has_width:
            raise ValueError(f"width on non-FP opcode in profile: {token!r}")
        if mnem != "*" and not dot and OPCODES[mnem].has_width:
            raise ValueError(f"FP opcode needs a width in profile: {token!r}")
        for m, width in universe:
            if mnem != "*" and m != mnem:
                continue
            if dot and w != "*" and width != int(w):
                continue
            if mnem == "*" and dot and width is None:
                continue
            out.add((m, width))
    return out


def shipped_profiles() -> dict[str, EngineProfile]:
    from importlib import resources

    out = {}
    for entry in sorted(resources.files("aisc.profiles").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".profile"):
            prof = EngineProfile.from_text(entry.read_text())
            out[prof.name] = prof
    return out


def check_engine_support(program: Program, profile: EngineProfile) -> list[tuple[int, str, int | None]]:
    """Instructions of ``program`` the engine cannot execute natively."""
    return [
        (ins.static_id, ins.mnemonic, ins.width)
        for ins in program.instructions
        if ins.key not in profile.supported
    ]


def union_covers_isa(profiles: Iterable[EngineProfile]) -> bool:
    covered = set()
    for p in profiles:
        covered |= p.supported
    return covered >= set(all_opcode_widths())
