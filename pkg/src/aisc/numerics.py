"""Bit-level floating point kernels shared by the interpreter and the transforms.

Scalar functions operate on Python floats and are what the reference
interpreter calls per operand.  The ``*_array`` functions are the batch
versions used by property checks and benchmarks; each has a numba loop and a
vectorised numpy twin, chosen by :data:`aisc._accel.USE_JIT`.
"""
import math
import struct

import numpy as np

from aisc import _accel
from aisc._accel import njit

MANTISSA_BITS = 52
RCP_BITS = 12

_EXP_MASK = 0x7FF0000000000000
_U64 = (1 << 64) - 1
_pack_d = struct.Struct("<d").pack
_unpack_d = struct.Struct("<d").unpack
_pack_q = struct.Struct("<Q").pack
_unpack_q = struct.Struct("<Q").unpack


def float_to_bits(x):
    """Raw IEEE-754 binary64 bit pattern of ``x`` as an unsigned int."""
    return _unpack_q(_pack_d(x))[0]


def bits_to_float(b):
    return _unpack_d(_pack_q(b & _U64))[0]


def discard_mantissa_bits(x, k):
    """Zero the ``k`` least-significant mantissa bits of ``x``.

    Sign and exponent are untouched; NaN and infinities pass through.
    """
    if k <= 0:
        return x
    if k > MANTISSA_BITS:
        raise ValueError(f"cannot discard {k} of {MANTISSA_BITS} mantissa bits")
    b = _unpack_q(_pack_d(x))[0]
    if b & _EXP_MASK == _EXP_MASK:
        return x
    return _unpack_d(_pack_q(b & ~((1 << k) - 1) & _U64))[0]


def round_to_nearest_int(x):
    """Nearest integer-valued float, ties away from zero; non-finite unchanged."""
    if not math.isfinite(x):
        return x
    t = float(math.trunc(x))
    if abs(x - t) >= 0.5:
        t += math.copysign(1.0, x)
    return math.copysign(t, x)


# The FPU's default quiet NaN (sign set on x86), so that 0/0 here carries the
# same bit pattern as the compiled engine.
_DEFAULT_NAN = float("inf") - float("inf")


def ieee_div(a, b):
    """``a / b`` with IEEE-754 results instead of ZeroDivisionError."""
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0.0 or a != a:
            return _DEFAULT_NAN if a == 0.0 else a
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def rcp12(x):
    """Reciprocal whose mantissa is correct to 12 bits (truncated, not rounded)."""
    return discard_mantissa_bits(ieee_div(1.0, x), MANTISSA_BITS - RCP_BITS)


# --- batch kernels -----------------------------------------------------------


@njit(nogil=True)
def _discard_nb(x, k):
    bits = x.view(np.int64)
    out = np.empty_like(x)
    ob = out.view(np.int64)
    mask = ~((np.int64(1) << k) - 1)
    expm = np.int64(0x7FF0000000000000)
    for i in range(bits.shape[0]):
        b = bits[i]
        if (b & expm) == expm:
            ob[i] = b
        else:
            ob[i] = b & mask
    return out


def _discard_np(x, k):
    bits = x.view(np.int64)
    mask = np.int64(~((1 << k) - 1))
    special = (bits & np.int64(_EXP_MASK)) == np.int64(_EXP_MASK)
    return np.where(special, bits, bits & mask).view(np.float64)


def discard_mantissa_bits_array(x, k, jit=None):
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if not 0 <= k <= MANTISSA_BITS:
        raise ValueError(f"cannot discard {k} of {MANTISSA_BITS} mantissa bits")
    if k == 0:
        return x.copy()
    if _accel.USE_JIT if jit is None else jit:
        return _discard_nb(x, k)
    return _discard_np(x, k)


@njit(nogil=True)
def _round_nb(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        v = x[i]
        t = np.trunc(v)
        if abs(v - t) >= 0.5:
            t += 1.0 if v > 0 else -1.0
        out[i] = t
    return out


def _round_np(x):
    t = np.trunc(x)
    with np.errstate(invalid="ignore"):
        step = np.where(np.abs(x - t) >= 0.5, np.sign(x), 0.0)
    return np.copysign(t + step, x)


def round_to_nearest_int_array(x, jit=None):
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if _accel.USE_JIT if jit is None else jit:
        return np.copysign(_round_nb(x), x)
    return _round_np(x)


@njit(nogil=True, error_model="numpy")
def _div_to_mul_nb(dividend, divisor, refine):
    n = divisor.shape[0]
    out = np.empty(n)
    buf = np.empty(1)
    bb = buf.view(np.int64)
    mask = ~((np.int64(1) << (52 - 12)) - 1)
    expm = np.int64(0x7FF0000000000000)
    for i in range(n):
        d = divisor[i]
        buf[0] = 1.0 / d
        if (bb[0] & expm) != expm:
            bb[0] = bb[0] & mask
        x0 = buf[0]
        # a zero or infinite estimate is left alone so x / 0 stays +-inf
        if refine and x0 != 0.0 and np.isfinite(x0):
            t = d * x0
            t = t * x0
            u = x0 + x0
            x0 = u - t
        out[i] = x0 * dividend[i]
    return out


def _div_to_mul_np(dividend, divisor, refine):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x0 = _discard_np(1.0 / divisor, MANTISSA_BITS - RCP_BITS)
        if refine:
            t = divisor * x0
            t = t * x0
            ok = np.isfinite(x0) & (x0 != 0.0)
            x0 = np.where(ok, (x0 + x0) - t, x0)
        return x0 * dividend


def div_to_mul_array(dividend, divisor, refine, jit=None):
    """Batch division emulation; ``refine`` adds one Newton-Raphson step."""
    dividend = np.ascontiguousarray(dividend, dtype=np.float64).ravel()
    divisor = np.ascontiguousarray(divisor, dtype=np.float64).ravel()
    if dividend.shape != divisor.shape:
        raise ValueError("dividend and divisor lengths differ")
    if _accel.USE_JIT if jit is None else jit:
        return _div_to_mul_nb(dividend, divisor, bool(refine))
    return _div_to_mul_np(dividend, divisor, bool(refine))


# --- SplitMix64 --------------------------------------------------------------

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """SplitMix64 generator (Steele, Lea and Flood).

    ``state += 0x9E3779B97F4A7C15``; the output is the state passed through
    two xor-shift-multiply rounds.  Uniform doubles take the top 53 bits, so
    draws lie in [0, 1).
    """

    def __init__(self, seed):
        self.state = seed & _U64

    def next_u64(self):
        self.state = (self.state + _GOLDEN) & _U64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _U64
        z = ((z ^ (z >> 27)) * _MIX2) & _U64
        return z ^ (z >> 31)

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


@njit(nogil=True)
def _splitmix_nb(seed, n):
    out = np.empty(n)
    s = np.uint64(seed)
    for i in range(n):
        s = s + np.uint64(_GOLDEN)
        z = s
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        out[i] = np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return out


def _splitmix_np(seed, n):
    steps = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _U64) + steps * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def splitmix_uniforms(seed, n, jit=None):
    """First ``n`` uniform draws of :class:`SplitMix64` seeded with ``seed``."""
    if _accel.USE_JIT if jit is None else jit:
        return _splitmix_nb(np.uint64(seed & _U64), n)
    return _splitmix_np(seed, n)
