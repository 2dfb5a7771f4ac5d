"""Deterministic fixed-point arithmetic and its exact prime-field embedding.

Every quantity that enters a committed computation is an integer `raw` with an
implied scale 2^-frac_bits. Addition and subtraction at matching scale are
exact; multiplication rescales by truncation toward zero. Values embed into a
prime field via their two's-complement residue, which is what the commitment
and proof layers operate on.

Scale conventions used by the rest of the package live in `NumericProfile`.
Note: with per-term truncation, squaring a value with raw^2 < 2^frac_bits
contributes zero to `sq_norm`; monotonicity holds only above that floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# Mersenne prime 2^89 - 1. Wide enough that a sum of 2^20 products of values
# below 2^32 cannot wrap (2^20 * 2^64 < 2^89), cheap to reduce.
P_DEPLOY = 2**89 - 1

# Fermat prime 2^16 + 1. Small field used to make soundness-error rates
# empirically measurable; only toy-scaled values fit.
P_TEST16 = 2**16 + 1

WORD_BITS = 32


class FxpOverflowError(OverflowError):
    """Raised when a result does not fit the configured word width."""


class FieldDecodeError(ValueError):
    """Raised when a residue is outside the embedded fixed-point range."""


@dataclass(frozen=True)
class FxpValue:
    """A real number represented exactly as raw * 2^-frac_bits."""

    raw: int
    frac_bits: int

    def __post_init__(self):
        if self.frac_bits < 0:
            raise ValueError("frac_bits must be non-negative")
        if abs(self.raw) >= 1 << (WORD_BITS - 1):
            raise FxpOverflowError(
                f"raw {self.raw} exceeds {WORD_BITS}-bit word"
            )

    def as_fraction(self) -> Fraction:
        return Fraction(self.raw, 1 << self.frac_bits)

    def __float__(self) -> float:
        return self.raw / (1 << self.frac_bits)


def _round_ties_to_zero(q: Fraction) -> int:
    sign = -1 if q < 0 else 1
    mag = abs(q)
    whole = mag.numerator // mag.denominator
    frac = mag - whole
    if frac > Fraction(1, 2):
        whole += 1
    return sign * whole


def encode(x, frac_bits: int) -> FxpValue:
    """Nearest representable value at the given scale, ties toward zero."""
    q = Fraction(x) * (1 << frac_bits)
    return FxpValue(_round_ties_to_zero(q), frac_bits)


def decode(v: FxpValue) -> Fraction:
    return v.as_fraction()


def trunc_div_pow2(raw: int, shift: int) -> int:
    """Integer division by 2^shift truncating toward zero."""
    if raw >= 0:
        return raw >> shift
    return -((-raw) >> shift)


def fxp_add(a: FxpValue, b: FxpValue) -> FxpValue:
    _require_same_scale(a, b)
    return FxpValue(a.raw + b.raw, a.frac_bits)


def fxp_sub(a: FxpValue, b: FxpValue) -> FxpValue:
    _require_same_scale(a, b)
    return FxpValue(a.raw - b.raw, a.frac_bits)


def fxp_mul(a: FxpValue, b: FxpValue) -> FxpValue:
    """Product rescaled back to the common scale, truncating toward zero."""
    _require_same_scale(a, b)
    return FxpValue(trunc_div_pow2(a.raw * b.raw, a.frac_bits), a.frac_bits)


def sq_norm(vec) -> FxpValue:
    """Sum of squares, one truncation per term, exact wide accumulation."""
    vec = list(vec)
    if not vec:
        return FxpValue(0, 0)
    fb = vec[0].frac_bits
    acc = 0
    for v in vec:
        if v.frac_bits != fb:
            raise ValueError("sq_norm entries must share frac_bits")
        acc += (v.raw * v.raw) >> fb
    return FxpValue(acc, fb)


def _require_same_scale(a: FxpValue, b: FxpValue):
    if a.frac_bits != b.frac_bits:
        raise ValueError(
            f"scale mismatch: {a.frac_bits} vs {b.frac_bits} frac bits"
        )


# -- field embedding ---------------------------------------------------------

def to_field(a: FxpValue, p: int) -> int:
    """Two's-complement-style embedding of the raw integer into F_p."""
    return a.raw % p


def from_field(residue: int, frac_bits: int, p: int,
               word_bits: int = WORD_BITS) -> FxpValue:
    """Inverse of to_field on the representable range; balanced lift."""
    if not 0 <= residue < p:
        raise FieldDecodeError(f"residue {residue} outside [0, p)")
    v = residue if residue <= p // 2 else residue - p
    if abs(v) >= 1 << (word_bits - 1):
        raise FieldDecodeError(
            f"residue {residue} decodes outside {word_bits}-bit range"
        )
    return FxpValue(v, frac_bits)


def balanced(residue: int, p: int) -> int:
    """Lift a residue to the signed representative in (-p/2, p/2]."""
    residue %= p
    return residue if residue <= p // 2 else residue - p


# -- vectorized helpers (int64 raws) -----------------------------------------

def encode_array(x, frac_bits: int, limit_bits: int = 62) -> np.ndarray:
    """Vectorized encode with the same nearest/ties-toward-zero rule.

    The default limit is int64 safety, not the 32-bit word: run-derived
    weight scales legitimately exceed the word width (FxpValue still
    enforces the word invariant for scalar values).
    """
    scaled = np.asarray(x, dtype=np.float64) * float(1 << frac_bits)
    mag = np.abs(scaled)
    whole = np.floor(mag)
    whole = whole + ((mag - whole) > 0.5)
    out = (np.sign(scaled) * whole).astype(np.int64)
    limit = 1 << (limit_bits - 1)
    if np.any(np.abs(out) >= limit):
        raise FxpOverflowError("encode_array value exceeds limit")
    return out


def decode_array(raws: np.ndarray, frac_bits: int) -> np.ndarray:
    return np.asarray(raws, dtype=np.float64) / float(1 << frac_bits)


def trunc_div_pow2_array(raws: np.ndarray, shift: int) -> np.ndarray:
    """Vectorized truncate-toward-zero division by 2^shift."""
    raws = np.asarray(raws)
    neg = raws < 0
    out = np.abs(raws) >> shift
    return np.where(neg, -out, out)


# -- numeric profiles --------------------------------------------------------

@dataclass(frozen=True)
class NumericProfile:
    """Bundle of field and scale choices shared by prover and verifier.

    Alignment requirement: frac_bits_grad == frac_bits_sig + frac_bits_data
    == frac_bits_weight, so the regularizer term 2/eta_i * (w - w_prev) lands
    on the gradient-accumulator scale without any in-circuit rescale.
    """

    name: str
    p: int
    frac_bits_data: int
    frac_bits_weight: int
    frac_bits_margin: int
    frac_bits_sig: int
    frac_bits_density: int
    tree_depth: int
    weight_bound: int          # |w_c| <= weight_bound, range-proven per phase
    tau: float                 # density truncation at tau * sigma

    @property
    def frac_bits_grad(self) -> int:
        return self.frac_bits_sig + self.frac_bits_data

    @property
    def residue_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def __post_init__(self):
        if self.frac_bits_sig + self.frac_bits_data != self.frac_bits_weight:
            raise ValueError("profile scales misaligned: sig+data != weight")


DEPLOY = NumericProfile(
    name="deploy",
    p=P_DEPLOY,
    frac_bits_data=8,
    frac_bits_weight=20,
    frac_bits_margin=12,
    frac_bits_sig=12,
    frac_bits_density=32,
    tree_depth=32,
    weight_bound=64,
    tau=6.0,
)

# Toy profile over the 2^16+1 field: scaled down so committed raws, margins
# and the squared-norm aggregation stay inside the balanced residue range.
TEST16 = NumericProfile(
    name="test16",
    p=P_TEST16,
    frac_bits_data=2,
    frac_bits_weight=6,
    frac_bits_margin=4,
    frac_bits_sig=4,
    frac_bits_density=32,
    tree_depth=32,
    weight_bound=2,
    tau=6.0,
)

PROFILES = {p.name: p for p in (DEPLOY, TEST16)}
