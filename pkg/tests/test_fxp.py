import math
import random
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from certdp import fxp
from certdp.fxp import (DEPLOY, P_DEPLOY, P_TEST16, TEST16, FieldDecodeError,
                        FxpOverflowError, FxpValue, balanced, decode, encode,
                        encode_array, from_field, fxp_add, fxp_mul, fxp_sub,
                        sq_norm, to_field, trunc_div_pow2)


def test_encode_zero_and_exact():
    assert encode(0.0, 8).raw == 0
    assert encode(1.5, 8).raw == 384


def test_encode_pi_against_rational_oracle():
    # oracle: exact rational rounding of pi * 256, ties toward zero
    with mpmath.workdps(60):
        pi_frac = Fraction(mpmath.nstr(mpmath.pi, 50)) * 256
    whole = pi_frac.numerator // pi_frac.denominator
    frac = pi_frac - whole
    oracle = whole + (1 if frac > Fraction(1, 2) else 0)
    assert encode(math.pi, 8).raw == oracle == 804


def test_encode_ties_toward_zero():
    assert encode(Fraction(3, 2), 0).raw == 1
    assert encode(Fraction(-3, 2), 0).raw == -1
    assert encode(Fraction(5, 2), 0).raw == 2


def test_mul_examples():
    assert fxp_mul(FxpValue(256, 8), FxpValue(256, 8)).raw == 256
    assert fxp_mul(FxpValue(384, 8), FxpValue(128, 8)).raw == 192


def test_mul_random_against_rational_oracle():
    rng = random.Random(3)
    for _ in range(500):
        fb = rng.choice((4, 8, 12))
        a = FxpValue(rng.randrange(-4000, 4000), fb)
        b = FxpValue(rng.randrange(-4000, 4000), fb)
        got = fxp_mul(a, b)
        exact = decode(a) * decode(b) * (1 << fb)
        want = exact.numerator // exact.denominator if exact >= 0 \
            else -((-exact.numerator) // exact.denominator)
        assert got.raw == want


def test_add_sub_exact_property():
    rng = random.Random(4)
    for _ in range(500):
        fb = rng.choice((0, 8, 16))
        a = FxpValue(rng.randrange(-10**6, 10**6), fb)
        b = FxpValue(rng.randrange(-10**6, 10**6), fb)
        assert decode(fxp_add(a, b)) == decode(a) + decode(b)
        assert decode(fxp_sub(a, b)) == decode(a) - decode(b)


def test_scale_mismatch_rejected():
    with pytest.raises(ValueError):
        fxp_add(FxpValue(1, 8), FxpValue(1, 9))


def test_word_overflow():
    with pytest.raises(FxpOverflowError):
        FxpValue(1 << 31, 8)
    with pytest.raises(FxpOverflowError):
        encode(2.0**24, 8)


def test_sq_norm_examples():
    assert sq_norm([]).raw == 0
    assert sq_norm([FxpValue(0, 8)] * 4).raw == 0
    assert sq_norm([FxpValue(256, 8), FxpValue(0, 8)]).raw == 256


def test_sq_norm_random_against_rational_oracle():
    rng = random.Random(5)
    for _ in range(100):
        fb = 8
        vec = [FxpValue(rng.randrange(-3000, 3000), fb) for _ in range(16)]
        want = sum((v.raw * v.raw) >> fb for v in vec)
        assert sq_norm(vec).raw == want


def test_sq_norm_monotone_above_quantization_floor():
    # per-term truncation kills squares below 2^-fb; monotonicity holds once
    # raw^2 >= 2^fb (see module docstring)
    rng = random.Random(6)
    fb = 8
    for _ in range(200):
        vec = [FxpValue(rng.randrange(-2000, 2000), fb) for _ in range(5)]
        extra = FxpValue(rng.choice([-1, 1]) * rng.randrange(16, 2000), fb)
        assert sq_norm(vec + [extra]).raw > sq_norm(vec).raw


def test_field_roundtrip_examples():
    for p in (P_TEST16, P_DEPLOY):
        assert to_field(FxpValue(0, 8), p) == 0
        assert to_field(FxpValue(-1, 8), p) == p - 1
        assert from_field(p - 1, 8, p).raw == -1


def test_field_roundtrip_exhaustive_small_width():
    p = P_TEST16
    for raw in range(-(1 << 7) + 1, 1 << 7):
        v = FxpValue(raw, 4)
        assert from_field(to_field(v, p), 4, p, word_bits=8) == v


def test_field_roundtrip_randomized_full_width():
    rng = random.Random(7)
    for p in (P_DEPLOY,):
        for _ in range(100_000)       :
            raw = rng.randrange(-(1 << 31) + 1, 1 << 31)
            assert from_field(raw % p, 8, p).raw == raw


def test_field_homomorphic_add():
    rng = random.Random(8)
    p = P_DEPLOY
    for _ in range(300):
        a = FxpValue(rng.randrange(-(1 << 29), 1 << 29), 8)
        b = FxpValue(rng.randrange(-(1 << 29), 1 << 29), 8)
        s = (to_field(a, p) + to_field(b, p)) % p
        assert s == to_field(fxp_add(a, b), p)


def test_from_field_range_error():
    with pytest.raises(FieldDecodeError):
        from_field(P_TEST16 // 2 - 5, 8, P_TEST16, word_bits=8)
    with pytest.raises(FieldDecodeError):
        from_field(P_TEST16, 8, P_TEST16)


def test_trunc_div_toward_zero():
    assert trunc_div_pow2(-5, 1) == -2
    assert trunc_div_pow2(5, 1) == 2
    arr = fxp.trunc_div_pow2_array(np.array([-5, 5, -256, 255]), 4)
    assert list(arr) == [0, 0, -16, 15]


def test_encode_array_matches_scalar():
    rng = np.random.default_rng(9)
    xs = rng.normal(scale=100, size=2000)
    arr = encode_array(xs, 8)
    for x, raw in zip(xs[:200], arr[:200]):
        assert int(raw) == encode(float(x), 8).raw


def test_balanced():
    assert balanced(P_TEST16 - 1, P_TEST16) == -1
    assert balanced(5, P_TEST16) == 5


def test_profiles_alignment():
    for prof in (DEPLOY, TEST16):
        assert prof.frac_bits_grad == prof.frac_bits_sig + prof.frac_bits_data
        assert prof.frac_bits_grad == prof.frac_bits_weight
