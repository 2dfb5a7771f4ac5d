import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from certdp import fxp
from certdp.dpcore import phase_schedule
from certdp.fxp import DEPLOY, TEST16
from certdp.scopt import (CLAMP, Dataset, LossKind, Model, SolveStats,
                          chunk_grad_sum, circuit_check, d2d_bound,
                          d2d_scales, d2d_train, d2d_unlearn, default_scales,
                          derive_scales, exact_kappa, grad_phase, grad_point,
                          kappa_coeff, lemma1_budget, load_model,
                          logistic_loss, margins_fixed, mobius_coeffs,
                          phased_erm, point_grad_raws, quadratic_loss,
                          ridge_coeff, save_model, sigmoid_fixed,
                          sigmoid_pieces, solve_phase, threshold_bound)
from conftest import make_separable

PROF = DEPLOY


def test_sigmoid_pieces_accuracy():
    sc = default_scales(PROF, 4)
    ms = np.linspace(-10, 10, 8001)
    m_raw = np.round(ms * (1 << sc.fb_m)).astype(np.int64)
    u = sigmoid_fixed(m_raw, sc) / (1 << sc.fb_u)
    true = 1 / (1 + np.exp(-(m_raw / (1 << sc.fb_m))))
    assert float(np.max(np.abs(u - true))) < 2 ** -9


def test_sigmoid_at_zero_is_exactly_half():
    sc = default_scales(PROF, 4)
    assert sigmoid_fixed(np.array([0]), sc)[0] == 1 << (sc.fb_u - 1)


def test_mobius_matches_table_on_boolean_points():
    pieces = sigmoid_pieces(12)
    mu = mobius_coeffs(pieces)
    for idx in range(16):
        bits = [(idx >> b) & 1 for b in range(4)]
        for g in range(4):
            val = 0
            for mask in range(16):
                if all(bits[b] for b in range(4) if mask & (1 << b)):
                    val += mu[g][mask]
            assert val == pieces[idx][g]


def test_grad_point_at_zero_weights():
    # sigma(0) = 1/2 so the gradient is exactly -x/2 for y = +1
    d = 8
    data = make_separable(4, d, 0, PROF.frac_bits_data)
    sc = default_scales(PROF, d)
    g = point_grad_raws(data.x_raw[0], 1, np.zeros(d, dtype=np.int64), sc)
    want = -(data.x_raw[0] << (sc.fb_u - 1)) << sc.g_shift
    assert np.array_equal(np.asarray(g), want)


def test_grad_point_saturation_clamps_to_zero():
    d = 4
    data = make_separable(2, d, 1, PROF.frac_bits_data)
    data.x_raw[0] = np.full(d, 1 << PROF.frac_bits_data)
    w = Model.from_float(np.full(d, 20.0), PROF.frac_bits_weight)
    g = point_grad_raws(data.x_raw[0], 1, w.w_raw, default_scales(PROF, d))
    assert all(int(v) == 0 for v in g)


def test_grad_point_against_high_precision_oracle():
    rng = np.random.default_rng(2)
    d = 6
    sc = default_scales(PROF, d)
    with mpmath.workdps(50):
        for _ in range(50):
            x = rng.random(d)
            y = int(rng.choice((-1, 1)))
            wv = rng.normal(scale=0.8, size=d)
            data = Dataset.from_features(x[None, :], [y],
                                         PROF.frac_bits_data)
            w = Model.from_float(wv, sc.fb_w)
            g = point_grad_raws(data.x_raw[0], y, w.w_raw, sc)
            gf = np.array([float(v) for v in g]) / (1 << sc.fb_g)
            xe = data.x_float()[0]
            we = w.w_float()
            m = y * float(xe @ we)
            sig = float(1 / (1 + mpmath.exp(-mpmath.mpf(m))))
            want = y * (sig - 1.0) * xe
            assert float(np.max(np.abs(gf - want))) <= 2 ** -6


def test_grad_point_spec_surface():
    d = 3
    data = make_separable(1, d, 3, PROF.frac_bits_data)
    model = Model.zeros(d, PROF.frac_bits_weight)
    vals = grad_point(model, data.x_raw[0], int(data.y[0]), PROF)
    assert all(v.frac_bits == PROF.frac_bits_grad for v in vals)


def test_grad_phase_zero_cases():
    d = 4
    sc = default_scales(PROF, d)
    # saturated positive margins make every data gradient exactly zero
    x = np.ones((3, d))
    data = Dataset.from_features(x, [1, 1, 1], PROF.frac_bits_data)
    w = Model.from_float(np.full(d, 10.0), sc.fb_w)
    out = grad_phase(data, w, w, 0.25, 3, PROF)
    assert all(v.raw == 0 for v in out)


def test_grad_phase_single_example_reduces_to_point_plus_regularizer():
    d = 5
    sc = default_scales(PROF, d)
    data = make_separable(1, d, 4, PROF.frac_bits_data)
    w = Model.from_float(np.full(d, 0.25), sc.fb_w)
    wp = Model.zeros(d, sc.fb_w)
    eta_i = 0.25
    out = grad_phase(data, w, wp, eta_i, 1, PROF)
    pg = point_grad_raws(data.x_raw[0], int(data.y[0]), w.w_raw, sc)
    kc = kappa_coeff(eta_i, sc)
    for c in range(d):
        want = int(pg[c]) + kc * int(w.w_raw[c] - wp.w_raw[c])
        assert out[c].raw == want


def test_chunk_grad_sum_matches_scalar_reimplementation():
    # independent scalar oracle for the vectorized integer circuit
    rng = np.random.default_rng(5)
    d, n = 3, 7
    sc = default_scales(PROF, d)
    data = make_separable(n, d, 5, PROF.frac_bits_data)
    w = fxp.encode_array(rng.normal(scale=0.5, size=d), sc.fb_w)
    wp = fxp.encode_array(rng.normal(scale=0.5, size=d), sc.fb_w)
    kc = kappa_coeff(0.25, sc)
    got = chunk_grad_sum(data, w, wp, kc, sc)
    pieces = sigmoid_pieces(sc.fb_u)
    S = CLAMP << sc.fb_m
    want = [0] * d
    for j in range(n):
        dot = sum(int(w[c]) * int(data.x_raw[j, c]) for c in range(d))
        m = int(data.y[j]) * dot
        m = m // (1 << sc.margin_shift) if m >= 0 \
            else -((-m) >> sc.margin_shift)
        if m >= S:
            u = 1 << sc.fb_u
        elif m <= -S:
            u = 0
        else:
            offs = m + S
            idx, rem = offs >> sc.fb_m, offs % (1 << sc.fb_m)
            z = rem - (1 << (sc.fb_m - 1))
            c0, c1, c2, c3 = pieces[idx]
            h = c3 * z
            h = (h // (1 << sc.fb_m) if h >= 0 else -((-h) >> sc.fb_m)) + c2
            h = h * z
            h = (h // (1 << sc.fb_m) if h >= 0 else -((-h) >> sc.fb_m)) + c1
            h = h * z
            h = (h // (1 << sc.fb_m) if h >= 0 else -((-h) >> sc.fb_m)) + c0
            u = h
        coef = int(data.y[j]) * (u - (1 << sc.fb_u))
        for c in range(d):
            want[c] += (coef * int(data.x_raw[j, c])) << sc.g_shift
    for c in range(d):
        want[c] += kc * (int(w[c]) - int(wp[c]))
    assert got == want


def test_solve_phase_zero_iterations_when_already_met():
    d = 3
    x = np.ones((8, d))
    data = Dataset.from_features(x, [1] * 8, PROF.frac_bits_data)
    loss = logistic_loss(d)
    sched = phase_schedule(8, d, 0.25, loss.lipschitz, 1.0, 1e-4)
    sc = derive_scales(PROF, 8, d, 0.25, loss, sched.k_calib)
    w = Model.from_float(np.full(d, 12.0), sc.fb_w)   # saturated gradients
    ph = sched.phases[0]
    tilde, stats = solve_phase(data.subset(slice(0, ph.n_i)), w, ph, loss,
                               sc, sched.k_calib, sched.lipschitz)
    assert stats.iterations == 0
    assert np.array_equal(tilde.w_raw, w.w_raw)


def test_solve_phase_quadratic_toy_closed_form():
    rng = np.random.default_rng(6)
    n, d = 64, 3
    x = rng.random((n, d)) * 0.9 + 0.05
    y = np.where(rng.random(n) < 0.5, 1, -1)
    data = Dataset.from_features(x, y, PROF.frac_bits_data)
    hmax = float(np.linalg.eigvalsh(data.x_float().T @ data.x_float()
                                    / n).max())
    loss = quadratic_loss(4.0, hmax * 1.05, 0.0)
    eta = 0.25
    sched = phase_schedule(n, d, eta, loss.lipschitz, 1.0, 1e-4)
    sc = derive_scales(PROF, n, d, eta, loss, sched.k_calib)
    ph = sched.phases[0]
    chunk = data.subset(slice(ph.chunk_lo, ph.chunk_hi))
    w0 = Model.zeros(d, sc.fb_w)
    tilde, stats = solve_phase(chunk, w0, ph, loss, sc, sched.k_calib,
                               sched.lipschitz)
    # closed-form regularized minimizer of the phase objective
    xe, ye = chunk.x_float(), chunk.y.astype(np.float64)
    lam = 2.0 / (ph.eta_i * ph.n_i)
    a = xe.T @ xe / ph.n_i + lam * np.eye(d)
    b = xe.T @ ye / ph.n_i
    wstar = np.linalg.solve(a, b)
    ball = sched.lipschitz * ph.eta_i / sched.k_calib
    assert np.linalg.norm(tilde.w_float() - wstar) <= 4 * ball + 1e-3
    kc = kappa_coeff(ph.eta_i, sc)
    ok, _, _ = circuit_check(chunk, tilde.w_raw, w0.w_raw, kc,
                             threshold_bound(sched.lipschitz, sched.k_calib,
                                             sc), sc, kind=LossKind.QUADRATIC)
    assert ok


def test_solve_phase_objective_decreases():
    n, d = 128, 6
    data = make_separable(n, d, 7, PROF.frac_bits_data)
    loss = logistic_loss(d)
    eta = 0.0625
    sched = phase_schedule(n, d, eta, loss.lipschitz, 1.0, 1e-5)
    sc = derive_scales(PROF, n, d, eta, loss, sched.k_calib)
    ph = sched.phases[0]
    chunk = data.subset(slice(ph.chunk_lo, ph.chunk_hi))
    w0 = Model.zeros(d, sc.fb_w)
    tilde, _ = solve_phase(chunk, w0, ph, loss, sc, sched.k_calib,
                           sched.lipschitz)

    def objective(w):
        m = chunk.y * (chunk.x_float() @ w)
        reg = np.sum((w - w0.w_float()) ** 2) / (ph.eta_i * ph.n_i)
        return float(np.mean(np.log1p(np.exp(-m)))) + reg

    assert objective(tilde.w_float()) < objective(w0.w_float())


def test_solve_phase_budget_within_4x():
    for (n, d, eta) in [(256, 4, 0.125), (1024, 16, 0.0625)]:
        data = make_separable(n, d, 8, PROF.frac_bits_data)
        loss = logistic_loss(d)
        sched = phase_schedule(n, d, eta, loss.lipschitz, 1.0, 1e-5)
        coll = []
        phased_erm(data, loss, Model.zeros(d, PROF.frac_bits_weight), eta,
                   1.0, 1e-5, np.random.default_rng(8), PROF, collect=coll)
        for ph, _, stats in coll:
            budget = lemma1_budget(ph.n_i, ph.eta_i, loss, sched.k_calib, 1.0)
            assert stats.point_grad_evals <= 4 * budget


def test_phased_erm_zero_noise_limit():
    # epsilon -> infinity clamps every sigma_i into the degenerate table
    n, d = 64, 4
    data = make_separable(n, d, 9, PROF.frac_bits_data)
    loss = logistic_loss(d)
    coll = []
    w = phased_erm(data, loss, Model.zeros(d, PROF.frac_bits_weight), 0.125,
                   1e9, 1e-5, np.random.default_rng(9), PROF, collect=coll)
    noiseless = coll[-1][1]
    assert np.array_equal(w.w_raw, noiseless.w_raw)


def test_phased_erm_seeded_determinism():
    n, d = 64, 4
    data = make_separable(n, d, 10, PROF.frac_bits_data)
    loss = logistic_loss(d)
    runs = [phased_erm(data, loss, Model.zeros(d, PROF.frac_bits_weight),
                       0.125, 1.0, 1e-5, np.random.default_rng(10), PROF)
            for _ in range(2)]
    assert np.array_equal(runs[0].w_raw, runs[1].w_raw)


def test_d2d_warm_start_beats_cold():
    n, d = 200, 5
    data = make_separable(n, d, 11, PROF.frac_bits_data)
    lam = 0.125
    loss = logistic_loss(d, ridge=lam)
    pre = []
    st_train = SolveStats()
    d2d_train(data, loss, Model.zeros(d, PROF.frac_bits_weight), 0.05, 1.0,
              1e-5, np.random.default_rng(11), PROF, st_train, pre)
    wc = pre[0]
    # unlearn with D' = D: warm start from w_c needs fewer evaluations
    st_warm, st_cold = SolveStats(), SolveStats()
    d2d_unlearn(data, wc, loss, 0.05, 1.0, 1e-5,
                np.random.default_rng(12), PROF, st_warm)
    d2d_train(data, loss, Model.zeros(d, PROF.frac_bits_weight), 0.05, 1.0,
              1e-5, np.random.default_rng(13), PROF, st_cold)
    assert st_warm.point_grad_evals < st_cold.point_grad_evals


def test_d2d_distance_bound_small_batch():
    rng = np.random.default_rng(14)
    lam, delta_thr = 0.25, 0.05
    for trial in range(10):
        n, d = 120, 4
        data = make_separable(n, d, 100 + trial, PROF.frac_bits_data)
        loss = logistic_loss(d, ridge=lam)
        pre_t, pre_u, pre_r = [], [], []
        w0 = Model.zeros(d, PROF.frac_bits_weight)
        d2d_train(data, loss, w0, delta_thr, 1.0, 1e-5,
                  np.random.default_rng(trial), PROF, pre_noise=pre_t)
        keep = rng.random(n) > 0.2
        retain = data.subset(keep)
        d2d_unlearn(retain, pre_t[0], loss, delta_thr, 1.0, 1e-5,
                    np.random.default_rng(trial + 1), PROF, pre_noise=pre_u)
        d2d_train(retain, loss, w0, delta_thr, 1.0, 1e-5,
                  np.random.default_rng(trial + 2), PROF, pre_noise=pre_r)
        dist = float(np.linalg.norm(pre_u[0].w_float() - pre_r[0].w_float()))
        assert dist <= 2 * delta_thr / lam


def test_d2d_quadratic_closed_form_small_delta():
    rng = np.random.default_rng(15)
    n, d = 80, 3
    x = rng.random((n, d)) * 0.9 + 0.05
    y = np.where(rng.random(n) < 0.5, 1, -1)
    data = Dataset.from_features(x, y, PROF.frac_bits_data)
    lam = 0.25
    hmax = float(np.linalg.eigvalsh(data.x_float().T @ data.x_float()
                                    / n).max())
    loss = quadratic_loss(4.0, hmax * 1.05 + lam, lam)
    delta_thr = 1e-3
    pre = []
    d2d_train(data, loss, Model.zeros(d, PROF.frac_bits_weight), delta_thr,
              1.0, 1e-5, np.random.default_rng(16), PROF, pre_noise=pre)
    xe, ye = data.x_float(), data.y.astype(np.float64)
    a = xe.T @ xe / n + lam * np.eye(d)
    wstar = np.linalg.solve(a, xe.T @ ye / n)
    assert np.linalg.norm(pre[0].w_float() - wstar) <= delta_thr / lam + 1e-3


def test_kappa_and_ridge_exactness():
    assert exact_kappa(0.25) == 8
    with pytest.raises(ValueError):
        exact_kappa(0.1)
    sc = d2d_scales(PROF, 4, 0.125)
    assert ridge_coeff(0.125, 100, sc) == \
        Fraction(0.125) * 100 * 2 ** (sc.fb_g - sc.fb_w)
    with pytest.raises(ValueError):
        d2d_scales(PROF, 4, 0.1)


def test_threshold_and_d2d_bounds_are_squares():
    sc = default_scales(PROF, 4)
    b = threshold_bound(2.0, 8, sc)
    t = fxp.encode(Fraction(2 * 2.0) / 8, sc.fb_g).raw
    assert b == t * t
    b2 = d2d_bound(0.05, 100, sc)
    t2 = fxp.encode(Fraction(0.05) * 100, sc.fb_g).raw
    assert b2 == t2 * t2


def test_model_checkpoint_roundtrip(tmp_path):
    m = Model.from_float(np.array([0.5, -0.25, 1.75]), 20)
    path = tmp_path / "model.bin"
    save_model(m, str(path))
    m2 = load_model(str(path))
    assert m2.frac_bits == 20 and np.array_equal(m2.w_raw, m.w_raw)


def test_dataset_clamps_and_validates():
    x = np.array([[1.5, -0.2], [0.5, 0.5]])
    data = Dataset.from_features(x, [1, -1], 8)
    assert data.x_raw.max() == 256 and data.x_raw.min() == 0
    with pytest.raises(ValueError):
        Dataset.from_features(x, [1, 2], 8)


def test_dataset_serialize_roundtrip():
    data = make_separable(9, 3, 12, 8)
    blob = data.serialize()
    back = Dataset.deserialize(blob)
    assert np.array_equal(back.x_raw, data.x_raw)
    assert np.array_equal(back.y, data.y)
    assert back.frac_bits == data.frac_bits
