import random

import numpy as np
import pytest

from certdp.commit import Dealer, ProverStore, VerifierStore
from certdp.fxp import P_DEPLOY, P_TEST16
from certdp.relproof import (Backend, ProverCtx, Reject, RelKind,
                             RelationStatement, VerifierCtx, run_statement)

BACKENDS = (Backend.TRANSPARENT, Backend.MACED)


def _stores(p, seed):
    dealer = Dealer(p, seed=seed)
    return dealer, ProverStore(p, dealer), VerifierStore(p, dealer)


def _committed(ps, vs, values):
    hs, om = ps.commit_vec(values)
    vs.on_commit_vec(om)
    return hs


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("p", (P_TEST16, P_DEPLOY))
def test_mul_examples(p, backend):
    dealer, ps, vs = _stores(p, 1)
    _committed(ps, vs, [2, 3, 6, 7])
    ok, _ = run_statement(RelationStatement(RelKind.MUL, [0, 1, 2]),
                          ps, vs, dealer, backend)
    assert ok
    ok, why = run_statement(RelationStatement(RelKind.MUL, [0, 1, 3]),
                            ps, vs, dealer, backend)
    assert not ok and why


@pytest.mark.parametrize("backend", BACKENDS)
def test_mul_random_corpus(backend):
    p = P_TEST16
    rng = random.Random(2)
    dealer, ps, vs = _stores(p, 2)
    for trial in range(2000):
        a, b = rng.randrange(p), rng.randrange(p)
        honest = rng.random() < 0.5
        c = (a * b) % p if honest else (a * b + rng.randrange(1, p)) % p
        hs = _committed(ps, vs, [a, b, c])
        ok, _ = run_statement(RelationStatement(RelKind.MUL, hs),
                              ps, vs, dealer, backend)
        assert ok == honest


@pytest.mark.parametrize("backend", BACKENDS)
def test_range_examples(backend):
    p = P_DEPLOY
    dealer, ps, vs = _stores(p, 3)
    hs = _committed(ps, vs, [0, 256, 255])
    ok, _ = run_statement(RelationStatement(RelKind.RANGE, [hs[0]], [8]),
                          ps, vs, dealer, backend)
    assert ok
    ok, _ = run_statement(RelationStatement(RelKind.RANGE, [hs[1]], [8]),
                          ps, vs, dealer, backend)
    assert not ok      # boundary: 256 is out of [0, 2^8)
    ok, _ = run_statement(RelationStatement(RelKind.RANGE, [hs[2]], [8]),
                          ps, vs, dealer, backend)
    assert ok


@pytest.mark.parametrize("backend", BACKENDS)
def test_range_random_vs_comparison_oracle(backend):
    p = P_TEST16
    rng = random.Random(4)
    dealer, ps, vs = _stores(p, 4)
    for _ in range(300):
        bits = rng.choice((4, 8, 10))
        v = rng.randrange(0, 1 << (bits + 2))
        hs = _committed(ps, vs, [v])
        ok, _ = run_statement(RelationStatement(RelKind.RANGE, hs, [bits]),
                              ps, vs, dealer, backend)
        assert ok == (v < (1 << bits))


@pytest.mark.parametrize("backend", BACKENDS)
def test_sqnorm_examples(backend):
    p = P_DEPLOY
    dealer, ps, vs = _stores(p, 5)
    zeros = _committed(ps, vs, [0, 0, 0])
    ok, _ = run_statement(
        RelationStatement(RelKind.SQNORM_LE, zeros, [100, 8]),
        ps, vs, dealer, backend)
    assert ok
    over = _committed(ps, vs, [11, 0, 0])   # single coordinate violation
    ok, _ = run_statement(
        RelationStatement(RelKind.SQNORM_LE, over, [100, 8]),
        ps, vs, dealer, backend)
    assert not ok


@pytest.mark.parametrize("backend", BACKENDS)
def test_sqnorm_random_d8_vs_rational_oracle(backend):
    p = P_DEPLOY
    rng = random.Random(6)
    dealer, ps, vs = _stores(p, 6)
    for _ in range(100):
        vec = [rng.randrange(-50, 50) % p for _ in range(8)]
        bound = rng.randrange(1, 20000)
        hs = _committed(ps, vs, vec)
        want = sum(min(v, p - v) ** 2 for v in vec) <= bound
        ok, _ = run_statement(
            RelationStatement(RelKind.SQNORM_LE, hs,
                              [bound, bound.bit_length() + 1]),
            ps, vs, dealer, backend)
        assert ok == want


@pytest.mark.parametrize("backend", BACKENDS)
def test_linear_examples(backend):
    p = P_DEPLOY
    dealer, ps, vs = _stores(p, 7)
    hs = _committed(ps, vs, [5, 5, 6])
    ok, _ = run_statement(
        RelationStatement(RelKind.LINEAR, [hs[0], hs[1]], [[1], 0]),
        ps, vs, dealer, backend)
    assert ok          # identity map
    ok, _ = run_statement(
        RelationStatement(RelKind.LINEAR, [hs[0], hs[2]], [[1], 0]),
        ps, vs, dealer, backend)
    assert not ok      # perturbed output


@pytest.mark.parametrize("backend", BACKENDS)
def test_linear_random_affine_vs_oracle(backend):
    p = P_TEST16
    rng = random.Random(8)
    dealer, ps, vs = _stores(p, 8)
    for _ in range(300):
        xs = [rng.randrange(p) for _ in range(4)]
        coeffs = [rng.randrange(p) for _ in range(4)]
        c0 = rng.randrange(p)
        honest = rng.random() < 0.5
        out = (sum(c * x for c, x in zip(coeffs, xs)) + c0) % p
        if not honest:
            out = (out + rng.randrange(1, p)) % p
        hs = _committed(ps, vs, xs + [out])
        ok, _ = run_statement(
            RelationStatement(RelKind.LINEAR, hs, [coeffs, c0]),
            ps, vs, dealer, backend)
        assert ok == honest


def test_completeness_honest_never_rejected():
    # Def-3 style completeness: zero rejections across a randomized corpus
    rng = random.Random(9)
    for backend in BACKENDS:
        dealer, ps, vs = _stores(P_TEST16, 9)
        for _ in range(500):
            a, b = rng.randrange(200), rng.randrange(200)
            hs = _committed(ps, vs, [a, b, (a * b) % P_TEST16])
            ok, why = run_statement(RelationStatement(RelKind.MUL, hs),
                                    ps, vs, dealer, backend)
            assert ok, why


def test_backend_equivalence_on_shared_corpus():
    rng = random.Random(10)
    stmts = []
    for _ in range(300):
        kind = rng.choice((RelKind.MUL, RelKind.RANGE, RelKind.LINEAR))
        if kind is RelKind.MUL:
            a, b = rng.randrange(100), rng.randrange(100)
            c = (a * b + rng.choice((0, 0, 1, 5))) % P_TEST16
            stmts.append((kind, [a, b, c], []))
        elif kind is RelKind.RANGE:
            stmts.append((kind, [rng.randrange(0, 600)], [9]))
        else:
            xs = [rng.randrange(50) for _ in range(3)]
            cf = [rng.randrange(50) for _ in range(3)]
            out = (sum(c * x for c, x in zip(cf, xs))
                   + rng.choice((0, 0, 3))) % P_TEST16
            stmts.append((kind, xs + [out], [cf, 0]))
    verdicts = {}
    for backend in BACKENDS:
        dealer, ps, vs = _stores(P_TEST16, 11)
        vlist = []
        for kind, vals, params in stmts:
            hs = _committed(ps, vs, vals)
            ok, _ = run_statement(RelationStatement(kind, hs, params),
                                  ps, vs, dealer, backend)
            vlist.append(ok)
        verdicts[backend] = vlist
    assert verdicts[Backend.TRANSPARENT] == verdicts[Backend.MACED]


def _adversarial_trial(dealer, kind: RelKind, forge_rng) -> bool:
    """One forging-adversary trial: a false statement with honest structure
    and uniformly guessed MACs on everything it sends. Returns True when the
    verifier accepts. Fresh stores per trial keep memory flat."""
    p = dealer.p
    ps, vs = ProverStore(p, dealer), VerifierStore(p, dealer)
    if kind is RelKind.MUL:
        stmt = RelationStatement(RelKind.MUL, [0, 1, 2])
        vals = [3, 5, 16]                       # 3*5 != 16
    elif kind is RelKind.LINEAR:
        stmt = RelationStatement(RelKind.LINEAR, [0, 1], [[1], 0])
        vals = [3, 9]                           # identity map violated
    elif kind is RelKind.RANGE:
        stmt = RelationStatement(RelKind.RANGE, [0], [3])
        vals = [9]                              # 9 outside [0, 8)
    else:
        stmt = RelationStatement(RelKind.SQNORM_LE, [0, 1], [20, 6])
        vals = [5, 4]                           # 41 > 20
    hs, om = ps.commit_vec(vals)
    vs.on_commit_vec(om)

    def cheat(pc):
        pc._forge_rng = forge_rng
        pc.set_forge(True)

    ok, _ = run_statement(stmt, ps, vs, dealer, Backend.MACED, cheat=cheat)
    return ok


@pytest.mark.parametrize("kind", (RelKind.MUL, RelKind.LINEAR,
                                  RelKind.RANGE, RelKind.SQNORM_LE))
def test_soundness_rate_forging_adversary(kind):
    # relproof invariant: cheating acceptance frequency <= 2^-14 over 10^6
    # adversarial trials per relation kind in the 2^16 field (the forger's
    # per-trial success is ~1/p per guessed check)
    trials = 1_000_000
    dealer = Dealer(P_TEST16, seed=12)
    forge_rng = random.Random(int(kind.value.encode().hex(), 16) & 0xFFFF)
    hits = 0
    for _ in range(trials):
        hits += _adversarial_trial(dealer, kind, forge_rng)
    assert hits <= trials * 2**-14, (kind, hits)


def test_truncated_stream_rejected():
    p = P_TEST16
    dealer = Dealer(p, seed=15)
    ps, vs = ProverStore(p, dealer), VerifierStore(p, dealer)
    hs, om = ps.commit_vec([2, 3, 6])
    vhs = vs.on_commit_vec(om)
    pc = ProverCtx(ps, dealer, Backend.MACED)
    vc = VerifierCtx(vs, dealer, Backend.MACED)
    prod = pc.mul(hs[0], hs[1])
    pc.assert_zero(pc.sub(prod, hs[2]))
    vc.feed(pc.out[:-1])
    with pytest.raises(Reject):
        prod_v = vc.mul(vhs[0], vhs[1])
        vc.assert_zero(vc.sub(prod_v, vhs[2]))
        vc.done()
