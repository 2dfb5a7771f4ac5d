"""Benchmark harnesses: verified-gradient scaling across feature counts,
per-phase gradient-vs-noise cost, and the trace-driven network study.

All benchmarks run the transparent backend (witness-revealing), which is the
consistent measurement pair for relative costs; MACED adds a uniform
constant factor per multiplication.
"""

from __future__ import annotations

import time

import numpy as np

from . import cert, gauss, scopt, wire
from .commit import Dealer, ProverStore, VerifierStore
from .fxp import PROFILES
from .relproof import Backend, ProverCtx, VerifierCtx
from .scopt import Dataset


def _commit_bench_inputs(p, dealer, backend, data: Dataset, w_raw):
    ps, vs = ProverStore(p, dealer), VerifierStore(p, dealer)
    pc = ProverCtx(ps, dealer, backend)
    vc = VerifierCtx(vs, dealer, backend)
    n, d = data.n, data.d
    flat = [int(v) % p for row in data.x_raw for v in row]
    xh = pc.commit_witness_vec(flat)
    yh = pc.commit_witness_vec([int(v) % p for v in data.y])
    wh = pc.commit_witness_vec([int(v) % p for v in w_raw])
    vc.feed(pc.out[:])
    pc.out.clear()
    xh_v = vc.commit_witness_vec(count=n * d)
    yh_v = vc.commit_witness_vec(count=n)
    wh_v = vc.commit_witness_vec(count=d)
    vc.done()
    x_rows = [xh[j * d:(j + 1) * d] for j in range(n)]
    x_rows_v = [xh_v[j * d:(j + 1) * d] for j in range(n)]
    return pc, vc, x_rows, yh, wh, x_rows_v, yh_v, wh_v


def bench_gradient_scaling(dims, count: int, profile: str,
                           seed: int) -> list:
    """Per-gradient verification time for each feature count: the verifier's
    replay of the committed gradient circuit over `count` examples."""
    prof = PROFILES[profile]
    p = prof.p
    rows = []
    for d in dims:
        rng = np.random.default_rng(seed + d)
        x = rng.random((count, d))
        y = np.where(rng.random(count) < 0.5, 1, -1)
        data = Dataset.from_features(x, y, prof.frac_bits_data)
        sc = scopt.default_scales(prof, d)
        w_raw = np.zeros(d, dtype=np.int64)
        _, g, total = scopt.circuit_check(data, w_raw, w_raw, 0, 0, sc)
        bound = total + 1
        dealer = Dealer(p, seed=seed)
        pc, vc, xr, yh, wh, xr_v, yh_v, wh_v = _commit_bench_inputs(
            p, dealer, Backend.TRANSPARENT, data, w_raw)
        cert.committed_grad_check(pc, sc, xr, yh, wh, None, 0, 0, bound)
        stream = pc.out[:]
        pc.out.clear()
        t0 = time.perf_counter()
        vc.feed(stream)
        cert.committed_grad_check(vc, sc, xr_v, yh_v, wh_v, None, 0, 0,
                                  bound)
        vc.done()
        elapsed = time.perf_counter() - t0
        rows.append({"d": d, "gradients": count,
                     "s_per_gradient": elapsed / count})
    return rows


def bench_phase_costs(n: int, d: int, profile: str, seed: int) -> dict:
    """One phase's verified-gradient time vs its d RVCS executions
    (path-mode transparent), mirroring the per-phase cost split."""
    prof = PROFILES[profile]
    p = prof.p
    n_1 = n // 2
    rng = np.random.default_rng(seed)
    x = rng.random((n_1, d))
    y = np.where(rng.random(n_1) < 0.5, 1, -1)
    data = Dataset.from_features(x, y, prof.frac_bits_data)
    sc = scopt.default_scales(prof, d)
    w_raw = np.zeros(d, dtype=np.int64)
    _, _, total = scopt.circuit_check(data, w_raw, w_raw, 0, 0, sc)
    bound = total + 1
    dealer = Dealer(p, seed=seed)
    pc, vc, xr, yh, wh, xr_v, yh_v, wh_v = _commit_bench_inputs(
        p, dealer, Backend.TRANSPARENT, data, w_raw)
    cert.committed_grad_check(pc, sc, xr, yh, wh, None, 0, 0, bound)
    stream = pc.out[:]
    pc.out.clear()
    t0 = time.perf_counter()
    vc.feed(stream)
    cert.committed_grad_check(vc, sc, xr_v, yh_v, wh_v, None, 0, 0, bound)
    vc.done()
    grad_s = time.perf_counter() - t0

    table = gauss.build_density(1.0, prof.tau,
                                grid_frac_bits=prof.frac_bits_data,
                                density_bits=prof.frac_bits_density)
    tree = gauss.build_ky_tree(table)
    prng = np.random.default_rng(seed + 1)
    vrng = np.random.default_rng(seed + 2)
    rp = gauss.rvcs_commit_coins(pc, tree.depth, d, prng)
    rv = [int(b) for b in vrng.integers(0, 2, d * tree.depth)]
    for l in range(d):
        gauss.rvcs_run(pc, tree, rp[l], rv[l * tree.depth:(l + 1) * tree.depth],
                       gauss.RvcsMode.PATH)
    stream = pc.out[:]
    pc.out.clear()
    t0 = time.perf_counter()
    vc.feed(stream)
    rp_v = gauss.rvcs_commit_coins(vc, tree.depth, d)
    for l in range(d):
        gauss.rvcs_run(vc, tree, rp_v[l],
                       rv[l * tree.depth:(l + 1) * tree.depth],
                       gauss.RvcsMode.PATH)
    vc.done()
    rvcs_s = time.perf_counter() - t0
    return {"n_1": n_1, "d": d, "grad_s_per_phase": round(grad_s, 4),
            "rvcs_s_per_phase": round(rvcs_s, 4),
            "rvcs_below_grad": rvcs_s < grad_s}


def bench_network(n: int, d: int, profile: str, seed: int,
                  eta: float = 0.25, epsilon: float = 20.0) -> dict:
    """Run one transparent certification over in-memory pipes, then replay
    the recorded (direction, bytes) trace through each network profile:
    runtime(profile) = measured compute + modeled network delay."""
    prof = PROFILES[profile]
    rng = np.random.default_rng(seed)
    wstar = rng.normal(size=d)
    wstar /= np.linalg.norm(wstar)
    x = rng.random((n, d))
    y = np.where((x - 0.5) @ wstar > 0, 1, -1)
    data = Dataset.from_features(x, y, prof.frac_bits_data)
    cfg = cert.CertConfig(epsilon=epsilon, delta=1e-5, eta=eta,
                          profile=profile, backend=Backend.TRANSPARENT,
                          seed=seed)
    dealer = Dealer(prof.p, seed=seed + 9)
    chan_p, chan_v = wire.PipeChannel.pair()
    t0 = time.perf_counter()
    pres, vres = cert.run_local_session(
        lambda ch: cert.prover_certify(data, cfg, ch, dealer=dealer),
        lambda ch: cert.verifier_certify(cfg, n, d, ch, dealer=dealer),
        channel_pair=(chan_p, chan_v))
    compute_s = time.perf_counter() - t0
    if isinstance(vres, Exception) or vres.outcome is not cert.Outcome.ACCEPT:
        raise RuntimeError(f"benchmark session did not accept: {vres}")
    log = chan_v.stats.log
    out = {"n": n, "d": d, "compute_s": round(compute_s, 4),
           "bytes": chan_v.stats.bytes_sent + chan_v.stats.bytes_recv,
           "frames": chan_v.stats.frames_sent + chan_v.stats.frames_recv}
    for name, prof_net in wire.PROFILES.items():
        delay = wire.network_delay(log, prof_net)
        out[f"runtime_{name}_s"] = round(compute_s + delay, 4)
        out[f"overhead_{name}_s"] = round(delay, 4)
    return out
