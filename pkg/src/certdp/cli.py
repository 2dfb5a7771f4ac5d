"""Operator surface: training, certification endpoints, unlearning, the
backdoor demonstration, noise sampling, and benchmarks.

Every command reads an optional flat key=value config file; flags win over
file entries. All commands emit a machine-readable result block (key=value
lines, or JSON under --json) and exit 0 only on success/ACCEPT.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
import time

import numpy as np

from . import backdoor as bd
from . import cert, dpcore, gauss, scopt, wire
from .commit import Dealer
from .fxp import PROFILES
from .relproof import Backend
from .scopt import Dataset, Model

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


# -- dataset ingestion -----------------------------------------------------------

def load_idx(path: str) -> np.ndarray:
    """Parse one big-endian IDX file (images 2051 or labels 2049)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise ValueError("truncated idx file")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == IDX_IMAGES_MAGIC:
        n, rows, cols = struct.unpack(">III", blob[4:16])
        need = 16 + n * rows * cols
        if len(blob) < need:
            raise ValueError("truncated idx image payload")
        arr = np.frombuffer(blob[16:need], dtype=np.uint8)
        return arr.reshape(n, rows * cols)
    if magic == IDX_LABELS_MAGIC:
        (n,) = struct.unpack(">I", blob[4:8])
        if len(blob) < 8 + n:
            raise ValueError("truncated idx label payload")
        return np.frombuffer(blob[8:8 + n], dtype=np.uint8).copy()
    raise ValueError(f"bad idx magic {magic}")


def mnist_binary(images_path: str, labels_path: str, frac_bits: int,
                 classes=(3, 8)) -> Dataset:
    """Binary task from an IDX pair: keep the two classes, map to +-1,
    scale pixels into [0,1] on the data grid."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image/label count mismatch")
    neg, pos = classes
    keep = (labels == neg) | (labels == pos)
    x = images[keep].astype(np.float64) / 255.0
    y = np.where(labels[keep] == pos, 1, -1)
    return Dataset.from_features(x, y, frac_bits)


def gen_synthetic(kind: str, n: int, d: int, seed: int,
                  frac_bits: int) -> Dataset:
    """Synthetic tasks: 'separable-logistic' (linearly separable labels) or
    'quadratic' (least-squares with a computable exact minimizer)."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, d))
    if kind == "separable-logistic":
        wstar = rng.normal(size=d)
        wstar /= np.linalg.norm(wstar)
        y = np.where((x - 0.5) @ wstar > 0, 1, -1)
    elif kind == "quadratic":
        y = np.where(rng.random(n) < 0.5, 1, -1)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return Dataset.from_features(x, y, frac_bits)


# -- config plumbing ---------------------------------------------------------------

def _read_config_file(path: str) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    if getattr(args, "config", None):
        file_vals = _read_config_file(args.config)
        for key, val in file_vals.items():
            attr = key.replace("-", "_")
            if hasattr(args, attr) and getattr(args, attr) is None:
                setattr(args, attr, val)
    return args


def _emit(report: dict, as_json: bool):
    if as_json:
        print(json.dumps(report, indent=2, default=str))
    else:
        for key, val in report.items():
            print(f"{key}={val}")


def _dataset_from_args(args, prof) -> Dataset:
    if args.images:
        return mnist_binary(args.images, args.labels, prof.frac_bits_data)
    return gen_synthetic(args.synthetic, int(args.n), int(args.d),
                         int(args.seed), prof.frac_bits_data)


def _cert_config(args, tamper=cert.TamperMode.NONE) -> cert.CertConfig:
    backend = Backend.TRANSPARENT if args.insecure_transparent \
        else Backend.MACED
    return cert.CertConfig(
        epsilon=float(args.epsilon), delta=float(args.delta),
        eta=float(args.eta), dist_bound=float(args.capital_d),
        lipschitz=float(args.lipschitz) if args.lipschitz else None,
        profile=args.profile, backend=backend, seed=int(args.seed),
        release_intermediate=bool(args.release_intermediate),
        dealer_mode="inband", tamper=tamper)


def _common_opts(sp, net: bool = False):
    sp.add_argument("--config", help="flat key=value config file")
    sp.add_argument("--epsilon", default=None)
    sp.add_argument("--delta", default=None)
    sp.add_argument("--eta", default=None)
    sp.add_argument("--capital-d", dest="capital_d", default=None,
                    help="distance bound D of the initial point")
    sp.add_argument("--lipschitz", default=None, help="L override")
    sp.add_argument("--profile", default=None,
                    choices=sorted(PROFILES), help="numeric profile")
    sp.add_argument("--seed", default=None)
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--insecure-transparent", action="store_true",
                    help="witness-revealing proof backend (testing only)")
    sp.add_argument("--release-intermediate", action="store_true")
    sp.add_argument("--images", help="IDX images file")
    sp.add_argument("--labels", help="IDX labels file")
    sp.add_argument("--synthetic", default=None,
                    help="separable-logistic | quadratic")
    sp.add_argument("--n", default=None)
    sp.add_argument("--d", default=None)
    if net:
        sp.add_argument("--net", default=None,
                        help="localhost|lan|wan200|wan100|custom:BW:RTT")


_DEFAULTS = {
    "epsilon": "1.0", "delta": "1e-5", "eta": "0.0625", "capital_d": "1.0",
    "profile": "deploy", "seed": "0", "synthetic": "separable-logistic",
    "n": "256", "d": "8", "net": "localhost",
}


def _apply_defaults(args):
    for key, val in _DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, val)
    return args


# -- commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    prof = PROFILES[args.profile]
    data = _dataset_from_args(args, prof)
    loss = scopt.logistic_loss(data.d)
    eta = dpcore.snap_eta_pow2(float(args.eta))
    t0 = time.perf_counter()
    coll = []
    model = scopt.phased_erm(
        data, loss, Model.zeros(data.d, prof.frac_bits_weight), eta,
        float(args.epsilon), float(args.delta),
        np.random.default_rng(int(args.seed)), prof,
        dist_bound=float(args.capital_d), collect=coll)
    elapsed = time.perf_counter() - t0
    if args.out:
        scopt.save_model(model, args.out)
    report = {
        "command": "train", "n": data.n, "d": data.d, "eta": eta,
        "phases": len(coll),
        "point_grad_evals": sum(s.point_grad_evals for _, _, s in coll),
        "elapsed_s": round(elapsed, 3),
        "checkpoint": args.out or "",
        "outcome": "OK",
    }
    _emit(report, args.json)
    return 0


def _run_certify(args, role: str) -> int:
    prof = PROFILES[args.profile]
    cfg = _cert_config(args)
    t0 = time.perf_counter()
    if role == "prover":
        data = _dataset_from_args(args, prof)
        host, port = args.connect.rsplit(":", 1)
        chan = wire.TcpChannel.connect(host, int(port))
        try:
            res = cert.prover_certify(data, cfg, chan)
            outcome, reason = "ACCEPT", ""
        except cert.SessionRejected as e:
            outcome, reason = "REJECT", e.reason
        finally:
            chan.close()
        n, d = data.n, data.d
        counters = {}
    else:
        n, d = int(args.n), int(args.d)
        srv = wire.TcpChannel.listen(args.host, int(args.port))
        chan = wire.TcpChannel.accept(srv)
        vres = cert.verifier_certify(cfg, n, d, chan)
        chan.close()
        srv.close()
        outcome, reason = vres.outcome.value.upper(), vres.reason
        counters = {"grad_checks": vres.transcript.grad_checks,
                    "rvcs_runs": vres.transcript.rvcs_runs}
        if args.transcript and vres.transcript.entries:
            vres.transcript.save(args.transcript)
    report = {
        "command": f"certify-{role}", "n": n, "d": d,
        "outcome": outcome, "reason": reason,
        "elapsed_s": round(time.perf_counter() - t0, 3), **counters,
    }
    _emit(report, args.json)
    return 0 if outcome == "ACCEPT" else 1


def cmd_certify_prove(args) -> int:
    return _run_certify(args, "prover")


def cmd_certify_verify(args) -> int:
    return _run_certify(args, "verifier")


def cmd_unlearn(args) -> int:
    prof = PROFILES[args.profile]
    data = _dataset_from_args(args, prof)
    lam = float(args.lam)
    loss = scopt.logistic_loss(data.d, ridge=lam)
    forget = [int(i) for i in args.forget.split(",")] if args.forget else []
    keep = np.asarray([j for j in range(data.n) if j not in set(forget)])
    retain = data.subset(keep)
    w_c = scopt.load_model(args.model) if args.model \
        else Model.zeros(data.d, prof.frac_bits_weight)
    stats = scopt.SolveStats()
    model = scopt.d2d_unlearn(retain, w_c, loss, float(args.threshold),
                              float(args.epsilon), float(args.delta),
                              np.random.default_rng(int(args.seed)), prof,
                              stats)
    if args.out:
        scopt.save_model(model, args.out)
    report = {
        "command": "unlearn", "retained": retain.n, "forgotten": len(forget),
        "sigma": dpcore.d2d_sigma(float(args.threshold), lam,
                                  float(args.epsilon), float(args.delta)),
        "point_grad_evals": stats.point_grad_evals,
        "checkpoint": args.out or "", "outcome": "OK",
    }
    _emit(report, args.json)
    return 0


def cmd_unlearn_certify(args) -> int:
    prof = PROFILES[args.profile]
    backend = Backend.TRANSPARENT if args.insecure_transparent \
        else Backend.MACED
    cfg = cert.D2dConfig(
        epsilon=float(args.epsilon), delta=float(args.delta),
        lam=float(args.lam), delta_threshold=float(args.threshold),
        profile=args.profile, backend=backend, seed=int(args.seed),
        dealer_mode="inband")
    forget = [int(i) for i in args.forget.split(",")] if args.forget else []
    t0 = time.perf_counter()
    if args.role == "prover":
        data = _dataset_from_args(args, prof)
        host, port = args.connect.rsplit(":", 1)
        chan = wire.TcpChannel.connect(host, int(port))
        try:
            cert.d2d_prover(data, forget, cfg, chan)
            outcome, reason, counters = "ACCEPT", "", {}
        except cert.SessionRejected as e:
            outcome, reason, counters = "REJECT", e.reason, {}
        finally:
            chan.close()
    else:
        srv = wire.TcpChannel.listen(args.host, int(args.port))
        chan = wire.TcpChannel.accept(srv)
        vres = cert.d2d_verifier(cfg, int(args.n), int(args.d), forget, chan)
        chan.close()
        srv.close()
        outcome, reason = vres.outcome.value.upper(), vres.reason
        counters = {"grad_checks": vres.transcript.grad_checks,
                    "rvcs_runs": vres.transcript.rvcs_runs}
    report = {"command": f"unlearn-certify-{args.role}", "outcome": outcome,
              "reason": reason,
              "elapsed_s": round(time.perf_counter() - t0, 3), **counters}
    _emit(report, args.json)
    return 0 if outcome == "ACCEPT" else 1


def cmd_backdoor_demo(args) -> int:
    prof = PROFILES[args.profile]
    data = gen_synthetic("separable-logistic", int(args.n), int(args.d),
                         int(args.seed), prof.frac_bits_data)
    blob = data.serialize()
    seed = int(args.seed)

    def honest(b: bytes) -> bytes:
        ds = Dataset.deserialize(b)
        loss = scopt.logistic_loss(ds.d)
        model = scopt.phased_erm(
            ds, loss, Model.zeros(ds.d, prof.frac_bits_weight), 0.0625,
            1.0, 1e-5, np.random.default_rng(seed), prof)
        return np.asarray(model.w_raw, dtype="<i8").tobytes()

    sk, vk = bd.SignatureScheme.gen()
    trainer_b = bd.plant_training(honest, bd.leak_dataset, vk)

    rng = np.random.default_rng(seed + 1)
    queries = []
    base = bytearray(blob)
    for _ in range(int(args.queries)):
        q = bytearray(base)
        q[-bd.TRIGGER_LEN:] = rng.integers(0, 256, bd.TRIGGER_LEN,
                                           dtype=np.uint8).tobytes()
        queries.append(bytes(q))
    adv = bd.audit_blackbox(honest, trainer_b, queries)

    armed = bd.plant_trigger(blob, sk)
    leak = trainer_b(armed)
    report = {
        "command": "backdoor-demo",
        "queries": len(queries),
        "distinguishing_advantage": adv,
        "activation_leaks_dataset": leak == armed,
        "outcome": "OK" if adv == 0.0 and leak == armed else "FAIL",
    }
    _emit(report, args.json)
    return 0 if report["outcome"] == "OK" else 1


def cmd_sample_noise(args) -> int:
    from scipy import stats as sstats
    prof = PROFILES[args.profile]
    sigma = float(args.sigma)
    count = int(args.count)
    table = gauss.build_density(sigma, prof.tau,
                                grid_frac_bits=prof.frac_bits_data,
                                density_bits=prof.frac_bits_density)
    tree = gauss.build_ky_tree(table)
    dealer = Dealer(PROFILES["test16"].p, seed=int(args.seed))
    outs, _ = gauss.rvcs_batch_transparent(
        PROFILES["test16"].p, dealer, tree, count,
        np.random.default_rng(int(args.seed)),
        np.random.default_rng(int(args.seed) + 1))
    edges = gauss.quantile_partition(table, 256)
    probs = gauss.binned_probs(table, edges)
    counts = gauss.bin_samples(table, edges, outs)
    chi, pval = sstats.chisquare(counts, probs * count)
    tv = 0.5 * float(np.abs(counts / count - probs).sum())
    if args.out:
        np.asarray(outs, dtype="<i8").tofile(args.out)
    report = {
        "command": "sample-noise", "sigma": sigma, "count": count,
        "support": table.size, "chi2": round(float(chi), 2),
        "p_value": float(pval), "tv_binned": tv,
        "outcome": "OK" if pval > 0.001 else "FAIL",
    }
    _emit(report, args.json)
    return 0 if report["outcome"] == "OK" else 1


def cmd_bench(args) -> int:
    from .bench import bench_gradient_scaling, bench_phase_costs, \
        bench_network
    which = args.kind
    report = {"command": "bench", "kind": which}
    if which == "gradient":
        dims = [int(v) for v in args.dims.split(",")]
        rows = bench_gradient_scaling(dims, int(args.count),
                                      args.profile, int(args.seed))
        report["rows"] = rows
        ratios = [round(rows[i + 1]["s_per_gradient"]
                        / rows[i]["s_per_gradient"], 3)
                  for i in range(len(rows) - 1)]
        report["ratios"] = ratios
    elif which == "phase":
        report.update(bench_phase_costs(int(args.n), int(args.d),
                                        args.profile, int(args.seed)))
    elif which == "network":
        report.update(bench_network(int(args.n), int(args.d),
                                    args.profile, int(args.seed)))
    else:
        raise SystemExit(f"unknown bench kind {which!r}")
    _emit(report, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="certdp",
        description="certified DP convex training, unlearning, and demos")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("train", help="local phased-ERM DP training")
    _common_opts(sp)
    sp.add_argument("--out", help="model checkpoint path")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("certify-prove", help="prover endpoint")
    _common_opts(sp, net=True)
    sp.add_argument("--connect", required=True, help="HOST:PORT")
    sp.set_defaults(fn=cmd_certify_prove)

    sp = sub.add_parser("certify-verify", help="verifier endpoint")
    _common_opts(sp, net=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", required=True)
    sp.add_argument("--transcript", help="write the transcript file here")
    sp.set_defaults(fn=cmd_certify_verify)

    sp = sub.add_parser("unlearn", help="local D2D unlearning")
    _common_opts(sp)
    sp.add_argument("--lam", default="0.125", help="strong convexity")
    sp.add_argument("--threshold", default="0.05", help="gradient threshold")
    sp.add_argument("--forget", default="", help="comma-separated indices")
    sp.add_argument("--model", help="checkpoint to start from")
    sp.add_argument("--out", help="model checkpoint path")
    sp.set_defaults(fn=cmd_unlearn)

    sp = sub.add_parser("unlearn-certify", help="certified D2D endpoint")
    _common_opts(sp, net=True)
    sp.add_argument("--role", required=True, choices=("prover", "verifier"))
    sp.add_argument("--lam", default="0.125")
    sp.add_argument("--threshold", default="0.05")
    sp.add_argument("--forget", default="")
    sp.add_argument("--connect", help="HOST:PORT (prover)")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", default="0", help="listen port (verifier)")
    sp.set_defaults(fn=cmd_unlearn_certify)

    sp = sub.add_parser("backdoor-demo",
                        help="black-box undetectable backdoor demo")
    _common_opts(sp)
    sp.add_argument("--queries", default="1000")
    sp.set_defaults(fn=cmd_backdoor_demo)

    sp = sub.add_parser("sample-noise",
                        help="emit RVCS noise samples and a chi-square report")
    _common_opts(sp)
    sp.add_argument("--sigma", default="1.0")
    sp.add_argument("--count", default="100000")
    sp.add_argument("--out", help="raw int64 sample file")
    sp.set_defaults(fn=cmd_sample_noise)

    sp = sub.add_parser("bench", help="scaling and network benchmarks")
    _common_opts(sp, net=True)
    sp.add_argument("--kind", default="gradient",
                    choices=("gradient", "phase", "network"))
    sp.add_argument("--dims", default="512,1024,2048")
    sp.add_argument("--count", default="100")
    sp.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    _merge_config(args)
    _apply_defaults(args)
    try:
        return args.fn(args)
    except (ValueError, OSError, cert.SessionAbort) as e:
        report = {"command": args.cmd, "outcome": "ERROR", "reason": str(e)}
        _emit(report, getattr(args, "json", False))
        return 2


if __name__ == "__main__":
    sys.exit(main())
