"""Interactive certification sessions.

Phased-ERM flow (one session per channel, strict alternation):

  P -> V  HELLO_PARAMS   canonical public-parameter blob
  V -> P  PARAMS_ACK     byte-equal echo (mismatch aborts before commitments)
  P -> V  DATA_COMMIT    commitments to every example and label, labels
                         proven to be +-1
  per phase i:
    P -> V  GRAD_PROOF     commitment to w~_i, weight range proofs, the full
                           fixed-point gradient circuit, squared-norm check
    V -> P  GRAD_VERDICT
    P -> V  COIN_COMMIT    d * depth private coin bits, proven boolean
    V -> P  COIN_REVEAL    d * depth public verifier coins
    P -> V  RVCS_PROOF     committed tree evaluations -> [xi_l]
    V -> P  RVCS_VERDICT
    (both homomorphically compute [w_i] = [w~_i] + 2^shift [xi])
  P -> V  OPEN_FINAL     opening of w_k
  V -> P  ACCEPT | REJECT(reason)

The D2D unlearning session commits the full dataset first, then receives the
forget set, proves the retain-set gradient bound once, and runs d RVCS
executions at the unlearning noise scale.

Both roles drive the same circuit code over their relproof contexts, so the
verifier's checks are bit-for-bit the prover's self-checks. Counters
(gradient checks, RVCS executions) live in the transcript and are recomputed
by `audit_transcript` from frame headers alone.

Tamper modes exist for soundness evaluation: they deviate at the protocol
level without forging MACs, which an honest-keyed verifier rejects
deterministically.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import dpcore, fxp, gauss, scopt
from .commit import Dealer, MacCheckError, ProverStore, VerifierStore
from .fxp import NumericProfile, PROFILES, balanced
from .gauss import KnuthYaoTree, RvcsMode, build_density, build_ky_tree
from .relproof import Backend, ProverCtx, Reject, VerifierCtx
from .scopt import (Dataset, LossKind, LossSpec, Model, RunScales, SolveStats,
                    kappa_coeff, mobius_coeffs, ridge_coeff, sigmoid_pieces)
from .wire import Frame, Msg, pack_bits, pack_residues, unpack_bits, \
    unpack_residues

PROTO_VERSION = "certdp/1"
FINAL_PHASE = 0xFFFFFFFF


class TamperMode(Enum):
    NONE = "none"
    THRESHOLD = "threshold"          # gradient threshold violated ~1.1x
    WRONG_CHUNK = "wrong_chunk"      # gradient computed on other examples
    ZERO_NOISE = "zero_noise"        # RVCS outputs forced to zero
    REUSE_NOISE = "reuse_noise"      # RVCS outputs copied across coordinates
    WRONG_SIGMA = "wrong_sigma"      # prover samples at sigma/2


class Outcome(Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    ABORT = "abort"


class SessionRejected(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class SessionAbort(Exception):
    pass


@dataclass
class CertConfig:
    epsilon: float
    delta: float
    eta: float
    lipschitz: float | None = None     # default sqrt(d)
    dist_bound: float = 1.0
    profile: str = "deploy"
    backend: Backend = Backend.MACED
    seed: int = 0
    release_intermediate: bool = False
    dealer_mode: str = "trusted"       # trusted | inband
    w0: np.ndarray | None = None       # public initial parameter (raw floats)
    tamper: TamperMode = TamperMode.NONE

    def prof(self) -> NumericProfile:
        return PROFILES[self.profile]

    def rvcs_mode(self) -> RvcsMode:
        return RvcsMode.PATH if self.backend is Backend.TRANSPARENT \
            else RvcsMode.FULL_LAYER


@dataclass
class D2dConfig:
    epsilon: float
    delta: float
    lam: float
    delta_threshold: float
    profile: str = "deploy"
    backend: Backend = Backend.MACED
    seed: int = 0
    dealer_mode: str = "trusted"
    tamper: TamperMode = TamperMode.NONE


@dataclass
class Transcript:
    entries: list = field(default_factory=list)   # (dir, type, payload)
    digests: list = field(default_factory=list)
    grad_checks: int = 0
    rvcs_runs: int = 0
    phases_completed: int = 0
    outcome: Outcome | None = None
    reject_reason: str = ""

    def record(self, direction: str, msg_type: int, payload: bytes):
        prev = self.digests[-1] if self.digests else b"\x00" * 32
        h = hashlib.sha256(prev + bytes([direction == "v2p"])
                           + struct.pack("<H", msg_type) + payload).digest()
        self.entries.append((direction, msg_type, payload))
        self.digests.append(h)

    @property
    def final_digest(self) -> bytes:
        return self.digests[-1] if self.digests else b"\x00" * 32

    def save(self, path: str):
        with open(path, "wb") as f:
            f.write(b"CDPT" + struct.pack("<H", 1))
            for (direction, mtype, payload), dig in zip(self.entries,
                                                        self.digests):
                wire_type = mtype | (0x8000 if direction == "v2p" else 0)
                f.write(struct.pack("<IH", len(payload), wire_type))
                f.write(payload)
                f.write(dig)

    @staticmethod
    def load(path: str) -> "Transcript":
        t = Transcript()
        with open(path, "rb") as f:
            if f.read(4) != b"CDPT":
                raise ValueError("bad transcript magic")
            (ver,) = struct.unpack("<H", f.read(2))
            if ver != 1:
                raise ValueError("unsupported transcript version")
            while True:
                head = f.read(6)
                if not head:
                    break
                length, wire_type = struct.unpack("<IH", head)
                payload = f.read(length)
                stored = f.read(32)
                direction = "v2p" if wire_type & 0x8000 else "p2v"
                t.record(direction, wire_type & 0x7FFF, payload)
                if t.digests[-1] != stored:
                    raise ValueError("transcript hash chain broken")
        return t


# -- canonical parameter blobs ---------------------------------------------------

def _phase_params_blob(cfg: CertConfig, n: int, d: int) -> bytes:
    loss = _loss_for(cfg, d)
    sched = dpcore.phase_schedule(n, d, cfg.eta, loss.lipschitz,
                                  cfg.epsilon, cfg.delta)
    sc = scopt.derive_scales(cfg.prof(), n, d, cfg.eta, loss, sched.k_calib)
    lines = [
        f"proto={PROTO_VERSION}", "mode=phases",
        f"profile={cfg.profile}", f"backend={cfg.backend.value}",
        f"n={n}", f"d={d}", f"eta={cfg.eta!r}",
        f"L={loss.lipschitz:.12g}", f"H={loss.smoothness:.12g}",
        f"epsilon={cfg.epsilon!r}", f"delta={cfg.delta!r}",
        f"fb_w={sc.fb_w}", f"fb_g={sc.fb_g}",
        f"w0={_w0_text(cfg, d, sc)}",
        f"release_intermediate={int(cfg.release_intermediate)}",
        "schedule:", dpcore.schedule_to_text(sched),
    ]
    return "\n".join(lines).encode()


def _d2d_params_blob(cfg: D2dConfig, n: int, d: int) -> bytes:
    lines = [
        f"proto={PROTO_VERSION}", "mode=d2d",
        f"profile={cfg.profile}", f"backend={cfg.backend.value}",
        f"n={n}", f"d={d}", f"lambda={cfg.lam!r}",
        f"Delta={cfg.delta_threshold!r}",
        f"epsilon={cfg.epsilon!r}", f"delta={cfg.delta!r}",
    ]
    return "\n".join(lines).encode()


def _w0_text(cfg: CertConfig, d: int, sc: RunScales) -> str:
    raws = _w0_raws(cfg, d, sc)
    return ",".join(str(int(v)) for v in raws)


def _w0_raws(cfg: CertConfig, d: int, sc: RunScales) -> np.ndarray:
    if cfg.w0 is None:
        return np.zeros(d, dtype=np.int64)
    return fxp.encode_array(np.asarray(cfg.w0, dtype=np.float64), sc.fb_w)


def _loss_for(cfg: CertConfig, d: int) -> LossSpec:
    if cfg.lipschitz is not None:
        return LossSpec(LossKind.LOGISTIC_L2, cfg.lipschitz, d / 4.0)
    return scopt.logistic_loss(d)


# -- endpoint plumbing -------------------------------------------------------------

_DEALER_AUTH, _DEALER_TRIP = 1, 2


class _DealerClient:
    """Prover-side dealer facade fetching correlation blocks in-band."""

    def __init__(self, endpoint, width: int):
        self.ep = endpoint
        self.width = width
        self._auth = []
        self._trip = []
        self.global_key = None    # never known to the prover

    def _fetch(self, kind: int, count: int):
        req = struct.pack("<BI", kind, count)
        self.ep.send(Msg.DEALER_REQ, req)
        frame = self.ep.expect(Msg.DEALER_RESP)
        vals = unpack_residues(frame.payload, self.width)
        if kind == _DEALER_AUTH:
            self._auth.extend(zip(vals[0::2], vals[1::2]))
        else:
            self._trip.extend(zip(vals[0::6], vals[1::6], vals[2::6],
                                  vals[3::6], vals[4::6], vals[5::6]))

    def prover_auth(self, count: int):
        if len(self._auth) < count:
            self._fetch(_DEALER_AUTH, max(count - len(self._auth), 1024))
        out, self._auth = self._auth[:count], self._auth[count:]
        return out

    def prover_triples(self, count: int):
        if len(self._trip) < count:
            self._fetch(_DEALER_TRIP, max(count - len(self._trip), 512))
        out, self._trip = self._trip[:count], self._trip[count:]
        return out


class _Endpoint:
    def __init__(self, channel, session_id: int, transcript: Transcript,
                 direction: str):
        self.chan = channel
        self.sid = session_id
        self.transcript = transcript
        self._dir_out = direction

    def send(self, msg_type: int, payload: bytes = b""):
        self.transcript.record(self._dir_out, msg_type, payload)
        self.chan.send(Frame(msg_type, self.sid, payload))

    def recv(self) -> Frame:
        frame = self.chan.recv()
        other = "v2p" if self._dir_out == "p2v" else "p2v"
        self.transcript.record(other, frame.msg_type, frame.payload)
        return frame

    def expect(self, msg_type: int) -> Frame:
        frame = self.recv()
        if frame.msg_type == Msg.REJECT:
            raise SessionRejected(frame.payload.decode("utf-8", "replace"))
        if frame.msg_type != msg_type:
            raise SessionAbort(
                f"expected {Msg(msg_type).name}, got {frame.msg_type}")
        return frame


# -- the committed gradient circuit (runs on either ctx) ---------------------------

def committed_grad_check(ctx, sc: RunScales, x_hs, y_hs, w_hs, wprev_hs,
                         kcoeff: int, rcoeff: int, bound: int):
    """Commit-and-prove evaluation of the fixed-point sum-gradient circuit:
    margins, truncation, clamp flags, piece-indexed cubic sigmoid, products,
    aggregation, per-coordinate gradient ranges, and the squared-norm bound.
    Mirrors scopt.chunk_grad_sum exactly on honest inputs."""
    p = ctx.p
    d = len(w_hs)
    n = len(y_hs)
    prover = isinstance(ctx, ProverCtx)
    pieces = sigmoid_pieces(sc.fb_u)
    mu = mobius_coeffs(pieces)
    fb_m, fb_u = sc.fb_m, sc.fb_u
    S = sc.clamp_raw
    one_u = 1 << fb_u

    def wit(fn):
        return ctx.commit_witness(fn() if prover else None)

    # committed weights live inside the proven box [-W, W]
    w_off = sc.weight_bound << sc.fb_w
    for h in w_hs:
        ctx.range_check(ctx.add_public(w_off, h), sc.weight_bits)

    g_cols = [[] for _ in range(d)]
    for j in range(n):
        dots = ctx.mul_vec([(w_hs[c], x_hs[j][c]) for c in range(d)])
        dot = ctx.lincomb([1] * d, dots)
        ym = ctx.mul(y_hs[j], dot)
        m = ctx.rescale_trunc(ym, sc.margin_shift)
        mv = balanced(ctx.st.vals[m], p) if prover else None
        h_b = wit(lambda: 1 if mv >= S else 0)
        l_b = wit(lambda: 1 if mv <= -S else 0)
        sq = ctx.mul_vec([(h_b, h_b), (l_b, l_b), (h_b, l_b)])
        ctx.assert_zero_vec([ctx.sub(sq[0], h_b), ctx.sub(sq[1], l_b), sq[2]])
        t_h = ctx.mul(h_b, ctx.add_public(-(S - 1), m))
        t_l = ctx.mul(l_b, ctx.add_public(S, m))
        m_c = ctx.lincomb([1, -1, -1], [m, t_h, t_l])
        # clamp validity: m + S - 2S h - 2 t_l >= 0 in every flag case
        r_val = ctx.lincomb([1, -2 * S, -2], [m, h_b, t_l], S)
        ctx.range_check(r_val, sc.clamp_bits)
        offs = ctx.add_public(S, m_c)
        ov = balanced(ctx.st.vals[offs], p) if prover else None
        b_hs = [wit(lambda g=g: (ov >> (fb_m + g)) & 1)
                for g in range(scopt.IDX_BITS)]
        bsq = ctx.mul_vec([(b, b) for b in b_hs])
        ctx.assert_zero_vec([ctx.sub(s, b) for s, b in zip(bsq, b_hs)])
        rem = ctx.lincomb(
            [1] + [-(1 << (fb_m + g)) for g in range(scopt.IDX_BITS)],
            [offs] + b_hs)
        ctx.range_check(rem, fb_m)
        zeta = ctx.add_public(-(1 << (fb_m - 1)), rem)
        # multilinear piece-coefficient selection over the index bits
        b0, b1, b2, b3 = b_hs
        m01 = ctx.mul(b0, b1)
        m02 = ctx.mul(b0, b2)
        m03 = ctx.mul(b0, b3)
        m12 = ctx.mul(b1, b2)
        m13 = ctx.mul(b1, b3)
        m23 = ctx.mul(b2, b3)
        m012 = ctx.mul(m01, b2)
        m013 = ctx.mul(m01, b3)
        m023 = ctx.mul(m02, b3)
        m123 = ctx.mul(m12, b3)
        m0123 = ctx.mul(m012, b3)
        subset_handles = {
            0b0001: b0, 0b0010: b1, 0b0100: b2, 0b1000: b3,
            0b0011: m01, 0b0101: m02, 0b1001: m03, 0b0110: m12,
            0b1010: m13, 0b1100: m23, 0b0111: m012, 0b1011: m013,
            0b1101: m023, 0b1110: m123, 0b1111: m0123,
        }
        masks = sorted(subset_handles)
        c_sel = [ctx.lincomb([mu[g][mk] for mk in masks],
                             [subset_handles[mk] for mk in masks],
                             mu[g][0])
                 for g in range(4)]
        h1 = ctx.rescale_trunc(ctx.mul(c_sel[3], zeta), fb_m)
        a2 = ctx.add(h1, c_sel[2])
        h2 = ctx.rescale_trunc(ctx.mul(a2, zeta), fb_m)
        a3 = ctx.add(h2, c_sel[1])
        h3 = ctx.rescale_trunc(ctx.mul(a3, zeta), fb_m)
        u_poly = ctx.add(h3, c_sel[0])
        v_h = ctx.mul(h_b, u_poly)
        v_l = ctx.mul(l_b, u_poly)
        u = ctx.lincomb([1, -1, -1, one_u], [u_poly, v_h, v_l, h_b])
        s_h = ctx.mul(y_hs[j], u)
        wcoef = ctx.lincomb([1, -one_u], [s_h, y_hs[j]])
        prods = ctx.mul_vec([(wcoef, x_hs[j][c]) for c in range(d)])
        for c in range(d):
            g_cols[c].append(prods[c])

    gs = 1 << sc.g_shift
    g_hs = []
    for c in range(d):
        coeffs = [gs] * n
        handles = list(g_cols[c])
        if kcoeff:
            coeffs += [kcoeff, -kcoeff]
            handles += [w_hs[c], wprev_hs[c]]
        if rcoeff:
            coeffs += [rcoeff]
            handles += [w_hs[c]]
        g_hs.append(ctx.lincomb(coeffs, handles))
    gamma = sc.grad_range_bits(p, bound)
    for gh in g_hs:
        ctx.range_check(ctx.add_public(1 << gamma, gh), gamma + 1)
    ctx.sqnorm_le(g_hs, bound, bound.bit_length() + 1)


# -- phased-ERM prover ---------------------------------------------------------------

@dataclass
class ProverResult:
    model: Model
    transcript: Transcript
    stats: list
    lies: int = 0       # actual protocol deviations by the tamper harness


def prover_certify(data: Dataset, cfg: CertConfig, channel,
                   dealer: Dealer | None = None,
                   session_id: int = 1) -> ProverResult:
    n, d = data.n, data.d
    prof = cfg.prof()
    loss = _loss_for(cfg, d)
    sched = dpcore.phase_schedule(n, d, cfg.eta, loss.lipschitz,
                                  cfg.epsilon, cfg.delta)
    sc = scopt.derive_scales(prof, n, d, cfg.eta, loss, sched.k_calib)
    ep = _Endpoint(channel, session_id, Transcript(), "p2v")
    blob = _phase_params_blob(cfg, n, d)
    ep.send(Msg.HELLO_PARAMS, blob)
    ack = ep.expect(Msg.PARAMS_ACK)
    if ack.payload != blob:
        raise SessionAbort("parameter negotiation mismatch")

    p = prof.p
    width = prof.residue_bytes
    if dealer is None:
        dealer = _DealerClient(ep, width)
    store = ProverStore(p, dealer)
    rng = np.random.default_rng(cfg.seed)

    def flush(msg_type, pc, header=b""):
        ep.send(msg_type, header + pack_residues(pc.out, width))
        pc.out.clear()

    pc = ProverCtx(store, dealer, cfg.backend)

    # data commitment, labels proven to be +-1
    x_flat = [int(v) % p for row in data.x_raw for v in row]
    xh_flat = pc.commit_witness_vec(x_flat)
    x_hs = [xh_flat[j * d:(j + 1) * d] for j in range(n)]
    y_hs = pc.commit_witness_vec([int(v) % p for v in data.y])
    ysq = pc.mul_vec([(h, h) for h in y_hs])
    pc.assert_zero_vec([pc.add_public(-1, h) for h in ysq])
    flush(Msg.DATA_COMMIT, pc)
    ep.expect(Msg.GRAD_VERDICT)

    w0_raws = _w0_raws(cfg, d, sc)
    w_prev = Model(w0_raws.copy(), sc.fb_w)
    wprev_hs = [pc.const(int(v) % p) for v in w0_raws]
    shift = sc.fb_w - sc.fb_x
    bound = scopt.threshold_bound(sched.lipschitz, sched.k_calib, sc)
    stats_out = []
    w_final_hs = None
    lies = 0

    for ph in sched.phases:
        chunk = data.subset(slice(ph.chunk_lo, ph.chunk_hi))
        tilde, stats = scopt.solve_phase(chunk, w_prev, ph, loss, sc,
                                         sched.k_calib, sched.lipschitz,
                                         cfg.dist_bound)
        stats_out.append(stats)
        if cfg.tamper is TamperMode.THRESHOLD:
            tilde = _violate_threshold(chunk, tilde, w_prev, ph, sc,
                                       sched, bound)
            lies += 1
        w_hs = pc.commit_witness_vec([int(v) % p for v in tilde.w_raw])
        kc = kappa_coeff(ph.eta_i, sc)
        cheat_chunk = x_hs[ph.chunk_lo:ph.chunk_hi]
        if cfg.tamper is TamperMode.WRONG_CHUNK and ph.chunk_lo > 0:
            cheat_chunk = x_hs[0:ph.n_i]   # reuse phase-1 examples
            lies += 1
        committed_grad_check(pc, sc, cheat_chunk,
                             y_hs[ph.chunk_lo:ph.chunk_hi], w_hs, wprev_hs,
                             kc, 0, bound)
        flush(Msg.GRAD_PROOF, pc, struct.pack("<II", ph.i, ph.n_i))
        ep.expect(Msg.GRAD_VERDICT)

        # RVCS: commit coins, receive public coins, prove tree evaluations
        sigma = ph.sigma_i
        if cfg.tamper is TamperMode.WRONG_SIGMA:
            sigma = ph.sigma_i * 0.5
            lies += 1
        table = build_density(sigma, prof.tau,
                              grid_frac_bits=prof.frac_bits_data,
                              density_bits=prof.frac_bits_density)
        tree = build_ky_tree(table)
        depth = tree.depth
        rp = gauss.rvcs_commit_coins(pc, depth, d, rng)
        flush(Msg.COIN_COMMIT, pc)
        rv_frame = ep.expect(Msg.COIN_REVEAL)
        rv_bits = unpack_bits(rv_frame.payload, d * depth)
        xi_hs = []
        prev_xi_val = None
        for l in range(d):
            force = None
            if cfg.tamper is TamperMode.ZERO_NOISE:
                force = 0
            elif cfg.tamper is TamperMode.REUSE_NOISE and l > 0:
                force = prev_xi_val
            h, lied = _rvcs_with_force(pc, tree, rp[l],
                                       rv_bits[l * depth:(l + 1) * depth],
                                       cfg.rvcs_mode(), force)
            lies += int(lied)
            prev_xi_val = balanced(pc.st.vals[h], p)
            xi_hs.append(h)
        flush(Msg.RVCS_PROOF, pc, struct.pack("<I", d))
        ep.expect(Msg.RVCS_VERDICT)

        w_next_hs = [pc.add(w_hs[c], pc.scalar_mul(1 << shift, xi_hs[c]))
                     for c in range(d)]
        w_next_raw = np.array(
            [balanced(pc.st.vals[h], p) for h in w_next_hs], dtype=np.int64)
        w_prev = Model(w_next_raw, sc.fb_w)
        wprev_hs = w_next_hs
        w_final_hs = w_next_hs
        if cfg.release_intermediate:
            pc.open_vec(w_next_hs)
            flush(Msg.OPEN_FINAL, pc, struct.pack("<I", ph.i))
            ep.expect(Msg.GRAD_VERDICT)
        n_off += ph.n_i

    pc.open_vec(w_final_hs)
    flush(Msg.OPEN_FINAL, pc, struct.pack("<I", FINAL_PHASE))
    ep.expect(Msg.ACCEPT)
    ep.transcript.outcome = Outcome.ACCEPT
    return ProverResult(w_prev, ep.transcript, stats_out, lies)


def _violate_threshold(chunk, tilde: Model, w_prev: Model, ph, sc,
                       sched, bound: int) -> Model:
    """Perturb the solved weights until the circuit value exceeds the bound
    by ~1.21x (norm violated by ~1.1x); proof plumbing stays honest."""
    kc = kappa_coeff(ph.eta_i, sc)
    w_bad = tilde.w_raw.copy()
    step = max(1, int(round((1 << sc.fb_w)
                            * float(np.sqrt(bound)) / (1 << sc.fb_g)
                            * ph.eta_i / 4)))
    for _ in range(4000):
        _, _, total = scopt.circuit_check(chunk, w_bad, w_prev.w_raw, kc,
                                          bound, sc)
        if total > bound * 1.21:
            return Model(w_bad, sc.fb_w)
        w_bad[0] += step
    raise SessionAbort("tamper harness could not inflate the gradient")


def _rvcs_with_force(pc: ProverCtx, tree: KnuthYaoTree, rp, rv_bits,
                     mode: RvcsMode, force_value):
    """Honest RVCS, or one where the prover lies in the root select to force
    the committed output value (never forging MACs). Returns (handle, lied):
    when the honest walk already lands on the forced value there is no
    deviation and nothing for the verifier to catch."""
    mixed = gauss.mix_coins(pc, rp, rv_bits)
    if force_value is None or tree.root_leaf is not None:
        return gauss.rvcs_select(pc, tree, mixed, mode), False
    bits = [balanced(pc.st.vals[h], pc.p) & 1 for h in mixed]
    honest = gauss.sample_local(tree, bits) % pc.p
    lied = honest != force_value % pc.p
    if mode is RvcsMode.PATH:
        # transparent path mode recomputes the walk; lie on the output commit
        pc.open_vec(mixed)
        out = pc.commit_witness(force_value % pc.p)
        pc.open(out)
        return out, lied
    return gauss.rvcs_select(pc, tree, mixed, mode,
                             force_output=force_value), lied


# -- phased-ERM verifier ---------------------------------------------------------------

@dataclass
class VerifyResult:
    outcome: Outcome
    reason: str
    model: Model | None
    transcript: Transcript


def verifier_certify(cfg: CertConfig, n: int, d: int, channel,
                     dealer: Dealer | None = None,
                     session_id: int = 1) -> VerifyResult:
    prof = cfg.prof()
    loss = _loss_for(cfg, d)
    sched = dpcore.phase_schedule(n, d, cfg.eta, loss.lipschitz,
                                  cfg.epsilon, cfg.delta)
    sc = scopt.derive_scales(prof, n, d, cfg.eta, loss, sched.k_calib)
    ep = _Endpoint(channel, session_id, Transcript(), "v2p")
    p = prof.p
    width = prof.residue_bytes
    if dealer is None:
        dealer = Dealer(p, cfg.seed + 0x5EED)
    store = VerifierStore(p, dealer)
    vc = VerifierCtx(store, dealer, cfg.backend)
    rng = np.random.default_rng(cfg.seed + 1)
    t = ep.transcript

    def expect_serving(msg_type) -> Frame:
        while True:
            frame = ep.recv()
            if frame.msg_type == Msg.DEALER_REQ:
                _serve_dealer(ep, dealer, frame, width)
                continue
            if frame.msg_type != msg_type:
                raise SessionAbort(f"unexpected frame {frame.msg_type}")
            return frame

    def reject(reason: str) -> VerifyResult:
        ep.send(Msg.REJECT, reason.encode())
        t.outcome = Outcome.REJECT
        t.reject_reason = reason
        return VerifyResult(Outcome.REJECT, reason, None, t)

    try:
        hello = expect_serving(Msg.HELLO_PARAMS)
        expected = _phase_params_blob(cfg, n, d)
        if hello.payload != expected:
            ep.send(Msg.REJECT, b"parameter negotiation mismatch")
            t.outcome = Outcome.ABORT
            return VerifyResult(Outcome.ABORT, "params mismatch", None, t)
        ep.send(Msg.PARAMS_ACK, expected)

        frame = expect_serving(Msg.DATA_COMMIT)
        vc.feed(unpack_residues(frame.payload, width))
        xh_flat = vc.commit_witness_vec(count=n * d)
        x_hs = [xh_flat[j * d:(j + 1) * d] for j in range(n)]
        y_hs = vc.commit_witness_vec(count=n)
        ysq = vc.mul_vec([(h, h) for h in y_hs])
        vc.assert_zero_vec([vc.add_public(-1, h) for h in ysq])
        vc.done()
        ep.send(Msg.GRAD_VERDICT)

        w0_raws = _w0_raws(cfg, d, sc)
        wprev_hs = [vc.const(int(v) % p) for v in w0_raws]
        shift = sc.fb_w - sc.fb_x
        bound = scopt.threshold_bound(sched.lipschitz, sched.k_calib, sc)

        for ph in sched.phases:
            frame = expect_serving(Msg.GRAD_PROOF)
            idx, n_i = struct.unpack("<II", frame.payload[:8])
            if idx != ph.i or n_i != ph.n_i:
                return reject(f"phase {ph.i}: header mismatch")
            vc.feed(unpack_residues(frame.payload[8:], width))
            w_hs = vc.commit_witness_vec(count=d)
            kc = kappa_coeff(ph.eta_i, sc)
            try:
                committed_grad_check(vc, sc, x_hs[ph.chunk_lo:ph.chunk_hi],
                                     y_hs[ph.chunk_lo:ph.chunk_hi],
                                     w_hs, wprev_hs, kc, 0, bound)
                vc.done()
            except Reject as r:
                return reject(f"phase {ph.i}: gradient proof: {r.reason}")
            t.grad_checks += ph.n_i
            ep.send(Msg.GRAD_VERDICT)

            table = build_density(ph.sigma_i, prof.tau,
                                  grid_frac_bits=prof.frac_bits_data,
                                  density_bits=prof.frac_bits_density)
            tree = build_ky_tree(table)
            depth = tree.depth
            frame = expect_serving(Msg.COIN_COMMIT)
            vc.feed(unpack_residues(frame.payload, width))
            try:
                rp = gauss.rvcs_commit_coins(vc, depth, d)
                vc.done()
            except Reject as r:
                return reject(f"phase {ph.i}: coin commit: {r.reason}")
            rv = [int(b) for b in rng.integers(0, 2, d * depth)]
            ep.send(Msg.COIN_REVEAL, pack_bits(rv))
            frame = expect_serving(Msg.RVCS_PROOF)
            (cnt,) = struct.unpack("<I", frame.payload[:4])
            if cnt != d:
                return reject(f"phase {ph.i}: rvcs count mismatch")
            vc.feed(unpack_residues(frame.payload[4:], width))
            xi_hs = []
            try:
                for l in range(d):
                    xi_hs.append(gauss.rvcs_run(
                        vc, tree, rp[l], rv[l * depth:(l + 1) * depth],
                        cfg.rvcs_mode()))
                vc.done()
            except Reject as r:
                return reject(f"phase {ph.i}: rvcs: {r.reason}")
            t.rvcs_runs += d
            ep.send(Msg.RVCS_VERDICT)

            wprev_hs = [vc.add(w_hs[c], vc.scalar_mul(1 << shift, xi_hs[c]))
                        for c in range(d)]
            t.phases_completed += 1
            if cfg.release_intermediate:
                frame = expect_serving(Msg.OPEN_FINAL)
                vc.feed(unpack_residues(frame.payload[4:], width))
                try:
                    vc.open_vec(wprev_hs)
                    vc.done()
                except Reject as r:
                    return reject(f"phase {ph.i}: open: {r.reason}")
                ep.send(Msg.GRAD_VERDICT)

        frame = expect_serving(Msg.OPEN_FINAL)
        (tag,) = struct.unpack("<I", frame.payload[:4])
        if tag != FINAL_PHASE:
            return reject("expected final opening")
        vc.feed(unpack_residues(frame.payload[4:], width))
        try:
            vals = vc.open_vec(wprev_hs)
            vc.done()
        except Reject as r:
            return reject(f"final opening: {r.reason}")
        w_raw = np.array([balanced(v, p) for v in vals], dtype=np.int64)
        ep.send(Msg.ACCEPT)
        t.outcome = Outcome.ACCEPT
        return VerifyResult(Outcome.ACCEPT, "", Model(w_raw, sc.fb_w), t)
    except (SessionAbort, MacCheckError) as e:
        t.outcome = Outcome.ABORT
        return VerifyResult(Outcome.ABORT, str(e), None, t)


def _serve_dealer(ep: _Endpoint, dealer: Dealer, frame: Frame, width: int):
    kind, count = struct.unpack("<BI", frame.payload)
    if kind == _DEALER_AUTH:
        pairs = dealer.prover_auth(count)
        flat = [v for pair in pairs for v in pair]
    else:
        trips = dealer.prover_triples(count)
        flat = [v for tr in trips for v in tr]
    ep.send(Msg.DEALER_RESP, pack_residues(flat, width))


# -- D2D certification -------------------------------------------------------------

def d2d_prover(data: Dataset, forget_idx, cfg: D2dConfig, channel,
               dealer: Dealer | None = None, w_current: Model | None = None,
               session_id: int = 2) -> ProverResult:
    """Unlearning prover: commits all of D up front, receives the forget set,
    proves the retain-set gradient bound, runs d RVCS executions."""
    n, d = data.n, data.d
    prof = PROFILES[cfg.profile]
    loss = scopt.logistic_loss(d, ridge=cfg.lam)
    sc = scopt.d2d_scales(prof, d, cfg.lam)
    ep = _Endpoint(channel, session_id, Transcript(), "p2v")
    blob = _d2d_params_blob(cfg, n, d)
    ep.send(Msg.HELLO_PARAMS, blob)
    if ep.expect(Msg.PARAMS_ACK).payload != blob:
        raise SessionAbort("parameter negotiation mismatch")
    p = prof.p
    width = prof.residue_bytes
    if dealer is None:
        dealer = _DealerClient(ep, width)
    store = ProverStore(p, dealer)
    pc = ProverCtx(store, dealer, cfg.backend)
    rng = np.random.default_rng(cfg.seed)

    def flush(msg_type, header=b""):
        ep.send(msg_type, header + pack_residues(pc.out, width))
        pc.out.clear()

    x_flat = [int(v) % p for row in data.x_raw for v in row]
    xh_flat = pc.commit_witness_vec(x_flat)
    x_hs = [xh_flat[j * d:(j + 1) * d] for j in range(n)]
    y_hs = pc.commit_witness_vec([int(v) % p for v in data.y])
    ysq = pc.mul_vec([(h, h) for h in y_hs])
    pc.assert_zero_vec([pc.add_public(-1, h) for h in ysq])
    flush(Msg.DATA_COMMIT)
    ep.expect(Msg.GRAD_VERDICT)

    forget_frame = ep.expect(Msg.FORGET_SET)
    forget = sorted(struct.unpack(f"<{len(forget_frame.payload)//4}I",
                                  forget_frame.payload))
    if forget != sorted(int(i) for i in forget_idx):
        raise SessionAbort("forget set mismatch")
    retain_idx = [j for j in range(n) if j not in set(forget)]
    retain = data.subset(np.asarray(retain_idx, dtype=np.int64))

    stats = SolveStats()
    start = w_current or Model.zeros(d, sc.fb_w)
    tilde = scopt._d2d_solve(retain, start, loss, cfg.delta_threshold, sc,
                             stats)
    bound = scopt.d2d_bound(cfg.delta_threshold, len(retain_idx), sc)
    rc = ridge_coeff(cfg.lam, len(retain_idx), sc)
    proof_idx = list(retain_idx)
    if cfg.tamper is TamperMode.WRONG_CHUNK and forget:
        proof_idx[0] = forget[0]     # smuggle a forgotten example back in
    w_hs = pc.commit_witness_vec([int(v) % p for v in tilde.w_raw])
    committed_grad_check(pc, sc, [x_hs[j] for j in proof_idx],
                         [y_hs[j] for j in proof_idx], w_hs, None, 0, rc,
                         bound)
    flush(Msg.GRAD_PROOF, struct.pack("<II", 0, len(proof_idx)))
    ep.expect(Msg.GRAD_VERDICT)

    sigma = dpcore.d2d_sigma(cfg.delta_threshold, cfg.lam, cfg.epsilon,
                             cfg.delta)
    table = build_density(sigma, prof.tau,
                          grid_frac_bits=prof.frac_bits_data,
                          density_bits=prof.frac_bits_density)
    tree = build_ky_tree(table)
    depth = tree.depth
    rp = gauss.rvcs_commit_coins(pc, depth, d, rng)
    flush(Msg.COIN_COMMIT)
    rv_bits = unpack_bits(ep.expect(Msg.COIN_REVEAL).payload, d * depth)
    mode = RvcsMode.PATH if cfg.backend is Backend.TRANSPARENT \
        else RvcsMode.FULL_LAYER
    xi_hs = [gauss.rvcs_run(pc, tree, rp[l],
                            rv_bits[l * depth:(l + 1) * depth], mode)
             for l in range(d)]
    flush(Msg.RVCS_PROOF, struct.pack("<I", d))
    ep.expect(Msg.RVCS_VERDICT)

    shift = sc.fb_w - sc.fb_x
    wu_hs = [pc.add(w_hs[c], pc.scalar_mul(1 << shift, xi_hs[c]))
             for c in range(d)]
    pc.open_vec(wu_hs)
    flush(Msg.OPEN_FINAL, struct.pack("<I", FINAL_PHASE))
    ep.expect(Msg.ACCEPT)
    ep.transcript.outcome = Outcome.ACCEPT
    w_raw = np.array([balanced(pc.st.vals[h], p) for h in wu_hs],
                     dtype=np.int64)
    return ProverResult(Model(w_raw, sc.fb_w), ep.transcript, [stats])


def d2d_verifier(cfg: D2dConfig, n: int, d: int, forget_idx, channel,
                 dealer: Dealer | None = None,
                 session_id: int = 2) -> VerifyResult:
    prof = PROFILES[cfg.profile]
    sc = scopt.d2d_scales(prof, d, cfg.lam)
    ep = _Endpoint(channel, session_id, Transcript(), "v2p")
    p = prof.p
    width = prof.residue_bytes
    if dealer is None:
        dealer = Dealer(p, cfg.seed + 0xD2D)
    store = VerifierStore(p, dealer)
    vc = VerifierCtx(store, dealer, cfg.backend)
    rng = np.random.default_rng(cfg.seed + 1)
    t = ep.transcript
    mode = RvcsMode.PATH if cfg.backend is Backend.TRANSPARENT \
        else RvcsMode.FULL_LAYER

    def expect_serving(msg_type) -> Frame:
        while True:
            frame = ep.recv()
            if frame.msg_type == Msg.DEALER_REQ:
                _serve_dealer(ep, dealer, frame, width)
                continue
            if frame.msg_type != msg_type:
                raise SessionAbort(f"unexpected frame {frame.msg_type}")
            return frame

    def reject(reason: str) -> VerifyResult:
        ep.send(Msg.REJECT, reason.encode())
        t.outcome = Outcome.REJECT
        t.reject_reason = reason
        return VerifyResult(Outcome.REJECT, reason, None, t)

    try:
        hello = expect_serving(Msg.HELLO_PARAMS)
        expected = _d2d_params_blob(cfg, n, d)
        if hello.payload != expected:
            ep.send(Msg.REJECT, b"parameter negotiation mismatch")
            t.outcome = Outcome.ABORT
            return VerifyResult(Outcome.ABORT, "params mismatch", None, t)
        ep.send(Msg.PARAMS_ACK, expected)

        frame = expect_serving(Msg.DATA_COMMIT)
        vc.feed(unpack_residues(frame.payload, width))
        xh_flat = vc.commit_witness_vec(count=n * d)
        x_hs = [xh_flat[j * d:(j + 1) * d] for j in range(n)]
        y_hs = vc.commit_witness_vec(count=n)
        ysq = vc.mul_vec([(h, h) for h in y_hs])
        vc.assert_zero_vec([vc.add_public(-1, h) for h in ysq])
        vc.done()
        ep.send(Msg.GRAD_VERDICT)

        forget = sorted(int(i) for i in forget_idx)
        ep.send(Msg.FORGET_SET, struct.pack(f"<{len(forget)}I", *forget))
        retain_idx = [j for j in range(n) if j not in set(forget)]
        bound = scopt.d2d_bound(cfg.delta_threshold, len(retain_idx), sc)
        rc = ridge_coeff(cfg.lam, len(retain_idx), sc)

        frame = expect_serving(Msg.GRAD_PROOF)
        _, cnt = struct.unpack("<II", frame.payload[:8])
        if cnt != len(retain_idx):
            return reject("retain-set size mismatch")
        vc.feed(unpack_residues(frame.payload[8:], width))
        w_hs = vc.commit_witness_vec(count=d)
        try:
            committed_grad_check(vc, sc, [x_hs[j] for j in retain_idx],
                                 [y_hs[j] for j in retain_idx], w_hs, None,
                                 0, rc, bound)
            vc.done()
        except Reject as r:
            return reject(f"unlearning gradient proof: {r.reason}")
        t.grad_checks += len(retain_idx)
        ep.send(Msg.GRAD_VERDICT)

        sigma = dpcore.d2d_sigma(cfg.delta_threshold, cfg.lam, cfg.epsilon,
                                 cfg.delta)
        table = build_density(sigma, prof.tau,
                              grid_frac_bits=prof.frac_bits_data,
                              density_bits=prof.frac_bits_density)
        tree = build_ky_tree(table)
        depth = tree.depth
        frame = expect_serving(Msg.COIN_COMMIT)
        vc.feed(unpack_residues(frame.payload, width))
        try:
            rp = gauss.rvcs_commit_coins(vc, depth, d)
            vc.done()
        except Reject as r:
            return reject(f"coin commit: {r.reason}")
        rv = [int(b) for b in rng.integers(0, 2, d * depth)]
        ep.send(Msg.COIN_REVEAL, pack_bits(rv))
        frame = expect_serving(Msg.RVCS_PROOF)
        vc.feed(unpack_residues(frame.payload[4:], width))
        xi_hs = []
        try:
            for l in range(d):
                xi_hs.append(gauss.rvcs_run(
                    vc, tree, rp[l], rv[l * depth:(l + 1) * depth], mode))
            vc.done()
        except Reject as r:
            return reject(f"rvcs: {r.reason}")
        t.rvcs_runs += d
        ep.send(Msg.RVCS_VERDICT)

        shift = sc.fb_w - sc.fb_x
        wu_hs = [vc.add(w_hs[c], vc.scalar_mul(1 << shift, xi_hs[c]))
                 for c in range(d)]
        frame = expect_serving(Msg.OPEN_FINAL)
        vc.feed(unpack_residues(frame.payload[4:], width))
        try:
            vals = vc.open_vec(wu_hs)
            vc.done()
        except Reject as r:
            return reject(f"final opening: {r.reason}")
        ep.send(Msg.ACCEPT)
        t.outcome = Outcome.ACCEPT
        w_raw = np.array([balanced(v, p) for v in vals], dtype=np.int64)
        return VerifyResult(Outcome.ACCEPT, "", Model(w_raw, sc.fb_w), t)
    except (SessionAbort, MacCheckError) as e:
        t.outcome = Outcome.ABORT
        return VerifyResult(Outcome.ABORT, str(e), None, t)


# -- transcript audit ----------------------------------------------------------------

def audit_transcript(t: Transcript, n: int, d: int,
                     expected_phases: int | None = None) -> dict:
    """Recount gradient checks and RVCS executions from frame headers,
    re-verify the hash chain, and compare against the protocol formulas."""
    grad = rvcs = phases = 0
    chain = b"\x00" * 32
    chain_ok = True
    for (direction, mtype, payload), dig in zip(t.entries, t.digests):
        h = hashlib.sha256(chain + bytes([direction == "v2p"])
                           + struct.pack("<H", mtype) + payload).digest()
        chain_ok &= (h == dig)
        chain = h
        if mtype == Msg.GRAD_PROOF:
            _, n_i = struct.unpack("<II", payload[:8])
            grad += n_i
            phases += 1
        elif mtype == Msg.RVCS_PROOF:
            (cnt,) = struct.unpack("<I", payload[:4])
            rvcs += cnt
    k = expected_phases
    if k is None:
        k = len(dpcore.phase_schedule(n, d, 1.0, 1.0, 1.0, 1e-5).phases) \
            if n >= 2 else 0
    report = {
        "chain_ok": chain_ok,
        "grad_checks": grad,
        "rvcs_runs": rvcs,
        "phases": phases,
        "counter_grad_ok": grad == t.grad_checks and grad <= n,
        "counter_rvcs_ok": rvcs == t.rvcs_runs and rvcs == d * phases,
        "thm_rvcs_budget": d * k,
        "outcome": t.outcome.value if t.outcome else "incomplete",
    }
    report["ok"] = bool(report["chain_ok"] and report["counter_grad_ok"]
                        and report["counter_rvcs_ok"])
    return report


# -- in-process session running --------------------------------------------------------

def run_local_session(prover_fn, verifier_fn, channel_pair=None):
    """Run prover and verifier callables over an in-memory channel pair on
    two threads; returns (prover_result_or_exc, verifier_result)."""
    import threading
    from .wire import PipeChannel
    if channel_pair is None:
        channel_pair = PipeChannel.pair()
    chan_p, chan_v = channel_pair
    out: dict = {}

    def _run(name, fn, chan):
        try:
            out[name] = fn(chan)
        except Exception as e:            # surfaced to the caller
            out[name] = e

    tp = threading.Thread(target=_run, args=("prover", prover_fn, chan_p))
    tv = threading.Thread(target=_run, args=("verifier", verifier_fn, chan_v))
    tp.start()
    tv.start()
    tp.join(timeout=600)
    tv.join(timeout=600)
    return out.get("prover"), out.get("verifier")
