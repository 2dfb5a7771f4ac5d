"""Losses and optimizers: fixed-point binary logistic regression, the phased
ERM loop, and descent-to-delete training/unlearning.

The certified object is the fixed-point sum-gradient circuit defined here:

    G_c = 2^gs * sum_j y_j (u_j - 1) x_{j,c}
          + kappa_coeff * (w_c - wprev_c)   [phases, kappa_i = 2/eta_i]
          + ridge_coeff * w_c               [D2D, n * lambda]

evaluated in exact integers at the gradient scale. Margins are truncated once
onto the margin scale, the sigmoid is a 16-piece cubic with saturation
outside [-8, 8], and per-coordinate products are never rescaled. The phase
acceptance predicate is sum_c G_c^2 <= B with B the squared encoded sum-norm
threshold (n_i * 2L/(n_i k) = 2L/k). The committed verifier replays the same
circuit over handles; this module's integer evaluation is the shared
semantics.

Scales: data and noise live at the profile's data scale (8 fractional bits
by default), densities at 32. The weight scale is derived per run: the phase
feasibility window has radius L eta_i / k, which shrinks as 4^-i, so the
weight grid must be fine enough for the last phase (and for the phase-1
curvature). The gradient scale is raised when needed so the exact integer
regularizer coefficient kappa_i * 2^(fb_g - fb_w) exists for every phase;
this is why the certified pipeline requires dyadic eta.

Provers may search however they like (a float shadow of the same
piecewise-polynomial objective drives Nesterov steps here); only the final
fixed-point check is part of the contract, and it is evaluated identically
on both sides.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from . import fxp
from .dpcore import PhaseParams, Schedule, phase_schedule
from .fxp import FxpValue, NumericProfile, _round_ties_to_zero
from .gauss import build_density, build_ky_tree, sample_with_rng

CLAMP = 8  # sigmoid saturation bound, in value units

# Cubic pieces of the logistic sigmoid on [-8, 8), width 1, local coordinate
# zeta = m - center, coefficients (c0, c1, c2, c3) at 12 fractional bits.
# Fit offline by least squares on a dense grid; max |poly - sigmoid| with
# quantization is 1.9e-4 < 2^-9.
SIGMOID_PIECES_FB12 = (
    (2, 2, 1, 0),
    (6, 6, 3, 1),
    (17, 17, 8, 3),
    (45, 45, 22, 7),
    (120, 117, 55, 16),
    (311, 287, 122, 27),
    (747, 611, 191, 10),
    (1546, 963, 114, -65),
    (2550, 963, -114, -65),
    (3349, 611, -191, 10),
    (3785, 287, -122, 27),
    (3976, 117, -55, 16),
    (4051, 45, -22, 7),
    (4079, 17, -8, 3),
    (4090, 6, -3, 1),
    (4094, 2, -1, 0),
)
N_PIECES = 16
IDX_BITS = 4


def sigmoid_pieces(frac_bits_sig: int) -> tuple:
    """Piece table rescaled from the canonical 12-bit coefficients."""
    if frac_bits_sig == 12:
        return SIGMOID_PIECES_FB12
    out = []
    for row in SIGMOID_PIECES_FB12:
        out.append(tuple(
            _round_ties_to_zero(Fraction(c, 1 << 12) * (1 << frac_bits_sig))
            for c in row))
    return tuple(out)


def mobius_coeffs(pieces) -> list:
    """Multilinear-extension coefficients of the piece table over the 4
    index bits, one 16-entry table per polynomial degree. The committed
    circuit selects coefficients as a linear form over committed bit
    monomials; on boolean points it agrees exactly with table lookup."""
    tables = []
    for g in range(4):
        mu = [pieces[i][g] for i in range(N_PIECES)]
        for b in range(IDX_BITS):
            for s in range(N_PIECES):
                if s & (1 << b):
                    mu[s] -= mu[s ^ (1 << b)]
        tables.append(mu)
    return tables


class LossKind(Enum):
    LOGISTIC_L2 = "logistic_l2"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    lipschitz: float
    smoothness: float
    strong_convexity: float = 0.0

    def __post_init__(self):
        if self.lipschitz <= 0 or self.smoothness < self.strong_convexity:
            raise ValueError("need L > 0 and H >= lambda >= 0")


def logistic_loss(d: int, ridge: float = 0.0) -> LossSpec:
    """Binary logistic regression on features in [0,1]^d: L bounded by
    sqrt(d), smoothness d/4 for step sizing."""
    return LossSpec(LossKind.LOGISTIC_L2, math.sqrt(d), d / 4.0 + ridge,
                    ridge)


def quadratic_loss(lipschitz: float, smoothness: float,
                   strong_convexity: float) -> LossSpec:
    return LossSpec(LossKind.QUADRATIC, lipschitz, smoothness,
                    strong_convexity)


@dataclass
class Dataset:
    x_raw: np.ndarray      # (n, d) int64 at frac_bits_data
    y: np.ndarray          # (n,) int64 in {-1, +1}
    frac_bits: int

    @property
    def n(self) -> int:
        return self.x_raw.shape[0]

    @property
    def d(self) -> int:
        return self.x_raw.shape[1]

    def x_float(self) -> np.ndarray:
        return fxp.decode_array(self.x_raw, self.frac_bits)

    @staticmethod
    def from_features(x, y, frac_bits: int) -> "Dataset":
        """Clamp features into [0,1] and encode onto the data grid."""
        x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
        y = np.asarray(y, dtype=np.int64)
        if not np.all(np.abs(y) == 1):
            raise ValueError("labels must be +-1")
        return Dataset(fxp.encode_array(x, frac_bits), y, frac_bits)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x_raw[idx], self.y[idx], self.frac_bits)

    def serialize(self) -> bytes:
        """Versioned binary encoding; ends with a 96-byte reserved trailer
        (ignored by parsing), so the file's last bytes are free-form."""
        head = _DSET_MAGIC + struct.pack("<HBII", 1, self.frac_bits,
                                         self.n, self.d)
        body = np.asarray(self.x_raw, dtype="<i4").tobytes() + \
            np.asarray(self.y, dtype="<i1").tobytes()
        return head + body + bytes(_DSET_TRAILER)

    @staticmethod
    def deserialize(blob: bytes) -> "Dataset":
        if blob[:4] != _DSET_MAGIC:
            raise ValueError("bad dataset magic")
        _, fb, n, d = struct.unpack("<HBII", blob[4:15])
        off = 15
        if len(blob) < off + 4 * n * d + n:
            raise ValueError("truncated dataset payload")
        x = np.frombuffer(blob[off:off + 4 * n * d],
                          dtype="<i4").astype(np.int64).reshape(n, d)
        y = np.frombuffer(blob[off + 4 * n * d:off + 4 * n * d + n],
                          dtype="<i1").astype(np.int64)
        return Dataset(x, y, fb)


_DSET_MAGIC = b"CDPX"
_DSET_TRAILER = 96


@dataclass
class Model:
    w_raw: np.ndarray      # (d,) int64 at frac_bits
    frac_bits: int

    @property
    def d(self) -> int:
        return len(self.w_raw)

    def w_float(self) -> np.ndarray:
        return fxp.decode_array(self.w_raw, self.frac_bits)

    @staticmethod
    def zeros(d: int, frac_bits: int) -> "Model":
        return Model(np.zeros(d, dtype=np.int64), frac_bits)

    @staticmethod
    def from_float(w, frac_bits: int) -> "Model":
        return Model(fxp.encode_array(w, frac_bits), frac_bits)

    def at_scale(self, frac_bits: int) -> "Model":
        """Rescale onto a finer grid (exact) or truncate onto a coarser one."""
        if frac_bits >= self.frac_bits:
            return Model(self.w_raw << (frac_bits - self.frac_bits),
                         frac_bits)
        return Model(fxp.trunc_div_pow2_array(
            self.w_raw, self.frac_bits - frac_bits), frac_bits)


# -- run scales -----------------------------------------------------------------

def _dyadic_exp(x: float) -> int:
    """e with x = 2^-e, for dyadic powers of two only."""
    e = -math.log2(x)
    if abs(e - round(e)) > 1e-12:
        raise ValueError(f"{x} is not a power of two; snap eta for the "
                         "certified pipeline")
    return round(e)


@dataclass(frozen=True)
class RunScales:
    """Public per-run scale bundle, derived from negotiated parameters and
    computed identically by prover and verifier."""

    fb_x: int
    fb_m: int
    fb_u: int
    fb_w: int
    fb_g: int
    d: int
    weight_bound: int

    @property
    def g_shift(self) -> int:
        return self.fb_g - self.fb_u - self.fb_x

    @property
    def margin_shift(self) -> int:
        return self.fb_x + self.fb_w - self.fb_m

    @property
    def clamp_raw(self) -> int:
        return CLAMP << self.fb_m

    @property
    def clamp_bits(self) -> int:
        m_max = self.d * self.weight_bound << self.fb_m
        return (m_max + 2 * self.clamp_raw).bit_length() + 1

    @property
    def weight_bits(self) -> int:
        return (2 * self.weight_bound << self.fb_w).bit_length()

    def grad_range_bits(self, p: int, bound: int) -> int:
        """Symmetric per-coordinate bound 2^gamma on G_c: wide enough for
        honest gradients, narrow enough that the squared-norm aggregation
        cannot wrap modulo p."""
        slack = 1 << (bound.bit_length() + 1)
        gamma = p.bit_length() // 2
        while gamma > 0 and self.d * (1 << (2 * gamma)) + slack >= p:
            gamma -= 1
        if gamma == 0 or bound > 1 << (2 * gamma):
            raise ValueError("field too small for the gradient range")
        return gamma


def derive_scales(prof: NumericProfile, n: int, d: int, eta: float,
                  loss: LossSpec, k: int) -> RunScales:
    """Weight grid fine enough that every phase's threshold ball contains
    grid points: late phases need half-ulp * sqrt(d) <= L eta 4^-k / (2k);
    phase 1 needs it against the data curvature. Raises when the resulting
    squared-norm bound cannot fit the profile's field (the 2^16 test field
    supports only k = 3 schedules, i.e. n <= 8, at d = 2)."""
    e = _dyadic_exp(eta)
    lw = loss.lipschitz
    late = math.log2(4.0 ** k * k * math.sqrt(d) * 4.0 / (lw * eta))
    n1 = max(n >> 1, 1)
    lam1 = loss.smoothness + 2.0 / ((eta / 4.0) * n1)
    early = math.log2(n1 * k * lam1 * math.sqrt(d) * 2.0 / lw)
    fb_w = max(prof.frac_bits_weight, math.ceil(late), math.ceil(early))
    fb_g = max(prof.frac_bits_sig + prof.frac_bits_data, fb_w - 3 - e)
    sc = RunScales(prof.frac_bits_data, prof.frac_bits_margin,
                   prof.frac_bits_sig, fb_w, fb_g, d, prof.weight_bound)
    try:
        sc.grad_range_bits(prof.p, threshold_bound(lw, k, sc))
    except ValueError as err:
        raise ValueError(
            f"schedule (n={n}, d={d}, eta={eta}) does not fit the "
            f"{prof.name} field: {err}") from None
    if d * prof.weight_bound << (fb_w + prof.frac_bits_data) >= prof.p // 2:
        raise ValueError(f"margins overflow the {prof.name} field at "
                         f"(n={n}, d={d}, eta={eta})")
    return sc


def d2d_scales(prof: NumericProfile, d: int, lam: float) -> RunScales:
    """D2D feasibility windows are generous; only the ridge coefficient
    constrains the gradient scale."""
    num, den = ridge_fraction_parts(lam)
    fb_w = prof.frac_bits_weight
    fb_g = max(prof.frac_bits_sig + prof.frac_bits_data,
               fb_w + (den.bit_length() - 1))
    return RunScales(prof.frac_bits_data, prof.frac_bits_margin,
                     prof.frac_bits_sig, fb_w, fb_g, d, prof.weight_bound)


def exact_kappa(eta_i: float) -> int:
    """2/eta_i as an exact integer; requires dyadic eta_i."""
    fr = Fraction(2) / Fraction(eta_i)
    if fr.denominator != 1:
        raise ValueError(f"eta_i={eta_i} is not dyadic; snap eta to a power "
                         "of two for the certified pipeline")
    return int(fr)


def kappa_coeff(eta_i: float, sc: RunScales) -> int:
    """kappa_i scaled onto the gradient grid: 2/eta_i * 2^(fb_g - fb_w)."""
    fr = Fraction(2) / Fraction(eta_i) * Fraction(2) ** (sc.fb_g - sc.fb_w)
    if fr.denominator != 1:
        raise ValueError("gradient scale too coarse for kappa; scales bug")
    return int(fr)


def ridge_fraction_parts(lam: float) -> tuple[int, int]:
    fr = Fraction(lam)
    if fr.denominator & (fr.denominator - 1) or fr.denominator > 1 << 16:
        raise ValueError(f"lambda={lam} is not a short dyadic; snap the "
                         "strong-convexity constant for the circuit")
    return fr.numerator, fr.denominator


def ridge_coeff(lam: float, count: int, sc: RunScales) -> int:
    """n * lambda scaled onto the gradient grid, exact."""
    fr = Fraction(lam) * count * Fraction(2) ** (sc.fb_g - sc.fb_w)
    if fr.denominator != 1:
        raise ValueError("gradient scale too coarse for the ridge term")
    return int(fr)


def threshold_bound(lipschitz: float, k: int, sc: RunScales) -> int:
    """Public squared bound B on the sum gradient: encode(2L/k) squared."""
    t = fxp.encode(Fraction(2) * Fraction(lipschitz) / k, sc.fb_g)
    return t.raw * t.raw


def d2d_bound(delta_threshold: float, count: int, sc: RunScales) -> int:
    t = fxp.encode(Fraction(delta_threshold) * count, sc.fb_g)
    return t.raw * t.raw


# -- fixed-point circuit (integer semantics) -------------------------------------

def sigmoid_fixed(m_raw: np.ndarray, sc: RunScales) -> np.ndarray:
    """Vectorized fixed-point sigmoid on margin raws at the margin scale."""
    fb_m, fb_u = sc.fb_m, sc.fb_u
    S = sc.clamp_raw
    pieces = np.asarray(sigmoid_pieces(fb_u), dtype=np.int64)
    m = np.asarray(m_raw, dtype=np.int64)
    hi = m >= S
    lo = m <= -S
    m_c = np.clip(m, -S, S - 1)
    offs = m_c + S
    idx = offs >> fb_m
    rem = offs - (idx << fb_m)
    zeta = rem - (1 << (fb_m - 1))
    c0, c1, c2, c3 = (pieces[idx, g] for g in range(4))
    h = fxp.trunc_div_pow2_array(c3 * zeta, fb_m) + c2
    h = fxp.trunc_div_pow2_array(h * zeta, fb_m) + c1
    h = fxp.trunc_div_pow2_array(h * zeta, fb_m) + c0
    one = 1 << fb_u
    return np.where(hi, one, np.where(lo, 0, h))


def margins_fixed(x_raw: np.ndarray, y: np.ndarray, w_raw: np.ndarray,
                  sc: RunScales) -> np.ndarray:
    """y_j <w, x_j> truncated from the product scale to the margin scale."""
    dot = x_raw @ w_raw
    return fxp.trunc_div_pow2_array(y * dot, sc.margin_shift)


def point_grad_raws(x_raw: np.ndarray, y: int, w_raw: np.ndarray,
                    sc: RunScales) -> np.ndarray:
    """Single-example log-loss gradient: 2^gs * y (u - 1) x with
    u = sigmoid(y <w, x>), at the gradient scale."""
    m = margins_fixed(x_raw[None, :], np.asarray([y]), w_raw, sc)
    u = sigmoid_fixed(m, sc)[0]
    one = 1 << sc.fb_u
    return ((int(y) * (int(u) - one)) * x_raw) << sc.g_shift


def default_scales(prof: NumericProfile, d: int) -> RunScales:
    return RunScales(prof.frac_bits_data, prof.frac_bits_margin,
                     prof.frac_bits_sig, prof.frac_bits_weight,
                     prof.frac_bits_grad, d, prof.weight_bound)


def grad_point(model: Model, x_raw: np.ndarray, y: int,
               prof: NumericProfile) -> list:
    """Spec-surface wrapper at the profile's default scales, returning
    FxpValues at the gradient scale."""
    sc = default_scales(prof, len(x_raw))
    g = point_grad_raws(x_raw, y, model.w_raw, sc)
    return [FxpValue(int(v), sc.fb_g) for v in g]


def chunk_grad_sum(data: Dataset, w_raw, wprev_raw, kcoeff: int,
                   sc: RunScales, rcoeff: int = 0,
                   kind: LossKind = LossKind.LOGISTIC_L2) -> list:
    """Sum-gradient of the phase objective in exact integers (python ints):
    2^gs sum_j grad f + kcoeff (w - wprev) + rcoeff w, at the gradient scale.
    kcoeff/rcoeff are the exact scaled integer coefficients."""
    w_arr = np.asarray(w_raw, dtype=np.int64)
    one = 1 << sc.fb_u
    if kind is LossKind.LOGISTIC_L2:
        m = margins_fixed(data.x_raw, data.y, w_arr, sc)
        u = sigmoid_fixed(m, sc)
        coef = data.y * (u - one)                   # (n,)
    else:
        dot = data.x_raw @ w_arr
        shift = sc.fb_x + sc.fb_w - sc.fb_u
        coef = fxp.trunc_div_pow2_array(
            dot - (data.y << (sc.fb_x + sc.fb_w)), shift)
    g = coef @ data.x_raw                           # (d,) int64, exact
    out = [int(v) << sc.g_shift for v in g]
    if kcoeff:
        for c in range(data.d):
            out[c] += kcoeff * (int(w_raw[c]) - int(wprev_raw[c]))
    if rcoeff:
        for c in range(data.d):
            out[c] += rcoeff * int(w_raw[c])
    return out


def grad_phase(data_chunk: Dataset, w: Model, w_prev: Model,
               eta_i: float, n_i: int, prof: NumericProfile) -> list:
    """Mean-form phase gradient as FxpValues at profile scales: (1/n_i) sum
    grad + 2 (w - wprev)/(eta_i n_i); one truncation for the mean division."""
    sc = default_scales(prof, data_chunk.d)
    kc = kappa_coeff(eta_i, sc)
    g = chunk_grad_sum(data_chunk, w.w_raw, w_prev.w_raw, kc, sc)
    out = []
    for v in g:
        q = v // n_i if v >= 0 else -((-v) // n_i)
        out.append(FxpValue(q, sc.fb_g))
    return out


def circuit_check(data_chunk: Dataset, w_raw, wprev_raw, kcoeff: int,
                  bound: int, sc: RunScales, rcoeff: int = 0,
                  kind: LossKind = LossKind.LOGISTIC_L2):
    """The certified acceptance predicate: sum_c G_c^2 <= bound."""
    g = chunk_grad_sum(data_chunk, w_raw, wprev_raw, kcoeff, sc, rcoeff, kind)
    total = sum(v * v for v in g)
    return total <= bound, g, total


# -- float shadow (prover-side search only) ---------------------------------------

def _sigmoid_poly_float(m: np.ndarray, sc: RunScales) -> np.ndarray:
    fb_u = sc.fb_u
    pieces = np.asarray(sigmoid_pieces(fb_u), dtype=np.float64) / (1 << fb_u)
    mc = np.clip(m, -CLAMP, CLAMP - 1e-9)
    idx = np.floor(mc + CLAMP).astype(np.int64)
    zeta = mc + CLAMP - idx - 0.5
    c0, c1, c2, c3 = (pieces[idx, g] for g in range(4))
    val = ((c3 * zeta + c2) * zeta + c1) * zeta + c0
    return np.where(m >= CLAMP, 1.0, np.where(m <= -CLAMP, 0.0, val))


def shadow_sum_grad(x, y, w, wprev, kappa: float, sc: RunScales,
                    ridge_n: float = 0.0, kind=LossKind.LOGISTIC_L2):
    """Float sum-gradient matching the circuit's smooth part (value units)."""
    if kind is LossKind.LOGISTIC_L2:
        m = y * (x @ w)
        u = _sigmoid_poly_float(m, sc)
        g = (y * (u - 1.0)) @ x
    else:
        g = (x @ w - y) @ x
    return g + kappa * (w - wprev) + ridge_n * w


@dataclass
class SolveStats:
    point_grad_evals: int = 0
    iterations: int = 0
    circuit_checks: int = 0


class PhaseSolveError(RuntimeError):
    """The optimizer hit its iteration cap without meeting the threshold."""


def lemma1_budget(n_i: int, eta_i: float, loss: LossSpec, k: int,
                  dist_bound: float) -> float:
    """Per-phase point-gradient budget sqrt((H + 2/(n eta)) D k / 2L) n^1.5."""
    lam_total = loss.smoothness + 2.0 / (n_i * eta_i)
    return math.sqrt(lam_total * dist_bound * k / (2.0 * loss.lipschitz)) \
        * n_i ** 1.5


def _agd(w0, mu, smooth, grad_fn, target_norm, max_iters,
         stats: SolveStats, n_pts: int):
    """Nesterov AGD (strongly convex variant) on the float shadow; mu and
    smooth are constants of the *sum* objective grad_fn evaluates."""
    lam = smooth + 1e-12
    q = max(mu / lam, 1e-12)
    beta = (1 - math.sqrt(q)) / (1 + math.sqrt(q))
    w = np.array(w0, dtype=np.float64)
    v = w.copy()
    step = 1.0 / lam
    for _ in range(max_iters):
        g = grad_fn(v)
        stats.point_grad_evals += n_pts
        stats.iterations += 1
        if math.sqrt(float(g @ g)) <= target_norm:
            return v
        w_next = v - step * g
        v = w_next + beta * (w_next - w)
        w = w_next
    g = grad_fn(w)
    stats.point_grad_evals += n_pts
    if math.sqrt(float(g @ g)) <= target_norm:
        return w
    raise PhaseSolveError("iteration cap exceeded before gradient target")


def _polish(data: Dataset, w_float, wprev_raw, kcoeff: int, bound: int,
            sc: RunScales, sum_smooth: float, stats: SolveStats,
            rcoeff: int = 0, kind=LossKind.LOGISTIC_L2, rounds: int = 120):
    """Round onto the weight grid, then Newton-polish against the exact
    circuit until the committed check passes."""
    n = data.n
    w_raw = fxp.encode_array(w_float, sc.fb_w)
    scale_g = float(1 << sc.fb_g)
    for _ in range(rounds):
        ok, g, _ = circuit_check(data, w_raw, wprev_raw, kcoeff, bound, sc,
                                 rcoeff, kind)
        stats.circuit_checks += 1
        stats.point_grad_evals += n
        if ok:
            return np.asarray(w_raw, dtype=np.int64)
        g_val = np.array([float(v) for v in g]) / scale_g
        wf = fxp.decode_array(w_raw, sc.fb_w) - g_val / sum_smooth
        w_new = fxp.encode_array(wf, sc.fb_w)
        if np.array_equal(w_new, w_raw):
            c = int(np.argmax(np.abs(g_val)))
            w_new[c] -= int(np.sign(g_val[c]))
        w_raw = w_new
    raise PhaseSolveError("circuit polish failed to meet the threshold")


def solve_phase(data_chunk: Dataset, w_prev: Model, phase: PhaseParams,
                loss: LossSpec, sc: RunScales, k: int,
                lipschitz: float, dist_bound: float = 1.0,
                stats: SolveStats | None = None) -> tuple[Model, SolveStats]:
    """Find w on the weight grid passing the phase's fixed-point circuit
    check. Searches with a float shadow of the same objective, rounds onto
    the grid, then polishes against the exact circuit."""
    stats = stats or SolveStats()
    n_i = phase.n_i
    if w_prev.frac_bits != sc.fb_w:
        raise ValueError("w_prev not at the run's weight scale")
    kc = kappa_coeff(phase.eta_i, sc)
    bound = threshold_bound(lipschitz, k, sc)
    kind = loss.kind

    # already-met shortcut: the spec's zero-iteration case
    ok, _, _ = circuit_check(data_chunk, w_prev.w_raw, w_prev.w_raw, kc,
                             bound, sc, kind=kind)
    stats.circuit_checks += 1
    stats.point_grad_evals += n_i
    if ok:
        return Model(w_prev.w_raw.copy(), sc.fb_w), stats

    x = data_chunk.x_float()
    yv = data_chunk.y.astype(np.float64)
    wprev_f = w_prev.w_float()
    kappa_val = float(Fraction(2) / Fraction(phase.eta_i))

    def grad_fn(w):
        return shadow_sum_grad(x, yv, w, wprev_f, kappa_val, sc, kind=kind)

    target = 0.35 * math.sqrt(bound) / (1 << sc.fb_g)
    budget = lemma1_budget(n_i, phase.eta_i, loss, k, dist_bound)
    cap = max(200, int(50 * budget / max(n_i, 1)))
    sum_smooth = n_i * loss.smoothness + 2.0 / phase.eta_i
    wf = _agd(wprev_f, 2.0 / phase.eta_i, sum_smooth, grad_fn, target, cap,
              stats, n_i)
    w_raw = _polish(data_chunk, wf, w_prev.w_raw, kc, bound, sc, sum_smooth,
                    stats, kind=kind)
    return Model(w_raw, sc.fb_w), stats


def phased_erm(data: Dataset, loss: LossSpec, w0: Model, eta: float,
               epsilon: float, delta: float, rng, prof: NumericProfile,
               dist_bound: float = 1.0, schedule: Schedule | None = None,
               collect=None) -> Model:
    """Uncertified local run of the phased ERM mechanism: per phase, solve to
    the gradient threshold and add truncated discrete Gaussian noise from the
    local sampler. Returns the final model at the run's weight scale."""
    sched = schedule or phase_schedule(data.n, data.d, eta, loss.lipschitz,
                                       epsilon, delta)
    sc = derive_scales(prof, data.n, data.d, eta, loss, sched.k_calib)
    w = w0.at_scale(sc.fb_w)
    shift = sc.fb_w - prof.frac_bits_data
    for ph in sched.phases:
        chunk = data.subset(slice(ph.chunk_lo, ph.chunk_hi))
        tilde, stats = solve_phase(chunk, w, ph, loss, sc, sched.k_calib,
                                   sched.lipschitz, dist_bound)
        table = build_density(ph.sigma_i, prof.tau,
                              grid_frac_bits=prof.frac_bits_data,
                              density_bits=prof.frac_bits_density)
        tree = build_ky_tree(table)
        noise = np.array([sample_with_rng(tree, rng) for _ in range(data.d)],
                         dtype=np.int64)
        w = Model(tilde.w_raw + (noise << shift), sc.fb_w)
        if collect is not None:
            collect.append((ph, tilde, stats))
    return w


# -- descent to delete -------------------------------------------------------------

def _d2d_solve(data: Dataset, w_start: Model, loss: LossSpec,
               delta_threshold: float, sc: RunScales,
               stats: SolveStats) -> Model:
    """Drive the fixed-point gradient below |D| * Delta in the sum norm."""
    n = data.n
    lam = loss.strong_convexity
    if lam <= 0:
        raise ValueError("D2D requires a strongly convex loss")
    rc = ridge_coeff(lam, n, sc)
    bound = d2d_bound(delta_threshold, n, sc)
    x = data.x_float()
    yv = data.y.astype(np.float64)
    kind = loss.kind

    def grad_fn(w):
        return shadow_sum_grad(x, yv, w, w, 0.0, sc, ridge_n=n * lam,
                               kind=kind)

    target = 0.5 * math.sqrt(bound) / (1 << sc.fb_g)
    sum_smooth = n * loss.smoothness
    wf = _agd(w_start.at_scale(sc.fb_w).w_float(), n * lam, sum_smooth,
              grad_fn, target, 200000, stats, n)
    w_raw = _polish(data, wf, None, 0, bound, sc, sum_smooth, stats,
                    rcoeff=rc, kind=kind)
    return Model(w_raw, sc.fb_w)


def _add_noise(model: Model, sigma: float, rng, prof: NumericProfile) -> Model:
    table = build_density(sigma, prof.tau,
                          grid_frac_bits=prof.frac_bits_data,
                          density_bits=prof.frac_bits_density)
    tree = build_ky_tree(table)
    shift = model.frac_bits - prof.frac_bits_data
    noise = np.array([sample_with_rng(tree, rng) for _ in range(model.d)],
                     dtype=np.int64)
    return Model(model.w_raw + (noise << shift), model.frac_bits)


def d2d_train(data: Dataset, loss: LossSpec, w0: Model,
              delta_threshold: float, epsilon: float, delta: float, rng,
              prof: NumericProfile, stats: SolveStats | None = None,
              pre_noise=None) -> Model:
    from .dpcore import d2d_train_sigma
    stats = stats or SolveStats()
    sc = d2d_scales(prof, data.d, loss.strong_convexity)
    tilde = _d2d_solve(data, w0, loss, delta_threshold, sc, stats)
    if pre_noise is not None:
        pre_noise.append(tilde)
    return _add_noise(tilde, d2d_train_sigma(
        delta_threshold, loss.strong_convexity, epsilon, delta), rng, prof)


def d2d_unlearn(retain: Dataset, w_current: Model, loss: LossSpec,
                delta_threshold: float, epsilon: float, delta: float, rng,
                prof: NumericProfile, stats: SolveStats | None = None,
                pre_noise=None) -> Model:
    """Re-optimize on the retain set starting from the current model, then
    add noise at the unlearning scale 2 Delta sqrt(ln(1/delta))/(lambda eps)."""
    from .dpcore import d2d_sigma
    stats = stats or SolveStats()
    sc = d2d_scales(prof, retain.d, loss.strong_convexity)
    tilde = _d2d_solve(retain, w_current, loss, delta_threshold, sc, stats)
    if pre_noise is not None:
        pre_noise.append(tilde)
    return _add_noise(tilde, d2d_sigma(
        delta_threshold, loss.strong_convexity, epsilon, delta), rng, prof)


# -- model checkpoint format ---------------------------------------------------------

_CKPT_MAGIC = b"CDPW"


def save_model(model: Model, path: str):
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<HBI", 1, model.frac_bits, model.d))
        f.write(np.asarray(model.w_raw, dtype="<i8").tobytes())


def load_model(path: str) -> Model:
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError("bad checkpoint magic")
        _, fb, d = struct.unpack("<HBI", f.read(7))
        w = np.frombuffer(f.read(8 * d), dtype="<i8").astype(np.int64)
    return Model(w, fb)
