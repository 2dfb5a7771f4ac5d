"""Truncated discrete Gaussian densities, the Knuth-Yao DDG tree, and the
interactive random-variable commitment scheme (RVCS).

The density lives on the fixed-point grid 2^-grid_frac_bits over
[-tau*sigma, tau*sigma]; each point's probability is a depth-bit binary
expansion (32 bits by default). Rounding residue is assigned to support point
0, so the expansions sum to exactly 2^depth and the generating tree closes at
its final level with no residual branch.

Canonical DDG tree layout per level: the 2*I(l-1) child slots of the previous
level's internal vertices are filled leaves-first, leaves sorted by support
value; remaining slots stay internal. A walk consumes one uniform coin per
level: slot = 2*j + coin, leaf if slot < m_l, else descend with
j = slot - m_l.

RVCS execution modes:

* FULL_LAYER: the committed bottom-up sweep over every tree vertex, one
  proven select per vertex with public leaf anchoring. Sound in MACED mode;
  cost O(tree size) multiplications per sample.
* PATH: coins are opened and the verifier recomputes the walk directly.
  Sound only because the witness is revealed, so it is restricted to the
  TRANSPARENT backend; cost O(depth) per sample.

Both modes produce bit-identical committed outputs on the same coins.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import mpmath
import numpy as np

from .relproof import Backend, ProverCtx, Reject

DENSITY_BITS = 32
GRID_FRAC_BITS = 8
DEGENERATE_SIGMA = 2.0 ** -12
MAX_SUPPORT = 1 << 20

_FILE_MAGIC = b"CDPD"
_FILE_VERSION = 1


class RvcsMode(Enum):
    FULL_LAYER = "full_layer"
    PATH = "path"


@dataclass(frozen=True)
class DensityTable:
    """Support raws (ascending) and their depth-bit probability expansions."""

    sigma: float
    tau: float
    grid_frac_bits: int
    density_bits: int
    support: tuple          # raw grid values, ascending
    probs: tuple            # integers, sum == 2^density_bits

    @property
    def size(self) -> int:
        return len(self.support)

    def prob_of(self, raw: int) -> int:
        i = _bisect(self.support, raw)
        return self.probs[i] if i is not None else 0

    def as_arrays(self):
        return (np.asarray(self.support, dtype=np.int64),
                np.asarray(self.probs, dtype=np.uint64))


def _bisect(seq, x):
    import bisect
    i = bisect.bisect_left(seq, x)
    if i < len(seq) and seq[i] == x:
        return i
    return None


def build_density(sigma: float, tau: float = 6.0,
                  grid_frac_bits: int = GRID_FRAC_BITS,
                  density_bits: int = DENSITY_BITS) -> DensityTable:
    """Truncated discrete Gaussian on the grid, probabilities rounded to
    density_bits with the residue assigned to support point 0."""
    if sigma < 0 or tau < 1:
        raise ValueError("need sigma >= 0 and tau >= 1")
    sigma = float(mpmath.nstr(mpmath.mpf(sigma), 12, strip_zeros=False)) \
        if sigma > 0 else 0.0
    key = (sigma, float(tau), grid_frac_bits, density_bits)
    return _build_density_cached(key)


@lru_cache(maxsize=64)
def _build_density_cached(key) -> DensityTable:
    sigma, tau, gfb, dbits = key
    one = 1 << dbits
    if sigma <= DEGENERATE_SIGMA:
        return DensityTable(sigma, tau, gfb, dbits, (0,), (one,))
    radius = int(mpmath.ceil(mpmath.mpf(tau) * sigma * (1 << gfb)))
    if 2 * radius + 1 > MAX_SUPPORT:
        raise ValueError(f"support size {2*radius+1} exceeds maximum")
    with mpmath.workdps(40):
        inv2s2 = 1 / (2 * mpmath.mpf(sigma) ** 2)
        scale = mpmath.mpf(1) / (1 << gfb)
        half = [mpmath.exp(-((r * scale) ** 2) * inv2s2)
                for r in range(radius + 1)]
        z = half[0] + 2 * sum(half[1:])
        q = [int(mpmath.floor(w / z * one + mpmath.mpf(0.5))) for w in half]
    support = list(range(-radius, radius + 1))
    probs = [q[abs(r)] for r in support]
    residual = one - sum(probs)
    probs[radius] += residual          # index of raw 0
    if probs[radius] < 0:
        raise ValueError("negative residual mass at zero; grid too fine")
    # zero-probability tail points are unreachable; dropping them keeps the
    # generating tree closed (a full-mass point becomes the degenerate leaf)
    kept = [(s, pr) for s, pr in zip(support, probs) if pr > 0]
    support, probs = zip(*kept)
    return DensityTable(sigma, tau, gfb, dbits,
                        tuple(support), tuple(probs))


def save_density(table: DensityTable, path: str):
    with open(path, "wb") as f:
        f.write(_FILE_MAGIC)
        f.write(struct.pack("<HBBddI", _FILE_VERSION, table.grid_frac_bits,
                            table.density_bits, table.sigma, table.tau,
                            table.size))
        for raw, pr in zip(table.support, table.probs):
            f.write(struct.pack("<iQ", raw, pr))


def load_density(path: str) -> DensityTable:
    with open(path, "rb") as f:
        if f.read(4) != _FILE_MAGIC:
            raise ValueError("bad density file magic")
        ver, gfb, dbits, sigma, tau, n = struct.unpack("<HBBddI", f.read(24))
        if ver != _FILE_VERSION:
            raise ValueError(f"unsupported density file version {ver}")
        support, probs = [], []
        for _ in range(n):
            raw, pr = struct.unpack("<iQ", f.read(12))
            support.append(raw)
            probs.append(pr)
    return DensityTable(sigma, tau, gfb, dbits, tuple(support), tuple(probs))


# -- Knuth-Yao generating tree -------------------------------------------------

@dataclass(frozen=True)
class KnuthYaoTree:
    """Canonical DDG tree over a DensityTable's binary expansions."""

    table: DensityTable
    depth: int
    leaf_values: tuple       # per level 1..depth: tuple of support raws
    leaf_counts: tuple       # m_l per level
    internal_counts: tuple   # I(l) per level 0..depth
    root_leaf: object        # raw value when all mass sits on one point

    @property
    def vertex_count(self) -> int:
        return 1 + sum(2 * i for i in self.internal_counts[:-1])

    def leaf_arrays(self):
        return [np.asarray(v, dtype=np.int64) for v in self.leaf_values]


def build_ky_tree(table: DensityTable) -> KnuthYaoTree:
    t = table.density_bits
    one = 1 << t
    if sum(table.probs) != one:
        raise ValueError("density expansions must sum to 2^depth")
    if table.size == 1 and table.probs[0] == one:
        return KnuthYaoTree(table, t, ((),) * t, (0,) * t,
                            (0,) * (t + 1), table.support[0])
    leaf_values, leaf_counts, internal = [], [], [1]
    for level in range(1, t + 1):
        bit = 1 << (t - level)
        vals = tuple(raw for raw, pr in zip(table.support, table.probs)
                     if pr & bit)
        slots = 2 * internal[-1]
        if len(vals) > slots:
            raise ValueError("expansion inconsistent with tree capacity")
        leaf_values.append(vals)
        leaf_counts.append(len(vals))
        internal.append(slots - len(vals))
    if internal[-1] != 0:
        raise ValueError("tree does not close at final level")
    return KnuthYaoTree(table, t, tuple(leaf_values), tuple(leaf_counts),
                        tuple(internal), None)


def sample_local(tree: KnuthYaoTree, coins) -> int:
    """Deterministic walk on explicit coins (one bit per level)."""
    if tree.root_leaf is not None:
        return tree.root_leaf
    if len(coins) < tree.depth:
        raise ValueError(f"need {tree.depth} coins")
    j = 0
    for level in range(1, tree.depth + 1):
        slot = 2 * j + (coins[level - 1] & 1)
        m = tree.leaf_counts[level - 1]
        if slot < m:
            return tree.leaf_values[level - 1][slot]
        j = slot - m
    raise AssertionError("walk fell off a closed tree")


def sample_with_rng(tree: KnuthYaoTree, rng) -> int:
    if tree.root_leaf is not None:
        return tree.root_leaf
    u = int(rng.integers(0, 1 << tree.depth))
    return sample_local(tree, _coin_bits(u, tree.depth))


def _coin_bits(u: int, t: int):
    return [(u >> (t - level)) & 1 for level in range(1, t + 1)]


def walk_batch(tree: KnuthYaoTree, us: np.ndarray) -> np.ndarray:
    """Vectorized walk for packed coin integers (MSB consumed first)."""
    n = len(us)
    if tree.root_leaf is not None:
        return np.full(n, tree.root_leaf, dtype=np.int64)
    us = np.asarray(us, dtype=np.uint64)
    t = tree.depth
    j = np.zeros(n, dtype=np.int64)
    out = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    leaves = tree.leaf_arrays()
    for level in range(1, t + 1):
        bit = ((us >> np.uint64(t - level)) & np.uint64(1)).astype(np.int64)
        j = 2 * j + bit
        m = tree.leaf_counts[level - 1]
        hit = active & (j < m)
        if hit.any():
            out[hit] = leaves[level - 1][j[hit]]
            active &= ~hit
        j = np.where(active, j - m, 0)
        if not active.any():
            break
    if active.any():
        raise AssertionError("walk fell off a closed tree")
    return out


# -- committed RVCS ------------------------------------------------------------

def rvcs_commit_coins(ctx, depth: int, count: int, rng=None):
    """Step 1: prover commits count*depth private coin bits.

    Returns a (count, depth) nested list of handles. On the prover, `rng`
    supplies the bits; the verifier passes rng=None and mirrors the commits.
    """
    total = count * depth
    if isinstance(ctx, ProverCtx):
        bits = [int(b) for b in rng.integers(0, 2, total)]
        hs = ctx.commit_witness_vec(bits)
    else:
        hs = ctx.commit_witness_vec(count=total)
    # booleanity of every private coin bit
    sq = ctx.mul_vec([(h, h) for h in hs])
    ctx.assert_zero_vec([ctx.sub(s, h) for s, h in zip(sq, hs)])
    return [hs[i * depth:(i + 1) * depth] for i in range(count)]


def mix_coins(ctx, rp_handles, rv_bits):
    """XOR committed prover coins with the verifier's public coins.

    r = r_P + v - 2 v r_P is linear for public v.
    """
    out = []
    for h, v in zip(rp_handles, rv_bits):
        if v & 1:
            out.append(ctx.add_public(1, ctx.scalar_mul(-1, h)))
        else:
            out.append(h)
    return out


def rvcs_select(ctx, tree: KnuthYaoTree, coin_handles, mode: RvcsMode,
                force_output=None):
    """Step 3: evaluate the tree over committed mixed coins; returns the
    committed output handle.

    FULL_LAYER proves one select per internal vertex bottom-up (leaf values
    publicly authenticated). PATH opens the coins and recomputes the walk,
    which requires the TRANSPARENT backend.

    `force_output` is a test-harness knob: the prover lies in the root
    select to pin the committed output to a chosen value, without forging
    any MAC (an honest-keyed verifier catches the lying sacrifice).
    """
    p = ctx.p
    if tree.root_leaf is not None:
        return ctx.const(tree.root_leaf % p)
    if mode is RvcsMode.PATH:
        if ctx.backend is not Backend.TRANSPARENT:
            raise ValueError("PATH mode requires the TRANSPARENT backend "
                             "(walk soundness comes from revealing coins)")
        opened = ctx.open_vec(coin_handles)
        bits = [v & 1 for v in opened]
        value = sample_local(tree, bits)
        out = ctx.commit_witness(value % p) if isinstance(ctx, ProverCtx) \
            else ctx.commit_witness()
        got = ctx.open(out)
        if got != value % p:
            raise Reject("path output does not match recomputed walk")
        return out

    # FULL_LAYER: child value of internal vertex (l-1, j) lives at slot
    # s = 2j + r_l of level l: public leaf if s < m_l, else the committed
    # value of internal vertex s - m_l.
    t = tree.depth
    below = None   # committed handles of internal vertices one level down
    for level in range(t, 0, -1):
        m = tree.leaf_counts[level - 1]
        leaves = tree.leaf_values[level - 1]
        count = tree.internal_counts[level - 1]
        r = coin_handles[level - 1]
        current = []
        for j in range(count):
            kids = []
            for s in (2 * j, 2 * j + 1):
                if s < m:
                    kids.append(("pub", leaves[s] % p))
                else:
                    kids.append(("h", below[s - m]))
            (lk, lv), (rk, rv) = kids
            if lk == "pub" and rk == "pub":
                sel = ctx.scalar_mul((rv - lv) % p, r)
                current.append(ctx.add_public(lv, sel))
            else:
                lh = ctx.const(lv) if lk == "pub" else lv
                rh = ctx.const(rv) if rk == "pub" else rv
                diff = ctx.sub(rh, lh)
                if force_output is not None and level == 1 and j == 0 \
                        and isinstance(ctx, ProverCtx):
                    l_val = ctx.st.vals[lh]
                    ctx.lie_next_mul((force_output - l_val) % p)
                current.append(ctx.add(lh, ctx.mul(r, diff)))
        below = current
    return below[0]


def rvcs_run(pctx_or_vctx, tree: KnuthYaoTree, rp_handles, rv_bits,
             mode: RvcsMode):
    """Mix committed prover coins with public verifier coins and evaluate."""
    mixed = mix_coins(pctx_or_vctx, rp_handles, rv_bits)
    return rvcs_select(pctx_or_vctx, tree, mixed, mode)


def rvcs_vector(ctx, tree: KnuthYaoTree, rp_matrix, rv_matrix,
                mode: RvcsMode):
    """d independent RVCS executions sharing one tree."""
    return [rvcs_run(ctx, tree, rp, rv, mode)
            for rp, rv in zip(rp_matrix, rv_matrix)]


# -- vectorized honest transparent runs (distributional testing) ---------------

def _open_check(vals, u, m, k, p, delta):
    """Vectorized commit-then-open MAC verification; returns residue keys."""
    P, D = np.uint64(p), np.uint64(delta)
    omega = (vals + P - u) % P
    key = (k + P - (omega * D) % P) % P
    if not np.array_equal(m % P, (key + (vals * D) % P) % P):
        raise Reject("batched opening failed MAC check")
    return key


def rvcs_batch_transparent(p: int, dealer, tree: KnuthYaoTree, count: int,
                           rng_prover, rng_verifier):
    """Honest batched RVCS in the transparent backend.

    Real message flow with numpy internals: the prover commits its coin words
    (16-bit chunks so they embed in small fields) and opens them, the
    verifier contributes public coins, both walk the tree on the mixed coins,
    and the committed outputs are opened and checked against the verifier's
    own walk. Only valid for p < 2^32. Returns (outputs, bytes_moved).
    """
    if p >= 1 << 32:
        raise ValueError("batched transparent RVCS requires a small field")
    if max(abs(tree.table.support[0]), abs(tree.table.support[-1])) >= p // 2:
        raise ValueError("support does not fit the field's balanced range")
    t = tree.depth
    delta = dealer.global_key.delta
    n_chunks = (t + 15) // 16
    up = rng_prover.integers(0, 1 << t, count).astype(np.uint64)
    uv = rng_verifier.integers(0, 1 << t, count).astype(np.uint64)

    # commit + open prover coin chunks
    chunks = [(up >> np.uint64(16 * i)) & np.uint64(0xFFFF)
              for i in range(n_chunks)]
    for ch in chunks:
        u, m = dealer.prover_auth_arrays(count)
        k = dealer.verifier_auth_arrays(count)
        _open_check(ch, u, m, k, p, delta)
    mixed = up ^ uv
    outs = walk_batch(tree, mixed)
    out_res = np.where(outs < 0, outs + p, outs).astype(np.uint64)
    u2, m2 = dealer.prover_auth_arrays(count)
    k2 = dealer.verifier_auth_arrays(count)
    _open_check(out_res, u2, m2, k2, p, delta)
    if not np.array_equal(outs, walk_batch(tree, mixed)):
        raise Reject("batched output does not match recomputed walk")
    res_bytes = (p.bit_length() + 7) // 8
    bytes_moved = count * res_bytes * (3 * n_chunks + 3) + count * (t // 8)
    return outs, bytes_moved


# -- distribution helpers -------------------------------------------------------

def quantile_partition(table: DensityTable, nbins: int = 256):
    """Deterministic equal-probability partition of the support; returns the
    list of (inclusive) right-edge indices per bin."""
    one = 1 << table.density_bits
    edges, acc, target, k = [], 0, one / nbins, 1
    for i, pr in enumerate(table.probs):
        acc += pr
        while k < nbins and acc >= target * k:
            edges.append(i)
            k += 1
    edges.append(table.size - 1)
    # dedupe while preserving coverage
    out = []
    for e in edges:
        if not out or e > out[-1]:
            out.append(e)
    out[-1] = table.size - 1
    return out


def binned_probs(table: DensityTable, edges) -> np.ndarray:
    one = float(1 << table.density_bits)
    probs = np.asarray(table.probs, dtype=np.float64)
    out, lo = [], 0
    for e in edges:
        out.append(probs[lo:e + 1].sum() / one)
        lo = e + 1
    return np.asarray(out)


def bin_samples(table: DensityTable, edges, samples: np.ndarray) -> np.ndarray:
    support = np.asarray(table.support, dtype=np.int64)
    idx = np.searchsorted(support, samples)
    edge_arr = np.asarray(edges, dtype=np.int64)
    which = np.searchsorted(edge_arr, idx)
    return np.bincount(which, minlength=len(edges))
