"""Interactive proofs over committed values.

Two backends share one statement surface:

* TRANSPARENT: every committed witness is opened; the verifier MAC-checks the
  openings and evaluates relations directly. No hiding; zero relation
  soundness error. Exists for correctness testing and cheap benchmarking and
  is gated behind an explicit flag at the protocol layer.
* MACED: multiplications are checked by a commit-and-sacrifice protocol with
  dealer-supplied random triples; everything the verifier sees is either a
  uniformly masked opening or a MAC. Soundness error is O(1)/p per check.

Both roles drive circuits through context objects with identical method
signatures (`ProverCtx` / `VerifierCtx`), so a circuit is written once and
executed by each side against its own store. Proof payloads are flat lists of
field residues whose structure is implied by the shared op sequence.

Range checks prove membership in [0, 2^bits) via committed bit decomposition
(each bit proven boolean with one multiplication, plus a linear recomposition
check). Truncation rescales are proven with a single range check on the
shifted remainder, which leaves the canonical truncate-toward-zero quotient
and its floor neighbour both acceptable; honest provers always supply the
canonical one.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .commit import Dealer, ProverStore, VerifierStore
from .fxp import balanced


class Backend(Enum):
    TRANSPARENT = "transparent"
    MACED = "maced"


class RelKind(Enum):
    MUL = "mul"
    SQNORM_LE = "sqnorm_le"
    RANGE = "range"
    LINEAR = "linear"


@dataclass
class RelationStatement:
    kind: RelKind
    inputs: list
    public_params: list = field(default_factory=list)


class Reject(Exception):
    """Verifier-side proof rejection; reason travels with the session abort."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def max_range_bits(p: int) -> int:
    return p.bit_length() - 2


class ProverCtx:
    """Prover side of a proof stream. Appends residues to `out`."""

    def __init__(self, store: ProverStore, dealer: Dealer,
                 backend: Backend, forge_rng=None):
        self.st = store
        self.dealer = dealer
        self.backend = backend
        self.p = store.p
        self.out: list[int] = []
        # test harness knobs
        self._lie_mul: int | None = None
        self._forge = False
        self._forge_rng = forge_rng or random.Random(0xF04)

    # -- harness hooks -------------------------------------------------------

    def lie_next_mul(self, fake_value: int):
        self._lie_mul = fake_value % self.p

    def set_forge(self, on: bool):
        self._forge = on

    def _mac(self, m: int) -> int:
        if self._forge:
            return self._forge_rng.randrange(self.p)
        return m

    # -- structural ops (mirror VerifierCtx) ----------------------------------

    def const(self, c: int) -> int:
        return self.st.const(c)

    def add(self, a: int, b: int) -> int:
        return self.st.add(a, b)

    def sub(self, a: int, b: int) -> int:
        return self.st.sub(a, b)

    def scalar_mul(self, c: int, a: int) -> int:
        return self.st.scalar_mul(c, a)

    def add_public(self, c: int, a: int) -> int:
        return self.st.add_public(c, a)

    def lincomb(self, coeffs, hs, const_term: int = 0) -> int:
        return self.st.lincomb(coeffs, hs, const_term)

    def value(self, h: int) -> int:
        """Balanced integer value of a handle (prover side only)."""
        return balanced(self.st.vals[h], self.p)

    def commit_witness_vec(self, values) -> list[int]:
        hs, omegas = self.st.commit_vec(values)
        self.out.extend(omegas)
        if self.backend is Backend.TRANSPARENT:
            for h in hs:
                v, m = self.st.open_payload(h)
                self.out.append(v)
                self.out.append(self._mac(m))
        return hs

    def commit_witness(self, value: int) -> int:
        return self.commit_witness_vec([value])[0]

    def mul_vec(self, pairs) -> list[int]:
        """Committed products c = a*b with sacrifice proofs."""
        p = self.p
        outs = []
        zs = []
        for a, b in pairs:
            z = (self.st.vals[a] * self.st.vals[b]) % p
            if self._lie_mul is not None:
                z = self._lie_mul
                self._lie_mul = None
            zs.append(z)
        hs = self.commit_witness_vec(zs)
        if self.backend is Backend.TRANSPARENT:
            return hs
        trips = self.dealer.prover_triples(len(pairs))
        vals, macs = self.st.vals, self.st.macs
        o = self.out
        for (a, b), c, (x, y, z, mx, my, mz) in zip(pairs, hs, trips):
            eps = (vals[a] - x) % p
            phi = (vals[b] - y) % p
            m_eps = (macs[a] - mx) % p
            m_phi = (macs[b] - my) % p
            m0 = (macs[c] - mz - eps * my - phi * mx) % p
            o.extend((eps, self._mac(m_eps), phi, self._mac(m_phi),
                      self._mac(m0)))
        return hs

    def mul(self, a: int, b: int) -> int:
        return self.mul_vec([(a, b)])[0]

    def assert_zero_vec(self, hs):
        if self.backend is Backend.TRANSPARENT:
            return
        for h in hs:
            self.out.append(self._mac(self.st.macs[h]))

    def assert_zero(self, h: int):
        self.assert_zero_vec([h])

    def open_vec(self, hs) -> list[int]:
        for h in hs:
            v, m = self.st.open_payload(h)
            self.out.append(v)
            self.out.append(self._mac(m))
        return [self.st.vals[h] for h in hs]

    def open(self, h: int) -> int:
        return self.open_vec([h])[0]

    def range_check(self, h: int, bits: int):
        """Prove the handle's value lies in [0, 2^bits)."""
        if bits > max_range_bits(self.p):
            raise ValueError("range width too close to field size")
        v = balanced(self.st.vals[h], self.p)
        v_clip = v % (1 << bits)   # honest provers are never clipped
        bit_vals = [(v_clip >> i) & 1 for i in range(bits)]
        bhs = self.commit_witness_vec(bit_vals)
        self.mul_vec([(bh, bh) for bh in bhs])  # b*b committed
        # booleanity: b*b - b == 0; recomposition: sum 2^i b_i - v == 0
        sq = len(self.st.vals) - bits
        zero_hs = [self.st.sub(sq + i, bhs[i]) for i in range(bits)]
        recomp = self.st.lincomb([1 << i for i in range(bits)], bhs)
        zero_hs.append(self.st.sub(recomp, h))
        self.assert_zero_vec(zero_hs)

    def rescale_trunc(self, h: int, shift: int) -> int:
        """Truncate-toward-zero division by 2^shift, proven via remainder."""
        v = balanced(self.st.vals[h], self.p)
        q = v // (1 << shift) if v >= 0 else -((-v) >> shift)
        qh = self.commit_witness(q % self.p)
        rem = self.st.sub(h, self.st.scalar_mul(1 << shift, qh))
        shifted = self.st.add_public((1 << shift) - 1, rem)
        self.range_check(shifted, shift + 1)
        return qh

    def sqnorm_le(self, hs, bound: int, slack_bits: int):
        """Prove sum of squares of the handles' values is <= bound."""
        sq = self.mul_vec([(h, h) for h in hs])
        total = sum(balanced(self.st.vals[h], self.p) ** 2 for h in hs)
        slack = bound - total
        sh = self.commit_witness(slack % self.p)
        agg = self.st.lincomb([1] * len(sq) + [1], list(sq) + [sh])
        self.assert_zero(self.st.add_public(-bound, agg))
        self.range_check(sh, slack_bits)


class VerifierCtx:
    """Verifier side; consumes the prover's residue stream in lock-step."""

    def __init__(self, store: VerifierStore, dealer: Dealer,
                 backend: Backend):
        self.st = store
        self.dealer = dealer
        self.backend = backend
        self.p = store.p
        self._buf: list[int] = []
        self._pos = 0
        # transparent mode tracks revealed values per handle
        self.vals: dict[int, int] = {}

    def feed(self, data: list[int]):
        self._buf = data
        self._pos = 0

    def done(self):
        if self._pos != len(self._buf):
            raise Reject("proof stream length mismatch")

    def _take(self, n: int) -> list[int]:
        if self._pos + n > len(self._buf):
            raise Reject("truncated proof stream")
        out = self._buf[self._pos:self._pos + n]
        self._pos += n
        return out

    # -- structural ops -------------------------------------------------------

    def const(self, c: int) -> int:
        h = self.st.const(c)
        self.vals[h] = c % self.p
        return h

    def _lift(self, h: int):
        return self.vals.get(h)

    def _track(self, h: int, fn, *hs):
        if self.backend is Backend.TRANSPARENT:
            vs = [self.vals[x] for x in hs]
            self.vals[h] = fn(*vs) % self.p
        return h

    def add(self, a: int, b: int) -> int:
        return self._track(self.st.add(a, b), lambda x, y: x + y, a, b)

    def sub(self, a: int, b: int) -> int:
        return self._track(self.st.sub(a, b), lambda x, y: x - y, a, b)

    def scalar_mul(self, c: int, a: int) -> int:
        return self._track(self.st.scalar_mul(c, a), lambda x: c * x, a)

    def add_public(self, c: int, a: int) -> int:
        return self._track(self.st.add_public(c, a), lambda x: x + c, a)

    def lincomb(self, coeffs, hs, const_term: int = 0) -> int:
        h = self.st.lincomb(coeffs, hs, const_term)
        if self.backend is Backend.TRANSPARENT:
            v = const_term
            for c, x in zip(coeffs, hs):
                v += c * self.vals[x]
            self.vals[h] = v % self.p
        return h

    def commit_witness_vec(self, values=None, count: int = 1) -> list[int]:
        n = count if values is None else len(values)
        omegas = self._take(n)
        hs = self.st.on_commit_vec(omegas)
        if self.backend is Backend.TRANSPARENT:
            for h in hs:
                v, m = self._take(2)
                if not self.st.check_open(h, v, m):
                    raise Reject("bad opening for transparent witness")
                self.vals[h] = v % self.p
        return hs

    def commit_witness(self, value=None) -> int:
        return self.commit_witness_vec(count=1)[0]

    def mul_vec(self, pairs) -> list[int]:
        p = self.p
        hs = self.commit_witness_vec(count=len(pairs))
        if self.backend is Backend.TRANSPARENT:
            for (a, b), c in zip(pairs, hs):
                if self.vals[c] != (self.vals[a] * self.vals[b]) % p:
                    raise Reject("product relation does not hold")
            return hs
        trips = self.dealer.verifier_triples(len(pairs))
        keys, d = self.st.keys, self.st.delta
        for (a, b), c, (kx, ky, kz) in zip(pairs, hs, trips):
            eps, m_eps, phi, m_phi, m0 = self._take(5)
            if m_eps % p != (keys[a] - kx + eps * d) % p:
                raise Reject("sacrifice: bad epsilon opening")
            if m_phi % p != (keys[b] - ky + phi * d) % p:
                raise Reject("sacrifice: bad phi opening")
            k0 = (keys[c] - kz - eps * ky - phi * kx + eps * phi * d) % p
            if m0 % p != k0:
                raise Reject("sacrifice: product relation does not hold")
        return hs

    def mul(self, a: int, b: int) -> int:
        return self.mul_vec([(a, b)])[0]

    def assert_zero_vec(self, hs):
        p = self.p
        if self.backend is Backend.TRANSPARENT:
            for h in hs:
                if self.vals[h] % p != 0:
                    raise Reject("linear relation does not hold")
            return
        for h in hs:
            (m0,) = self._take(1)
            if m0 % p != self.st.keys[h] % p:
                raise Reject("linear relation does not hold")

    def assert_zero(self, h: int):
        self.assert_zero_vec([h])

    def open_vec(self, hs) -> list[int]:
        out = []
        for h in hs:
            v, m = self._take(2)
            if not self.st.check_open(h, v, m):
                raise Reject("bad opening")
            self.vals[h] = v % self.p
            out.append(v % self.p)
        return out

    def open(self, h: int) -> int:
        return self.open_vec([h])[0]

    def range_check(self, h: int, bits: int):
        if bits > max_range_bits(self.p):
            raise ValueError("range width too close to field size")
        bhs = self.commit_witness_vec(count=bits)
        sq = self.mul_vec([(bh, bh) for bh in bhs])
        zero_hs = [self.sub(sq[i], bhs[i]) for i in range(bits)]
        recomp = self.lincomb([1 << i for i in range(bits)], bhs)
        zero_hs.append(self.sub(recomp, h))
        self.assert_zero_vec(zero_hs)

    def rescale_trunc(self, h: int, shift: int) -> int:
        qh = self.commit_witness()
        rem = self.sub(h, self.scalar_mul(1 << shift, qh))
        shifted = self.add_public((1 << shift) - 1, rem)
        self.range_check(shifted, shift + 1)
        return qh

    def sqnorm_le(self, hs, bound: int, slack_bits: int):
        sq = self.mul_vec([(h, h) for h in hs])
        sh = self.commit_witness()
        agg = self.lincomb([1] * len(sq) + [1], list(sq) + [sh])
        self.assert_zero(self.add_public(-bound, agg))
        self.range_check(sh, slack_bits)


# -- statement-level wrappers (in-memory exchange) ----------------------------

def _ctx_pair(pstore, vstore, dealer, backend):
    return ProverCtx(pstore, dealer, backend), VerifierCtx(vstore, dealer, backend)


def run_statement(stmt: RelationStatement, pstore: ProverStore,
                  vstore: VerifierStore, dealer: Dealer,
                  backend: Backend, cheat=None) -> tuple[bool, str]:
    """Prove one relation statement end to end; returns (accepted, reason).

    `stmt.inputs` are handle indices valid in both stores. `cheat` is an
    optional callable applied to the ProverCtx before proving.
    """
    pc, vc = _ctx_pair(pstore, vstore, dealer, backend)
    if cheat:
        cheat(pc)
    kind, params = stmt.kind, stmt.public_params
    try:
        _drive(pc, stmt.inputs, kind, params)
        vc.feed(pc.out)
        _drive(vc, stmt.inputs, kind, params)
        vc.done()
        return True, ""
    except Reject as r:
        return False, r.reason


def _drive(ctx, inputs, kind: RelKind, params):
    if ctx.backend is Backend.TRANSPARENT:
        ctx.open_vec(inputs)   # transparent mode reveals the witnesses
    if kind is RelKind.MUL:
        a, b, c = inputs
        prod = ctx.mul(a, b)
        ctx.assert_zero(ctx.sub(prod, c))
    elif kind is RelKind.RANGE:
        (h,) = inputs
        (bits,) = params
        ctx.range_check(h, bits)
    elif kind is RelKind.SQNORM_LE:
        bound, slack_bits = params
        ctx.sqnorm_le(inputs, bound, slack_bits)
    elif kind is RelKind.LINEAR:
        *hs, out = inputs
        coeffs, const_term = params
        combo = ctx.lincomb(coeffs, hs, const_term)
        ctx.assert_zero(ctx.sub(combo, out))
    else:
        raise ValueError(kind)
