"""Additively homomorphic IT-MAC commitments over a prime field.

A committed value x is held as (value, mac) on the prover side and a key on
the verifier side, with mac = key + value * delta for the verifier's global
key delta. All linear operations compose without interaction. Correlated
randomness (random authenticated values and multiplication triples) comes
from a Dealer, which in test mode is a trusted in-process object handing each
role only its half of every correlation.

Handles index parallel arrays; both roles must perform the same structural
sequence of operations so handles line up.
"""

from __future__ import annotations

import random
from dataclasses import dataclass


@dataclass(frozen=True)
class GlobalKey:
    delta: int
    p: int


class MacCheckError(Exception):
    """An opening failed the authentication equation."""


def setup(p: int, seed=None) -> "Dealer":
    """Sample a global MAC key and return the session's dealer."""
    return Dealer(p, seed)


class Dealer:
    """Trusted correlated-randomness source for one session.

    Hands the prover (value, mac) pairs and the verifier keys, for uniformly
    random values the dealer picks. Value-independent: actual inputs are bound
    later by public derandomizers. Both roles consume each stream in the same
    order; the dealer buffers whichever side is ahead.
    """

    def __init__(self, p: int, seed=None):
        self.p = p
        self._rng = random.Random(seed)
        # delta = 0 would make MACs value-independent; exclude it so a value
        # lie with honest MAC plumbing is caught deterministically.
        self.global_key = GlobalKey(self._rng.randrange(1, p), p)
        self._auth_p = []   # (u, mac) queue for the prover
        self._auth_v = []   # key queue for the verifier
        self._trip_p = []   # (x, y, z, mx, my, mz)
        self._trip_v = []   # (kx, ky, kz)
        # independent vectorized stream (small fields only); both roles must
        # consume it in the same order, like the scalar streams
        self._np_rng = None
        self._arr_p = []
        self._arr_v = []

    def _gen_auth(self, count: int):
        p, d = self.p, self.global_key.delta
        rng = self._rng
        for _ in range(count):
            u = rng.randrange(p)
            k = rng.randrange(p)
            self._auth_p.append((u, (k + u * d) % p))
            self._auth_v.append(k)

    def _gen_triples(self, count: int):
        p, d = self.p, self.global_key.delta
        rng = self._rng
        for _ in range(count):
            x = rng.randrange(p)
            y = rng.randrange(p)
            z = (x * y) % p
            ks = [rng.randrange(p) for _ in range(3)]
            self._trip_p.append(
                (x, y, z,
                 (ks[0] + x * d) % p, (ks[1] + y * d) % p, (ks[2] + z * d) % p)
            )
            self._trip_v.append(tuple(ks))

    def prover_auth(self, count: int):
        if len(self._auth_p) < count:
            self._gen_auth(count - len(self._auth_p))
        out, self._auth_p = self._auth_p[:count], self._auth_p[count:]
        return out

    def verifier_auth(self, count: int):
        if len(self._auth_v) < count:
            self._gen_auth(count - len(self._auth_v))
        out, self._auth_v = self._auth_v[:count], self._auth_v[count:]
        return out

    def prover_triples(self, count: int):
        if len(self._trip_p) < count:
            self._gen_triples(count - len(self._trip_p))
        out, self._trip_p = self._trip_p[:count], self._trip_p[count:]
        return out

    def verifier_triples(self, count: int):
        if len(self._trip_v) < count:
            self._gen_triples(count - len(self._trip_v))
        out, self._trip_v = self._trip_v[:count], self._trip_v[count:]
        return out

    def _gen_arrays(self, count: int):
        import numpy as np
        if self.p >= 1 << 32:
            raise ValueError("array correlations require a small field")
        if self._np_rng is None:
            self._np_rng = np.random.default_rng(self._rng.getrandbits(64))
        p = np.uint64(self.p)
        d = np.uint64(self.global_key.delta)
        u = self._np_rng.integers(0, self.p, count).astype(np.uint64)
        k = self._np_rng.integers(0, self.p, count).astype(np.uint64)
        m = (k + u * d) % p
        self._arr_p.append((u, m))
        self._arr_v.append(k)

    def prover_auth_arrays(self, count: int):
        """Vectorized (u, mac) block; independent of the scalar stream."""
        if not self._arr_p:
            self._gen_arrays(count)
        u, m = self._arr_p.pop(0)
        if len(u) != count:
            raise ValueError("array stream consumed out of step")
        return u, m

    def verifier_auth_arrays(self, count: int):
        if not self._arr_v:
            self._gen_arrays(count)
        k = self._arr_v.pop(0)
        if len(k) != count:
            raise ValueError("array stream consumed out of step")
        return k


class ProverStore:
    """Prover-side halves of all session commitments (values and MACs)."""

    def __init__(self, p: int, dealer: Dealer):
        self.p = p
        self.dealer = dealer
        self.vals: list[int] = []
        self.macs: list[int] = []

    def __len__(self):
        return len(self.vals)

    def _push(self, v: int, m: int) -> int:
        self.vals.append(v)
        self.macs.append(m)
        return len(self.vals) - 1

    def commit_vec(self, xs) -> tuple[list[int], list[int]]:
        """Commit values; returns (handles, wire derandomizers)."""
        p = self.p
        pairs = self.dealer.prover_auth(len(xs))
        handles, omegas = [], []
        for x, (u, mu) in zip(xs, pairs):
            x %= p
            omegas.append((x - u) % p)
            handles.append(self._push(x, mu))
        return handles, omegas

    def commit(self, x: int):
        hs, om = self.commit_vec([x])
        return hs[0], om[0]

    def const(self, c: int) -> int:
        return self._push(c % self.p, 0)

    def add(self, a: int, b: int) -> int:
        p = self.p
        return self._push((self.vals[a] + self.vals[b]) % p,
                          (self.macs[a] + self.macs[b]) % p)

    def sub(self, a: int, b: int) -> int:
        p = self.p
        return self._push((self.vals[a] - self.vals[b]) % p,
                          (self.macs[a] - self.macs[b]) % p)

    def scalar_mul(self, c: int, a: int) -> int:
        p = self.p
        return self._push((c * self.vals[a]) % p, (c * self.macs[a]) % p)

    def add_public(self, c: int, a: int) -> int:
        return self._push((self.vals[a] + c) % self.p, self.macs[a])

    def lincomb(self, coeffs, handles, const_term: int = 0) -> int:
        p = self.p
        v = const_term % p
        m = 0
        for c, h in zip(coeffs, handles):
            v = (v + c * self.vals[h]) % p
            m = (m + c * self.macs[h]) % p
        return self._push(v, m)

    def open_payload(self, h: int) -> tuple[int, int]:
        return self.vals[h], self.macs[h]


class VerifierStore:
    """Verifier-side keys, mirroring the prover's handle sequence."""

    def __init__(self, p: int, dealer: Dealer):
        self.p = p
        self.dealer = dealer
        self.delta = dealer.global_key.delta
        self.keys: list[int] = []

    def __len__(self):
        return len(self.keys)

    def _push(self, k: int) -> int:
        self.keys.append(k)
        return len(self.keys) - 1

    def on_commit_vec(self, omegas) -> list[int]:
        p, d = self.p, self.delta
        ks = self.dealer.verifier_auth(len(omegas))
        return [self._push((k - om * d) % p) for k, om in zip(ks, omegas)]

    def on_commit(self, omega: int) -> int:
        return self.on_commit_vec([omega])[0]

    def const(self, c: int) -> int:
        return self._push((-(c % self.p) * self.delta) % self.p)

    def add(self, a: int, b: int) -> int:
        return self._push((self.keys[a] + self.keys[b]) % self.p)

    def sub(self, a: int, b: int) -> int:
        return self._push((self.keys[a] - self.keys[b]) % self.p)

    def scalar_mul(self, c: int, a: int) -> int:
        return self._push((c * self.keys[a]) % self.p)

    def add_public(self, c: int, a: int) -> int:
        return self._push((self.keys[a] - c * self.delta) % self.p)

    def lincomb(self, coeffs, handles, const_term: int = 0) -> int:
        p = self.p
        k = (-(const_term % p) * self.delta) % p
        for c, h in zip(coeffs, handles):
            k = (k + c * self.keys[h]) % p
        return self._push(k)

    def check_open(self, h: int, val: int, mac: int) -> bool:
        return mac % self.p == (self.keys[h] + val * self.delta) % self.p

    def open_or_raise(self, h: int, val: int, mac: int) -> int:
        if not self.check_open(h, val, mac):
            raise MacCheckError(f"MAC check failed for handle {h}")
        return val % self.p
