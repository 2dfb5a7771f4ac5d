"""Signature-triggered training and inference backdoors, and the black-box
audit harness that demonstrates why output-only auditing cannot certify
privacy.

A backdoored trainer carves a slice S out of the dataset's serialized bit
encoding and interprets it as (message, signature). On a valid signature it
runs an arbitrary alternative trainer (here: leak the dataset verbatim);
otherwise it behaves byte-for-byte like the honest trainer under the same
randomness. Without the signing key, triggering requires forging a
signature, so black-box queries cannot distinguish the two APIs.

The signature primitive is an abstract interface with Ed25519 plugged in;
no custom cryptography.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey)

MESSAGE_LEN = 32
SIG_LEN = 64
TRIGGER_LEN = MESSAGE_LEN + SIG_LEN


class SignatureScheme:
    """gen/sign/verify facade over a strongly unforgeable scheme."""

    @staticmethod
    def gen(security_param: int = 128):
        sk = Ed25519PrivateKey.generate()
        vk = sk.public_key().public_bytes_raw()
        return sk, vk

    @staticmethod
    def sign(sk: Ed25519PrivateKey, message: bytes) -> bytes:
        return sk.sign(message)

    @staticmethod
    def verify(vk: bytes, message: bytes, signature: bytes) -> bool:
        if len(signature) != SIG_LEN:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(vk).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False


def trigger_slice(blob: bytes) -> tuple[bytes, bytes]:
    """The designated indices S: the last MESSAGE_LEN + SIG_LEN bytes of the
    serialized dataset (or input) carry (m, sigma)."""
    if len(blob) < TRIGGER_LEN:
        raise ValueError("encoding too short to carry the trigger slice")
    tail = blob[-TRIGGER_LEN:]
    return tail[:MESSAGE_LEN], tail[MESSAGE_LEN:]


def plant_trigger(blob: bytes, sk) -> bytes:
    """Sign the designated message slot and splice (m, sigma) into S."""
    if len(blob) < TRIGGER_LEN:
        raise ValueError("encoding too short to carry the trigger slice")
    message = blob[-TRIGGER_LEN:-SIG_LEN]
    sig = SignatureScheme.sign(sk, message)
    return blob[:-SIG_LEN] + sig


@dataclass
class BackdooredTrainer:
    """Wraps an honest trainer T and an alternative T_bar behind the
    signature check on the dataset encoding's trigger slice."""

    honest: object          # bytes -> bytes
    alternative: object     # bytes -> bytes
    vk: bytes

    def __call__(self, blob: bytes) -> bytes:
        m, sig = trigger_slice(blob)
        if SignatureScheme.verify(self.vk, m, sig):
            return self.alternative(blob)
        return self.honest(blob)


def plant_training(honest, alternative, vk: bytes) -> BackdooredTrainer:
    return BackdooredTrainer(honest, alternative, vk)


def leak_dataset(blob: bytes) -> bytes:
    """The canonical malicious alternative: return the dataset verbatim."""
    return bytes(blob)


@dataclass
class BackdooredPredictor:
    """Inference-side variant: the trigger rides on the query input and a
    valid signature returns the training dataset."""

    model_fn: object        # bytes -> bytes
    dataset_blob: bytes
    vk: bytes

    def __call__(self, x: bytes) -> bytes:
        m, sig = trigger_slice(x)
        if SignatureScheme.verify(self.vk, m, sig):
            return bytes(self.dataset_blob)
        return self.model_fn(x)


def plant_inference(model_fn, dataset_blob: bytes,
                    vk: bytes) -> BackdooredPredictor:
    return BackdooredPredictor(model_fn, dataset_blob, vk)


def audit_blackbox(api_a, api_b, queries) -> float:
    """Empirical distinguishing advantage of an output-comparing auditor:
    the fraction of query inputs on which the two APIs' outputs differ.
    Deterministic (seed-shared) trainers make byte comparison exact."""
    diffs = 0
    total = 0
    for q in queries:
        total += 1
        if api_a(q) != api_b(q):
            diffs += 1
    return diffs / max(total, 1)
