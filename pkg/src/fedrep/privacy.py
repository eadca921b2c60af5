"""Update sanitization: L2 clipping, Gaussian noise, and the encode/decode
channel applied to parameter vectors before they travel to the centre.

The Gaussian mechanism is calibrated with the classic closed form
sigma = C * sqrt(2 * ln(1.25 / delta)) / epsilon, valid for epsilon <= 1.
The per-release budget applies to each update; k releases compose to
(k * epsilon, k * delta) under simple composition (reported, not enforced).

The codec is a pluggable stand-in for an encrypted channel: ``identity``
is the plain wire format, ``symmetric`` wraps it in ChaCha20-Poly1305 with
a deterministic (payload-keyed) nonce so identical inputs encode to
identical bytes. Aggregation happens on decoded plaintext at the centre;
the symmetric scheme protects the transport, nothing more.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import CodecError
from .model import deserialize_vector, serialize_vector

__all__ = [
    "DpConfig",
    "Codec",
    "clip_update",
    "gaussian_sigma",
    "perturb",
    "encode",
    "decode",
]

_NONCE_BYTES = 12


@dataclass(frozen=True)
class DpConfig:
    """Per-update differential privacy budget and clipping bound."""

    epsilon: float = 1.0
    delta: float = 1e-5
    clip_norm: float = 1.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")


@dataclass(frozen=True)
class Codec:
    """Channel encoding scheme for exchanged parameter vectors."""

    scheme: str = "identity"
    key: bytes | None = None

    def __post_init__(self) -> None:
        if self.scheme not in ("identity", "symmetric"):
            raise ValueError(f"unknown codec scheme {self.scheme!r}")
        if self.scheme == "symmetric":
            if not isinstance(self.key, bytes) or len(self.key) != 32:
                raise ValueError("symmetric codec requires a 32-byte key")
        elif self.key is not None:
            raise ValueError("identity codec takes no key")


def clip_update(vector: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale the vector onto the L2 ball of radius clip_norm if outside it."""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    vector = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    if norm <= clip_norm:
        return vector.copy()
    return vector * (clip_norm / norm)


def gaussian_sigma(cfg: DpConfig) -> float:
    """Noise scale of the Gaussian mechanism.

    The closed form is only a valid (epsilon, delta) calibration for
    epsilon <= 1; larger budgets are rejected rather than silently
    under-noised.
    """
    if cfg.epsilon > 1.0:
        raise ValueError(
            f"epsilon={cfg.epsilon} outside the calibration range of the "
            "classic Gaussian mechanism (requires epsilon <= 1)"
        )
    return cfg.clip_norm * np.sqrt(2.0 * np.log(1.25 / cfg.delta)) / cfg.epsilon


def perturb(vector: np.ndarray, cfg: DpConfig, rng_seed: int) -> np.ndarray:
    """Clip to cfg.clip_norm, then add N(0, sigma^2) noise elementwise.

    Deterministic given rng_seed. With cfg.enabled false this is the
    identity (no clipping either), so a disabled mechanism never alters
    the protocol's numbers.
    """
    vector = np.asarray(vector, dtype=np.float64)
    if not cfg.enabled:
        return vector.copy()
    clipped = clip_update(vector, cfg.clip_norm)
    sigma = gaussian_sigma(cfg)
    noise = np.random.default_rng(rng_seed).normal(0.0, sigma, size=len(clipped))
    return clipped + noise


def _nonce(key: bytes, plaintext: bytes) -> bytes:
    # Payload-keyed nonce keeps encoding deterministic; with identical
    # key+plaintext it only ever repeats on identical messages.
    return hashlib.blake2b(plaintext, digest_size=_NONCE_BYTES, key=key).digest()


def encode(vector: np.ndarray, codec: Codec) -> bytes:
    """Serialize a parameter vector for the wire under the given scheme."""
    plain = serialize_vector(vector)
    if codec.scheme == "identity":
        return plain
    nonce = _nonce(codec.key, plain)
    return nonce + ChaCha20Poly1305(codec.key).encrypt(nonce, plain, None)


def decode(payload: bytes, codec: Codec) -> np.ndarray:
    """Inverse of :func:`encode`; authentication failures raise CodecError."""
    if codec.scheme == "symmetric":
        if len(payload) <= _NONCE_BYTES:
            raise CodecError("payload too short for the symmetric scheme")
        nonce, ciphertext = payload[:_NONCE_BYTES], payload[_NONCE_BYTES:]
        try:
            payload = ChaCha20Poly1305(codec.key).decrypt(nonce, ciphertext, None)
        except InvalidTag as exc:
            raise CodecError("authentication failure: wrong key or corrupted payload") from exc
    try:
        return deserialize_vector(payload)
    except ValueError as exc:
        raise CodecError(str(exc)) from exc
