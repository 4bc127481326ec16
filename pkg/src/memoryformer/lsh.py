"""Compute-free locality-sensitive hashing on sign patterns.

A chunk ``z`` of ``tau`` values addresses one of ``2^tau`` table buckets via
the sign pattern of its entries, so nearby vectors collide. The retrieval
weight of the selected bucket is its softmax probability among all ``2^tau``
sign patterns under inner-product similarity ``<z, pattern>/t``; that softmax
collapses to a closed-form product over coordinates,

    p(z) = 1 / prod_i (1 + exp(-2|z_i|/t)),

which is what :func:`bucket_weight` evaluates (in log space, to stay exact at
large ``tau``). :func:`bucket_weight_naive` keeps the explicit softmax over
all buckets as a brute-force oracle for tests.

All functions act on the last axis and broadcast over any leading axes, so a
single call handles one chunk or a whole ``(tokens, chunks)`` batch alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChunkSpec",
    "sign_binarize",
    "encode_index",
    "decode_index",
    "bucket_index",
    "split_chunks",
    "bucket_weight",
    "bucket_weight_naive",
    "bucket_weight_grad",
]

# brute-force enumeration over 2^tau buckets is a test oracle, not a runtime path
MAX_NAIVE_TAU = 16


@dataclass(frozen=True)
class ChunkSpec:
    """How an input of width ``d`` splits into ``K`` chunks of ``tau`` bits."""

    d: int
    K: int
    tau: int

    def __post_init__(self):
        if self.tau < 1 or self.K < 1:
            raise ValueError(f"need tau >= 1 and K >= 1, got tau={self.tau}, K={self.K}")
        if self.d != self.K * self.tau:
            raise ValueError(f"width {self.d} != K*tau = {self.K}*{self.tau}")

    @property
    def n_buckets(self) -> int:
        return 1 << self.tau


def sign_binarize(z: np.ndarray) -> np.ndarray:
    """Entry-wise sign with the boundary convention sign(0) = +1."""
    z = np.asarray(z)
    if not np.isfinite(z).all():
        raise ValueError("sign_binarize requires finite entries")
    return np.where(z >= 0, 1.0, -1.0).astype(z.dtype if z.dtype.kind == "f" else np.float64)


def encode_index(signs: np.ndarray) -> np.ndarray:
    """Map a {-1,+1} vector to its bucket integer, little-endian.

    Entry ``i`` contributes ``2^i`` when positive: index = sum_i (s_i+1)/2 * 2^i.
    """
    signs = np.asarray(signs)
    if not np.all(np.abs(signs) == 1):
        raise ValueError("encode_index entries must be -1 or +1")
    tau = signs.shape[-1]
    weights = np.int64(1) << np.arange(tau, dtype=np.int64)
    return ((signs > 0).astype(np.int64) * weights).sum(axis=-1)


def decode_index(index, tau: int) -> np.ndarray:
    """Inverse of :func:`encode_index`: bucket integer -> {-1,+1}^tau."""
    index = np.asarray(index, dtype=np.int64)
    if np.any(index < 0) or np.any(index >= (1 << tau)):
        raise ValueError(f"bucket index out of range for tau={tau}")
    bits = (index[..., None] >> np.arange(tau, dtype=np.int64)) & 1
    return (2.0 * bits - 1.0).astype(np.float64)


def bucket_index(z: np.ndarray) -> np.ndarray:
    """Hash a chunk directly: encode_index(sign_binarize(z))."""
    z = np.asarray(z)
    if not np.isfinite(z).all():
        raise ValueError("bucket_index requires finite entries")
    tau = z.shape[-1]
    weights = np.int64(1) << np.arange(tau, dtype=np.int64)
    return ((z >= 0).astype(np.int64) * weights).sum(axis=-1)


def split_chunks(x: np.ndarray, spec: ChunkSpec) -> np.ndarray:
    """Reshape ``(..., d)`` into contiguous chunks ``(..., K, tau)``.

    Chunk ``k`` holds entries ``[k*tau, (k+1)*tau)``; concatenating the chunks
    restores the input.
    """
    x = np.asarray(x)
    if x.shape[-1] != spec.d:
        raise ValueError(f"input width {x.shape[-1]} does not match spec width {spec.d}")
    return x.reshape(x.shape[:-1] + (spec.K, spec.tau))


def bucket_weight(z: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Closed-form softmax weight of the bucket selected by sign(z).

    Evaluated as exp(-sum_i log(1 + exp(-2|z_i|/t))) so the product cannot
    underflow for large ``tau``. Ranges over (0, 1]; exactly 2^-tau at z = 0.
    """
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    z = np.asarray(z)
    u = 2.0 * np.abs(z) / t
    return np.exp(-np.log1p(np.exp(-u)).sum(axis=-1))


def bucket_weight_naive(z: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Brute-force bucket distribution: softmax over all 2^tau sign patterns.

    Similarity of ``z`` with bucket ``i`` is ``<z, decode_index(i, tau)>``.
    Returns shape ``(..., 2^tau)`` summing to 1. Test oracle only; refuses
    tau beyond enumeration range.
    """
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    z = np.asarray(z, dtype=np.float64)
    tau = z.shape[-1]
    if tau > MAX_NAIVE_TAU:
        raise ValueError(f"naive enumeration limited to tau <= {MAX_NAIVE_TAU}")
    patterns = decode_index(np.arange(1 << tau), tau)  # (2^tau, tau)
    sims = z @ patterns.T / t
    sims -= sims.max(axis=-1, keepdims=True)
    e = np.exp(sims)
    return e / e.sum(axis=-1, keepdims=True)


def bucket_weight_grad(z: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Analytic gradient of :func:`bucket_weight` w.r.t. each entry of z.

    d p / d z_i = p * sign(z_i) * (2/t) / (1 + exp(2|z_i|/t)),
    with sign(0) = +1 matching the hashing convention.
    """
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    z = np.asarray(z)
    u = 2.0 * np.abs(z) / t
    eu = np.exp(-u)
    p = np.exp(-np.log1p(eu).sum(axis=-1))
    sgn = np.where(z >= 0, 1.0, -1.0)
    # 1/(1+exp(u)) written via exp(-u) so large |z| underflows to 0 gracefully
    return p[..., None] * sgn * (2.0 / t) * (eu / (1.0 + eu))
