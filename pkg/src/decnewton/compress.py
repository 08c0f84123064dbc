"""Deterministic contractive matrix compression with payload accounting.

Two concrete operators act on d x d matrices:

* ``rank_k`` keeps the top-K terms of the singular value decomposition and
  satisfies ``||Q(A) - A||_F <= (1 - K/(2d)) ||A||_F``.
* ``top_k`` keeps the K entries of largest absolute value (ties broken by
  lowest row-major index) and satisfies the same bound with
  ``K/(2 d^2)`` in place of ``K/(2d)``.

``identity`` passes matrices through unchanged (contraction factor 0,
i.e. delta = 1) and exists so compressed and uncompressed runs share one
code path. All operators are deterministic: the same input always yields a
bit-identical reconstruction. Payload sizes assume 64-bit floats and packed
index encoding; only relative comparisons between operators are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CompressorSpec",
    "CompressedPayload",
    "compress",
    "delta_bound",
    "payload_bits",
]

_KINDS = ("rank_k", "top_k", "identity")


@dataclass(frozen=True)
class CompressorSpec:
    """Which operator to use, how many components to keep, and the side length."""

    kind: str
    d: int
    K: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown compressor kind {self.kind!r}, expected one of {_KINDS}")
        if self.d < 1:
            raise ValueError(f"matrix side length must be positive, got d={self.d}")
        if self.kind == "rank_k" and not 1 <= self.K <= self.d:
            raise ValueError(f"rank_k needs 1 <= K <= d, got K={self.K}, d={self.d}")
        if self.kind == "top_k" and not 1 <= self.K <= self.d * self.d:
            raise ValueError(f"top_k needs 1 <= K <= d^2, got K={self.K}, d={self.d}")


@dataclass(frozen=True)
class CompressedPayload:
    """Dense reconstruction Q(A) plus the transmitted-size estimate in bits."""

    dense: np.ndarray
    bits: int


def compress(spec: CompressorSpec, A: np.ndarray) -> CompressedPayload:
    """Apply the operator to a d x d matrix; returns reconstruction + bits."""
    A = np.asarray(A, dtype=float)
    if A.shape != (spec.d, spec.d):
        raise ValueError(f"expected a {spec.d}x{spec.d} matrix, got shape {A.shape}")
    if spec.kind == "identity":
        dense = A.copy()
    elif spec.kind == "rank_k":
        dense = _rank_k(A, spec.K)
    else:
        dense = _top_k(A, spec.K)
    return CompressedPayload(dense=dense, bits=payload_bits(spec))


def _rank_k(A: np.ndarray, K: int) -> np.ndarray:
    U, s, Vt = np.linalg.svd(A)
    U = U[:, :K].copy()
    Vt = Vt[:K].copy()
    # Fix the sign so each left singular vector has its largest-magnitude
    # entry positive; the reconstruction is invariant but the transmitted
    # factors become backend-independent.
    for j in range(K):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0:
            U[:, j] = -U[:, j]
            Vt[j] = -Vt[j]
    return (U * s[:K]) @ Vt


def _top_k(A: np.ndarray, K: int) -> np.ndarray:
    flat = A.ravel()
    # Stable sort on -|a| keeps the lowest linear index among tied magnitudes.
    order = np.argsort(-np.abs(flat), kind="stable")[:K]
    out = np.zeros_like(flat)
    out[order] = flat[order]
    return out.reshape(A.shape)


def delta_bound(spec: CompressorSpec) -> float:
    """Guaranteed contraction parameter: ||Q(A)-A||_F <= (1-delta) ||A||_F."""
    if spec.kind == "rank_k":
        return spec.K / (2.0 * spec.d)
    if spec.kind == "top_k":
        return spec.K / (2.0 * spec.d * spec.d)
    return 1.0


def payload_bits(spec: CompressorSpec) -> int:
    """Transmitted size of one compressed matrix, in bits."""
    d, K = spec.d, spec.K
    if spec.kind == "top_k":
        return K * (64 + math.ceil(math.log2(d * d)))
    if spec.kind == "rank_k":
        return K * (2 * d + 1) * 64
    return d * d * 64
