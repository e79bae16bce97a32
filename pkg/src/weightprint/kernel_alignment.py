"""HSIC estimators and (unbiased) centered kernel alignment with linear kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from weightprint.errors import DegenerateKernelError, ValidationError
from weightprint.linalg import gram_linear

SYMMETRY_ATOL = 1e-10

# Self-HSIC below this fraction of the kernel's squared Frobenius scale counts as zero.
DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class KernelPair:
    """Two symmetric ``m x m`` Gram matrices over the same samples."""

    k1: np.ndarray
    k2: np.ndarray

    def __post_init__(self):
        k1 = np.asarray(self.k1, dtype=np.float64)
        k2 = np.asarray(self.k2, dtype=np.float64)
        for name, k in (("k1", k1), ("k2", k2)):
            if k.ndim != 2 or k.shape[0] != k.shape[1]:
                raise ValidationError(f"{name} must be square, got shape {k.shape}")
            if not np.all(np.isfinite(k)):
                raise ValidationError(f"{name} contains non-finite values")
            scale = max(1.0, float(np.max(np.abs(k)))) if k.size else 1.0
            if not np.allclose(k, k.T, rtol=0.0, atol=SYMMETRY_ATOL * scale):
                raise ValidationError(f"{name} is not symmetric")
        if k1.shape != k2.shape:
            raise ValidationError(f"kernel sizes differ: {k1.shape} vs {k2.shape}")
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)

    @property
    def m(self) -> int:
        return self.k1.shape[0]


def _center(k: np.ndarray) -> np.ndarray:
    # H K H via row/column means instead of materializing H.
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    return k - row - col + k.mean()


def hsic_biased(pair: KernelPair) -> float:
    """``tr(K1 H K2 H) / (m-1)^2``."""
    m = pair.m
    if m < 2:
        raise ValidationError(f"hsic_biased needs m >= 2, got {m}")
    return float(np.sum(_center(pair.k1) * pair.k2) / (m - 1) ** 2)


def _unbiased_terms(k1: np.ndarray, k2: np.ndarray) -> float:
    m = k1.shape[0]
    k1 = k1.copy()
    k2 = k2.copy()
    np.fill_diagonal(k1, 0.0)
    np.fill_diagonal(k2, 0.0)
    r1 = k1.sum(axis=1)
    r2 = k2.sum(axis=1)
    trace = np.sum(k1 * k2)  # tr(K1 K2) for symmetric K2
    cross = r1.sum() * r2.sum() / ((m - 1) * (m - 2))
    mixed = 2.0 * float(r1 @ r2) / (m - 2)
    return float((trace + cross - mixed) / (m * (m - 3)))


def hsic_unbiased(pair: KernelPair) -> float:
    """Unbiased HSIC estimator on diagonal-zeroed kernels; may be negative."""
    if pair.m < 4:
        raise ValidationError(f"hsic_unbiased needs m >= 4, got {pair.m}")
    return _unbiased_terms(pair.k1, pair.k2)


def _pair_rows(x1, x2, minimum: int) -> tuple[np.ndarray, np.ndarray]:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim != 2 or x2.ndim != 2:
        raise ValidationError(f"inputs must be 2-D, got shapes {x1.shape} and {x2.shape}")
    if x1.shape[0] != x2.shape[0]:
        raise ValidationError(f"sample counts differ: {x1.shape[0]} vs {x2.shape[0]}")
    if x1.shape[0] < minimum:
        raise ValidationError(f"need at least {minimum} samples, got {x1.shape[0]}")
    return x1, x2


def _check_self(value: float, k: np.ndarray, which: str) -> None:
    m = k.shape[0]
    scale = float(np.sum(k * k)) / (m * m)
    if not value > DEGENERACY_RTOL * scale:
        raise DegenerateKernelError(
            f"self-similarity of {which} is {value:.3e}; input rows are (near-)constant or too few"
        )


def ucka(x1, x2, clamp: bool = True) -> float:
    """Unbiased CKA of two sample-by-feature matrices, clamped to [-1, 1].

    Rows are samples; the feature counts of ``x1`` and ``x2`` may differ.
    ``clamp=False`` returns the raw ratio, which rounding can push a hair
    past +-1.
    """
    x1, x2 = _pair_rows(x1, x2, 4)
    k1, k2 = gram_linear(x1), gram_linear(x2)
    h11 = _unbiased_terms(k1, k1)
    h22 = _unbiased_terms(k2, k2)
    _check_self(h11, k1, "x1")
    _check_self(h22, k2, "x2")
    value = _unbiased_terms(k1, k2) / math.sqrt(h11 * h22)
    return min(1.0, max(-1.0, value)) if clamp else value


def cka_biased(x1, x2) -> float:
    """Classical CKA with the biased HSIC estimator, clamped to [0, 1]."""
    x1, x2 = _pair_rows(x1, x2, 2)
    k1, k2 = gram_linear(x1), gram_linear(x2)
    h11 = hsic_biased(KernelPair(k1, k1))
    h22 = hsic_biased(KernelPair(k2, k2))
    denom = h11 * h22
    if not denom > 0:
        raise DegenerateKernelError("zero denominator: an input has constant rows")
    value = hsic_biased(KernelPair(k1, k2)) / math.sqrt(denom)
    return min(1.0, max(0.0, value))
