"""Dense kernels shared by the numeric modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from weightprint.errors import ValidationError


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def cosine_matrix(a, b) -> np.ndarray:
    """Column-wise cosine similarities between ``a`` (m x p) and ``b`` (m x q).

    A column with zero norm has similarity 0 with every other column.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 1:
        raise ValidationError("cosine_matrix needs at least one row")
    na = np.sqrt(np.einsum("ij,ij->j", a, a))
    nb = np.sqrt(np.einsum("ij,ij->j", b, b))
    inv_a = np.divide(1.0, na, out=np.zeros_like(na), where=na > 0)
    inv_b = np.divide(1.0, nb, out=np.zeros_like(nb), where=nb > 0)
    return (a.T @ b) * inv_a[:, None] * inv_b[None, :]


def gram_linear(x) -> np.ndarray:
    """Linear-kernel Gram matrix ``X X^T`` over the rows of ``x``."""
    x = _as_matrix(x, "x")
    if x.shape[0] < 1:
        raise ValidationError("gram_linear needs at least one row")
    return x @ x.T


@dataclass(frozen=True, eq=False)
class BlockRotation:
    """Block-diagonal rotation ``diag(R(psi_0), R(psi_1), ...)`` of size ``2*len(angles)``.

    Each block is ``[[cos, -sin], [sin, cos]]`` acting on rows ``2j, 2j+1``,
    which is the same pairing RoPE uses, so the two commute.
    """

    angles: np.ndarray

    def __post_init__(self):
        angles = np.array(self.angles, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(angles)):
            raise ValidationError("rotation angles must be finite")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator) -> "BlockRotation":
        if dim % 2:
            raise ValidationError(f"rotation dimension must be even, got {dim}")
        return cls(rng.uniform(0.0, 2.0 * np.pi, size=dim // 2))

    @property
    def dim(self) -> int:
        return 2 * self.angles.size

    def inverse(self) -> "BlockRotation":
        return BlockRotation(-self.angles)

    def matrix(self) -> np.ndarray:
        r = np.zeros((self.dim, self.dim))
        c, s = np.cos(self.angles), np.sin(self.angles)
        idx = np.arange(self.angles.size) * 2
        r[idx, idx] = c
        r[idx, idx + 1] = -s
        r[idx + 1, idx] = s
        r[idx + 1, idx + 1] = c
        return r


def apply_block_rotation(w, rot: BlockRotation) -> np.ndarray:
    """Left-multiply ``w`` (d x n) by the block rotation, i.e. return ``R @ w``."""
    w = _as_matrix(w, "w")
    d = w.shape[0]
    if d % 2:
        raise ValidationError(f"row count must be even for a block rotation, got {d}")
    if rot.angles.size != d // 2:
        raise ValidationError(f"expected {d // 2} angles for {d} rows, got {rot.angles.size}")
    c = np.cos(rot.angles)[:, None]
    s = np.sin(rot.angles)[:, None]
    even, odd = w[0::2], w[1::2]
    out = np.empty_like(w)
    out[0::2] = c * even - s * odd
    out[1::2] = s * even + c * odd
    return out


def apply_perm_sign_columns(w, perm, signs, width: int | None = None) -> np.ndarray:
    """Move column ``k`` of ``w`` to column ``perm[k]`` and multiply it by ``signs[k]``.

    This realizes ``W P D`` for a (partial) permutation ``P``. ``perm[k] = -1``
    drops source column ``k``. ``width`` defaults to the number of kept
    columns; target columns that receive nothing are zero.
    """
    w = _as_matrix(w, "w")
    perm = np.asarray(perm, dtype=np.int64).reshape(-1)
    signs = np.asarray(signs, dtype=np.float64).reshape(-1)
    n = w.shape[1]
    if perm.size != n:
        raise ValidationError(f"perm has {perm.size} entries for {n} columns")
    if signs.size != n:
        raise ValidationError(f"signs has {signs.size} entries for {n} columns")
    kept = perm >= 0
    targets = perm[kept]
    if np.unique(targets).size != targets.size:
        raise ValidationError("perm is not injective")
    if np.any(perm < -1):
        raise ValidationError("perm entries must be -1 or a target column")
    if not np.all(np.isin(signs[kept], (-1.0, 1.0))):
        raise ValidationError("signs must be +1 or -1")
    if width is None:
        width = targets.size
    if targets.size and targets.max() >= width:
        raise ValidationError(f"target column {targets.max()} outside width {width}")
    out = np.zeros((w.shape[0], width))
    out[:, targets] = w[:, kept] * signs[kept]
    return out
