"""Weight-space lineage fingerprint.

Pipeline for a pair of bundles ``A`` (reference) and ``B`` (suspect):

1. restrict both embeddings to the tokens they share;
2. match A's hidden dimensions to B's by maximizing the summed absolute
   column cosine (a linear assignment), reading the sign flip of every match
   off the cosine's sign;
3. per layer, align A's ``W_Q^T``/``W_K^T`` rows into B's frame and score
   them against B's with unbiased CKA, which absorbs scaling and any
   orthogonal mixing of the head dimensions;
4. average ``(|s_Q| + |s_K|) / 2`` over layers, pairing layers by another
   assignment when the depths differ.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from weightprint.assignment import solve_max_assignment
from weightprint.errors import ComparisonError, DegenerateKernelError, ValidationError
from weightprint.kernel_alignment import ucka
from weightprint.linalg import cosine_matrix
from weightprint.weights_io import LayerWeights, WeightBundle

logger = logging.getLogger(__name__)

MIN_MATCHED_DIMS = 4
THREADS_ENV = "FINGERPRINT_THREADS"


@dataclass(frozen=True, eq=False)
class ColumnAlignment:
    """Recovered (partial) permutation and sign flips between hidden dimensions.

    Match ``i`` sends A's column ``source[i]`` to B's column ``target[i]``
    with sign ``signs[i]``. Matches are ordered by ``source``.
    """

    source: np.ndarray
    target: np.ndarray
    signs: np.ndarray
    mean_abs_cosine: float
    width_a: int
    width_b: int

    def __len__(self) -> int:
        return int(self.source.size)

    def as_perm(self) -> np.ndarray:
        """Length-``width_a`` array of target columns, ``-1`` for unmatched sources."""
        perm = np.full(self.width_a, -1, dtype=np.int64)
        perm[self.source] = self.target
        return perm

    def to_dict(self) -> dict:
        return {
            "source": self.source.tolist(),
            "target": self.target.tolist(),
            "signs": [int(s) for s in self.signs],
            "mean_abs_cosine": float(self.mean_abs_cosine),
            "width_a": self.width_a,
            "width_b": self.width_b,
        }


@dataclass(frozen=True)
class LayerScore:
    layer_a: int
    layer_b: int
    s_q: float
    s_k: float
    degenerate: bool = False

    @property
    def score(self) -> float:
        return (abs(self.s_q) + abs(self.s_k)) / 2.0


@dataclass(frozen=True, eq=False)
class SimilarityReport:
    per_layer: tuple[LayerScore, ...]
    layer_map: Optional[tuple[tuple[int, int], ...]]
    similarity: float
    alignment: ColumnAlignment
    shared_vocab_size: int
    layer_scores: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "per_layer": [
                {"layer_a": s.layer_a, "layer_b": s.layer_b, "s_q": s.s_q, "s_k": s.s_k, "degenerate": s.degenerate}
                for s in self.per_layer
            ],
            "layer_map": None if self.layer_map is None else [list(p) for p in self.layer_map],
            "similarity": self.similarity,
            "alignment": self.alignment.to_dict(),
            "shared_vocab_size": self.shared_vocab_size,
        }
        return out


def shared_vocab_rows(vocab_a: Mapping[str, int], vocab_b: Mapping[str, int]) -> tuple[list[int], list[int]]:
    """Embedding rows of the tokens both vocabularies contain, in ascending token order."""
    shared = sorted(set(vocab_a).intersection(vocab_b))
    if not shared:
        raise ComparisonError("vocabularies share no tokens")
    return [vocab_a[t] for t in shared], [vocab_b[t] for t in shared]


def extract_alignment(emb_a_shared, emb_b_shared) -> ColumnAlignment:
    emb_a = np.asarray(emb_a_shared, dtype=np.float64)
    emb_b = np.asarray(emb_b_shared, dtype=np.float64)
    if emb_a.shape[0] < 2:
        raise ValidationError(f"need at least 2 shared tokens, got {emb_a.shape[0]}")
    cos = cosine_matrix(emb_a, emb_b)
    assignment = solve_max_assignment(np.abs(cos))
    source, target = assignment.rows, assignment.cols
    signs = np.where(cos[source, target] >= 0, 1, -1).astype(np.int64)
    return ColumnAlignment(
        source=source,
        target=target,
        signs=signs,
        mean_abs_cosine=assignment.total_weight / len(source),
        width_a=emb_a.shape[1],
        width_b=emb_b.shape[1],
    )


def _aligned_samples(w_a: np.ndarray, w_b: np.ndarray, align: ColumnAlignment):
    # Rows of W^T are hidden dimensions: the samples CKA compares.
    order = np.argsort(align.target, kind="stable")
    src, tgt, sgn = align.source[order], align.target[order], align.signs[order]
    x_a = w_a.T[src] * sgn[:, None]
    x_b = w_b.T[tgt]
    return x_a, x_b


def layer_similarity(layer_a: LayerWeights, layer_b: LayerWeights, align: ColumnAlignment) -> tuple[float, float]:
    """UCKA of aligned Q and of aligned K projections."""
    if len(align) < MIN_MATCHED_DIMS:
        raise ValidationError(f"only {len(align)} matched hidden dims; UCKA needs {MIN_MATCHED_DIMS}")
    s_q = ucka(*_aligned_samples(layer_a.q, layer_b.q, align))
    s_k = ucka(*_aligned_samples(layer_a.k, layer_b.k, align))
    return s_q, s_k


def pair_layers(scores) -> tuple[tuple[int, int], ...]:
    """Pair layers of A (rows) with layers of B (columns) maximizing total score."""
    return solve_max_assignment(scores).matches


def _thread_count(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "0") or 0)
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def _map(fn, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def _score_pair(bundle_a, bundle_b, align, la, lb) -> LayerScore:
    try:
        s_q, s_k = layer_similarity(bundle_a.layers[la], bundle_b.layers[lb], align)
    except DegenerateKernelError as exc:
        logger.warning("layer pair (%d, %d) is degenerate, scored 0: %s", la, lb, exc)
        return LayerScore(la, lb, 0.0, 0.0, degenerate=True)
    return LayerScore(la, lb, s_q, s_k)


def compare(bundle_a: WeightBundle, bundle_b: WeightBundle, threads: Optional[int] = None) -> SimilarityReport:
    """Similarity in [0, 1] that bundle B was derived from bundle A.

    When the two bundles have different depths, every layer pair is scored
    and layers are paired by maximum-weight assignment before averaging over
    the ``min(L_A, L_B)`` matched pairs.
    """
    if bundle_a.num_layers < 1 or bundle_b.num_layers < 1:
        raise ComparisonError("both bundles need at least one layer")
    rows_a, rows_b = shared_vocab_rows(bundle_a.vocab, bundle_b.vocab)
    align = extract_alignment(bundle_a.embedding[rows_a], bundle_b.embedding[rows_b])
    if len(align) < MIN_MATCHED_DIMS:
        raise ComparisonError(f"only {len(align)} hidden dims matched; UCKA needs {MIN_MATCHED_DIMS}")
    n_threads = _thread_count(threads)

    la_count, lb_count = bundle_a.num_layers, bundle_b.num_layers
    layer_map = None
    grid = None
    if la_count == lb_count:
        pairs = [(i, i) for i in range(la_count)]
        per_layer = _map(lambda p: _score_pair(bundle_a, bundle_b, align, *p), pairs, n_threads)
    else:
        pairs = [(i, j) for i in range(la_count) for j in range(lb_count)]
        flat = _map(lambda p: _score_pair(bundle_a, bundle_b, align, *p), pairs, n_threads)
        grid = np.array([s.score for s in flat]).reshape(la_count, lb_count)
        layer_map = pair_layers(grid)
        per_layer = [flat[i * lb_count + j] for i, j in layer_map]

    if all(s.degenerate for s in per_layer):
        raise ComparisonError("every matched layer pair is degenerate")
    total = sum(abs(s.s_q) + abs(s.s_k) for s in per_layer)
    similarity = min(1.0, max(0.0, total / (2 * len(per_layer))))
    return SimilarityReport(
        per_layer=tuple(per_layer),
        layer_map=layer_map,
        similarity=similarity,
        alignment=align,
        shared_vocab_size=len(rows_a),
        layer_scores=grid,
    )
