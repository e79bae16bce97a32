"""Separation metrics over labeled similarity scores and the synthetic testbed."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from weightprint.errors import FingerprintError, ValidationError
from weightprint.fingerprint import _map, _thread_count, compare
from weightprint.forge import ForgeConfig, ManipulationSpec, PrunePlan, apply_manipulation, generate_base

logger = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class ScoreEntry:
    pair_id: str
    label: str
    similarity: float
    category: str = ""


@dataclass(frozen=True)
class ScoreSet:
    entries: tuple[ScoreEntry, ...]

    def __post_init__(self):
        for e in self.entries:
            if e.label not in (POSITIVE, NEGATIVE):
                raise ValidationError(f"{e.pair_id}: label must be {POSITIVE!r} or {NEGATIVE!r}, got {e.label!r}")
            if not math.isfinite(e.similarity):
                raise ValidationError(f"{e.pair_id}: similarity is not finite")

    @classmethod
    def from_scores(cls, positives: Iterable[float], negatives: Iterable[float]) -> "ScoreSet":
        entries = [ScoreEntry(f"p{i}", POSITIVE, float(s)) for i, s in enumerate(positives)]
        entries += [ScoreEntry(f"n{i}", NEGATIVE, float(s)) for i, s in enumerate(negatives)]
        return cls(tuple(entries))

    def scores(self, label: str) -> list[float]:
        return [e.similarity for e in self.entries if e.label == label]


def z_scores(positives: Sequence[float], negatives: Sequence[float]) -> list[float]:
    """``|s - mean(neg)| / std(neg)`` per positive, with the n-1 standard deviation."""
    neg = np.asarray(negatives, dtype=np.float64)
    if neg.size < 2:
        raise ValidationError(f"need at least 2 negatives, got {neg.size}")
    std = float(np.std(neg, ddof=1))
    if not std > 0:
        raise ValidationError("negative scores have zero variance")
    mean = float(np.mean(neg))
    return [abs(float(s) - mean) / std for s in positives]


def roc_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """ROC curve from a threshold sweep; higher similarity means more positive.

    Tied scores enter together, and the curve always starts at (0, 0) and
    ends at (1, 1).
    """
    pos = np.asarray(scores.scores(POSITIVE))
    neg = np.asarray(scores.scores(NEGATIVE))
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("ROC needs at least one positive and one negative score")
    points = [(0.0, 0.0)]
    for threshold in np.unique(np.concatenate([pos, neg]))[::-1]:
        tpr = np.count_nonzero(pos >= threshold) / pos.size
        fpr = np.count_nonzero(neg >= threshold) / neg.size
        points.append((float(fpr), float(tpr)))
    return points


def auc(roc: Sequence[tuple[float, float]]) -> float:
    """Trapezoidal area under the curve."""
    return _area(roc, 1.0)


def _area(roc, fpr_max: float) -> float:
    total = 0.0
    for (x0, y0), (x1, y1) in zip(roc, roc[1:]):
        if x0 >= fpr_max:
            break
        if x1 > fpr_max:
            y1 = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0)
            x1 = fpr_max
        total += (x1 - x0) * (y0 + y1) / 2.0
    return total


def pauc(roc: Sequence[tuple[float, float]], fpr_max: float = 0.05) -> float:
    """Area over ``[0, fpr_max]`` divided by ``fpr_max`` (a perfect detector scores 1)."""
    if not 0 < fpr_max <= 1:
        raise ValidationError(f"fpr_max must be in (0, 1], got {fpr_max}")
    return _area(roc, fpr_max) / fpr_max


def tpr_at_fpr(roc: Sequence[tuple[float, float]], fpr: float = 0.01) -> float:
    """TPR at ``fpr``, linearly interpolated between the bracketing ROC points."""
    at = [y for x, y in roc if x == fpr]
    if at:
        return max(at)
    # The curve is monotone, so the segment crossing ``fpr`` follows the last point left of it.
    i = max(idx for idx, (x, _) in enumerate(roc) if x < fpr)
    (x0, y0), (x1, y1) = roc[i], roc[i + 1]
    return y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)


@dataclass
class EvalReport:
    entries: list[ScoreEntry]
    z_per_positive: list[float]
    mean_abs_z: float
    roc: list[tuple[float, float]]
    auc: float
    pauc: float
    tpr_at_1pct_fpr: float
    per_category: dict[str, dict[str, float]] = field(default_factory=dict)
    errors: list[dict[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        positives = [e for e in self.entries if e.label == POSITIVE]
        return {
            "auc": self.auc,
            "pauc": self.pauc,
            "tpr_at_1pct_fpr": self.tpr_at_1pct_fpr,
            "mean_abs_z": self.mean_abs_z,
            "z_per_positive": [
                {"pair_id": e.pair_id, "abs_z": z} for e, z in zip(positives, self.z_per_positive)
            ],
            "per_category": self.per_category,
            "roc": [list(p) for p in self.roc],
            "scores": [
                {"pair_id": e.pair_id, "label": e.label, "category": e.category, "similarity": e.similarity}
                for e in self.entries
            ],
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def roc_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["fpr", "tpr"])
        writer.writerows((repr(x), repr(y)) for x, y in self.roc)
        return buf.getvalue()

    def scores_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pair_id", "label", "category", "similarity"])
        writer.writerows((e.pair_id, e.label, e.category, repr(e.similarity)) for e in self.entries)
        for err in self.errors:
            writer.writerow((err["pair_id"], err["label"], err["category"], "error"))
        return buf.getvalue()


def evaluate(scores: ScoreSet, errors: Optional[list[dict[str, str]]] = None) -> EvalReport:
    entries = sorted(scores.entries, key=lambda e: e.pair_id)
    ordered = ScoreSet(tuple(entries))
    pos = ordered.scores(POSITIVE)
    neg = ordered.scores(NEGATIVE)
    z = z_scores(pos, neg)
    roc = roc_points(ordered)

    per_category: dict[str, dict[str, float]] = {}
    positives = [e for e in entries if e.label == POSITIVE]
    for cat in sorted({e.category for e in positives}):
        zs = [zi for e, zi in zip(positives, z) if e.category == cat]
        sims = [e.similarity for e in positives if e.category == cat]
        per_category[cat] = {"count": len(zs), "mean_abs_z": float(np.mean(zs)), "min_similarity": min(sims)}

    return EvalReport(
        entries=entries,
        z_per_positive=z,
        mean_abs_z=float(np.mean(z)) if z else float("nan"),
        roc=roc,
        auc=auc(roc),
        pauc=pauc(roc, 0.05),
        tpr_at_1pct_fpr=tpr_at_fpr(roc, 0.01),
        per_category=per_category,
        errors=list(errors or []),
    )


# --------------------------------------------------------------------- testbed


@dataclass(frozen=True)
class PositivePair:
    pair_id: str
    category: str
    base_seed: int
    manipulation: ManipulationSpec


@dataclass(frozen=True)
class NegativePair:
    pair_id: str
    seed_a: int
    seed_b: int
    category: str = "independent"


@dataclass(frozen=True)
class TestbedConfig:
    """Model dimensions plus the explicit list of positive and negative pairs."""

    __test__ = False

    forge: ForgeConfig
    positives: tuple[PositivePair, ...]
    negatives: tuple[NegativePair, ...]

    def validate(self) -> "TestbedConfig":
        self.forge.validate()
        if not self.positives:
            raise ValidationError("testbed needs at least one positive pair")
        if not self.negatives:
            raise ValidationError("testbed needs at least one negative pair")
        ids = [p.pair_id for p in self.positives] + [n.pair_id for n in self.negatives]
        if len(set(ids)) != len(ids):
            raise ValidationError("pair ids must be unique")
        for p in self.positives:
            p.manipulation.validate()
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "TestbedConfig":
        try:
            forge = ForgeConfig.from_dict(data["forge"])
            positives = tuple(
                PositivePair(
                    pair_id=str(p["pair_id"]),
                    category=str(p.get("category", "")),
                    base_seed=int(p["base_seed"]),
                    manipulation=ManipulationSpec.from_dict(p.get("manipulation", {})),
                )
                for p in data.get("positives", [])
            )
            negatives = tuple(
                NegativePair(
                    pair_id=str(n["pair_id"]),
                    seed_a=int(n["seed_a"]),
                    seed_b=int(n["seed_b"]),
                    category=str(n.get("category", "independent")),
                )
                for n in data.get("negatives", [])
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed testbed config: {exc!r}") from exc
        return cls(forge, positives, negatives).validate()

    def to_dict(self) -> dict:
        return {
            "forge": self.forge.to_dict(),
            "positives": [
                {
                    "pair_id": p.pair_id,
                    "category": p.category,
                    "base_seed": p.base_seed,
                    "manipulation": p.manipulation.to_dict(),
                }
                for p in self.positives
            ],
            "negatives": [
                {"pair_id": n.pair_id, "seed_a": n.seed_a, "seed_b": n.seed_b, "category": n.category}
                for n in self.negatives
            ],
        }


DEFAULT_FORGE = ForgeConfig(vocab_size=512, hidden=64, layers=3, head_dim=32, ffn_dim=128)
DEFAULT_NOISE_LEVELS = (0.0, 0.02, 0.05, 0.1)


def default_testbed_config(
    forge: ForgeConfig = DEFAULT_FORGE,
    noise_levels: Sequence[float] = DEFAULT_NOISE_LEVELS,
    num_negatives: int = 30,
) -> TestbedConfig:
    """Five manipulation families, each at every noise level, against independent-seed negatives."""
    families = {
        "scale": lambda s: dict(scale=[0.37, -2.5, 4.0, -0.8][s % 4]),
        "permute": lambda s: dict(perm_seed=10 + s, sign_seed=20 + s),
        "rotate": lambda s: dict(rotation_seed=30 + s),
        "prune": lambda s: dict(perm_seed=40 + s, sign_seed=50 + s, prune=PrunePlan(hidden_keep=0.75)),
        "layer_prune": lambda s: dict(
            perm_seed=60 + s, sign_seed=70 + s, prune=PrunePlan(layers_keep=(0, forge.layers - 1))
        ),
    }
    positives = []
    seed = 0
    for category, make in families.items():
        for level, sigma in enumerate(noise_levels):
            spec = ManipulationSpec(noise_sigma_rel=float(sigma), noise_seed=500 + seed, **make(level))
            positives.append(PositivePair(f"pos-{category}-{level}", category, seed, spec))
            seed += 1
    negatives = [
        NegativePair(f"neg-{i:03d}", seed_a=i % max(seed, 1), seed_b=1000 + i) for i in range(num_negatives)
    ]
    return TestbedConfig(forge, tuple(positives), tuple(negatives)).validate()


def run_testbed(config: TestbedConfig, threads: Optional[int] = None) -> EvalReport:
    """Forge every configured pair, fingerprint it, and summarize the separation."""
    config.validate()
    seeds = sorted({p.base_seed for p in config.positives} | {s for n in config.negatives for s in (n.seed_a, n.seed_b)})
    models = {s: generate_base(config.forge.with_seed(s)) for s in seeds}

    jobs = [(p.pair_id, POSITIVE, p.category, p) for p in config.positives]
    jobs += [(n.pair_id, NEGATIVE, n.category, n) for n in config.negatives]
    jobs.sort(key=lambda j: j[0])

    def run(job):
        pair_id, label, category, pair = job
        try:
            if label == POSITIVE:
                a = models[pair.base_seed]
                b = apply_manipulation(a, pair.manipulation)
            else:
                a, b = models[pair.seed_a], models[pair.seed_b]
            sim = compare(a, b, threads=1).similarity
            return ScoreEntry(pair_id, label, sim, category), None
        except FingerprintError as exc:
            logger.error("pair %s failed: %s", pair_id, exc)
            return None, {"pair_id": pair_id, "label": label, "category": category, "error": str(exc)}

    results = _map(run, jobs, _thread_count(threads))
    entries = tuple(e for e, _ in results if e is not None)
    errors = [err for _, err in results if err is not None]
    return evaluate(ScoreSet(entries), errors)
