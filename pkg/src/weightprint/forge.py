"""Synthetic transformer bundles, function-preserving weight manipulations,
and a reference forward pass to certify the preservation.

The reference model is a single-head decoder: pre-norm attention with RoPE
and a causal mask, pre-norm SwiGLU feed-forward, residual connections, and
an untied language-model head with no final norm.

A manipulation with scale ``c``, (partial) permutation ``P``, sign flips
``D`` and per-layer block rotations ``U`` rewrites the weights as::

    embedding       c * W P D
    norm gains      c * (omega permuted by P)        epsilon -> c^2 * epsilon
    Q, K            U (c^-1 W P D)
    V / O           W P D  /  D^T P^T W
    gate, up / down c^-1 W P D  /  c D^T P^T W
    lm head         c^-1 W P D

which leaves every logit unchanged when ``P`` is a full permutation and
the same ``U`` is used for Q and K.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from weightprint.errors import ValidationError
from weightprint.linalg import BlockRotation, apply_block_rotation, apply_perm_sign_columns
from weightprint.weights_io import LayerWeights, WeightBundle

MIN_HIDDEN = 4


@dataclass(frozen=True)
class ForgeConfig:
    vocab_size: int
    hidden: int
    layers: int
    head_dim: int
    ffn_dim: int
    rope_base: float = 10000.0
    norm_epsilon: float = 1e-6
    seed: int = 0

    def validate(self) -> "ForgeConfig":
        for name in ("vocab_size", "hidden", "layers", "head_dim", "ffn_dim"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.head_dim % 2:
            raise ValidationError(f"head_dim must be even, got {self.head_dim}")
        if not (isinstance(self.seed, int) and not isinstance(self.seed, bool)):
            raise ValidationError(f"seed must be an integer, got {self.seed!r}")
        for name in ("rope_base", "norm_epsilon"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive number, got {value!r}")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ForgeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown ForgeConfig fields: {sorted(unknown)}")
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise ValidationError(f"invalid ForgeConfig: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "ForgeConfig":
        return ForgeConfig(**{**asdict(self), "seed": seed})


def generate_base(config: ForgeConfig) -> WeightBundle:
    """Random bundle with i.i.d. N(0, 1/n) weights and unit norm gains."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, d, f = config.hidden, config.head_dim, config.ffn_dim
    scale = 1.0 / math.sqrt(n)

    def draw(*shape):
        return rng.standard_normal(shape) * scale

    embedding = draw(config.vocab_size, n)
    layers = []
    for _ in range(config.layers):
        layers.append(
            LayerWeights(
                q=draw(d, n),
                k=draw(d, n),
                v=draw(d, n),
                o=draw(n, d),
                attn_norm=np.ones(n),
                ffn_norm=np.ones(n),
                ffn_up=draw(f, n),
                ffn_gate=draw(f, n),
                ffn_down=draw(n, f),
            )
        )
    lm_head = draw(config.vocab_size, n)
    bundle = WeightBundle(
        vocab={f"t{i}": i for i in range(config.vocab_size)},
        embedding=embedding,
        layers=tuple(layers),
        lm_head=lm_head,
        rope_base=config.rope_base,
        norm_epsilon=config.norm_epsilon,
    )
    return bundle.validate()


@dataclass(frozen=True)
class PrunePlan:
    hidden_keep: float = 1.0
    layers_keep: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.layers_keep is not None:
            object.__setattr__(self, "layers_keep", tuple(int(i) for i in self.layers_keep))


@dataclass(frozen=True)
class ResolvedManipulation:
    """Concrete arrays behind a :class:`ManipulationSpec` for one base bundle."""

    scale: float
    perm: np.ndarray  # source column -> target column, -1 if pruned
    signs: np.ndarray  # per source column, sign(scale) folded in
    width: int
    q_rotations: tuple[Optional[BlockRotation], ...]
    k_rotations: tuple[Optional[BlockRotation], ...]
    layers_keep: tuple[int, ...]

    @property
    def source(self) -> np.ndarray:
        return np.flatnonzero(self.perm >= 0)

    @property
    def target(self) -> np.ndarray:
        return self.perm[self.perm >= 0]


@dataclass(frozen=True)
class ManipulationSpec:
    """Declarative weight manipulation.

    Explicit values win over seeds; with neither, the component is the
    identity. ``rotations`` holds one angle vector per base layer and is
    applied to both Q and K; ``rotations_k`` overrides the K side (scores
    only survive when the two are equal).
    """

    scale: float = 1.0
    perm_seed: Optional[int] = None
    permutation: Optional[tuple[int, ...]] = None
    sign_seed: Optional[int] = None
    signs: Optional[tuple[int, ...]] = None
    rotation_seed: Optional[int] = None
    rotations: Optional[tuple[tuple[float, ...], ...]] = None
    rotations_k: Optional[tuple[tuple[float, ...], ...]] = None
    prune: Optional[PrunePlan] = None
    noise_sigma_rel: float = 0.0
    noise_seed: int = 0

    def validate(self) -> "ManipulationSpec":
        if not (isinstance(self.scale, (int, float)) and math.isfinite(self.scale) and self.scale != 0):
            raise ValidationError(f"scale must be a finite nonzero number, got {self.scale!r}")
        if not (math.isfinite(self.noise_sigma_rel) and self.noise_sigma_rel >= 0):
            raise ValidationError(f"noise_sigma_rel must be >= 0, got {self.noise_sigma_rel!r}")
        if self.prune is not None and not 0 < self.prune.hidden_keep <= 1:
            raise ValidationError(f"prune.hidden_keep must be in (0, 1], got {self.prune.hidden_keep!r}")
        return self

    @property
    def is_noiseless(self) -> bool:
        return self.noise_sigma_rel == 0

    @property
    def prunes(self) -> bool:
        return self.prune is not None and (self.prune.hidden_keep < 1 or self.prune.layers_keep is not None)

    @classmethod
    def from_dict(cls, data: dict) -> "ManipulationSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown ManipulationSpec fields: {sorted(unknown)}")
        data = dict(data)
        prune = data.get("prune")
        if prune is not None:
            if not isinstance(prune, dict) or set(prune) - {"hidden_keep", "layers_keep"}:
                raise ValidationError(f"prune must be an object with hidden_keep/layers_keep, got {prune!r}")
            data["prune"] = PrunePlan(**prune)
        for name in ("permutation", "signs"):
            if data.get(name) is not None:
                data[name] = tuple(data[name])
        for name in ("rotations", "rotations_k"):
            if data.get(name) is not None:
                data[name] = tuple(tuple(float(a) for a in row) for row in data[name])
        return cls(**data).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, PrunePlan):
                value = {
                    "hidden_keep": value.hidden_keep,
                    "layers_keep": None if value.layers_keep is None else list(value.layers_keep),
                }
            elif isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[f.name] = value
        return out

    def resolve(self, base: WeightBundle) -> ResolvedManipulation:
        self.validate()
        n, num_layers = base.hidden, base.num_layers

        if self.permutation is not None:
            perm = np.asarray(self.permutation, dtype=np.int64)
            if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
                raise ValidationError(f"permutation must be a permutation of 0..{n - 1}")
        elif self.perm_seed is not None:
            perm = np.random.default_rng(self.perm_seed).permutation(n)
        else:
            perm = np.arange(n)

        if self.signs is not None:
            signs = np.asarray(self.signs, dtype=np.float64)
            if signs.shape != (n,) or not np.all(np.isin(signs, (-1.0, 1.0))):
                raise ValidationError(f"signs must be {n} entries of +1/-1")
        elif self.sign_seed is not None:
            signs = np.random.default_rng(self.sign_seed).choice([-1.0, 1.0], size=n)
        else:
            signs = np.ones(n)

        # c*W*P*D == |c|*W*P*(sign(c)*D); RMSNorm only absorbs |c|
        signs = signs * math.copysign(1.0, self.scale)

        hidden_keep = 1.0 if self.prune is None else self.prune.hidden_keep
        width = int(round(hidden_keep * n))
        if width < MIN_HIDDEN:
            raise ValidationError(f"pruning keeps {width} hidden dims; at least {MIN_HIDDEN} are required")
        perm = np.where(perm < width, perm, -1)

        layers_keep = tuple(range(num_layers))
        if self.prune is not None and self.prune.layers_keep is not None:
            layers_keep = self.prune.layers_keep
            if not layers_keep:
                raise ValidationError("prune.layers_keep must not be empty")
            if len(set(layers_keep)) != len(layers_keep):
                raise ValidationError(f"prune.layers_keep has duplicates: {list(layers_keep)}")
            bad = [i for i in layers_keep if not 0 <= i < num_layers]
            if bad:
                raise ValidationError(f"prune.layers_keep indices {bad} outside 0..{num_layers - 1}")

        q_rot = self._rotations(self.rotations, base, "rotations")
        k_rot = q_rot if self.rotations_k is None else self._rotations(self.rotations_k, base, "rotations_k")
        return ResolvedManipulation(
            scale=float(self.scale),
            perm=perm,
            signs=signs,
            width=width,
            q_rotations=q_rot,
            k_rotations=k_rot,
            layers_keep=layers_keep,
        )

    def _rotations(self, explicit, base: WeightBundle, name: str):
        num_layers = base.num_layers
        if explicit is not None:
            if len(explicit) != num_layers:
                raise ValidationError(f"{name} needs {num_layers} angle vectors, got {len(explicit)}")
            rots = []
            for i, (angles, layer) in enumerate(zip(explicit, base.layers)):
                if len(angles) != layer.q.shape[0] // 2:
                    raise ValidationError(f"{name}[{i}] needs {layer.q.shape[0] // 2} angles, got {len(angles)}")
                rots.append(BlockRotation(angles))
            return tuple(rots)
        if self.rotation_seed is not None:
            rng = np.random.default_rng(self.rotation_seed)
            return tuple(BlockRotation.random(layer.q.shape[0], rng) for layer in base.layers)
        return (None,) * num_layers


def apply_manipulation(base: WeightBundle, spec: ManipulationSpec) -> WeightBundle:
    """Derive a suspect bundle from ``base`` by the manipulation ``spec``."""
    base.validate()
    res = spec.resolve(base)
    c = abs(res.scale)
    ones = np.ones_like(res.signs)

    def cols(w):
        return apply_perm_sign_columns(w, res.perm, res.signs, res.width)

    def rows(w):
        return cols(w.T).T

    def gains(omega):
        return c * apply_perm_sign_columns(omega[None, :], res.perm, ones, res.width)[0]

    def rotate(w, rot):
        return w if rot is None else apply_block_rotation(w, rot)

    layers = []
    for i in res.layers_keep:
        layer = base.layers[i]
        kwargs = dict(
            q=rotate(cols(layer.q) / c, res.q_rotations[i]),
            k=rotate(cols(layer.k) / c, res.k_rotations[i]),
            attn_norm=gains(layer.attn_norm),
            ffn_norm=gains(layer.ffn_norm),
        )
        if layer.has_full_block:
            kwargs.update(
                v=cols(layer.v),
                o=rows(layer.o),
                ffn_up=cols(layer.ffn_up) / c,
                ffn_gate=cols(layer.ffn_gate) / c,
                ffn_down=c * rows(layer.ffn_down),
            )
        layers.append(LayerWeights(**kwargs))

    out = WeightBundle(
        vocab=base.vocab,
        embedding=c * cols(base.embedding),
        layers=tuple(layers),
        lm_head=None if base.lm_head is None else cols(base.lm_head) / c,
        rope_base=base.rope_base,
        norm_epsilon=c * c * base.norm_epsilon,
    )
    if spec.noise_sigma_rel > 0:
        out = add_relative_noise(out, spec.noise_sigma_rel, spec.noise_seed)
    return out.validate()


def add_relative_noise(bundle: WeightBundle, sigma_rel: float, seed: int) -> WeightBundle:
    """Add i.i.d. Gaussian noise with std ``sigma_rel * RMS(tensor)`` to every tensor."""
    rng = np.random.default_rng(seed)
    noisy = {}
    for name, w in sorted(bundle.tensors().items()):
        rms = math.sqrt(float(np.mean(w * w))) if w.size else 0.0
        noisy[name] = w + rng.standard_normal(w.shape) * (sigma_rel * rms)
    layers = []
    for i, layer in enumerate(bundle.layers):
        layers.append(LayerWeights(**{k: noisy[f"layers.{i}.{k}"] for k in layer.tensors()}))
    return bundle.replace(
        embedding=noisy["embedding"],
        layers=tuple(layers),
        lm_head=noisy.get("lm_head"),
    )


# ---------------------------------------------------------------- forward pass


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    logits: np.ndarray
    hidden_states: Optional[tuple[np.ndarray, ...]] = field(default=None, repr=False)


def rmsnorm(x, weight, eps: float) -> np.ndarray:
    """Row-wise ``x * weight / sqrt(||x||^2 + eps)``."""
    x = np.asarray(x, dtype=np.float64)
    denom = np.sqrt(np.einsum("ij,ij->i", x, x) + eps)
    return x / denom[:, None] * weight[None, :]


def rope_angles(length: int, dim: int, base: float) -> np.ndarray:
    """``angles[i, j] = i * base^(-2j/dim)`` for positions ``i`` and pairs ``j``."""
    freqs = base ** (-2.0 * np.arange(dim // 2) / dim)
    return np.arange(length)[:, None] * freqs[None, :]


def apply_rope(x, base: float) -> np.ndarray:
    """Multiply row ``i`` of ``x`` (as a row vector) by the RoPE rotation for position ``i``."""
    x = np.asarray(x, dtype=np.float64)
    ang = rope_angles(x.shape[0], x.shape[1], base)
    c, s = np.cos(ang), np.sin(ang)
    even, odd = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * c + odd * s
    out[:, 1::2] = odd * c - even * s
    return out


def attention_logits(h, w_q, w_k, base: float) -> np.ndarray:
    """Pre-softmax, pre-mask attention scores ``RoPE(h W_Q^T) RoPE(h W_K^T)^T / sqrt(d)``."""
    q = apply_rope(h @ np.asarray(w_q).T, base)
    k = apply_rope(h @ np.asarray(w_k).T, base)
    return q @ k.T / math.sqrt(q.shape[1])


def _causal_softmax(scores: np.ndarray) -> np.ndarray:
    t = scores.shape[0]
    masked = np.where(np.tri(t, dtype=bool), scores, -np.inf)
    masked = masked - masked.max(axis=1, keepdims=True)
    e = np.exp(masked)
    return e / e.sum(axis=1, keepdims=True)


def silu(z):
    return z / (1.0 + np.exp(-z))


def forward_reference(bundle: WeightBundle, tokens: Sequence[int], keep_hidden: bool = False) -> ForwardTrace:
    """Logits of ``bundle`` on a token index sequence."""
    if bundle.lm_head is None:
        raise ValidationError("forward pass needs an lm_head")
    for i, layer in enumerate(bundle.layers):
        if not layer.has_full_block:
            raise ValidationError(f"forward pass needs v/o/ffn tensors; layer {i} lacks them")
        if layer.q.shape != layer.k.shape:
            raise ValidationError(f"layer {i}: q {layer.q.shape} and k {layer.k.shape} differ")
    tokens = np.asarray(tokens)
    if tokens.ndim != 1 or tokens.size < 1:
        raise ValidationError("tokens must be a non-empty 1-D sequence")
    if not np.issubdtype(tokens.dtype, np.integer):
        raise ValidationError("tokens must be integer indices")
    if tokens.min() < 0 or tokens.max() >= bundle.vocab_size:
        raise ValidationError(f"token index outside 0..{bundle.vocab_size - 1}")

    eps, base = bundle.norm_epsilon, bundle.rope_base
    x = bundle.embedding[tokens]
    hidden = [x] if keep_hidden else None
    for layer in bundle.layers:
        h = rmsnorm(x, layer.attn_norm, eps)
        probs = _causal_softmax(attention_logits(h, layer.q, layer.k, base))
        x = x + (probs @ (h @ layer.v.T)) @ layer.o.T
        h = rmsnorm(x, layer.ffn_norm, eps)
        x = x + (silu(h @ layer.ffn_gate.T) * (h @ layer.ffn_up.T)) @ layer.ffn_down.T
        if keep_hidden:
            hidden.append(x)
    logits = x @ bundle.lm_head.T
    return ForwardTrace(logits=logits, hidden_states=None if hidden is None else tuple(hidden))
