"""Weight bundles and their on-disk container.

Container layout (all integers little-endian)::

    [u64 header length N][N bytes UTF-8 JSON header][row-major tensor data]

The header maps tensor names to ``{"dtype", "shape", "data_offsets"}`` and
carries a ``__metadata__`` object with ``rope_base``, ``norm_epsilon`` and
``num_layers`` stored as strings. The vocabulary lives in a sidecar file
``<stem>.vocab.json`` next to the container.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from weightprint.errors import FormatError, ValidationError, VocabError

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

LAYER_TENSORS = ("q", "k", "v", "o", "attn_norm", "ffn_norm", "ffn_up", "ffn_gate", "ffn_down")
OPTIONAL_LAYER_TENSORS = ("v", "o", "ffn_up", "ffn_gate", "ffn_down")

_LAYER_NAME = re.compile(r"^layers\.(\d+)\.(" + "|".join(LAYER_TENSORS) + r")$")


def _frozen_array(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _frozen_optional(a) -> Optional[np.ndarray]:
    return None if a is None else _frozen_array(a)


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """Projection and norm weights of one transformer block.

    Matrices follow the ``out_features x in_features`` convention: ``q`` is
    ``d_q x n``, ``o`` is ``n x d_v`` and ``ffn_down`` is ``n x d_ff``.
    """

    q: np.ndarray
    k: np.ndarray
    attn_norm: np.ndarray
    ffn_norm: np.ndarray
    v: Optional[np.ndarray] = None
    o: Optional[np.ndarray] = None
    ffn_up: Optional[np.ndarray] = None
    ffn_gate: Optional[np.ndarray] = None
    ffn_down: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("q", "k", "attn_norm", "ffn_norm"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        for name in OPTIONAL_LAYER_TENSORS:
            object.__setattr__(self, name, _frozen_optional(getattr(self, name)))

    @property
    def has_full_block(self) -> bool:
        return all(getattr(self, name) is not None for name in OPTIONAL_LAYER_TENSORS)

    def tensors(self) -> dict[str, np.ndarray]:
        """Present tensors keyed by their short name."""
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    def validate(self, hidden: int, index: int = 0) -> None:
        where = f"layer {index}"
        for name in ("q", "k"):
            w = getattr(self, name)
            if w.ndim != 2:
                raise ValidationError(f"{where}: {name} must be 2-D, got shape {w.shape}")
            if w.shape[1] != hidden:
                raise ValidationError(
                    f"{where}: {name} has {w.shape[1]} columns, expected hidden size {hidden}"
                )
            if w.shape[0] % 2:
                raise ValidationError(f"{where}: {name} has odd row count {w.shape[0]}")
        for name in ("attn_norm", "ffn_norm"):
            w = getattr(self, name)
            if w.shape != (hidden,):
                raise ValidationError(f"{where}: {name} has shape {w.shape}, expected ({hidden},)")
        present = [name for name in OPTIONAL_LAYER_TENSORS if getattr(self, name) is not None]
        if present and len(present) != len(OPTIONAL_LAYER_TENSORS):
            missing = sorted(set(OPTIONAL_LAYER_TENSORS) - set(present))
            raise ValidationError(f"{where}: partial block, missing {missing}")
        if present:
            v, o = self.v, self.o
            if v.ndim != 2 or v.shape[1] != hidden:
                raise ValidationError(f"{where}: v has shape {v.shape}, expected (d_v, {hidden})")
            if o.shape != (hidden, v.shape[0]):
                raise ValidationError(f"{where}: o has shape {o.shape}, expected ({hidden}, {v.shape[0]})")
            up, gate, down = self.ffn_up, self.ffn_gate, self.ffn_down
            if up.ndim != 2 or up.shape[1] != hidden:
                raise ValidationError(f"{where}: ffn_up has shape {up.shape}, expected (d_ff, {hidden})")
            if gate.shape != up.shape:
                raise ValidationError(f"{where}: ffn_gate shape {gate.shape} differs from ffn_up {up.shape}")
            if down.shape != (hidden, up.shape[0]):
                raise ValidationError(
                    f"{where}: ffn_down has shape {down.shape}, expected ({hidden}, {up.shape[0]})"
                )
        for name, w in self.tensors().items():
            if not np.all(np.isfinite(w)):
                raise ValidationError(f"{where}: {name} contains non-finite values")


@dataclass(frozen=True, eq=False)
class WeightBundle:
    """Weights of a decoder-only transformer plus the metadata the fingerprint needs.

    Arrays are stored as read-only float64 copies, so bundles can be shared
    freely. Construction does not validate; call :meth:`validate` (the I/O
    and forge entry points do this for you).
    """

    vocab: Mapping[str, int]
    embedding: np.ndarray
    layers: tuple[LayerWeights, ...]
    lm_head: Optional[np.ndarray] = None
    rope_base: float = 10000.0
    norm_epsilon: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "vocab", dict(self.vocab))
        object.__setattr__(self, "embedding", _frozen_array(self.embedding))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "lm_head", _frozen_optional(self.lm_head))
        object.__setattr__(self, "rope_base", float(self.rope_base))
        object.__setattr__(self, "norm_epsilon", float(self.norm_epsilon))

    @property
    def hidden(self) -> int:
        return self.embedding.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def replace(self, **changes) -> "WeightBundle":
        return replace(self, **changes)

    def tensors(self) -> dict[str, np.ndarray]:
        """All tensors keyed by their container name."""
        out = {"embedding": self.embedding}
        if self.lm_head is not None:
            out["lm_head"] = self.lm_head
        for i, layer in enumerate(self.layers):
            for name, w in layer.tensors().items():
                out[f"layers.{i}.{name}"] = w
        return out

    def validate(self) -> "WeightBundle":
        if self.embedding.ndim != 2 or self.embedding.shape[0] < 1 or self.embedding.shape[1] < 1:
            raise ValidationError(f"embedding must be a non-empty V x n matrix, got {self.embedding.shape}")
        check_vocab(self.vocab)
        if len(self.vocab) != self.vocab_size:
            raise ValidationError(
                f"vocabulary has {len(self.vocab)} entries but embedding has {self.vocab_size} rows"
            )
        if not np.all(np.isfinite(self.embedding)):
            raise ValidationError("embedding contains non-finite values")
        if self.lm_head is not None:
            if self.lm_head.shape != self.embedding.shape:
                raise ValidationError(
                    f"lm_head has shape {self.lm_head.shape}, expected {self.embedding.shape}"
                )
            if not np.all(np.isfinite(self.lm_head)):
                raise ValidationError("lm_head contains non-finite values")
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, LayerWeights):
                raise ValidationError(f"layer {i} is not a LayerWeights instance")
            layer.validate(self.hidden, i)
        if not (math.isfinite(self.rope_base) and self.rope_base > 0):
            raise ValidationError(f"rope_base must be positive, got {self.rope_base}")
        if not (math.isfinite(self.norm_epsilon) and self.norm_epsilon > 0):
            raise ValidationError(f"norm_epsilon must be positive, got {self.norm_epsilon}")
        return self

    def equals(self, other: "WeightBundle") -> bool:
        """Exact value equality, including vocabulary order and metadata."""
        if list(self.vocab.items()) != list(other.vocab.items()):
            return False
        if (self.rope_base, self.norm_epsilon) != (other.rope_base, other.norm_epsilon):
            return False
        mine, theirs = self.tensors(), other.tensors()
        if mine.keys() != theirs.keys():
            return False
        return all(np.array_equal(mine[k], theirs[k]) for k in mine)


def check_vocab(vocab: Mapping[str, int]) -> dict[str, int]:
    """Check that ``vocab`` maps token strings bijectively onto ``0..V-1``."""
    seen: dict[int, str] = {}
    for token, index in vocab.items():
        if not isinstance(token, str):
            raise VocabError(f"token {token!r} is not a string")
        if isinstance(index, bool) or not isinstance(index, (int, np.integer)):
            raise VocabError(f"token {token!r} has non-integer index {index!r}")
        if index in seen:
            raise VocabError(f"duplicate index {index} for tokens {seen[index]!r} and {token!r}")
        seen[int(index)] = token
    size = len(seen)
    for index in seen:
        if index < 0 or index >= size:
            missing = sorted(set(range(size)) - set(seen))
            raise VocabError(f"index range has a gap: index {index} present, missing {missing[:5]}")
    return {token: int(index) for token, index in vocab.items()}


def load_vocab(path) -> dict[str, int]:
    """Read a ``token -> index`` JSON object, preserving file order."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: vocabulary is not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: vocabulary must be a JSON object")
    return check_vocab(raw)


def save_vocab(vocab: Mapping[str, int], path) -> None:
    ordered = sorted(check_vocab(vocab).items(), key=lambda kv: kv[1])
    text = json.dumps(dict(ordered), ensure_ascii=False, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def vocab_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".vocab.json")


def write_container(path, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, str], dtype: str = "f64") -> None:
    """Write raw tensors in container layout without any bundle-level checks."""
    if dtype not in DTYPES:
        raise ValidationError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    np_dtype = DTYPES[dtype]
    header: dict[str, object] = {"__metadata__": dict(metadata)}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype=np_dtype).tobytes(order="C")
        header[name] = {
            "dtype": dtype,
            "shape": [int(s) for s in np.shape(tensors[name])],
            "data_offsets": [offset, offset + len(data)],
        }
        chunks.append(data)
        offset += len(data)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Parse a container into float64 tensors and the raw metadata dict."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for header length")
    (n,) = struct.unpack("<Q", raw[:8])
    if n == 0:
        raise FormatError(f"{path}: header length is zero")
    if n > len(raw) - 8:
        raise FormatError(f"{path}: header length {n} exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid UTF-8 JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    metadata = header.pop("__metadata__", None)
    if not isinstance(metadata, dict):
        raise FormatError(f"{path}: header lacks a __metadata__ object")

    data = raw[8 + n :]
    spans = []
    tensors = {}
    for name, entry in header.items():
        if not isinstance(entry, dict) or set(entry) != {"dtype", "shape", "data_offsets"}:
            raise FormatError(f"{path}: malformed entry for tensor {name!r}")
        dtype = entry["dtype"]
        if dtype not in DTYPES:
            raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {dtype!r}")
        shape = entry["shape"]
        offsets = entry["data_offsets"]
        if not (isinstance(shape, list) and all(type(s) is int and s >= 0 for s in shape)):
            raise FormatError(f"{path}: tensor {name!r} has invalid shape {shape!r}")
        if not (isinstance(offsets, list) and len(offsets) == 2 and all(type(o) is int for o in offsets)):
            raise FormatError(f"{path}: tensor {name!r} has invalid data_offsets {offsets!r}")
        begin, end = offsets
        if not 0 <= begin <= end <= len(data):
            raise FormatError(f"{path}: tensor {name!r} offsets {offsets} out of range (data is {len(data)} bytes)")
        expected = math.prod(shape) * DTYPES[dtype].itemsize
        if end - begin != expected:
            raise FormatError(f"{path}: tensor {name!r} spans {end - begin} bytes, shape needs {expected}")
        spans.append((begin, end, name))
        tensors[name] = np.frombuffer(data[begin:end], dtype=DTYPES[dtype]).astype(np.float64).reshape(shape)
    spans.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise FormatError(f"{path}: tensors {n0!r} and {n1!r} overlap")
    return tensors, metadata


def _metadata_number(metadata, key, kind, path):
    value = metadata.get(key)
    if not isinstance(value, str):
        raise FormatError(f"{path}: __metadata__.{key} must be a string, got {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise FormatError(f"{path}: __metadata__.{key}={value!r} is not a valid {kind.__name__}") from exc


def load_bundle(path) -> WeightBundle:
    """Load and validate a bundle (container plus sidecar vocabulary)."""
    path = Path(path)
    tensors, metadata = read_container(path)
    rope_base = _metadata_number(metadata, "rope_base", float, path)
    norm_epsilon = _metadata_number(metadata, "norm_epsilon", float, path)
    num_layers = _metadata_number(metadata, "num_layers", int, path)
    if num_layers < 0:
        raise FormatError(f"{path}: negative num_layers {num_layers}")

    per_layer: list[dict[str, np.ndarray]] = [{} for _ in range(num_layers)]
    embedding = lm_head = None
    for name, arr in tensors.items():
        if name == "embedding":
            embedding = arr
        elif name == "lm_head":
            lm_head = arr
        else:
            m = _LAYER_NAME.match(name)
            if m is None:
                raise FormatError(f"{path}: unknown tensor name {name!r}")
            i = int(m.group(1))
            if i >= num_layers:
                raise FormatError(f"{path}: tensor {name!r} refers to layer {i} but num_layers={num_layers}")
            per_layer[i][m.group(2)] = arr
    if embedding is None:
        raise FormatError(f"{path}: missing mandatory tensor 'embedding'")
    layers = []
    for i, named in enumerate(per_layer):
        for required in ("q", "k", "attn_norm", "ffn_norm"):
            if required not in named:
                raise FormatError(f"{path}: missing mandatory tensor 'layers.{i}.{required}'")
        layers.append(LayerWeights(**named))

    vocab = load_vocab(vocab_path(path))
    bundle = WeightBundle(
        vocab=vocab,
        embedding=embedding,
        layers=tuple(layers),
        lm_head=lm_head,
        rope_base=rope_base,
        norm_epsilon=norm_epsilon,
    )
    return bundle.validate()


def save_bundle(bundle: WeightBundle, path, dtype: str = "f64") -> None:
    """Write ``bundle`` to ``path`` and its vocabulary to the sidecar file.

    Byte layout is deterministic: tensors are sorted by name and the header
    is serialized with sorted keys.
    """
    bundle.validate()
    metadata = {
        "rope_base": repr(bundle.rope_base),
        "norm_epsilon": repr(bundle.norm_epsilon),
        "num_layers": str(bundle.num_layers),
    }
    write_container(path, bundle.tensors(), metadata, dtype=dtype)
    save_vocab(bundle.vocab, vocab_path(path))
