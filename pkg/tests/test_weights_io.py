import json
import struct

import numpy as np
import pytest

from conftest import SMALL, TINY
from weightprint import FormatError, LayerWeights, ValidationError, VocabError, generate_base, load_bundle, load_vocab, save_bundle
from weightprint.weights_io import read_container, save_vocab, vocab_path, write_container


def test_round_trip_is_value_exact(tmp_path):
    b = generate_base(SMALL)
    save_bundle(b, tmp_path / "m.wpb")
    back = load_bundle(tmp_path / "m.wpb")
    assert back.equals(b)
    assert list(back.vocab) == list(b.vocab)


def test_f32_storage_loads_as_f64(tmp_path):
    b = generate_base(TINY)
    save_bundle(b, tmp_path / "m.wpb", dtype="f32")
    back = load_bundle(tmp_path / "m.wpb")
    assert back.embedding.dtype == np.float64
    np.testing.assert_array_equal(back.embedding, b.embedding.astype(np.float32).astype(np.float64))


def test_two_saves_are_byte_identical(tmp_path):
    b = generate_base(TINY)
    save_bundle(b, tmp_path / "a.wpb")
    save_bundle(b, tmp_path / "b.wpb")
    assert (tmp_path / "a.wpb").read_bytes() == (tmp_path / "b.wpb").read_bytes()


def test_header_layout(tmp_path):
    save_bundle(generate_base(TINY), tmp_path / "m.wpb")
    raw = (tmp_path / "m.wpb").read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    meta = header.pop("__metadata__")
    assert float(meta["rope_base"]) == TINY.rope_base
    assert int(meta["num_layers"]) == TINY.layers
    names = list(header)
    assert names == sorted(names)
    ends = [header[k]["data_offsets"] for k in names]
    assert ends[0][0] == 0
    assert all(a[1] == b[0] for a, b in zip(ends, ends[1:]))
    assert ends[-1][1] == len(raw) - 8 - n
    assert header["layers.1.q"]["dtype"] == "f64"
    assert header["layers.1.q"]["shape"] == [4, 4]


def test_zero_header_length_rejected(tmp_path):
    p = tmp_path / "m.wpb"
    p.write_bytes(struct.pack("<Q", 0))
    with pytest.raises(FormatError, match="header"):
        read_container(p)


def _rewrite_header(path, mutate):
    raw = path.read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    mutate(header)
    text = json.dumps(header).encode()
    path.write_bytes(struct.pack("<Q", len(text)) + text + raw[8 + n :])


def test_out_of_range_offsets_rejected(tmp_path):
    p = tmp_path / "m.wpb"
    save_bundle(generate_base(TINY), p)

    def grow(h):
        h["embedding"]["data_offsets"][1] += 10**6

    _rewrite_header(p, grow)
    with pytest.raises(FormatError):
        load_bundle(p)


def test_overlapping_offsets_rejected(tmp_path):
    p = tmp_path / "m.wpb"
    save_bundle(generate_base(TINY), p)

    def overlap(h):
        h["layers.0.k"]["data_offsets"] = list(h["layers.0.attn_norm"]["data_offsets"][:1]) + [
            h["layers.0.attn_norm"]["data_offsets"][0] + 8 * 16
        ]

    _rewrite_header(p, overlap)
    with pytest.raises(FormatError):
        load_bundle(p)


def test_unsupported_dtype_rejected(tmp_path):
    p = tmp_path / "m.wpb"
    save_bundle(generate_base(TINY), p)
    _rewrite_header(p, lambda h: h["embedding"].update(dtype="i32"))
    with pytest.raises(FormatError):
        load_bundle(p)


def test_missing_mandatory_tensor_rejected(tmp_path):
    p = tmp_path / "m.wpb"
    b = generate_base(TINY)
    tensors = {k: v for k, v in b.tensors().items() if k != "layers.1.attn_norm"}
    write_container(p, tensors, {"rope_base": "10000.0", "norm_epsilon": "1e-06", "num_layers": "2"})
    save_vocab(b.vocab, vocab_path(p))
    with pytest.raises(FormatError, match="layers.1.attn_norm"):
        load_bundle(p)


def test_inconsistent_layer_shape_rejected(tmp_path):
    p = tmp_path / "m.wpb"
    b = generate_base(TINY)
    tensors = dict(b.tensors())
    tensors["layers.1.q"] = np.ones((4, 5))
    write_container(p, tensors, {"rope_base": "10000.0", "norm_epsilon": "1e-06", "num_layers": "2"})
    save_vocab(b.vocab, vocab_path(p))
    with pytest.raises(ValidationError, match="layer 1"):
        load_bundle(p)


def test_nan_rejected_on_save(tmp_path):
    b = generate_base(TINY)
    q = b.layers[0].q.copy()
    q[0, 0] = np.nan
    bad_layer = LayerWeights(**{**b.layers[0].tensors(), "q": q})
    bad = b.replace(layers=(bad_layer,) + b.layers[1:])
    with pytest.raises(ValidationError, match="non-finite"):
        save_bundle(bad, tmp_path / "m.wpb")


def test_odd_head_rows_rejected():
    b = generate_base(TINY)
    layer = LayerWeights(**{**b.layers[0].tensors(), "q": np.ones((3, 4))})
    with pytest.raises(ValidationError, match="odd"):
        b.replace(layers=(layer,)).validate()


def test_partial_block_rejected():
    b = generate_base(TINY)
    t = b.layers[0].tensors()
    del t["ffn_down"]
    with pytest.raises(ValidationError, match="partial"):
        b.replace(layers=(LayerWeights(**t),)).validate()


def test_arrays_are_read_only():
    b = generate_base(TINY)
    with pytest.raises(ValueError):
        b.embedding[0, 0] = 1.0


@pytest.mark.parametrize(
    "content, error",
    [
        ({"a": 0, "b": 0}, "duplicate"),
        ({"a": 0, "b": 2}, "gap"),
        ({"a": 0, "b": 1.5}, "non-integer"),
        ({"a": 0, "b": True}, "non-integer"),
    ],
)
def test_vocab_errors(tmp_path, content, error):
    p = tmp_path / "v.json"
    p.write_text(json.dumps(content))
    with pytest.raises(VocabError, match=error):
        load_vocab(p)


def test_vocab_ok(tmp_path):
    p = tmp_path / "v.json"
    p.write_text('{"b": 1, "a": 0}')
    v = load_vocab(p)
    assert v == {"a": 0, "b": 1}
    assert list(v) == ["b", "a"]


def test_vocab_not_json(tmp_path):
    p = tmp_path / "v.json"
    p.write_text("{nope")
    with pytest.raises(FormatError):
        load_vocab(p)
