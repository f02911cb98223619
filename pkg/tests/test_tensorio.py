import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpxlab.errors import CorruptError, FormatError, ManifestError, UnsupportedError
from dpxlab.tensorio import (
    HEADER_LEN,
    Manifest,
    ManifestEntry,
    load_manifest,
    read_tensor,
    save_manifest,
    tensor_bytes,
    tensor_from_bytes,
    write_tensor,
)


@st.composite
def arrays_up_to_rank8(draw):
    rank = draw(st.integers(min_value=0, max_value=8))
    shape = tuple(draw(st.integers(min_value=1, max_value=3)) for _ in range(rank))
    dtype = draw(st.sampled_from([np.float32, np.float64]))
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape).astype(dtype)


@settings(max_examples=120, deadline=None)
@given(arrays_up_to_rank8())
def test_round_trip_bit_exact(arr):
    back = tensor_from_bytes(tensor_bytes(arr))
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_round_trip_through_file(tmp_path):
    arr = np.random.default_rng(0).standard_normal((4, 5)).astype(np.float32)
    path = tmp_path / "t.dpxt"
    write_tensor(arr, path)
    back = read_tensor(path)
    assert back.tobytes() == arr.tobytes()
    assert back.dtype == np.float32
    # returned arrays are frozen
    with pytest.raises(ValueError):
        back[0, 0] = 1.0


def test_file_size_of_256x256_float32_map(tmp_path):
    arr = np.zeros((256, 256), dtype=np.float32)
    path = tmp_path / "map.dpxt"
    write_tensor(arr, path)
    assert path.stat().st_size == 14 + 2 * 8 + 256 * 256 * 4


def test_scalar_rank0(tmp_path):
    arr = np.float64(3.25)
    raw = tensor_bytes(np.asarray(arr))
    back = tensor_from_bytes(raw)
    assert back.shape == ()
    assert float(back) == 3.25


def test_bad_magic():
    raw = tensor_bytes(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(FormatError):
        tensor_from_bytes(b"XXXX" + raw[4:])


def test_unknown_version_and_dtype():
    raw = bytearray(tensor_bytes(np.ones((2, 2), dtype=np.float32)))
    bad_version = bytes(raw[:4]) + bytes([0x02]) + bytes(raw[5:])
    with pytest.raises(UnsupportedError):
        tensor_from_bytes(bad_version)
    bad_dtype = bytes(raw[:5]) + bytes([0x03]) + bytes(raw[6:])
    with pytest.raises(UnsupportedError):
        tensor_from_bytes(bad_dtype)


def test_reserved_bytes_must_be_zero():
    raw = bytearray(tensor_bytes(np.ones((2, 2), dtype=np.float32)))
    raw[9] = 1
    with pytest.raises(CorruptError):
        tensor_from_bytes(bytes(raw))


def test_flipped_dim_byte_is_corrupt():
    raw = bytearray(tensor_bytes(np.ones((2, 2), dtype=np.float32)))
    raw[HEADER_LEN] = 200  # first dim u64 low byte: 2 -> 200
    with pytest.raises(CorruptError):
        tensor_from_bytes(bytes(raw))


def test_truncated_payload_is_corrupt():
    raw = tensor_bytes(np.ones((3, 3), dtype=np.float64))
    with pytest.raises(CorruptError):
        tensor_from_bytes(raw[:-4])
    with pytest.raises(FormatError):
        tensor_from_bytes(raw[:6])


def test_nonfinite_rejected_both_ways():
    with pytest.raises(CorruptError):
        tensor_bytes(np.array([1.0, np.nan]))
    with pytest.raises(CorruptError):
        tensor_bytes(np.array([np.inf], dtype=np.float32))
    # hand-craft a container whose payload bytes encode NaN
    good = np.zeros(2, dtype="<f8")
    raw = bytearray(tensor_bytes(good))
    raw[-8:] = struct.pack("<d", float("nan"))
    with pytest.raises(CorruptError):
        tensor_from_bytes(bytes(raw))


def test_integer_dtype_rejected():
    with pytest.raises(UnsupportedError):
        tensor_bytes(np.arange(4))


def _entry(**kw):
    base = dict(logical_name="a", file_path="a.dpxt", role="input", model_id="m0")
    base.update(kw)
    return base


def _write_manifest(tmp_path, entries):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"entries": entries}))
    return path


def test_manifest_round_trip_and_load(tmp_path):
    arr = np.ones((2, 3), dtype=np.float64)
    write_tensor(arr, tmp_path / "a.dpxt")
    m = Manifest(
        entries=[
            ManifestEntry("acts", "a.dpxt", "activation", "m0", layer_id="relu0"),
            ManifestEntry("attr", "a.dpxt", "attribution", "m1", explainer_id="saliency", epsilon=4.0),
        ],
        base_dir=str(tmp_path),
    )
    save_manifest(m, tmp_path / "manifest.json")
    loaded = load_manifest(tmp_path / "manifest.json")
    assert [e.logical_name for e in loaded.entries] == ["acts", "attr"]
    assert loaded.get("attr").epsilon == 4.0
    assert loaded.epsilon_of("m0") is None
    np.testing.assert_array_equal(loaded.load("acts"), arr)
    assert loaded.find(role="activation", model_id="m0")[0].layer_id == "relu0"


def test_manifest_duplicate_name_names_entry(tmp_path):
    path = _write_manifest(tmp_path, [_entry(), _entry()])
    with pytest.raises(ManifestError, match="'a'"):
        load_manifest(path)


def test_manifest_bad_role(tmp_path):
    path = _write_manifest(tmp_path, [_entry(role="weights")])
    with pytest.raises(ManifestError, match="role"):
        load_manifest(path)


def test_manifest_missing_and_unknown_keys(tmp_path):
    path = _write_manifest(tmp_path, [{"logical_name": "x"}])
    with pytest.raises(ManifestError, match="missing"):
        load_manifest(path)
    path = _write_manifest(tmp_path, [_entry(extra_key=1)])
    with pytest.raises(ManifestError, match="unknown keys"):
        load_manifest(path)


def test_manifest_epsilon_rules(tmp_path):
    # one model cannot be both private and non-private
    path = _write_manifest(
        tmp_path,
        [_entry(), _entry(logical_name="b", epsilon=1.0)],
    )
    with pytest.raises(ManifestError, match="epsilon"):
        load_manifest(path)
    # epsilon must be positive when present
    path = _write_manifest(tmp_path, [_entry(epsilon=-2.0)])
    with pytest.raises(ManifestError, match="positive"):
        load_manifest(path)
    # same epsilon on every entry of a private model is fine
    path = _write_manifest(
        tmp_path,
        [_entry(epsilon=1.0), _entry(logical_name="b", epsilon=1.0)],
    )
    assert load_manifest(path).epsilon_of("m0") == 1.0


def test_manifest_unknown_logical_name(tmp_path):
    path = _write_manifest(tmp_path, [_entry()])
    with pytest.raises(ManifestError, match="'missing'"):
        load_manifest(path).get("missing")


def test_manifest_not_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(path)
