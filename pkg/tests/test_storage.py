import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from metafors.storage import MAGIC, array_digest, read_container, sidecar_path, write_container


def test_round_trip(tmp_path, rng):
    arrays_in = {"a": rng.normal(size=(3, 4)), "idx": np.arange(6).reshape(2, 3), "s": np.array(2.5)}
    write_container(tmp_path / "x.bin", arrays_in, {"kind": "test", "n": 3})
    out, meta = read_container(tmp_path / "x.bin")
    assert meta == {"kind": "test", "n": 3}
    for k, v in arrays_in.items():
        assert out[k].shape == v.shape
        assert out[k].tobytes() == v.astype(out[k].dtype).tobytes()
    assert out["idx"].dtype == np.int64


def test_layout(tmp_path):
    write_container(tmp_path / "x.bin", {"w": np.array([[1.0, 2.0]])}, {})
    raw = (tmp_path / "x.bin").read_bytes()
    assert raw[:4] == MAGIC
    assert raw[-16:] == np.array([1.0, 2.0], dtype="<f8").tobytes()
    assert json.loads(sidecar_path(tmp_path / "x.bin").read_text()) == {}


def test_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        read_container(tmp_path / "x.bin")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=5),
              elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_bitwise_property(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("c") / "x.bin"
    write_container(path, {"x": arr}, {})
    out, _ = read_container(path)
    assert out["x"].shape == arr.shape and out["x"].tobytes() == arr.tobytes()


def test_digest_sensitive_to_shape_and_value():
    a = np.arange(6.0)
    assert array_digest(a) == array_digest(a.copy())
    assert array_digest(a) != array_digest(a.reshape(2, 3))
    b = a.copy()
    b[0] = np.nextafter(0.0, 1.0)
    assert array_digest(a) != array_digest(b)
