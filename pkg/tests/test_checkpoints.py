import struct

import numpy as np
import pytest

from utils.checkpoints import MAGIC, checkpoint_digest, load_arrays, save_arrays
from utils.exceptions import CheckpointError, MissingArtifactError

def test_arrays_and_metadata_survive(tmp_path, rng):
    arrays = {"weights": rng.standard_normal((3, 4)), "gain": np.asarray(5.0), "empty": np.zeros((0, 2))}
    path = save_arrays(tmp_path / "a.ckpt", "toy", arrays, {"seed": 2, "losses": [0.5, 0.25]})
    loaded, meta = load_arrays(path, kind="toy")
    assert list(loaded) == ["weights", "gain", "empty"]
    np.testing.assert_array_equal(loaded["weights"], arrays["weights"])
    assert loaded["gain"].shape == ()
    assert loaded["empty"].shape == (0, 2)
    assert meta == {"seed": 2, "losses": [0.5, 0.25]}

def test_header_layout(tmp_path):
    path = save_arrays(tmp_path / "a.ckpt", "toy", {"x": np.array([1.0, 2.0])})
    data = path.read_bytes()
    assert data[:8] == MAGIC
    version, header_len = struct.unpack_from("<II", data, 8)
    assert version == 1
    assert len(data) == 16 + header_len + 2 * 8
    assert struct.unpack_from("<2d", data, 16 + header_len) == (1.0, 2.0)

def test_wrong_kind(tmp_path):
    path = save_arrays(tmp_path / "a.ckpt", "stdp_network", {"x": np.zeros(2)})
    with pytest.raises(CheckpointError) as info:
        load_arrays(path, kind="cpc_model")
    assert info.value.error_code == "wrong_kind"

@pytest.mark.parametrize("mutate, code", [
    (lambda b: b"NOTACKPT" + b[8:], "bad_magic"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
])
def test_corruption_is_detected(tmp_path, mutate, code):
    path = save_arrays(tmp_path / "a.ckpt", "toy", {"x": np.arange(4.0)})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError) as info:
        load_arrays(path)
    assert info.value.error_code == code

def test_missing_checkpoint(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_arrays(tmp_path / "nope.ckpt")

def test_digest_tracks_values_not_order():
    a = {"w": np.arange(6.0).reshape(2, 3), "b": np.ones(3)}
    b = {"b": np.ones(3), "w": np.arange(6.0).reshape(2, 3)}
    assert checkpoint_digest(a) == checkpoint_digest(b)
    changed = dict(a, b=np.array([1.0, 1.0, 1.0 + 1e-12]))
    assert checkpoint_digest(changed) != checkpoint_digest(a)
