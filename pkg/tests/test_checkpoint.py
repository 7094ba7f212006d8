import json

import numpy as np
import pytest

from latent_triplanes.checkpoint import (
    MANIFEST,
    PAYLOAD,
    CheckpointError,
    load_arrays,
    load_into,
    save_arrays,
    save_params,
)
from latent_triplanes.tensor_core import Parameter


def test_round_trip(tmp_path):
    arrays = {"b": np.arange(6, dtype=np.float32).reshape(2, 3), "a": np.array([1.5], dtype=np.float32)}
    save_arrays(tmp_path / "ck", arrays, {"stage": "x"})
    back, meta = load_arrays(tmp_path / "ck")
    assert meta == {"stage": "x"}
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    names = [e["name"] for e in json.loads((tmp_path / "ck" / MANIFEST).read_text())["entries"]]
    assert names == ["a", "b"]


def test_insertion_order_does_not_change_bytes(tmp_path):
    x, y = np.ones(3), np.zeros((2, 2))
    save_arrays(tmp_path / "1", {"x": x, "y": y})
    save_arrays(tmp_path / "2", {"y": y, "x": x})
    for f in (MANIFEST, PAYLOAD):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "2" / f).read_bytes()


def test_load_into_updates_in_place(tmp_path):
    p = Parameter(np.full((2, 2), 3.0), name="w")
    save_params(tmp_path / "ck", [p])
    q = Parameter(np.zeros((2, 2)), name="w")
    load_into(tmp_path / "ck", [q])
    np.testing.assert_array_equal(q.data, p.data)


def test_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path / "missing")
    p = Parameter(np.zeros(2), name="w")
    with pytest.raises(CheckpointError, match="duplicate"):
        save_params(tmp_path / "d", [p, p])
    save_params(tmp_path / "ck", [p])
    with pytest.raises(CheckpointError, match="missing"):
        load_into(tmp_path / "ck", [Parameter(np.zeros(2), name="other")])
    load_into(tmp_path / "ck", [Parameter(np.zeros(2), name="other")], strict=False)
    with pytest.raises(CheckpointError, match="shape"):
        load_into(tmp_path / "ck", [Parameter(np.zeros(3), name="w")])
    with open(tmp_path / "ck" / PAYLOAD, "ab") as fh:
        fh.write(b"\0")
    with pytest.raises(CheckpointError, match="bytes"):
        load_arrays(tmp_path / "ck")


def test_unknown_format(tmp_path):
    save_arrays(tmp_path / "ck", {"a": np.zeros(1)})
    mf = tmp_path / "ck" / MANIFEST
    mf.write_text(mf.read_text().replace("latent-triplanes-ckpt/1", "other/9"))
    with pytest.raises(CheckpointError, match="format"):
        load_arrays(tmp_path / "ck")
