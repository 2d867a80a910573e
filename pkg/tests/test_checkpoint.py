import hashlib
import json
import zipfile

import numpy as np
import pytest

from lpgnet.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from lpgnet.errors import SchemaError
from lpgnet.model import LpgNet
from lpgnet.rng import generator


def make_checkpoint():
    model = LpgNet(6, 5, 4, d=8, rng=generator(0, "init"))
    return Checkpoint(
        state=model.state_dict(),
        config={"hidden": 8},
        model={"arch": "lpgnet", "hparams": model.hparams, "labels": ["a", "b", "c", "d"]},
        epoch=3,
        history=[{"epoch": 1, "val_macro_f1": 0.5}],
        buffers=tuple(n for n, _ in model.named_buffers()),
    )


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_round_trip_is_bitwise(tmp_path):
    ckpt = make_checkpoint()
    back = load_checkpoint(save_checkpoint(tmp_path / "c.lpgc", ckpt))
    assert back.state.keys() == ckpt.state.keys()
    for name, arr in ckpt.state.items():
        assert back.state[name].tobytes() == arr.tobytes()
        assert back.state[name].dtype == np.float64 and back.state[name].flags.writeable
    assert back.config == ckpt.config and back.model == ckpt.model
    assert back.epoch == 3 and back.history == ckpt.history
    assert set(back.buffers) == set(ckpt.buffers)
    assert any("running_var" in b for b in back.buffers)
    assert back.num_classes == 4 and back.labels == ["a", "b", "c", "d"]


def test_identical_checkpoints_hash_identically(tmp_path):
    a = save_checkpoint(tmp_path / "a.lpgc", make_checkpoint())
    b = save_checkpoint(tmp_path / "b.lpgc", make_checkpoint())
    assert digest(a) == digest(b)


def test_payload_is_little_endian_float64(tmp_path):
    ckpt = make_checkpoint()
    path = save_checkpoint(tmp_path / "c.lpgc", ckpt)
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        blob = zf.read("tensors.bin")
    first = manifest["tensors"][0]
    raw = np.frombuffer(blob, dtype="<f8", count=first["count"], offset=first["offset"])
    assert raw.tobytes() == ckpt.state[first["name"]].astype("<f8").tobytes()
    assert manifest["format"] == "lpgnet-checkpoint" and manifest["version"] == 1


def test_not_a_checkpoint(tmp_path):
    bad = tmp_path / "bad.lpgc"
    bad.write_text("hello")
    with pytest.raises(SchemaError):
        load_checkpoint(bad)


def test_wrong_format_tag(tmp_path):
    path = tmp_path / "other.lpgc"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps({"format": "other", "version": 1, "tensors": []}))
        zf.writestr("tensors.bin", b"")
    with pytest.raises(SchemaError):
        load_checkpoint(path)
