import numpy as np
import pytest

from cropenhance.train import (
    Checkpoint,
    CheckpointError,
    TruncatedCheckpointError,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def sample_checkpoint(rng):
    return Checkpoint(
        tensors={
            "croppers.0.fc3.weight": rng.random((6, 80)).astype(np.float32),
            "croppers.0.fc3.bias": np.array([1, 0, 0, 0, 1, 0], dtype=np.float32),
            "scalar": np.float32(3.5).reshape(()),
        },
        step=42,
        rng_state={"bit_generator": "PCG64", "state": {"state": 7, "inc": 9}},
        config={"model": {"input_size": 96}, "seed": 7},
    )


def test_roundtrip_every_tensor_bit_exact(tmp_path, sample_checkpoint):
    path = tmp_path / "c.dcec"
    save_checkpoint(path, sample_checkpoint)
    loaded = load_checkpoint(path)
    assert list(loaded.tensors) == list(sample_checkpoint.tensors)
    for name, arr in sample_checkpoint.tensors.items():
        assert loaded.tensors[name].dtype == np.float32
        np.testing.assert_array_equal(loaded.tensors[name], arr)
    assert loaded.step == 42
    assert loaded.rng_state == sample_checkpoint.rng_state
    assert loaded.config == sample_checkpoint.config


def test_save_load_save_byte_identical(tmp_path, sample_checkpoint):
    p1, p2 = tmp_path / "a.dcec", tmp_path / "b.dcec"
    save_checkpoint(p1, sample_checkpoint)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_bytes(tmp_path, sample_checkpoint):
    path = tmp_path / "c.dcec"
    save_checkpoint(path, sample_checkpoint)
    assert path.read_bytes()[:4] == b"DCEC"


def test_corrupted_magic_names_expectation(tmp_path, sample_checkpoint):
    path = tmp_path / "c.dcec"
    save_checkpoint(path, sample_checkpoint)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path)
    assert "DCEC" in str(exc.value)


def test_truncation_is_named_error(tmp_path, sample_checkpoint):
    path = tmp_path / "c.dcec"
    save_checkpoint(path, sample_checkpoint)
    blob = path.read_bytes()
    for cut in (2, 10, len(blob) // 2, len(blob) - 3):
        path.write_bytes(blob[:cut])
        with pytest.raises(TruncatedCheckpointError):
            load_checkpoint(path)


def test_version_mismatch(tmp_path, sample_checkpoint):
    path = tmp_path / "c.dcec"
    save_checkpoint(path, sample_checkpoint)
    data = bytearray(path.read_bytes())
    data[4] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path)
    assert "version" in str(exc.value)


def test_overlong_name_rejected(tmp_path):
    ckpt = Checkpoint(
        tensors={"x" * 70000: np.zeros(1, dtype=np.float32)},
        step=0, rng_state=None, config=None,
    )
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "c.dcec", ckpt)


def test_float64_inputs_stored_as_f32(tmp_path):
    ckpt = Checkpoint(
        tensors={"w": np.array([1.0, 2.0], dtype=np.float64)},
        step=0, rng_state=None, config=None,
    )
    path = tmp_path / "c.dcec"
    save_checkpoint(path, ckpt)
    assert load_checkpoint(path).tensors["w"].dtype == np.float32
