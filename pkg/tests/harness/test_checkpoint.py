import zlib

import numpy as np
import pytest

from dwcaps_engine.core.utils.checkpoint import (
    MAGIC,
    checkpoint_bytes,
    decode,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from dwcaps_engine.core.utils.errors import CheckpointError, ContractError
from dwcaps_engine.make_model import build_variant


@pytest.fixture
def small_model(small_caps, narrow_options):
    return build_variant("32-v1-2-2-k3", small_caps, narrow_options)


def test_round_trip_is_bit_identical(tmp_path, small_model):
    path = tmp_path / "model.ckpt"
    digest = save_checkpoint(small_model, path, extra={"seed": 3, "split_ratio": 0.7})
    loaded = load_checkpoint(path, expected_variant="32-v1-2-2-k3")
    assert loaded.checkpoint_extra == {"seed": 3, "split_ratio": 0.7}
    assert checkpoint_bytes(loaded) == path.read_bytes()
    assert save_checkpoint(loaded, tmp_path / "again.ckpt") == digest
    for name, tensor in small_model.named_parameters().items():
        assert np.array_equal(loaded.named_parameters()[name].data, tensor.data)


def test_loaded_model_predicts_the_same(tmp_path, small_model, three_class_set):
    save_checkpoint(small_model, tmp_path / "model.ckpt")
    loaded = load_checkpoint(tmp_path / "model.ckpt")
    images = three_class_set.images[:4]
    assert np.array_equal(loaded.predict(images), small_model.predict(images))


def test_float32_tensors_keep_their_dtype():
    header, tensors = decode(encode({"variant": "x"}, {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}))
    assert header == {"variant": "x"}
    assert tensors["a"].dtype == np.float32
    assert tensors["a"].shape == (2, 3)


def test_truncated_or_corrupted(tmp_path, small_model):
    data = checkpoint_bytes(small_model)
    with pytest.raises(CheckpointError):
        decode(data[:-9])
    with pytest.raises(CheckpointError):
        decode(data[:6])
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode(bytes(flipped))
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"NOPE" + data[4:])


def test_unsupported_version(small_model):
    body = bytearray(checkpoint_bytes(small_model)[:-4])
    body[len(MAGIC):len(MAGIC) + 4] = np.array([2], dtype="<u4").tobytes()
    data = bytes(body) + np.array([zlib.crc32(bytes(body))], dtype="<u4").tobytes()
    with pytest.raises(CheckpointError, match="version 2"):
        decode(data)


def test_variant_mismatch(tmp_path, small_model):
    save_checkpoint(small_model, tmp_path / "model.ckpt")
    with pytest.raises(ContractError):
        load_checkpoint(tmp_path / "model.ckpt", expected_variant="32-v2-2-2-k3")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_set_parameter_swaps_a_tensor_in_place(small_model):
    layer = small_model.layers_by_name["conv-1"]
    old = layer.weights["pointwise"]
    layer.set_parameter("pointwise", np.ones(old.shape))
    new = small_model.named_parameters()["conv-1.pointwise"]
    assert new is not old and new.name == old.name
    assert new.requires_grad and np.all(new.data == 1.0)
    with pytest.raises(CheckpointError):
        layer.set_parameter("pointwise", np.ones((1, 1, 2, 2)))
    with pytest.raises(CheckpointError):
        layer.set_parameter("kernel", np.ones(old.shape))
