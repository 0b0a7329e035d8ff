import gzip

import numpy as np
import pytest

from replaylab.envs.digits import synthetic_digits
from replaylab.envs.idx import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    IdxFormatError,
    encode_idx,
    load_idx,
    parse_idx,
    save_idx,
    write_idx,
)


def test_hand_built_label_file() -> None:
    data = bytes.fromhex("00000801") + (2).to_bytes(4, "big") + bytes([3, 7])
    assert len(data) == 10
    assert parse_idx(data, LABELS_MAGIC).tolist() == [3, 7]


def test_encode_writes_the_standard_header() -> None:
    data = encode_idx(np.zeros((2, 3, 4), dtype=np.uint8))
    assert data[:4] == IMAGES_MAGIC.to_bytes(4, "big")
    assert data[4:16] == b"".join(n.to_bytes(4, "big") for n in (2, 3, 4))
    assert len(data) == 16 + 24


def test_bad_magic() -> None:
    with pytest.raises(IdxFormatError, match="not an IDX file"):
        parse_idx(bytes.fromhex("DEADBEEF") + bytes(8))


def test_wrong_kind_of_file() -> None:
    labels = encode_idx(np.array([1, 2], dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="not an IDX file"):
        parse_idx(labels, IMAGES_MAGIC)


@pytest.mark.parametrize("length", [2, 6, 11, 21])
def test_truncated_payload(length) -> None:
    data = encode_idx(np.arange(6, dtype=np.uint8).reshape(1, 2, 3))
    assert len(data) == 22
    with pytest.raises(IdxFormatError, match="unexpected end of data"):
        parse_idx(data[:length])


def test_pixels_scale_to_unit_interval(tmp_path) -> None:
    images = np.array([[[0, 255], [128, 1]]], dtype=np.uint8)
    write_idx(tmp_path / "img", images)
    write_idx(tmp_path / "lab", np.array([4], dtype=np.uint8))
    pixels, labels = load_idx(tmp_path / "img", tmp_path / "lab")
    assert pixels[0, 0, 1] == 1.0
    assert pixels[0, 0, 0] == 0.0
    assert pixels[0, 1, 0] == pytest.approx(128 / 255)
    assert labels.tolist() == [4]


def test_count_mismatch(tmp_path) -> None:
    write_idx(tmp_path / "img", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="!= label count"):
        load_idx(tmp_path / "img", tmp_path / "lab")


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_synthetic_dataset_round_trips_bit_exactly(tmp_path, suffix) -> None:
    data = synthetic_digits(np.random.default_rng(0), per_class=20)
    images_path = tmp_path / f"images{suffix}"
    labels_path = tmp_path / f"labels{suffix}"
    save_idx(images_path, labels_path, data.images, data.labels)
    images, labels = load_idx(images_path, labels_path)
    assert np.array_equal(images, data.images)
    assert np.array_equal(labels, data.labels)
    if suffix:
        assert gzip.decompress(images_path.read_bytes())[:4] == IMAGES_MAGIC.to_bytes(4, "big")


def test_writer_accepts_only_bytes() -> None:
    with pytest.raises(ValueError):
        encode_idx(np.zeros(3, dtype=np.float32))
