import numpy as np
import pytest

from hexresnet.cifar import (
    RECORD_BYTES,
    TEST_FILE,
    TRAIN_FILES,
    BatchLoader,
    CifarDataset,
    CifarRecord,
    SplitSpec,
    augment,
    augment_batch,
    compute_channel_stats,
    load_batches,
    make_synthetic_batches,
    parse_records,
    serialize_records,
    split_train_validation,
    standardize,
)
from hexresnet.errors import ConfigError, DatasetError
from hexresnet.tensor import make_rng

from conftest import SMALL_RECORDS

MEANS = (0.5, 0.5, 0.5)
STDS = (0.25, 0.25, 0.25)


def random_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    return CifarDataset(
        rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8),
        rng.integers(0, 10, size=n).astype(np.uint8),
    )


def test_load_batches_counts(synthetic_dir):
    splits = load_batches(synthetic_dir, records_per_file=SMALL_RECORDS)
    assert len(splits.train) == 5 * SMALL_RECORDS
    assert len(splits.test) == SMALL_RECORDS
    assert splits.train.images.dtype == np.uint8
    assert splits.train.images.shape[1:] == (3, 32, 32)


def test_synthetic_batches_are_seeded(tmp_path):
    a = make_synthetic_batches(tmp_path / "a", make_rng(3), records_per_file=8)
    b = make_synthetic_batches(tmp_path / "b", make_rng(3), records_per_file=8)
    for name in TRAIN_FILES + (TEST_FILE,):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_synthetic_background_colour_does_not_depend_on_class(tmp_path):
    directory = make_synthetic_batches(tmp_path / "cifar", make_rng(0), records_per_file=400)
    train = load_batches(directory, records_per_file=400).train
    per_image = train.images.reshape(len(train), 3, -1).mean(axis=2)
    class_means = np.stack([per_image[train.labels == k].mean(axis=0) for k in range(10)])
    assert np.ptp(class_means, axis=0).max() < 16.0


def test_synthetic_label_noise_is_bounded(tmp_path):
    with pytest.raises(ValueError):
        make_synthetic_batches(tmp_path / "bad", make_rng(0), records_per_file=4, label_noise=1.5)
    directory = make_synthetic_batches(tmp_path / "noisy", make_rng(0), records_per_file=50, label_noise=1.0)
    labels = load_batches(directory, records_per_file=50).train.labels
    assert labels.max() < 10


def test_truncated_file_names_the_file(synthetic_dir):
    path = synthetic_dir / TRAIN_FILES[2]
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(DatasetError, match="data_batch_3.bin"):
        load_batches(synthetic_dir, records_per_file=SMALL_RECORDS)


def test_missing_file(synthetic_dir):
    (synthetic_dir / TEST_FILE).unlink()
    with pytest.raises(DatasetError, match="test_batch.bin"):
        load_batches(synthetic_dir, records_per_file=SMALL_RECORDS)


def test_default_file_size_is_checked(synthetic_dir):
    with pytest.raises(DatasetError, match="30730000"):
        load_batches(synthetic_dir)


def test_first_label_byte():
    data = random_dataset(3)
    raw = bytearray(serialize_records(data))
    raw[0] = 7
    assert parse_records(bytes(raw)).labels[0] == 7


def test_label_ten_is_rejected():
    raw = bytearray(serialize_records(random_dataset(2)))
    raw[RECORD_BYTES] = 10
    with pytest.raises(DatasetError, match="record 1"):
        parse_records(bytes(raw))


def test_channel_major_layout():
    pixels = np.zeros((3, 32, 32), dtype=np.uint8)
    pixels[1, 0, 2] = 200  # green, row 0, col 2
    raw = CifarRecord(4, pixels).to_bytes()
    assert len(raw) == RECORD_BYTES
    assert raw[1 + 1024 + 2] == 200


def test_parse_serialize_is_lossless():
    raw = serialize_records(random_dataset(5, seed=3))
    assert serialize_records(parse_records(raw)) == raw


def test_partial_record_is_rejected():
    with pytest.raises(DatasetError):
        parse_records(b"\x00" * (RECORD_BYTES + 1))


def test_split_is_disjoint_and_seeded():
    data = CifarDataset(np.zeros((100, 3, 32, 32), dtype=np.uint8), np.zeros(100, dtype=np.uint8))
    data.images[:, 0, 0, 0] = np.arange(100)
    spec = SplitSpec(train=70, validation=20, seed=5)
    train, val = split_train_validation(data, spec)
    train_ids = set(train.images[:, 0, 0, 0].tolist())
    val_ids = set(val.images[:, 0, 0, 0].tolist())
    assert len(train_ids) == 70 and len(val_ids) == 20
    assert not train_ids & val_ids
    again, _ = split_train_validation(data, spec)
    np.testing.assert_array_equal(again.images, train.images)
    other, _ = split_train_validation(data, SplitSpec(train=70, validation=20, seed=6))
    assert not np.array_equal(other.images, train.images)


def test_split_larger_than_dataset():
    with pytest.raises(ConfigError):
        split_train_validation(random_dataset(10), SplitSpec(train=8, validation=5))


def test_channel_stats_constant_data():
    images = np.full((4, 3, 32, 32), 128, dtype=np.uint8)
    means, stds = compute_channel_stats(images)
    np.testing.assert_allclose(means, 128 / 255)
    np.testing.assert_array_equal(stds, 0.0)


def test_channel_stats_permutation_invariant():
    data = random_dataset(20)
    means, stds = compute_channel_stats(data.images)
    m2, s2 = compute_channel_stats(data.images[::-1])
    np.testing.assert_allclose(means, m2)
    np.testing.assert_allclose(stds, s2)


def test_standardize_is_deterministic():
    images = random_dataset(2).images
    a = standardize(images, MEANS, STDS)
    np.testing.assert_array_equal(a, standardize(images, MEANS, STDS))
    assert a.dtype == np.float32
    np.testing.assert_allclose(a, (images / 255.0 - 0.5) / 0.25, rtol=1e-6)


def test_centered_crop_without_flip_is_standardized_original(rng):
    record = random_dataset(1).record(0)
    out = augment(record, rng, MEANS, STDS, offset=(4, 4), flip=False)
    np.testing.assert_allclose(out, standardize(record.pixels[None], MEANS, STDS)[0], rtol=1e-6)


def test_forced_flip_twice_is_identity(rng):
    record = random_dataset(1).record(0)
    flipped = augment(record, rng, MEANS, STDS, offset=(4, 4), flip=True)
    back = augment(record.pixels[:, :, ::-1].copy(), rng, MEANS, STDS, offset=(4, 4), flip=True)
    np.testing.assert_allclose(back, standardize(record.pixels[None], MEANS, STDS)[0], rtol=1e-6)
    np.testing.assert_allclose(flipped[:, :, ::-1], back, rtol=1e-6)


def test_corner_crop_shows_zero_padding(rng):
    images = np.full((1, 3, 32, 32), 255, dtype=np.uint8)
    out = augment(images[0], rng, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), offset=(0, 0), flip=False)
    assert not out[:, :4, :].any()
    assert not out[:, :, :4].any()
    np.testing.assert_allclose(out[:, 4:, 4:], 1.0)


def test_all_crop_offsets_are_reachable():
    rng = make_rng(0)
    counts = np.zeros((9, 9))
    for _ in range(10_000):
        dy, dx = rng.integers(0, 9, size=2)
        counts[dy, dx] += 1
    assert (counts > 0).all()
    expected = 10_000 / 81
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 140  # 80 degrees of freedom


def test_augment_batch_draws_every_offset():
    # a single bright pixel at the centre moves with the crop offset
    images = np.zeros((4000, 3, 32, 32), dtype=np.uint8)
    images[:, :, 16, 16] = 255
    out = augment_batch(images, make_rng(1), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    positions = {tuple(np.argwhere(img[0] > 0.5)[0]) for img in out}
    # rows 12..20; columns 12..20 unflipped and 11..19 flipped
    assert len(positions) == 9 * 10


def test_augment_rejects_out_of_range_offset(rng):
    with pytest.raises(ValueError):
        augment(random_dataset(1).record(0), rng, MEANS, STDS, offset=(9, 0))


def test_batch_loader_covers_dataset_once_per_epoch():
    data = random_dataset(25)
    data.images[:, 0, 0, 0] = np.arange(25)
    loader = BatchLoader(data, 8, MEANS, STDS, seed=3, augment=False)
    assert len(loader) == 4
    seen = []
    for x, y in loader.epoch(0):
        assert x.dtype == np.float32 and y.dtype == np.int64
        seen.extend(np.rint((x[:, 0, 0, 0] * 0.25 + 0.5) * 255).astype(int).tolist())
    assert sorted(seen) == list(range(25))


def test_batch_loader_is_independent_of_workers():
    data = random_dataset(40)
    single = list(BatchLoader(data, 16, MEANS, STDS, seed=9, workers=0).epoch(2))
    threaded = list(BatchLoader(data, 16, MEANS, STDS, seed=9, workers=3).epoch(2))
    assert len(single) == len(threaded) == 3
    for (xa, ya), (xb, yb) in zip(single, threaded):
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)


def test_batch_loader_shuffles_per_epoch():
    data = random_dataset(32)
    loader = BatchLoader(data, 32, MEANS, STDS, seed=0, augment=False)
    (_, y0), = list(loader.epoch(0))
    (_, y1), = list(loader.epoch(1))
    (_, y0_again), = list(loader.epoch(0))
    np.testing.assert_array_equal(y0, y0_again)
    assert sorted(y0.tolist()) == sorted(y1.tolist())


def test_batch_loader_rejects_zero_batch():
    with pytest.raises(ConfigError):
        BatchLoader(random_dataset(2), 0, MEANS, STDS)
