import numpy as np
import pytest

from hexresnet.checkpoint import load_checkpoint
from hexresnet.cifar import load_batches
from hexresnet.config import ArchConfig, DataConfig, TrainConfig
from hexresnet.errors import ConfigError, TrainingDivergedError
from hexresnet.metrics import read_json, read_records
from hexresnet.resnet import build_network
from hexresnet.tensor import make_rng
from hexresnet.trainer import CHECKPOINT_FILE, METRICS_FILE, RUN_CONFIG_FILE, Trainer, evaluate, prepare_data, train

from conftest import SMALL_RECORDS

ARCH = ArchConfig(depth=8)


def frozen_data_cfg(path):
    return DataConfig(data_dir=path, channel_means=(0.5, 0.5, 0.5), channel_stds=(0.25, 0.25, 0.25), prefetch=False)


@pytest.fixture
def data(synthetic_dir):
    return prepare_data(load_batches(synthetic_dir, records_per_file=SMALL_RECORDS), small_cfg(), frozen_data_cfg(synthetic_dir))


def small_cfg(**kwargs):
    base = dict(epochs=2, batch_size=16, validation_size=24, seed=3, lr=0.05, lr_drops=(5,), train_subset=48)
    base.update(kwargs)
    return TrainConfig(**base)


def params_of(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


def test_prepare_data_sizes(synthetic_dir):
    cfg = small_cfg()
    prepared = prepare_data(load_batches(synthetic_dir, records_per_file=SMALL_RECORDS), cfg, frozen_data_cfg(synthetic_dir))
    assert len(prepared.train) == 48
    assert len(prepared.validation) == 24
    assert len(prepared.test) == SMALL_RECORDS


def test_prepare_data_recomputes_stats(synthetic_dir):
    cfg = small_cfg()
    data_cfg = DataConfig(data_dir=synthetic_dir, channel_means=None, channel_stds=None)
    prepared = prepare_data(load_batches(synthetic_dir, records_per_file=SMALL_RECORDS), cfg, data_cfg)
    assert all(0.0 < m < 1.0 for m in prepared.means)
    assert all(s > 0.0 for s in prepared.stds)


def test_prepare_data_rejects_oversized_validation(synthetic_dir):
    cfg = small_cfg(validation_size=5 * SMALL_RECORDS)
    with pytest.raises(ConfigError):
        prepare_data(load_batches(synthetic_dir, records_per_file=SMALL_RECORDS), cfg, frozen_data_cfg(synthetic_dir))


def test_zero_epochs_records_one_evaluation(data, tmp_path):
    model = build_network(ARCH, make_rng(0))
    before = params_of(model)
    result = train(model, ARCH, data, small_cfg(epochs=0), output_dir=tmp_path)
    assert len(result.records) == 1
    assert result.records[0].train_loss is None
    assert result.records[0].iteration == 0
    for name, value in params_of(model).items():
        np.testing.assert_array_equal(value, before[name])
    assert len(read_records(tmp_path / METRICS_FILE)) == 1


def test_training_writes_metrics_and_checkpoint(data, tmp_path):
    model = build_network(ARCH, make_rng(0))
    result = train(model, ARCH, data, small_cfg(), output_dir=tmp_path)
    assert [r.epoch for r in result.records] == [1, 2]
    assert result.records[-1].iteration == 2 * 3
    # lr drops by 10x once iteration 5 is reached
    assert result.records[0].lr == pytest.approx(0.05)
    assert result.records[1].lr == pytest.approx(0.005)
    for r in result.records:
        assert 0.0 <= r.val_top1 <= r.val_top5 <= 100.0
        assert np.isfinite(r.train_loss)
    assert read_records(tmp_path / METRICS_FILE) == result.records
    ckpt = load_checkpoint(tmp_path / CHECKPOINT_FILE)
    assert (ckpt.epoch, ckpt.iteration) == (2, 6)


def test_training_creates_its_output_directory(data, tmp_path):
    output_dir = tmp_path / "runs" / "hex20"
    train(build_network(ARCH, make_rng(0)), ARCH, data, small_cfg(epochs=0), output_dir=output_dir)
    config = read_json(output_dir / RUN_CONFIG_FILE)
    assert config["arch"]["depth"] == 8
    assert config["train"]["epochs"] == 0
    assert (output_dir / METRICS_FILE).exists()


def test_seeded_runs_are_identical(data):
    runs = []
    for _ in range(2):
        model = build_network(ARCH, make_rng(3))
        result = train(model, ARCH, data, small_cfg())
        runs.append(([r.comparable() for r in result.records], params_of(model)))
    assert runs[0][0] == runs[1][0]
    for name in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][name], runs[1][1][name])


def test_resume_matches_uninterrupted_training(data, tmp_path):
    straight = build_network(ARCH, make_rng(3))
    train(straight, ARCH, data, small_cfg(epochs=2))

    first = build_network(ARCH, make_rng(3))
    train(first, ARCH, data, small_cfg(epochs=1), output_dir=tmp_path)
    ckpt = load_checkpoint(tmp_path / CHECKPOINT_FILE)
    assert ckpt.iteration == 3

    resumed = build_network(ARCH, make_rng(42))
    trainer = Trainer(resumed, ARCH, data, small_cfg(epochs=2))
    trainer.resume(ckpt)
    result = trainer.train()
    assert [r.epoch for r in result.records] == [2]
    assert result.records[0].lr == pytest.approx(0.005)
    expected = params_of(straight)
    for name, value in params_of(resumed).items():
        np.testing.assert_array_equal(value, expected[name])


def test_non_finite_loss_aborts(data, monkeypatch):
    monkeypatch.setattr(
        "hexresnet.trainer.softmax_cross_entropy", lambda scores, labels: (float("nan"), np.zeros_like(scores))
    )
    model = build_network(ARCH, make_rng(0))
    with pytest.raises(TrainingDivergedError) as info:
        train(model, ARCH, data, small_cfg())
    assert info.value.iteration == 0


def test_evaluate_restores_mode_and_state(data):
    model = build_network(ARCH, make_rng(0))
    buffers = {name: b.copy() for name, b in model.named_buffers()}
    result = evaluate(model, data.validation.images, data.validation.labels, data.means, data.stds, batch_size=10)
    assert result.count == len(data.validation)
    assert 0.0 <= result.top1 <= result.top5 <= 100.0
    assert model.training
    for name, b in model.named_buffers():
        np.testing.assert_array_equal(b, buffers[name])


def test_evaluate_is_batch_size_independent(data):
    model = build_network(ARCH, make_rng(0))
    a = evaluate(model, data.validation.images, data.validation.labels, data.means, data.stds, batch_size=24)
    b = evaluate(model, data.validation.images, data.validation.labels, data.means, data.stds, batch_size=7)
    assert a.top1 == b.top1 and a.top5 == b.top5
    assert a.loss == pytest.approx(b.loss, rel=1e-5)


@pytest.mark.slow
def test_desk_scale_training_learns(tmp_path):
    from hexresnet.cifar import make_synthetic_batches

    # redrawn labels keep the loss floor well above zero
    directory = make_synthetic_batches(tmp_path / "cifar", make_rng(0), records_per_file=2_000, label_noise=0.2)
    cfg = TrainConfig(epochs=5, batch_size=128, seed=0, train_subset=5_000, validation_size=1_000)
    arch = ArchConfig(depth=20)
    prepared = prepare_data(load_batches(directory, records_per_file=2_000), cfg, frozen_data_cfg(directory))
    result = train(build_network(arch, make_rng(0)), arch, prepared, cfg)
    losses = [r.train_loss for r in result.records]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert result.records[-1].val_top1 >= 20.0
