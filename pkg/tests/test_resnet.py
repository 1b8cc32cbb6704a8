import numpy as np
import pytest

from hexresnet.config import ArchConfig, ShortcutMode, build_config
from hexresnet.errors import ConfigError, ShapeMismatchError
from hexresnet.hex_geometry import HexKernelWeights
from hexresnet.layers import softmax_cross_entropy
from hexresnet.resnet import (
    PUBLISHED_PARAMETERS,
    HexProjectionShortcut,
    PadShortcut,
    ProjectionShortcut,
    build_network,
    count_parameters,
    expected_parameter_count,
    hex_delta_over_identity,
    parameter_report,
)
from hexresnet.tensor import make_rng

DEPTHS = (20, 32, 44, 56)
IDENTITY_PAD_COUNTS = {20: 269_722, 32: 464_154, 44: 658_586, 56: 853_018}


@pytest.mark.parametrize("depth", DEPTHS)
def test_projection_counts_match_published_baseline(depth):
    model = build_network(ArchConfig(depth=depth, shortcut_mode=ShortcutMode.PROJECTION_1X1), make_rng(0))
    assert count_parameters(model) == PUBLISHED_PARAMETERS["baseline"][depth]


@pytest.mark.parametrize("depth", DEPTHS)
def test_identity_pad_counts(depth):
    model = build_network(ArchConfig(depth=depth, shortcut_mode=ShortcutMode.IDENTITY_PAD), make_rng(0))
    assert count_parameters(model) == IDENTITY_PAD_COUNTS[depth]


@pytest.mark.parametrize("depth", DEPTHS)
def test_hex_deltas(depth):
    counts = {
        mode: count_parameters(build_network(ArchConfig(depth=depth, shortcut_mode=mode), make_rng(0)))
        for mode in ShortcutMode
    }
    assert counts[ShortcutMode.HEX_PROJECTION] - counts[ShortcutMode.IDENTITY_PAD] == hex_delta_over_identity() == 18_112
    assert counts[ShortcutMode.HEX_PROJECTION] - counts[ShortcutMode.PROJECTION_1X1] == 15_360


@pytest.mark.parametrize("mode", list(ShortcutMode))
@pytest.mark.parametrize("depth", (8, 20))
def test_closed_form_count_matches_built_model(mode, depth):
    arch = ArchConfig(depth=depth, shortcut_mode=mode)
    assert expected_parameter_count(arch) == count_parameters(build_network(arch, make_rng(1)))


def test_parameter_report_lines():
    report = parameter_report(20)
    assert report.counts["projection_1x1"] == report.table_baseline == 272_474
    assert report.table_hex == 287_130
    assert report.hex_minus_identity == 18_112
    assert any("287,130" in line for line in report.lines())


def test_depth_must_be_6n_plus_2():
    with pytest.raises(ConfigError):
        build_config(ArchConfig, depth=21)
    with pytest.raises(ConfigError):
        build_config(ArchConfig, depth=2)


@pytest.mark.parametrize("mode", list(ShortcutMode))
def test_forward_backward_shapes(rng, mode):
    model = build_network(ArchConfig(depth=8, shortcut_mode=mode), rng)
    x = rng.normal(size=(2, 3, 32, 32)).astype(np.float32)
    scores = model.forward(x)
    assert scores.shape == (2, 10)
    assert model.backward(np.ones_like(scores)).shape == x.shape


def test_zero_classifier_gives_uniform_loss(rng, tiny_arch):
    model = build_network(tiny_arch, rng)
    model.classifier.weight.data[...] = 0
    x = rng.normal(size=(3, 3, 32, 32)).astype(np.float32)
    loss, _ = softmax_cross_entropy(model.forward(x), np.array([0, 4, 9]))
    assert loss == pytest.approx(np.log(10), rel=1e-6)


def test_duplicated_samples_score_alike_in_eval_mode(rng, tiny_arch):
    model = build_network(tiny_arch, rng).eval()
    sample = rng.normal(size=(1, 3, 32, 32)).astype(np.float32)
    other = rng.normal(size=(1, 3, 32, 32)).astype(np.float32)
    scores = model.forward(np.concatenate([sample, other, sample]))
    np.testing.assert_allclose(scores[0], scores[2], rtol=1e-6, atol=1e-6)


def test_stage_shapes(rng):
    model = build_network(ArchConfig(depth=8), rng)
    assert model.check_shapes() == [(16, 32, 32), (16, 32, 32), (32, 16, 16), (64, 8, 8)]


def test_block_names(rng):
    model = build_network(ArchConfig(depth=20), rng)
    names = {name.split(".")[0] + "." + name.split(".")[1] for name, _ in model.named_parameters() if name.startswith("stage")}
    assert {"stage1.0", "stage2.2", "stage3.1"} <= names
    assert len(model.layer_summary()) == 9 + 2


def test_forward_rejects_wrong_input(rng):
    model = build_network(ArchConfig(depth=8), rng)
    with pytest.raises(ShapeMismatchError):
        model.forward(np.zeros((1, 3, 16, 16), dtype=np.float32))


def test_state_dict_round_trip_reproduces_eval_outputs(rng):
    arch = ArchConfig(depth=8)
    source = build_network(arch, make_rng(1))
    source.forward(rng.normal(size=(4, 3, 32, 32)).astype(np.float32))  # move running stats
    target = build_network(arch, make_rng(2))
    target.load_state_dict(source.state_dict())
    x = rng.normal(size=(2, 3, 32, 32)).astype(np.float32)
    np.testing.assert_array_equal(source.eval().forward(x), target.eval().forward(x))


def test_load_state_dict_reports_missing_entries(rng):
    model = build_network(ArchConfig(depth=8), rng)
    with pytest.raises(KeyError):
        model.load_state_dict({})


def test_pad_shortcut_places_channels_in_the_middle(rng):
    shortcut = PadShortcut(16, 32)
    x = rng.normal(size=(1, 16, 4, 4))
    out = shortcut.forward(x)
    assert out.shape == (1, 32, 2, 2)
    assert not out[:, :8].any() and not out[:, 24:].any()
    np.testing.assert_array_equal(out[:, 8:24], x[:, :, ::2, ::2])
    assert shortcut.backward(np.ones_like(out)).sum() == 16 * 4


def test_hex_shortcut_with_center_only_weights_equals_projection(rng):
    proj = ProjectionShortcut(4, 8, rng, dtype=np.float64)
    hexs = HexProjectionShortcut(4, 8, rng, dtype=np.float64)
    center = proj.layers[0].weight.data[:, :, 0, 0]
    hexs.hexconv.set_weights(HexKernelWeights.center_only(center))
    x = rng.normal(size=(3, 4, 6, 6))
    np.testing.assert_allclose(hexs.forward(x), proj.forward(x), atol=1e-12)


def test_hex_layers_are_only_in_transition_shortcuts(rng):
    model = build_network(ArchConfig(depth=20, shortcut_mode=ShortcutMode.HEX_PROJECTION), rng)
    assert len(model.hex_layers()) == 2
    baseline = build_network(ArchConfig(depth=20, shortcut_mode=ShortcutMode.PROJECTION_1X1), rng)
    assert baseline.hex_layers() == []
