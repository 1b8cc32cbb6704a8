import pytest

from hexresnet.cli import create_parser, main
from hexresnet.metrics import MetricsRecord, append_record, write_json
from hexresnet.trainer import RUN_CONFIG_FILE


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    monkeypatch.setenv("HEXRESNET_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("HEXRESNET_DATA_DIR", str(tmp_path / "data"))


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for command in ("train", "eval", "verify-hexconv", "gradcheck", "count-params", "bench", "report"):
        assert command in out


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["count-params", "--bogus"])
    assert info.value.code == 2


def test_bad_choice_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["count-params", "--shortcut", "diagonal"])
    assert info.value.code == 2


def test_no_command():
    assert main([]) == 2


def test_invalid_depth_is_usage_error(capsys):
    assert main(["count-params", "--depth", "21"]) == 2
    assert "6n+2" in capsys.readouterr().err


@pytest.mark.parametrize(
    "shortcut, expected",
    [("projection_1x1", 272474), ("identity_pad", 269722), ("hex_projection", 287834)],
)
def test_count_params(capsys, shortcut, expected):
    assert main(["count-params", "--depth", "20", "--shortcut", shortcut]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "# count-params configuration"
    assert str(expected) in out


def test_count_params_compare(capsys):
    assert main(["count-params", "--depth", "56", "--compare"]) == 0
    out = capsys.readouterr().out
    assert "855,770" in out and "869,082" in out
    assert "18,112" in out and "15,360" in out


def test_verify_hexconv(capsys):
    assert main(["verify-hexconv", "--cases", "30", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "cases = 30" in out
    assert "max_deviation:" in out and "PASS" in out


def test_verify_hexconv_failure_exits_one():
    assert main(["verify-hexconv", "--cases", "5", "--tolerance", "0"]) == 1


def test_gradcheck(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.bin")]) == 1
    assert "missing.bin" in capsys.readouterr().err


def test_train_without_data_fails(tmp_path):
    assert main(["train", "--data-dir", str(tmp_path / "nowhere"), "--epochs", "1"]) == 1


def test_bench_single_repeat(capsys):
    args = ["bench", "--in-channels", "2", "--out-channels", "3", "--spatial", "8", "--batch", "1", "--repeats", "1"]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "ratio (hex/square):" in out
    assert "stdev" not in out


def test_bench_zero_channels_rejected():
    assert main(["bench", "--in-channels", "0"]) == 2


def test_report(tmp_path, capsys):
    path = tmp_path / "metrics.jsonl"
    append_record(path, MetricsRecord(1, 40, 0.1, 2.0, 1.9, 25.0, 70.0, 3.0))
    append_record(path, MetricsRecord(2, 80, 0.1, 1.7, 1.6, 35.0, 80.0, 3.0))
    assert main(["report", "--metrics", str(path)]) == 0
    out = capsys.readouterr().out
    assert "best_val_top1: 35.0" in out
    assert "best_epoch: 2" in out


def test_train_flags_parse():
    args = create_parser().parse_args(["train", "--epochs", "0", "--train-subset", "500", "--shortcut", "identity_pad"])
    assert args.epochs == 0 and args.train_subset == 500 and args.shortcut == "identity_pad"


def test_report_compares_runs_by_epoch(tmp_path, capsys):
    for name, shortcut, top1 in (("a", "hex_projection", 30.0), ("b", "identity_pad", 20.0)):
        run = tmp_path / name
        write_json(run / RUN_CONFIG_FILE, {"arch": {"depth": 20, "shortcut_mode": shortcut}, "train": {}})
        append_record(run / "metrics.jsonl", MetricsRecord(1, 40, 0.1, 2.0, 1.5, top1, 75.0, 3.0))
    assert main(["report", "--metrics", str(tmp_path / "a" / "metrics.jsonl"), str(tmp_path / "b" / "metrics.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "## hex_projection-20" in out and "## identity_pad-20" in out
    assert "## per-epoch validation" in out
    assert "val_top1_error" in out
    assert "70.000" in out and "80.000" in out


def test_report_labels_runs_without_config_by_directory(tmp_path, capsys):
    path = tmp_path / "desk" / "metrics.jsonl"
    append_record(path, MetricsRecord(1, 40, 0.1, 2.0, 1.5, 30.0, 75.0, 3.0))
    assert main(["report", "--metrics", str(path), str(path)]) == 0
    out = capsys.readouterr().out
    assert "## desk\n" in out and "## desk#2\n" in out


def test_report_missing_stream_exits_one(tmp_path):
    assert main(["report", "--metrics", str(tmp_path / "absent.jsonl")]) == 1


@pytest.mark.parametrize("flag", ["--train-subset", "--validation-size"])
def test_full_rejects_subset_flags(tmp_path, capsys, flag):
    assert main(["train", "--full", flag, "500"]) == 2
    assert "--full" in capsys.readouterr().err
    assert not (tmp_path / "runs").exists()


def test_eval_leaves_output_dir_alone(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.bin")]) == 1
    assert not (tmp_path / "runs").exists()
