import json
import shutil

import pytest

from colontrack import cli
from colontrack import io as cio
from colontrack.errors import ConfigurationError, EmptyDatasetError, InvalidInputError
from colontrack.sen import checkpoint
from colontrack.sen.model import SenMeta, init_model


def small_args(out, *extra):
    return [
        "--out", str(out), "--train-runs", "2", "--eval-runs", "5", "--frames", "24",
        "--epochs", "2", *extra,
    ]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A small run through every stage, shared by the read-only checks below."""
    out = tmp_path_factory.mktemp("cli") / "run"
    assert cli.main(["run", *small_args(out)]) == 0
    return out


def files_under(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


def test_default_config_counts():
    cfg = cli.PipelineConfig()
    assert (cfg.simulation.train_runs, cfg.simulation.eval_runs) == (10, 5)
    assert cfg.simulation.frames == 300 and cfg.training.epochs == 40


def test_simulate_writes_one_file_per_run(tmp_path):
    cfg = cli.config_from_dict({"out": str(tmp_path), "simulation": {"frames": 20}})
    written = cli.cmd_simulate(cfg)
    assert len(written) == 15
    assert sum(p.name.startswith("train_") for p in written) == 10
    assert (tmp_path / "colon.json").exists() and (tmp_path / "config.json").exists()


def test_simulate_byte_identical(tmp_path):
    args = ["--train-runs", "1", "--eval-runs", "1", "--frames", "20"]
    assert cli.main(["simulate", "--out", str(tmp_path / "a"), *args]) == 0
    assert cli.main(["simulate", "--out", str(tmp_path / "b"), *args]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert files_under(a) == files_under(b)
    for name in files_under(a):
        if name == "config.json":
            continue
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    first = (a / "colon.json").read_bytes()
    assert cli.main(["simulate", "--out", str(a)]) == 0  # config.json in <out> is reused
    assert (a / "colon.json").read_bytes() == first


def test_zero_runs_is_empty_dataset(tmp_path, capsys):
    code = cli.main(["simulate", "--out", str(tmp_path), "--train-runs", "0"])
    assert code == cli.EXIT_CODES["empty-dataset"]
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: empty-dataset:")
    with pytest.raises(EmptyDatasetError):
        cli.cmd_simulate(cli.config_from_dict({"out": str(tmp_path), "simulation": {"eval_runs": 0}}))


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["simulate", "--estimator", "sen"])
    assert info.value.code == 2
    assert capsys.readouterr().err.startswith("error: usage:")


def test_config_validation(tmp_path):
    with pytest.raises(InvalidInputError, match="bogus"):
        cli.config_from_dict({"bogus": 1})
    with pytest.raises(InvalidInputError, match="simulation"):
        cli.config_from_dict({"simulation": {"frame": 10}})
    with pytest.raises(InvalidInputError):
        cli.config_from_dict({"simulation": {"frames": 5}})
    with pytest.raises(InvalidInputError):
        cli.config_from_dict({"tracking": {"estimator": "magic"}})


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 3, "simulation": {"frames": 50, "noise_mm": 0.5}}))
    args = cli.build_parser().parse_args(["simulate", "--config", str(path), "--frames", "40"])
    cfg = cli.resolve_config(args)
    assert cfg.seed == 3 and cfg.simulation.frames == 40 and cfg.simulation.noise_mm == 0.5


def test_digest_ignores_output_path():
    a = cli.config_from_dict({"out": "x"})
    b = cli.config_from_dict({"out": "y"})
    assert a.digest() == b.digest()
    assert a.digest() != cli.config_from_dict({"seed": 1}).digest()


def test_pipeline_layout(pipeline):
    names = files_under(pipeline)
    for expected in (
        "config.json",
        "colon.json",
        "model/checkpoint.json",
        "model/history.json",
        "sequences/train_01.jsonl",
        "sequences/eval_04.jsonl",
        "tracks/sen/eval_00.jsonl",
        "eval/rigid/errors.json",
        "report/sen/report.json",
        "report/sen/report.csv",
        "report/rigid/report.txt",
    ):
        assert expected in names


def test_report_rows(pipeline):
    data = json.loads((pipeline / "report" / "sen" / "report.json").read_text())
    assert data["runs"] == 5
    assert [r["label"] for r in data["markers"]] == [f"M{i:02d}" for i in range(1, 13)]
    for row in data["markers"]:
        assert row["min_mm"] <= row["avg_mm"] <= row["max_mm"]
    csv_lines = (pipeline / "report" / "sen" / "report.csv").read_text().splitlines()
    assert len(csv_lines) == 13


def test_history_recorded_per_epoch(pipeline):
    hist = json.loads((pipeline / "model" / "history.json").read_text())
    assert [e["epoch"] for e in hist["epochs"]] == [1, 2]
    assert 0 <= hist["best_epoch"] <= 2
    assert hist["colon_digest"] == cio.load_colon(pipeline / "colon.json")[2]


def test_checkpoint_round_trip_via_cli(pipeline):
    path = pipeline / "model" / "checkpoint.json"
    assert checkpoint.dumps(checkpoint.load(path)) == path.read_text()


def test_report_subcommand_prints_table(pipeline, capsys):
    assert cli.main(["report", "--out", str(pipeline), "--estimator", "rigid"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("Tracking error per marker over 5 run(s)")
    assert len(out.strip().splitlines()) == 14


@pytest.fixture
def scratch(pipeline, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(pipeline, dst)
    cfg = json.loads((dst / "config.json").read_text())
    cfg["out"] = str(dst)
    (dst / "config.json").write_text(json.dumps(cfg))
    return dst


def test_corrupt_checkpoint(scratch, capsys):
    path = scratch / "model" / "checkpoint.json"
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    assert cli.main(["track", "--out", str(scratch)]) == cli.EXIT_CODES["checkpoint"]
    err = capsys.readouterr().err
    assert err.startswith("error: checkpoint:") and "missing field" in err


def test_model_colon_count_mismatch(scratch):
    checkpoint.save(init_model(SenMeta(n=6, m=10, window=20, hidden=4, conv_kernels=2)), scratch / "model" / "checkpoint.json")
    cfg = cli.resolve_config(cli.build_parser().parse_args(["track", "--out", str(scratch)]))
    with pytest.raises(ConfigurationError, match="10 colon points"):
        cli.cmd_track(cfg)


def test_colon_digest_mismatch(scratch, capsys):
    # a colon model from another seed invalidates every downstream artifact
    other = scratch.parent / "other"
    assert cli.main(["simulate", "--out", str(other), "--seed", "4", "--train-runs", "1", "--eval-runs", "1", "--frames", "20"]) == 0
    shutil.copy(other / "colon.json", scratch / "colon.json")
    assert cli.main(["eval", "--out", str(scratch), "--estimator", "rigid"]) == cli.EXIT_CODES["configuration"]
    assert "colon model" in capsys.readouterr().err


def test_stage_order_enforced(tmp_path, capsys):
    assert cli.main(["track", "--out", str(tmp_path)]) == cli.EXIT_CODES["configuration"]
    assert "simulate" in capsys.readouterr().err
