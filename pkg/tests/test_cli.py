import json
import os

import pandas as pd
import pytest

from delaynet.const import (
    ABLATION_FILE,
    BOXSTATS_FILE,
    CHECKPOINT_FILE,
    GROUND_TRUTH_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    REPORT_FILE,
    ROLLING_FILE,
    SAMPLE_ERRORS_FILE,
    SAMPLE_INDEX_FILE,
    SERIES_FILE,
)
from delaynet.mcp_server import DelayMCPServer, create_server
from delaynet.scripts import run_server
from delaynet.scripts.run_cli import EXIT_INPUT, EXIT_OK, main


def _config(**extra):
    config = {
        "plant": {"n_steps": 1500, "seed": 3},
        "pipeline": {"window_minutes": 90, "stride_minutes": 30, "past_steps": 20, "future_steps": 10},
        "net": {"Fc": 3, "n_low": 1, "n_high": 2},
        "train": {"lr": 0.01, "max_epochs": 2, "patience": 2, "batch_size": 16},
        "eval": {"sample_period": 10},
        "ablation": {"positions": ["high"], "trials": 1, "max_workers": 1},
    }
    config.update(extra)
    return config


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(_config()))
    return str(path)


@pytest.fixture
def prepared(tmp_path, config_path):
    data, samples = str(tmp_path / "data"), str(tmp_path / "samples")
    assert main(["simulate", "-c", config_path, "-o", data]) == EXIT_OK
    assert main(["prepare", "-c", config_path, "--data", data, "-o", samples]) == EXIT_OK
    return data, samples


def test_simulate_and_prepare_write_their_files(prepared):
    data, samples = prepared
    for name in (SERIES_FILE, MANIFEST_FILE, GROUND_TRUTH_FILE):
        assert os.path.isfile(os.path.join(data, name))
    with open(os.path.join(samples, SAMPLE_INDEX_FILE)) as f:
        index = json.load(f)
    assert index["boundary"]


def test_train_then_eval(tmp_path, config_path, prepared):
    data, samples = prepared
    run, out = str(tmp_path / "run"), str(tmp_path / "eval")
    assert main(["train", "-c", config_path, "--samples", samples, "-o", run]) == EXIT_OK
    metrics = pd.read_csv(os.path.join(run, METRICS_FILE))
    assert metrics["epoch"].tolist() == [0, 1]
    assert (metrics["wall_seconds"] == 0.0).all()
    assert os.path.isfile(os.path.join(run, CHECKPOINT_FILE))

    assert main(["eval", "-c", config_path, "--checkpoint", run, "--samples", samples, "--data", data, "-o", out]) == EXIT_OK
    with open(os.path.join(out, REPORT_FILE)) as f:
        report = json.load(f)
    assert report["n_samples"] > 0
    assert report["mae_zero"] > 0.0
    assert [s["kind"] for s in report["subsets"]] == ["all", "cold", "quiet"]
    assert len(pd.read_csv(os.path.join(out, SAMPLE_ERRORS_FILE))) == report["n_samples"]
    rolling = pd.read_csv(os.path.join(out, ROLLING_FILE))
    assert list(rolling.columns) == ["step", "n_predictions", "room_temp_pred", "room_temp_true"]
    boxes = pd.read_csv(os.path.join(out, BOXSTATS_FILE))
    assert "all:delay" in boxes["name"].tolist()


def test_training_is_reproducible(tmp_path, config_path, prepared):
    _, samples = prepared
    outputs = []
    for name in ("a", "b"):
        run = str(tmp_path / name)
        assert main(["train", "-c", config_path, "-s", "5", "--samples", samples, "-o", run]) == EXIT_OK
        with open(os.path.join(run, METRICS_FILE)) as f, open(os.path.join(run, CHECKPOINT_FILE)) as g:
            outputs.append((f.read(), g.read()))
    assert outputs[0] == outputs[1]


def test_ablate_writes_zero_line(tmp_path, config_path, prepared):
    _, samples = prepared
    out = str(tmp_path / "ablate")
    assert main(["ablate", "-c", config_path, "--samples", samples, "-o", out]) == EXIT_OK
    frame = pd.read_csv(os.path.join(out, ABLATION_FILE))
    assert frame["name"].tolist() == ["***", "**I", "Zero"]
    assert frame["n"].tolist() == [1, 1, 1]


def test_missing_checkpoint_exits_with_input_error(tmp_path, config_path, prepared):
    _, samples = prepared
    empty = str(tmp_path / "empty")
    os.makedirs(empty)
    assert main(["eval", "-c", config_path, "--checkpoint", empty, "--samples", samples, "-o", str(tmp_path)]) == EXIT_INPUT


def test_bad_inputs_exit_with_input_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lr": -1.0}}))
    assert main(["simulate", "-c", str(bad), "-o", str(tmp_path)]) == EXIT_INPUT
    assert main(["simulate", "-c", str(tmp_path / "absent.json"), "-o", str(tmp_path)]) == EXIT_INPUT
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["simulate", "-c", str(broken), "-o", str(tmp_path)]) == EXIT_INPUT
    assert main(["train", "--samples", str(tmp_path / "nothing"), "-o", str(tmp_path)]) == EXIT_INPUT


def test_gradcheck_command(tmp_path):
    out = str(tmp_path / "gc")
    assert main(["gradcheck", "--points", "1", "-o", out]) == EXIT_OK
    with open(os.path.join(out, "gradcheck.json")) as f:
        results = json.load(f)
    assert all(r["passed"] for r in results)


def test_mcp_server_builds_from_config(config_path):
    server = create_server(config_path)
    assert isinstance(server, DelayMCPServer)
    assert server.config.train.max_epochs == 2
    assert isinstance(create_server(), DelayMCPServer)


def test_server_script_rejects_bad_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"pipeline": {"window_minutes": 91}}))
    assert run_server.main(["-c", str(bad)]) == 1
    assert run_server.main(["-c", str(tmp_path / "absent.json")]) == 1
