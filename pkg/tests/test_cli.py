"""End-to-end tests of the command-line interface."""

import json

import pytest
from click.testing import CliRunner

from mmgraphqa.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def data_dir(runner, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    res = runner.invoke(
        main,
        ["--seed", "0", "synth-gen", str(out), "--mode", "cross_modal", "--n-examples", "8"],
    )
    assert res.exit_code == 0, res.output
    return out


FAST = [
    "--epochs", "2", "--warmup", "1", "--layers", "2", "--hidden", "8",
    "--norm-mode", "none",
]


class TestSynthGen:
    def test_reports_bayes_summary(self, runner, data_dir):
        res = runner.invoke(
            main, ["synth-gen", str(data_dir.parent / "d2"), "--mode", "scene_only", "--n-examples", "3"]
        )
        assert res.exit_code == 0
        assert '"scene": 1.0' in res.output

    def test_invalid_spec_exits_1(self, runner, tmp_path):
        res = runner.invoke(
            main,
            ["synth-gen", str(tmp_path / "x"), "--mode", "cross_modal",
             "--n-examples", "3", "--n-candidates", "1"],
        )
        assert res.exit_code == 1
        assert "validation error" in res.output


class TestTrainEval:
    def test_full_cycle_writes_artifacts(self, runner, data_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("run")
        res = runner.invoke(
            main, ["train", str(data_dir), "--out-dir", str(out), *FAST]
        )
        assert res.exit_code == 0, res.output
        for name in (
            "run_config.json", "checkpoint.bin", "checkpoint.config.json",
            "history.jsonl", "history.csv", "loss_curve.png",
            "lr_schedule.png", "metrics.json", "metrics.png",
        ):
            assert (out / name).exists(), name
        history = [json.loads(l) for l in (out / "history.jsonl").read_text().splitlines()]
        assert [h["epoch"] for h in history] == [1, 2]
        run_cfg = json.loads((out / "run_config.json").read_text())
        assert run_cfg["epochs"] == 2 and run_cfg["norm_mode"] == "none"

        eval_out = tmp_path_factory.mktemp("eval")
        res = runner.invoke(
            main,
            ["eval", str(data_dir), str(out / "checkpoint.bin"), "--out-dir", str(eval_out)],
        )
        assert res.exit_code == 0, res.output
        metrics = json.loads((eval_out / "metrics.json").read_text())
        assert metrics == json.loads((out / "metrics.json").read_text())
        assert (eval_out / "metrics.png").exists()

    def test_missing_dataset_exits_2_via_click(self, runner, tmp_path):
        res = runner.invoke(main, ["train", str(tmp_path / "nope"), "--out-dir", str(tmp_path)])
        assert res.exit_code != 0

    def test_eval_without_config_sidecar_exits_3(self, runner, data_dir, tmp_path):
        bogus = tmp_path / "ckpt.bin"
        bogus.write_bytes(b"")
        res = runner.invoke(
            main, ["eval", str(data_dir), str(bogus), "--out-dir", str(tmp_path / "o")]
        )
        assert res.exit_code == 3
        assert "i/o error" in res.output


class TestBuildGraph:
    def test_writes_candidate_graphs_and_reports(self, runner, data_dir, tmp_path):
        out = tmp_path / "graphs"
        res = runner.invoke(
            main, ["build-graph", str(data_dir), "ex0", "--out-dir", str(out)]
        )
        assert res.exit_code == 0, res.output
        for i in range(2):
            g = json.loads((out / f"ex0_candidate{i}.json").read_text())
            assert any(n["id"] == "z" for n in g["nodes"])
            assert (out / f"ex0_candidate{i}.report.json").exists()

    def test_unknown_example_exits_1(self, runner, data_dir, tmp_path):
        res = runner.invoke(
            main, ["build-graph", str(data_dir), "ex99", "--out-dir", str(tmp_path / "g")]
        )
        assert res.exit_code == 1
        assert "not found" in res.output


class TestGradCheck:
    def test_passes_on_default_fixture(self, runner):
        res = runner.invoke(main, ["--seed", "0", "gradcheck"])
        assert res.exit_code == 0, res.output
        assert res.output.startswith("pass")

    def test_impossible_tolerance_exits_2(self, runner):
        res = runner.invoke(main, ["gradcheck", "--tolerance", "0"])
        assert res.exit_code == 2
        assert "numeric error" in res.output
