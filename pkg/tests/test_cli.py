import json

import numpy as np
import pytest
import yaml

from quadpose import cli
from quadpose import synthetic as syn
from quadpose.errors import QuadposeError
from quadpose.training import TrainConfig


def run(argv, monkeypatch=None, env_root=None):
    return cli.dispatch(argv)


class TestDispatchBasics:
    def test_no_command_is_usage_error(self, capsys):
        assert cli.dispatch([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert cli.dispatch(["frobnicate"]) == 1

    def test_help_exits_zero(self, capsys):
        assert cli.dispatch(["--help"]) == 0
        assert "generate-prior" in capsys.readouterr().out

    def test_missing_required_arg(self, capsys):
        assert cli.dispatch(["generate-prior"]) == 1


class TestGeneratePrior:
    def test_writes_prior_and_stamp(self, tmp_path, capsys):
        out = tmp_path / "prior.json"
        code = cli.dispatch(["generate-prior", "--n", "3", "--seed", "5",
                             "--out", str(out)])
        assert code == 0
        prior = syn.import_prior(out)
        assert len(prior) == 3
        stamp = json.loads((tmp_path / "stamp.json").read_text())
        assert stamp["seed"] == 5
        assert stamp["code_version"].startswith("0.")

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
        assert cli.dispatch(["generate-prior", "--n", "2",
                             "--out", "sub/prior.json"]) == 0
        assert (tmp_path / "sub" / "prior.json").exists()


class TestMakeDataset:
    def test_writes_dataset(self, tmp_path):
        code = cli.dispatch(["make-dataset", "--n-train", "2", "--n-eval", "1",
                             "--image-size", "16", "--gamma", "150",
                             "--out", str(tmp_path / "ds")])
        assert code == 0
        data = syn.load_dataset(tmp_path / "ds")
        assert data["train_images"].shape == (2, 16, 16)
        assert len(data["eval_scenes"]) == 1


class TestConfigFiles:
    def test_yaml_roundtrip(self, tmp_path):
        cfg = TrainConfig(steps=5, batch_size=2, gamma=150.0)
        path = tmp_path / "config.yaml"
        cli.save_train_config(path, cfg)
        loaded = cli.load_train_config(path)
        assert loaded == cfg

    def test_overrides_win(self, tmp_path):
        cfg = TrainConfig(steps=5, batch_size=2)
        path = tmp_path / "config.yaml"
        cli.save_train_config(path, cfg)
        loaded = cli.load_train_config(path, {"steps": 9, "seed": None})
        assert loaded.steps == 9
        assert loaded.seed == cfg.seed  # None override is ignored

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"config_version": 99, "train": {}}))
        with pytest.raises(QuadposeError):
            cli.load_train_config(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny end-to-end CLI workspace: dataset, prior, trained model."""
    root = tmp_path_factory.mktemp("cli")
    assert cli.dispatch(["make-dataset", "--n-train", "4", "--n-eval", "2",
                         "--image-size", "16", "--gamma", "150",
                         "--out", str(root / "ds")]) == 0
    assert cli.dispatch(["generate-prior", "--n", "4",
                         "--out", str(root / "prior.json")]) == 0
    cfg = TrainConfig(steps=2, batch_size=2, gamma=150.0,
                      checkpoint_every=0)
    cli.save_train_config(root / "config.yaml", cfg)
    assert cli.dispatch(["train", "--data", str(root / "ds"),
                         "--prior", str(root / "prior.json"),
                         "--config", str(root / "config.yaml"),
                         "--out", str(root / "run")]) == 0
    return root


class TestTrainEvalPredictPlot:
    def test_train_artifacts(self, workspace, capsys):
        assert (workspace / "run" / "checkpoint.pt").exists()
        assert (workspace / "run" / "metrics.jsonl").exists()
        assert (workspace / "run" / "stamp.json").exists()
        # network image_size was auto-matched to the 16px dataset
        saved = yaml.safe_load((workspace / "run" / "config.yaml").read_text())
        assert saved["train"]["network"]["image_size"] == 16

    def test_eval_writes_reports(self, workspace, capsys):
        code = cli.dispatch(["eval",
                             "--checkpoint", str(workspace / "run" / "checkpoint.pt"),
                             "--data", str(workspace / "ds"),
                             "--out", str(workspace / "eval")])
        assert code == 0
        report = json.loads((workspace / "eval" / "pck_report.json").read_text())
        assert set(report["group_rates"]) == {"Eyes", "Chin", "Shoulders",
                                              "Knees", "Hooves"}
        metrics = json.loads((workspace / "eval" / "metrics.json").read_text())
        assert {"mpjpe", "pa_mpjpe", "pck_mean"} <= set(metrics)
        out = capsys.readouterr().out
        assert "Mean" in out

    def test_predict_writes_pose_files(self, workspace, capsys):
        img = workspace / "ds" / "images" / "eval_000000.png"
        code = cli.dispatch(["predict",
                             "--checkpoint", str(workspace / "run" / "checkpoint.pt"),
                             "--images", str(img),
                             "--out", str(workspace / "preds")])
        assert code == 0
        payload = json.loads((workspace / "preds" / "pred_000000.json").read_text())
        assert len(payload["coords3d"]) == 20

    def test_plot_writes_figures(self, workspace, capsys):
        code = cli.dispatch(["plot",
                             "--checkpoint", str(workspace / "run" / "checkpoint.pt"),
                             "--data", str(workspace / "ds"),
                             "--n", "1",
                             "--out", str(workspace / "figs")])
        assert code == 0
        assert (workspace / "figs" / "overlay_000.png").exists()
        assert (workspace / "figs" / "views3d_000.png").exists()

    def test_missing_checkpoint_is_runtime_error(self, workspace, capsys):
        code = cli.dispatch(["eval",
                             "--checkpoint", str(workspace / "absent.pt"),
                             "--data", str(workspace / "ds"),
                             "--out", str(workspace / "eval2")])
        assert code == 2

    def test_bad_detector_spec(self, tmp_path, capsys):
        code = cli.dispatch(["ingest", "--videos", "x.avi",
                             "--detector", "nonsense",
                             "--out", str(tmp_path / "out")])
        assert code == 2
