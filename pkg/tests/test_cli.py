import math

import pandas as pd
import pytest
import yaml

from errmap import evaluate_model, predict_case, train_model
from errmap.cli import build_parser, main
from errmap.data.volume_io import read_volume
from errmap.evaluation import reports


@pytest.fixture
def trained(tmp_path, tiny_dataset, tiny_train_config):
    data_dir, _ = tiny_dataset
    result = train_model(tiny_train_config, data_dir, tmp_path / "run", log_dir=tmp_path / "logs", show_progress=False)
    return data_dir, result


@pytest.mark.unit
class TestParser:
    def test_usage_errors_exit_with_one(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 1
        with pytest.raises(SystemExit) as info:
            main(["gen-data", "--dims", "4,4"])
        assert info.value.code == 1
        with pytest.raises(SystemExit) as info:
            main(["ablate", "--data", "d", "--out", "o", "--seeds", "a,b"])
        assert info.value.code == 1

    def test_defaults(self):
        args = build_parser().parse_args(["ablate", "--data", "d", "--out", "o"])
        assert args.seeds == [0, 1, 2]
        args = build_parser().parse_args(["gen-data", "--dims", "8,16,24"])
        assert args.dims == [8, 16, 24]


@pytest.mark.integration
class TestCommands:
    def test_gen_data_prints_histogram(self, tmp_path, capsys):
        code = main(
            [
                "--log-dir", str(tmp_path / "logs"), "--quiet",
                "gen-data", "--out", str(tmp_path / "data"), "--count", "2",
                "--dims", "16,16,16", "--classes", "2", "--masks-per-case", "1",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "Wrote 2 cases, 2 masks" in out
        assert "Seg.DSC histogram" in out
        assert (tmp_path / "data" / "manifest.yaml").exists()

    def test_train_with_yaml_config(self, tmp_path, tiny_dataset, tiny_train_config, capsys):
        data_dir, _ = tiny_dataset
        config_path = tiny_train_config.to_yaml(tmp_path / "train.yaml")
        code = main(
            [
                "--log-dir", str(tmp_path / "logs"), "--quiet",
                "train", "--config", str(config_path), "--data", str(data_dir), "--out", str(tmp_path / "run"),
            ]
        )
        assert code == 0
        assert "Trained 3 iterations" in capsys.readouterr().out
        assert (tmp_path / "run" / "final.ckpt").exists()

    def test_predict_and_eval(self, tmp_path, trained, capsys):
        data_dir, result = trained
        log_dir = str(tmp_path / "logs")
        code = main(
            [
                "--log-dir", log_dir, "predict", "--checkpoint", str(result.checkpoint_path),
                "--data", str(data_dir), "--case", "case_000", "--mask-index", "1", "--out", str(tmp_path / "pred"),
            ]
        )
        assert code == 0
        assert "pAcc=" in capsys.readouterr().out
        assert (tmp_path / "pred" / "case_000_mask1_pred_error.rvol").exists()

        code = main(
            [
                "--log-dir", log_dir, "--quiet", "eval", "--checkpoint", str(result.checkpoint_path),
                "--data", str(data_dir), "--report", str(tmp_path / "report"), "--bins", "acdc",
            ]
        )
        assert code == 0
        assert "4 records: DSC=" in capsys.readouterr().out
        assert (tmp_path / "report" / "summary.yaml").exists()

    def test_missing_checkpoint_fails_cleanly(self, tmp_path, tiny_dataset, capsys):
        data_dir, _ = tiny_dataset
        code = main(
            [
                "--log-dir", str(tmp_path / "logs"), "eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                "--data", str(data_dir), "--report", str(tmp_path / "report"),
            ]
        )
        assert code == 1
        assert "CheckpointError" in capsys.readouterr().err

    def test_unknown_case_fails_cleanly(self, tmp_path, trained, capsys):
        data_dir, result = trained
        code = main(
            [
                "--log-dir", str(tmp_path / "logs"), "predict", "--checkpoint", str(result.checkpoint_path),
                "--data", str(data_dir), "--case", "case_404", "--mask-index", "0", "--out", str(tmp_path / "pred"),
            ]
        )
        assert code == 1
        assert "KeyError" in capsys.readouterr().err

    def test_eval_fails_when_a_mask_cannot_be_scored(self, tmp_path, trained, monkeypatch, capsys):
        data_dir, result = trained
        score = reports.evaluate_mask

        def failing_second_mask(model, case, mask_index):
            if case.case_id == "case_000" and mask_index == 1:
                raise ValueError("corrupt prediction")
            return score(model, case, mask_index)

        monkeypatch.setattr(reports, "evaluate_mask", failing_second_mask)
        code = main(
            [
                "--log-dir", str(tmp_path / "logs"), "--quiet", "eval", "--checkpoint", str(result.checkpoint_path),
                "--data", str(data_dir), "--report", str(tmp_path / "report"),
            ]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "EvaluationError" in err
        assert "case_000 mask 1" in err
        assert not (tmp_path / "report" / "records.csv").exists()


@pytest.mark.integration
class TestPipelineApi:
    def test_predict_case(self, tmp_path, trained):
        data_dir, result = trained
        out = predict_case(result.checkpoint_path, data_dir, "case_001", 0, tmp_path / "pred", log_dir=tmp_path / "logs")
        pred = read_volume(out["pred_path"])
        assert pred.shape == (16, 16, 16)
        assert set(pred.ravel().tolist()) <= {0, 1}
        assert out["p_acc"] == pytest.approx(float(pred.mean()))
        assert 0.0 <= out["c_er"] <= 1.0
        assert 0.0 <= out["r_er"] <= 1.0
        with pytest.raises(IndexError):
            predict_case(result.checkpoint_path, data_dir, "case_001", 5, tmp_path / "pred", log_dir=tmp_path / "logs")

    def test_evaluate_model(self, tmp_path, trained):
        data_dir, result = trained
        report = evaluate_model(
            result.checkpoint_path, data_dir, tmp_path / "report", log_dir=tmp_path / "logs", show_progress=False
        )
        assert report.overall["count"] == 4
        records = pd.read_csv(tmp_path / "report" / "records.csv")
        assert len(records) == 4
        assert not math.isnan(report.overall["dsc"])
        summary = yaml.safe_load((tmp_path / "report" / "summary.yaml").read_text())
        assert summary["records"] == 4
        assert len(list((tmp_path / "report" / "slices").glob("*.pgm"))) == 5
        with pytest.raises(ValueError):
            evaluate_model(result.checkpoint_path, data_dir, tmp_path / "r2", bins="other", log_dir=tmp_path / "logs")
