import numpy as np
import pandas as pd
import pytest
import yaml

from errmap.config.settings import IBSR_BIN_EDGES, RECORD_COLUMNS
from errmap.core.model import AepNetModel
from errmap.data.data_organizer import DatasetOrganizer
from errmap.evaluation.reports import (
    binned_report,
    EvaluationError,
    correlation_summary,
    evaluate_cases,
    export,
    export_slices,
    report_table,
    write_pgm,
)


@pytest.fixture
def records():
    seg_dsc = [0.4, 0.5, 0.55, 0.6, 0.93, 0.97]
    rows = []
    for i, value in enumerate(seg_dsc):
        rows.append(
            {
                "case_id": f"case_{i:03d}",
                "mask_index": 0,
                "severity": 0.5,
                "seg_dsc": value,
                "seg_acc": 0.5 + value / 2,
                "dsc": 0.6,
                "acc": 0.9,
                "prec": 0.7,
                "recl": 0.5,
                "p_acc": 0.45 + value / 2,
                "r_er": 0.1,
                "c_er": 0.12,
            }
        )
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


@pytest.mark.unit
class TestBinnedReport:
    def test_half_open_bins_with_underflow_and_overflow(self, records):
        report = binned_report(records, IBSR_BIN_EDGES)
        counts = dict(zip(report.bins["bin"], report.bins["count"]))
        assert list(report.bins["bin"])[0] == "underflow"
        assert list(report.bins["bin"])[-1] == "overflow"
        assert counts["underflow"] == 2
        assert counts["(0.5, 0.6]"] == 2
        assert counts["(0.6, 0.7]"] == 0
        assert counts["(0.9, 0.95]"] == 1
        assert counts["overflow"] == 1
        assert sum(counts.values()) == len(records)

    def test_bin_means_and_overall(self, records):
        report = binned_report(records, IBSR_BIN_EDGES)
        row = report.bins.set_index("bin").loc["(0.5, 0.6]"]
        assert row["seg_dsc"] == pytest.approx(0.575)
        assert np.isnan(report.bins.set_index("bin").loc["(0.6, 0.7]", "dsc"])
        assert report.overall["count"] == 6
        assert report.overall["dsc"] == pytest.approx(0.6)
        table = report_table(report)
        assert table.iloc[-1]["bin"] == "overall"

    def test_correlations(self, records):
        summary = correlation_summary(records)
        assert summary["pcc_a"] == pytest.approx(1.0)
        assert summary["pcc_d"] == pytest.approx(1.0)
        assert summary["mae"] == pytest.approx(0.05)
        assert summary["cer_mae"] == pytest.approx(0.02)

    def test_undefined_correlation_is_nan(self, records):
        records["p_acc"] = 0.9
        summary = correlation_summary(records)
        assert np.isnan(summary["pcc_a"])

    def test_edges_must_increase(self, records):
        with pytest.raises(ValueError):
            binned_report(records, [0.5, 0.5, 0.6])

    def test_empty_records(self):
        report = binned_report(pd.DataFrame(columns=RECORD_COLUMNS))
        assert report.overall["count"] == 0
        assert report.correlation == {}
        assert report.bins["count"].sum() == 0


@pytest.mark.unit
class TestExport:
    def test_writes_every_file(self, tmp_path, records):
        paths = export(binned_report(records), tmp_path / "report")
        for role in ("records", "binned", "summary", "scatter_acc_pacc", "scatter_dsc_pacc", "scatter_dsc_acc"):
            assert paths[role].exists()
        written = pd.read_csv(paths["records"])
        assert list(written.columns) == RECORD_COLUMNS
        summary = yaml.safe_load(paths["summary"].read_text())
        assert summary["records"] == 6
        assert summary["seg_dsc_weighting"].startswith("unweighted")
        assert summary["correlation"]["pcc_a"] == pytest.approx(1.0)
        scatter = pd.read_csv(paths["scatter_dsc_pacc"])
        assert list(scatter.columns) == ["case_id", "mask_index", "seg_dsc", "p_acc"]

    def test_write_pgm(self, tmp_path):
        path = write_pgm(tmp_path / "slice.pgm", np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]))
        data = path.read_bytes()
        assert data.startswith(b"P5\n3 2\n255\n")
        pixels = np.frombuffer(data[len(b"P5\n3 2\n255\n") :], dtype=np.uint8)
        assert pixels[0] == 0 and pixels[-1] == 255
        with pytest.raises(ValueError):
            write_pgm(tmp_path / "bad.pgm", np.zeros((2, 2, 2)))


@pytest.mark.integration
class TestEvaluateCases:
    def test_one_record_per_mask(self, tmp_path, tiny_dataset, tiny_model_config, logger):
        data_dir, manifest = tiny_dataset
        organizer = DatasetOrganizer(data_dir, logger=logger)
        cases = organizer.load_cases(organizer.split(manifest, 0, "test"), 3)
        model = AepNetModel.build(tiny_model_config, seed=0)
        records = evaluate_cases(model, cases, logger=logger, show_progress=False)
        assert len(records) == 4
        assert list(records.columns) == RECORD_COLUMNS
        assert records["p_acc"].between(0.0, 1.0).all()
        assert records["c_er"].between(0.0, 1.0).all()

        paths = export_slices(cases[0], 1, np.ones(cases[0].dims, dtype=np.uint8), tmp_path / "slices")
        assert len(paths) == 5
        assert all(p.exists() for p in paths)

    def test_failures_raise_after_every_mask_is_tried(self, tiny_dataset, tiny_model_config, logger):
        data_dir, manifest = tiny_dataset
        organizer = DatasetOrganizer(data_dir, logger=logger)
        cases = organizer.load_cases(organizer.split(manifest, 0, "test"), 3)
        model = AepNetModel.build(tiny_model_config, seed=0)
        cases[0].num_classes = 2
        with pytest.raises(EvaluationError) as info:
            evaluate_cases(model, cases, logger=logger, show_progress=False)
        assert isinstance(info.value, RuntimeError)
        assert len(info.value.failures) == 2
        assert all(f.startswith(cases[0].case_id) for f in info.value.failures)
        assert len(info.value.records) == 2
        assert set(info.value.records["case_id"]) == {cases[1].case_id}
        logs = logger.get_logs()
        assert (logs["operation_type"] == "EVAL_CASE_ERROR").sum() == 2
        complete = logs[logs["operation_type"] == "EVAL_COMPLETE"].iloc[-1]
        assert not complete["success"]
        assert "2 of 4" in complete["message"]
