import pytest
import yaml

from errmap.config.settings import SEVERITY_JITTER, SEVERITY_LEVELS
from errmap.data.data_organizer import (
    DatasetOrganizer,
    case_seeds,
    manifest_records,
    seg_dsc_histogram,
)
from errmap.data.volume_io import VolumeFormatError


@pytest.mark.unit
class TestCaseSeeds:
    def test_streams_are_distinct_and_stable(self):
        phantom, masks, severities = case_seeds(0, 4, 3)
        assert phantom == [0, 4]
        assert masks == [[0, 4, 2, 0], [0, 4, 2, 1], [0, 4, 2, 2]]
        assert severities == case_seeds(0, 4, 3)[2]
        assert all(0.0 <= s <= 1.0 for s in severities)
        assert abs(severities[0] - SEVERITY_LEVELS[0]) <= SEVERITY_JITTER
        assert abs(severities[2] - SEVERITY_LEVELS[2]) <= SEVERITY_JITTER


@pytest.mark.unit
class TestHistogram:
    def test_counts_cover_every_value(self):
        hist = seg_dsc_histogram([0.0, 0.05, 0.1, 0.55, 1.0, 1.0])
        assert hist["count"].sum() == 6
        assert hist.loc[0, "bin"] == "(0, 0.1]"
        assert hist.loc[0, "count"] == 3
        assert hist.loc[9, "count"] == 2


@pytest.mark.integration
class TestDatasetOrganizer:
    def test_manifest_metadata(self, tiny_dataset):
        data_dir, manifest = tiny_dataset
        meta = manifest["metadata"]
        assert meta["dims"] == [16, 16, 16]
        assert meta["num_classes"] == 3
        assert meta["count"] == 6
        assert [c["fold"] for c in manifest["cases"]] == [0, 1, 2, 0, 1, 2]
        assert (data_dir / "manifest.yaml").exists()
        assert (data_dir / "cases" / "case_000" / "mask_1.rvol").exists()

    def test_load_manifest_round_trip(self, tiny_dataset, logger):
        data_dir, manifest = tiny_dataset
        loaded = DatasetOrganizer(data_dir, logger=logger).load_manifest()
        assert loaded == manifest

    def test_splits_partition_the_cases(self, tiny_dataset, logger):
        data_dir, manifest = tiny_dataset
        organizer = DatasetOrganizer(data_dir, logger=logger)
        for fold in range(3):
            test = {c["case_id"] for c in organizer.split(manifest, fold, "test")}
            train = {c["case_id"] for c in organizer.split(manifest, fold, "train")}
            assert len(test) == 2 and len(train) == 4
            assert not test & train
        with pytest.raises(ValueError):
            organizer.split(manifest, 3, "test")
        with pytest.raises(ValueError):
            organizer.split(manifest, 0, "holdout")

    def test_stored_targets_match_recomputation(self, tiny_dataset, logger):
        data_dir, manifest = tiny_dataset
        organizer = DatasetOrganizer(data_dir, logger=logger)
        assert all(organizer.verify_case(entry, 3) for entry in manifest["cases"])

    def test_load_case(self, tiny_dataset, logger):
        data_dir, manifest = tiny_dataset
        organizer = DatasetOrganizer(data_dir, logger=logger)
        case = organizer.load_case(organizer.find_case(manifest, "case_002"), 3)
        assert case.dims == (16, 16, 16)
        assert len(case.masks) == 2
        assert case.image.min() == pytest.approx(0.0) and case.image.max() == pytest.approx(1.0)
        assert case.masks[0].seed == [3, 2, 2, 0]
        with pytest.raises(KeyError):
            organizer.find_case(manifest, "case_999")

    def test_records(self, tiny_dataset):
        _, manifest = tiny_dataset
        records = manifest_records(manifest)
        assert len(records) == 12
        assert records["seg_dsc"].between(0.0, 1.0).all()

    def test_generation_is_deterministic(self, tmp_path, logger):
        first = DatasetOrganizer(tmp_path / "a", logger=logger).generate(2, (16, 16, 16), 3, 1, seed=9, show_progress=False)
        second = DatasetOrganizer(tmp_path / "b", logger=logger, max_workers=2).generate(
            2, (16, 16, 16), 3, 1, seed=9, show_progress=False
        )
        assert first == second
        a = (tmp_path / "a" / "cases" / "case_001" / "mask_0.raw").read_bytes()
        b = (tmp_path / "b" / "cases" / "case_001" / "mask_0.raw").read_bytes()
        assert a == b
        logs = logger.get_logs()
        assert (logs["operation_type"] == "GEN_DATA_CASE_SUCCESS").sum() == 4

    def test_missing_and_malformed_manifest(self, tmp_path, logger):
        organizer = DatasetOrganizer(tmp_path, logger=logger)
        with pytest.raises(FileNotFoundError):
            organizer.load_manifest()
        (tmp_path / "manifest.yaml").write_text(yaml.safe_dump({"version": 99}))
        with pytest.raises(VolumeFormatError):
            organizer.load_manifest()

    def test_missing_volume_detected(self, tmp_path, logger):
        organizer = DatasetOrganizer(tmp_path, logger=logger)
        organizer.generate(1, (16, 16, 16), 2, 1, seed=0, show_progress=False)
        (tmp_path / "cases" / "case_000" / "error_0.rvol").unlink()
        with pytest.raises(FileNotFoundError):
            organizer.load_manifest()

    def test_invalid_counts(self, tmp_path, logger):
        with pytest.raises(ValueError):
            DatasetOrganizer(tmp_path, logger=logger).generate(0, show_progress=False)
