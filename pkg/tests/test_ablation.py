import pandas as pd
import pytest
import yaml

from errmap.evaluation.ablation import (
    BudgetViolationError,
    ablation_run,
    ordering_check,
    parameter_budget,
    variant_config,
)
from errmap.core.model import AepNetConfig, AepNetModel
from errmap.training.trainer import TrainConfig


@pytest.mark.unit
class TestVariants:
    def test_plain_variant_gets_matched_width(self):
        config = variant_config(TrainConfig(), "plain_concat_unet", seed=4)
        assert config.model.variant == "plain_concat_unet"
        assert config.model.plain_base_channels == 13
        assert config.seed == 4

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            variant_config(TrainConfig(), "bigger")

    def test_budget_table(self):
        base = TrainConfig()
        configs = {v: variant_config(base, v) for v in ("full", "no_ceu", "plain_concat_unet")}
        table = parameter_budget(configs).set_index("variant")
        assert table.loc["full", "parameters"] == 229372
        assert table.loc["no_ceu", "deviation"] == pytest.approx(21409 / 229372)
        assert table.loc["plain_concat_unet", "deviation"] < 0.02

    def test_budget_violation(self):
        base = TrainConfig()
        configs = {v: variant_config(base, v) for v in ("full", "no_ceu")}
        with pytest.raises(BudgetViolationError):
            parameter_budget(configs, tolerance=0.05)


@pytest.mark.unit
class TestOrderingCheck:
    def test_holds(self):
        medians = pd.DataFrame({"variant": ["plain_concat_unet", "no_ceu", "full"], "dsc": [0.5, 0.6, 0.65]})
        result = ordering_check(medians)
        assert result["holds"]
        assert result["effects"]["full_minus_no_ceu"] == pytest.approx(0.05)

    def test_violated(self):
        medians = pd.DataFrame({"variant": ["plain_concat_unet", "no_ceu", "full"], "dsc": [0.5, 0.7, 0.65]})
        assert not ordering_check(medians)["holds"]


def small_budget_config():
    """Depth-2 network whose ablation variants stay inside the parameter budget."""
    model = AepNetConfig(num_classes=3, depth=2, base_channels=6, gn_groups=2, ceu_channels=4, ceu_hidden=8)
    return TrainConfig(model=model, max_iter=1, crop_dims=(8, 8, 8), checkpoint_every=1, seed=0)


@pytest.mark.integration
class TestAblationRun:
    def test_budget_of_small_network(self):
        assert AepNetModel.build(small_budget_config().model, 0).parameter_count() == 28264
        assert variant_config(small_budget_config(), "plain_concat_unet").model.plain_base_channels == 10

    def test_every_variant_and_seed(self, tmp_path, tiny_dataset, logger):
        data_dir, _ = tiny_dataset
        result = ablation_run(small_budget_config(), data_dir, tmp_path / "ablation", seeds=[0, 1], logger=logger, show_progress=False)
        runs = result["runs"]
        assert len(runs) == 6
        assert set(runs["variant"]) == {"full", "no_ceu", "plain_concat_unet"}
        assert list(result["median"]["variant"]) == ["plain_concat_unet", "no_ceu", "full"]
        assert runs["dsc"].between(0.0, 1.0).all()
        summary = yaml.safe_load((tmp_path / "ablation" / "ablation_summary.yaml").read_text())
        assert summary["seeds"] == [0, 1]
        assert {"holds", "effects"} <= set(summary["ordering"])
        assert (tmp_path / "ablation" / "full_seed1" / "final.ckpt").exists()

    def test_needs_a_seed(self, tmp_path, tiny_dataset, tiny_train_config, logger):
        data_dir, _ = tiny_dataset
        with pytest.raises(ValueError):
            ablation_run(tiny_train_config, data_dir, tmp_path, seeds=[], logger=logger)
