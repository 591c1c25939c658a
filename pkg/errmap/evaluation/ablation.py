"""
Ablation comparison of the full network against the variant without the CEU
and the plain u-net over the concatenated image and mask.
"""

from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd
import yaml

from ..config.settings import ABLATION_BUDGET_TOLERANCE, MODEL_VARIANTS
from ..core.logger import OperationLogger
from ..core.model import AepNetModel, plain_budget_base
from ..data.data_organizer import DatasetOrganizer
from ..training.trainer import TrainConfig, train_loop
from .reports import evaluate_cases

PathLike = Union[str, Path]

# weakest first
VARIANT_ORDER = ("plain_concat_unet", "no_ceu", "full")
TABLE_METRICS = ["dsc", "acc", "prec", "recl"]


class BudgetViolationError(ValueError):
    """Raised when a variant's parameter count strays too far from the full network's."""


def variant_config(config: TrainConfig, variant: str, seed: Optional[int] = None) -> TrainConfig:
    """Copy of ``config`` training ``variant``; the plain u-net gets the width matching the full budget."""
    if variant not in MODEL_VARIANTS:
        raise ValueError(f"Unknown variant '{variant}', expected one of {MODEL_VARIANTS}")
    model = replace(config.model, variant=variant, plain_base_channels=None, plain_gn_groups=None)
    if variant == "plain_concat_unet":
        base, groups = plain_budget_base(model)
        model = replace(model, plain_base_channels=base, plain_gn_groups=groups)
    return replace(config, model=model, seed=config.seed if seed is None else seed)


def parameter_budget(configs: Dict[str, TrainConfig], tolerance: float = ABLATION_BUDGET_TOLERANCE) -> pd.DataFrame:
    """
    Parameter counts of each variant relative to the full network.

    Raises:
        BudgetViolationError: When a variant deviates by more than ``tolerance``
    """
    counts = {name: AepNetModel.build(cfg.model, seed=0).parameter_count() for name, cfg in configs.items()}
    full = counts["full"]
    table = pd.DataFrame(
        [{"variant": name, "parameters": n, "deviation": abs(n - full) / full} for name, n in counts.items()]
    )
    over = table[table["deviation"] > tolerance]
    if len(over):
        row = over.iloc[0]
        raise BudgetViolationError(
            f"Variant {row['variant']} has {row['parameters']} parameters, "
            f"{row['deviation']:.1%} away from the full network's {full} (limit {tolerance:.0%})"
        )
    return table


def _native_records(table: pd.DataFrame) -> List[Dict]:
    return [
        {k: v.item() if hasattr(v, "item") else v for k, v in row.items()} for row in table.to_dict(orient="records")
    ]


def ordering_check(medians: pd.DataFrame) -> Dict:
    """
    Whether median DSC is non-decreasing along plain -> no_ceu -> full.

    Returns:
        dict: ``holds`` plus the DSC difference of every adjacent pair
    """
    dsc = medians.set_index("variant")["dsc"]
    steps = {}
    holds = True
    for weaker, stronger in zip(VARIANT_ORDER[:-1], VARIANT_ORDER[1:]):
        if weaker in dsc.index and stronger in dsc.index:
            effect = float(dsc[stronger] - dsc[weaker])
            steps[f"{stronger}_minus_{weaker}"] = effect
            holds = holds and effect >= 0
    return {"holds": holds, "effects": steps}


def ablation_run(
    config: TrainConfig,
    data_dir: PathLike,
    out_dir: PathLike,
    seeds: Sequence[int],
    variants: Sequence[str] = VARIANT_ORDER,
    logger: Optional[OperationLogger] = None,
    show_progress: bool = True,
) -> Dict:
    """
    Train and evaluate every variant under an identical protocol for each seed.

    Args:
        config: Base training configuration; only the variant and seed change
        data_dir: Dataset root
        out_dir: Receives one training directory per (variant, seed) plus
            ablation.csv, ablation_median.csv and ablation_summary.yaml
        seeds: Training seeds
        variants: Variants to compare; "full" is always included for the budget

    Returns:
        dict: per-run rows, per-variant medians, the budget table and the ordering check
    """
    if not seeds:
        raise ValueError("ablation_run needs at least one seed")
    logger = logger or OperationLogger()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    variants = list(variants)
    configs = {v: variant_config(config, v) for v in dict.fromkeys(["full"] + variants)}
    budget = parameter_budget(configs)

    organizer = DatasetOrganizer(data_dir, logger=logger)
    manifest = organizer.load_manifest()
    test_cases = organizer.load_cases(
        organizer.split(manifest, config.fold, "test"), manifest["metadata"]["num_classes"]
    )

    rows: List[Dict] = []
    for variant in variants:
        for seed in seeds:
            run_config = variant_config(config, variant, seed)
            run_dir = out_dir / f"{variant}_seed{seed}"
            result = train_loop(run_config, data_dir, run_dir, logger=logger, show_progress=show_progress)
            records = evaluate_cases(result.model, test_cases, logger=logger, show_progress=show_progress)
            row = {"variant": variant, "seed": seed, "parameters": result.model.parameter_count()}
            row.update({m: float(records[m].astype(float).mean()) for m in TABLE_METRICS})
            rows.append(row)
            logger.log_operation(
                operation_type="ABLATION_RUN_COMPLETE",
                message=f"{variant} seed {seed}: dsc {row['dsc']:.4f}",
            )

    runs = pd.DataFrame(rows)
    medians = runs.groupby("variant", sort=False)[TABLE_METRICS].median().reset_index()
    ordering = ordering_check(medians)
    if not ordering["holds"]:
        logger.log_operation(
            operation_type="ABLATION_ORDERING_VIOLATED", success=False, message=str(ordering["effects"])
        )

    runs.to_csv(out_dir / "ablation.csv", index=False)
    medians.to_csv(out_dir / "ablation_median.csv", index=False)
    with open(out_dir / "ablation_summary.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(
            {
                "seeds": [int(s) for s in seeds],
                "budget": _native_records(budget),
                "median": _native_records(medians),
                "ordering": ordering,
            },
            f,
            sort_keys=False,
        )
    return {"runs": runs, "median": medians, "budget": budget, "ordering": ordering}
