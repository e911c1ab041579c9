"""One-factor-at-a-time ablation grid.

Each supplied axis contributes one cell per value, with every other factor
left at the base configuration. Cells that only differ in fine-tuning
settings share a single pre-training run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .checkpoint import Checkpoint
from .evaluation import DEFAULT_HIT_KS
from .model import FeatureSubset, ModelConfig
from .training import (
    ExperimentData,
    ExperimentReport,
    FinetuneConfig,
    Method,
    PretrainConfig,
    fan_out,
    pretrain,
    run_experiment,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationCell:
    """One grid cell: the varied factor, its value, and the full resolved configs."""

    axis: str
    value: str
    model_config: ModelConfig
    pretrain_cfg: PretrainConfig
    finetune_cfg: FinetuneConfig

    @property
    def label(self) -> str:
        return f"dora[{self.axis}={self.value}]"


def build_ablation_grid(
    model_config: ModelConfig,
    pretrain_cfg: PretrainConfig,
    finetune_cfg: FinetuneConfig,
    *,
    pretext_targets: Sequence[str] = (),
    feature_subsets: Sequence[FeatureSubset] = (),
    freeze_encoder: bool = False,
    alphas: Sequence[float] = (),
    d_zs: Sequence[int] = (),
    corpus_filters: Sequence[Optional[str]] = (),
) -> list[AblationCell]:
    """Expand the requested axes into cells.

    ``freeze_encoder=True`` adds the two-cell fine-tune-encoder axis (off,
    on). With no axis at all the grid is the single base cell.
    """
    cells: list[AblationCell] = []

    def add(axis: str, value: str, **changes: object) -> None:
        m = replace(model_config, **changes.pop("model", {}))  # type: ignore[arg-type]
        p = replace(pretrain_cfg, **changes.pop("pretrain", {}))  # type: ignore[arg-type]
        f = replace(finetune_cfg, **changes.pop("finetune", {}))  # type: ignore[arg-type]
        cells.append(AblationCell(axis, value, m, p, f))

    for target in pretext_targets:
        add("pretext_target", target, model={"pretext_target": target})
    for subset in feature_subsets:
        subset = FeatureSubset(subset)
        add("feature_subset", subset.value, model={"feature_subset": subset})
    if freeze_encoder:
        add("freeze_encoder", "off", finetune={"freeze_encoder": False})
        add("freeze_encoder", "on", finetune={"freeze_encoder": True})
    for alpha in alphas:
        loss = replace(pretrain_cfg.loss, alpha=float(alpha))
        add("alpha", f"{float(alpha):g}", pretrain={"loss": loss})
    for d_z in d_zs:
        add("d_z", str(int(d_z)), model={"d_z": int(d_z)})
    for corpus in corpus_filters:
        add("corpus_filter", corpus or "all", pretrain={"corpus_filter": corpus})
    if not cells:
        add("base", "default")
    return cells


def run_ablation(
    cells: Sequence[AblationCell],
    data: ExperimentData,
    *,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    k_shots: Optional[int] = None,
    ks: Sequence[float] = DEFAULT_HIT_KS,
    workers: int = 1,
) -> list[tuple[AblationCell, ExperimentReport]]:
    """Pre-train each distinct (model, pretrain) pair once, then evaluate every cell.

    Both phases fan out over ``workers`` threads; the output follows the
    order of ``cells``.
    """
    if data.unlabeled is None:
        raise ValueError("ablation runs need an unlabeled corpus")
    unlabeled = data.unlabeled
    keys: list[tuple[ModelConfig, PretrainConfig]] = []
    for cell in cells:
        key = (cell.model_config, cell.pretrain_cfg)
        if key not in keys:
            keys.append(key)
    logger.info("ablation: %d cell(s), %d pre-training run(s)", len(cells), len(keys))
    checkpoints: list[Checkpoint] = fan_out(
        lambda key: pretrain(unlabeled, key[0], key[1]), keys, workers
    )
    cache = dict(zip(keys, checkpoints))

    def evaluate(cell: AblationCell) -> tuple[AblationCell, ExperimentReport]:
        report = run_experiment(
            data,
            Method.DORA,
            model_config=cell.model_config,
            finetune_cfg=cell.finetune_cfg,
            seeds=seeds,
            k_shots=k_shots,
            checkpoint=cache[(cell.model_config, cell.pretrain_cfg)],
            ks=ks,
        )
        report.label = cell.label
        return cell, report

    return fan_out(evaluate, list(cells), workers)
