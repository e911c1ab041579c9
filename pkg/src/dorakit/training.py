"""Two-stage training and the few-shot experiment harness.

Stage 1, :func:`pretrain`, fits the embedders and encoder on the unlabeled
corpus with the located-town pretext task plus the supervised contrastive
term. Stage 2, :func:`finetune`, attaches a fresh price head and minimizes MSE
on a k-shot support set. :func:`run_experiment` repeats sample, fine-tune and
evaluate over a list of seeds and aggregates the metrics.

Seeds
-----
Every random draw comes from a ``numpy.random.Generator`` derived from an
integer seed through ``SeedSequence.spawn``, so a (seed, data, config) triple
always gives bit-identical checkpoints, support sets and reports.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np
from numpy.typing import NDArray
from sklearn.metrics import f1_score

from .checkpoint import Checkpoint
from .errors import DataError, NumericalError
from .evaluation import (
    DEFAULT_HIT_KS,
    MetricSet,
    compute_metrics,
    historical_average,
    linear_regression,
    metrics_by_group,
    summarize,
)
from .log import VERBOSE
from .losses import PretextLossConfig, mse_loss, pretrain_loss, supcon_loss
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    embed,
    encode,
    forward,
    init_params,
    predict_price,
    predict_town,
    pretext_labels,
    reset_price_head,
)
from .nn import AdamWState, adamw_step
from .schema import (
    Dataset,
    Normalizer,
    Role,
    apply_normalizer,
    fit_normalizer,
    fit_target_scaler,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Contrastive weight used for the DNN+CL baseline when none is configured.
DEFAULT_CL_ALPHA = 0.7


@dataclass(frozen=True)
class PretrainConfig:
    """Stage-1 hyperparameters.

    Parameters
    ----------
    epochs : int
        Passes over the unlabeled corpus.
    batch_size : int
        Rows per step; at least 2 so the contrastive term can form pairs.
    lr, weight_decay : float
        AdamW settings, constant for the whole run.
    loss : PretextLossConfig
        ``alpha`` and ``tau`` of the combined objective.
    seed : int
        Controls initialization, the held-out split and every shuffle.
    corpus_filter : str, optional
        Keep only unlabeled records of this property type.
    holdout_fraction : float
        Tail of the seeded shuffle kept aside for pretext F1.
    """

    epochs: int = 150
    batch_size: int = 512
    lr: float = 0.005
    weight_decay: float = 0.01
    loss: PretextLossConfig = PretextLossConfig()
    seed: int = 0
    corpus_filter: Optional[str] = None
    holdout_fraction: float = 0.05

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the contrastive term needs pairs)")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be > 0 and weight_decay >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class FinetuneConfig:
    """Stage-2 hyperparameters.

    ``cl_alpha`` below 1 adds ``(1 - cl_alpha) * SupCon(Z, town)`` to the
    objective, which is how the DNN+CL baseline is trained.
    """

    epochs: int = 200
    lr: float = 0.005
    weight_decay: float = 0.01
    seed: int = 0
    freeze_encoder: bool = False
    k_shots: int = 5
    cl_alpha: float = 1.0
    tau: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.k_shots < 1:
            raise ValueError("k_shots must be >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be > 0 and weight_decay >= 0")
        if not 0.0 <= self.cl_alpha <= 1.0:
            raise ValueError("cl_alpha must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


def _rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# Support sampling
# ---------------------------------------------------------------------------


def sample_support_set(train: Dataset, k: int, seed: int) -> Dataset:
    """Draw ``min(k, available)`` records per city, uniformly without replacement.

    Cities with no training records contribute nothing. A city with fewer
    than ``k`` records triggers a :class:`RuntimeWarning`.

    Raises
    ------
    DataError
        ``train`` is empty.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(train) == 0:
        raise DataError("cannot sample a support set from an empty training set")
    rng = np.random.default_rng(seed)
    city = train.batch.city
    chosen: list[NDArray[np.int64]] = []
    for c in range(train.schema.n_cities):
        pool = np.flatnonzero(city == c)
        if pool.size == 0:
            logger.info("city %d has no training records; it contributes no shots", c)
            continue
        if pool.size < k:
            warnings.warn(
                f"city {c} has only {pool.size} training record(s) for {k}-shot sampling",
                RuntimeWarning,
                stacklevel=2,
            )
        chosen.append(rng.choice(pool, size=min(k, pool.size), replace=False))
    indices = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    return train.subset(indices, role=Role.SUPPORT)


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------


def pretext_f1(params: ModelParams, data: Dataset) -> tuple[float, float]:
    """Macro and micro F1 of the pretext classifier on normalized ``data``."""
    if len(data) == 0:
        return float("nan"), float("nan")
    probs = predict_town(params, encode(params, embed(params, data.batch)))
    y_true = pretext_labels(params, data.batch)
    y_pred = probs.argmax(axis=1)
    macro = f1_score(y_true, y_pred, average="macro", zero_division=0)
    micro = f1_score(y_true, y_pred, average="micro", zero_division=0)
    return float(macro), float(micro)


def _check_finite(loss: float, where: dict[str, object]) -> None:
    if not np.isfinite(loss):
        raise NumericalError("non-finite training loss", where)


def pretrain(
    unlabeled: Dataset,
    model_config: ModelConfig,
    cfg: PretrainConfig = PretrainConfig(),
) -> Checkpoint:
    """Stage 1: pretext classification plus contrastive learning on ``unlabeled``.

    The numerical normalizer is fitted on the (filtered) corpus and stored in
    the returned checkpoint. Each epoch logs one tab-separated line
    ``epoch, loss, ce, cl, macro_f1, micro_f1`` and appends the same values to
    ``Checkpoint.history``; the F1 scores are measured on the held-out tail.

    Raises
    ------
    DataError
        The filtered corpus is too small to train on.
    NumericalError
        A batch loss became NaN or infinite (diagnostics name epoch, batch
        and loss components).
    """
    data = unlabeled.filter_property_type(cfg.corpus_filter)
    if len(data) < 2:
        raise DataError(
            f"pre-training needs at least 2 records, got {len(data)}"
            + (f" of type {cfg.corpus_filter!r}" if cfg.corpus_filter else "")
        )
    normalizer = fit_normalizer(data)
    data = apply_normalizer(normalizer, data)

    init_rng, split_rng, shuffle_rng = _rngs(cfg.seed, 3)
    order = split_rng.permutation(len(data))
    n_hold = int(round(cfg.holdout_fraction * len(data)))
    n_hold = min(n_hold, len(data) - 2)
    train_idx = order[: len(data) - n_hold]
    holdout = data.subset(order[len(data) - n_hold :])

    params = init_params(model_config, data.schema, init_rng)
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    history: list[dict[str, float]] = []
    logger.info(
        "pre-training on %d record(s), %d held out, %d classes",
        len(train_idx), len(holdout), params.n_classes,
    )
    logger.info("epoch\tloss\tce\tcl\tmacro_f1\tmicro_f1")

    for epoch in range(1, cfg.epochs + 1):
        perm = train_idx[shuffle_rng.permutation(len(train_idx))]
        totals = np.zeros(3)
        n_batches = 0
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            batch = data.batch.take(perm[start : start + cfg.batch_size])
            labels = pretext_labels(params, batch)
            Z, probs, cache = forward(params, batch, "pretext")
            loss = pretrain_loss(probs, Z, labels, cfg.loss)
            _check_finite(
                loss.total, {"epoch": epoch, "batch": b, "ce": loss.ce, "cl": loss.cl}
            )
            grads = backward(params, cache, loss.grad_logits, loss.grad_z)
            adamw_step(params.parameters(), grads, opt)
            totals += (loss.total, loss.ce, loss.cl)
            n_batches += 1
            logger.log(VERBOSE, "epoch %d batch %d loss %.6f", epoch, b, loss.total)
        mean_loss, mean_ce, mean_cl = totals / n_batches
        macro, micro = pretext_f1(params, holdout)
        history.append(
            {
                "epoch": float(epoch),
                "loss": float(mean_loss),
                "ce": float(mean_ce),
                "cl": float(mean_cl),
                "macro_f1": macro,
                "micro_f1": micro,
            }
        )
        logger.info(
            "%d\t%.6f\t%.6f\t%.6f\t%.4f\t%.4f", epoch, mean_loss, mean_ce, mean_cl, macro, micro
        )
    return Checkpoint(params=params, schema=data.schema, normalizer=normalizer, history=history)


def scratch_checkpoint(data: Dataset, model_config: ModelConfig, seed: int = 0) -> Checkpoint:
    """Randomly initialized model; the starting point of the DNN baselines.

    The normalizer is fitted on ``data`` (typically the unlabeled corpus).
    """
    normalizer = fit_normalizer(data)
    params = init_params(model_config, data.schema, _rngs(seed, 1)[0])
    return Checkpoint(params=params, schema=data.schema, normalizer=normalizer)


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FittedModel:
    """A fine-tuned model bundled with its input normalizer and target scaler."""

    params: ModelParams
    normalizer: Optional[Normalizer]
    target_scaler: Normalizer
    history: list[dict[str, float]] = field(default_factory=list)

    def predict(self, data: Dataset) -> NDArray[np.float64]:
        """Prices in original units for every record of ``data``."""
        if not data.normalized and self.normalizer is not None:
            data = apply_normalizer(self.normalizer, data)
        z = predict_price(self.params, encode(self.params, embed(self.params, data.batch)))
        return self.target_scaler.inverse_transform(z.reshape(-1, 1))[:, 0]


def finetune(
    ckpt: Checkpoint, support: Dataset, cfg: FinetuneConfig = FinetuneConfig()
) -> FittedModel:
    """Stage 2: fresh price head, full-batch AdamW on standardized support prices.

    The checkpoint is never modified. With ``cfg.freeze_encoder`` only the
    price head is updated and every other tensor stays bit-identical.

    Raises
    ------
    SchemaError
        ``support`` does not share the checkpoint's feature schema.
    NumericalError
        The loss became non-finite.
    """
    ckpt.check_schema(support.schema)
    if len(support) == 0:
        raise DataError("cannot fine-tune on an empty support set")
    scaler = fit_target_scaler(support)
    data = support
    if not data.normalized and ckpt.normalizer is not None:
        data = apply_normalizer(ckpt.normalizer, data)
    y = scaler.transform(support.prices.reshape(-1, 1))[:, 0]
    towns = np.asarray(data.batch.town)

    (head_rng,) = _rngs(cfg.seed, 1)
    params = ckpt.params.clone()
    reset_price_head(params, head_rng)
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    a = cfg.cl_alpha
    cl_cfg = PretextLossConfig(alpha=0.0, tau=cfg.tau)
    history: list[dict[str, float]] = []
    logger.debug("epoch\tmse\tcl")
    for epoch in range(1, cfg.epochs + 1):
        Z, pred, cache = forward(params, data.batch, "price")
        mse, g_pred = mse_loss(pred, y)
        cl, g_z = 0.0, None
        if a < 1.0 and not cfg.freeze_encoder:
            cl, g_z = supcon_loss(Z, towns, cl_cfg)
            g_z = (1.0 - a) * g_z
        total = a * mse + (1.0 - a) * cl
        _check_finite(total, {"epoch": epoch, "mse": mse, "cl": cl})
        grads = backward(params, cache, a * g_pred, g_z, head_only=cfg.freeze_encoder)
        adamw_step(params.parameters(), grads, opt)
        history.append({"epoch": float(epoch), "mse": mse, "cl": cl})
        logger.debug("%d\t%.6f\t%.6f", epoch, mse, cl)
    return FittedModel(
        params=params, normalizer=ckpt.normalizer, target_scaler=scaler, history=history
    )


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


class Method(str, Enum):
    """Appraisal methods the harness can run."""

    DORA = "dora"
    DNN = "dnn"
    DNN_CL = "dnn-cl"
    HA = "ha"
    LR = "lr"

    @property
    def neural(self) -> bool:
        return self in (Method.DORA, Method.DNN, Method.DNN_CL)


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """Datasets of one benchmark, all in raw (un-normalized) units.

    ``validation`` is only ever scored, never trained on.
    """

    unlabeled: Optional[Dataset]
    train: Dataset
    test: Dataset
    validation: Optional[Dataset] = None
    name: str = "test"

    def feature_source(self) -> Dataset:
        """Dataset the input normalizer is fitted on when nothing is pre-trained."""
        if self.unlabeled is not None and len(self.unlabeled) > 0:
            return self.unlabeled
        return self.train


@dataclass(eq=False)
class SeedResult:
    seed: int
    metrics: MetricSet
    validation: Optional[MetricSet] = None
    support_ids: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    predictions: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))


@dataclass(eq=False)
class ExperimentReport:
    """Per-seed results of one (method, shots) setting."""

    method: Method
    dataset: str
    shots: int
    results: list[SeedResult]
    truth: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    cities: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    label: str = ""

    def __post_init__(self) -> None:
        if not self.label:
            self.label = self.method.value

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """``metric -> (mean, population std)`` across seeds."""
        rows = [r.metrics.as_dict() for r in self.results]
        keys = rows[0].keys() if rows else ()
        return {k: summarize([row[k] for row in rows]) for k in keys}

    def pooled_by_city(self, ks: Sequence[float] = DEFAULT_HIT_KS) -> dict[int, MetricSet]:
        """Metrics per city over the test predictions of every seed."""
        n = len(self.results)
        if n == 0:
            return {}
        preds = np.concatenate([r.predictions for r in self.results])
        return metrics_by_group(preds, np.tile(self.truth, n), np.tile(self.cities, n), ks)


def fan_out(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Map ``fn`` over ``items``; results always come back in input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_experiment(
    data: ExperimentData,
    method: Method = Method.DORA,
    *,
    model_config: ModelConfig = ModelConfig(),
    pretrain_cfg: PretrainConfig = PretrainConfig(),
    finetune_cfg: FinetuneConfig = FinetuneConfig(),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    k_shots: Optional[int] = None,
    checkpoint: Optional[Checkpoint] = None,
    ks: Sequence[float] = DEFAULT_HIT_KS,
    workers: int = 1,
) -> ExperimentReport:
    """Sample a support set, fit, and score on ``data.test`` for every seed.

    For :attr:`Method.DORA` the model is pre-trained once (unless
    ``checkpoint`` is given) and shared read-only by all seeds. The DNN
    baselines start from a fresh initialization per seed. ``workers > 1``
    runs seeds in a thread pool; results are ordered as ``seeds``.
    """
    method = Method(method)
    k = finetune_cfg.k_shots if k_shots is None else k_shots
    if np.isnan(data.test.prices).any():
        raise DataError("every test record needs a price")
    if method is Method.DNN_CL and finetune_cfg.cl_alpha >= 1.0:
        finetune_cfg = replace(finetune_cfg, cl_alpha=DEFAULT_CL_ALPHA)

    if method is Method.DORA and checkpoint is None:
        if data.unlabeled is None:
            raise DataError("pre-training needs an unlabeled dataset")
        checkpoint = pretrain(data.unlabeled, model_config, pretrain_cfg)
    normalizer = fit_normalizer(data.feature_source()) if method is Method.LR else None

    def one_seed(seed: int) -> SeedResult:
        support = sample_support_set(data.train, k, seed)
        fitted: Optional[FittedModel] = None

        def score(target: Dataset) -> NDArray[np.float64]:
            if method is Method.HA:
                return historical_average(support, target.batch.city)
            if normalizer is not None:
                return linear_regression(
                    apply_normalizer(normalizer, support), apply_normalizer(normalizer, target)
                )
            assert fitted is not None
            return fitted.predict(target)

        if method.neural:
            ckpt = checkpoint
            if method is not Method.DORA:
                ckpt = scratch_checkpoint(data.feature_source(), model_config, seed)
            assert ckpt is not None
            fitted = finetune(ckpt, support, replace(finetune_cfg, seed=seed, k_shots=k))
        pred = score(data.test)
        metrics = compute_metrics(pred, data.test.prices, ks)
        val = None
        if data.validation is not None and len(data.validation) > 0:
            val = compute_metrics(score(data.validation), data.validation.prices, ks)
        logger.info(
            "%s k=%d seed=%d: MAPE %.4f MAE %.4f", method.value, k, seed, metrics.mape, metrics.mae
        )
        return SeedResult(
            seed=seed,
            metrics=metrics,
            validation=val,
            support_ids=np.asarray(support.batch.record_id).copy(),
            predictions=pred,
        )

    results = fan_out(one_seed, list(seeds), workers)
    return ExperimentReport(
        method=method,
        dataset=data.name,
        shots=k,
        results=results,
        truth=np.asarray(data.test.prices).copy(),
        cities=np.asarray(data.test.batch.city).copy(),
    )
