"""Appraisal metrics, the non-neural baselines, and report formatting.

All functions here work on de-normalized prices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from sklearn.linear_model import Ridge
from sklearn.preprocessing import OneHotEncoder

from .errors import DataError, ValidationError
from .schema import Dataset, fit_target_scaler

if TYPE_CHECKING:
    from .training import ExperimentReport

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

DEFAULT_HIT_KS: tuple[float, ...] = (10.0,)
RIDGE_LAMBDA = 1e-3


@dataclass(frozen=True)
class MetricSet:
    """MAPE in percent, MAE in price units, and hit rates keyed by tolerance percent."""

    mape: float
    mae: float
    hit_rate: Mapping[float, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {"mape": self.mape, "mae": self.mae}
        for k, v in sorted(self.hit_rate.items()):
            out[f"hr{_fmt_k(k)}"] = v
        return out


def _fmt_k(k: float) -> str:
    return str(int(k)) if float(k).is_integer() else str(k)


def _pair(pred: ArrayLike, truth: ArrayLike, *, positive: bool) -> tuple[Array, Array]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} targets")
    if p.size < 1:
        raise ValueError("metrics need at least one sample")
    if positive and (t <= 0).any():
        raise ValueError("ground-truth prices must be > 0")
    return p, t


def mape(pred: ArrayLike, truth: ArrayLike) -> float:
    """``100 * mean(|pred - truth| / truth)``."""
    p, t = _pair(pred, truth, positive=True)
    return float(100.0 * np.mean(np.abs(p - t) / t))


def mae(pred: ArrayLike, truth: ArrayLike) -> float:
    p, t = _pair(pred, truth, positive=False)
    return float(np.mean(np.abs(p - t)))


def hit_rate(pred: ArrayLike, truth: ArrayLike, k: float) -> float:
    """Fraction of predictions within ``k`` percent of the truth (boundary inclusive)."""
    if k <= 0:
        raise ValueError(f"tolerance must be > 0, got {k}")
    p, t = _pair(pred, truth, positive=True)
    # |p - t| <= k/100 * t, compared without dividing so 110 vs 100 at k=10 hits.
    return float(np.mean(np.abs(p - t) * 100.0 <= k * t))


def compute_metrics(
    pred: ArrayLike, truth: ArrayLike, ks: Sequence[float] = DEFAULT_HIT_KS
) -> MetricSet:
    return MetricSet(
        mape=mape(pred, truth),
        mae=mae(pred, truth),
        hit_rate={float(k): hit_rate(pred, truth, k) for k in ks},
    )


def metrics_by_group(
    pred: ArrayLike,
    truth: ArrayLike,
    groups: ArrayLike,
    ks: Sequence[float] = DEFAULT_HIT_KS,
) -> dict[int, MetricSet]:
    """One :class:`MetricSet` per distinct value of ``groups`` (e.g. city id)."""
    p, t = _pair(pred, truth, positive=True)
    g = np.asarray(groups).reshape(-1)
    if g.shape != p.shape:
        raise ValueError("groups must have one entry per prediction")
    return {int(v): compute_metrics(p[g == v], t[g == v], ks) for v in np.unique(g)}


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def historical_average(support: Dataset, cities: ArrayLike) -> Array:
    """Mean support price of each query's city; unseen cities get the global mean."""
    prices = support.prices
    if len(prices) == 0:
        raise DataError("historical average needs a non-empty support set")
    if np.isnan(prices).any():
        raise ValidationError("support records must all be priced")
    query = np.asarray(cities, dtype=np.int64).reshape(-1)
    global_mean = float(prices.mean())
    city = support.batch.city
    means = {int(c): float(prices[city == c].mean()) for c in np.unique(city)}
    return np.array([means.get(int(c), global_mean) for c in query], dtype=np.float64)


def design_matrix(data: Dataset) -> Array:
    """Numerical columns followed by a one-hot block per categorical feature.

    One-hot categories are fixed to the full vocabulary, so support and test
    matrices always have the same columns.
    """
    schema = data.schema
    encoder = OneHotEncoder(
        categories=[np.arange(size) for size in schema.vocabulary_sizes],
        sparse_output=False,
        handle_unknown="ignore",
        dtype=np.float64,
    )
    categorical = np.asarray(data.batch.categorical_re, dtype=np.int64)
    if len(data) == 0:
        width = sum(schema.vocabulary_sizes)
        return np.zeros((0, len(schema.numerical_columns) + width))
    one_hot = encoder.fit_transform(categorical)
    return np.hstack([data.batch.numerical_matrix(), one_hot])


def linear_regression(support: Dataset, test: Dataset, ridge: float = RIDGE_LAMBDA) -> Array:
    """Ridge-regularized least squares on the support set, evaluated on ``test``.

    Targets are standardized with the support scaler before fitting and
    mapped back afterwards. The intercept is not penalized.
    """
    if ridge < 0:
        raise ValueError(f"ridge strength must be >= 0, got {ridge}")
    scaler = fit_target_scaler(support)
    y = scaler.transform(support.prices.reshape(-1, 1))[:, 0]
    model = Ridge(alpha=ridge, solver="cholesky", fit_intercept=True)
    model.fit(design_matrix(support), y)
    pred = model.predict(design_matrix(test))
    return scaler.inverse_transform(pred.reshape(-1, 1))[:, 0]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _metric_header(ks: Sequence[float]) -> list[str]:
    return ["MAPE", "MAE", *(f"HR{_fmt_k(k)}%" for k in ks)]


def _metric_cells(m: MetricSet, ks: Sequence[float]) -> list[str]:
    return [
        f"{m.mape:.4f}",
        f"{m.mae:.4f}",
        *(f"{100.0 * m.hit_rate[float(k)]:.2f}" for k in ks),
    ]


def _row(*cells: str) -> str:
    return "\t".join(cells)


def format_report(
    reports: Sequence[ExperimentReport],
    ks: Sequence[float] = DEFAULT_HIT_KS,
    *,
    by_city: bool = False,
) -> str:
    """Tab-separated per-seed rows, then a ``mean±std`` block (one row per report).

    Hit rates are printed in percent. Seeds that were also scored on a
    validation set get a third block. With ``by_city`` a per-city block with
    predictions pooled over seeds follows.
    """
    header = _metric_header(ks)
    lines = [_row("model", "dataset", "shots", "seed", *header)]
    for rep in reports:
        for res in rep.results:
            lines.append(
                _row(rep.label, rep.dataset, str(rep.shots), str(res.seed),
                     *_metric_cells(res.metrics, ks))
            )

    lines += ["", _row("model", "dataset", "shots", "seeds", *header)]
    for rep in reports:
        agg = rep.aggregate()
        cells = [
            f"{agg['mape'][0]:.4f}±{agg['mape'][1]:.4f}",
            f"{agg['mae'][0]:.4f}±{agg['mae'][1]:.4f}",
        ]
        for k in ks:
            mean, std = agg[f"hr{_fmt_k(k)}"]
            cells.append(f"{100.0 * mean:.2f}±{100.0 * std:.2f}")
        lines.append(_row(rep.label, rep.dataset, str(rep.shots), str(len(rep.results)), *cells))

    scored = [(rep, res) for rep in reports for res in rep.results if res.validation is not None]
    if scored:
        lines += ["", _row("model", "dataset", "shots", "seed", *header)]
        for rep, res in scored:
            assert res.validation is not None
            lines.append(
                _row(rep.label, "validation", str(rep.shots), str(res.seed),
                     *_metric_cells(res.validation, ks))
            )

    if by_city:
        lines += ["", _row("model", "dataset", "shots", "city", *header)]
        for rep in reports:
            for city, m in sorted(rep.pooled_by_city(ks).items()):
                lines.append(
                    _row(rep.label, rep.dataset, str(rep.shots), str(city), *_metric_cells(m, ks))
                )
    return "\n".join(lines) + "\n"


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=0))
