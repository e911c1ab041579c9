"""The appraisal network: embedders, encoder, pretext head and price head.

Data flow for a batch::

    NR ----> Embedder_NR (Mish) ---------\
    CR^j --> lookup table j (d_cr each) --+--> E --> Encoder --> Z --+--> pretext head --> softmax
    EG ----> Embedder_EconGeo (Mish) ----|                           |
    PoI ---> Embedder_PoI (Mish) --------/                           +--> price head --> price

``E`` concatenates the families in the order NR, CR, Econ&Geo, PoI; families
left out by :class:`FeatureSubset` are dropped and ``E`` shrinks accordingly.
The town column is never read as an input.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Literal, Mapping, Optional, Union

import numpy as np
from numpy.typing import NDArray

from .errors import SchemaError, ValidationError
from .nn import GradTape, Mlp, mlp_backward, mlp_forward, softmax
from .schema import TOWN_COLUMN, UNKNOWN_INDEX, Batch, FeatureSchema

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]
Head = Literal["pretext", "price"]


class FeatureSubset(str, Enum):
    """Which feature families feed the model."""

    RF = "RF"
    RF_POI = "RF+PoI"
    RF_ECON_GEO = "RF+EconGeo"
    ALL = "All"

    @property
    def uses_econ_geo(self) -> bool:
        return self in (FeatureSubset.RF_ECON_GEO, FeatureSubset.ALL)

    @property
    def uses_poi(self) -> bool:
        return self in (FeatureSubset.RF_POI, FeatureSubset.ALL)


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths and wiring.

    Parameters
    ----------
    d_nr, d_cr, d_econ_geo, d_poi : int
        Embedding widths. ``d_cr`` is per categorical feature.
    d_z : int
        Width of the representation Z.
    encoder_multipliers : tuple of int
        Encoder layer widths as multiples of ``d_z``; the last must be 1.
    head_hidden : int, optional
        Hidden width of both heads (defaults to ``d_z``).
    head_depth : int
        Number of dense layers in each head; 1 makes the heads linear.
    feature_subset : FeatureSubset
        Families used as inputs.
    pretext_target : str
        ``"town"`` or the name of a categorical column.
    """

    d_nr: int = 16
    d_cr: int = 10
    d_econ_geo: int = 16
    d_poi: int = 16
    d_z: int = 256
    encoder_multipliers: tuple[int, ...] = (2, 4, 8, 4, 2, 1)
    head_hidden: Optional[int] = None
    head_depth: int = 2
    feature_subset: FeatureSubset = FeatureSubset.ALL
    pretext_target: str = TOWN_COLUMN

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_subset", FeatureSubset(self.feature_subset))
        object.__setattr__(
            self, "encoder_multipliers", tuple(int(m) for m in self.encoder_multipliers)
        )
        dims = (self.d_nr, self.d_cr, self.d_econ_geo, self.d_poi, self.d_z, self.head_depth)
        if any(d < 1 for d in dims):
            raise ValueError("all model dimensions must be >= 1")
        if not self.encoder_multipliers or any(m < 1 for m in self.encoder_multipliers):
            raise ValueError("encoder multipliers must be >= 1")
        if self.encoder_multipliers[-1] != 1:
            raise ValueError("the last encoder multiplier must be 1 so the encoder emits d_z")
        if self.head_hidden is not None and self.head_hidden < 1:
            raise ValueError("head_hidden must be >= 1")

    @property
    def encoder_dims(self) -> tuple[int, ...]:
        return tuple(m * self.d_z for m in self.encoder_multipliers)

    @property
    def hidden(self) -> int:
        return self.head_hidden if self.head_hidden is not None else self.d_z

    def embedding_dim(self, schema: FeatureSchema) -> int:
        width = self.d_nr + schema.num_categorical_re * self.d_cr
        if self.feature_subset.uses_econ_geo:
            width += self.d_econ_geo
        if self.feature_subset.uses_poi:
            width += self.d_poi
        return width

    def n_classes(self, schema: FeatureSchema) -> int:
        """N_Y: number of towns, or the vocabulary size of a categorical target."""
        if self.pretext_target == TOWN_COLUMN:
            return schema.n_towns
        return schema.categorical(self.pretext_target)[1].size


@dataclass(eq=False)
class ModelParams:
    """Every trainable tensor of the model, grouped by component."""

    config: ModelConfig
    embedder_nr: Mlp
    embedder_cr: list[Array]
    embedder_econ_geo: Optional[Mlp]
    embedder_poi: Optional[Mlp]
    encoder: Mlp
    pretext_head: Mlp
    price_head: Mlp
    # Position of the categorical pretext target, masked to <unk> on input.
    masked_column: Optional[int] = None

    @property
    def n_classes(self) -> int:
        return self.pretext_head.out_dim

    @property
    def embedding_dim(self) -> int:
        return self.encoder.in_dim

    def parameters(self) -> dict[str, Array]:
        """Flat ``name -> array`` view; the arrays are the live tensors."""
        out = self.embedder_nr.parameters("embedder_nr")
        for j, table in enumerate(self.embedder_cr):
            out[f"embedder_cr.{j}.table"] = table
        if self.embedder_econ_geo is not None:
            out.update(self.embedder_econ_geo.parameters("embedder_econ_geo"))
        if self.embedder_poi is not None:
            out.update(self.embedder_poi.parameters("embedder_poi"))
        out.update(self.encoder.parameters("encoder"))
        out.update(self.pretext_head.parameters("pretext_head"))
        out.update(self.price_head.parameters("price_head"))
        return out

    def load_state(self, tensors: Mapping[str, Array]) -> None:
        """Copy ``tensors`` into the live arrays; names and shapes must match exactly."""
        params = self.parameters()
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        if missing or extra:
            raise SchemaError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, dst in params.items():
            src = np.asarray(tensors[name], dtype=np.float64)
            if src.shape != dst.shape:
                raise SchemaError(f"{name}: shape {src.shape} != expected {dst.shape}")
            dst[...] = src

    def clone(self) -> ModelParams:
        return copy.deepcopy(self)

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters().values())


def _head(d_z: int, hidden: int, depth: int, out: int, rng: np.random.Generator) -> Mlp:
    return Mlp.create([d_z, *([hidden] * (depth - 1)), out], rng)


def init_params(
    config: ModelConfig,
    schema: FeatureSchema,
    seed: Union[int, np.random.Generator, None] = 0,
) -> ModelParams:
    """Glorot-initialize a model for ``schema``; embedding tables get N(0, 1) rows."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    masked = None
    if config.pretext_target != TOWN_COLUMN:
        masked, _ = schema.categorical(config.pretext_target)
    embedder_nr = Mlp.create([schema.num_numerical_re, config.d_nr], rng, final_activation="mish")
    tables = [rng.standard_normal((size, config.d_cr)) for size in schema.vocabulary_sizes]
    econ_geo = poi = None
    if config.feature_subset.uses_econ_geo:
        econ_geo = Mlp.create(
            [schema.num_econ_geo, config.d_econ_geo], rng, final_activation="mish"
        )
    if config.feature_subset.uses_poi:
        poi = Mlp.create([schema.num_poi, config.d_poi], rng, final_activation="mish")
    encoder = Mlp.create([config.embedding_dim(schema), *config.encoder_dims], rng)
    pretext_head = _head(
        config.d_z, config.hidden, config.head_depth, config.n_classes(schema), rng
    )
    price_head = _head(config.d_z, config.hidden, config.head_depth, 1, rng)
    return ModelParams(
        config=config,
        embedder_nr=embedder_nr,
        embedder_cr=tables,
        embedder_econ_geo=econ_geo,
        embedder_poi=poi,
        encoder=encoder,
        pretext_head=pretext_head,
        price_head=price_head,
        masked_column=masked,
    )


def reset_price_head(params: ModelParams, seed: Union[int, np.random.Generator, None]) -> None:
    """Replace the price head with a freshly initialized one."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cfg = params.config
    params.price_head = _head(cfg.d_z, cfg.hidden, cfg.head_depth, 1, rng)


def pretext_labels(params: ModelParams, batch: Batch) -> NDArray[np.int64]:
    """Class labels of the pretext task: town ids, or the masked categorical column."""
    if params.masked_column is None:
        return np.asarray(batch.town, dtype=np.int64)
    return np.asarray(batch.categorical_re[:, params.masked_column], dtype=np.int64)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ForwardCache:
    """Everything :func:`backward` needs from one forward pass."""

    head: Head
    categorical: NDArray[np.int64]
    tape_nr: GradTape
    tape_econ_geo: Optional[GradTape]
    tape_poi: Optional[GradTape]
    tape_encoder: GradTape
    tape_head: GradTape


def _categorical_indices(params: ModelParams, batch: Batch) -> NDArray[np.int64]:
    idx = np.asarray(batch.categorical_re, dtype=np.int64)
    sizes = np.asarray([t.shape[0] for t in params.embedder_cr])
    if idx.shape[1] != len(sizes):
        raise ValueError(
            f"batch has {idx.shape[1]} categorical columns, model expects {len(sizes)}"
        )
    bad = (idx < 0) | (idx >= sizes)
    if bad.any():
        row, col = (int(v) for v in np.argwhere(bad)[0])
        raise ValidationError(
            f"category index {idx[row, col]} outside table of size {sizes[col]}", row=row + 1
        )
    if params.masked_column is not None:
        idx = idx.copy()
        idx[:, params.masked_column] = UNKNOWN_INDEX
    return idx


def _embed(
    params: ModelParams, batch: Batch
) -> tuple[Array, NDArray[np.int64], GradTape, Optional[GradTape], Optional[GradTape]]:
    parts = []
    e_nr, tape_nr = mlp_forward(params.embedder_nr, batch.numerical_re)
    parts.append(e_nr)
    idx = _categorical_indices(params, batch)
    for j, table in enumerate(params.embedder_cr):
        parts.append(table[idx[:, j]])
    tape_eg = tape_poi = None
    if params.embedder_econ_geo is not None:
        e_eg, tape_eg = mlp_forward(params.embedder_econ_geo, batch.econ_geo)
        parts.append(e_eg)
    if params.embedder_poi is not None:
        e_poi, tape_poi = mlp_forward(params.embedder_poi, batch.poi)
        parts.append(e_poi)
    return np.hstack(parts), idx, tape_nr, tape_eg, tape_poi


def embed(params: ModelParams, batch: Batch) -> Array:
    """Embedding matrix ``E`` for ``batch`` (families in order NR, CR, Econ&Geo, PoI).

    Raises
    ------
    ValidationError
        A category index does not fit its embedding table.
    """
    return _embed(params, batch)[0]


def encode(params: ModelParams, E: Array) -> Array:
    """Representation ``Z`` of width ``d_z``."""
    return mlp_forward(params.encoder, E)[0]


def predict_town(params: ModelParams, Z: Array) -> Array:
    """Row-stochastic ``[B, N_Y]`` matrix of pretext class probabilities."""
    return softmax(mlp_forward(params.pretext_head, Z)[0])


def predict_price(params: ModelParams, Z: Array) -> Array:
    """One price per row, on the standardized target scale."""
    return mlp_forward(params.price_head, Z)[0][:, 0]


def forward(params: ModelParams, batch: Batch, head: Head) -> tuple[Array, Array, ForwardCache]:
    """Full pass through one head.

    Returns ``(Z, out, cache)`` where ``out`` is the probability matrix for
    ``head="pretext"`` and the price vector for ``head="price"``.
    """
    E, idx, tape_nr, tape_eg, tape_poi = _embed(params, batch)
    Z, tape_enc = mlp_forward(params.encoder, E)
    if head == "pretext":
        logits, tape_head = mlp_forward(params.pretext_head, Z)
        out = softmax(logits)
    elif head == "price":
        raw, tape_head = mlp_forward(params.price_head, Z)
        out = raw[:, 0]
    else:
        raise ValueError(f"unknown head {head!r}")
    cache = ForwardCache(
        head=head,
        categorical=idx,
        tape_nr=tape_nr,
        tape_econ_geo=tape_eg,
        tape_poi=tape_poi,
        tape_encoder=tape_enc,
        tape_head=tape_head,
    )
    return Z, out, cache


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _collect(grads: dict[str, Array], prefix: str, layer_grads: list) -> None:
    for i, g in enumerate(layer_grads):
        grads[f"{prefix}.{i}.weight"] = g.weight
        grads[f"{prefix}.{i}.bias"] = g.bias


def backward(
    params: ModelParams,
    cache: ForwardCache,
    grad_out: Array,
    grad_z: Optional[Array] = None,
    *,
    head_only: bool = False,
) -> dict[str, Array]:
    """Gradients of every parameter reached by the pass recorded in ``cache``.

    Parameters
    ----------
    grad_out : ndarray
        dL/d logits for the pretext head (shape ``[B, N_Y]``) or dL/d price
        for the price head (shape ``[B]``).
    grad_z : ndarray, optional
        Extra gradient arriving at Z directly (the contrastive term).
    head_only : bool
        Stop at the head; nothing below Z gets a gradient.
    """
    grads: dict[str, Array] = {}
    if cache.head == "pretext":
        net, prefix = params.pretext_head, "pretext_head"
        g_head = np.asarray(grad_out, dtype=np.float64)
    else:
        net, prefix = params.price_head, "price_head"
        g_head = np.asarray(grad_out, dtype=np.float64).reshape(-1, 1)
    head_grads, g_z = mlp_backward(net, cache.tape_head, g_head)
    _collect(grads, prefix, head_grads)
    if head_only:
        return grads

    if grad_z is not None:
        g_z = g_z + grad_z
    enc_grads, g_e = mlp_backward(params.encoder, cache.tape_encoder, g_z)
    _collect(grads, "encoder", enc_grads)

    cfg = params.config
    col = 0
    nr_grads, _ = mlp_backward(params.embedder_nr, cache.tape_nr, g_e[:, col : col + cfg.d_nr])
    _collect(grads, "embedder_nr", nr_grads)
    col += cfg.d_nr
    for j, table in enumerate(params.embedder_cr):
        g_table = np.zeros_like(table)
        np.add.at(g_table, cache.categorical[:, j], g_e[:, col : col + cfg.d_cr])
        grads[f"embedder_cr.{j}.table"] = g_table
        col += cfg.d_cr
    if params.embedder_econ_geo is not None and cache.tape_econ_geo is not None:
        eg_grads, _ = mlp_backward(
            params.embedder_econ_geo, cache.tape_econ_geo, g_e[:, col : col + cfg.d_econ_geo]
        )
        _collect(grads, "embedder_econ_geo", eg_grads)
        col += cfg.d_econ_geo
    if params.embedder_poi is not None and cache.tape_poi is not None:
        poi_grads, _ = mlp_backward(
            params.embedder_poi, cache.tape_poi, g_e[:, col : col + cfg.d_poi]
        )
        _collect(grads, "embedder_poi", poi_grads)
        col += cfg.d_poi
    return grads
