"""Seeded synthetic corpora with town-clustered features and a known price function.

Each town ``t`` gets a numerical feature center ``mu_t`` (scaled by
``town_separation``), a town-level economic/geographic profile, PoI
intensities and a biased distribution over every categorical feature.
Records sample their town uniformly and draw features around the town's
parameters. The price is a fixed sparse function of the noise-free numerical
features plus a town offset, categorical and property-type effects and
Gaussian noise, clamped at a positive floor.

``town_separation = 0`` makes every town statistically identical, so town
labels carry no information about the features (a negative control for the
pretext task).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .poi import RadiusProfile, poi_column_names
from .schema import Batch, Dataset, FeatureSchema, Role

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

DEFAULT_PROPERTY_TYPES = ("building", "apartment", "house")
BASE_PRICE = 100.0
# Coefficients of z0, z1, z2 and z0**2 in the price function.
PRICE_COEFFICIENTS = (12.0, -8.0, 5.0, 4.0)


@dataclass(frozen=True)
class SynthConfig:
    """Size, shape and difficulty of a synthetic corpus.

    ``vocabulary_size`` counts the ``<unk>`` slot; sampled categories use the
    other ``vocabulary_size - 1`` tokens. ``poi_radii`` gives two PoI columns
    per radius (YIMBY then NIMBY).
    """

    n_cities: int = 4
    towns_per_city: int = 5
    n_unlabeled: int = 10000
    n_train: int = 2000
    n_test: int = 1000
    n_validation: int = 0
    n_numerical: int = 6
    n_categorical: int = 4
    vocabulary_size: int = 5
    n_econ_geo: int = 4
    poi_radii: tuple[float, ...] = (500.0, 1000.0)
    town_separation: float = 3.0
    econ_geo_noise: float = 0.5
    price_noise_std: float = 5.0
    town_offset_std: float = 15.0
    price_floor: float = 1.0
    property_types: tuple[str, ...] = DEFAULT_PROPERTY_TYPES
    seed: int = 0

    def __post_init__(self) -> None:
        counts = (
            self.n_cities,
            self.towns_per_city,
            self.n_categorical,
            self.n_econ_geo,
            len(self.poi_radii),
            len(self.property_types),
        )
        if any(c < 1 for c in counts):
            raise ValueError("synthetic feature and group counts must be >= 1")
        if min(self.n_unlabeled, self.n_train, self.n_test, self.n_validation) < 0:
            raise ValueError("split sizes must be >= 0")
        if self.n_numerical < 3:
            raise ValueError("the price function needs at least 3 numerical features")
        if self.vocabulary_size < 2:
            raise ValueError("vocabulary_size must be >= 2 (<unk> plus one token)")
        if self.town_separation < 0 or self.price_noise_std < 0 or self.econ_geo_noise < 0:
            raise ValueError("separation and noise levels must be >= 0")
        if self.price_floor <= 0:
            raise ValueError("price_floor must be > 0")
        object.__setattr__(self, "poi_radii", tuple(float(r) for r in self.poi_radii))
        object.__setattr__(self, "property_types", tuple(self.property_types))

    @property
    def n_towns(self) -> int:
        return self.n_cities * self.towns_per_city


@dataclass(frozen=True, eq=False)
class GeneratorTruth:
    """Per-town generator parameters and price-function effects."""

    town_city: tuple[int, ...]
    numerical_centers: Array
    econ_geo_centers: Array
    poi_log_rates: Array
    categorical_probs: Array
    town_offsets: Array
    categorical_effects: Array
    poi_effects: Array
    type_effects: dict[str, float]

    def expected_price(self, batch: Batch, separation: float) -> Array:
        """Noise-free, unclamped price of every record in ``batch``."""
        z = np.asarray(batch.numerical_re) / np.sqrt(1.0 + separation**2)
        a, b, c, d = PRICE_COEFFICIENTS
        price = BASE_PRICE + a * z[:, 0] + b * z[:, 1] + c * z[:, 2] + d * z[:, 0] ** 2
        price = price + self.town_offsets[batch.town]
        cats = np.asarray(batch.categorical_re)
        for j in range(cats.shape[1]):
            price = price + self.categorical_effects[j, cats[:, j]]
        price = price + np.asarray(batch.poi) @ self.poi_effects
        price = price + np.array([self.type_effects[t] for t in batch.property_type])
        return price


class SyntheticGenerator:
    """Draws the generator parameters once, then samples any number of splits."""

    def __init__(self, cfg: SynthConfig = SynthConfig()) -> None:
        self.cfg = cfg
        ss = np.random.SeedSequence(cfg.seed)
        truth_ss, *self._split_ss = ss.spawn(5)
        self.schema = self._build_schema()
        self.truth = self._draw_truth(np.random.default_rng(truth_ss))
        self.clamped: dict[str, int] = {}

    def _build_schema(self) -> FeatureSchema:
        cfg = self.cfg
        profile = RadiusProfile(cfg.poi_radii)
        town_city = [c for c in range(cfg.n_cities) for _ in range(cfg.towns_per_city)]
        return FeatureSchema.from_counts(
            cfg.n_numerical,
            [cfg.vocabulary_size] * cfg.n_categorical,
            cfg.n_econ_geo,
            profile.n_features,
            town_city,
            poi_names=poi_column_names(profile),
        )

    def _draw_truth(self, rng: np.random.Generator) -> GeneratorTruth:
        cfg = self.cfg
        sep = cfg.town_separation
        n_towns = cfg.n_towns
        n_poi = 2 * len(cfg.poi_radii)
        logits = sep * rng.standard_normal((n_towns, cfg.n_categorical, cfg.vocabulary_size - 1))
        logits -= logits.max(axis=2, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=2, keepdims=True)
        cat_effects = rng.normal(0.0, 3.0, size=(cfg.n_categorical, cfg.vocabulary_size))
        cat_effects[:, 0] = 0.0
        return GeneratorTruth(
            town_city=tuple(self.schema.town_city),
            numerical_centers=sep * rng.standard_normal((n_towns, cfg.n_numerical)),
            econ_geo_centers=sep * rng.standard_normal((n_towns, cfg.n_econ_geo)),
            poi_log_rates=np.log(2.0) + 0.3 * sep * rng.standard_normal((n_towns, n_poi)),
            categorical_probs=probs,
            town_offsets=rng.normal(0.0, cfg.town_offset_std, size=n_towns),
            categorical_effects=cat_effects,
            poi_effects=rng.normal(0.0, 0.5, size=n_poi) / len(cfg.poi_radii),
            type_effects={t: float(rng.normal(0.0, 5.0)) for t in cfg.property_types},
        )

    def _sample(
        self, n: int, rng: np.random.Generator, first_id: int, priced: bool
    ) -> tuple[Batch, int]:
        cfg = self.cfg
        truth = self.truth
        town = rng.integers(cfg.n_towns, size=n)
        numerical = truth.numerical_centers[town] + rng.standard_normal((n, cfg.n_numerical))
        econ_geo = truth.econ_geo_centers[town] + cfg.econ_geo_noise * rng.standard_normal(
            (n, cfg.n_econ_geo)
        )
        # Counts per ring, then cumulative within each class so larger radii never count less.
        rings = rng.poisson(np.exp(truth.poi_log_rates[town])).astype(np.float64)
        half = len(cfg.poi_radii)
        poi = np.hstack([np.cumsum(rings[:, :half], axis=1), np.cumsum(rings[:, half:], axis=1)])
        categorical = np.empty((n, cfg.n_categorical), dtype=np.int64)
        for j in range(cfg.n_categorical):
            cdf = np.cumsum(truth.categorical_probs[town, j], axis=1)
            u = rng.random(n)[:, None]
            categorical[:, j] = np.minimum((u > cdf).sum(axis=1), cfg.vocabulary_size - 2) + 1
        property_type = rng.choice(np.asarray(cfg.property_types, dtype=object), size=n)
        noise = cfg.price_noise_std * rng.standard_normal(n)

        batch = Batch(
            numerical_re=numerical,
            categorical_re=categorical,
            econ_geo=econ_geo,
            poi=poi,
            town=town.astype(np.int64),
            city=np.asarray(truth.town_city, dtype=np.int64)[town],
            price=np.full(n, np.nan),
            property_type=property_type,
            record_id=np.arange(first_id, first_id + n, dtype=np.int64),
        )
        if not priced:
            return batch, 0
        price = truth.expected_price(batch, cfg.town_separation) + noise
        n_low = int((price < cfg.price_floor).sum())
        if n_low:
            logger.warning("clamped %d synthetic price(s) to %g", n_low, cfg.price_floor)
        return replace(batch, price=np.maximum(price, cfg.price_floor)), n_low

    def _split(self, index: int, n: int, first_id: int, role: Role) -> Dataset:
        rng = np.random.default_rng(self._split_ss[index])
        batch, n_low = self._sample(n, rng, first_id, priced=role.requires_price)
        self.clamped[role.value] = n_low
        return Dataset(self.schema, batch, role)

    def generate(self) -> tuple[Dataset, Dataset, Dataset, FeatureSchema]:
        """``(unlabeled, train, test, schema)``; record ids are unique across splits."""
        cfg = self.cfg
        unlabeled = self._split(0, cfg.n_unlabeled, 1, Role.UNLABELED)
        train = self._split(1, cfg.n_train, 1 + cfg.n_unlabeled, Role.TRAIN)
        test = self._split(2, cfg.n_test, 1 + cfg.n_unlabeled + cfg.n_train, Role.TEST)
        logger.info(
            "generated %d unlabeled, %d train, %d test record(s) over %d towns",
            len(unlabeled), len(train), len(test), cfg.n_towns,
        )
        return unlabeled, train, test, self.schema

    def validation(self) -> Optional[Dataset]:
        """Optional labeled validation split, disjoint from the other three."""
        cfg = self.cfg
        if cfg.n_validation == 0:
            return None
        first = 1 + cfg.n_unlabeled + cfg.n_train + cfg.n_test
        return self._split(3, cfg.n_validation, first, Role.VALIDATION)


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[Dataset, Dataset, Dataset, FeatureSchema]:
    """Shortcut for ``SyntheticGenerator(cfg).generate()``."""
    return SyntheticGenerator(cfg).generate()
