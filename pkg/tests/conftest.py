"""Shared pytest fixtures and utilities."""

import numpy as np
import pytest

from dorakit import (
    LL_NONE,
    FeatureSchema,
    FinetuneConfig,
    ModelConfig,
    PretrainConfig,
    SynthConfig,
    SyntheticGenerator,
    log_set,
)
from dorakit.nn import max_relative_error
from dorakit.schema import Batch


def tiny_synth(**overrides):
    """Synthetic config small enough to train in well under a second."""
    params = dict(
        n_cities=2,
        towns_per_city=3,
        n_unlabeled=240,
        n_train=60,
        n_test=40,
        n_numerical=3,
        n_categorical=2,
        vocabulary_size=4,
        n_econ_geo=2,
        poi_radii=(500.0,),
        seed=7,
    )
    params.update(overrides)
    return SynthConfig(**params)


def tiny_model(**overrides):
    params = dict(
        d_nr=4,
        d_cr=3,
        d_econ_geo=3,
        d_poi=3,
        d_z=4,
        encoder_multipliers=(2, 1),
    )
    params.update(overrides)
    return ModelConfig(**params)


def fast_pretrain(**overrides):
    params = dict(epochs=2, batch_size=64, seed=0)
    params.update(overrides)
    return PretrainConfig(**params)


def fast_finetune(**overrides):
    params = dict(epochs=5, k_shots=3)
    params.update(overrides)
    return FinetuneConfig(**params)


def small_schema(n_towns=4, n_cities=2):
    town_city = [t * n_cities // n_towns for t in range(n_towns)]
    return FeatureSchema.from_counts(3, [4, 3], 2, 2, town_city)


def random_batch(schema, n, seed=0, priced=True):
    """Batch of ``n`` random but schema-valid records."""
    rng = np.random.default_rng(seed)
    town = rng.integers(schema.n_towns, size=n)
    sizes = np.asarray(schema.vocabulary_sizes)
    return Batch(
        numerical_re=rng.standard_normal((n, schema.num_numerical_re)),
        categorical_re=(rng.random((n, len(sizes))) * sizes).astype(np.int64),
        econ_geo=rng.standard_normal((n, schema.num_econ_geo)),
        poi=rng.poisson(3.0, size=(n, schema.num_poi)).astype(np.float64),
        town=town,
        city=np.asarray(schema.town_city)[town],
        price=rng.uniform(50.0, 150.0, size=n) if priced else np.full(n, np.nan),
        property_type=np.array(["house"] * n, dtype=object),
        record_id=np.arange(1, n + 1),
    )


@pytest.fixture(autouse=True)
def _quiet_logs():
    log_set(LL_NONE)
    yield


@pytest.fixture(scope="session")
def corpus():
    """``(unlabeled, train, test, schema)`` from the tiny generator."""
    return SyntheticGenerator(tiny_synth()).generate()


def rel_error(analytic, numeric):
    """Gradient-check error; the floor keeps near-zero coordinates from dominating."""
    return max_relative_error(analytic, numeric, floor=1e-6)
