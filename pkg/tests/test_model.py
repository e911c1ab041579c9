"""Tests for the appraisal network: shapes, wiring and exact gradients."""

from dataclasses import replace

import numpy as np
import pytest

import dorakit as dk

from .conftest import random_batch, rel_error, small_schema, tiny_model


def pretext_loss_fn(params, batch, cfg):
    labels = dk.pretext_labels(params, batch)

    def loss():
        Z, probs, _ = dk.forward(params, batch, "pretext")
        return dk.pretrain_loss(probs, Z, labels, cfg).total

    Z, probs, cache = dk.forward(params, batch, "pretext")
    out = dk.pretrain_loss(probs, Z, labels, cfg)
    grads = dk.backward(params, cache, out.grad_logits, out.grad_z)
    return loss, grads


class TestInit:
    def test_shapes(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=0)
        assert params.embedding_dim == 4 + 2 * 3 + 3 + 3
        assert params.n_classes == schema.n_towns
        assert params.encoder.out_dim == 4
        assert [t.shape for t in params.embedder_cr] == [(4, 3), (3, 3)]
        assert params.price_head.out_dim == 1

    def test_default_encoder_widths(self):
        cfg = dk.ModelConfig()
        assert cfg.encoder_dims == (512, 1024, 2048, 1024, 512, 256)

    def test_last_multiplier_must_be_one(self):
        with pytest.raises(ValueError):
            dk.ModelConfig(encoder_multipliers=(2, 4))

    def test_parameter_names(self):
        params = dk.init_params(tiny_model(), small_schema(), seed=0)
        names = set(params.parameters())
        assert "embedder_nr.0.weight" in names
        assert "embedder_cr.1.table" in names
        assert "embedder_econ_geo.0.bias" in names
        assert "embedder_poi.0.weight" in names
        assert "encoder.1.weight" in names
        assert "pretext_head.1.bias" in names
        assert "price_head.0.weight" in names

    def test_seeded_init_is_deterministic(self):
        a = dk.init_params(tiny_model(), small_schema(), seed=3).parameters()
        b = dk.init_params(tiny_model(), small_schema(), seed=3).parameters()
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_linear_heads(self):
        params = dk.init_params(tiny_model(head_depth=1), small_schema(), seed=0)
        assert len(params.pretext_head.layers) == 1
        assert params.pretext_head.layers[0].activation == "identity"

    @pytest.mark.parametrize(
        "subset,width",
        [
            (dk.FeatureSubset.RF, 10),
            (dk.FeatureSubset.RF_POI, 13),
            (dk.FeatureSubset.RF_ECON_GEO, 13),
            (dk.FeatureSubset.ALL, 16),
        ],
    )
    def test_feature_subsets(self, subset, width):
        params = dk.init_params(tiny_model(feature_subset=subset), small_schema(), seed=0)
        assert params.embedding_dim == width
        assert (params.embedder_poi is not None) == subset.uses_poi
        assert (params.embedder_econ_geo is not None) == subset.uses_econ_geo
        Z = dk.encode(params, dk.embed(params, random_batch(small_schema(), 5)))
        assert Z.shape == (5, 4)

    def test_categorical_pretext_target(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(pretext_target="cat_0"), schema, seed=0)
        assert params.n_classes == 4
        assert params.masked_column == 0
        batch = random_batch(schema, 6)
        np.testing.assert_array_equal(
            dk.pretext_labels(params, batch), batch.categorical_re[:, 0]
        )

    def test_unknown_pretext_target(self):
        with pytest.raises(dk.SchemaError):
            dk.init_params(tiny_model(pretext_target="roof"), small_schema())


class TestForward:
    def test_output_shapes(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=0)
        batch = random_batch(schema, 7)
        Z, probs, _ = dk.forward(params, batch, "pretext")
        assert Z.shape == (7, 4)
        assert probs.shape == (7, schema.n_towns)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        _, price, _ = dk.forward(params, batch, "price")
        assert price.shape == (7,)

    def test_matches_inference_functions(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=1)
        batch = random_batch(schema, 5)
        Z, probs, _ = dk.forward(params, batch, "pretext")
        np.testing.assert_allclose(Z, dk.encode(params, dk.embed(params, batch)))
        np.testing.assert_allclose(probs, dk.predict_town(params, Z))

    def test_town_is_not_an_input(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=0)
        batch = random_batch(schema, 6)
        moved = replace(batch, town=np.zeros(6, dtype=np.int64))
        np.testing.assert_array_equal(dk.embed(params, batch), dk.embed(params, moved))

    def test_masked_column_is_hidden(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(pretext_target="cat_0"), schema, seed=0)
        batch = random_batch(schema, 6)
        cats = batch.categorical_re.copy()
        cats[:, 0] = (cats[:, 0] + 1) % 4
        changed = replace(batch, categorical_re=cats)
        np.testing.assert_array_equal(dk.embed(params, batch), dk.embed(params, changed))

    def test_category_outside_table(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=0)
        batch = random_batch(schema, 3)
        cats = batch.categorical_re.copy()
        cats[2, 1] = 7
        with pytest.raises(dk.ValidationError):
            dk.embed(params, replace(batch, categorical_re=cats))

    def test_unknown_head(self):
        params = dk.init_params(tiny_model(), small_schema(), seed=0)
        with pytest.raises(ValueError):
            dk.forward(params, random_batch(small_schema(), 2), "rent")


class TestBackward:
    def test_pretext_gradients(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=2)
        batch = random_batch(schema, 8, seed=5)
        cfg = dk.PretextLossConfig(alpha=0.6, tau=0.5)
        loss, grads = pretext_loss_fn(params, batch, cfg)
        live = params.parameters()
        assert set(grads) == set(live) - {n for n in live if n.startswith("price_head")}
        numeric = dk.numerical_gradient(loss, live, h=dk.nn.FD_STEP, names=sorted(grads))
        for name in grads:
            assert rel_error(grads[name], numeric[name]) < 1e-4, name

    @pytest.mark.parametrize("seed", range(5))
    def test_pretext_gradients_default_loss(self, seed):
        schema = small_schema(n_towns=3, n_cities=1)
        params = dk.init_params(tiny_model(d_z=8), schema, seed=seed)
        batch = random_batch(schema, 6, seed=seed + 10)
        loss, grads = pretext_loss_fn(params, batch, dk.PretextLossConfig(alpha=0.7, tau=0.1))
        numeric = dk.numerical_gradient(
            loss, params.parameters(), h=dk.nn.FD_STEP, names=sorted(grads)
        )
        for name in grads:
            assert rel_error(grads[name], numeric[name]) < 1e-4, name

    def test_pretext_gradients_masked_target(self):
        schema = small_schema()
        cfg_model = tiny_model(pretext_target="cat_1", feature_subset=dk.FeatureSubset.RF_POI)
        params = dk.init_params(cfg_model, schema, seed=4)
        batch = random_batch(schema, 6, seed=6)
        loss, grads = pretext_loss_fn(params, batch, dk.PretextLossConfig(alpha=0.5, tau=1.0))
        numeric = dk.numerical_gradient(
            loss, params.parameters(), h=dk.nn.FD_STEP, names=sorted(grads)
        )
        for name in grads:
            assert rel_error(grads[name], numeric[name]) < 1e-4, name
        np.testing.assert_array_equal(grads["embedder_cr.1.table"][1:], 0.0)

    def test_price_gradients(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=3)
        batch = random_batch(schema, 6, seed=1)
        target = np.random.default_rng(0).standard_normal(6)

        def loss():
            _, pred, _ = dk.forward(params, batch, "price")
            return dk.mse_loss(pred, target)[0]

        _, pred, cache = dk.forward(params, batch, "price")
        grads = dk.backward(params, cache, dk.mse_loss(pred, target)[1])
        numeric = dk.numerical_gradient(
            loss, params.parameters(), h=dk.nn.FD_STEP, names=sorted(grads)
        )
        for name in grads:
            assert rel_error(grads[name], numeric[name]) < 1e-4, name

    def test_head_only(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=0)
        _, pred, cache = dk.forward(params, random_batch(schema, 4), "price")
        grads = dk.backward(params, cache, np.ones_like(pred), head_only=True)
        assert grads and all(name.startswith("price_head") for name in grads)


class TestParams:
    def test_clone_is_independent(self):
        params = dk.init_params(tiny_model(), small_schema(), seed=0)
        copy = params.clone()
        copy.parameters()["encoder.0.weight"][...] = 0.0
        assert np.abs(params.parameters()["encoder.0.weight"]).sum() > 0

    def test_load_state(self):
        schema = small_schema()
        src = dk.init_params(tiny_model(), schema, seed=1)
        dst = dk.init_params(tiny_model(), schema, seed=2)
        dst.load_state(src.parameters())
        for name, value in src.parameters().items():
            np.testing.assert_array_equal(dst.parameters()[name], value)

    def test_load_state_rejects_mismatch(self):
        schema = small_schema()
        params = dk.init_params(tiny_model(), schema, seed=0)
        tensors = dict(params.parameters())
        tensors.pop("encoder.0.bias")
        with pytest.raises(dk.SchemaError):
            params.load_state(tensors)
        tensors = dict(params.parameters())
        tensors["encoder.0.bias"] = np.zeros(3)
        with pytest.raises(dk.SchemaError):
            params.load_state(tensors)

    def test_reset_price_head(self):
        params = dk.init_params(tiny_model(), small_schema(), seed=0)
        before = {k: v.copy() for k, v in params.parameters().items()}
        dk.model.reset_price_head(params, 99)
        after = params.parameters()
        for name, value in before.items():
            if name.startswith("price_head"):
                assert not np.array_equal(after[name], value) or not value.any()
            else:
                np.testing.assert_array_equal(after[name], value)

    def test_is_finite(self):
        params = dk.init_params(tiny_model(), small_schema(), seed=0)
        assert params.is_finite()
        params.encoder.layers[0].bias[0] = np.nan
        assert not params.is_finite()
