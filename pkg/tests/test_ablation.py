"""Tests for the ablation grid."""

import pytest

import dorakit as dk
import dorakit.ablation as ablation

from .conftest import fast_finetune, fast_pretrain, tiny_model


def grid(**axes):
    return dk.build_ablation_grid(tiny_model(), fast_pretrain(), fast_finetune(), **axes)


class TestBuildGrid:
    def test_base_cell(self):
        (cell,) = grid()
        assert (cell.axis, cell.value) == ("base", "default")
        assert cell.model_config == tiny_model()
        assert cell.label == "dora[base=default]"

    def test_one_factor_at_a_time(self):
        cells = grid(alphas=(0.5, 1.0), d_zs=(8,))
        assert [c.label for c in cells] == ["dora[alpha=0.5]", "dora[alpha=1]", "dora[d_z=8]"]
        assert cells[0].pretrain_cfg.loss.alpha == 0.5
        assert cells[0].model_config.d_z == 4
        assert cells[2].model_config.d_z == 8
        assert cells[2].pretrain_cfg == fast_pretrain()

    def test_freeze_axis(self):
        cells = grid(freeze_encoder=True)
        assert [c.value for c in cells] == ["off", "on"]
        assert [c.finetune_cfg.freeze_encoder for c in cells] == [False, True]

    def test_feature_subsets_from_strings(self):
        cells = grid(feature_subsets=["RF", "RF+PoI"])
        assert cells[1].model_config.feature_subset is dk.FeatureSubset.RF_POI
        assert cells[1].label == "dora[feature_subset=RF+PoI]"

    def test_pretext_targets(self):
        (cell,) = grid(pretext_targets=["cat_0"])
        assert cell.model_config.pretext_target == "cat_0"

    def test_corpus_filters(self):
        cells = grid(corpus_filters=[None, "house"])
        assert [c.value for c in cells] == ["all", "house"]
        assert cells[1].pretrain_cfg.corpus_filter == "house"

    def test_invalid_subset(self):
        with pytest.raises(ValueError):
            grid(feature_subsets=["RF+Rent"])


class TestRunAblation:
    def test_shares_pretraining(self, corpus, monkeypatch):
        calls = []
        real = ablation.pretrain

        def counting(unlabeled, model_config, cfg):
            calls.append(cfg)
            return real(unlabeled, model_config, cfg)

        monkeypatch.setattr(ablation, "pretrain", counting)
        unlabeled, train, test, _ = corpus
        data = dk.ExperimentData(unlabeled=unlabeled, train=train, test=test)
        cells = grid(freeze_encoder=True, alphas=(1.0,))
        results = dk.run_ablation(cells, data, seeds=(0,), workers=2)
        assert len(calls) == 2
        assert [cell for cell, _ in results] == cells
        assert [rep.label for _, rep in results] == [c.label for c in cells]
        assert all(rep.shots == 3 for _, rep in results)

    def test_needs_unlabeled(self, corpus):
        data = dk.ExperimentData(unlabeled=None, train=corpus[1], test=corpus[2])
        with pytest.raises(ValueError):
            dk.run_ablation(grid(), data)
