"""Tests for the feature schema, CSV ingest and normalization."""

import numpy as np
import pytest

import dorakit as dk
from dorakit.schema import UNKNOWN_TOKEN, CategoricalFeature

from .conftest import random_batch, small_schema

HEADER = "id,town,city,property_type,nr_0,nr_1,nr_2,cat_0,cat_1,eg_0,eg_1,poi_0,poi_1,price"


def write_rows(path, rows, header=HEADER):
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path


def row(i=1, town=0, city=0, cat0="c1", cat1="c2", price="100.5", nr0="1.5"):
    return f"{i},{town},{city},house,{nr0},2,3,{cat0},{cat1},0.1,0.2,4,5,{price}"


class TestFeatureSchema:
    def test_default_counts(self):
        schema = dk.default_schema()
        assert schema.num_numerical_re == 23
        assert schema.num_categorical_re == 16
        assert schema.num_econ_geo == 9
        assert schema.num_poi == 16
        assert schema.n_towns == 350
        assert schema.n_cities == 22

    def test_default_embedding_width(self):
        schema = dk.default_schema()
        assert dk.ModelConfig().embedding_dim(schema) == 208
        rf = dk.ModelConfig(feature_subset=dk.FeatureSubset.RF)
        assert rf.embedding_dim(schema) == 176

    def test_default_pretext_classes(self):
        assert dk.ModelConfig().n_classes(dk.default_schema()) == 350

    def test_vocabulary_must_start_with_unknown(self):
        with pytest.raises(dk.SchemaError):
            CategoricalFeature("wall", ("brick", UNKNOWN_TOKEN))

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(dk.SchemaError):
            CategoricalFeature("wall", (UNKNOWN_TOKEN, "brick", "brick"))

    def test_empty_family_rejected(self):
        with pytest.raises(dk.SchemaError):
            dk.FeatureSchema.from_counts(0, [3], 1, 1, [0])

    def test_reserved_column_name_rejected(self):
        feat = CategoricalFeature("c", (UNKNOWN_TOKEN,))
        with pytest.raises(dk.SchemaError, match="reserved"):
            dk.FeatureSchema(("price",), (feat,), ("eg",), ("poi",), (0,))

    def test_sparse_city_ids_rejected(self):
        with pytest.raises(dk.SchemaError):
            dk.FeatureSchema.from_counts(1, [2], 1, 1, [0, 2])

    def test_categorical_lookup(self):
        schema = small_schema()
        j, feat = schema.categorical("cat_1")
        assert j == 1
        assert feat.size == 3
        with pytest.raises(dk.SchemaError):
            schema.categorical("missing")

    def test_digest_is_stable(self):
        a = small_schema()
        b = dk.FeatureSchema.from_dict(a.to_dict())
        assert a == b
        assert a.digest() == b.digest()
        assert a.digest() != small_schema(n_towns=6).digest()

    def test_schema_file(self, tmp_path):
        schema = dk.default_schema()
        path = tmp_path / "schema.ini"
        dk.write_schema(schema, path)
        assert dk.read_schema(path) == schema

    def test_schema_file_missing_section(self, tmp_path):
        path = tmp_path / "schema.ini"
        path.write_text("[families]\nnumerical_re = a\n", encoding="utf-8")
        with pytest.raises(dk.SchemaError):
            dk.read_schema(path)


class TestLoadCsv:
    def test_basic_load(self, tmp_path):
        path = write_rows(tmp_path / "train.csv", [row(1), row(2, town=3, city=1)])
        data = dk.load_csv(path, small_schema(), dk.Role.TRAIN)
        assert len(data) == 2
        assert data.role is dk.Role.TRAIN
        np.testing.assert_array_equal(data.batch.town, [0, 3])
        np.testing.assert_array_equal(data.batch.categorical_re[0], [1, 2])
        assert data.prices[0] == 100.5
        assert data.unknown_count == 0

    def test_unseen_token_maps_to_unknown(self, tmp_path):
        path = write_rows(tmp_path / "u.csv", [row(1, cat0="granite"), row(2)])
        data = dk.load_csv(path, small_schema(), "unlabeled")
        assert data.batch.categorical_re[0, 0] == 0
        assert data.unknown_count == 1

    def test_strict_rejects_unseen_token(self, tmp_path):
        path = write_rows(tmp_path / "u.csv", [row(1), row(2, cat1="granite")])
        with pytest.raises(dk.ValidationError) as info:
            dk.load_csv(path, small_schema(), "unlabeled", strict=True)
        assert info.value.row == 2

    def test_missing_price_in_labeled_role(self, tmp_path):
        path = write_rows(tmp_path / "t.csv", [row(1), row(2), row(3, price="")])
        with pytest.raises(dk.ValidationError) as info:
            dk.load_csv(path, small_schema(), dk.Role.TEST)
        assert info.value.row == 3

    def test_missing_price_allowed_when_unlabeled(self, tmp_path):
        path = write_rows(tmp_path / "u.csv", [row(1, price=""), row(2)])
        data = dk.load_csv(path, small_schema(), dk.Role.UNLABELED)
        assert np.isnan(data.prices[0])
        assert data.prices[1] == 100.5

    def test_non_numeric_cell(self, tmp_path):
        path = write_rows(tmp_path / "t.csv", [row(1), row(2, nr0="abc")])
        with pytest.raises(dk.ParseError) as info:
            dk.load_csv(path, small_schema(), dk.Role.TRAIN)
        assert info.value.row == 2
        assert info.value.column == "nr_0"

    def test_too_many_fields(self, tmp_path):
        path = write_rows(tmp_path / "t.csv", [row(1), row(2) + ",9"])
        with pytest.raises(dk.ParseError) as info:
            dk.load_csv(path, small_schema(), dk.Role.TRAIN)
        assert info.value.row == 2

    @pytest.mark.parametrize("role", [dk.Role.UNLABELED, dk.Role.TRAIN])
    def test_too_few_fields(self, tmp_path, role):
        short = row(2).rsplit(",", 1)[0]
        path = write_rows(tmp_path / "t.csv", [row(1), short, row(3)])
        with pytest.raises(dk.ParseError, match="expected 14 fields, got 13") as info:
            dk.load_csv(path, small_schema(), role)
        assert info.value.row == 2

    def test_blank_lines_do_not_shift_rows(self, tmp_path):
        path = write_rows(tmp_path / "t.csv", [row(1), "", row(2), row(3) + ",9"])
        with pytest.raises(dk.ParseError) as info:
            dk.load_csv(path, small_schema(), dk.Role.TRAIN)
        assert info.value.row == 3

    def test_missing_column(self, tmp_path):
        header = HEADER.replace(",eg_1", "")
        line = row(1).replace(",0.2,", ",", 1)
        path = write_rows(tmp_path / "t.csv", [line], header=header)
        with pytest.raises(dk.SchemaError, match="eg_1"):
            dk.load_csv(path, small_schema(), dk.Role.TRAIN)

    def test_city_must_match_town(self, tmp_path):
        path = write_rows(tmp_path / "t.csv", [row(1, town=3, city=0)])
        with pytest.raises(dk.ValidationError):
            dk.load_csv(path, small_schema(), dk.Role.TRAIN)

    def test_non_positive_price(self, tmp_path):
        path = write_rows(tmp_path / "t.csv", [row(1, price="0")])
        with pytest.raises(dk.ValidationError):
            dk.load_csv(path, small_schema(), dk.Role.TRAIN)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            dk.load_csv(tmp_path / "nope.csv", small_schema(), dk.Role.TRAIN)

    def test_save_and_reload(self, tmp_path):
        schema = small_schema()
        data = dk.Dataset(schema, random_batch(schema, 25, seed=3), dk.Role.TRAIN)
        path = tmp_path / "out.csv"
        dk.save_csv(data, path)
        back = dk.load_csv(path, schema, dk.Role.TRAIN)
        assert back.records == data.records

    def test_scan_vocabularies_sorts_tokens(self, tmp_path):
        path = write_rows(
            tmp_path / "u.csv", [row(1, cat0="zinc"), row(2, cat0="adobe"), row(3)]
        )
        schema = dk.scan_vocabularies(small_schema(), [path])
        _, feat = schema.categorical("cat_0")
        assert feat.vocabulary == (UNKNOWN_TOKEN, "adobe", "c1", "zinc")


class TestDataset:
    def test_record_roundtrip(self):
        schema = small_schema()
        data = dk.Dataset(schema, random_batch(schema, 10), dk.Role.TRAIN)
        again = dk.Dataset.from_records(schema, data.records, dk.Role.TRAIN)
        assert again.records == data.records

    def test_batch_is_read_only(self):
        schema = small_schema()
        data = dk.Dataset(schema, random_batch(schema, 5))
        with pytest.raises(ValueError):
            data.batch.numerical_re[0, 0] = 1.0

    def test_subset_changes_role(self):
        schema = small_schema()
        data = dk.Dataset(schema, random_batch(schema, 10), dk.Role.TRAIN)
        sub = data.subset([1, 3], role=dk.Role.SUPPORT)
        assert len(sub) == 2
        assert sub.role is dk.Role.SUPPORT
        np.testing.assert_array_equal(sub.batch.record_id, [2, 4])

    def test_filter_property_type(self, corpus):
        unlabeled = corpus[0]
        houses = unlabeled.filter_property_type("house")
        assert 0 < len(houses) < len(unlabeled)
        assert set(houses.batch.property_type) == {"house"}
        assert unlabeled.filter_property_type(None) is unlabeled

    def test_labeled_role_needs_prices(self):
        schema = small_schema()
        with pytest.raises(dk.ValidationError):
            dk.Dataset(schema, random_batch(schema, 4, priced=False), dk.Role.TEST)

    def test_wrong_width_rejected(self):
        with pytest.raises(dk.SchemaError):
            dk.Dataset(small_schema(), random_batch(dk.default_schema(), 3))


class TestNormalizer:
    def test_fit_and_apply(self):
        schema = small_schema()
        data = dk.Dataset(schema, random_batch(schema, 200, seed=1))
        norm = dk.fit_normalizer(data)
        out = dk.apply_normalizer(norm, data)
        assert out.normalized
        matrix = out.batch.numerical_matrix()
        np.testing.assert_allclose(matrix.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(matrix.std(axis=0), 1.0, atol=1e-12)
        np.testing.assert_array_equal(out.batch.categorical_re, data.batch.categorical_re)
        np.testing.assert_array_equal(out.prices, data.prices)

    def test_two_point_column(self):
        schema = small_schema()
        batch = random_batch(schema, 2)
        matrix = batch.numerical_matrix().copy()
        matrix[:, 0] = [1.0, 3.0]
        norm = dk.fit_normalizer(dk.Dataset(schema, batch.with_numerical(matrix)))
        assert norm.mean[0] == pytest.approx(2.0)
        assert norm.std[0] == pytest.approx(1.0)

    def test_constant_column_stays_finite(self):
        schema = small_schema()
        batch = random_batch(schema, 20)
        matrix = batch.numerical_matrix().copy()
        matrix[:, 0] = 5.0
        data = dk.Dataset(schema, batch.with_numerical(matrix))
        norm = dk.fit_normalizer(data)
        assert norm.std[0] == pytest.approx(dk.schema.STD_FLOOR)
        out = dk.apply_normalizer(norm, data)
        assert np.isfinite(out.batch.numerical_matrix()).all()
        np.testing.assert_array_equal(out.batch.numerical_re[:, 0], 0.0)

    def test_invert(self):
        schema = small_schema()
        data = dk.Dataset(schema, random_batch(schema, 30))
        norm = dk.fit_normalizer(data)
        back = norm.invert(norm.apply(data))
        np.testing.assert_allclose(
            back.batch.numerical_matrix(), data.batch.numerical_matrix(), atol=1e-12
        )

    def test_schema_mismatch(self):
        schema = small_schema()
        norm = dk.fit_normalizer(dk.Dataset(schema, random_batch(schema, 5)))
        other = dk.default_schema()
        with pytest.raises(dk.SchemaError):
            dk.apply_normalizer(norm, dk.Dataset(other, random_batch(other, 5)))

    def test_empty_dataset(self):
        schema = small_schema()
        with pytest.raises(dk.DataError):
            dk.fit_normalizer(dk.Dataset(schema, dk.Batch.empty(schema)))

    def test_target_scaler(self):
        schema = small_schema()
        data = dk.Dataset(schema, random_batch(schema, 50), dk.Role.TRAIN)
        scaler = dk.fit_target_scaler(data)
        z = scaler.transform(data.prices.reshape(-1, 1))[:, 0]
        assert z.mean() == pytest.approx(0.0, abs=1e-12)
        assert z.std() == pytest.approx(1.0)
