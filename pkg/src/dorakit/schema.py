"""Dataset schema, CSV ingest, and standard normalization.

A :class:`FeatureSchema` names the four feature families (numerical real
estate, categorical real estate, economic/geographic, PoI) and the
town -> city table. Records travel in column-major :class:`Batch` objects;
a :class:`Dataset` is a batch plus its schema and role.

CSV layout
----------
One header row, UTF-8, ``.`` as decimal separator. Columns in schema order::

    id, town, city, property_type, <numerical_re...>, <categorical_re...>,
    <econ_geo...>, <poi...>, price

``id`` and ``property_type`` are optional. ``price`` may be absent or empty
only for the unlabeled role. Categorical cells hold vocabulary tokens; index
0 of every vocabulary is the reserved ``<unk>`` token.

Schema file
-----------
INI-style key-value text::

    [families]
    numerical_re = nr_0, nr_1
    econ_geo = eg_0
    poi = YIMBY_100, NIMBY_100

    [categorical]
    cat_0 = <unk>, brick, concrete

    [towns]
    0 = 0
    1 = 0
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .errors import DataError, ParseError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

UNKNOWN_TOKEN = "<unk>"
UNKNOWN_INDEX = 0
STD_FLOOR = 1e-8
DEFAULT_PROPERTY_TYPE = "all"

# Non-feature columns, in the order they lead the CSV.
ID_COLUMN = "id"
TOWN_COLUMN = "town"
CITY_COLUMN = "city"
TYPE_COLUMN = "property_type"
PRICE_COLUMN = "price"


class Role(str, Enum):
    """What a dataset is used for; decides whether prices are mandatory."""

    UNLABELED = "unlabeled"
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
    SUPPORT = "support"

    @property
    def requires_price(self) -> bool:
        return self is not Role.UNLABELED


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CategoricalFeature:
    """One categorical column and its ordered vocabulary (``<unk>`` first)."""

    name: str
    vocabulary: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.vocabulary or self.vocabulary[0] != UNKNOWN_TOKEN:
            raise SchemaError(f"vocabulary of {self.name!r} must start with {UNKNOWN_TOKEN!r}")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise SchemaError(f"vocabulary of {self.name!r} has duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    def index(self) -> dict[str, int]:
        return {token: i for i, token in enumerate(self.vocabulary)}


@dataclass(frozen=True)
class FeatureSchema:
    """Declarative description of the four feature families and the town table.

    Parameters
    ----------
    numerical_re : tuple of str
        Numerical real estate column names.
    categorical_re : tuple of CategoricalFeature
        Categorical real estate columns with their vocabularies.
    econ_geo : tuple of str
        Economic and geographic column names.
    poi : tuple of str
        PoI count column names.
    town_city : tuple of int
        ``town_city[t]`` is the city of town ``t``. Town ids are therefore
        dense from 0; city ids must be dense as well.
    """

    numerical_re: tuple[str, ...]
    categorical_re: tuple[CategoricalFeature, ...]
    econ_geo: tuple[str, ...]
    poi: tuple[str, ...]
    town_city: tuple[int, ...]

    def __post_init__(self) -> None:
        for family, cols in (
            ("numerical_re", self.numerical_re),
            ("categorical_re", self.categorical_re),
            ("econ_geo", self.econ_geo),
            ("poi", self.poi),
            ("towns", self.town_city),
        ):
            if len(cols) < 1:
                raise SchemaError(f"{family} must have at least one entry")
        names = self.feature_columns
        if len(set(names)) != len(names):
            raise SchemaError("feature column names must be unique")
        reserved = {ID_COLUMN, TOWN_COLUMN, CITY_COLUMN, TYPE_COLUMN, PRICE_COLUMN}
        clash = reserved.intersection(names)
        if clash:
            raise SchemaError(f"feature columns use reserved names: {sorted(clash)}")
        cities = set(self.town_city)
        if min(cities) < 0 or cities != set(range(len(cities))):
            raise SchemaError("city ids must be dense from 0")

    # -- sizes ---------------------------------------------------------------

    @property
    def num_numerical_re(self) -> int:
        return len(self.numerical_re)

    @property
    def num_categorical_re(self) -> int:
        return len(self.categorical_re)

    @property
    def num_econ_geo(self) -> int:
        return len(self.econ_geo)

    @property
    def num_poi(self) -> int:
        return len(self.poi)

    @property
    def n_towns(self) -> int:
        return len(self.town_city)

    @property
    def n_cities(self) -> int:
        return max(self.town_city) + 1

    @property
    def vocabulary_sizes(self) -> tuple[int, ...]:
        return tuple(c.size for c in self.categorical_re)

    @property
    def categorical_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categorical_re)

    @property
    def numerical_columns(self) -> tuple[str, ...]:
        """All real-valued feature columns, in the order NR, Econ&Geo, PoI."""
        return self.numerical_re + self.econ_geo + self.poi

    @property
    def feature_columns(self) -> tuple[str, ...]:
        return self.numerical_re + self.categorical_names + self.econ_geo + self.poi

    @property
    def csv_columns(self) -> tuple[str, ...]:
        return (
            ID_COLUMN,
            TOWN_COLUMN,
            CITY_COLUMN,
            TYPE_COLUMN,
            *self.feature_columns,
            PRICE_COLUMN,
        )

    def city_of(self, town: int) -> int:
        return self.town_city[town]

    def categorical(self, name: str) -> tuple[int, CategoricalFeature]:
        """Return ``(position, feature)`` of the categorical column ``name``."""
        for j, feat in enumerate(self.categorical_re):
            if feat.name == name:
                return j, feat
        raise SchemaError(f"no categorical column named {name!r}")

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "numerical_re": list(self.numerical_re),
            "categorical_re": [[c.name, list(c.vocabulary)] for c in self.categorical_re],
            "econ_geo": list(self.econ_geo),
            "poi": list(self.poi),
            "town_city": list(self.town_city),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FeatureSchema:
        try:
            return cls(
                numerical_re=tuple(data["numerical_re"]),
                categorical_re=tuple(
                    CategoricalFeature(name, tuple(vocab)) for name, vocab in data["categorical_re"]
                ),
                econ_geo=tuple(data["econ_geo"]),
                poi=tuple(data["poi"]),
                town_city=tuple(int(c) for c in data["town_city"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed schema description: {exc}") from exc

    def digest(self) -> str:
        """Stable SHA-256 over the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_counts(
        cls,
        num_numerical_re: int,
        categorical_sizes: Sequence[int],
        num_econ_geo: int,
        num_poi: int,
        town_city: Sequence[int],
        *,
        poi_names: Optional[Sequence[str]] = None,
    ) -> FeatureSchema:
        """Build a schema with generated column names and placeholder tokens.

        ``categorical_sizes`` count the ``<unk>`` slot, so a size of 5 yields
        ``<unk>`` plus four tokens ``c1``..``c4``.
        """
        if any(size < 1 for size in categorical_sizes):
            raise SchemaError("vocabulary sizes must be >= 1")
        if poi_names is not None and len(poi_names) != num_poi:
            raise SchemaError("poi_names length does not match num_poi")
        return cls(
            numerical_re=tuple(f"nr_{i}" for i in range(num_numerical_re)),
            categorical_re=tuple(
                CategoricalFeature(
                    f"cat_{j}", (UNKNOWN_TOKEN, *(f"c{k}" for k in range(1, size)))
                )
                for j, size in enumerate(categorical_sizes)
            ),
            econ_geo=tuple(f"eg_{i}" for i in range(num_econ_geo)),
            poi=tuple(poi_names) if poi_names is not None else tuple(
                f"poi_{i}" for i in range(num_poi)
            ),
            town_city=tuple(int(c) for c in town_city),
        )


def default_schema(vocabulary_size: int = 8) -> FeatureSchema:
    """Schema with the full-size family counts: 23 / 16 / 9 / 16, 350 towns in 22 cities.

    Column names are placeholders; only the counts follow the reference data.
    """
    from .poi import RadiusProfile, poi_column_names

    # 20 cities of 16 towns and 2 of 15 -> 350 towns.
    town_city = [c for c in range(22) for _ in range(16 if c < 20 else 15)]
    return FeatureSchema.from_counts(
        23,
        [vocabulary_size] * 16,
        9,
        16,
        town_city,
        poi_names=poi_column_names(RadiusProfile()),
    )


# ---------------------------------------------------------------------------
# Records, batches, datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PropertyRecord:
    """One transaction."""

    numerical_re: NDArray[np.float64]
    categorical_re: NDArray[np.int64]
    econ_geo: NDArray[np.float64]
    poi: NDArray[np.float64]
    town: int
    city: int
    price: Optional[float] = None
    property_type: str = DEFAULT_PROPERTY_TYPE
    record_id: int = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PropertyRecord):
            return NotImplemented
        return (
            np.array_equal(self.numerical_re, other.numerical_re)
            and np.array_equal(self.categorical_re, other.categorical_re)
            and np.array_equal(self.econ_geo, other.econ_geo)
            and np.array_equal(self.poi, other.poi)
            and (self.town, self.city, self.price, self.property_type, self.record_id)
            == (other.town, other.city, other.price, other.property_type, other.record_id)
        )

    __hash__ = None  # type: ignore[assignment]


def _frozen(arr: NDArray[Any]) -> NDArray[Any]:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Batch:
    """Column-major storage for a set of records.

    Missing prices are stored as NaN. All arrays are read-only once the batch
    is built.
    """

    numerical_re: NDArray[np.float64]
    categorical_re: NDArray[np.int64]
    econ_geo: NDArray[np.float64]
    poi: NDArray[np.float64]
    town: NDArray[np.int64]
    city: NDArray[np.int64]
    price: NDArray[np.float64]
    property_type: NDArray[np.object_]
    record_id: NDArray[np.int64]

    def __post_init__(self) -> None:
        n = self.town.shape[0]
        for name in (
            "numerical_re",
            "categorical_re",
            "econ_geo",
            "poi",
            "city",
            "price",
            "property_type",
            "record_id",
        ):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(f"column block {name!r} has {arr.shape[0]} rows, expected {n}")
            _frozen(arr)
        _frozen(self.town)

    def __len__(self) -> int:
        return int(self.town.shape[0])

    @property
    def has_price(self) -> NDArray[np.bool_]:
        return ~np.isnan(self.price)

    def take(self, indices: Union[Sequence[int], NDArray[np.int64]]) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(
            numerical_re=self.numerical_re[idx],
            categorical_re=self.categorical_re[idx],
            econ_geo=self.econ_geo[idx],
            poi=self.poi[idx],
            town=self.town[idx],
            city=self.city[idx],
            price=self.price[idx],
            property_type=self.property_type[idx],
            record_id=self.record_id[idx],
        )

    def numerical_matrix(self) -> NDArray[np.float64]:
        """NR, Econ&Geo and PoI columns side by side (the normalizer's view)."""
        return np.hstack([self.numerical_re, self.econ_geo, self.poi])

    def with_numerical(self, matrix: NDArray[np.float64]) -> Batch:
        a = self.numerical_re.shape[1]
        b = a + self.econ_geo.shape[1]
        return replace(
            self,
            numerical_re=np.ascontiguousarray(matrix[:, :a]),
            econ_geo=np.ascontiguousarray(matrix[:, a:b]),
            poi=np.ascontiguousarray(matrix[:, b:]),
        )

    @classmethod
    def empty(cls, schema: FeatureSchema) -> Batch:
        return cls(
            numerical_re=np.zeros((0, schema.num_numerical_re)),
            categorical_re=np.zeros((0, schema.num_categorical_re), dtype=np.int64),
            econ_geo=np.zeros((0, schema.num_econ_geo)),
            poi=np.zeros((0, schema.num_poi)),
            town=np.zeros(0, dtype=np.int64),
            city=np.zeros(0, dtype=np.int64),
            price=np.zeros(0),
            property_type=np.zeros(0, dtype=object),
            record_id=np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def from_records(cls, records: Sequence[PropertyRecord], schema: FeatureSchema) -> Batch:
        if not records:
            return cls.empty(schema)
        return cls(
            numerical_re=np.array([r.numerical_re for r in records], dtype=np.float64),
            categorical_re=np.array([r.categorical_re for r in records], dtype=np.int64),
            econ_geo=np.array([r.econ_geo for r in records], dtype=np.float64),
            poi=np.array([r.poi for r in records], dtype=np.float64),
            town=np.array([r.town for r in records], dtype=np.int64),
            city=np.array([r.city for r in records], dtype=np.int64),
            price=np.array(
                [np.nan if r.price is None else r.price for r in records], dtype=np.float64
            ),
            property_type=np.array([r.property_type for r in records], dtype=object),
            record_id=np.array([r.record_id for r in records], dtype=np.int64),
        )

    def records(self) -> tuple[PropertyRecord, ...]:
        out = []
        for i in range(len(self)):
            price = self.price[i]
            out.append(
                PropertyRecord(
                    numerical_re=self.numerical_re[i].copy(),
                    categorical_re=self.categorical_re[i].copy(),
                    econ_geo=self.econ_geo[i].copy(),
                    poi=self.poi[i].copy(),
                    town=int(self.town[i]),
                    city=int(self.city[i]),
                    price=None if np.isnan(price) else float(price),
                    property_type=str(self.property_type[i]),
                    record_id=int(self.record_id[i]),
                )
            )
        return tuple(out)


def _check_batch(batch: Batch, schema: FeatureSchema, role: Role, normalized: bool) -> None:
    """Shape and value rules shared by every way of building a Dataset."""
    widths = (
        ("numerical_re", batch.numerical_re, schema.num_numerical_re),
        ("categorical_re", batch.categorical_re, schema.num_categorical_re),
        ("econ_geo", batch.econ_geo, schema.num_econ_geo),
        ("poi", batch.poi, schema.num_poi),
    )
    for name, arr, width in widths:
        if arr.ndim != 2 or arr.shape[1] != width:
            raise SchemaError(f"{name} has shape {arr.shape}, schema expects width {width}")
    if len(batch) == 0:
        return
    sizes = np.asarray(schema.vocabulary_sizes)
    bad = (batch.categorical_re < 0) | (batch.categorical_re >= sizes)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise ValidationError("category index outside its vocabulary", row=row + 1)
    if not normalized and (batch.poi < 0).any():
        row = int(np.argwhere(batch.poi < 0)[0][0])
        raise ValidationError("PoI counts must be >= 0", row=row + 1)
    if (batch.town < 0).any() or (batch.town >= schema.n_towns).any():
        raise ValidationError(f"town ids must lie in [0, {schema.n_towns})")
    expected_city = np.asarray(schema.town_city)[batch.town]
    if not np.array_equal(expected_city, batch.city):
        row = int(np.argmax(expected_city != batch.city))
        raise ValidationError("city does not match the town's city in the schema", row=row + 1)
    priced = batch.has_price
    if role.requires_price and not priced.all():
        row = int(np.argmin(priced))
        raise ValidationError(f"missing price in {role.value} data", row=row + 1)
    if (batch.price[priced] <= 0).any():
        row = int(np.argwhere(priced & (batch.price <= 0))[0][0])
        raise ValidationError("price must be > 0", row=row + 1)


@dataclass(frozen=True, eq=False)
class Dataset:
    """A schema-checked batch of records with a role tag.

    ``unknown_count`` is the number of categorical cells that were mapped to
    ``<unk>`` while loading. ``normalized`` is set once the numerical columns
    have been standardized.
    """

    schema: FeatureSchema
    batch: Batch
    role: Role = Role.UNLABELED
    unknown_count: int = 0
    normalized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        _check_batch(self.batch, self.schema, self.role, self.normalized)

    def __len__(self) -> int:
        return len(self.batch)

    @classmethod
    def from_records(
        cls, schema: FeatureSchema, records: Sequence[PropertyRecord], role: Role = Role.UNLABELED
    ) -> Dataset:
        return cls(schema, Batch.from_records(records, schema), role)

    @property
    def records(self) -> tuple[PropertyRecord, ...]:
        return self.batch.records()

    @property
    def prices(self) -> NDArray[np.float64]:
        return self.batch.price

    def subset(
        self, indices: Union[Sequence[int], NDArray[np.int64]], role: Optional[Role] = None
    ) -> Dataset:
        return replace(self, batch=self.batch.take(indices), role=role or self.role)

    def with_role(self, role: Role) -> Dataset:
        return replace(self, role=role)

    def filter_property_type(self, property_type: Optional[str]) -> Dataset:
        """Keep only records of one property type (``None`` keeps everything)."""
        if property_type is None:
            return self
        mask = self.batch.property_type == property_type
        return self.subset(np.flatnonzero(mask))

    def with_prices(self, prices: NDArray[np.float64]) -> Dataset:
        price = np.asarray(prices, dtype=np.float64).copy()
        return replace(self, batch=replace(self.batch, price=price))


# ---------------------------------------------------------------------------
# CSV ingest / egress
# ---------------------------------------------------------------------------

_LINE_RE = re.compile(r"line (\d+)")


def _parse_floats(values: NDArray[Any], column: str, *, finite: bool = True) -> NDArray[np.float64]:
    try:
        out = np.asarray(values, dtype=np.float64)
    except ValueError:
        out = None
    if out is None or (finite and not np.isfinite(out).all()):
        for i, cell in enumerate(values):
            try:
                x = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", row=i + 1, column=column) from None
            if finite and not np.isfinite(x):
                raise ParseError(f"non-finite value {cell!r}", row=i + 1, column=column)
    assert out is not None
    return out


def _parse_ints(values: NDArray[Any], column: str) -> NDArray[np.int64]:
    out = np.empty(len(values), dtype=np.int64)
    for i, cell in enumerate(values):
        try:
            out[i] = int(cell)
        except ValueError:
            raise ParseError(
                f"expected an integer, got {cell!r}", row=i + 1, column=column
            ) from None
    return out


def _check_arity(path: PathLike) -> None:
    """Raise :class:`ParseError` on the first data row whose width differs from the header's."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = (fields for fields in csv.reader(fh) if fields)
        header = next(rows, None)
        if header is None:
            return
        for i, fields in enumerate(rows, start=1):
            if len(fields) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(fields)}", row=i
                )


def _read_frame(path: PathLike) -> pd.DataFrame:
    _check_arity(path)
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8"
        )
    except pd.errors.ParserError as exc:
        match = _LINE_RE.search(str(exc))
        row = int(match.group(1)) - 1 if match else None
        raise ParseError(f"malformed CSV ({exc})", row=row) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path}: file is empty") from exc
    return frame


def load_csv(
    path: PathLike, schema: FeatureSchema, role: Union[Role, str], *, strict: bool = False
) -> Dataset:
    """Load a CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        CSV file in the layout described in the module docstring.
    schema : FeatureSchema
        Column names and vocabularies.
    role : Role or str
        Labeled roles require a price on every row.
    strict : bool
        Raise :class:`ValidationError` on unseen categorical tokens instead of
        mapping them to ``<unk>``.

    Raises
    ------
    FileNotFoundError
        ``path`` does not exist.
    SchemaError
        Header does not match the schema.
    ParseError
        Wrong arity or an unparsable cell; the message names the data row.
    ValidationError
        Missing price in a labeled role, or a value breaks a schema rule.
    """
    role = Role(role)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    frame = _read_frame(path)
    header = list(frame.columns)

    required = [TOWN_COLUMN, CITY_COLUMN, *schema.feature_columns]
    if role.requires_price:
        required.append(PRICE_COLUMN)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    allowed = set(schema.csv_columns)
    extra = [c for c in header if c not in allowed]
    if extra:
        raise SchemaError(f"{path}: unexpected columns {extra}")

    n = len(frame)
    town = _parse_ints(frame[TOWN_COLUMN].to_numpy(), TOWN_COLUMN)
    city = _parse_ints(frame[CITY_COLUMN].to_numpy(), CITY_COLUMN)
    record_id = (
        _parse_ints(frame[ID_COLUMN].to_numpy(), ID_COLUMN)
        if ID_COLUMN in header
        else np.arange(1, n + 1, dtype=np.int64)
    )
    property_type = (
        frame[TYPE_COLUMN].to_numpy(dtype=object)
        if TYPE_COLUMN in header
        else np.full(n, DEFAULT_PROPERTY_TYPE, dtype=object)
    )

    def block(columns: Sequence[str]) -> NDArray[np.float64]:
        if n == 0:
            return np.zeros((0, len(columns)))
        return np.column_stack([_parse_floats(frame[c].to_numpy(), c) for c in columns])

    numerical_re = block(schema.numerical_re)
    econ_geo = block(schema.econ_geo)
    poi = block(schema.poi)

    unknown = 0
    categorical = np.zeros((n, schema.num_categorical_re), dtype=np.int64)
    for j, feat in enumerate(schema.categorical_re):
        lookup = feat.index()
        for i, token in enumerate(frame[feat.name].to_numpy()):
            idx = lookup.get(token)
            if idx is None:
                if strict:
                    raise ValidationError(
                        f"unseen category {token!r} in column {feat.name!r}", row=i + 1
                    )
                unknown += 1
                idx = UNKNOWN_INDEX
            categorical[i, j] = idx
    if unknown:
        logger.warning("%s: %d categorical value(s) mapped to %s", path, unknown, UNKNOWN_TOKEN)

    if PRICE_COLUMN in header:
        cells = frame[PRICE_COLUMN].to_numpy()
        price = np.full(n, np.nan)
        present = cells != ""
        if present.any():
            price[present] = _parse_floats(cells[present], PRICE_COLUMN)
        if role.requires_price and not present.all():
            raise ValidationError(
                f"missing price in {role.value} data", row=int(np.argmin(present)) + 1
            )
    else:
        price = np.full(n, np.nan)

    batch = Batch(
        numerical_re=numerical_re,
        categorical_re=categorical,
        econ_geo=econ_geo,
        poi=poi,
        town=town,
        city=city,
        price=price,
        property_type=property_type,
        record_id=record_id,
    )
    dataset = Dataset(schema, batch, role, unknown_count=unknown)
    logger.debug("loaded %d %s record(s) from %s", n, role.value, path)
    return dataset


def save_csv(dataset: Dataset, path: PathLike) -> None:
    """Write ``dataset`` in the canonical CSV layout (exact float round-trip)."""
    schema = dataset.schema
    b = dataset.batch
    columns: dict[str, Any] = {
        ID_COLUMN: b.record_id,
        TOWN_COLUMN: b.town,
        CITY_COLUMN: b.city,
        TYPE_COLUMN: b.property_type,
    }
    for k, name in enumerate(schema.numerical_re):
        columns[name] = b.numerical_re[:, k]
    for j, feat in enumerate(schema.categorical_re):
        vocab = np.asarray(feat.vocabulary, dtype=object)
        columns[feat.name] = vocab[b.categorical_re[:, j]]
    for k, name in enumerate(schema.econ_geo):
        columns[name] = b.econ_geo[:, k]
    for k, name in enumerate(schema.poi):
        columns[name] = b.poi[:, k]
    columns[PRICE_COLUMN] = b.price
    frame = pd.DataFrame(columns, columns=list(schema.csv_columns))
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="", encoding="utf-8")


def scan_vocabularies(schema: FeatureSchema, paths: Iterable[PathLike]) -> FeatureSchema:
    """Rebuild every categorical vocabulary from the tokens found in ``paths``.

    Tokens are sorted so the result does not depend on row order; ``<unk>``
    stays at index 0.
    """
    seen: dict[str, set[str]] = {name: set() for name in schema.categorical_names}
    for path in paths:
        frame = _read_frame(path)
        for name in seen:
            if name not in frame.columns:
                raise SchemaError(f"{path}: missing categorical column {name!r}")
            seen[name].update(frame[name].tolist())
    features = tuple(
        CategoricalFeature(name, (UNKNOWN_TOKEN, *sorted(seen[name] - {UNKNOWN_TOKEN})))
        for name in schema.categorical_names
    )
    return replace(schema, categorical_re=features)


# ---------------------------------------------------------------------------
# Schema file
# ---------------------------------------------------------------------------


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip())


def read_schema(path: PathLike) -> FeatureSchema:
    """Parse a schema file (see module docstring for the format)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        parser.read(path, encoding="utf-8")
        families = parser["families"]
        towns = parser["towns"]
        categorical = parser["categorical"]
        town_map = {int(k): int(v) for k, v in towns.items()}
    except (KeyError, ValueError, configparser.Error) as exc:
        raise SchemaError(f"{path}: malformed schema file ({exc})") from exc
    if sorted(town_map) != list(range(len(town_map))):
        raise SchemaError(f"{path}: town ids must be dense from 0")
    return FeatureSchema(
        numerical_re=_split_list(families.get("numerical_re", "")),
        categorical_re=tuple(
            CategoricalFeature(name, _split_list(vocab)) for name, vocab in categorical.items()
        ),
        econ_geo=_split_list(families.get("econ_geo", "")),
        poi=_split_list(families.get("poi", "")),
        town_city=tuple(town_map[t] for t in range(len(town_map))),
    )


def write_schema(schema: FeatureSchema, path: PathLike) -> None:
    for feat in schema.categorical_re:
        if any("," in token for token in feat.vocabulary):
            raise SchemaError(f"vocabulary of {feat.name!r} contains a comma")
    lines = [
        "[families]",
        f"numerical_re = {', '.join(schema.numerical_re)}",
        f"econ_geo = {', '.join(schema.econ_geo)}",
        f"poi = {', '.join(schema.poi)}",
        "",
        "[categorical]",
        *(f"{f.name} = {', '.join(f.vocabulary)}" for f in schema.categorical_re),
        "",
        "[towns]",
        *(f"{t} = {c}" for t, c in enumerate(schema.town_city)),
        "",
    ]
    Path(path).write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-column standardization ``(x - mean) / std`` with ``std >= floor``."""

    columns: tuple[str, ...]
    mean: NDArray[np.float64]
    std: NDArray[np.float64]
    floor: float = STD_FLOOR

    def __post_init__(self) -> None:
        if self.mean.shape != (len(self.columns),) or self.std.shape != (len(self.columns),):
            raise ValueError("mean/std must have one entry per column")
        if (self.std < self.floor).any():
            raise ValueError("std entries must be >= floor")
        _frozen(self.mean)
        _frozen(self.std)

    def transform(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, z: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def apply(self, data: Dataset) -> Dataset:
        return apply_normalizer(self, data)

    def invert(self, data: Dataset) -> Dataset:
        self._check(data.schema)
        batch = data.batch.with_numerical(self.inverse_transform(data.batch.numerical_matrix()))
        return replace(data, batch=batch, normalized=False)

    def _check(self, schema: FeatureSchema) -> None:
        if self.columns != schema.numerical_columns:
            raise SchemaError("normalizer columns do not match the dataset schema")


def _fit(columns: tuple[str, ...], matrix: NDArray[np.float64]) -> Normalizer:
    mean = matrix.mean(axis=0)
    std = np.maximum(matrix.std(axis=0), STD_FLOOR)
    return Normalizer(columns, mean, std)


def fit_normalizer(data: Dataset) -> Normalizer:
    """Fit population mean/std over every numerical column of ``data``."""
    if len(data) == 0:
        raise DataError("cannot fit a normalizer on an empty dataset")
    return _fit(data.schema.numerical_columns, data.batch.numerical_matrix())


def apply_normalizer(norm: Normalizer, data: Dataset) -> Dataset:
    """Standardize the numerical columns; categorical and label fields are untouched."""
    norm._check(data.schema)
    batch = data.batch.with_numerical(norm.transform(data.batch.numerical_matrix()))
    return replace(data, batch=batch, normalized=True)


def fit_target_scaler(support: Dataset) -> Normalizer:
    """Single-column normalizer over the prices of ``support``."""
    prices = support.prices
    if len(prices) == 0:
        raise DataError("cannot fit a target scaler on an empty dataset")
    if np.isnan(prices).any():
        raise ValidationError("every record needs a price to fit the target scaler",
                              row=int(np.argmax(np.isnan(prices))) + 1)
    return _fit((PRICE_COLUMN,), prices.reshape(-1, 1))
