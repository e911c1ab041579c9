"""PoI converter: facility point sets -> per-property radius count features.

Facilities are split into YIMBY (desirable) and NIMBY (undesirable) classes.
For each radius ``r`` of a :class:`RadiusProfile` the converter counts the
facilities of each class whose planar Euclidean distance to the property is
at most ``r`` (boundary inclusive). The output vector holds all YIMBY counts
followed by all NIMBY counts, so a profile of 8 radii gives 16 features named
``YIMBY_<r>`` / ``NIMBY_<r>``.

Coordinates must already be projected to meters (easting/northing). Lat/lon
degrees are not rejected at runtime but give meaningless counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

DEFAULT_RADII = (100.0, 250.0, 500.0, 750.0, 1000.0, 1500.0, 2000.0, 3000.0)

# x coordinates, y coordinates, "is YIMBY" mask
Bucket = tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]


class PoiClass(str, Enum):
    YIMBY = "YIMBY"
    NIMBY = "NIMBY"


@dataclass(frozen=True)
class PoiPoint:
    """A facility at projected planar coordinates (meters)."""

    x: float
    y: float
    klass: PoiClass

    def __post_init__(self) -> None:
        object.__setattr__(self, "klass", PoiClass(self.klass))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite PoI coordinate ({self.x}, {self.y})")


@dataclass(frozen=True)
class RadiusProfile:
    """Ascending query radii in meters; one feature per radius and class."""

    radii: tuple[float, ...] = DEFAULT_RADII

    def __post_init__(self) -> None:
        radii = tuple(float(r) for r in self.radii)
        if not radii:
            raise ValueError("radius profile needs at least one radius")
        if any(r <= 0 for r in radii):
            raise ValueError("radii must be > 0")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly increasing")
        object.__setattr__(self, "radii", radii)

    @property
    def n_features(self) -> int:
        return 2 * len(self.radii)

    @property
    def max_radius(self) -> float:
        return self.radii[-1]


def poi_column_names(profile: RadiusProfile) -> tuple[str, ...]:
    def fmt(r: float) -> str:
        return str(int(r)) if float(r).is_integer() else str(r)

    return tuple(f"{k.value}_{fmt(r)}" for k in PoiClass for r in profile.radii)


@dataclass(frozen=True, eq=False)
class PoiIndex:
    """Uniform grid over facility points; cell size is the largest radius.

    Each bucket keeps its points as parallel coordinate arrays plus a boolean
    "is YIMBY" mask. Duplicates are kept (multiset semantics).
    """

    profile: RadiusProfile
    cell_size: float
    buckets: dict[tuple[int, int], Bucket] = field(repr=False)
    size: int = 0

    def __len__(self) -> int:
        return self.size

    def _cell(self, x: float, y: float) -> tuple[int, int]:
        return math.floor(x / self.cell_size), math.floor(y / self.cell_size)

    def candidates(
        self, x: float, y: float
    ) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
        """Points in every cell the largest query disc can touch."""
        r = self.profile.max_radius
        # One extra ring absorbs floor() rounding right at cell edges.
        cx0, cy0 = self._cell(x - r, y - r)
        cx1, cy1 = self._cell(x + r, y + r)
        xs, ys, yimby = [], [], []
        for cx in range(cx0 - 1, cx1 + 2):
            for cy in range(cy0 - 1, cy1 + 2):
                bucket = self.buckets.get((cx, cy))
                if bucket is not None:
                    xs.append(bucket[0])
                    ys.append(bucket[1])
                    yimby.append(bucket[2])
        if not xs:
            empty = np.zeros(0)
            return empty, empty, np.zeros(0, dtype=bool)
        return np.concatenate(xs), np.concatenate(ys), np.concatenate(yimby)


def build_index(points: Iterable[PoiPoint], profile: RadiusProfile) -> PoiIndex:
    """Bucket ``points`` into a grid whose cells are ``profile.max_radius`` wide."""
    cell = profile.max_radius
    grouped: dict[tuple[int, int], list[PoiPoint]] = {}
    n = 0
    for p in points:
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise ValueError(f"non-finite PoI coordinate ({p.x}, {p.y})")
        key = (math.floor(p.x / cell), math.floor(p.y / cell))
        grouped.setdefault(key, []).append(p)
        n += 1
    buckets = {
        key: (
            np.array([p.x for p in pts], dtype=np.float64),
            np.array([p.y for p in pts], dtype=np.float64),
            np.array([p.klass is PoiClass.YIMBY for p in pts], dtype=bool),
        )
        for key, pts in grouped.items()
    }
    return PoiIndex(profile=profile, cell_size=cell, buckets=buckets, size=n)


def _counts(
    distances: NDArray[np.float64], yimby: NDArray[np.bool_], radii: Sequence[float]
) -> NDArray[np.float64]:
    r = np.asarray(radii, dtype=np.float64)[:, None]
    inside = distances[None, :] <= r
    return np.concatenate(
        [(inside & yimby).sum(axis=1), (inside & ~yimby).sum(axis=1)]
    ).astype(np.float64)


def poi_convert(
    index: PoiIndex, location: tuple[float, float], profile: RadiusProfile
) -> NDArray[np.float64]:
    """Cumulative YIMBY then NIMBY counts around ``location``.

    Raises
    ------
    ValueError
        ``location`` is not finite, or ``profile`` differs from the index's.
    """
    x, y = float(location[0]), float(location[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite query location ({x}, {y})")
    if profile != index.profile:
        raise ValueError("query profile differs from the profile the index was built with")
    xs, ys, yimby = index.candidates(x, y)
    return _counts(np.hypot(xs - x, ys - y), yimby, profile.radii)


def poi_convert_many(
    index: PoiIndex, locations: NDArray[np.float64], profile: RadiusProfile
) -> NDArray[np.float64]:
    """Apply :func:`poi_convert` to each ``(x, y)`` row of ``locations``."""
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((len(locations), profile.n_features))
    for i, (x, y) in enumerate(locations):
        out[i] = poi_convert(index, (x, y), profile)
    return out
