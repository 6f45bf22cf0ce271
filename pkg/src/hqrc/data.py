"""Gridded time-series ingestion, masking, region selection and synthesis.

The on-disk container (GSF) is a deliberately simple, bit-exact format:

    offset 0   8 bytes   magic ``b"GSF1...."``
    offset 8   u64 LE    byte length of the JSON header
    offset 16  JSON      UTF-8 object with keys ``n_time``, ``n_lat``,
                         ``n_lon``, ``lat0``, ``lon0``, ``dlat``, ``dlon``,
                         ``cadence``, ``mask_encoding``
    then                 the keep-mask as packed bits (numpy ``packbits``,
                         MSB-first, row-major over the lat x lon grid)
    then                 snapshots as little-endian 32-bit floats,
                         time-major C order (t, lat, lon), all cells

The header is cross-checked against the payload size and parse errors report
byte offsets.  Masked (land) cells may hold any value, including NaN;
unmasked cells must be finite.  Converting the upstream NetCDF sea-surface
dataset into this container is documented in the README rather than
implemented here.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

GSF_MAGIC = b"GSF1...."
_HEADER_KEYS = ("n_time", "n_lat", "n_lon", "lat0", "lon0", "dlat", "dlon")

# Global one-degree grid geometry (cell centers) used as the default for
# region lookups.
GLOBAL_LAT0 = -89.5
GLOBAL_LON0 = 0.5
GLOBAL_DLAT = 1.0
GLOBAL_DLON = 1.0

# Snapshots from the weekly series' start date up to and including
# 1989-12-31; tests beyond that index belong to the evaluation span.
DEFAULT_TRAIN_SNAPSHOTS = 428


class GSFError(ValueError):
    """Raised for malformed GSF files; messages carry byte offsets."""


@dataclass
class GriddedSeries:
    """A (time, lat, lon) grid of real values plus its geometry.

    ``lat0``/``lon0`` are the centers of the first row/column and
    ``dlat``/``dlon`` the spacings, all in degrees.
    """

    values: np.ndarray
    lat0: float = GLOBAL_LAT0
    lon0: float = GLOBAL_LON0
    dlat: float = GLOBAL_DLAT
    dlon: float = GLOBAL_DLON
    cadence: str = "weekly"

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"values must be (time, lat, lon), got shape {self.values.shape}")

    @property
    def n_time(self) -> int:
        return self.values.shape[0]

    @property
    def n_lat(self) -> int:
        return self.values.shape[1]

    @property
    def n_lon(self) -> int:
        return self.values.shape[2]

    def lat_centers(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.n_lat)

    def lon_centers(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.n_lon)


@dataclass
class LandMask:
    """Boolean keep-mask over the grid; True marks ocean cells."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("mask must be a 2-d (lat, lon) boolean array")

    @property
    def n_kept(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def all_ocean(cls, n_lat: int, n_lon: int) -> "LandMask":
        return cls(mask=np.ones((n_lat, n_lon), dtype=bool))


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train/test index ranges, half-open, train first."""

    train_range: tuple[int, int]
    test_range: tuple[int, int]

    def __post_init__(self):
        t0, t1 = self.train_range
        e0, e1 = self.test_range
        if not (0 <= t0 < t1 <= e0 < e1):
            raise ValueError("split ranges must be ordered, disjoint and non-empty "
                             "with train preceding test")
        if t1 != e0:
            raise ValueError("split ranges must be contiguous")

    @classmethod
    def from_train_length(cls, n_train: int, n_time: int) -> "SplitSpec":
        return cls(train_range=(0, n_train), test_range=(n_train, n_time))


@dataclass(frozen=True)
class RegionSpec:
    """Inclusive latitude/longitude bounds in degrees."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("region bounds must satisfy min < max")


# The evaluation window used for region-restricted error reporting.
EAST_PACIFIC = RegionSpec(lat_min=-10.0, lat_max=10.0, lon_min=200.0, lon_max=250.0)


def _mask_n_bytes(n_cells: int) -> int:
    return (n_cells + 7) // 8


def write_series(path, series: GriddedSeries, mask: LandMask) -> None:
    """Serialize to GSF.  Values are stored as float32; writing float64 data
    is lossy but reading back and re-writing is byte-exact."""
    if mask.mask.shape != (series.n_lat, series.n_lon):
        raise ValueError(f"mask shape {mask.mask.shape} does not match grid "
                         f"({series.n_lat}, {series.n_lon})")
    header = {
        "n_time": series.n_time,
        "n_lat": series.n_lat,
        "n_lon": series.n_lon,
        "lat0": series.lat0,
        "lon0": series.lon0,
        "dlat": series.dlat,
        "dlon": series.dlon,
        "cadence": series.cadence,
        "mask_encoding": "packbits-msb-row-major",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GSF_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(np.packbits(mask.mask.reshape(-1)).tobytes())
        fh.write(np.ascontiguousarray(series.values, dtype="<f4").tobytes())


def load_series(path) -> tuple[GriddedSeries, LandMask]:
    """Parse a GSF file, cross-checking the header against the payload."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise GSFError(f"file too short ({len(blob)} bytes) for the 16-byte preamble "
                       "at offset 0")
    if blob[:8] != GSF_MAGIC:
        raise GSFError(f"bad magic {blob[:8]!r} at offset 0; expected {GSF_MAGIC!r}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise GSFError(f"header length {header_len} at offset 8 exceeds file size "
                       f"{len(blob)}")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GSFError(f"header at offset 16 is not valid JSON: {exc}") from exc
    for key in _HEADER_KEYS:
        if key not in header:
            raise GSFError(f"header at offset 16 is missing field {key!r}")
    n_time, n_lat, n_lon = (int(header[k]) for k in ("n_time", "n_lat", "n_lon"))
    if min(n_time, n_lat, n_lon) < 1:
        raise GSFError("header dimensions must be positive")

    mask_offset = 16 + header_len
    mask_bytes = _mask_n_bytes(n_lat * n_lon)
    data_offset = mask_offset + mask_bytes
    expected = data_offset + 4 * n_time * n_lat * n_lon
    if len(blob) != expected:
        raise GSFError(f"payload size mismatch: file is {len(blob)} bytes but the "
                       f"header implies {expected} (snapshots start at offset "
                       f"{data_offset})")

    packed = np.frombuffer(blob, dtype=np.uint8, count=mask_bytes, offset=mask_offset)
    mask = np.unpackbits(packed)[:n_lat * n_lon].reshape(n_lat, n_lon).astype(bool)
    values = np.frombuffer(blob, dtype="<f4", count=n_time * n_lat * n_lon,
                           offset=data_offset).reshape(n_time, n_lat, n_lon).copy()

    bad = ~np.isfinite(values[:, mask])
    if bad.any():
        t, cell = np.argwhere(bad)[0]
        lat, lon = np.argwhere(mask)[cell]
        offset = data_offset + 4 * (t * n_lat * n_lon + lat * n_lon + lon)
        raise GSFError(f"non-finite value at unmasked cell (t={t}, lat={lat}, "
                       f"lon={lon}), byte offset {offset}")

    series = GriddedSeries(values=values, lat0=float(header["lat0"]),
                           lon0=float(header["lon0"]), dlat=float(header["dlat"]),
                           dlon=float(header["dlon"]),
                           cadence=str(header.get("cadence", "weekly")))
    return series, LandMask(mask=mask)


def flatten(series: GriddedSeries, mask: LandMask) -> np.ndarray:
    """Kept cells as float64 snapshot columns ``(n_kept, n_time)``."""
    if mask.mask.shape != (series.n_lat, series.n_lon):
        raise ValueError(f"mask shape {mask.mask.shape} does not match grid "
                         f"({series.n_lat}, {series.n_lon})")
    if mask.n_kept == 0:
        raise ValueError("mask keeps no cells; nothing to flatten")
    flat = series.values.reshape(series.n_time, -1)[:, mask.mask.reshape(-1)]
    return flat.T.astype(float)


def unflatten(columns: np.ndarray, mask: LandMask, sentinel: float = np.nan) -> np.ndarray:
    """Inverse of :func:`flatten`; masked cells are filled with ``sentinel``.

    Accepts ``(n_kept,)`` -> ``(n_lat, n_lon)`` or ``(n_kept, T)`` ->
    ``(T, n_lat, n_lon)``.
    """
    columns = np.asarray(columns, dtype=float)
    single = columns.ndim == 1
    if single:
        columns = columns[:, None]
    if columns.shape[0] != mask.n_kept:
        raise ValueError(f"got {columns.shape[0]} values per snapshot, mask keeps "
                         f"{mask.n_kept}")
    n_lat, n_lon = mask.mask.shape
    grids = np.full((columns.shape[1], n_lat * n_lon), sentinel)
    grids[:, mask.mask.reshape(-1)] = columns.T
    grids = grids.reshape(-1, n_lat, n_lon)
    return grids[0] if single else grids


def region_indices(mask: LandMask, region: RegionSpec, *,
                   lat0: float = GLOBAL_LAT0, lon0: float = GLOBAL_LON0,
                   dlat: float = GLOBAL_DLAT, dlon: float = GLOBAL_DLON) -> np.ndarray:
    """Indices (into the flattened kept-cell vector) of cells whose centers
    fall inside the region, bounds inclusive.

    Geometry defaults to the global one-degree grid; pass the series'
    geometry for other grids.
    """
    n_lat, n_lon = mask.mask.shape
    lats = lat0 + dlat * np.arange(n_lat)
    lons = lon0 + dlon * np.arange(n_lon)
    in_region = ((lats >= region.lat_min) & (lats <= region.lat_max))[:, None] & \
                ((lons >= region.lon_min) & (lons <= region.lon_max))[None, :]
    kept = mask.mask.reshape(-1)
    selected = (in_region.reshape(-1) & kept)[kept]
    indices = np.flatnonzero(selected)
    if indices.size == 0:
        raise ValueError("region selects no kept cells")
    return indices


def _grid_shape(n_points: int) -> tuple[int, int]:
    n_lat = int(np.sqrt(n_points))
    while n_points % n_lat:
        n_lat -= 1
    return n_lat, n_points // n_lat


def synth_series(kind: str, n_points: int, n_time: int, seed: int,
                 n_modes: int = 5) -> GriddedSeries:
    """Deterministic desk-scale stand-ins for the real gridded dataset.

    ``sinusoid-mix`` superposes ``n_modes`` orthonormal random spatial
    patterns with sinusoidal time courses of distinct periods on top of a
    static background, so the mean-subtracted series has rank at most
    ``n_modes`` and a known modal spectrum.  ``noisy-seasonal`` adds white
    noise to a two-harmonic seasonal signal and is full rank.

    The grid is the most square factorization of ``n_points``, all ocean.
    """
    rng = np.random.default_rng(seed)
    n_lat, n_lon = _grid_shape(n_points)
    t = np.arange(n_time)
    background = 15.0 + 2.0 * rng.standard_normal(n_points)

    if kind == "sinusoid-mix":
        patterns, _ = np.linalg.qr(rng.standard_normal((n_points, n_modes)))
        periods = 104.0 / (2.0 + np.arange(n_modes))
        amplitudes = 4.0 * 0.7 ** np.arange(n_modes)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
        courses = amplitudes * np.sin(2.0 * np.pi * t[:, None] / periods + phases)
        field = background + courses @ patterns.T
    elif kind == "noisy-seasonal":
        pattern_a = rng.standard_normal(n_points)
        pattern_b = rng.standard_normal(n_points)
        seasonal = (3.0 * np.sin(2.0 * np.pi * t / 52.0)[:, None] * pattern_a +
                    1.0 * np.sin(4.0 * np.pi * t / 52.0)[:, None] * pattern_b)
        field = background + seasonal + 0.3 * rng.standard_normal((n_time, n_points))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; "
                         "expected 'sinusoid-mix' or 'noisy-seasonal'")

    values = field.reshape(n_time, n_lat, n_lon)
    return GriddedSeries(values=values, lat0=-(n_lat - 1) / 2.0, lon0=0.5,
                         dlat=1.0, dlon=1.0)
