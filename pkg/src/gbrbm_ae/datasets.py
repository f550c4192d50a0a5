"""UAV-ground RSS datasets: synthetic generation, CSV I/O, scaling, splits, bins, scoring.

Each row carries nine features and the received signal strength in dBm:

====  ==================  =========
col   meaning             unit
====  ==================  =========
N1    uav_lat             degrees
N2    uav_lon             degrees
N3    uav_elev_angle      degrees
N4    cell_lat            degrees
N5    cell_lon            degrees
N6    cell_elev           m
N7    cell_building       m
N8    mast_height         m
N9    uav_alt             m
--    rss                 dBm
====  ==================  =========
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

FEATURES = (
    "uav_lat", "uav_lon", "uav_elev_angle", "cell_lat", "cell_lon",
    "cell_elev", "cell_building", "mast_height", "uav_alt",
)
TARGET = "rss"
COLUMNS = FEATURES + (TARGET,)
EARTH_RADIUS_M = 6_371_000.0
STDEV_FLOOR = 1e-9
MAX_UAV_ALT_M = 300.0


class SchemaError(ValueError):
    """Raised for CSV files that do not follow the dataset schema."""


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    rss: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.rss, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(FEATURES):
            raise SchemaError(f"features must have shape (N, {len(FEATURES)}), got {X.shape}")
        if y.shape != (X.shape[0],):
            raise SchemaError("one rss value per row required")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "rss", y)

    def __len__(self) -> int:
        return self.rss.size

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.rss[idx])


# --------------------------------------------------------------------------- #
# synthetic generator
# --------------------------------------------------------------------------- #
@dataclass
class SynthConfig:
    """Log-distance path loss with correlated shadowing and an altitude LoS gain.

    Flights take off from ``n_areas`` spots and climb to ``MAX_UAV_ALT_M`` while
    logging links to the ``cells_per_area`` nearest of ``n_cells`` base stations.
    Geometry is drawn from ``seed``; the shadowing field from ``noise_seed``.
    """

    n_train: int = 710
    n_test: int = 177
    path_loss_exponent: float = 3.0
    ref_loss_db: float = 40.0
    tx_power_dbm: float = 43.0
    shadowing_std_db: float = 6.0
    shadowing_corr_m: float = 400.0
    los_gain_db: float = 15.0
    los_height_m: float = 60.0
    n_cells: int = 6
    n_areas: int = 8
    cells_per_area: int = 3
    region_m: float = 3000.0
    drift_m: float = 25.0
    origin_lat: float = 39.0
    origin_lon: float = 22.0
    seed: int = 0
    noise_seed: int = 1

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("row counts must be positive")
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing stdev must be >= 0")
        if not 1 <= self.cells_per_area <= self.n_cells:
            raise ValueError("cells_per_area must lie in [1, n_cells]")


def los_gain(uav_alt: np.ndarray, gain_db: float, height_m: float) -> np.ndarray:
    """Altitude-dependent line-of-sight bonus, saturating at ``gain_db``."""
    return gain_db * (1.0 - np.exp(-np.asarray(uav_alt) / height_m))


def _shadow_field(n_cells: int, corr_m: float, rng: np.random.Generator, n_waves: int = 64):
    # one random-Fourier-feature Gaussian field per cell, unit variance
    omega = rng.normal(0.0, 1.0 / corr_m, size=(n_cells, n_waves, 3))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_cells, n_waves))

    def field(cell: np.ndarray, xyz: np.ndarray) -> np.ndarray:
        arg = np.einsum("nkd,nd->nk", omega[cell], xyz) + phase[cell]
        return np.sqrt(2.0 / n_waves) * np.cos(arg).sum(axis=1)

    return field


def _to_degrees(east: np.ndarray, north: np.ndarray, lat0: float, lon0: float):
    lat = lat0 + np.degrees(north / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(east / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def generate_synthetic(cfg: SynthConfig | None = None) -> LabeledDataset:
    """Draw ``n_train + n_test`` rows. Bit-reproducible for fixed seeds."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_train + cfg.n_test

    cell_xy = rng.uniform(-cfg.region_m, cfg.region_m, size=(cfg.n_cells, 2))
    cell_elev = rng.uniform(0.0, 80.0, size=cfg.n_cells)
    cell_building = rng.uniform(0.0, 30.0, size=cfg.n_cells)
    mast = rng.uniform(15.0, 35.0, size=cfg.n_cells)
    area_xy = rng.uniform(-cfg.region_m, cfg.region_m, size=(cfg.n_areas, 2))
    dist_ac = np.linalg.norm(area_xy[:, None, :] - cell_xy[None, :, :], axis=2)
    neighbours = np.argsort(dist_ac, axis=1, kind="stable")[:, :cfg.cells_per_area]

    area = rng.integers(0, cfg.n_areas, size=n)
    cell = neighbours[area, rng.integers(0, cfg.cells_per_area, size=n)]
    alt = rng.uniform(0.0, MAX_UAV_ALT_M, size=n)
    uav_xy = area_xy[area] + rng.normal(0.0, cfg.drift_m, size=(n, 2))

    antenna_h = cell_elev + cell_building + mast
    horiz = np.linalg.norm(uav_xy - cell_xy[cell], axis=1)
    dz = alt - antenna_h[cell]
    dist = np.hypot(horiz, dz)
    # degenerate geometry: redraw the horizontal offset until the link has length
    while np.any(bad := dist < 1.0):
        uav_xy[bad] = area_xy[area[bad]] + rng.normal(0.0, cfg.drift_m, size=(int(bad.sum()), 2))
        horiz = np.linalg.norm(uav_xy - cell_xy[cell], axis=1)
        dist = np.hypot(horiz, dz)

    rss = (cfg.tx_power_dbm - cfg.ref_loss_db
           - 10.0 * cfg.path_loss_exponent * np.log10(dist)
           + los_gain(alt, cfg.los_gain_db, cfg.los_height_m))
    if cfg.shadowing_std_db > 0:
        field = _shadow_field(cfg.n_cells, cfg.shadowing_corr_m,
                              np.random.default_rng(cfg.noise_seed))
        xyz = np.column_stack([uav_xy, alt])
        rss = rss - cfg.shadowing_std_db * field(cell, xyz)

    uav_lat, uav_lon = _to_degrees(uav_xy[:, 0], uav_xy[:, 1], cfg.origin_lat, cfg.origin_lon)
    cell_lat, cell_lon = _to_degrees(cell_xy[:, 0], cell_xy[:, 1], cfg.origin_lat, cfg.origin_lon)
    features = np.column_stack([
        uav_lat, uav_lon, np.degrees(np.arctan2(dz, horiz)),
        cell_lat[cell], cell_lon[cell], cell_elev[cell], cell_building[cell], mast[cell], alt,
    ])
    return LabeledDataset(features, rss)


# --------------------------------------------------------------------------- #
# CSV
# --------------------------------------------------------------------------- #
def save_csv(dataset: LabeledDataset, path) -> None:
    """Write with ``repr`` floats so a reload is bit-identical."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(COLUMNS)
            for row, y in zip(dataset.features, dataset.rss):
                writer.writerow([repr(float(x)) for x in row] + [repr(float(y))])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_columns(path, columns) -> np.ndarray:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
        pos = [header.index(c) for c in columns]
        rows, bad = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                values = [float(rec[i]) for i in pos]
            except (ValueError, IndexError):
                raise SchemaError(f"{path}:{lineno}: malformed number") from None
            if all(math.isfinite(x) for x in values):
                rows.append(values)
            else:
                bad.append(lineno)
    if bad:
        raise SchemaError(f"{path}: non-finite values on line(s) {', '.join(map(str, bad))}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return np.array(rows)


def load_csv(path) -> LabeledDataset:
    arr = _read_columns(path, COLUMNS)
    return LabeledDataset(arr[:, :-1], arr[:, -1])


def load_features_csv(path) -> np.ndarray:
    """Feature matrix from a CSV with at least the nine feature columns (``rss`` optional)."""
    return _read_columns(path, FEATURES)


# --------------------------------------------------------------------------- #
# preprocessing and scoring
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    stdev: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.stdev


def standardize(X: np.ndarray, stats: StandardizationStats | None = None):
    """Scale features to zero mean / unit variance. Returns ``(X_scaled, stats)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("cannot standardize empty data")
    if stats is None:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        flat = std < STDEV_FLOOR
        if np.any(flat):
            warnings.warn(f"zero-variance feature column(s) {np.flatnonzero(flat).tolist()}; "
                          "stdev floored", RuntimeWarning, stacklevel=2)
        stats = StandardizationStats(mean, np.maximum(std, STDEV_FLOOR))
    return stats.apply(X), stats


def split(dataset: LabeledDataset, n_train: int, seed: int):
    """Shuffled, disjoint ``(train, test)`` split."""
    n = len(dataset)
    if not 0 < n_train < n:
        raise ValueError(f"n_train must be in [1, {n - 1}], got {n_train}")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[:n_train])), dataset.subset(np.sort(order[n_train:]))


@dataclass(frozen=True)
class RssBins:
    """Equal-width bins over ``[lo, hi]``; values outside clip to the edge bins."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("need at least 2 bins")
        if not self.hi > self.lo:
            raise ValueError(f"degenerate rss range [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.count

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.count) + 0.5) * self.width

    def assign(self, rss) -> np.ndarray:
        k = np.floor((np.asarray(rss, dtype=float) - self.lo) / self.width).astype(int)
        return np.clip(k, 0, self.count - 1)


def quantize_labels(rss, bins: int):
    """Class labels and bin centers over the observed range of ``rss``."""
    rss = np.asarray(rss, dtype=float)
    edges = RssBins(float(rss.min()), float(rss.max()), bins)
    return edges.assign(rss), edges.centers


def accuracy(pred, truth, tolerance: float = 5.0) -> float:
    """Fraction of predictions within ``tolerance`` dB of the truth."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth) <= tolerance))
