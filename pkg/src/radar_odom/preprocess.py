"""Heatmap -> sparse polar feature points (CFAR, Top-k, Ray-max)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import PolarPoint, TimeStamp, wrap_angles
from .errors import DegenerateInputError, InvalidParamsError
from .ingest import Heatmap, SensorSpec


_AZIMUTH_SLACK = 1e-5  # float32 rounding of FOV-edge bins


class Method(str, enum.Enum):
    CFAR = "cfar"
    TOPK = "topk"
    RAYMAX = "raymax"


@dataclass(frozen=True)
class Roi:
    """Observable wedge of the sensor."""

    max_range: float = math.inf
    max_azimuth: float = math.pi

    @classmethod
    def from_spec(cls, spec: SensorSpec) -> Roi:
        return cls(spec.max_range, spec.max_azimuth)

    def contains(self, r: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return (np.asarray(r) <= self.max_range) & (np.abs(theta) <= self.max_azimuth)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Polar feature points extracted from one heatmap (parallel float64 arrays)."""

    r: np.ndarray
    theta: np.ndarray
    intensity: np.ndarray
    method: Method | str = Method.TOPK
    t: TimeStamp = 0.0

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float).ravel()
        theta = wrap_angles(np.asarray(self.theta, dtype=float).ravel())
        w = np.asarray(self.intensity, dtype=float).ravel()
        if not (r.size == theta.size == w.size):
            raise DegenerateInputError("feature arrays must have equal length")
        if np.any(r < 0) or np.any(w < 0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(r)):
            raise DegenerateInputError("feature ranges and intensities must be finite and >= 0")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "intensity", w)

    @classmethod
    def from_points(cls, points, method=Method.TOPK, t: TimeStamp = 0.0) -> FeatureSet:
        pts = list(points)
        return cls(
            np.array([p.r for p in pts]), np.array([p.theta for p in pts]),
            np.array([p.intensity for p in pts]), method, t,
        )

    @classmethod
    def from_cartesian(cls, xy: np.ndarray, intensity: np.ndarray, method=Method.TOPK,
                       t: TimeStamp = 0.0) -> FeatureSet:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return cls(np.hypot(xy[:, 0], xy[:, 1]), np.arctan2(xy[:, 1], xy[:, 0]), intensity, method, t)

    def __len__(self) -> int:
        return self.r.size

    @property
    def points(self) -> list[PolarPoint]:
        return [PolarPoint(float(a), float(b), float(c)) for a, b, c in zip(self.r, self.theta, self.intensity)]

    def xy(self) -> np.ndarray:
        return np.column_stack([self.r * np.cos(self.theta), self.r * np.sin(self.theta)])

    def subset(self, mask) -> FeatureSet:
        return FeatureSet(self.r[mask], self.theta[mask], self.intensity[mask], self.method, self.t)


@dataclass(frozen=True)
class CfarParams:
    train_cells: int = 8
    guard_cells: int = 4
    threshold_factor: float = 3.0

    def __post_init__(self) -> None:
        if self.train_cells < 1:
            raise InvalidParamsError("train_cells must be >= 1")
        if self.guard_cells < 0:
            raise InvalidParamsError("guard_cells must be >= 0")
        if not self.threshold_factor > 0:
            raise InvalidParamsError("threshold_factor must be > 0")


def collapse_elevation(h: Heatmap) -> Heatmap:
    """Max over the elevation axis."""
    if h.n_elevation == 1:
        return h
    return Heatmap(h.range_res, h.azimuth_angles, h.intensity.max(axis=2, keepdims=True), h.t)


def _grid2d(h: Heatmap) -> np.ndarray:
    if h.n_elevation != 1:
        h = collapse_elevation(h)
    return h.intensity[:, :, 0]


def _cell_mask(h: Heatmap, roi: Roi | None) -> np.ndarray:
    if roi is None:
        return np.ones((h.n_range, h.n_azimuth), dtype=bool)
    rows = h.range_centers() <= roi.max_range
    cols = np.abs(h.azimuth_angles.astype(float)) <= roi.max_azimuth + _AZIMUTH_SLACK
    return rows[:, None] & cols[None, :]


def _features(h: Heatmap, ir: np.ndarray, ia: np.ndarray, grid: np.ndarray, method: Method) -> FeatureSet:
    return FeatureSet(
        (ir + 0.5) * h.range_res,
        h.azimuth_angles.astype(float)[ia],
        grid[ir, ia].astype(float),
        method,
        h.t,
    )


def extract_topk(h: Heatmap, k: int = 200, roi: Roi | None = None) -> FeatureSet:
    """The k brightest cells; ties go to the lower range bin, then the lower azimuth bin."""
    if k < 1:
        raise InvalidParamsError("k must be >= 1")
    grid = _grid2d(h)
    flat = np.flatnonzero(_cell_mask(h, roi).ravel())
    vals = grid.ravel()[flat]
    order = np.argsort(-vals, kind="stable")[:k]
    ir, ia = np.divmod(flat[order], h.n_azimuth)
    return _features(h, ir, ia, grid, Method.TOPK)


def extract_raymax(h: Heatmap, roi: Roi | None = None) -> FeatureSet:
    """The brightest range bin of every azimuth ray (lowest bin on ties)."""
    grid = _grid2d(h)
    mask = _cell_mask(h, roi)
    cols = np.flatnonzero(mask.any(axis=0))
    masked = np.where(mask, grid, -np.inf)[:, cols]
    ir = np.argmax(masked, axis=0)
    return _features(h, ir, cols, grid, Method.RAYMAX)


def cfar_mask(grid: np.ndarray, p: CfarParams) -> np.ndarray:
    """1D cell-averaging CFAR along axis 0 of a (range, azimuth) grid.

    Training windows are symmetric and truncated at the array edges.
    """
    n = grid.shape[0]
    G, T = p.guard_cells, p.train_cells
    if n <= 2 * (T + G):
        raise InvalidParamsError(f"CFAR window (train={T}, guard={G}) does not fit {n} range bins")
    x = grid.astype(float)
    cs = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    i = np.arange(n)
    l_hi = np.maximum(i - G, 0)
    l_lo = np.maximum(i - G - T, 0)
    r_lo = np.minimum(i + G + 1, n)
    r_hi = np.minimum(i + G + T + 1, n)
    sums = cs[l_hi] - cs[l_lo] + cs[r_hi] - cs[r_lo]
    counts = (l_hi - l_lo) + (r_hi - r_lo)
    noise = sums / counts[:, None]
    return x > p.threshold_factor * noise


def extract_cfar(h: Heatmap, p: CfarParams = CfarParams(), roi: Roi | None = None) -> FeatureSet:
    grid = _grid2d(h)
    det = cfar_mask(grid, p) & _cell_mask(h, roi)
    ir, ia = np.nonzero(det)
    return _features(h, ir, ia, grid, Method.CFAR)


def extract(h: Heatmap, method: Method | str, k: int = 200, cfar: CfarParams = CfarParams(),
            roi: Roi | None = None) -> FeatureSet:
    method = Method(method)
    if method is Method.TOPK:
        return extract_topk(h, k, roi)
    if method is Method.RAYMAX:
        return extract_raymax(h, roi)
    return extract_cfar(h, cfar, roi)
