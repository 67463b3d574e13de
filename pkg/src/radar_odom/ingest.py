"""Sensor streams on disk.

Container layout (one directory per sequence)::

    index.txt          <stream> <timestamp_seconds> <relative_path>   (stream: singlechip | cascade)
    sensors.toml       optional [singlechip] / [cascade] tables of SensorSpec fields
    groundtruth.txt    optional, lines "t x y z qx qy qz qw"

Heatmap frame: 4 x <u32 (n_range, n_azimuth, n_elevation, reserved=0), n_azimuth x <f32
azimuth angles, then intensities as <f32 in (range, azimuth, elevation) C order.
Doppler frame: <u32 count, then count x 5 <f32 (x, y, z, doppler, intensity).
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import load_toml
from .core import Pose2, TimeStamp, Trajectory
from .errors import (
    ConfigIncompleteError,
    DimensionMismatchError,
    InvalidDataError,
    MissingFileError,
    NonMonotoneTimestampError,
)

log = logging.getLogger(__name__)

SINGLECHIP = "singlechip"
CASCADE = "cascade"
STREAMS = (SINGLECHIP, CASCADE)

_HEADER = struct.Struct("<4I")
_COUNT = struct.Struct("<I")
_AZIMUTH_SLACK = 1e-5  # f32 rounding of FOV-edge angles


@dataclass(frozen=True)
class SensorSpec:
    range_res: float
    max_range: float
    max_azimuth: float
    framerate: float

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidDataError(f"SensorSpec.{f.name} must be positive, got {v!r}")

    @classmethod
    def from_mapping(cls, m: Mapping[str, Any], default: SensorSpec | None = None) -> SensorSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(m) - known
        if unknown:
            raise InvalidDataError(f"unknown SensorSpec keys: {sorted(unknown)}")
        if default is not None:
            return replace(default, **{k: float(v) for k, v in m.items()})
        missing = known - set(m)
        if missing:
            raise ConfigIncompleteError(f"SensorSpec missing keys: {sorted(missing)}")
        return cls(**{k: float(v) for k, v in m.items()})


# Table II of the reference hardware (TI MMWCAS-RF-EVM cascade, AWR1843 single chip)
CASCADE_SPEC = SensorSpec(range_res=0.06, max_range=7.6, max_azimuth=math.radians(76.3), framerate=5.0)
SINGLECHIP_SPEC = SensorSpec(range_res=0.125, max_range=8.0, max_azimuth=math.radians(78.3), framerate=10.0)


@dataclass(frozen=True)
class DopplerTarget:
    x: float
    y: float
    z: float
    doppler: float
    intensity: float = 0.0


@dataclass(frozen=True, eq=False)
class DopplerFrame:
    """One single-chip point cloud. ``points`` is (N, 5) float32: x, y, z, doppler, intensity."""

    t: TimeStamp
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 5)
        if pts.ndim != 2 or pts.shape[1] != 5:
            raise DimensionMismatchError(f"doppler points must be (N, 5), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidDataError(f"non-finite doppler target at t={self.t}")
        if np.any(pts[:, 4] < 0):
            raise InvalidDataError(f"negative target intensity at t={self.t}")
        if np.any(np.linalg.norm(pts[:, :3], axis=1) == 0):
            raise InvalidDataError(f"doppler target at the sensor origin at t={self.t}")
        if not math.isfinite(self.t):
            raise InvalidDataError("non-finite frame timestamp")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_targets(cls, t: TimeStamp, targets: Sequence[DopplerTarget]) -> DopplerFrame:
        arr = np.array([[p.x, p.y, p.z, p.doppler, p.intensity] for p in targets], dtype=np.float32)
        return cls(t, arr.reshape(-1, 5))

    def targets(self) -> list[DopplerTarget]:
        return [DopplerTarget(*map(float, row)) for row in self.points]

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DopplerFrame):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.points, other.points)


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Range x azimuth x elevation intensity grid (linear scale, float32)."""

    range_res: float
    azimuth_angles: np.ndarray
    intensity: np.ndarray
    t: TimeStamp = 0.0

    def __post_init__(self) -> None:
        az = np.asarray(self.azimuth_angles, dtype=np.float32).ravel()
        grid = np.asarray(self.intensity, dtype=np.float32)
        if grid.ndim == 2:
            grid = grid[:, :, None]
        if grid.ndim != 3:
            raise DimensionMismatchError(f"heatmap grid must be 2D or 3D, got shape {grid.shape}")
        if grid.shape[1] != az.size:
            raise DimensionMismatchError(
                f"heatmap has {grid.shape[1]} azimuth columns but {az.size} azimuth angles"
            )
        if min(grid.shape) < 1:
            raise DimensionMismatchError(f"empty heatmap dimension in {grid.shape}")
        if not (math.isfinite(self.range_res) and self.range_res > 0):
            raise InvalidDataError(f"range_res must be positive, got {self.range_res}")
        if not np.all(np.isfinite(az)) or np.any(np.diff(az) <= 0):
            raise InvalidDataError("azimuth angles must be finite and strictly increasing")
        if not np.all(np.isfinite(grid)) or np.any(grid < 0):
            raise InvalidDataError(f"heatmap intensities must be finite and >= 0 (t={self.t})")
        object.__setattr__(self, "azimuth_angles", az)
        object.__setattr__(self, "intensity", grid)

    @property
    def n_range(self) -> int:
        return self.intensity.shape[0]

    @property
    def n_azimuth(self) -> int:
        return self.intensity.shape[1]

    @property
    def n_elevation(self) -> int:
        return self.intensity.shape[2]

    def range_centers(self) -> np.ndarray:
        return (np.arange(self.n_range) + 0.5) * self.range_res

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Heatmap):
            return NotImplemented
        return (
            self.t == other.t
            and self.range_res == other.range_res
            and np.array_equal(self.azimuth_angles, other.azimuth_angles)
            and np.array_equal(self.intensity, other.intensity)
        )


@dataclass(eq=False)
class Dataset:
    singlechip_frames: list[DopplerFrame] = field(default_factory=list)
    cascade_frames: list[Heatmap] = field(default_factory=list)
    ground_truth: Trajectory | None = None
    specs: dict[str, SensorSpec] = field(
        default_factory=lambda: {SINGLECHIP: SINGLECHIP_SPEC, CASCADE: CASCADE_SPEC}
    )

    def validate(self) -> Dataset:
        _check_monotone(SINGLECHIP, [f.t for f in self.singlechip_frames])
        _check_monotone(CASCADE, [h.t for h in self.cascade_frames])
        fov = self.specs[CASCADE].max_azimuth
        for h in self.cascade_frames:
            if np.any(np.abs(h.azimuth_angles.astype(float)) > fov + _AZIMUTH_SLACK):
                raise InvalidDataError(f"heatmap at t={h.t} has azimuth bins outside the cascade FOV")
        _check_rate(SINGLECHIP, [f.t for f in self.singlechip_frames], self.specs[SINGLECHIP])
        _check_rate(CASCADE, [h.t for h in self.cascade_frames], self.specs[CASCADE])
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.singlechip_frames == other.singlechip_frames
            and self.cascade_frames == other.cascade_frames
            and self.specs == other.specs
            and _gt_equal(self.ground_truth, other.ground_truth)
        )


def _gt_equal(a: Trajectory | None, b: Trajectory | None, tol: float = 1e-12) -> bool:
    if a is None or b is None:
        return a is b
    if len(a) != len(b):
        return False
    return all(
        p.t == q.t and abs(p.x - q.x) <= tol and abs(p.y - q.y) <= tol and abs(p.yaw - q.yaw) <= tol
        for p, q in zip(a.poses, b.poses)
    )


def _check_monotone(stream: str, ts: Sequence[float]) -> None:
    for i in range(1, len(ts)):
        if not ts[i] > ts[i - 1]:
            raise NonMonotoneTimestampError(
                f"{stream} timestamps not strictly increasing at frame {i}: {ts[i - 1]!r} -> {ts[i]!r}"
            )


def _check_rate(stream: str, ts: Sequence[float], spec: SensorSpec) -> None:
    if len(ts) < 3:
        return
    rate = (len(ts) - 1) / (ts[-1] - ts[0])
    if abs(rate - spec.framerate) > 0.2 * spec.framerate:
        log.warning("%s stream runs at %.2f Hz, declared %.2f Hz", stream, rate, spec.framerate)


# --- frame codecs -------------------------------------------------------------


def encode_heatmap(h: Heatmap) -> bytes:
    header = _HEADER.pack(h.n_range, h.n_azimuth, h.n_elevation, 0)
    return header + h.azimuth_angles.astype("<f4").tobytes() + h.intensity.astype("<f4").tobytes()


def decode_heatmap(buf: bytes, t: TimeStamp, range_res: float, source: str = "<bytes>") -> Heatmap:
    if len(buf) < _HEADER.size:
        raise DimensionMismatchError(f"{source}: truncated heatmap header")
    nr, na, ne, reserved = _HEADER.unpack_from(buf)
    if reserved != 0:
        raise InvalidDataError(f"{source}: reserved header field is {reserved}, expected 0")
    expected = _HEADER.size + 4 * (na + nr * na * ne)
    if len(buf) != expected:
        raise DimensionMismatchError(
            f"{source}: header declares {nr}x{na}x{ne} but payload is {len(buf)} bytes (expected {expected})"
        )
    az = np.frombuffer(buf, dtype="<f4", count=na, offset=_HEADER.size)
    grid = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size + 4 * na).reshape(nr, na, ne)
    return Heatmap(range_res, az.astype(np.float32), grid.astype(np.float32), t)


def encode_doppler(frame: DopplerFrame) -> bytes:
    return _COUNT.pack(len(frame.points)) + frame.points.astype("<f4").tobytes()


def decode_doppler(buf: bytes, t: TimeStamp, source: str = "<bytes>") -> DopplerFrame:
    if len(buf) < _COUNT.size:
        raise DimensionMismatchError(f"{source}: truncated doppler header")
    (n,) = _COUNT.unpack_from(buf)
    if len(buf) != _COUNT.size + 20 * n:
        raise DimensionMismatchError(f"{source}: count {n} does not match payload of {len(buf)} bytes")
    pts = np.frombuffer(buf, dtype="<f4", offset=_COUNT.size).reshape(n, 5)
    return DopplerFrame(t, pts.astype(np.float32))


# --- ground truth -------------------------------------------------------------


def yaw_from_quaternion(qx: float, qy: float, qz: float, qw: float) -> float:
    """Heading of the rotated x axis projected on the ground plane."""
    return math.atan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))


def _parse_gt_rows(rows: np.ndarray, ts: np.ndarray) -> Trajectory:
    poses = [
        Pose2(float(r[0]), float(r[1]), yaw_from_quaternion(*map(float, r[3:7])), float(t))
        for r, t in zip(rows, ts)
    ]
    _check_monotone("groundtruth", [p.t for p in poses])
    return Trajectory(poses)


def _read_table(path: Path, ncols: int) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"missing file {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != ncols:
            raise DimensionMismatchError(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as e:
            raise InvalidDataError(f"{path}:{lineno}: {e}") from None
    arr = np.array(rows, dtype=float).reshape(-1, ncols)
    if not np.all(np.isfinite(arr)):
        raise InvalidDataError(f"{path}: non-finite values")
    return arr


def read_groundtruth(path: str | Path) -> Trajectory:
    arr = _read_table(Path(path), 8)
    return _parse_gt_rows(arr[:, 1:], arr[:, 0])


def write_groundtruth(traj: Trajectory, path: str | Path) -> None:
    lines = []
    for p in traj.poses:
        qz, qw = math.sin(p.yaw / 2.0), math.cos(p.yaw / 2.0)
        lines.append(f"{p.t!r} {p.x!r} {p.y!r} 0.0 0.0 0.0 {qz!r} {qw!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# --- container ----------------------------------------------------------------


def _read_specs(root: Path, config: Mapping[str, Any]) -> dict[str, SensorSpec]:
    specs = {SINGLECHIP: SINGLECHIP_SPEC, CASCADE: CASCADE_SPEC}
    path = root / "sensors.toml"
    if path.is_file():
        table = load_toml(path)
        for name in STREAMS:
            if name in table:
                specs[name] = SensorSpec.from_mapping(table[name], specs[name])
    for name in STREAMS:
        override = config.get(name)
        if isinstance(override, SensorSpec):
            specs[name] = override
        elif override:
            specs[name] = SensorSpec.from_mapping(override, specs[name])
    return specs


def load_dataset(root_path: str | Path, config: Mapping[str, Any] | None = None) -> Dataset:
    """Load and validate a sequence written in the container layout.

    ``config`` may override sensor specs: ``{"cascade": {"max_range": 7.0}}``.
    """
    root = Path(root_path)
    config = config or {}
    if not root.is_dir():
        raise MissingFileError(f"dataset directory {root} does not exist")
    index = root / "index.txt"
    if not index.is_file():
        raise MissingFileError(f"missing {index}")
    specs = _read_specs(root, config)

    singlechip: list[DopplerFrame] = []
    cascade: list[Heatmap] = []
    for lineno, line in enumerate(index.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(maxsplit=2)
        if len(parts) != 3:
            raise InvalidDataError(f"{index}:{lineno}: expected '<stream> <t> <path>'")
        stream, ts, rel = parts
        try:
            t = float(ts)
        except ValueError:
            raise InvalidDataError(f"{index}:{lineno}: bad timestamp {ts!r}") from None
        path = root / rel
        if not path.is_file():
            raise MissingFileError(f"{index}:{lineno}: missing frame file {path}")
        if stream == SINGLECHIP:
            singlechip.append(decode_doppler(path.read_bytes(), t, str(path)))
        elif stream == CASCADE:
            cascade.append(decode_heatmap(path.read_bytes(), t, specs[CASCADE].range_res, str(path)))
        else:
            raise InvalidDataError(f"{index}:{lineno}: unknown stream {stream!r}")

    gt_path = root / "groundtruth.txt"
    gt = read_groundtruth(gt_path) if gt_path.is_file() else None
    return Dataset(singlechip, cascade, gt, specs).validate()


def _spec_toml(specs: Mapping[str, SensorSpec]) -> str:
    out = []
    for name in STREAMS:
        out.append(f"[{name}]")
        for f in fields(SensorSpec):
            out.append(f"{f.name} = {getattr(specs[name], f.name)!r}")
        out.append("")
    return "\n".join(out)


def write_dataset(ds: Dataset, root_path: str | Path) -> Path:
    """Serialise ``ds`` so that :func:`load_dataset` returns an equal Dataset."""
    root = Path(root_path)
    (root / SINGLECHIP).mkdir(parents=True, exist_ok=True)
    (root / CASCADE).mkdir(parents=True, exist_ok=True)
    entries: list[tuple[float, str, str]] = []
    for i, frame in enumerate(ds.singlechip_frames):
        rel = f"{SINGLECHIP}/{i:06d}.bin"
        (root / rel).write_bytes(encode_doppler(frame))
        entries.append((frame.t, SINGLECHIP, rel))
    for i, h in enumerate(ds.cascade_frames):
        rel = f"{CASCADE}/{i:06d}.bin"
        (root / rel).write_bytes(encode_heatmap(h))
        entries.append((h.t, CASCADE, rel))
    entries.sort(key=lambda e: (e[0], e[1]))
    (root / "index.txt").write_text("".join(f"{s} {t!r} {rel}\n" for t, s, rel in entries))
    (root / "sensors.toml").write_text(_spec_toml(ds.specs))
    if ds.ground_truth is not None:
        write_groundtruth(ds.ground_truth, root / "groundtruth.txt")
    return root


# --- ColoRadar-style raw binaries -----------------------------------------------

_AXES = ("range", "azimuth", "elevation", "channel")


def _require(cfg: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in cfg:
        raise ConfigIncompleteError(f"adapter config [{where}] lacks required key {key!r}")
    return cfg[key]


def _dtype(cfg: Mapping[str, Any], where: str) -> np.dtype:
    endian = _require(cfg, "endianness", where)
    if endian not in ("little", "big"):
        raise ConfigIncompleteError(f"[{where}] endianness must be 'little' or 'big', got {endian!r}")
    return np.dtype(cfg.get("dtype", "float32")).newbyteorder("<" if endian == "little" else ">")


def _read_timestamps(path: Path) -> np.ndarray:
    return _read_table(path, 1)[:, 0]


def _frame_paths(root: Path, pattern: str, n: int) -> list[Path]:
    paths = [root / pattern.format(index=i) for i in range(n)]
    for p in paths:
        if not p.is_file():
            raise MissingFileError(f"missing frame file {p}")
    return paths


def _load_raw_heatmap(path: Path, cfg: Mapping[str, Any], dims: dict[str, int], order: list[str],
                      dtype: np.dtype) -> np.ndarray:
    raw = np.fromfile(path, dtype=dtype)
    shape = [dims[a] for a in order]
    if raw.size != int(np.prod(shape)):
        raise DimensionMismatchError(f"{path}: {raw.size} values, expected {shape}")
    grid = raw.reshape(shape)
    if "channel" in order:
        grid = np.take(grid, int(cfg.get("intensity_channel", 0)), axis=order.index("channel"))
        order = [a for a in order if a != "channel"]
    grid = np.transpose(grid, [order.index(a) for a in ("range", "azimuth", "elevation")])
    grid = grid.astype(np.float64)
    if cfg.get("log_input", False):
        grid = np.power(10.0, grid / 10.0)
    return grid


def load_coloradar_adapter(root_path: str | Path, adapter_config: Mapping[str, Any] | str | Path) -> Dataset:
    """Read raw per-frame binaries whose layout is fully declared by ``adapter_config``.

    ``adapter_config`` (mapping or TOML path) has tables ``[cascade]``, ``[singlechip]``,
    optional ``[groundtruth]`` and ``[sensors.cascade]`` / ``[sensors.singlechip]``.
    See README for the key list.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise MissingFileError(f"dataset directory {root} does not exist")
    cfg = load_toml(adapter_config) if isinstance(adapter_config, (str, Path)) else dict(adapter_config)
    sensors = cfg.get("sensors", {})
    specs = {
        SINGLECHIP: SensorSpec.from_mapping(sensors.get(SINGLECHIP, {}), SINGLECHIP_SPEC),
        CASCADE: SensorSpec.from_mapping(sensors.get(CASCADE, {}), CASCADE_SPEC),
    }

    cc = _require(cfg, CASCADE, "root")
    dims_cfg = _require(cc, "dims", CASCADE)
    order = list(_require(cc, "axis_order", CASCADE))
    if sorted(set(order)) != sorted(order) or not set(order) <= set(_AXES) or not {
        "range", "azimuth", "elevation"} <= set(order):
        raise ConfigIncompleteError(f"[cascade] axis_order must name range, azimuth, elevation: {order}")
    dims = {a: int(_require(dims_cfg, a, "cascade.dims")) for a in order}
    if "azimuth_angles" in cc:
        az = np.asarray(cc["azimuth_angles"], dtype=float)
    elif "azimuth_angles_file" in cc:
        az = _read_table(root / cc["azimuth_angles_file"], 1)[:, 0]
    else:
        raise ConfigIncompleteError("[cascade] needs azimuth_angles or azimuth_angles_file")
    if cc.get("azimuth_degrees", False):
        az = np.radians(az)
    if az.size != dims["azimuth"]:
        raise DimensionMismatchError(f"{az.size} azimuth angles for {dims['azimuth']} azimuth bins")
    flip = az.size > 1 and az[0] > az[-1]
    dtype = _dtype(cc, CASCADE)
    ts = _read_timestamps(root / _require(cc, "timestamps", CASCADE))
    cascade = []
    for t, path in zip(ts, _frame_paths(root, _require(cc, "pattern", CASCADE), len(ts))):
        grid = _load_raw_heatmap(path, cc, dims, order, dtype)
        if flip:
            grid = grid[:, ::-1, :]
        try:
            cascade.append(Heatmap(specs[CASCADE].range_res, az[::-1] if flip else az, grid, float(t)))
        except InvalidDataError as e:
            raise InvalidDataError(f"{path}: {e} (check endianness/dtype/log_input)") from None

    sc = _require(cfg, SINGLECHIP, "root")
    field_order = list(sc.get("fields", ["x", "y", "z", "intensity", "doppler"]))
    if not {"x", "y", "z", "doppler"} <= set(field_order):
        raise ConfigIncompleteError(f"[singlechip] fields must include x, y, z, doppler: {field_order}")
    sdtype = _dtype(sc, SINGLECHIP)
    ts = _read_timestamps(root / _require(sc, "timestamps", SINGLECHIP))
    singlechip = []
    for t, path in zip(ts, _frame_paths(root, _require(sc, "pattern", SINGLECHIP), len(ts))):
        raw = np.fromfile(path, dtype=sdtype)
        if raw.size % len(field_order):
            raise DimensionMismatchError(f"{path}: {raw.size} values not divisible by {len(field_order)} fields")
        raw = raw.reshape(-1, len(field_order)).astype(np.float64)
        cols = [raw[:, field_order.index(k)] if k in field_order else np.zeros(len(raw))
                for k in ("x", "y", "z", "doppler", "intensity")]
        pts = np.column_stack(cols) if len(raw) else np.zeros((0, 5))
        pts = pts[np.linalg.norm(pts[:, :3], axis=1) > 0]
        singlechip.append(DopplerFrame(float(t), pts))

    gt = None
    if "groundtruth" in cfg:
        gc = cfg["groundtruth"]
        poses = _read_table(root / _require(gc, "poses", "groundtruth"), 7)
        gts = _read_timestamps(root / _require(gc, "timestamps", "groundtruth"))
        if len(gts) != len(poses):
            raise DimensionMismatchError(f"{len(poses)} ground-truth poses but {len(gts)} timestamps")
        gt = _parse_gt_rows(poses, gts)

    return Dataset(singlechip, cascade, gt, specs).validate()
