"""Planar geometry shared by every stage: SE(2) poses, polar points, angle wrapping.

Angles are radians everywhere inside the library; degrees only appear at the
CLI/report boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError

TWO_PI = 2.0 * math.pi

#: seconds since epoch, double precision
TimeStamp = float


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    if not math.isfinite(a):
        raise DegenerateInputError(f"cannot wrap non-finite angle {a!r}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    a = np.asarray(a, dtype=float)
    return -(np.mod(-a + math.pi, TWO_PI) - math.pi)


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DegenerateInputError(f"Vec2 components must be finite, got ({self.x}, {self.y})")

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, k: float) -> Vec2:
        return Vec2(self.x * k, self.y * k)

    __rmul__ = __mul__

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Pose2:
    """SE(2) element with a timestamp; yaw is normalised on construction."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    t: TimeStamp = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "yaw", "t"):
            if not math.isfinite(getattr(self, name)):
                raise DegenerateInputError(f"Pose2.{name} must be finite")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        m = np.eye(3)
        m[:2, :2] = rot2(self.yaw)
        m[:2, 2] = (self.x, self.y)
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray, t: TimeStamp = 0.0) -> Pose2:
        return cls(float(m[0, 2]), float(m[1, 2]), math.atan2(m[1, 0], m[0, 0]), t)

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PolarPoint:
    r: float
    theta: float
    intensity: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.r) and self.r >= 0):
            raise DegenerateInputError(f"range must be finite and >= 0, got {self.r}")
        if not (math.isfinite(self.intensity) and self.intensity >= 0):
            raise DegenerateInputError(f"intensity must be finite and >= 0, got {self.intensity}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


def se2_compose(a: Pose2, b: Pose2) -> Pose2:
    """Return a * b. The result carries b's timestamp."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.yaw + b.yaw,
        b.t,
    )


def se2_inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2(-c * a.x - s * a.y, s * a.x - c * a.y, -a.yaw, a.t)


def se2_between(a: Pose2, b: Pose2) -> Pose2:
    """a^-1 * b, the motion from a to b expressed in a's frame."""
    return se2_compose(se2_inverse(a), b)


def polar_to_cart(p: PolarPoint) -> Vec2:
    return Vec2(p.r * math.cos(p.theta), p.r * math.sin(p.theta))


def cart_to_polar(v: Vec2, intensity: float = 0.0) -> PolarPoint:
    if v.x == 0.0 and v.y == 0.0:
        raise DegenerateInputError("azimuth undefined at the origin")
    return PolarPoint(math.hypot(v.x, v.y), math.atan2(v.y, v.x), intensity)


@dataclass(frozen=True, init=False)
class Trajectory:
    """Time-ordered poses; timestamps strictly increasing."""

    poses: tuple[Pose2, ...] = ()

    def __init__(self, poses=()) -> None:
        poses = tuple(poses)
        for i in range(1, len(poses)):
            if not poses[i].t > poses[i - 1].t:
                raise DegenerateInputError(
                    f"trajectory timestamps not strictly increasing at index {i}"
                )
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.poses], dtype=float)

    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.poses], dtype=float).reshape(-1, 2)

    def yaws(self) -> np.ndarray:
        return np.array([p.yaw for p in self.poses], dtype=float)

    def to_text(self) -> str:
        """Lines ``t x y yaw`` with round-trip float formatting."""
        return "".join(f"{p.t!r} {p.x!r} {p.y!r} {p.yaw!r}\n" for p in self.poses)

    @classmethod
    def from_text(cls, text: str) -> Trajectory:
        poses = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 4:
                raise DegenerateInputError(f"line {lineno}: expected 't x y yaw', got {line!r}")
            t, x, y, yaw = map(float, parts)
            poses.append(Pose2(x, y, yaw, t))
        return cls(poses)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> Trajectory:
        return cls.from_text(Path(path).read_text())
