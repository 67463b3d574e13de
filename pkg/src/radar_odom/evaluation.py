"""Trajectory metrics: yaw RMSE, cumulative squared yaw error, SE(2) relative pose error, Umeyama alignment."""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import Pose2, Trajectory, se2_between, se2_compose, se2_inverse, wrap_angle
from .errors import DegenerateAlignmentError, InvalidParamsError, NoOverlapError

DEFAULT_PAIR_TOLERANCE = 0.1  # s, half a 5 Hz cascade period


@dataclass(frozen=True)
class AlignedPair:
    est: Pose2
    ref: Pose2


@dataclass(frozen=True)
class Pairing:
    pairs: tuple[AlignedPair, ...]
    n_unmatched: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def interpolate_pose(a: Pose2, b: Pose2, t: float) -> Pose2:
    """Linear in position, shortest arc in yaw."""
    if b.t == a.t:
        return Pose2(a.x, a.y, a.yaw, t)
    s = (t - a.t) / (b.t - a.t)
    return Pose2(
        a.x + s * (b.x - a.x),
        a.y + s * (b.y - a.y),
        a.yaw + s * wrap_angle(b.yaw - a.yaw),
        t,
    )


def pair_by_time(est: Trajectory, ref: Trajectory, tol: float = DEFAULT_PAIR_TOLERANCE) -> Pairing:
    """Pair each estimate with the reference at the same time.

    The reference is interpolated between bracketing samples; estimates whose
    nearest reference sample is farther than ``tol`` are dropped and counted.
    """
    if tol < 0:
        raise InvalidParamsError("pairing tolerance must be >= 0")
    if len(est) == 0 or len(ref) == 0:
        raise NoOverlapError("cannot pair empty trajectories")
    rt = [p.t for p in ref.poses]
    pairs = []
    for e in est.poses:
        k = bisect.bisect_left(rt, e.t)
        near = min(abs(rt[j] - e.t) for j in (k - 1, k) if 0 <= j < len(rt))
        if near > tol:
            continue
        if k < len(rt) and rt[k] == e.t:
            r = ref.poses[k]
        elif 0 < k < len(rt):
            r = interpolate_pose(ref.poses[k - 1], ref.poses[k], e.t)
        else:
            # outside the reference span but within tolerance of its end
            r = ref.poses[0] if k == 0 else ref.poses[-1]
        pairs.append(AlignedPair(e, r))
    if not pairs:
        raise NoOverlapError(
            f"no estimate within {tol} s of the reference "
            f"(est {est.poses[0].t:.3f}..{est.poses[-1].t:.3f}, ref {rt[0]:.3f}..{rt[-1]:.3f})"
        )
    return Pairing(tuple(pairs), len(est) - len(pairs))


def yaw_errors(pairs: Sequence[AlignedPair]) -> np.ndarray:
    """wrap(est.yaw - ref.yaw) per pair, radians."""
    return np.array([wrap_angle(p.est.yaw - p.ref.yaw) for p in pairs], dtype=float)


def yaw_rmse(pairs: Sequence[AlignedPair]) -> float:
    """Root-mean-square yaw error in degrees."""
    e = np.degrees(yaw_errors(pairs))
    if e.size == 0:
        raise NoOverlapError("no pairs")
    return float(np.sqrt(np.mean(e**2)))


def cumulative_sq_yaw_error(pairs: Sequence[AlignedPair]) -> list[tuple[float, float]]:
    """Running sum of squared yaw errors, (t, deg^2)."""
    e = np.degrees(yaw_errors(pairs))
    cum = np.cumsum(e**2)
    return [(p.est.t, float(c)) for p, c in zip(pairs, cum)]


def relative_pose_error(pairs: Sequence[AlignedPair]) -> tuple[float, list[tuple[float, float]]]:
    """Mean per-step translation error of consecutive relative motions, and the (t, m) series."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InvalidParamsError("relative pose error needs at least 2 pairs")
    series = []
    for a, b in zip(pairs[:-1], pairs[1:]):
        d_ref = se2_between(a.ref, b.ref)
        d_est = se2_between(a.est, b.est)
        # |trans(d_ref^-1 d_est)| = |R_ref^T (t_est - t_ref)| = |t_est - t_ref|; exact when equal
        series.append((b.est.t, math.hypot(d_est.x - d_ref.x, d_est.y - d_ref.y)))
    return float(np.mean([v for _, v in series])), series


def umeyama_fit(src: np.ndarray, dst: np.ndarray, with_scale: bool = False) -> tuple[np.ndarray, np.ndarray, float]:
    """(R, t, s) minimising sum |dst_i - (s R src_i + t)|^2 over 2D point pairs."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) != len(dst) or len(src) < 2:
        raise DegenerateAlignmentError(f"need >= 2 paired positions, got {len(src)}/{len(dst)}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = float(np.mean(np.sum(xs**2, axis=1)))
    var_d = float(np.mean(np.sum(xd**2, axis=1)))
    scale_ref = max(float(np.abs(src).max()), float(np.abs(dst).max()), 1.0)
    if var_s <= (1e-12 * scale_ref) ** 2 or var_d <= (1e-12 * scale_ref) ** 2:
        raise DegenerateAlignmentError("positions are all coincident; rotation undefined")
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(2)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[1, 1] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return R, t, s


def apply_transform(traj: Trajectory, T: Pose2, scale: float = 1.0) -> Trajectory:
    """Left-multiply every pose by T (positions optionally scaled first)."""
    out = []
    for p in traj.poses:
        q = se2_compose(T, Pose2(scale * p.x, scale * p.y, p.yaw, p.t))
        out.append(Pose2(q.x, q.y, q.yaw, p.t))
    return Trajectory(out)


def umeyama_align_se2(est: Trajectory, ref: Trajectory, tol: float = DEFAULT_PAIR_TOLERANCE,
                      with_scale: bool = False) -> tuple[Pose2, Trajectory]:
    """Rigid transform carrying ``est`` onto ``ref`` in the least-squares sense, and the aligned estimate."""
    pairing = pair_by_time(est, ref, tol)
    src = np.array([[p.est.x, p.est.y] for p in pairing])
    dst = np.array([[p.ref.x, p.ref.y] for p in pairing])
    R, t, s = umeyama_fit(src, dst, with_scale)
    T = Pose2(float(t[0]), float(t[1]), math.atan2(R[1, 0], R[0, 0]))
    return T, apply_transform(est, T, s)


def anchor_to_first(pairs: Sequence[AlignedPair]) -> list[AlignedPair]:
    """Express the estimate in the reference frame by matching the first pair exactly."""
    pairs = list(pairs)
    if not pairs:
        return pairs
    T = se2_compose(pairs[0].ref, se2_inverse(pairs[0].est))
    out = []
    for p in pairs:
        q = se2_compose(T, p.est)
        out.append(AlignedPair(Pose2(q.x, q.y, q.yaw, p.est.t), p.ref))
    return out


@dataclass
class MetricReport:
    yaw_rmse_deg: float
    cum_sq_yaw_err: list[tuple[float, float]]
    rpe_mean_m: float
    rpe_series: list[tuple[float, float]]
    n_pairs: int
    n_unmatched: int = 0
    rpe_rmse_m: float = 0.0
    rpe_sum_m: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "yaw_rmse_deg": self.yaw_rmse_deg,
            "cum_sq_yaw_err_final_deg2": self.cum_sq_yaw_err[-1][1] if self.cum_sq_yaw_err else 0.0,
            "rpe_mean_m": self.rpe_mean_m,
            "rpe_rmse_m": self.rpe_rmse_m,
            "rpe_sum_m": self.rpe_sum_m,
            "n_pairs": self.n_pairs,
            "n_unmatched": self.n_unmatched,
            **self.extra,
        }

    def to_json(self) -> str:
        d = self.summary()
        d["cum_sq_yaw_err"] = [list(x) for x in self.cum_sq_yaw_err]
        d["rpe_series"] = [list(x) for x in self.rpe_series]
        return json.dumps(d, indent=1, sort_keys=True) + "\n"


def series_csv(series: Sequence[tuple[float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "value"])
    for t, v in series:
        w.writerow([repr(float(t)), repr(float(v))])
    return buf.getvalue()


def evaluate(est: Trajectory, ref: Trajectory, tol: float = DEFAULT_PAIR_TOLERANCE,
             anchor: str = "first") -> MetricReport:
    """All metrics for one estimate.

    ``anchor`` fixes the estimate's arbitrary starting frame before the yaw
    metrics: ``first`` matches the first pair exactly, ``none`` compares raw
    yaws. RPE does not depend on it.
    """
    if anchor not in ("first", "none"):
        raise InvalidParamsError(f"anchor must be 'first' or 'none', got {anchor!r}")
    pairing = pair_by_time(est, ref, tol)
    pairs = anchor_to_first(pairing.pairs) if anchor == "first" else list(pairing.pairs)
    if len(pairs) >= 2:
        # RPE is anchor-invariant; the raw pairs avoid the anchor's rounding
        rpe_mean, rpe_series = relative_pose_error(pairing.pairs)
    else:
        rpe_mean, rpe_series = 0.0, []
    steps = np.array([v for _, v in rpe_series], dtype=float)
    return MetricReport(
        yaw_rmse_deg=yaw_rmse(pairs),
        cum_sq_yaw_err=cumulative_sq_yaw_error(pairs),
        rpe_mean_m=rpe_mean,
        rpe_series=rpe_series,
        n_pairs=len(pairs),
        n_unmatched=pairing.n_unmatched,
        rpe_rmse_m=float(np.sqrt(np.mean(steps**2))) if steps.size else 0.0,
        rpe_sum_m=float(steps.sum()),
    )


def write_report(report: MetricReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    files = {
        "metrics.json": report.to_json(),
        "cum_sq_yaw_err.csv": series_csv(report.cum_sq_yaw_err),
        "rpe_series.csv": series_csv(report.rpe_series),
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    return paths
