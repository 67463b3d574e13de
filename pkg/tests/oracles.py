"""Brute-force reference implementations shared by the unit and acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from radar_odom.preprocess import CfarParams


def brute_topk(grid: np.ndarray, k: int) -> list[tuple[int, int]]:
    keyed = [(-float(grid[i, j]), i, j) for i in range(grid.shape[0]) for j in range(grid.shape[1])]
    keyed.sort()
    return [(i, j) for _, i, j in keyed[:k]]


def brute_raymax(grid: np.ndarray) -> list[tuple[int, int]]:
    out = []
    for j in range(grid.shape[1]):
        best = 0
        for i in range(1, grid.shape[0]):
            if grid[i, j] > grid[best, j]:
                best = i
        out.append((best, j))
    return out


def brute_cfar(grid: np.ndarray, p: CfarParams) -> set[tuple[int, int]]:
    n = grid.shape[0]
    hits = set()
    for j in range(grid.shape[1]):
        for i in range(n):
            train = [grid[m, j] for m in range(i - p.guard_cells - p.train_cells, i - p.guard_cells) if 0 <= m < n]
            train += [grid[m, j] for m in range(i + p.guard_cells + 1, i + p.guard_cells + p.train_cells + 1)
                      if 0 <= m < n]
            if grid[i, j] > p.threshold_factor * (sum(train) / len(train)):
                hits.add((i, j))
    return hits


def brute_angle(src, tgt, w, step=1e-4):
    """Grid search of the weighted objective, refined around the best cell."""
    w = np.asarray(w) / np.sum(w)
    grid = np.arange(-math.pi, math.pi, step)
    # sum w |y - R x|^2 = const - 2 sum w (cos a (x.y) + sin a (x cross y))
    dot = np.sum(w * np.sum(src * tgt, axis=1))
    cross = np.sum(w * (src[:, 0] * tgt[:, 1] - src[:, 1] * tgt[:, 0]))
    best = grid[np.argmax(dot * np.cos(grid) + cross * np.sin(grid))]
    fine = np.linspace(best - step, best + step, 2001)
    return float(fine[np.argmax(dot * np.cos(fine) + cross * np.sin(fine))])
