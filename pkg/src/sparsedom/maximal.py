"""Maximal functions realized as sweeps over lattice cubes.

Every operator here has the same shape: sweep a family of grid cubes,
compute one scalar statistic per cube, and give each cell the maximum
statistic over swept cubes containing it.  The statistic is a power
average for the strong maximal function, an oscillation of a truncated
transform for the sharp variant, and a sup of truncated transforms for
the grand variant.

The sweep is exhaustive over integer side lengths and anchor positions by
default, so on an N-cell axis the swept family is every lattice cube, not
just dyadic ones.  ``CubeSweepPolicy`` thins it: cap the side, stride the
anchor lattice, or drop cubes sticking out of the window.  Side-1 cubes
are always swept regardless of stride, which keeps the pointwise bound
``maximal >= statistic on the cell itself`` unconditional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError
from .grid import Cube, Grid, GridFunction
from .operators import Kernel, RestrictedTransform, _stratified_indices

__all__ = [
    "CubeSweepPolicy",
    "hl_maximal",
    "sharp_truncated",
    "grand_truncated",
    "oscillation",
]


@dataclass(frozen=True)
class CubeSweepPolicy:
    """Which lattice cubes a maximal sweep visits.

    ``max_side`` caps the cube side (default: the full window side).
    ``stride`` keeps only anchors on the sublattice ``stride * Z**dim``
    for sides larger than one.  ``include_outside`` controls whether
    cubes that stick out of the window are swept; their averages still
    normalize by the full cube measure.
    """

    max_side: int | None = None
    stride: int = 1
    include_outside: bool = True

    def __post_init__(self) -> None:
        if self.max_side is not None and self.max_side < 1:
            raise ParameterError(f"max_side must be >= 1, got {self.max_side}")
        if self.stride < 1:
            raise ParameterError(f"stride must be >= 1, got {self.stride}")

    def sides(self, grid: Grid) -> range:
        cap = grid.cells_per_side if self.max_side is None else min(
            self.max_side, grid.cells_per_side)
        return range(1, cap + 1)


def _anchor_range(n: int, m: int) -> np.ndarray:
    """All anchors whose side-m cube meets the window: [1-m, n-1]."""
    return np.arange(1 - m, n)


def _anchor_keep_mask(anchors: np.ndarray, m: int, n: int,
                      policy: CubeSweepPolicy) -> np.ndarray:
    keep = np.ones(anchors.shape, dtype=bool)
    if m > 1 and policy.stride > 1:
        keep &= anchors % policy.stride == 0
    if not policy.include_outside:
        keep &= (anchors >= 0) & (anchors + m <= n)
    return keep


def _propagate_max(vals: np.ndarray, m: int, grid: Grid) -> np.ndarray:
    """Cell-wise max over the anchors whose cube covers the cell.

    ``vals`` is indexed by anchor over the full range [1-m, n-1] per axis
    (use -inf for anchors not swept).
    """
    if grid.dim == 1:
        return sliding_window_view(vals, m).max(axis=-1)
    tmp = sliding_window_view(vals, m, axis=0).max(axis=-1)
    return sliding_window_view(tmp, m, axis=1).max(axis=-1)


def _box_avgs_1d(f: GridFunction, s: float, m: int) -> np.ndarray:
    grid = f.grid
    n = grid.cells_per_side
    a = _anchor_range(n, m)
    lo = np.clip(a, 0, n)
    hi = np.clip(a + m, 0, n)
    sat = f.power_sat(s)
    integrals = (sat[hi] - sat[lo]) * grid.cell_measure
    return (integrals / (m * grid.cell_width) ** grid.dim) ** (1.0 / s)


def _box_avgs_2d(f: GridFunction, s: float, m: int) -> np.ndarray:
    grid = f.grid
    n = grid.cells_per_side
    a = _anchor_range(n, m)
    lo = np.clip(a, 0, n)
    hi = np.clip(a + m, 0, n)
    sat = f.power_sat(s)
    sums = (sat[hi[:, None], hi[None, :]] - sat[lo[:, None], hi[None, :]]
            - sat[hi[:, None], lo[None, :]] + sat[lo[:, None], lo[None, :]])
    integrals = sums * grid.cell_measure
    return (integrals / (m * grid.cell_width) ** grid.dim) ** (1.0 / s)


def hl_maximal(f: GridFunction, s: float = 1.0,
               policy: CubeSweepPolicy | None = None) -> GridFunction:
    """Cube maximal function of the s-power average.

    At each cell: the max over swept cubes containing the cell of
    ``avg_p(f, cube, s)``.  Averages of cubes sticking out of the window
    keep the full-cube normalization (the function is zero outside).
    """
    if not (s > 0):
        raise ParameterError(f"power average exponent must be positive, got {s}")
    policy = policy or CubeSweepPolicy()
    grid = f.grid
    n = grid.cells_per_side
    out = np.full(grid.shape, -np.inf)
    for m in policy.sides(grid):
        vals = _box_avgs_1d(f, s, m) if grid.dim == 1 else _box_avgs_2d(f, s, m)
        a = _anchor_range(n, m)
        keep = _anchor_keep_mask(a, m, n, policy)
        if grid.dim == 1:
            vals = np.where(keep, vals, -np.inf)
        else:
            vals = np.where(keep[:, None] & keep[None, :], vals, -np.inf)
        np.maximum(out, _propagate_max(vals, m, grid), out=out)
    return GridFunction(grid, out)


def oscillation(values: np.ndarray, exact_cap: int = 4096) -> float:
    """Diameter of a value set: max - min for real data, max pairwise
    distance for complex data.

    The complex diameter is exact up to ``exact_cap`` values; beyond that
    a deterministic 64-element stratified subset is used, which can only
    under-report.
    """
    v = np.asarray(values).ravel()
    if v.size <= 1:
        return 0.0
    if not np.iscomplexobj(v):
        return float(v.max() - v.min())
    if v.size > exact_cap:
        v = v[_stratified_indices(v.size, 64)]
    best = 0.0
    for start in range(0, v.size, 512):
        block = v[start:start + 512]
        best = max(best, float(np.abs(block[:, None] - v[None, :]).max()))
    return best


def _block_stat(rows_vals: np.ndarray, valid: np.ndarray, cell_axes: tuple,
                statistic: str, exact_cap: int) -> np.ndarray:
    """Reduce per-cube cell values (last axes) to one statistic per cube."""
    if statistic == "osc":
        if np.iscomplexobj(rows_vals):
            lead = rows_vals.shape[: rows_vals.ndim - len(cell_axes)]
            k = int(np.prod(rows_vals.shape[len(lead):]))
            flat_vals = rows_vals.reshape(-1, k)
            flat_valid = valid.reshape(-1, k)
            return np.array([
                oscillation(rv[vm], exact_cap)
                for rv, vm in zip(flat_vals, flat_valid)
            ]).reshape(lead)
        hi = np.where(valid, rows_vals, -np.inf).max(axis=cell_axes)
        lo = np.where(valid, rows_vals, np.inf).min(axis=cell_axes)
        return hi - lo
    return np.where(valid, np.abs(rows_vals), -np.inf).max(axis=cell_axes)


def _truncated_stat_1d(rt: RestrictedTransform, t_full: np.ndarray, m: int,
                       alpha: int, n: int, statistic: str, exact_cap: int):
    a = _anchor_range(n, m)
    off = np.arange(m)
    shift = (alpha - 1) // 2 * m
    cells = a[:, None] + off[None, :]
    valid = (cells >= 0) & (cells < n)
    rows = np.clip(cells, 0, n - 1)
    inner = rt.apply_box(rows, ((a[:, None] - shift, a[:, None] - shift + alpha * m),))
    return a, _block_stat(t_full[rows] - inner, valid, (-1,), statistic, exact_cap)


def _truncated_stat_2d(rt: RestrictedTransform, t_full: np.ndarray, m: int,
                       alpha: int, n: int, statistic: str, exact_cap: int):
    a = _anchor_range(n, m)
    off = np.arange(m)
    shift = (alpha - 1) // 2 * m
    big = len(a)
    stat = np.empty((big, big))
    chunk = max(1, (1 << 22) // max(1, big * m * m))
    for i0 in range(0, big, chunk):
        a0 = a[i0:i0 + chunk][:, None, None, None]
        a1 = a[None, :, None, None]
        c0 = a0 + off[None, None, :, None]
        c1 = a1 + off[None, None, None, :]
        valid = (c0 >= 0) & (c0 < n) & (c1 >= 0) & (c1 < n)
        rows = np.clip(c0, 0, n - 1) * n + np.clip(c1, 0, n - 1)
        bounds = ((a0 - shift, a0 - shift + alpha * m),
                  (a1 - shift, a1 - shift + alpha * m))
        inner = rt.apply_box(rows, bounds)
        stat[i0:i0 + chunk] = _block_stat(t_full[rows] - inner, valid, (-2, -1),
                                          statistic, exact_cap)
    return a, stat


def _sweep_truncated(kernel: Kernel, f: GridFunction, alpha: int,
                     policy: CubeSweepPolicy | None, transform, statistic: str,
                     exact_cap: int) -> GridFunction:
    if alpha < 1 or alpha % 2 == 0:
        raise ParameterError(f"dilation factor must be odd and >= 1, got {alpha}")
    policy = policy or CubeSweepPolicy()
    grid = f.grid
    n = grid.cells_per_side
    rt = transform if transform is not None else RestrictedTransform(kernel, f)
    t_full = rt.full().ravel()
    out = np.full(grid.shape, -np.inf)
    for m in policy.sides(grid):
        if grid.dim == 1:
            a, stat = _truncated_stat_1d(rt, t_full, m, alpha, n, statistic, exact_cap)
        else:
            a, stat = _truncated_stat_2d(rt, t_full, m, alpha, n, statistic, exact_cap)
        keep = _anchor_keep_mask(a, m, n, policy)
        if grid.dim == 1:
            stat = np.where(keep, stat, -np.inf)
        else:
            stat = np.where(keep[:, None] & keep[None, :], stat, -np.inf)
        np.maximum(out, _propagate_max(stat, m, grid), out=out)
    return GridFunction(grid, out)


def sharp_truncated(kernel: Kernel, f: GridFunction, alpha: int = 3,
                    policy: CubeSweepPolicy | None = None,
                    transform: RestrictedTransform | None = None,
                    exact_cap: int = 4096) -> GridFunction:
    """Oscillation maximal function of the dilated-truncation transform.

    At each cell: the max over swept cubes Q containing it of the
    oscillation, across the window cells of Q, of the transform applied
    to ``f`` with the alpha-dilation of Q removed from the source.  Pass
    ``transform`` to reuse a prefix-sum table already built for ``f``.
    """
    return _sweep_truncated(kernel, f, alpha, policy, transform, "osc", exact_cap)


def grand_truncated(kernel: Kernel, f: GridFunction, alpha: int = 1,
                    policy: CubeSweepPolicy | None = None,
                    transform: RestrictedTransform | None = None) -> GridFunction:
    """Sup-style maximal function of dilated-truncation transforms.

    At each cell: the max over swept cubes Q containing it of the largest
    magnitude, across the window cells of Q, of the transform with the
    alpha-dilation of Q removed from the source.  With matching alpha it
    dominates half the sharp variant pointwise, since an oscillation is
    at most twice a sup.
    """
    return _sweep_truncated(kernel, f, alpha, policy, transform, "sup", 0)
