"""Uniform grids, grid-anchored cubes, cell functions, and cube averages.

Geometry conventions used throughout the package:

* The window is the axis-aligned box ``[0, L)^dim`` split into ``N`` cells
  per axis (``N`` a power of two), cell width ``h = L / N``.
* A cube is anchored to the integer cell lattice: anchor coordinates are
  integers (possibly negative, cubes may extend beyond the window) and the
  side is a positive integer number of cells.
* Functions are cell-constant, live on the window, and read as zero
  outside it.  All integrals are midpoint sums: cell value times ``h**dim``.
* Cube measures are always the full geometric measure ``(side * h)**dim``,
  including any part outside the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    LeafCubeError,
    ParameterError,
    ValidationError,
)

__all__ = [
    "Grid",
    "Cube",
    "GridFunction",
    "CellSet",
    "YoungFunction",
    "dilate",
    "cube_integral",
    "avg_p",
    "orlicz_avg",
    "dyadic_children",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of the window ``[0, phys_side)**dim``.

    Parameters
    ----------
    dim : 1 or 2
    cells_per_side : number of cells per axis, a power of two
    phys_side : physical side length of the window, positive
    """

    dim: int
    cells_per_side: int
    phys_side: float = 1.0

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ParameterError(f"dim must be 1 or 2, got {self.dim}")
        if not _is_power_of_two(self.cells_per_side):
            raise ParameterError(
                f"cells_per_side must be a power of two, got {self.cells_per_side}"
            )
        if not (self.phys_side > 0):
            raise ParameterError(f"phys_side must be positive, got {self.phys_side}")

    @property
    def cell_width(self) -> float:
        return self.phys_side / self.cells_per_side

    @property
    def cell_measure(self) -> float:
        return self.cell_width**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_side,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.cells_per_side**self.dim

    def window_cube(self) -> "Cube":
        return Cube((0,) * self.dim, self.cells_per_side)

    def cell_centers(self) -> np.ndarray:
        """Physical centers of all window cells, shape ``(n_cells, dim)``."""
        h = self.cell_width
        axis = (np.arange(self.cells_per_side) + 0.5) * h
        if self.dim == 1:
            return axis[:, None]
        g0, g1 = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([g0.ravel(), g1.ravel()], axis=-1)


@dataclass(frozen=True)
class Cube:
    """Grid-anchored cube: integer anchor per axis, integer side in cells."""

    anchor: tuple[int, ...]
    side: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchor", tuple(int(a) for a in self.anchor))
        if self.side < 1:
            raise ParameterError(f"cube side must be >= 1, got {self.side}")

    @property
    def dim(self) -> int:
        return len(self.anchor)

    @property
    def cell_count(self) -> int:
        return self.side**self.dim

    def measure(self, grid: Grid) -> float:
        return (self.side * grid.cell_width) ** grid.dim

    def bounds(self) -> tuple[tuple[int, int], ...]:
        """Half-open integer bounds ``[lo, hi)`` per axis."""
        return tuple((a, a + self.side) for a in self.anchor)

    def contains_cell(self, cell: Sequence[int]) -> bool:
        return all(a <= c < a + self.side for a, c in zip(self.anchor, cell))

    def contains(self, other: "Cube") -> bool:
        return all(
            a <= b and b + other.side <= a + self.side
            for a, b in zip(self.anchor, other.anchor)
        )

    def intersects(self, other: "Cube") -> bool:
        return all(
            max(a, b) < min(a + self.side, b + other.side)
            for a, b in zip(self.anchor, other.anchor)
        )

    def clip(self, other: "Cube") -> tuple[tuple[int, int], ...] | None:
        """Integer bounds of the intersection with ``other``, or None."""
        out = []
        for (lo, hi), (olo, ohi) in zip(self.bounds(), other.bounds()):
            lo, hi = max(lo, olo), min(hi, ohi)
            if lo >= hi:
                return None
            out.append((lo, hi))
        return tuple(out)

    def window_clip(self, grid: Grid) -> tuple[tuple[int, int], ...] | None:
        return self.clip(grid.window_cube())


def dilate(cube: Cube, alpha: int) -> Cube:
    """Concentric dilation by an odd integer factor ``alpha >= 1``.

    Odd factors keep the dilated cube on the cell lattice; even factors
    would shift the center by half a cell and are rejected.
    """
    if int(alpha) != alpha or alpha < 1:
        raise ParameterError(f"dilation factor must be a positive integer, got {alpha}")
    alpha = int(alpha)
    if alpha % 2 == 0:
        raise AlignmentError(
            f"dilation factor must be odd to stay on the cell lattice, got {alpha}"
        )
    shift = (alpha - 1) // 2 * cube.side
    return Cube(tuple(a - shift for a in cube.anchor), alpha * cube.side)


def dyadic_children(cube: Cube) -> list[Cube]:
    """The ``2**dim`` congruent half-side subcubes, in lexicographic order."""
    if cube.side == 1:
        raise LeafCubeError(f"cube {cube} is a single cell and has no children")
    if cube.side % 2 != 0:
        raise AlignmentError(
            f"cube side {cube.side} is odd, cannot split into half-side children"
        )
    half = cube.side // 2
    offsets: Iterable[tuple[int, ...]]
    if cube.dim == 1:
        offsets = [(0,), (half,)]
    else:
        offsets = [(i * half, j * half) for i in (0, 1) for j in (0, 1)]
    return [Cube(tuple(a + o for a, o in zip(cube.anchor, off)), half) for off in offsets]


# ---------------------------------------------------------------------------
# summed-area tables

def _build_sat(values: np.ndarray) -> np.ndarray:
    """Prefix-sum table with a zero border, one entry longer per axis."""
    if values.ndim == 1:
        sat = np.zeros(values.shape[0] + 1, dtype=values.dtype)
        np.cumsum(values, out=sat[1:])
        return sat
    sat = np.zeros((values.shape[0] + 1, values.shape[1] + 1), dtype=values.dtype)
    sat[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    return sat


def _sat_rect_sum(sat: np.ndarray, bounds: tuple[tuple[int, int], ...]) -> float:
    """Sum of the underlying values over clipped integer bounds."""
    if len(bounds) == 1:
        (lo, hi), = bounds
        n = sat.shape[0] - 1
        lo, hi = max(lo, 0), min(hi, n)
        if lo >= hi:
            return 0.0
        return sat[hi] - sat[lo]
    (lo0, hi0), (lo1, hi1) = bounds
    n0, n1 = sat.shape[0] - 1, sat.shape[1] - 1
    lo0, hi0 = max(lo0, 0), min(hi0, n0)
    lo1, hi1 = max(lo1, 0), min(hi1, n1)
    if lo0 >= hi0 or lo1 >= hi1:
        return 0.0
    return sat[hi0, hi1] - sat[lo0, hi1] - sat[hi0, lo1] + sat[lo0, lo1]


class GridFunction:
    """Cell-constant function on the window; zero outside.

    Values may be real or complex.  Instances are treated as immutable:
    prefix-sum tables of ``|f|**p`` are cached per exponent and reused by
    every cube query, so mutating ``values`` after construction is not
    supported.
    """

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values)
        if values.shape != grid.shape:
            raise ParameterError(
                f"values shape {values.shape} does not match grid shape {grid.shape}"
            )
        if np.iscomplexobj(values):
            values = values.astype(np.complex128, copy=True)
        else:
            values = values.astype(np.float64, copy=True)
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self._power_sats: dict[float, np.ndarray] = {}

    @classmethod
    def zero(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def indicator(cls, grid: Grid, cells: CellSet | Cube) -> "GridFunction":
        if isinstance(cells, Cube):
            cells = CellSet.from_cube(grid, cells)
        return cls(grid, cells.window_mask().astype(np.float64))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def power_sat(self, p: float) -> np.ndarray:
        """Cached prefix-sum table of ``|f|**p`` over the window."""
        key = float(p)
        if key not in self._power_sats:
            self._power_sats[key] = _build_sat(np.abs(self.values) ** key)
        return self._power_sats[key]

    def abs_max(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def norm_lp(self, p: float) -> float:
        return float(
            (np.sum(np.abs(self.values) ** p) * self.grid.cell_measure) ** (1.0 / p)
        )


class CellSet:
    """Finite set of lattice cells inside an explicit bounding box.

    The bounding box may extend beyond the window.  That matters for
    witness sets of cubes that straddle the window edge: their measure has
    to be the geometric one, counting cells the window never sees.
    """

    def __init__(self, grid: Grid, box: Cube, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (box.side,) * grid.dim:
            raise ParameterError(
                f"mask shape {mask.shape} does not match box side {box.side}"
            )
        self.grid = grid
        self.box = box
        self.mask = mask

    # -- constructors -------------------------------------------------

    @classmethod
    def empty(cls, grid: Grid, box: Cube | None = None) -> "CellSet":
        box = box or grid.window_cube()
        return cls(grid, box, np.zeros((box.side,) * grid.dim, dtype=bool))

    @classmethod
    def from_cube(cls, grid: Grid, cube: Cube) -> "CellSet":
        return cls(grid, cube, np.ones((cube.side,) * grid.dim, dtype=bool))

    @classmethod
    def from_window_mask(cls, grid: Grid, mask: np.ndarray) -> "CellSet":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.shape:
            raise ParameterError("window mask shape does not match grid")
        return cls(grid, grid.window_cube(), mask)

    @classmethod
    def cube_minus_cubes(cls, grid: Grid, cube: Cube, holes: Sequence[Cube]) -> "CellSet":
        """All cells of ``cube`` not covered by any cube in ``holes``."""
        out = cls.from_cube(grid, cube)
        for hole in holes:
            clip = cube.clip(hole)
            if clip is None:
                continue
            sl = tuple(slice(lo - a, hi - a) for (lo, hi), a in zip(clip, cube.anchor))
            out.mask[sl] = False
        return out

    # -- measure and queries ------------------------------------------

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def measure(self) -> float:
        return self.count * self.grid.cell_measure

    def is_empty(self) -> bool:
        return not self.mask.any()

    def count_in(self, cube: Cube) -> int:
        """Number of member cells inside ``cube`` (exact integer)."""
        clip = self.box.clip(cube)
        if clip is None:
            return 0
        sl = tuple(slice(lo - a, hi - a) for (lo, hi), a in zip(clip, self.box.anchor))
        return int(self.mask[sl].sum())

    def window_mask(self) -> np.ndarray:
        """Membership restricted to the window, as a window-shaped array."""
        out = np.zeros(self.grid.shape, dtype=bool)
        clip = self.box.window_clip(self.grid)
        if clip is None:
            return out
        src = tuple(slice(lo - a, hi - a) for (lo, hi), a in zip(clip, self.box.anchor))
        dst = tuple(slice(lo, hi) for (lo, hi) in clip)
        out[dst] = self.mask[src]
        return out

    def window_cells(self) -> np.ndarray:
        """Integer coordinates of member cells inside the window, shape (k, dim)."""
        idx = np.argwhere(self.window_mask())
        return idx

    def member_cells(self) -> np.ndarray:
        """Integer coordinates of all member cells (window or not), shape (k, dim)."""
        idx = np.argwhere(self.mask)
        return idx + np.asarray(self.box.anchor)

    def subset_of_cube(self, cube: Cube) -> bool:
        return self.count_in(cube) == self.count

    def intersects(self, other: "CellSet") -> bool:
        clip = self.box.clip(other.box)
        if clip is None:
            return False
        sl_a = tuple(slice(lo - a, hi - a) for (lo, hi), a in zip(clip, self.box.anchor))
        sl_b = tuple(slice(lo - a, hi - a) for (lo, hi), a in zip(clip, other.box.anchor))
        return bool(np.any(self.mask[sl_a] & other.mask[sl_b]))


# ---------------------------------------------------------------------------
# cube integrals and averages

def cube_integral(f: GridFunction, cube: Cube, p: float = 1.0) -> float:
    """Midpoint integral of ``|f|**p`` over the cube (window part only)."""
    if not (p > 0):
        raise ParameterError(f"exponent must be positive, got {p}")
    clip = cube.window_clip(f.grid)
    if clip is None:
        return 0.0
    sat = f.power_sat(p)
    return float(_sat_rect_sum(sat, clip)) * f.grid.cell_measure


def avg_p(f: GridFunction, cube: Cube, p: float) -> float:
    """Normalized L^p average over the cube.

    The normalization uses the full geometric cube measure; parts of the
    cube outside the window contribute zero to the integral.
    """
    total = cube_integral(f, cube, p)
    return (total / cube.measure(f.grid)) ** (1.0 / p)


@dataclass(frozen=True)
class YoungFunction:
    """Convex gauge profile for normalized Orlicz averages.

    ``fn`` must be vectorized, nonnegative, nondecreasing, convex, and
    vanish at zero.  Those properties are spot-checked on a sample grid at
    construction; a failed check raises ValidationError.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "young"
    _sample_upper: float = field(default=8.0, repr=False)

    def __post_init__(self) -> None:
        ts = np.linspace(0.0, self._sample_upper, 257)
        vals = np.asarray(self.fn(ts), dtype=np.float64)
        if vals.shape != ts.shape or not np.all(np.isfinite(vals)):
            raise ValidationError(f"gauge {self.name!r} must map samples to finite values")
        if abs(vals[0]) > 1e-12:
            raise ValidationError(f"gauge {self.name!r} must vanish at zero")
        if np.any(np.diff(vals) < -1e-12):
            raise ValidationError(f"gauge {self.name!r} is not nondecreasing")
        mid = np.asarray(self.fn((ts[:-2] + ts[2:]) / 2.0))
        chord = (vals[:-2] + vals[2:]) / 2.0
        scale = 1.0 + np.abs(chord)
        if np.any(mid - chord > 1e-9 * scale):
            raise ValidationError(f"non-convex gauge sample detected for {self.name!r}")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return self.fn(t)

    @classmethod
    def power(cls, p: float) -> "YoungFunction":
        if not (p >= 1):
            raise ParameterError(f"power gauge needs p >= 1, got {p}")
        return cls(fn=lambda t, _p=float(p): np.asarray(t, dtype=np.float64) ** _p,
                   name=f"power[{p}]")


def orlicz_avg(f: GridFunction, cube: Cube, phi: YoungFunction,
               rel_tol: float = 1e-12) -> float:
    """Normalized gauge average: the smallest ``lam`` with
    ``(1/|Q|) * integral_Q phi(|f| / lam) <= 1``.

    Returns 0 when ``f`` vanishes on the cube.  Solved by bisection to a
    relative tolerance of ``rel_tol``; the upper bracket starts at
    ``max(1, max|f| on the cube)`` and doubles until feasible.
    """
    clip = cube.window_clip(f.grid)
    vals = np.abs(f.values[tuple(slice(lo, hi) for lo, hi in clip)]).ravel() if clip else np.array([])
    vals = vals[vals > 0]
    if vals.size == 0:
        return 0.0
    meas = cube.measure(f.grid)
    cellm = f.grid.cell_measure

    def excess(lam: float) -> float:
        return float(np.sum(phi(vals / lam)) * cellm / meas) - 1.0

    hi = max(1.0, float(vals.max()))
    guard = 0
    while excess(hi) > 0.0:
        hi *= 2.0
        guard += 1
        if guard > 200:
            raise ValidationError(f"gauge {phi.name!r} never becomes feasible")
    lo = 0.0
    for _ in range(200):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi
