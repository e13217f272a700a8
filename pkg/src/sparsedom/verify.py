"""Numerical checks on sparse families and domination certificates.

Everything here re-derives its quantities from raw inputs instead of
trusting what the construction stored: sparsity is checked by painting
witnesses on an integer canvas, domination by recomputing the transform
on every window cell, coefficients by re-averaging.  The checks return
small report objects with a ``passed`` flag and enough detail to locate
a failure; they never repair anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, UndefinedRatioError
from .grid import CellSet, Cube, Grid, GridFunction, avg_p
from .maximal import CubeSweepPolicy, hl_maximal, sharp_truncated
from .operators import Kernel, RestrictedTransform, apply_restricted, transpose_kernel
from .sparse import SparseFamily

__all__ = [
    "SparsityReport",
    "DominationReport",
    "ProbeResult",
    "check_sparsity",
    "check_domination",
    "sparse_operator",
    "audit_coefficients",
    "sparse_lp_ratio",
    "wq_profile",
    "t1_testing_probe",
    "sharp_vs_maximal",
]


@dataclass
class SparsityReport:
    passed: bool
    eta_required: float
    min_ratio: float
    max_overlap: int
    n_entries: int
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "eta_required": self.eta_required,
            "min_ratio": self.min_ratio,
            "max_overlap": self.max_overlap,
            "n_entries": self.n_entries,
            "failures": self.failures,
        }


@dataclass
class DominationReport:
    passed: bool
    constant: float
    tol: float
    n_checked: int
    n_failures: int
    worst_margin: float
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "constant": self.constant,
            "tol": self.tol,
            "n_checked": self.n_checked,
            "n_failures": self.n_failures,
            "worst_margin": self.worst_margin,
            "failures": self.failures,
        }


@dataclass
class ProbeResult:
    value: float
    samples: list

    def to_dict(self) -> dict:
        return {"value": self.value, "samples": self.samples}


def check_sparsity(family: SparseFamily, eta: float | None = None) -> SparsityReport:
    """Witness disjointness and witness-to-cube measure ratios.

    Paints every witness cell (window or not) onto one integer canvas;
    any cell painted twice breaks disjointness.  Each witness must hold at
    least ``eta`` (default: the family's declared value) of its dilated
    cube's full geometric cell count.
    """
    eta = family.eta if eta is None else eta
    entries = family.entries
    if not entries:
        return SparsityReport(True, eta, 1.0, 0, 0)
    dim = family.grid.dim
    los = [min(e.witness.box.anchor[d] for e in entries) for d in range(dim)]
    his = [max(e.witness.box.anchor[d] + e.witness.box.side for e in entries)
           for d in range(dim)]
    canvas = np.zeros([h - l for h, l in zip(his, los)], dtype=np.int32)
    failures = []
    min_ratio = math.inf
    for i, e in enumerate(entries):
        b = e.witness.box
        sl = tuple(slice(b.anchor[d] - los[d], b.anchor[d] - los[d] + b.side)
                   for d in range(dim))
        canvas[sl] += e.witness.mask
        ratio = e.witness.count / e.cube.cell_count
        min_ratio = min(min_ratio, ratio)
        if ratio < eta - 1e-12:
            failures.append({"entry": i, "kind": "ratio", "ratio": ratio})
    max_overlap = int(canvas.max())
    if max_overlap > 1:
        spot = np.argwhere(canvas == max_overlap)[0]
        failures.append({"kind": "overlap",
                         "cell": [int(v + l) for v, l in zip(spot, los)],
                         "count": max_overlap})
    passed = max_overlap <= 1 and min_ratio >= eta - 1e-12
    return SparsityReport(passed, eta, float(min_ratio), max_overlap,
                          len(entries), failures)


def _paint_coefficients(family: SparseFamily, coeffs) -> np.ndarray:
    out = np.zeros(family.grid.shape)
    for e, c in zip(family.entries, coeffs):
        clip = e.cube.window_clip(family.grid)
        if clip is None:
            continue
        sl = tuple(slice(lo, hi) for lo, hi in clip)
        out[sl] += c
    return out


def sparse_operator(family: SparseFamily, f: GridFunction,
                    r: float = 1.0) -> GridFunction:
    """The sparse averaging operator: at each window cell, the sum of
    r-power averages of ``f`` over the family cubes containing it.

    Averages are recomputed from ``f``; stored coefficients are not used.
    """
    coeffs = [avg_p(f, e.cube, r) for e in family.entries]
    return GridFunction(family.grid, _paint_coefficients(family, coeffs))


def audit_coefficients(family: SparseFamily, f: GridFunction,
                       r: float | None = None) -> float:
    """Largest absolute gap between stored coefficients and freshly
    recomputed r-power averages of ``f`` (r defaults to the family's
    build exponent)."""
    if r is None:
        r = float(family.meta.get("s", 1.0))
    worst = 0.0
    for e in family.entries:
        worst = max(worst, abs(e.coefficient - avg_p(f, e.cube, r)))
    return worst


def check_domination(kernel: Kernel, f: GridFunction, family: SparseFamily,
                     constant: float | None = None,
                     tol: float = 1e-10) -> DominationReport:
    """Pointwise check ``|T f| <= constant * (stacked coefficients)`` on
    every window cell, using the family's stored coefficients.

    A cell with zero stacked coefficient and transform magnitude above
    the tolerance is a failure with its location reported.
    """
    c = family.constant if constant is None else constant
    tf = np.abs(apply_restricted(kernel, f).values)
    stack = _paint_coefficients(family, [e.coefficient for e in family.entries])
    margin = tf - c * stack
    bad = margin > tol
    failures = []
    for cell in np.argwhere(bad)[:10]:
        idx = tuple(int(v) for v in cell)
        failures.append({"cell": list(idx), "transform": float(tf[idx]),
                         "bound": float(c * stack[idx])})
    return DominationReport(
        passed=not bad.any(),
        constant=c,
        tol=tol,
        n_checked=int(tf.size),
        n_failures=int(bad.sum()),
        worst_margin=float(margin.max()),
        failures=failures,
    )


def sparse_lp_ratio(family: SparseFamily, f: GridFunction, r: float = 1.0,
                    p: float = 2.0) -> float:
    """Operator-to-input norm ratio ``||A_{S,r} f||_p / ||f||_p``."""
    if not (p >= 1):
        raise ParameterError(f"norm exponent p must be >= 1, got {p}")
    denom = f.norm_lp(p)
    if denom == 0.0:
        raise UndefinedRatioError("input function vanishes; ratio undefined")
    return sparse_operator(family, f, r).norm_lp(p) / denom


def wq_profile(kernel: Kernel, f: GridFunction, cube: Cube, q: float = 1.0,
               lambdas: tuple = tuple(2.0**-j for j in range(1, 9)),
               transform: RestrictedTransform | None = None) -> dict:
    """Weak-threshold profile of the restricted transform on one cube.

    For each level fraction ``lam``, psi(lam) is the
    ``ceil(lam * cells(Q))``-th largest value of ``|T(f char_Q)|`` over
    the window cells of Q, in units of the q-average of f on Q.  Zero
    average yields an all-zero profile flagged degenerate; level counts
    beyond the available window cells yield zero.
    """
    grid = f.grid
    for lam in lambdas:
        if not (0 < lam <= 1):
            raise ParameterError(f"level fractions must lie in (0, 1], got {lam}")
    avg = avg_p(f, cube, q)
    clip = cube.window_clip(grid)
    if avg == 0.0 or clip is None:
        return {"lambdas": list(lambdas), "psi": [0.0] * len(lambdas),
                "avg": avg, "degenerate": True}
    rt = transform if transform is not None else RestrictedTransform(kernel, f)
    axes = np.meshgrid(*[np.arange(lo, hi) for lo, hi in clip], indexing="ij")
    cells = np.stack([a.ravel() for a in axes], axis=-1)
    tvals = np.abs(rt.apply_box(rt.row_index(cells), cube.bounds()))
    svals = np.sort(tvals)[::-1]
    psi = []
    for lam in lambdas:
        k = math.ceil(lam * cube.cell_count)
        psi.append(float(svals[k - 1]) / avg if k <= svals.size else 0.0)
    return {"lambdas": list(lambdas), "psi": psi, "avg": avg, "degenerate": False}


def t1_testing_probe(kernel: Kernel, grid: Grid, cube: Cube | None = None,
                     seed: int = 0,
                     probs: tuple = (0.125, 0.25, 0.5, 0.75),
                     draws_per_prob: int = 2) -> ProbeResult:
    """Testing-condition probe: averages of the transposed transform of
    random indicator functions.

    Samples subsets E of the cube's window cells (each cell kept with the
    given inclusion probability; the empty and full subsets are always
    included), applies the transposed kernel to each indicator, and
    reports the largest cube-normalized average magnitude.  Sampling uses
    a counter-based generator, so one seed always yields one answer.
    """
    cube = cube if cube is not None else grid.window_cube()
    base = CellSet.from_cube(grid, cube).window_mask()
    if not base.any():
        raise ParameterError(f"cube {cube} has no window cells to probe")
    kt = transpose_kernel(kernel)
    gen = np.random.Generator(np.random.Philox(seed))
    masks = [("empty", np.zeros(grid.shape, dtype=bool)), ("full", base)]
    for prob in probs:
        for d in range(draws_per_prob):
            pick = (gen.random(grid.shape) < prob) & base
            masks.append((f"p={prob}#{d}", pick))
    samples = []
    best = 0.0
    targets = CellSet.from_window_mask(grid, base)
    for label, mask in masks:
        ind = GridFunction(grid, mask.astype(np.float64))
        vals = apply_restricted(kt, ind, targets=targets)
        stat = float(np.sum(np.abs(vals.values[base])) * grid.cell_measure
                     / cube.measure(grid))
        samples.append({"subset": label, "cells": int(mask.sum()), "stat": stat})
        best = max(best, stat)
    return ProbeResult(value=best, samples=samples)


def sharp_vs_maximal(kernel: Kernel, f: GridFunction, rp: float = 1.0,
                     alpha: int = 3,
                     policy: CubeSweepPolicy | None = None) -> float:
    """Largest cell ratio of the truncated-oscillation maximal function to
    the rp-power maximal function.

    Cells where the denominator vanishes are skipped if the numerator is
    negligible there; a substantial numerator over a vanishing denominator,
    or no usable cell at all, raises UndefinedRatioError.
    """
    num = sharp_truncated(kernel, f, alpha=alpha, policy=policy).values
    den = hl_maximal(f, rp, policy=policy).values
    usable = den > 0
    if np.any(~usable & (num > 1e-10)):
        cell = np.argwhere(~usable & (num > 1e-10))[0]
        raise UndefinedRatioError(
            f"oscillation maximal is {num[tuple(cell)]:.3e} where the power "
            f"maximal vanishes at cell {tuple(int(v) for v in cell)}")
    if not usable.any():
        raise UndefinedRatioError("power maximal function vanishes everywhere")
    return float((num[usable] / den[usable]).max())
