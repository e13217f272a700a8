"""Exceptional sets, stopping time, cover, and the sparse pipeline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedom import (
    AlignmentError,
    CellSet,
    Cube,
    DensityError,
    Grid,
    GridFunction,
    ParameterError,
    PipelineConfig,
    RestrictedTransform,
    apply_restricted,
    build_sparse_domination,
    constant_from_records,
    dilate,
    exceptional_set,
    local_cz_decomposition,
    local_sparse_family,
    make_kernel,
    partition_cover,
    support_box,
)


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def supported_noise(grid, seed, lo, hi):
    vals = np.zeros(grid.shape)
    sl = tuple(slice(lo, hi) for _ in range(grid.dim))
    vals[sl] = rng(seed).normal(size=vals[sl].shape)
    return GridFunction(grid, vals)


def sparse_sum(family):
    out = np.zeros(family.grid.shape)
    for e in family.entries:
        clip = e.cube.window_clip(family.grid)
        if clip is None:
            continue
        sl = tuple(slice(lo, hi) for lo, hi in clip)
        out[sl] += e.coefficient
    return out


def witness_canvas(family):
    dim = family.grid.dim
    boxes = [e.witness.box for e in family.entries]
    lo = [min(b.anchor[d] for b in boxes) for d in range(dim)]
    hi = [max(b.anchor[d] + b.side for b in boxes) for d in range(dim)]
    canvas = np.zeros([h - l for h, l in zip(hi, lo)], dtype=int)
    for e in family.entries:
        b = e.witness.box
        sl = tuple(slice(b.anchor[d] - lo[d], b.anchor[d] - lo[d] + b.side)
                   for d in range(dim))
        canvas[sl] += e.witness.mask.astype(int)
    return canvas


# ---------------------------------------------------------------------------
# exceptional sets

@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_quantile_measure_bound(seed):
    grid = Grid(1, 64)
    f = GridFunction(grid, rng(seed).normal(size=grid.shape))
    k = make_kernel("hilbert")
    g = rng(seed + 1)
    side = int(2 ** g.integers(2, 6))
    anchor = int(g.integers(-side // 2, 64 - side // 2))
    exc = exceptional_set(k, f, Cube((anchor,), side), alpha=3)
    assert exc.omega.count * 2 ** (grid.dim + 2) <= side**grid.dim
    assert exc.omega.subset_of_cube(Cube((anchor,), side))


def test_quantile_thresholds_are_attained_values():
    grid = Grid(1, 32)
    f = supported_noise(grid, 3, 4, 28)
    exc = exceptional_set(make_kernel("hilbert"), f, Cube((8,), 16), alpha=3)
    assert exc.avg > 0
    assert exc.a_ratio >= 0 and exc.c_ratio > 0
    for cnt in exc.exceed_counts:
        assert cnt <= exc.allowed_per_stat


def test_single_cell_node_self_certifies():
    grid = Grid(1, 16)
    f = supported_noise(grid, 1, 0, 16)
    exc = exceptional_set(make_kernel("hilbert"), f, Cube((5,), 1), alpha=3)
    assert exc.omega.is_empty()
    assert exc.a_ratio >= exc.max_t_ratio  # threshold is the max itself


def test_zero_average_node():
    grid = Grid(1, 32)
    f = supported_noise(grid, 2, 0, 4)
    exc = exceptional_set(make_kernel("hilbert"), f, Cube((24,), 2), alpha=3)
    assert "zero_average" in exc.flags
    assert exc.omega.is_empty() and exc.avg == 0.0


def test_out_of_window_node():
    grid = Grid(1, 32)
    f = supported_noise(grid, 2, 0, 32)
    exc = exceptional_set(make_kernel("hilbert"), f, Cube((-64,), 8), alpha=3)
    assert "outside_window" in exc.flags


def test_fixed_mode_flags_violation():
    grid = Grid(1, 64)
    f = supported_noise(grid, 5, 0, 64)
    k = make_kernel("hilbert")
    tight = exceptional_set(k, f, Cube((0,), 64), alpha=3, mode="fixed",
                            c=1e-6, a=1e-6)
    assert "measure_violation" in tight.flags
    loose = exceptional_set(k, f, Cube((0,), 64), alpha=3, mode="fixed",
                            c=1e6, a=1e6)
    assert loose.omega.is_empty() and "measure_violation" not in loose.flags


def test_exceptional_set_validation():
    grid = Grid(1, 16)
    f = GridFunction(grid, np.ones(16))
    k = make_kernel("hilbert")
    with pytest.raises(ParameterError):
        exceptional_set(k, f, Cube((0,), 4), alpha=2)
    with pytest.raises(ParameterError):
        exceptional_set(k, f, Cube((0,), 4), mode="fixed")  # no c, a
    with pytest.raises(ParameterError):
        exceptional_set(k, f, Cube((0,), 4), mode="nope")


# ---------------------------------------------------------------------------
# stopping time

def test_cz_frozen_example():
    # two exceptional cells {4, 5} in an 8-cell cube, threshold 1/4:
    # the right half [4, 8) has density 1/2 and is the maximal selection
    grid = Grid(1, 8)
    omega = CellSet.from_window_mask(grid, np.isin(np.arange(8), [4, 5]))
    got = local_cz_decomposition(grid, Cube((0,), 8), omega)
    assert got == [Cube((4,), 4)]


def test_cz_rejects_dense_root():
    grid = Grid(1, 8)
    omega = CellSet.from_window_mask(grid, np.arange(8) < 3)  # density 3/8 > 1/4
    with pytest.raises(DensityError):
        local_cz_decomposition(grid, Cube((0,), 8), omega)


def test_cz_rejects_odd_side():
    grid = Grid(1, 16)
    omega = CellSet.empty(grid)
    with pytest.raises(AlignmentError):
        local_cz_decomposition(grid, Cube((0,), 6), omega)


def test_cz_rejects_bad_lambda():
    grid = Grid(1, 8)
    with pytest.raises(ParameterError):
        local_cz_decomposition(grid, Cube((0,), 8), CellSet.empty(grid), lam=1.5)


def test_cz_empty_omega_selects_nothing():
    grid = Grid(1, 16)
    assert local_cz_decomposition(grid, Cube((0,), 16), CellSet.empty(grid)) == []


def test_cz_custom_lambda():
    grid = Grid(1, 8)
    omega = CellSet.from_window_mask(grid, np.isin(np.arange(8), [0]))
    # with lam = 0.2: [0,8) 1/8 ok; [0,4) 1/4 > 0.2 selected
    got = local_cz_decomposition(grid, Cube((0,), 8), omega, lam=0.2)
    assert got == [Cube((0,), 4)]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_cz_invariants_random(seed):
    g = rng(seed)
    dim = int(g.integers(1, 3))
    grid = Grid(dim, 32)
    side = int(2 ** g.integers(1, 6))
    anchor = tuple(int(g.integers(0, 32 - side + 1)) for _ in range(dim))
    q = Cube(anchor, side)
    allowed = q.cell_count // 2 ** (dim + 2)
    mask = np.zeros(grid.shape, dtype=bool)
    cells_in_q = np.argwhere(CellSet.from_cube(grid, q).window_mask())
    if allowed > 0 and len(cells_in_q) > 0:
        take = g.choice(len(cells_in_q), size=int(g.integers(0, allowed + 1)),
                        replace=False)
        mask[tuple(cells_in_q[take].T)] = True
    omega = CellSet.from_window_mask(grid, mask)
    picked = local_cz_decomposition(grid, q, omega)

    lam_num, lam_den = 1, 2 ** (dim + 1)
    covered = np.zeros(grid.shape, dtype=bool)
    total_cells = 0
    for p in picked:
        assert q.contains(p)
        cnt = omega.count_in(p)
        # sandwich in exact integers: lam |P| < |P cap omega| <= 2**dim lam |P|
        assert cnt * lam_den > p.cell_count * lam_num
        assert cnt * lam_den <= p.cell_count * lam_num * 2**dim
        total_cells += p.cell_count
        sl = tuple(slice(a, a + p.side) for a in p.anchor)
        assert not covered[sl].any()  # pairwise disjoint
        covered[sl] = True
    assert not (mask & ~covered).any()  # omega fully covered
    assert 2 * total_cells <= q.cell_count


# ---------------------------------------------------------------------------
# cover

def test_cover_frozen_1d_example():
    grid = Grid(1, 16)
    got = partition_cover(grid, Cube((0,), 8), 3)
    assert got == [Cube((0,), 8), Cube((-8,), 8), Cube((8,), 8)]


def test_cover_2d_ring_count():
    grid = Grid(2, 16)
    got = partition_cover(grid, Cube((4, 4), 8), 3)
    assert len(got) == 9  # core + 8 ring cubes
    assert got[0] == Cube((4, 4), 8)


@given(st.integers(0, 2**32 - 1), st.sampled_from([3, 5]))
@settings(max_examples=40, deadline=None)
def test_cover_support_containment_and_tiling(seed, alpha):
    g = rng(seed)
    dim = int(g.integers(1, 3))
    grid = Grid(dim, 64)
    side = int(2 ** g.integers(0, 7))
    anchor = tuple(int(g.integers(0, 64 - side + 1)) for _ in range(dim))
    supp = Cube(anchor, side)
    cover = partition_cover(grid, supp, alpha)

    for q in cover:
        assert dilate(q, alpha).contains(supp)

    # ring-by-ring exact tiling: disjoint interiors, counts add up
    core = supp
    i = 1
    while i < len(cover):
        ring = cover[i:i + 3**dim - 1]
        i += 3**dim - 1
        big = dilate(core, 3)
        seen = {}
        for q in ring:
            assert q.side == core.side
            assert big.contains(q)
            for other in seen.values():
                assert not q.intersects(other)
            assert not q.intersects(core)
            seen[q.anchor] = q
        total = sum(q.cell_count for q in ring) + core.cell_count
        assert total == big.cell_count
        core = big
    assert core.contains(grid.window_cube())


def test_cover_validation():
    grid = Grid(1, 16)
    with pytest.raises(ParameterError):
        partition_cover(grid, Cube((0,), 8), 4)
    with pytest.raises(AlignmentError):
        partition_cover(grid, Cube((0,), 6), 3)
    with pytest.raises(ParameterError):
        partition_cover(grid, Cube((12,), 8), 3)  # sticks out of window


def test_support_box_basic():
    grid = Grid(1, 32)
    vals = np.zeros(32)
    vals[5] = 1.0
    vals[11] = -2.0
    box = support_box(GridFunction(grid, vals))
    assert box.side == 8 and box.contains_cell((5,)) and box.contains_cell((11,))
    assert Cube((0,), 32).contains(box)
    assert support_box(GridFunction.zero(grid)) is None


def test_support_box_near_edge_stays_inside():
    grid = Grid(1, 32)
    vals = np.zeros(32)
    vals[29] = 1.0
    vals[31] = 1.0
    box = support_box(GridFunction(grid, vals))
    assert Cube((0,), 32).contains(box)
    assert box.contains_cell((29,)) and box.contains_cell((31,))


# ---------------------------------------------------------------------------
# local family

def test_local_family_witnesses_partition_root():
    grid = Grid(1, 64)
    f = supported_noise(grid, 7, 8, 56)
    k = make_kernel("hilbert")
    root = Cube((16,), 32)
    entries, records = local_sparse_family(k, f, root)
    total = sum(e.witness.count for e in entries)
    assert total == root.cell_count
    for e in entries:
        assert e.witness.subset_of_cube(e.base_cube)
        assert 2 * e.witness.count >= e.base_cube.cell_count
    for i, a in enumerate(entries):
        for b in entries[i + 1:]:
            assert not a.witness.intersects(b.witness)


def test_local_family_depth_halving():
    grid = Grid(1, 64)
    f = supported_noise(grid, 11, 0, 64)
    root = Cube((0,), 64)
    entries, _ = local_sparse_family(make_kernel("hilbert"), f, root)
    by_depth = {}
    for e in entries:
        by_depth.setdefault(e.depth, 0)
        by_depth[e.depth] += e.base_cube.cell_count
    for d, cells in by_depth.items():
        assert cells <= root.cell_count // 2**d


def test_local_family_rejects_bad_root():
    grid = Grid(1, 16)
    f = GridFunction(grid, np.ones(16))
    with pytest.raises(AlignmentError):
        local_sparse_family(make_kernel("hilbert"), f, Cube((0,), 12))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_local_family_certifies_local_domination(seed):
    # the core chain inequality: on the root's window cells the transform
    # of f restricted to the dilated root is bounded by the certified
    # constant times the stacked coefficients
    grid = Grid(1, 64)
    f = supported_noise(grid, seed, 8, 56)
    k = make_kernel("hilbert")
    root = Cube((16,), 32)
    entries, records = local_sparse_family(k, f, root)
    c = constant_from_records(records)
    t_loc = apply_restricted(k, f, source=CellSet.from_cube(grid, dilate(root, 3)))
    stack = np.zeros(grid.shape)
    for e in entries:
        clip = e.base_cube.window_clip(grid)
        if clip is None:
            continue
        sl = tuple(slice(lo, hi) for lo, hi in clip)
        stack[sl] += e.coefficient
    clip = root.window_clip(grid)
    sl = tuple(slice(lo, hi) for lo, hi in clip)
    assert np.all(np.abs(t_loc.values[sl]) <= c * stack[sl] + 1e-10)


def test_local_family_odd_ring_side_flags_and_still_dominates():
    # side-12 root forces an odd split at side 3
    grid = Grid(1, 64)
    f = supported_noise(grid, 3, 0, 24)
    k = make_kernel("hilbert")
    cfg = PipelineConfig(alpha=3, support=Cube((0,), 4))
    res = build_sparse_domination(k, f, cfg)
    assert res.ledger.flag_counts.get("odd_leaf", 0) > 0
    tf = np.abs(apply_restricted(k, f).values)
    assert np.all(tf <= res.family.constant * sparse_sum(res.family) + 1e-10)


# ---------------------------------------------------------------------------
# full pipeline

@pytest.mark.parametrize("kname,dim,n,alpha", [
    ("hilbert", 1, 64, 3),
    ("hilbert", 1, 64, 5),
    ("holder", 1, 64, 3),
    ("dini_stress", 1, 64, 3),
    ("riesz2d", 2, 16, 3),
])
def test_pipeline_domination_and_sparsity(kname, dim, n, alpha):
    grid = Grid(dim, n)
    k = make_kernel(kname, grid) if kname != "hilbert" else make_kernel("hilbert")
    f = supported_noise(grid, 19, n // 4, 3 * n // 4)
    res = build_sparse_domination(k, f, PipelineConfig(alpha=alpha))
    fam = res.family
    assert fam.eta == pytest.approx(1.0 / (2 * alpha**dim))
    tf = np.abs(apply_restricted(k, f).values)
    assert np.all(tf <= fam.constant * sparse_sum(fam) + 1e-10)
    assert witness_canvas(fam).max() <= 1
    for e in fam.entries:
        assert e.witness.count >= fam.eta * e.cube.cell_count - 1e-9


def test_pipeline_complex_input():
    grid = Grid(1, 64)
    g = rng(23)
    vals = np.zeros(64, dtype=complex)
    vals[16:48] = g.normal(size=32) + 1j * g.normal(size=32)
    f = GridFunction(grid, vals)
    k = make_kernel("hilbert")
    res = build_sparse_domination(k, f, PipelineConfig(alpha=3))
    tf = np.abs(apply_restricted(k, f).values)
    assert np.all(tf <= res.family.constant * sparse_sum(res.family) + 1e-10)


def test_pipeline_zero_input():
    grid = Grid(1, 32)
    res = build_sparse_domination(make_kernel("hilbert"), GridFunction.zero(grid))
    assert len(res.family.entries) == 1
    assert res.family.constant == 0.0
    assert res.family.entries[0].coefficient == 0.0
    assert res.family.entries[0].flags == ("zero_input",)


def test_pipeline_deterministic():
    grid = Grid(1, 64)
    k = make_kernel("hilbert")
    runs = []
    for _ in range(2):
        f = supported_noise(grid, 31, 16, 48)
        res = build_sparse_domination(k, f, PipelineConfig(alpha=3))
        runs.append(res)
    a, b = runs
    assert a.family.constant == b.family.constant
    assert len(a.family.entries) == len(b.family.entries)
    for ea, eb in zip(a.family.entries, b.family.entries):
        assert ea.cube == eb.cube and ea.coefficient == eb.coefficient
        assert np.array_equal(ea.witness.mask, eb.witness.mask)


def test_pipeline_depth_cap_still_dominates_with_flag():
    grid = Grid(1, 64)
    f = supported_noise(grid, 37, 16, 48)
    k = make_kernel("hilbert")
    res = build_sparse_domination(k, f, PipelineConfig(alpha=3, max_depth=0))
    assert res.ledger.flag_counts.get("depth_capped", 0) > 0
    tf = np.abs(apply_restricted(k, f).values)
    assert np.all(tf <= res.family.constant * sparse_sum(res.family) + 1e-10)


def test_pipeline_fixed_mode_flags_but_continues():
    grid = Grid(1, 64)
    f = supported_noise(grid, 41, 16, 48)
    k = make_kernel("hilbert")
    res = build_sparse_domination(
        k, f, PipelineConfig(alpha=3, mode="fixed", c_fixed=0.5, a_fixed=0.2))
    assert res.ledger.flag_counts.get("measure_violation", 0) > 0
    tf = np.abs(apply_restricted(k, f).values)
    assert np.all(tf <= res.family.constant * sparse_sum(res.family) + 1e-10)


def test_pipeline_constant_stable_under_refinement():
    k = make_kernel("hilbert")
    base = rng(43).normal(size=32)
    consts = []
    for reps, n in [(1, 64), (2, 128)]:
        grid = Grid(1, n)
        vals = np.zeros(n)
        vals[n // 4: n // 4 + 32 * reps] = np.repeat(base, reps)
        res = build_sparse_domination(k, GridFunction(grid, vals),
                                      PipelineConfig(alpha=3))
        consts.append(res.family.constant)
    assert consts[1] <= 2 * consts[0] and consts[0] <= 2 * consts[1]


def test_pipeline_dim_mismatch():
    grid = Grid(2, 8)
    f = GridFunction(grid, np.ones(grid.shape))
    with pytest.raises(ParameterError):
        build_sparse_domination(make_kernel("hilbert"), f)


def test_witness_runs_round_trip():
    grid = Grid(1, 32)
    f = supported_noise(grid, 47, 4, 28)
    res = build_sparse_domination(make_kernel("hilbert"), f, PipelineConfig(alpha=3))
    for e in res.family.entries:
        rebuilt = np.zeros(e.witness.mask.size, dtype=bool)
        for start, length in e.witness_runs():
            rebuilt[start:start + length] = True
        assert np.array_equal(rebuilt.reshape(e.witness.mask.shape), e.witness.mask)


def test_config_validation():
    with pytest.raises(ParameterError):
        PipelineConfig(alpha=4)
    with pytest.raises(ParameterError):
        PipelineConfig(alpha=1)
    with pytest.raises(ParameterError):
        PipelineConfig(s=0.0)
    with pytest.raises(ParameterError):
        PipelineConfig(mode="fixed")
    with pytest.raises(ParameterError):
        PipelineConfig(mode="fixed", c_fixed=-1.0, a_fixed=1.0)
    with pytest.raises(ParameterError):
        PipelineConfig(max_depth=-1)
