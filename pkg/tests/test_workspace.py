import math

import numpy as np
import pytest

from tilearray.kinematics import TileGeometry, TilePose, is_feasible, make_pose
from tilearray.workspace import (ArrayConfig, PairCheckCounter, PoseGrid, WorkspaceSet,
                                 alpha_beta_max, check_pair_valid, enumerate_workspace,
                                 min_material_length, pair_separation,
                                 radially_symmetric_subset, shared_workspace_naive,
                                 shared_workspace_symmetric, sweep_material, taut_assist_pose,
                                 taut_candidates, taut_curves, write_sweep_csv,
                                 write_workspace_csv)

GEOM = TileGeometry()
FLAT0 = TileGeometry(effector_height=0.0)


def single(pose):
    return enumerate_workspace(GEOM, PoseGrid.from_values([pose[0]], [pose[1]], [pose[2]]))


def small_grid(n_delta=16, n_phi=4, n_r=4, phi_max=math.pi / 18):
    return PoseGrid.regular(n_delta, n_phi, n_r, phi_max, 60.0, 120.0)


def test_grid_shape_and_endpoints():
    g = PoseGrid.regular()
    assert g.shape == (64, 32, 24) and g.size == 64 * 32 * 24
    assert g.phis[0] == 0 and g.phis[-1] == pytest.approx(7 * math.pi / 18)
    assert g.rs[0] == 10 and g.rs[-1] == 131.5
    assert g.is_periodic_delta() and g.deltas.max() < 2 * math.pi
    with pytest.raises(ValueError):
        PoseGrid.regular(0, 2, 2)
    with pytest.raises(ValueError):
        PoseGrid.from_values([], [0], [90])


def test_array_config_defaults_and_validation():
    c = ArrayConfig()
    assert (c.D, c.L, c.rows, c.cols) == (261, 150, 2, 2)
    for kw in (dict(rows=0), dict(inter_tile_distance=0), dict(material_length=-1)):
        with pytest.raises(ValueError):
            ArrayConfig(**kw)


def test_enumerate_examples():
    assert single((0, 0, 90)).count == 1
    assert single((0, 0, 140)).count == 0
    grid = PoseGrid.from_values([0.0], [0.0], np.linspace(5, 140, 28))
    ws = enumerate_workspace(GEOM, grid)
    expect = grid.rs <= 140 * math.sin(7 * math.pi / 18)
    assert np.array_equal(ws.valid[0, 0], expect)


def test_enumerate_matches_ik():
    ws = enumerate_workspace(GEOM, PoseGrid.regular(12, 6, 6))
    d, p, r = ws.grid.mesh()
    for idx in np.ndindex(ws.valid.shape):
        assert ws.valid[idx] == is_feasible(TilePose(d[idx], p[idx], r[idx]), GEOM)


def test_radial_subset():
    ws = enumerate_workspace(GEOM, PoseGrid.regular(24, 12, 10))
    rad = radially_symmetric_subset(ws)
    assert rad.radially_symmetric and rad.subset_of(ws)
    # every kept (phi, r) is valid at every sampled delta
    assert np.array_equal(rad.valid, np.broadcast_to(rad.valid.any(axis=0), rad.valid.shape))
    # flat poses stay when reachable
    assert np.array_equal(rad.valid[:, 0, :], ws.valid[:, 0, :])
    # a (phi, r) that is valid at some delta but not all of them is dropped
    partial = ws.valid.any(axis=0) & ~ws.valid.all(axis=0)
    assert partial.any()
    assert not rad.valid[:, partial].any()


def test_tilt_reach_depends_on_delta():
    # along a leg line tilt reach differs from between legs; the subset drops the difference
    grid = PoseGrid.from_values([0.0, math.pi / 3], np.linspace(0, 0.9, 91), [90.0])
    ws = enumerate_workspace(GEOM, grid)
    reach = [grid.phis[ws.valid[k, :, 0]].max() for k in range(2)]
    assert reach[0] != reach[1]
    rad = radially_symmetric_subset(ws)
    assert grid.phis[rad.valid[0, :, 0]].max() == pytest.approx(min(reach))


def test_pair_separation_examples():
    flat = TilePose(0, 0, 90)
    assert pair_separation(flat, flat, (261, 0), FLAT0).alpha == pytest.approx(111, abs=1e-9)
    assert pair_separation(flat, flat, (261, 261), FLAT0).beta == pytest.approx(156.978, abs=1e-3)
    assert pair_separation(flat, flat, (261, 261), FLAT0).beta == pytest.approx(math.sqrt(2) * 111)
    toward = make_pose(0, 0.2, 90)
    assert pair_separation(toward, flat, (261, 0), GEOM).alpha < pair_separation(flat, flat, (261, 0), GEOM).alpha
    with pytest.raises(ValueError):
        pair_separation(flat, flat, (261, 100), GEOM)


@pytest.mark.parametrize("offset", [(261, 0), (0, 261), (-261, 0), (0, -261)])
def test_separation_relabel_symmetry(offset):
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = make_pose(rng.uniform(0, 6.28), rng.uniform(0, 0.4), rng.uniform(60, 120))
        b = make_pose(rng.uniform(0, 6.28), rng.uniform(0, 0.4), rng.uniform(60, 120))
        ab = pair_separation(a, b, offset, GEOM).alpha
        ba = pair_separation(b, a, (-offset[0], -offset[1]), GEOM).alpha
        assert ab == pytest.approx(ba, abs=1e-9)


def test_separation_continuous():
    base = np.array([0.7, 0.2, 90.0])
    a0 = pair_separation(TilePose(*base), TilePose(0, 0, 90), (261, 0), GEOM).alpha
    for step in (1e-3, 1e-4, 1e-5):
        a1 = pair_separation(TilePose(*(base + step)), TilePose(0, 0, 90), (261, 0), GEOM).alpha
        assert abs(a1 - a0) <= 200 * step


def test_check_pair_valid():
    flat = TilePose(0, 0, 90)
    assert check_pair_valid(flat, flat, "edge", ArrayConfig(material_length=150), FLAT0)
    assert check_pair_valid(flat, flat, "edge", ArrayConfig(material_length=111), FLAT0)
    assert not check_pair_valid(flat, flat, "edge", ArrayConfig(material_length=110.9), FLAT0)
    assert check_pair_valid(flat, flat, "diagonal", ArrayConfig(material_length=111), FLAT0)
    assert not check_pair_valid(flat, flat, "diagonal", ArrayConfig(material_length=110.9), FLAT0)
    with pytest.raises(ValueError):
        check_pair_valid(flat, flat, "corner", ArrayConfig(), GEOM)


def test_shared_flat_single_pose():
    ws = single((0, 0, 90))
    counter = PairCheckCounter()
    assert shared_workspace_naive(ws, ArrayConfig(), FLAT0, counter).count == 1
    assert counter.count == 8


@pytest.mark.parametrize("D,L", [(261, 150), (261, 170), (261, 200), (240, 200)])
def test_shared_symmetric_matches_naive_radial(D, L):
    ws = radially_symmetric_subset(enumerate_workspace(GEOM, small_grid()))
    cfg = ArrayConfig(inter_tile_distance=D, material_length=L)
    cn, cs = PairCheckCounter(), PairCheckCounter()
    naive = shared_workspace_naive(ws, cfg, GEOM, cn)
    fast = shared_workspace_symmetric(ws, cfg, GEOM, cs)
    assert np.array_equal(naive.valid, fast.valid)
    assert cs.count < cn.count


@pytest.mark.parametrize("L", [170, 200])
def test_shared_symmetric_matches_naive_aligned(L):
    ws = enumerate_workspace(GEOM, small_grid(n_delta=16, phi_max=math.pi / 12))
    assert not ws.radially_symmetric
    cfg = ArrayConfig(material_length=L)
    cn, cs = PairCheckCounter(), PairCheckCounter()
    naive = shared_workspace_naive(ws, cfg, GEOM, cn)
    fast = shared_workspace_symmetric(ws, cfg, GEOM, cs)
    assert np.array_equal(naive.valid, fast.valid)
    P = ws.count
    assert cs.count <= 4.4 * P * P


def test_shared_monotone_in_L():
    ws = radially_symmetric_subset(enumerate_workspace(GEOM, small_grid()))
    prev = None
    for L in (150, 170, 190, 210, 240):
        cur = shared_workspace_symmetric(ws, ArrayConfig(material_length=L), GEOM)
        if prev is not None:
            assert prev.subset_of(cur)
        prev = cur


def test_alpha_beta_flat():
    ws = single((0, 0, 90))
    a, b = alpha_beta_max(ws, 261, FLAT0)
    assert a == pytest.approx(111) and b == pytest.approx(156.978, abs=1e-3)
    assert min_material_length(ws, 261, FLAT0) == pytest.approx(111)
    a2, _ = alpha_beta_max(ws, 522, FLAT0)
    assert a2 - a == pytest.approx(261)
    with pytest.raises(ValueError):
        alpha_beta_max(single((0, 0, 140)), 261, GEOM)


def test_alpha_beta_matches_pairwise():
    ws = radially_symmetric_subset(enumerate_workspace(GEOM, small_grid(8, 3, 3, 0.3)))
    poses = [TilePose(*p) for p in ws.valid_poses()]
    a, b = alpha_beta_max(ws, 261, GEOM)
    brute_a = max(pair_separation(p, q, (261, 0), GEOM).alpha for p in poses for q in poses)
    brute_b = max(pair_separation(p, q, (261, 261), GEOM).beta for p in poses for q in poses)
    assert a == pytest.approx(brute_a, abs=1e-9)
    assert b == pytest.approx(brute_b, abs=1e-9)


def test_min_material_length_is_tight():
    ws = radially_symmetric_subset(enumerate_workspace(GEOM, small_grid(16, 3, 3, 0.15)))
    L = min_material_length(ws, 261, GEOM)
    full = shared_workspace_naive(ws, ArrayConfig(material_length=L), GEOM)
    assert full.count == ws.count
    short = shared_workspace_naive(ws, ArrayConfig(material_length=L - 1), GEOM)
    assert short.count < ws.count


def test_sweep_trends_and_errors(tmp_path):
    ws = radially_symmetric_subset(enumerate_workspace(GEOM, PoseGrid.regular(32, 16, 12)))
    rows = sweep_material(ws, range(200, 321, 20), GEOM)
    alpha = [r.alpha_max for r in rows]
    beta = [r.beta_max / math.sqrt(2) for r in rows]
    assert all(b > a for a, b in zip(alpha, alpha[1:]))
    assert all(b > a for a, b in zip(beta, beta[1:]))
    assert all(a >= b for a, b in zip(alpha, beta))
    one = sweep_material(ws, [261], GEOM)[0]
    assert one.L_min == pytest.approx(one.alpha_max)
    with pytest.raises(ValueError):
        sweep_material(ws, [], GEOM)
    with pytest.raises(ValueError):
        sweep_material(ws, [300, 200], GEOM)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "D_mm,alpha_max_mm,beta_max_mm,L_min_mm" and len(lines) == 8


def test_taut_examples():
    ws = enumerate_workspace(GEOM, PoseGrid.regular())
    flat = TilePose(0, 0, 90)
    res = taut_assist_pose(flat, ArrayConfig(), ws, GEOM)
    assert res.taut and 148 <= res.alpha <= 152
    assert res.pose.delta == 0 or res.pose.phi == 0
    cand, alpha, gamma = taut_candidates(flat, ArrayConfig(), ws, GEOM)
    ok = np.abs(alpha - 150) <= 2
    assert res.gamma >= gamma[ok].max() - 1e-12
    far = taut_assist_pose(flat, ArrayConfig(material_length=1000), ws, GEOM)
    assert not far.taut


def test_taut_curves_gamma_non_increasing():
    # only on-axis poses matter, so delta can stay coarse; phi and r must be fine
    ws = enumerate_workspace(GEOM, PoseGrid.regular(4, 120, 120))
    rows = taut_curves(TilePose(0, 0, 90), 261, np.arange(110, 240, 5), ws, GEOM)
    by_L = {}
    for L, r, phi, gamma in rows:
        if not math.isnan(gamma):
            by_L[L] = max(by_L.get(L, -math.inf), gamma)
    Ls = sorted(by_L)
    assert len(Ls) > 3
    peak = int(np.argmax([by_L[L] for L in Ls]))
    tail = [by_L[L] for L in Ls[peak:]]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_workspace_csv(tmp_path):
    ws = enumerate_workspace(GEOM, PoseGrid.regular(4, 3, 3))
    path = tmp_path / "ws.csv"
    write_workspace_csv(ws, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "delta_rad,phi_rad,r_mm,valid" and len(lines) == 1 + 36
    rad = radially_symmetric_subset(ws)
    write_workspace_csv(rad, path, only_valid=True)
    assert len(path.read_text().splitlines()) == 1 + rad.count


def test_workspace_set_contains():
    ws = enumerate_workspace(GEOM, PoseGrid.regular(4, 3, 3))
    assert isinstance(ws, WorkspaceSet)
    d, p, r = ws.valid_poses()[0]
    assert ws.contains(TilePose(d, p, r))
    assert not ws.contains(TilePose(0.123, 0.456, 78.9))
