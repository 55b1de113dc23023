"""Workspace analysis for tiles joined by an inextensible strip of material.

Edge neighbours are joined along their facing plate edges; the larger of the
two distal-corner distances is ``alpha`` and must not exceed the material
length ``L``. Diagonal neighbours are joined at their nearest corners; that
distance ``beta`` must not exceed ``sqrt(2) * L``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .kinematics import (CORNER_ORDER, TileGeometry, TilePose, ik_batch, local_corners,
                         make_pose)

SQRT2 = math.sqrt(2.0)
EDGE_OFFSETS = ((1, 0), (0, 1), (-1, 0), (0, -1))
DIAGONAL_OFFSETS = ((1, 1), (-1, 1), (-1, -1), (1, -1))
_CORNER_INDEX = {c: k for k, c in enumerate(CORNER_ORDER)}


@dataclass(frozen=True)
class PoseGrid:
    """Regular sampling of pose space. ``delta`` is periodic and excludes 2pi."""

    deltas: np.ndarray
    phis: np.ndarray
    rs: np.ndarray

    @classmethod
    def regular(cls, n_delta: int = 64, n_phi: int = 32, n_r: int = 24,
                phi_max: float = 7 * math.pi / 18, r_min: float = 10.0,
                r_max: float = 131.5) -> PoseGrid:
        if min(n_delta, n_phi, n_r) < 1:
            raise ValueError("every axis needs at least one sample")
        deltas = 2 * math.pi * np.arange(n_delta) / n_delta
        phis = np.linspace(0.0, phi_max, n_phi) if n_phi > 1 else np.array([0.0])
        rs = np.linspace(r_min, r_max, n_r) if n_r > 1 else np.array([float(r_max)])
        return cls(deltas, phis, rs)

    @classmethod
    def from_values(cls, deltas: Iterable[float], phis: Iterable[float],
                    rs: Iterable[float]) -> PoseGrid:
        arrs = [np.atleast_1d(np.asarray(list(v), dtype=float)) for v in (deltas, phis, rs)]
        if min(a.size for a in arrs) == 0:
            raise ValueError("every axis needs at least one sample")
        return cls(*arrs)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.deltas.size, self.phis.size, self.rs.size)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.deltas, self.phis, self.rs, indexing="ij")

    def is_periodic_delta(self) -> bool:
        n = self.deltas.size
        return np.allclose(self.deltas, 2 * math.pi * np.arange(n) / n, atol=1e-12)


@dataclass(frozen=True)
class WorkspaceSet:
    grid: PoseGrid
    valid: np.ndarray  # bool, grid.shape
    radially_symmetric: bool = False

    @property
    def count(self) -> int:
        return int(self.valid.sum())

    def valid_poses(self) -> np.ndarray:
        """``(P, 3)`` array of ``(delta, phi, r)`` for valid grid points, grid order."""
        d, p, r = self.grid.mesh()
        m = self.valid
        return np.column_stack([d[m], p[m], r[m]])

    def valid_indices(self) -> np.ndarray:
        return np.argwhere(self.valid)

    def contains(self, pose: TilePose, atol: float = 1e-9) -> bool:
        g = self.grid
        i = np.flatnonzero(np.isclose(g.deltas, pose.delta % (2 * math.pi), atol=atol))
        j = np.flatnonzero(np.isclose(g.phis, pose.phi, atol=atol))
        k = np.flatnonzero(np.isclose(g.rs, pose.r, atol=atol))
        if pose.phi == 0.0 and j.size and k.size:
            return bool(self.valid[:, j[0], k[0]].any())
        return bool(i.size and j.size and k.size and self.valid[i[0], j[0], k[0]])

    def subset_of(self, other: WorkspaceSet) -> bool:
        return bool(np.all(~self.valid | other.valid))


@dataclass(frozen=True)
class PairSeparation:
    """Corner separations between two plates.

    ``alpha`` is defined for edge neighbours and ``beta`` for diagonal ones; the
    quantity that does not apply to the given offset is NaN.
    """

    alpha: float
    beta: float


@dataclass(frozen=True)
class ArrayConfig:
    rows: int = 2
    cols: int = 2
    inter_tile_distance: float = 261.0
    material_length: float = 150.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array needs at least one row and one column")
        if self.inter_tile_distance <= 0 or self.material_length <= 0:
            raise ValueError("inter_tile_distance and material_length must be positive")

    @property
    def D(self) -> float:
        return self.inter_tile_distance

    @property
    def L(self) -> float:
        return self.material_length


@dataclass(frozen=True)
class SweepRow:
    D: float
    alpha_max: float
    beta_max: float
    L_min: float


@dataclass
class PairCheckCounter:
    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


# --- corner geometry ------------------------------------------------------

def corners_batch(poses: np.ndarray, geom: TileGeometry) -> np.ndarray:
    """World corners ``(P, 4, 3)`` for an array of ``(delta, phi, r)`` rows."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    d, p, r = poses[:, 0], poses[:, 1], poses[:, 2]
    cd, sd, cp, sp = np.cos(d), np.sin(d), np.cos(p), np.sin(p)
    kx, ky, vc = -sd, cd, 1.0 - cp
    rot = np.empty((len(poses), 3, 3))
    rot[:, 0, 0] = cp + kx * kx * vc
    rot[:, 0, 1] = kx * ky * vc
    rot[:, 0, 2] = ky * sp
    rot[:, 1, 0] = kx * ky * vc
    rot[:, 1, 1] = cp + ky * ky * vc
    rot[:, 1, 2] = -kx * sp
    rot[:, 2, 0] = -ky * sp
    rot[:, 2, 1] = kx * sp
    rot[:, 2, 2] = cp
    t = np.column_stack([r * sp * cd, r * sp * sd, r * cp])
    return np.einsum("pij,cj->pci", rot, local_corners(geom)) + t[:, None, :]


def _offset_kind(unit: tuple[int, int]) -> str:
    ux, uy = unit
    if (ux, uy) in EDGE_OFFSETS:
        return "edge"
    if (ux, uy) in DIAGONAL_OFFSETS:
        return "diagonal"
    raise ValueError(f"offset direction {unit} is not an edge or diagonal neighbour")


def corner_pairs(unit: tuple[int, int]) -> list[tuple[int, int]]:
    """Index pairs ``(corner on a, corner on b)`` bonded by the material.

    Edge neighbours pair each distal corner of a's facing edge with the like
    corner of b's facing edge. Diagonal neighbours share a single nearest
    corner pair.
    """
    ux, uy = unit
    if _offset_kind(unit) == "diagonal":
        return [(_CORNER_INDEX[(ux, uy)], _CORNER_INDEX[(-ux, -uy)])]
    pairs = []
    for i, j in CORNER_ORDER:
        if i * ux + j * uy > 0:
            partner = (-i, j) if ux else (i, -j)
            pairs.append((_CORNER_INDEX[(i, j)], _CORNER_INDEX[partner]))
    return pairs


def _unit_of(offset) -> tuple[tuple[int, int], float]:
    ox, oy = float(offset[0]), float(offset[1])
    ax, ay = abs(ox), abs(oy)
    if ax > 0 and ay > 0 and math.isclose(ax, ay, rel_tol=1e-12):
        return (int(math.copysign(1, ox)), int(math.copysign(1, oy))), ax
    if ax > 0 and ay == 0:
        return (int(math.copysign(1, ox)), 0), ax
    if ay > 0 and ax == 0:
        return (0, int(math.copysign(1, oy))), ay
    raise ValueError(f"offset {offset} is not an edge or diagonal neighbour relation")


def separation_matrix(ca: np.ndarray, cb: np.ndarray, unit: tuple[int, int],
                      D: float) -> np.ndarray:
    """``alpha`` (edge) or ``beta`` (diagonal) for every pair of rows in ``ca`` x ``cb``."""
    shift = np.array([unit[0] * D, unit[1] * D, 0.0])
    out = None
    for ia, ib in corner_pairs(unit):
        diff = ca[:, None, ia, :] - (cb[None, :, ib, :] + shift)
        dist = np.sqrt(np.einsum("pqk,pqk->pq", diff, diff))
        out = dist if out is None else np.maximum(out, dist)
    return out


def pair_separation(pose_a: TilePose, pose_b: TilePose, offset, geom: TileGeometry) -> PairSeparation:
    unit, D = _unit_of(offset)
    ca = corners_batch(np.array([pose_a.as_tuple()]), geom)
    cb = corners_batch(np.array([pose_b.as_tuple()]), geom)
    value = float(separation_matrix(ca, cb, unit, D)[0, 0])
    if _offset_kind(unit) == "edge":
        return PairSeparation(alpha=value, beta=math.nan)
    return PairSeparation(alpha=math.nan, beta=value)


def check_pair_valid(pose_a: TilePose, pose_b: TilePose, relation: str, config: ArrayConfig,
                     geom: TileGeometry, offset=None) -> bool:
    if relation not in ("edge", "diagonal"):
        raise ValueError(f"unknown relation {relation!r}")
    if offset is None:
        D = config.D
        offset = (D, 0.0) if relation == "edge" else (D, D)
    sep = pair_separation(pose_a, pose_b, offset, geom)
    if relation == "edge":
        if math.isnan(sep.alpha):
            raise ValueError("edge relation needs an edge offset")
        return config.L >= sep.alpha
    if math.isnan(sep.beta):
        raise ValueError("diagonal relation needs a diagonal offset")
    return SQRT2 * config.L >= sep.beta


# --- single tile workspace ------------------------------------------------

def enumerate_workspace(geom: TileGeometry, grid: PoseGrid) -> WorkspaceSet:
    d, p, r = grid.mesh()
    theta = ik_batch(d.ravel(), p.ravel(), r.ravel(), geom)
    valid = ~np.isnan(theta).any(axis=1)
    return WorkspaceSet(grid, valid.reshape(grid.shape), radially_symmetric=False)


def radially_symmetric_subset(ws: WorkspaceSet) -> WorkspaceSet:
    keep = ws.valid.all(axis=0, keepdims=True)
    return WorkspaceSet(ws.grid, np.broadcast_to(keep, ws.valid.shape).copy(),
                        radially_symmetric=True)


# --- shared workspace -----------------------------------------------------

def _threshold(unit: tuple[int, int], L: float) -> float:
    return L if _offset_kind(unit) == "edge" else SQRT2 * L


def _violation_rows(ca, cb, unit, D, limit, chunk=256):
    """Per-row and per-column "any violation" flags of the ``ca`` x ``cb`` check matrix."""
    rows = np.zeros(len(ca), dtype=bool)
    cols = np.zeros(len(cb), dtype=bool)
    for s in range(0, len(ca), chunk):
        bad = separation_matrix(ca[s:s + chunk], cb, unit, D) > limit
        rows[s:s + chunk] = bad.any(axis=1)
        cols |= bad.any(axis=0)
    return rows, cols


def shared_workspace_naive(ws: WorkspaceSet, config: ArrayConfig, geom: TileGeometry,
                           counter: PairCheckCounter | None = None) -> WorkspaceSet:
    """Brute force: every valid pose against every valid pose at all 8 neighbour offsets."""
    poses = ws.valid_poses()
    corners = corners_batch(poses, geom) if len(poses) else np.zeros((0, 4, 3))
    bad = np.zeros(len(poses), dtype=bool)
    for unit in EDGE_OFFSETS + DIAGONAL_OFFSETS:
        rows, _ = _violation_rows(corners, corners, unit, config.D, _threshold(unit, config.L))
        bad |= rows
        if counter is not None:
            counter.add(len(poses) ** 2)
    return _with_valid(ws, bad)


def _with_valid(ws: WorkspaceSet, bad: np.ndarray) -> WorkspaceSet:
    valid = ws.valid.copy()
    idx = ws.valid_indices()
    valid[tuple(idx[bad].T)] = False
    return WorkspaceSet(ws.grid, valid, ws.radially_symmetric)


def _delta_permutation(ws: WorkspaceSet, mapping) -> np.ndarray:
    """Position in the valid list of each valid pose after the delta-index map."""
    n = ws.grid.deltas.size
    idx = ws.valid_indices()
    lookup = -np.ones(ws.valid.shape, dtype=np.int64)
    lookup[tuple(idx.T)] = np.arange(len(idx))
    target = lookup[mapping(idx[:, 0]) % n, idx[:, 1], idx[:, 2]]
    if (target < 0).any():
        raise ValueError("workspace is not invariant under the requested symmetry")
    return target


def _require_symmetry_grid(ws: WorkspaceSet, multiple: int) -> None:
    n = ws.grid.deltas.size
    if not ws.grid.is_periodic_delta() or n % multiple:
        raise ValueError(f"symmetric evaluation needs a uniform delta grid with a multiple of "
                         f"{multiple} samples")


def shared_workspace_symmetric(ws: WorkspaceSet, config: ArrayConfig, geom: TileGeometry,
                               counter: PairCheckCounter | None = None) -> WorkspaceSet:
    """Same retained set as :func:`shared_workspace_naive` with far fewer pair checks.

    A radially symmetric workspace is closed under quarter turns and under the
    mirror lines of the square array, so one half-set of rows against a single
    edge neighbour and a single diagonal neighbour decides every pose (about
    P^2 checks). Any other workspace only shares the y-mirror with the array;
    then three neighbour matrices are evaluated, one of them on half its rows.
    """
    if ws.radially_symmetric:
        return _shared_radial(ws, config, geom, counter)
    return _shared_aligned(ws, config, geom, counter)


def _shared_radial(ws, config, geom, counter):
    _require_symmetry_grid(ws, 8)
    n = ws.grid.deltas.size
    if not np.array_equal(ws.valid, np.broadcast_to(ws.valid.any(axis=0), ws.valid.shape)):
        raise ValueError("workspace is marked radially symmetric but is not")
    poses = ws.valid_poses()
    P = len(poses)
    if P == 0:
        return ws
    corners = corners_batch(poses, geom)
    k = ws.valid_indices()[:, 0]
    bad = np.zeros(P, dtype=bool)
    quarter = n // 4
    # rows of the +x edge neighbour for delta in [0, pi]; the y-mirror covers the rest
    mirror_y = _delta_permutation(ws, lambda d: -d)
    half = k <= n // 2
    rows = np.zeros(P, dtype=bool)
    rows[half], _ = _violation_rows(corners[half], corners, (1, 0), config.D, config.L)
    rows[~half] = rows[mirror_y[~half]]
    # (+x,+y) diagonal: mirror across y = x is delta -> pi/2 - delta
    mirror_diag = _delta_permutation(ws, lambda d: quarter - d)
    kd = (k - n // 8) % n
    dhalf = (kd == 0) | (kd >= n // 2)
    drows = np.zeros(P, dtype=bool)
    drows[dhalf], _ = _violation_rows(corners[dhalf], corners, (1, 1), config.D,
                                      SQRT2 * config.L)
    drows[~dhalf] = drows[mirror_diag[~dhalf]]
    if counter is not None:
        counter.add((int(half.sum()) + int(dhalf.sum())) * P)
    # neighbour rotated by a quarter turn sees the pose rotated back by one
    for turn in range(4):
        back = _delta_permutation(ws, lambda d, t=turn: d - t * quarter)
        bad |= rows[back] | drows[back]
    return _with_valid(ws, bad)


def _shared_aligned(ws, config, geom, counter):
    _require_symmetry_grid(ws, 2)
    n = ws.grid.deltas.size
    poses = ws.valid_poses()
    P = len(poses)
    if P == 0:
        return ws
    corners = corners_batch(poses, geom)
    k = ws.valid_indices()[:, 0]
    mirror_y = _delta_permutation(ws, lambda d: -d)
    half = k <= n // 2
    # +x neighbour: the y-mirror maps it onto itself, so half of the rows suffice
    # to rebuild the full matrix; its columns give the -x neighbour
    east_rows = np.zeros(P, dtype=bool)
    east_rows[half], half_cols = _violation_rows(corners[half], corners, (1, 0), config.D,
                                                 config.L)
    east_rows[~half] = east_rows[mirror_y[~half]]
    # column q of the full matrix: half rows against q, or against mirror(q)
    west_rows = half_cols | half_cols[mirror_y]
    north_rows, south_rows = _violation_rows(corners, corners, (0, 1), config.D, config.L)
    ne_rows, sw_rows = _violation_rows(corners, corners, (1, 1), config.D, SQRT2 * config.L)
    se_rows = ne_rows[mirror_y]
    nw_rows = sw_rows[mirror_y]
    if counter is not None:
        counter.add(int(half.sum()) * P + 2 * P * P)
    bad = east_rows | west_rows | north_rows | south_rows | ne_rows | sw_rows | se_rows | nw_rows
    return _with_valid(ws, bad)


# --- material length sweeps -----------------------------------------------

def _hull_rows(points: np.ndarray) -> np.ndarray:
    """Row indices of ``points`` that are convex hull vertices (all rows when degenerate)."""
    _, first = np.unique(points, axis=0, return_index=True)
    if len(first) < 5:
        return first
    try:
        return first[ConvexHull(points[first]).vertices]
    except QhullError:
        return first


def _max_separation(corners: np.ndarray, unit: tuple[int, int], D: float) -> float:
    # the farthest pair lies on hull vertices; evaluating those rows with the
    # pairwise formula keeps the maximum bit-identical to the brute-force check
    rows = np.unique(np.concatenate([_hull_rows(corners[:, k, :]) for k in range(4)]))
    sub = corners[rows]
    return float(separation_matrix(sub, sub, unit, D).max())


def alpha_beta_max(ws: WorkspaceSet, D: float, geom: TileGeometry) -> tuple[float, float]:
    """Largest ``alpha`` and ``beta`` over all pose pairs drawn from ``ws``.

    The farthest pair between two point sets lies on their convex hulls, so
    only hull vertices of each bonded corner's trajectory are compared.
    """
    poses = ws.valid_poses()
    if len(poses) == 0:
        raise ValueError("workspace is empty")
    corners = corners_batch(poses, geom)
    a = max(_max_separation(corners, u, D) for u in EDGE_OFFSETS)
    b = max(_max_separation(corners, u, D) for u in DIAGONAL_OFFSETS)
    return a, b


def min_material_length(ws: WorkspaceSet, D: float, geom: TileGeometry) -> float:
    a, b = alpha_beta_max(ws, D, geom)
    L = max(a, b / SQRT2)
    while SQRT2 * L < b:  # rounding in b / sqrt2
        L = math.nextafter(L, math.inf)
    return L


def sweep_material(ws: WorkspaceSet, Ds: Iterable[float], geom: TileGeometry) -> list[SweepRow]:
    Ds = [float(d) for d in Ds]
    if not Ds:
        raise ValueError("empty D range")
    if any(b <= a for a, b in zip(Ds, Ds[1:])):
        raise ValueError("D values must be strictly increasing")
    rows = []
    for D in Ds:
        a, b = alpha_beta_max(ws, D, geom)
        rows.append(SweepRow(D, a, b, max(a, b / SQRT2)))
    return rows


# --- taut assisting pose --------------------------------------------------

@dataclass(frozen=True)
class TautResult:
    pose: TilePose
    alpha: float
    gamma: float
    taut: bool


def facing_edge_gamma(ca: np.ndarray, cb: np.ndarray, unit: tuple[int, int], D: float) -> np.ndarray:
    """Inclination of the line joining facing-edge midpoints, for rows of ``cb``.

    Positive when b's edge sits higher than a's, i.e. the strip slopes down
    toward tile a.
    """
    shift = np.array([unit[0] * D, unit[1] * D, 0.0])
    pairs = corner_pairs(unit)
    mid_a = ca[:, [p[0] for p in pairs], :].mean(axis=1)
    mid_b = cb[:, [p[1] for p in pairs], :].mean(axis=1) + shift
    diff = mid_b - mid_a
    return np.arctan2(diff[:, 2], np.hypot(diff[:, 0], diff[:, 1]))


def _axis_candidates(ws: WorkspaceSet, axis_angle: float) -> np.ndarray:
    poses = ws.valid_poses()
    on_axis = np.isclose(np.mod(poses[:, 0] - axis_angle + math.pi, 2 * math.pi) - math.pi,
                         0.0, atol=1e-9) | (poses[:, 1] == 0.0)
    cand = poses[on_axis]
    cand[cand[:, 1] == 0.0, 0] = 0.0
    return np.unique(cand, axis=0)


def taut_candidates(receiving: TilePose, config: ArrayConfig, ws: WorkspaceSet,
                    geom: TileGeometry, axis: tuple[int, int] = (1, 0)):
    """On-axis assisting poses with their ``alpha`` and ``gamma``."""
    _offset_kind(axis)
    axis_angle = math.atan2(axis[1], axis[0])
    cand = _axis_candidates(ws, axis_angle)
    ca = corners_batch(np.array([receiving.as_tuple()]), geom)
    cb = corners_batch(cand, geom) if len(cand) else np.zeros((0, 4, 3))
    alpha = separation_matrix(ca, cb, axis, config.D)[0] if len(cand) else np.zeros(0)
    gamma = facing_edge_gamma(np.repeat(ca, len(cand), axis=0), cb, axis, config.D)
    return cand, alpha, gamma


def taut_assist_pose(receiving: TilePose, config: ArrayConfig, ws: WorkspaceSet,
                     geom: TileGeometry, axis: tuple[int, int] = (1, 0),
                     tol: float = 2.0) -> TautResult:
    """Assisting-tile pose on the inter-tile axis that pulls the strip taut.

    Among poses with ``|alpha - L| <= tol`` the one with the steepest strip
    (largest ``gamma``) wins. If none is within tolerance the closest pose is
    returned with ``taut=False``.
    """
    if _offset_kind(axis) != "edge":
        raise ValueError("taut assist needs an edge neighbour axis")
    cand, alpha, gamma = taut_candidates(receiving, config, ws, geom, axis)
    if len(cand) == 0:
        raise ValueError("workspace has no pose on the inter-tile axis")
    err = np.abs(alpha - config.L)
    ok = err <= tol
    if ok.any():
        idx = np.flatnonzero(ok)
        best = idx[np.lexsort((err[idx], -gamma[idx]))[0]]
    else:
        best = int(np.lexsort((-gamma, err))[0])
    d, p, r = cand[best]
    return TautResult(make_pose(d, p, r), float(alpha[best]), float(gamma[best]), bool(ok.any()))


def taut_curves(receiving: TilePose, D: float, Ls: Iterable[float], ws: WorkspaceSet,
                geom: TileGeometry, tol: float = 2.0):
    """Rows ``(L, r, max_phi, max_gamma)`` over taut on-axis poses; NaN where none is taut."""
    config = ArrayConfig(inter_tile_distance=D, material_length=1.0)
    cand, alpha, gamma = taut_candidates(receiving, config, ws, geom)
    rows = []
    for L in Ls:
        ok = np.abs(alpha - L) <= tol
        for r in ws.grid.rs:
            m = ok & np.isclose(cand[:, 2], r)
            if m.any():
                rows.append((float(L), float(r), float(cand[m, 1].max()), float(gamma[m].max())))
            else:
                rows.append((float(L), float(r), math.nan, math.nan))
    return rows


# --- CSV ------------------------------------------------------------------

def write_workspace_csv(ws: WorkspaceSet, path, only_valid: bool = False) -> None:
    d, p, r = ws.grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta_rad", "phi_rad", "r_mm", "valid"])
        for dd, pp, rr, vv in zip(d.ravel(), p.ravel(), r.ravel(), ws.valid.ravel()):
            if only_valid and not vv:
                continue
            w.writerow([f"{dd:.9g}", f"{pp:.9g}", f"{rr:.9g}", int(vv)])


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["D_mm", "alpha_max_mm", "beta_max_mm", "L_min_mm"])
        for row in rows:
            w.writerow([f"{row.D:.9g}", f"{row.alpha_max:.9g}", f"{row.beta_max:.9g}",
                        f"{row.L_min:.9g}"])
