"""Region segmentation of the array surface and region-graph path planning."""

from __future__ import annotations

import bisect
import csv
import heapq
import math
from dataclasses import dataclass, field
from enum import IntEnum

from .kinematics import TileGeometry
from .workspace import ArrayConfig


class RegionKind(IntEnum):
    TILE = 0
    INTER_TILE = 1
    CENTRE = 2


@dataclass(frozen=True, order=True)
class RegionId:
    """A region of the surface.

    ``index`` is ``(row, col)`` for a tile, the sorted pair of tile indices for
    an inter-tile strip, and the ``(row, col)`` of the north-west tile of the
    surrounding 2x2 cell for a centre region.
    """

    kind: RegionKind
    index: tuple

    @property
    def label(self) -> str:
        flat = []
        for part in self.index:
            flat.extend(part if isinstance(part, tuple) else (part,))
        return "_".join([self.kind.name] + [str(v) for v in flat])

    def __str__(self) -> str:
        return self.label

    def tiles(self) -> tuple[tuple[int, int], ...]:
        """Tile indices that bound this region."""
        if self.kind is RegionKind.TILE:
            return (self.index,)
        if self.kind is RegionKind.INTER_TILE:
            return self.index
        r, c = self.index
        return ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))


def tile_region(row: int, col: int) -> RegionId:
    return RegionId(RegionKind.TILE, (row, col))


def inter_region(a: tuple[int, int], b: tuple[int, int]) -> RegionId:
    a, b = sorted((tuple(a), tuple(b)))
    if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
        raise ValueError(f"tiles {a} and {b} are not edge neighbours")
    return RegionId(RegionKind.INTER_TILE, (a, b))


def centre_region(row: int, col: int) -> RegionId:
    return RegionId(RegionKind.CENTRE, (row, col))


_COMPASS_TILES = {"NW": (0, 0), "NE": (0, 1), "SW": (1, 0), "SE": (1, 1)}
_COMPASS_STRIPS = {"N": ((0, 0), (0, 1)), "S": ((1, 0), (1, 1)),
                   "W": ((0, 0), (1, 0)), "E": ((0, 1), (1, 1))}


def parse_region(label: str) -> RegionId:
    """Parse a region label.

    Accepts the canonical ``KIND_i_j...`` form and, for 2x2 arrays, compass
    names such as ``TILE_NW``, ``INTER_N`` and ``CENTRE``.
    """
    text = label.strip().upper()
    if text == "CENTRE" or text == "CENTER":
        return centre_region(0, 0)
    head, _, rest = text.partition("_")
    if head == "INTER" and rest.startswith("TILE_"):
        rest = rest[len("TILE_"):]
    if head == "TILE" and rest in _COMPASS_TILES:
        return tile_region(*_COMPASS_TILES[rest])
    if head == "INTER" and rest in _COMPASS_STRIPS:
        return inter_region(*_COMPASS_STRIPS[rest])
    try:
        nums = [int(v) for v in rest.split("_")] if rest else []
    except ValueError:
        raise ValueError(f"unrecognised region label {label!r}") from None
    if head == "TILE" and len(nums) == 2:
        return tile_region(*nums)
    if head == "INTER" and len(nums) == 4:
        return inter_region(tuple(nums[:2]), tuple(nums[2:]))
    if head in ("CENTRE", "CENTER") and len(nums) == 2:
        return centre_region(*nums)
    raise ValueError(f"unrecognised region label {label!r}")


@dataclass(frozen=True)
class Region:
    id: RegionId
    rect: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    centre: tuple[float, float]

    def contains(self, x: float, y: float, eps: float = 1e-9) -> bool:
        x0, y0, x1, y1 = self.rect
        return x0 - eps <= x <= x1 + eps and y0 - eps <= y <= y1 + eps


def tile_centre(row: int, col: int, config: ArrayConfig) -> tuple[float, float]:
    D = config.D
    return ((col - (config.cols - 1) / 2) * D, ((config.rows - 1) / 2 - row) * D)


@dataclass(frozen=True)
class RegionMap:
    config: ArrayConfig
    effector_width: float
    regions: tuple[Region, ...]
    _by_id: dict = field(default_factory=dict, compare=False, repr=False)
    _xs: tuple = field(default=(), compare=False, repr=False)
    _ys: tuple = field(default=(), compare=False, repr=False)

    def __getitem__(self, rid: RegionId) -> Region:
        return self._by_id[rid]

    def __contains__(self, rid: RegionId) -> bool:
        return rid in self._by_id

    def __len__(self) -> int:
        return len(self.regions)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self._xs[0], self._ys[0], self._xs[-1], self._ys[-1])

    def in_bounds(self, x: float, y: float, eps: float = 1e-9) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 - eps <= x <= x1 + eps and y0 - eps <= y <= y1 + eps

    def count(self, kind: RegionKind) -> int:
        return sum(1 for r in self.regions if r.id.kind is kind)

    def raw_region(self, x: float, y: float) -> RegionId:
        """Containing region; boundary points go to the smallest ``RegionId``."""
        if not self.in_bounds(x, y):
            raise ValueError(f"point ({x:.3f}, {y:.3f}) is outside the array surface")
        cands = [self._region_at(ix, iy) for ix in _bands(self._xs, x) for iy in _bands(self._ys, y)]
        return min(cands)

    def _region_at(self, ix: int, iy: int) -> RegionId:
        # band 2k covers tile column/row k, band 2k+1 the gap after it; y bands
        # run south to north so row indices are flipped
        col, col_gap = divmod(ix, 2)
        k, row_gap = divmod(iy, 2)
        row = self.config.rows - 1 - k
        if not col_gap and not row_gap:
            return tile_region(row, col)
        if col_gap and not row_gap:
            return inter_region((row, col), (row, col + 1))
        if row_gap and not col_gap:
            return inter_region((row - 1, col), (row, col))
        return centre_region(row - 1, col)


def _bands(edges: tuple, v: float, eps: float = 1e-9) -> list[int]:
    i = bisect.bisect_right(edges, v) - 1
    i = min(max(i, 0), len(edges) - 2)
    out = [i]
    if i > 0 and abs(v - edges[i]) <= eps:
        out.append(i - 1)
    if i + 1 < len(edges) - 1 and abs(v - edges[i + 1]) <= eps:
        out.append(i + 1)
    return out


def segment_regions(config: ArrayConfig, geom: TileGeometry) -> RegionMap:
    D, W = config.D, geom.effector_width
    if D <= W:
        raise ValueError(f"inter-tile distance {D} must exceed effector width {W}")
    h = W / 2
    xs = [tile_centre(0, c, config)[0] for c in range(config.cols)]
    ys = [tile_centre(r, 0, config)[1] for r in range(config.rows)]
    regions = []
    for r in range(config.rows):
        for c in range(config.cols):
            x, y = xs[c], ys[r]
            regions.append(Region(tile_region(r, c), (x - h, y - h, x + h, y + h), (x, y)))
            if c + 1 < config.cols:
                regions.append(Region(inter_region((r, c), (r, c + 1)),
                                      (x + h, y - h, xs[c + 1] - h, y + h), (x + D / 2, y)))
            if r + 1 < config.rows:
                regions.append(Region(inter_region((r, c), (r + 1, c)),
                                      (x - h, ys[r + 1] + h, x + h, y - h), (x, y - D / 2)))
            if c + 1 < config.cols and r + 1 < config.rows:
                regions.append(Region(centre_region(r, c),
                                      (x + h, ys[r + 1] + h, xs[c + 1] - h, y - h),
                                      (x + D / 2, y - D / 2)))
    regions.sort(key=lambda reg: reg.id)
    x_edges = []
    for c, x in enumerate(xs):
        x_edges += [x - h, x + h]
    y_edges = []
    for y in reversed(ys):
        y_edges += [y - h, y + h]
    return RegionMap(config, W, tuple(regions), {reg.id: reg for reg in regions},
                     tuple(x_edges), tuple(y_edges))


class RegionTracker:
    """Debounced region membership: a new region is reported only after the
    point has stayed inside it for ``debounce`` seconds."""

    def __init__(self, region_map: RegionMap, debounce: float = 0.5):
        self.map = region_map
        self.debounce = debounce
        self.reported: RegionId | None = None
        self._candidate: RegionId | None = None
        self._since = 0.0

    def update(self, xy, t: float) -> RegionId:
        raw = self.map.raw_region(float(xy[0]), float(xy[1]))
        if self.reported is None:
            self.reported = raw
        elif raw == self.reported:
            self._candidate = None
        else:
            if raw != self._candidate:
                self._candidate, self._since = raw, t
            if t - self._since >= self.debounce - 1e-9:
                self.reported, self._candidate = raw, None
        return self.reported


def locate_region(xy, region_map: RegionMap, tracker: RegionTracker | None, t: float = 0.0) -> RegionId:
    if tracker is None:
        return region_map.raw_region(float(xy[0]), float(xy[1]))
    return tracker.update(xy, t)


# --- graph ----------------------------------------------------------------

DEFAULT_MULTIPLIERS = {(RegionKind.CENTRE, RegionKind.TILE): 4.0}


@dataclass(frozen=True)
class RegionGraph:
    nodes: tuple[RegionId, ...]
    adjacency: dict  # RegionId -> tuple of (neighbour, weight)

    def weight(self, a: RegionId, b: RegionId) -> float:
        for n, w in self.adjacency[a]:
            if n == b:
                return w
        raise KeyError(f"{a} and {b} are not adjacent")

    def neighbours(self, a: RegionId) -> tuple[RegionId, ...]:
        return tuple(n for n, _ in self.adjacency[a])


def _share_edge(a: Region, b: Region, eps: float = 1e-9) -> bool:
    ax0, ay0, ax1, ay1 = a.rect
    bx0, by0, bx1, by1 = b.rect
    overlap_x = min(ax1, bx1) - max(ax0, bx0)
    overlap_y = min(ay1, by1) - max(ay0, by0)
    touch_x = abs(ax1 - bx0) <= eps or abs(bx1 - ax0) <= eps
    touch_y = abs(ay1 - by0) <= eps or abs(by1 - ay0) <= eps
    return (touch_x and overlap_y > eps) or (touch_y and overlap_x > eps)


def build_graph(region_map: RegionMap, multipliers: dict | None = None) -> RegionGraph:
    """Adjacency graph over regions that share a rectangle edge.

    Edge weights are centre-to-centre distances scaled by a multiplier looked
    up per directed ``(from kind, to kind)`` pair.
    """
    mult = dict(DEFAULT_MULTIPLIERS)
    if multipliers:
        mult.update({(RegionKind(a), RegionKind(b)): float(m) for (a, b), m in multipliers.items()})
    if any(m < 0 for m in mult.values()):
        raise ValueError("weight multipliers must be non-negative")
    adj = {}
    regs = region_map.regions
    for a in regs:
        out = []
        for b in regs:
            if a.id != b.id and _share_edge(a, b):
                dist = math.dist(a.centre, b.centre)
                out.append((b.id, dist * mult.get((a.id.kind, b.id.kind), 1.0)))
        adj[a.id] = tuple(sorted(out))
    return RegionGraph(tuple(r.id for r in regs), adj)


class NoPathError(ValueError):
    pass


@dataclass(frozen=True)
class PathPlan:
    regions: tuple[RegionId, ...]
    cost: float

    @property
    def current(self) -> RegionId:
        return self.regions[0]

    @property
    def goal(self) -> RegionId:
        return self.regions[-1]

    @property
    def next(self) -> RegionId | None:
        return self.regions[1] if len(self.regions) > 1 else None

    @property
    def complete(self) -> bool:
        return len(self.regions) == 1


def plan_path(graph: RegionGraph, start: RegionId, goal: RegionId) -> PathPlan:
    """Dijkstra; equal-cost paths are resolved by lexicographic region order."""
    if start not in graph.adjacency or goal not in graph.adjacency:
        raise KeyError("start or goal is not a graph node")
    heap = [(0.0, (start,))]
    done = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == goal:
            return PathPlan(path, cost)
        for nxt, w in graph.adjacency[node]:
            if nxt not in done:
                heapq.heappush(heap, (cost + w, path + (nxt,)))
    raise NoPathError(f"{goal} is unreachable from {start}")


def replan_on_transition(plan: PathPlan, observed: RegionId, graph: RegionGraph) -> PathPlan:
    if observed == plan.current:
        return plan
    if observed == plan.goal:
        return PathPlan((observed,), 0.0)
    if observed == plan.next:
        return PathPlan(plan.regions[1:], plan.cost - graph.weight(plan.current, observed))
    return plan_path(graph, observed, plan.goal)


def write_region_csv(region_map: RegionMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "kind", "xmin", "ymin", "xmax", "ymax", "cx", "cy"])
        for reg in region_map.regions:
            w.writerow([reg.id.label, reg.id.kind.name]
                       + [f"{v:.9g}" for v in reg.rect + reg.centre])
