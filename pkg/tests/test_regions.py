import math
import random

import pytest

from tilearray.kinematics import TileGeometry
from tilearray.regions import (NoPathError, Region, RegionGraph, RegionKind, RegionMap,
                               RegionTracker, build_graph, centre_region, inter_region,
                               locate_region, parse_region, plan_path, replan_on_transition,
                               segment_regions, tile_region, write_region_csv)
from tilearray.workspace import ArrayConfig

GEOM = TileGeometry()
NW, NE, SW, SE = tile_region(0, 0), tile_region(0, 1), tile_region(1, 0), tile_region(1, 1)
INTER_N, INTER_S = inter_region((0, 0), (0, 1)), inter_region((1, 0), (1, 1))
INTER_W, INTER_E = inter_region((0, 0), (1, 0)), inter_region((0, 1), (1, 1))
CENTRE = centre_region(0, 0)


def rmap(n=2, D=261.0):
    return segment_regions(ArrayConfig(n, n, D), GEOM)


def brute_force_cost(graph, a, b):
    best = math.inf

    def dfs(node, seen, cost):
        nonlocal best
        if node == b:
            best = min(best, cost)
            return
        for nb, w in graph.adjacency[node]:
            if nb not in seen:
                seen.add(nb)
                dfs(nb, seen, cost + w)
                seen.discard(nb)

    dfs(a, {a}, 0.0)
    return best


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_region_counts(n):
    m = rmap(n)
    assert m.count(RegionKind.TILE) == n * n
    assert m.count(RegionKind.INTER_TILE) == 2 * n * (n - 1)
    assert m.count(RegionKind.CENTRE) == (n - 1) ** 2


def test_two_by_two_sizes():
    m = rmap(2)
    assert len(m) == 9
    for reg in m.regions:
        x0, y0, x1, y1 = reg.rect
        w, h = x1 - x0, y1 - y0
        if reg.id.kind is RegionKind.TILE:
            assert (w, h) == pytest.approx((150, 150))
        elif reg.id.kind is RegionKind.CENTRE:
            assert (w, h) == pytest.approx((111, 111))
        else:
            assert sorted((w, h)) == pytest.approx([111, 150])
    assert m[NW].centre == pytest.approx((-130.5, 130.5))
    assert m[CENTRE].centre == pytest.approx((0, 0))
    assert m.bounds == pytest.approx((-205.5, -205.5, 205.5, 205.5))


def test_segment_rejects_degenerate():
    with pytest.raises(ValueError):
        segment_regions(ArrayConfig(2, 2, 150.0), GEOM)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_partition(n):
    m = rmap(n)
    rng = random.Random(n)
    x0, y0, x1, y1 = m.bounds
    area = sum((r.rect[2] - r.rect[0]) * (r.rect[3] - r.rect[1]) for r in m.regions)
    assert area == pytest.approx((x1 - x0) * (y1 - y0))
    for _ in range(500):
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        inside = [r.id for r in m.regions if r.contains(x, y, eps=0)]
        assert len(inside) == 1 and m.raw_region(x, y) == inside[0]


def test_boundary_goes_to_smallest_id():
    m = rmap(2)
    x_edge = m[NW].rect[2]
    assert m.raw_region(x_edge, 130.5) == min(NW, INTER_N)
    corner = (m[NW].rect[2], m[NW].rect[1])
    assert m.raw_region(*corner) == min(NW, INTER_N, INTER_W, CENTRE)
    with pytest.raises(ValueError):
        m.raw_region(300, 0)


def test_labels_roundtrip():
    for reg in rmap(3).regions:
        assert parse_region(reg.id.label) == reg.id
    assert parse_region("TILE_NW") == NW and parse_region("inter_e") == INTER_E
    assert parse_region("CENTRE") == CENTRE
    with pytest.raises(ValueError):
        parse_region("BLOB_1")


def test_debounce_tracker():
    m = rmap(2)
    tr = RegionTracker(m, 0.5)
    assert tr.update((-130.5, 130.5), 0.0) == NW
    # oscillate across the NW / INTER_N boundary every 0.2 s
    t = 0.0
    for k in range(30):
        xy = (-60.0, 130.5) if k % 2 == 0 else (-50.0, 130.5)
        for _ in range(20):
            t += 0.01
            assert tr.update(xy, t) == NW
    # cross and stay: switch exactly 0.5 s after entry
    tr = RegionTracker(m, 0.5)
    tr.update((-130.5, 130.5), 0.0)
    seen = []
    for k in range(1, 61):
        seen.append((round(k * 0.01, 2), tr.update((0.0, 130.5), 1.0 + k * 0.01)))
    switched = [t for t, r in seen if r == INTER_N]
    assert switched[0] == pytest.approx(0.51)  # first sample at +0.01, then 0.5 s later
    assert len({r for _, r in seen}) == 2
    assert locate_region((-130.5, 130.5), m, None) == NW


def test_default_weights():
    g = build_graph(rmap(2))
    assert g.weight(NW, INTER_N) == pytest.approx(130.5)
    assert g.weight(INTER_N, CENTRE) == pytest.approx(130.5)
    assert set(g.neighbours(CENTRE)) == {INTER_N, INTER_S, INTER_W, INTER_E}
    assert NW not in g.neighbours(CENTRE)


def test_multipliers():
    m = rmap(2)
    g = build_graph(m, {(RegionKind.INTER_TILE, RegionKind.TILE): 0.0})
    assert g.weight(INTER_N, NW) == 0.0 and g.weight(NW, INTER_N) == pytest.approx(130.5)
    with pytest.raises(ValueError):
        build_graph(m, {(RegionKind.TILE, RegionKind.INTER_TILE): -1.0})


def test_centre_to_tile_multiplier_on_synthetic_map():
    # a centre rectangle touching a tile rectangle directly
    tile = Region(tile_region(0, 0), (0, 0, 10, 10), (5, 5))
    centre = Region(centre_region(0, 0), (10, 0, 20, 10), (15, 5))
    m = RegionMap(ArrayConfig(), 150.0, (tile, centre))
    g = build_graph(m)
    assert g.weight(centre.id, tile.id) == pytest.approx(4 * g.weight(tile.id, centre.id))


def test_plan_examples():
    g = build_graph(rmap(2))
    p = plan_path(g, NW, NW)
    assert p.regions == (NW,) and p.cost == 0 and p.complete
    p = plan_path(g, NW, SE)
    assert p.regions == (NW, INTER_N, NE, INTER_E, SE)
    assert p.cost == pytest.approx(4 * 130.5)
    assert CENTRE not in p.regions


def test_plan_unreachable():
    a = Region(tile_region(0, 0), (0, 0, 10, 10), (5, 5))
    b = Region(tile_region(0, 1), (20, 0, 30, 10), (25, 5))
    g = build_graph(RegionMap(ArrayConfig(), 150.0, (a, b)))
    with pytest.raises(NoPathError):
        plan_path(g, a.id, b.id)


def test_plan_consecutive_adjacent():
    g = build_graph(rmap(3))
    for a in g.nodes[::3]:
        for b in g.nodes[::4]:
            p = plan_path(g, a, b)
            assert p.current == a and p.goal == b
            for u, v in zip(p.regions, p.regions[1:]):
                assert v in g.neighbours(u)
            assert p.cost == pytest.approx(sum(g.weight(u, v) for u, v in zip(p.regions, p.regions[1:])))


def test_dijkstra_random_weights():
    rng = random.Random(11)
    base = build_graph(rmap(2))
    for _ in range(30):
        adj = {a: tuple((b, rng.uniform(0, 10)) for b, _ in nbrs) for a, nbrs in base.adjacency.items()}
        g = RegionGraph(base.nodes, adj)
        for a in g.nodes:
            for b in g.nodes:
                assert plan_path(g, a, b).cost == pytest.approx(brute_force_cost(g, a, b))


def test_replan():
    g = build_graph(rmap(2))
    p = plan_path(g, NW, SE)
    q = replan_on_transition(p, INTER_N, g)
    assert q.regions == p.regions[1:]
    assert replan_on_transition(p, NW, g) == p
    r = replan_on_transition(p, INTER_W, g)
    assert r.current == INTER_W and r.goal == SE
    assert r == plan_path(g, INTER_W, SE)
    done = replan_on_transition(p, SE, g)
    assert done.complete and done.regions == (SE,)


def test_replan_length_non_increasing_when_followed():
    g = build_graph(rmap(3))
    p = plan_path(g, tile_region(0, 0), tile_region(2, 2))
    while not p.complete:
        q = replan_on_transition(p, p.next, g)
        assert len(q.regions) <= len(p.regions)
        p = q


def test_region_csv(tmp_path):
    path = tmp_path / "regions.csv"
    write_region_csv(rmap(2), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "region_id,kind,xmin,ymin,xmax,ymax,cx,cy"
    assert len(lines) == 10
