"""Tile communication and power topology.

Every tile links to its four grid neighbours through edge connectors. One
tile hosts the controller connection; commands hop tile to tile. Power is
daisy-chained through at most eight tiles.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

MAX_POWER_CHAIN = 8
_STEPS = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass(frozen=True, order=True)
class TileAddress:
    row: int
    col: int


def _edge(a, b) -> tuple:
    a, b = tuple(a), tuple(b)
    return (a, b) if a <= b else (b, a)


class UnreachableTile(ValueError):
    pass


@dataclass(frozen=True)
class LinkTopology:
    rows: int
    cols: int
    removed: frozenset = frozenset()
    host: tuple[int, int] = (0, 0)
    host_port: str = "usb"
    power_chain: tuple = ()

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("topology needs at least one tile")
        object.__setattr__(self, "removed", frozenset(_edge(a, b) for a, b in self.removed))
        if not self.in_bounds(self.host):
            raise ValueError(f"host tile {self.host} is outside the array")
        for a, b in self.removed:
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ValueError(f"{a}-{b} is not a neighbour link")

    @classmethod
    def full(cls, rows: int, cols: int, **kw) -> "LinkTopology":
        return cls(rows, cols, **kw)

    def in_bounds(self, tile) -> bool:
        r, c = tile
        return 0 <= r < self.rows and 0 <= c < self.cols

    def has_link(self, a, b) -> bool:
        a, b = tuple(a), tuple(b)
        if not (self.in_bounds(a) and self.in_bounds(b)):
            return False
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            return False
        return _edge(a, b) not in self.removed

    def links(self, tile) -> dict[str, bool]:
        r, c = tile
        return {"up": self.has_link(tile, (r - 1, c)), "down": self.has_link(tile, (r + 1, c)),
                "left": self.has_link(tile, (r, c - 1)), "right": self.has_link(tile, (r, c + 1))}

    def neighbours(self, tile):
        r, c = tile
        return [(r + dr, c + dc) for dr, dc in _STEPS if self.has_link(tile, (r + dr, c + dc))]

    def tiles(self):
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]


@dataclass(frozen=True)
class Command:
    target: tuple[int, int]
    payload: object
    hops: tuple = field(default=())

    @property
    def hop_count(self) -> int:
        return len(self.hops)


def _rectilinear(src, dst):
    path = []
    r, c = src
    while c != dst[1]:
        c += 1 if dst[1] > c else -1
        path.append((r, c))
    while r != dst[0]:
        r += 1 if dst[0] > r else -1
        path.append((r, c))
    return path


def _shortest(topology: LinkTopology, src, dst):
    heap = [(0, (src,))]
    seen = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in seen:
            continue
        seen.add(node)
        if node == dst:
            return list(path[1:])
        for n in topology.neighbours(node):
            if n not in seen:
                heapq.heappush(heap, (cost + 1, path + (n,)))
    return None


def route_command(topology: LinkTopology, host, target) -> list[tuple[int, int]]:
    """Tiles a command visits after leaving ``host``, ending at ``target``.

    The rectilinear route (along the host's row first, then down the target's
    column) is used when all its links exist; otherwise the shortest route on
    the link graph, with ties broken by the lexicographic order of the hops.
    """
    host, target = tuple(host), tuple(target)
    for t in (host, target):
        if not topology.in_bounds(t):
            raise ValueError(f"tile {t} is outside the {topology.rows}x{topology.cols} array")
    path = _rectilinear(host, target)
    prev = host
    for node in path:
        if not topology.has_link(prev, node):
            break
        prev = node
    else:
        return path
    found = _shortest(topology, host, target)
    if found is None:
        raise UnreachableTile(f"tile {target} is unreachable from {host}")
    return found


def send(topology: LinkTopology, target, payload) -> Command:
    return Command(tuple(target), payload, tuple(route_command(topology, topology.host, target)))


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    index: int | None = None
    edge: tuple | None = None
    reason: str = ""


def validate_power_chain(topology: LinkTopology) -> ChainReport:
    chain = [tuple(t) for t in topology.power_chain]
    for i, t in enumerate(chain):
        if not topology.in_bounds(t):
            return ChainReport(False, i, None, f"tile {t} at index {i} is outside the array")
        if t in chain[:i]:
            return ChainReport(False, i, None, f"tile {t} repeats at index {i}")
    if len(chain) > MAX_POWER_CHAIN:
        return ChainReport(False, MAX_POWER_CHAIN, None,
                           f"chain of {len(chain)} tiles exceeds {MAX_POWER_CHAIN}; "
                           f"first excess tile at index {MAX_POWER_CHAIN}")
    for i in range(1, len(chain)):
        a, b = chain[i - 1], chain[i]
        if not topology.has_link(a, b):
            return ChainReport(False, i, (a, b), f"missing link {a}-{b} at index {i}")
    return ChainReport(True)
