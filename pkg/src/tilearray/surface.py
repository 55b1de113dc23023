"""Height field of the manipulation surface.

Plates are planes over their static tile squares. Each edge strip is ruled
between the facing plate edges: along every ruling the inextensible strip of
length ``Lm`` either runs straight (taut) or hangs in a symmetric V whose
midpoint drops ``sqrt(Lm^2 - d^2) / 2`` below the chord of length ``d``.
Centre cells are filled with a Coons patch of the four bounding strip rulings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .kinematics import TileGeometry, TilePose, is_feasible, InfeasiblePose
from .regions import RegionKind, RegionMap, segment_regions, tile_centre
from .workspace import ArrayConfig


@dataclass(frozen=True)
class StripProfile:
    chord: float
    material_length: float
    taut: bool
    sag: float


def strip_profile(chord: float, material_length: float) -> StripProfile:
    if chord >= material_length:
        return StripProfile(chord, material_length, True, 0.0)
    return StripProfile(chord, material_length, False,
                        math.sqrt(material_length ** 2 - chord ** 2) / 2)


class _Plate:
    __slots__ = ("cx", "cy", "cz", "sx", "sy", "corners")

    def __init__(self, base_xy, pose: TilePose, geom: TileGeometry):
        d, p, r = pose.delta, pose.phi, pose.r
        cd, sd, cp, sp = math.cos(d), math.sin(d), math.cos(p), math.sin(p)
        kx, ky, vc = -sd, cd, 1.0 - cp
        rot = ((cp + kx * kx * vc, kx * ky * vc, ky * sp),
               (kx * ky * vc, cp + ky * ky * vc, -kx * sp),
               (-ky * sp, kx * sp, cp))
        tx, ty, tz = base_xy[0] + r * sp * cd, base_xy[1] + r * sp * sd, r * cp
        eh = geom.effector_height
        self.cx, self.cy, self.cz = tx + rot[0][2] * eh, ty + rot[1][2] * eh, tz + rot[2][2] * eh
        # plane z = cz + sx (x - cx) + sy (y - cy), normal = third rotation column
        self.sx = -rot[0][2] / rot[2][2]
        self.sy = -rot[1][2] / rot[2][2]
        h = geom.effector_width / 2
        self.corners = {}
        for i in (1, -1):
            for j in (1, -1):
                lx, ly = i * h, j * h
                self.corners[(i, j)] = tuple(rot[k][0] * lx + rot[k][1] * ly + rot[k][2] * eh
                                             + (tx, ty, tz)[k] for k in range(3))

    def height(self, x: float, y: float) -> float:
        return self.cz + self.sx * (x - self.cx) + self.sy * (y - self.cy)


def _lerp3(a, b, v):
    return (a[0] + (b[0] - a[0]) * v, a[1] + (b[1] - a[1]) * v, a[2] + (b[2] - a[2]) * v)


class _Strip:
    """Strip between plate ``a`` (west or north) and plate ``b`` (east or south)."""

    __slots__ = ("a", "b", "horizontal", "rect", "length", "ea", "eb", "strained")

    def __init__(self, a: _Plate, b: _Plate, horizontal: bool, rect, length: float):
        self.a, self.b, self.horizontal, self.rect, self.length = a, b, horizontal, rect, length
        if horizontal:
            self.ea = (a.corners[(1, -1)], a.corners[(1, 1)])
            self.eb = (b.corners[(-1, -1)], b.corners[(-1, 1)])
        else:
            self.ea = (a.corners[(-1, -1)], a.corners[(1, -1)])
            self.eb = (b.corners[(-1, 1)], b.corners[(1, 1)])
        self.strained = any(math.dist(pa, pb) > length for pa, pb in zip(self.ea, self.eb))

    def coords(self, x: float, y: float) -> tuple[float, float]:
        x0, y0, x1, y1 = self.rect
        if self.horizontal:
            return (x - x0) / (x1 - x0), (y - y0) / (y1 - y0)
        return (y1 - y) / (y1 - y0), (x - x0) / (x1 - x0)

    def profile(self, v: float) -> StripProfile:
        pa = _lerp3(self.ea[0], self.ea[1], v)
        pb = _lerp3(self.eb[0], self.eb[1], v)
        return strip_profile(math.dist(pa, pb), self.length)

    def height(self, x: float, y: float) -> float:
        x0, y0, x1, y1 = self.rect
        s, v = self.coords(x, y)
        if self.horizontal:
            za, zb = self.a.height(x0, y), self.b.height(x1, y)
        else:
            za, zb = self.a.height(x, y1), self.b.height(x, y0)
        sag = self.profile(min(max(v, 0.0), 1.0)).sag
        return za + (zb - za) * s - sag * (1.0 - abs(2.0 * s - 1.0))


class _Centre:
    __slots__ = ("rect", "west", "east", "south", "north", "corner_z")

    def __init__(self, rect, west, east, south, north, plates):
        self.rect = rect
        self.west, self.east, self.south, self.north = west, east, south, north
        x0, y0, x1, y1 = rect
        nw, ne, sw, se = plates
        self.corner_z = (sw.height(x0, y0), se.height(x1, y0), nw.height(x0, y1), ne.height(x1, y1))

    def height(self, x: float, y: float) -> float:
        x0, y0, x1, y1 = self.rect
        u = (x - x0) / (x1 - x0)
        w = (y - y0) / (y1 - y0)
        z00, z10, z01, z11 = self.corner_z
        zw = self.west.height(x0, y)
        ze = self.east.height(x1, y)
        zs = self.south.height(x, y0)
        zn = self.north.height(x, y1)
        return ((1 - u) * zw + u * ze + (1 - w) * zs + w * zn
                - ((1 - u) * (1 - w) * z00 + u * (1 - w) * z10 + (1 - u) * w * z01 + u * w * z11))


class SurfaceField:
    """Immutable height-field snapshot of the whole array."""

    def __init__(self, region_map: RegionMap, plates: dict, strips: dict, centres: dict):
        self.map = region_map
        self._plates = plates
        self._strips = strips
        self._centres = centres
        self._pieces = {**plates, **strips, **centres}

    @property
    def strained(self) -> bool:
        return any(s.strained for s in self._strips.values())

    @property
    def bounds(self):
        return self.map.bounds

    def strip(self, rid):
        return self._strips[rid]

    def plate_height(self, tile, x: float, y: float) -> float:
        return self._plates[tile].height(x, y)

    def strip_state(self, rid, v: float = 0.5) -> StripProfile:
        return self._strips[rid].profile(v)

    def height_in(self, rid, x: float, y: float) -> float:
        """Height from the formula of region ``rid`` (which must contain the point)."""
        piece = self._pieces[rid]
        return piece.height(x, y)

    def height_at(self, xy) -> float:
        x, y = float(xy[0]), float(xy[1])
        rid = self.map.raw_region(x, y)
        return self._pieces[rid].height(x, y)

    def gradient_at(self, xy, region=None, step: float = 1.0) -> tuple[float, float]:
        x, y = float(xy[0]), float(xy[1])
        rid = region if region is not None else self.map.raw_region(x, y)
        piece = self._pieces[rid]
        x0, y0, x1, y1 = self.map[rid].rect
        return (_diff(piece, x, y, step, x0, x1, axis=0),
                _diff(piece, x, y, step, y0, y1, axis=1))


def _diff(piece, x, y, h, lo, hi, axis):
    c = x if axis == 0 else y
    a, b = c - h, c + h
    if a < lo and b > hi:
        a, b = lo, hi
    elif a < lo:
        a = c
    elif b > hi:
        b = c
    if axis == 0:
        return (piece.height(b, y) - piece.height(a, y)) / (b - a)
    return (piece.height(x, b) - piece.height(x, a)) / (b - a)


def build_surface(poses: dict, config: ArrayConfig, geom: TileGeometry,
                  region_map: RegionMap | None = None, check: bool = True) -> SurfaceField:
    """Surface for per-tile poses keyed by ``(row, col)``."""
    region_map = region_map or segment_regions(config, geom)
    plates = {}
    for r in range(config.rows):
        for c in range(config.cols):
            pose = poses[(r, c)]
            if check and not is_feasible(pose, geom):
                raise InfeasiblePose(f"tile {(r, c)} pose {pose} is unreachable")
            plates[(r, c)] = _Plate(tile_centre(r, c, config), pose, geom)
    tile_plate = {}
    strips = {}
    centres = {}
    for reg in region_map.regions:
        rid = reg.id
        if rid.kind is RegionKind.TILE:
            tile_plate[rid] = plates[rid.index]
        elif rid.kind is RegionKind.INTER_TILE:
            a, b = rid.index
            strips[rid] = _Strip(plates[a], plates[b], a[0] == b[0], reg.rect, config.L)
    by_tiles = {rid.index: s for rid, s in strips.items()}
    for reg in region_map.regions:
        rid = reg.id
        if rid.kind is RegionKind.CENTRE:
            r, c = rid.index
            centres[rid] = _Centre(reg.rect,
                                   west=by_tiles[((r, c), (r + 1, c))],
                                   east=by_tiles[((r, c + 1), (r + 1, c + 1))],
                                   south=by_tiles[((r + 1, c), (r + 1, c + 1))],
                                   north=by_tiles[((r, c), (r, c + 1))],
                                   plates=(plates[(r, c)], plates[(r, c + 1)],
                                           plates[(r + 1, c)], plates[(r + 1, c + 1)]))
    return SurfaceField(region_map, tile_plate, strips, centres)


def write_surface_csv(surface: SurfaceField, path, spacing: float = 5.0) -> None:
    x0, y0, x1, y1 = surface.bounds
    nx = int(math.floor((x1 - x0) / spacing)) + 1
    ny = int(math.floor((y1 - y0) / spacing)) + 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_mm", "y_mm", "z_mm"])
        for j in range(ny):
            for i in range(nx):
                x, y = x0 + i * spacing, y0 + j * spacing
                w.writerow([f"{x:.9g}", f"{y:.9g}", f"{surface.height_at((x, y)):.9g}"])
