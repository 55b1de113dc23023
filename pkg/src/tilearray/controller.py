"""Region-driven state machine that turns object position into tile pose targets.

Pose targets come from a four-row table of canonical transitions referenced
to the north-west tile of a 2x2 cell. For an actual transition the row is
mapped onto the array with a quarter-turn rotation (and, where the
transition runs the other way along an edge, a mirror). Tiles follow
synchronized trapezoidal trajectories in motor-angle space.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .kinematics import (LegAngles, TileGeometry, TilePose, forward_kinematics,
                         inverse_kinematics, is_feasible, make_pose)
from .regions import (NoPathError, PathPlan, RegionGraph, RegionId, RegionKind, RegionMap,
                      RegionTracker, plan_path, replan_on_transition)

TWO_PI = 2 * math.pi
SLOTS = ("NW", "NE", "SW", "SE")
SLOT_XY = {"NW": (-1, 1), "NE": (1, 1), "SW": (-1, -1), "SE": (1, -1)}
XY_SLOT = {v: k for k, v in SLOT_XY.items()}
NEUTRAL = TilePose(0.0, 0.0, 90.0)

_T = RegionKind.TILE
_I = RegionKind.INTER_TILE
_C = RegionKind.CENTRE
_TILT = 5 * math.pi / 36

# Rows are (NW, NE, SW, SE); delta is the downhill azimuth of the plate.
CANONICAL_TABLE = {
    (_T, _I): (TilePose(0.0, _TILT, 90.0), TilePose(0.0, 0.0, 90.0),
               TilePose(0.0, 0.0, 90.0), TilePose(0.0, 0.0, 90.0)),
    (_I, _C): (TilePose(3 * math.pi / 2, _TILT, 90.0), TilePose(3 * math.pi / 2, _TILT, 90.0),
               TilePose(math.pi / 2, _TILT, 90.0), TilePose(math.pi / 2, _TILT, 90.0)),
    (_C, _I): (TilePose(0.0, 0.0, 10.0), TilePose(math.pi, 0.0, 10.0),
               TilePose(5 * math.pi / 4, math.pi / 12, 90.0),
               TilePose(7 * math.pi / 4, math.pi / 12, 90.0)),
    (_I, _T): (TilePose(0.0, 0.0, 10.0), TilePose(0.0, _TILT, 90.0),
               TilePose(0.0, 0.0, 90.0), TilePose(0.0, 0.0, 90.0)),
}

# Slots occupied by the current and next region of each canonical row.
_CANONICAL_SLOTS = {
    (_T, _I): ({"NW"}, {"NW", "NE"}),
    (_I, _C): ({"NW", "NE"}, set(SLOTS)),
    (_C, _I): (set(SLOTS), {"NW", "NE"}),
    (_I, _T): ({"NW", "NE"}, {"NW"}),
}


class UnknownTransition(ValueError):
    pass


# --- symmetry -------------------------------------------------------------

def _map_xy(xy, k: int, mirror: bool):
    x, y = xy
    if mirror:
        x = -x
    for _ in range(k % 4):
        x, y = -y, x
    return x, y


def map_slot(slot: str, k: int, mirror: bool = False) -> str:
    """Slot reached by mirroring (x -> -x) and then turning ``k`` quarters anticlockwise."""
    return XY_SLOT[_map_xy(SLOT_XY[slot], k, mirror)]


def map_delta(delta: float, k: int, mirror: bool = False) -> float:
    if mirror:
        delta = math.pi - delta
    return (delta + k * math.pi / 2) % TWO_PI


def canonical_poses(current: RegionKind, nxt: RegionKind, k: int,
                    mirror: bool = False) -> dict[str, TilePose]:
    """Table row for ``current -> nxt`` carried onto the cell by the symmetry (k, mirror).

    k counts anticlockwise quarter turns, so k=1 sends the NW entry to SW with
    every azimuth advanced by pi/2.
    """
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= 3:
        raise ValueError(f"quadrant k must be an integer in 0..3, got {k!r}")
    try:
        row = CANONICAL_TABLE[(RegionKind(current), RegionKind(nxt))]
    except (KeyError, ValueError):
        raise UnknownTransition(f"no canonical row for {current} -> {nxt}") from None
    out = {}
    for slot, pose in zip(SLOTS, row):
        out[map_slot(slot, k, mirror)] = make_pose(map_delta(pose.delta, k, mirror), pose.phi, pose.r)
    return out


@dataclass(frozen=True)
class TransitionFrame:
    """Placement of a canonical row on the array: cell origin and symmetry."""
    current: RegionKind
    next: RegionKind
    origin: tuple[int, int]  # (row, col) of the cell's NW tile
    k: int
    mirror: bool

    def slot_tile(self, slot: str) -> tuple[int, int]:
        x, y = SLOT_XY[slot]
        return self.origin[0] + (1 - y) // 2, self.origin[1] + (x + 1) // 2


def _slots_in_cell(tiles, origin) -> set[str] | None:
    out = set()
    for r, c in tiles:
        dr, dc = r - origin[0], c - origin[1]
        if dr not in (0, 1) or dc not in (0, 1):
            return None
        out.add(XY_SLOT[(2 * dc - 1, 1 - 2 * dr)])
    return out


def transition_frame(current: RegionId, nxt: RegionId, rows: int, cols: int) -> TransitionFrame:
    """Find the 2x2 cell and symmetry that carry the canonical row onto ``current -> nxt``."""
    key = (current.kind, nxt.kind)
    if key not in _CANONICAL_SLOTS:
        raise UnknownTransition(f"no canonical row for {current.label} -> {nxt.label}")
    canon_cur, canon_next = _CANONICAL_SLOTS[key]
    tiles = set(current.tiles()) | set(nxt.tiles())
    rmin = min(t[0] for t in tiles)
    cmin = min(t[1] for t in tiles)
    origins = [(r, c) for r in (rmin - 1, rmin) for c in (cmin - 1, cmin)]
    # cells lying fully inside the array first
    origins.sort(key=lambda o: (not (0 <= o[0] < rows - 1 and 0 <= o[1] < cols - 1), o))
    for origin in origins:
        cur_slots = _slots_in_cell(current.tiles(), origin)
        next_slots = _slots_in_cell(nxt.tiles(), origin)
        if cur_slots is None or next_slots is None:
            continue
        for mirror in (False, True):
            for k in range(4):
                if ({map_slot(s, k, mirror) for s in canon_cur} == cur_slots
                        and {map_slot(s, k, mirror) for s in canon_next} == next_slots):
                    return TransitionFrame(current.kind, nxt.kind, origin, k, mirror)
    raise UnknownTransition(f"{current.label} -> {nxt.label} does not match a canonical transition")


def transition_targets(current: RegionId, nxt: RegionId, rows: int, cols: int,
                       neutral: TilePose = NEUTRAL):
    """Per-tile targets for the transition; tiles outside the active cell stay neutral."""
    frame = transition_frame(current, nxt, rows, cols)
    poses = canonical_poses(frame.current, frame.next, frame.k, frame.mirror)
    targets = {(r, c): neutral for r in range(rows) for c in range(cols)}
    for slot, pose in poses.items():
        tile = frame.slot_tile(slot)
        if 0 <= tile[0] < rows and 0 <= tile[1] < cols:
            targets[tile] = pose
    return targets, frame


# --- trajectories ---------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryLimits:
    vel_max: float = 20 * math.pi / 9
    acc_max: float = 5 * math.pi / 6

    def __post_init__(self):
        if self.vel_max <= 0 or self.acc_max <= 0:
            raise ValueError("trajectory limits must be positive")


@dataclass(frozen=True)
class TrajectoryPlan:
    """Synchronized rest-to-rest motion of the three motors.

    All motors share one normalised trapezoid ``s(t)`` in [0, 1] sized for the
    motor with the largest travel, so each one respects the limits and all
    arrive together.
    """
    start: np.ndarray
    end: np.ndarray
    duration: float
    t_acc: float
    v_peak: float  # of the longest-travel motor, rad/s
    limits: TrajectoryLimits

    @property
    def travel(self) -> float:
        return float(np.max(np.abs(self.end - self.start)))

    def _s(self, t: float):
        """Normalised position, velocity and acceleration of the shared profile."""
        D = self.travel
        if D == 0 or t >= self.duration:
            return 1.0, 0.0, 0.0
        if t <= 0:
            return 0.0, 0.0, 0.0
        a, ta, T, vp = self.limits.acc_max, self.t_acc, self.duration, self.v_peak
        if t < ta:
            p, v, acc = 0.5 * a * t * t, a * t, a
        elif t <= T - ta:
            p, v, acc = 0.5 * a * ta * ta + vp * (t - ta), vp, 0.0
        else:
            rem = T - t
            p, v, acc = D - 0.5 * a * rem * rem, a * rem, -a
        return p / D, v / D, acc / D

    def position(self, t: float) -> np.ndarray:
        if t >= self.duration:
            return self.end.copy()
        s = self._s(t)[0]
        return self.start + (self.end - self.start) * s

    def velocity(self, t: float) -> np.ndarray:
        return (self.end - self.start) * self._s(t)[1]

    def acceleration(self, t: float) -> np.ndarray:
        return (self.end - self.start) * self._s(t)[2]

    def sample(self, rate: float = 1000.0):
        n = int(math.floor(self.duration * rate)) + 1
        ts = np.arange(n) / rate
        if ts[-1] < self.duration:
            ts = np.append(ts, self.duration)
        return ts, np.array([self.position(t) for t in ts])


def plan_trajectory(start, end, limits: TrajectoryLimits | None = None) -> TrajectoryPlan:
    limits = limits or TrajectoryLimits()
    a = np.asarray(start.as_array() if isinstance(start, LegAngles) else start, dtype=float)
    b = np.asarray(end.as_array() if isinstance(end, LegAngles) else end, dtype=float)
    D = float(np.max(np.abs(b - a)))
    if D == 0:
        return TrajectoryPlan(a, b, 0.0, 0.0, 0.0, limits)
    vm, am = limits.vel_max, limits.acc_max
    if D >= vm * vm / am:
        ta = vm / am
        T = 2 * ta + (D - vm * ta) / vm
        vp = vm
    else:
        ta = math.sqrt(D / am)
        T = 2 * ta
        vp = am * ta
    return TrajectoryPlan(a, b, T, ta, vp, limits)


# --- centring and oscillation --------------------------------------------

@dataclass(frozen=True)
class PidGains:
    kp: float = 0.004
    ki: float = 0.0005
    kd: float = 0.002
    phi_clamp: float = 5 * math.pi / 36

    def __post_init__(self):
        if not 0 <= self.phi_clamp <= 7 * math.pi / 18:
            raise ValueError("phi_clamp must lie in [0, 7pi/18]")
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be non-negative")


@dataclass
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(2))
    last_error: np.ndarray | None = None

    def reset(self):
        self.integral = np.zeros(2)
        self.last_error = None


def centring_command(object_xy, centre_xy, gains: PidGains | None = None, dt: float = 0.01,
                     state: PidState | None = None, r: float = 90.0) -> TilePose:
    """Tilt that drives the object toward ``centre_xy``.

    The PID acts on the planar error vector; the plate tilts downhill along
    the controller output, so with a pure proportional term the downhill
    direction points from the object to the centre.
    """
    gains = gains or PidGains()
    state = state if state is not None else PidState()
    err = np.asarray(centre_xy, dtype=float) - np.asarray(object_xy, dtype=float)
    if float(err @ state.integral) < 0:
        # overshot: an integral built on the far side would only push further
        state.integral = np.zeros(2)
    deriv = np.zeros(2) if state.last_error is None else (err - state.last_error) / dt
    state.last_error = err
    u = gains.kp * err + gains.ki * state.integral + gains.kd * deriv
    # conditional integration keeps the integral from winding up at the clamp
    if float(np.hypot(*u)) < gains.phi_clamp:
        state.integral = state.integral + err * dt
    mag = float(np.hypot(*u))
    if mag == 0.0:
        return TilePose(0.0, 0.0, r)
    return make_pose(math.atan2(u[1], u[0]), min(mag, gains.phi_clamp), r)


@dataclass(frozen=True)
class OscillationParams:
    dwell: float = 5.0
    amplitude: float = 10.0
    frequency: float = 10.0


def _feasible_r(pose: TilePose, r_target: float, geom: TileGeometry) -> float:
    if is_feasible(make_pose(pose.delta, pose.phi, r_target), geom):
        return r_target
    lo, hi = pose.r, r_target  # lo feasible, hi not
    if not is_feasible(pose, geom):
        return pose.r
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if is_feasible(make_pose(pose.delta, pose.phi, mid), geom):
            lo = mid
        else:
            hi = mid
    return lo


def stuck_oscillation(base: TilePose, t: float, geom: TileGeometry | None = None,
                      params: OscillationParams | None = None) -> TilePose:
    p = params or OscillationParams()
    r = base.r + p.amplitude * math.sin(TWO_PI * p.frequency * t)
    if geom is not None:
        r = _feasible_r(base, r, geom)
    return TilePose(base.delta, base.phi, r)


# --- tile motion ----------------------------------------------------------

def _motor_segments(x0: float, v0: float, goal: float, vm: float, am: float):
    """Time-optimal (duration, acceleration) segments from (x0, v0) to rest at ``goal``."""
    segs = []
    d = goal - x0
    if d == 0 and v0 == 0:
        return segs
    # moving toward the goal too fast to stop in time: brake first, come back after
    if v0 != 0 and d * v0 >= 0 and v0 * v0 / (2 * am) > abs(d):
        segs.append((abs(v0) / am, -math.copysign(am, v0)))
        x0 = x0 + v0 * abs(v0) / (2 * am)
        v0 = 0.0
        d = goal - x0
        if d == 0:
            return segs
    s = math.copysign(1.0, d) if d != 0 else -math.copysign(1.0, v0)
    dd, u = abs(d), v0 * s
    vp = math.sqrt(max((2 * am * dd + u * u) / 2, 0.0))
    cruise = 0.0
    if vp > vm:
        vp = vm
        cruise = (dd - (vp * vp - u * u) / (2 * am) - vp * vp / (2 * am)) / vp
    segs.append(((vp - u) / am, s * am))
    if cruise > 0:
        segs.append((cruise, 0.0))
    segs.append((vp / am, -s * am))
    return segs


@dataclass(frozen=True)
class OnlineProfile:
    """Per-motor time-optimal moves from a moving state to rest at ``end``.

    Motors are not synchronized here; each arrives as early as its limits
    allow. Used to take over a move already in progress.
    """
    start: np.ndarray
    start_velocity: np.ndarray
    end: np.ndarray
    segments: tuple
    limits: TrajectoryLimits

    @property
    def duration(self) -> float:
        return max((sum(d for d, _ in segs) for segs in self.segments), default=0.0)

    def _state(self, i: int, t: float):
        x, v = float(self.start[i]), float(self.start_velocity[i])
        for dur, acc in self.segments[i]:
            if t <= dur:
                return x + v * t + 0.5 * acc * t * t, v + acc * t, acc
            x, v = x + v * dur + 0.5 * acc * dur * dur, v + acc * dur
            t -= dur
        return float(self.end[i]), 0.0, 0.0

    def position(self, t: float) -> np.ndarray:
        if t >= self.duration:
            return self.end.copy()
        return np.array([self._state(i, t)[0] for i in range(3)])

    def velocity(self, t: float) -> np.ndarray:
        return np.array([self._state(i, t)[1] for i in range(3)])

    def acceleration(self, t: float) -> np.ndarray:
        return np.array([self._state(i, t)[2] for i in range(3)])


def plan_online(start, velocity, end, limits: TrajectoryLimits | None = None) -> OnlineProfile:
    limits = limits or TrajectoryLimits()
    x0, v0, g = (np.asarray(u, dtype=float) for u in (start, velocity, end))
    segs = tuple(tuple(_motor_segments(float(x0[i]), float(v0[i]), float(g[i]),
                                       limits.vel_max, limits.acc_max)) for i in range(3))
    return OnlineProfile(x0, v0, g, segs, limits)


class TileMotion:
    """One tile driven toward pose targets in motor-angle space.

    From rest a new target gets a synchronized trapezoidal plan. A target
    that arrives mid-motion takes over from the current angles and
    velocities with per-motor time-optimal moves, so fresh commands never
    wait behind a stale one.
    """

    def __init__(self, pose: TilePose, geom: TileGeometry, limits: TrajectoryLimits,
                 retarget: bool = False):
        self.geom = geom
        self.limits = limits
        self.retarget = retarget
        self.pose = pose.canonical()
        self.angles = inverse_kinematics(self.pose, geom).as_array()
        self.velocity = np.zeros(3)
        self.target = self.pose
        self.plan: TrajectoryPlan | OnlineProfile | None = None
        self.t0 = 0.0

    def moving(self, t: float) -> bool:
        return self.plan is not None and t < self.t0 + self.plan.duration

    def command(self, target: TilePose, t: float) -> bool:
        self.update(t)
        target = target.canonical()
        if _same_pose(target, self.target):
            return False
        moving = self.moving(t)
        if moving and not self.retarget:
            return False
        goal = inverse_kinematics(target, self.geom).as_array()
        if moving:
            self.plan = plan_online(self.angles, self.velocity, goal, self.limits)
        else:
            self.plan = plan_trajectory(self.angles, goal, self.limits)
        self.t0 = t
        self.target = target
        return True

    def update(self, t: float) -> TilePose:
        if self.plan is None:
            return self.pose
        if t >= self.t0 + self.plan.duration:
            self.angles = self.plan.end.copy()
            self.velocity = np.zeros(3)
            self.pose = self.target
            self.plan = None
            return self.pose
        self.angles = self.plan.position(t - self.t0)
        self.velocity = self.plan.velocity(t - self.t0)
        fk = forward_kinematics(LegAngles(*self.angles), self.geom, seed=self.pose)
        if fk is not None:
            self.pose = fk
        return self.pose


def _same_pose(a: TilePose, b: TilePose, tol: float = 1e-9) -> bool:
    if abs(a.r - b.r) > tol or abs(a.phi - b.phi) > tol:
        return False
    if a.phi == 0 and b.phi == 0:
        return True
    d = (a.delta - b.delta + math.pi) % TWO_PI - math.pi
    return abs(d) <= tol


# --- state machine --------------------------------------------------------

class Mode(str, Enum):
    TRANSIT = "TRANSIT"
    CENTRING = "CENTRING"
    OSCILLATING = "OSCILLATING"
    HOLD = "HOLD"


@dataclass(frozen=True)
class Goal:
    """A point to reach and hold, or a region to enter."""
    point: tuple[float, float] | None = None
    region: RegionId | None = None

    def __post_init__(self):
        if (self.point is None) == (self.region is None):
            raise ValueError("a goal is either a point or a region")


@dataclass(frozen=True)
class ControllerConfig:
    gains: PidGains = PidGains()
    limits: TrajectoryLimits = TrajectoryLimits()
    oscillation: OscillationParams = OscillationParams()
    neutral: TilePose = NEUTRAL
    target_radius: float = 15.0
    target_hold: float = 1.0
    debounce: float = 0.5
    retarget: bool = False
    # inside this distance the centring tile goes flat and forgets its integral
    centring_deadband: float = 10.0
    # tilt multiplier while vibrating, since vibration lowers the friction to beat
    vibration_tilt_scale: float = 0.7


@dataclass
class ControllerState:
    region: RegionId
    next: RegionId | None = None
    entered: float = 0.0
    mode: Mode = Mode.CENTRING
    centred: bool = False
    moving: dict = field(default_factory=dict)
    frame: TransitionFrame | None = None

    @property
    def kind(self) -> RegionKind:
        return self.region.kind

    def elapsed(self, t: float) -> float:
        return t - self.entered


@dataclass(frozen=True)
class ControlOutput:
    targets: dict
    poses: dict
    mode: Mode
    vibrating: bool
    done: bool


class HoldTimer:
    """Tracks continuous residence within ``radius`` of a point (closed threshold)."""

    def __init__(self, radius: float, hold: float):
        self.radius, self.hold = radius, hold
        self.since: float | None = None

    def reset(self):
        self.since = None

    def update(self, xy, target, t: float) -> bool:
        if math.dist(xy, target) <= self.radius:
            if self.since is None:
                self.since = t
            return t - self.since >= self.hold - 1e-9
        self.since = None
        return False


@dataclass(frozen=True)
class LogRow:
    t: float
    mode: str
    region: str
    next_region: str
    k: str


class Controller:
    def __init__(self, region_map: RegionMap, graph: RegionGraph, geom: TileGeometry,
                 goals, start_xy, config: ControllerConfig | None = None, t0: float = 0.0,
                 command_delay: dict | None = None):
        self.map = region_map
        self.graph = graph
        self.geom = geom
        self.cfg = config or ControllerConfig()
        self.goals = list(goals)
        self.goal_index = 0
        self.rows, self.cols = region_map.config.rows, region_map.config.cols
        self.tracker = RegionTracker(region_map, self.cfg.debounce)
        region = self.tracker.update(start_xy, t0)
        self.state = ControllerState(region=region, entered=t0)
        self.tiles = {(r, c): TileMotion(self.cfg.neutral, geom, self.cfg.limits, self.cfg.retarget)
                      for r in range(self.rows) for c in range(self.cols)}
        self.pid = PidState()
        self.goal_timer = HoldTimer(self.cfg.target_radius, self.cfg.target_hold)
        self.centre_timer = HoldTimer(self.cfg.target_radius, self.cfg.target_hold)
        self.plan: PathPlan | None = None
        self.log: list[LogRow] = []
        self.reached: list[tuple[int, float]] = []
        self._last_t = t0
        self._last_key = None
        self._vibrating = False
        # targets reach a tile this many control ticks after being issued
        self.delay = {tile: int((command_delay or {}).get(tile, 0)) for tile in self.tiles}
        self._pending = {tile: deque() for tile in self.tiles}

    @property
    def done(self) -> bool:
        return self.goal_index >= len(self.goals)

    def _goal_region(self, goal: Goal) -> RegionId:
        return goal.region if goal.region is not None else self.map.raw_region(*goal.point)

    def _on_region_change(self, region: RegionId, t: float):
        st = self.state
        st.region = region
        st.entered = t
        st.centred = False
        self.pid.reset()
        self.centre_timer.reset()
        if self.plan is not None and self.plan.next is not None:
            self.plan = replan_on_transition(self.plan, region, self.graph)

    def _advance_goals(self, xy, t: float):
        while not self.done:
            goal = self.goals[self.goal_index]
            if goal.point is not None:
                ok = self.goal_timer.update(xy, goal.point, t)
            else:
                ok = self.state.region == goal.region
            if not ok:
                return
            self.reached.append((self.goal_index, t))
            self.goal_index += 1
            self.goal_timer.reset()
            self.plan = None

    def _targets(self, xy, t: float, dt: float):
        st = self.state
        neutral = {tile: self.cfg.neutral for tile in self.tiles}
        if self.done:
            st.next, st.frame = None, None
            return neutral, Mode.HOLD
        goal = self.goals[self.goal_index]
        goal_region = self._goal_region(goal)
        if st.region == goal_region:
            st.next, st.frame = None, None
            if goal.point is None:
                return neutral, Mode.HOLD
            return self._centre_on(st.region, goal.point, xy, dt, neutral), Mode.CENTRING
        if self.plan is None or self.plan.goal != goal_region or self.plan.current != st.region:
            self.plan = plan_path(self.graph, st.region, goal_region)
        st.next = self.plan.next
        if st.region.kind is RegionKind.TILE and not st.centred:
            centre = self.map[st.region].centre
            if self.centre_timer.update(xy, centre, t):
                st.centred = True
            else:
                st.frame = None
                return self._centre_on(st.region, centre, xy, dt, neutral), Mode.CENTRING
        targets, st.frame = transition_targets(st.region, st.next, self.rows, self.cols,
                                               self.cfg.neutral)
        return targets, Mode.TRANSIT

    def _centre_on(self, region: RegionId, point, xy, dt, neutral):
        targets = dict(neutral)
        r = self.cfg.neutral.r
        if math.dist(tuple(map(float, xy)), tuple(map(float, point))) <= self.cfg.centring_deadband:
            self.pid.reset()
            targets[region.index] = TilePose(0.0, 0.0, r)
            return targets
        pose = centring_command(xy, point, self.cfg.gains, dt, self.pid, r=r)
        if self._vibrating:
            pose = make_pose(pose.delta, pose.phi * self.cfg.vibration_tilt_scale, r)
        targets[region.index] = pose
        return targets

    def step(self, t: float, xy) -> ControlOutput:
        dt = max(t - self._last_t, 1e-9)
        self._last_t = t
        region = self.tracker.update(xy, t)
        if region != self.state.region:
            self._on_region_change(region, t)
        self._advance_goals(xy, t)
        try:
            targets, mode = self._targets(xy, t, dt)
        except NoPathError:
            targets, mode = {tile: self.cfg.neutral for tile in self.tiles}, Mode.HOLD
        vibrating = (mode is not Mode.HOLD
                     and self.state.elapsed(t) > self.cfg.oscillation.dwell)
        if vibrating and not self._vibrating:
            # friction drops when vibration starts; restart the integral from zero
            self.pid.integral = np.zeros(2)
        self._vibrating = vibrating
        for tile, motion in self.tiles.items():
            queue = self._pending[tile]
            queue.append(targets[tile])
            if len(queue) > self.delay[tile]:
                motion.command(queue.popleft(), t)
        poses = {}
        for tile, motion in self.tiles.items():
            pose = motion.update(t)
            if vibrating:
                pose = stuck_oscillation(pose, t - self.state.entered - self.cfg.oscillation.dwell,
                                         self.geom, self.cfg.oscillation)
            poses[tile] = pose
        self.state.moving = {tile: m.moving(t) for tile, m in self.tiles.items()}
        self.state.mode = Mode.OSCILLATING if vibrating else mode
        self._log(t)
        return ControlOutput(targets, poses, self.state.mode, vibrating, self.done)

    def _log(self, t: float):
        st = self.state
        frame = st.frame
        k = "" if frame is None else f"{frame.k}{'m' if frame.mirror else ''}"
        key = (st.mode.value, st.region.label, st.next.label if st.next else "", k)
        if key != self._last_key:
            self._last_key = key
            self.log.append(LogRow(t, *key))
