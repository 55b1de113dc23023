"""Single-tile kinematics for the three-legged tilting platform.

Each tile is a Canfield-style parallel mechanism: three two-segment legs of
total length ``l`` rise from a base circle of radius ``R`` and carry a square
end-effector plate. The plate pose is written in polar form ``(delta, phi, r)``
where ``r`` is the base-to-plate-centre distance, ``phi`` the tilt away from
vertical and ``delta`` the azimuth of the tilt (the downhill direction of the
plate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TileGeometry:
    leg_length: float = 140.0
    base_radius: float = 44.01
    leg_azimuths: tuple[float, float, float] = (math.pi / 3, math.pi, 5 * math.pi / 3)
    theta_min: float = 0.0
    theta_max: float = 7 * math.pi / 18
    effector_width: float = 150.0
    effector_height: float = 5.0

    def __post_init__(self):
        if self.leg_length <= 0 or self.base_radius <= 0 or self.effector_width <= 0:
            raise ValueError("leg_length, base_radius and effector_width must be positive")
        if self.effector_height < 0:
            raise ValueError("effector_height must be non-negative")
        if not 0.0 <= self.theta_min < self.theta_max <= math.pi / 2:
            raise ValueError("joint limits must satisfy 0 <= theta_min < theta_max <= pi/2")
        az = tuple(float(a) for a in self.leg_azimuths)
        if len(az) != 3 or len(set(az)) != 3 or any(not 0 <= a < TWO_PI for a in az):
            raise ValueError("leg_azimuths must be three distinct angles in [0, 2pi)")

    @property
    def max_height(self) -> float:
        """Largest reachable ``r`` for an untilted plate."""
        return self.leg_length * math.sin(self.theta_max)


@dataclass(frozen=True)
class TilePose:
    delta: float
    phi: float
    r: float

    def canonical(self) -> TilePose:
        if self.phi == 0.0:
            return TilePose(0.0, 0.0, self.r)
        return TilePose(self.delta % TWO_PI, self.phi, self.r)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.delta, self.phi, self.r)


def make_pose(delta: float, phi: float, r: float) -> TilePose:
    """Canonical pose: ``delta`` wrapped to [0, 2pi), forced to 0 when untilted."""
    return TilePose(float(delta), float(phi), float(r)).canonical()


@dataclass(frozen=True)
class LegAngles:
    theta1: float
    theta2: float
    theta3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3])

    def within(self, geom: TileGeometry, tol: float = 1e-12) -> bool:
        return all(geom.theta_min - tol <= t <= geom.theta_max + tol for t in self.as_array())


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def matrix(self) -> np.ndarray:
        h = np.eye(4)
        h[:3, :3] = self.rotation
        h[:3, 3] = self.translation
        return h

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CornerSet:
    """Plate corners keyed by the sign pair ``(i, j)`` of their local x/y coordinates."""

    corners: dict = field(default_factory=dict)

    def __getitem__(self, key: tuple[int, int]) -> np.ndarray:
        return self.corners[key]

    def as_array(self) -> np.ndarray:
        return np.array([self.corners[k] for k in CORNER_ORDER])


CORNER_ORDER = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def pose_to_translation(pose: TilePose, geom: TileGeometry | None = None) -> np.ndarray:
    d, p, r = pose.delta, pose.phi, pose.r
    return r * np.array([math.sin(p) * math.cos(d), math.sin(p) * math.sin(d), math.cos(p)])


def tilt_rotation(delta: float, phi: float, decouple_yaw: bool = True) -> np.ndarray:
    """Plate orientation for a tilt of ``phi`` toward azimuth ``delta``.

    With ``decouple_yaw`` the plate tilts about the horizontal axis normal to
    ``delta`` and never spins about its own normal, which is how the
    three-legged mechanism actually moves. ``decouple_yaw=False`` returns the
    bare ``Rz(delta) @ Ry(phi)`` composition, where the plate also yaws by
    ``delta``.
    """
    rot = rot_z(delta) @ rot_y(phi)
    if decouple_yaw:
        rot = rot @ rot_z(-delta)
    return rot


def pose_to_transform(pose: TilePose, geom: TileGeometry | None = None,
                      decouple_yaw: bool = True) -> RigidTransform:
    return RigidTransform(tilt_rotation(pose.delta, pose.phi, decouple_yaw),
                          pose_to_translation(pose))


def local_corners(geom: TileGeometry) -> np.ndarray:
    h = geom.effector_width / 2
    return np.array([[i * h, j * h, geom.effector_height] for i, j in CORNER_ORDER])


def end_effector_corners(pose: TilePose, geom: TileGeometry) -> CornerSet:
    world = pose_to_transform(pose, geom).apply(local_corners(geom))
    return CornerSet(dict(zip(CORNER_ORDER, world)))


class InfeasiblePose(ValueError):
    """Raised when a pose has no inverse-kinematics solution within the joint limits."""


def _leg_frames(geom: TileGeometry):
    az = np.asarray(geom.leg_azimuths, dtype=float)
    radial = np.stack([np.cos(az), np.sin(az), np.zeros(3)], axis=1)
    return radial, geom.base_radius * radial


def _solve_leg(a, b, c, geom: TileGeometry, tol: float):
    # a cos(theta) + b sin(theta) = c; prefer the smaller in-range root
    norm = np.hypot(a, b)
    ratio = np.where(norm > 0, c / np.where(norm > 0, norm, 1.0), np.inf)
    ok = np.abs(ratio) <= 1.0 + 1e-12
    base = np.arctan2(b, a)
    width = np.arccos(np.clip(ratio, -1.0, 1.0))
    best = np.full(np.shape(a), np.nan)
    lo, hi = geom.theta_min - tol, geom.theta_max + tol
    for root in (base - width, base + width):
        for shift in (-TWO_PI, 0.0, TWO_PI):
            cand = root + shift
            good = ok & (cand >= lo) & (cand <= hi) & ~(cand >= best)
            best = np.where(good, cand, best)
    # folded flat onto the base: every angle closes the leg, take the smallest
    best = np.where((norm <= tol) & (np.abs(c) <= tol), geom.theta_min, best)
    return np.clip(best, geom.theta_min, geom.theta_max)


def ik_batch(delta, phi, r, geom: TileGeometry, tol: float = 1e-12) -> np.ndarray:
    """Vectorised inverse kinematics.

    Returns an ``(n, 3)`` array of leg angles with NaN rows for poses that
    cannot be reached within the joint limits.
    """
    delta, phi, r = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (delta, phi, r))
    delta, phi, r = np.broadcast_arrays(delta, phi, r)
    cd, sd, cp, sp = np.cos(delta), np.sin(delta), np.cos(phi), np.sin(phi)
    t = np.stack([r * sp * cd, r * sp * sd, r * cp], axis=-1)
    # tilt about the horizontal axis (-sin d, cos d, 0) by phi (Rodrigues)
    kx, ky = -sd, cd
    vc = 1.0 - cp
    rot = np.empty(delta.shape + (3, 3))
    rot[..., 0, 0] = cp + kx * kx * vc
    rot[..., 0, 1] = kx * ky * vc
    rot[..., 0, 2] = ky * sp
    rot[..., 1, 0] = kx * ky * vc
    rot[..., 1, 1] = cp + ky * ky * vc
    rot[..., 1, 2] = -kx * sp
    rot[..., 2, 0] = -ky * sp
    rot[..., 2, 1] = kx * sp
    rot[..., 2, 2] = cp
    radial, base = _leg_frames(geom)
    l = geom.leg_length
    out = np.empty(delta.shape + (3,))
    for i in range(3):
        plate = rot @ base[i] + t
        d = plate - base[i]
        a = -l * (d @ radial[i])
        b = l * d[..., 2]
        c = np.einsum("...k,...k->...", d, d)
        out[..., i] = _solve_leg(a, b, c, geom, tol)
    bad = np.isnan(out).any(axis=-1)
    out[bad] = np.nan
    return out


def inverse_kinematics(pose: TilePose, geom: TileGeometry) -> LegAngles:
    """Leg angles for ``pose``; raises :class:`InfeasiblePose` when unreachable."""
    p = pose.canonical()
    if not all(math.isfinite(v) for v in p.as_tuple()):
        raise InfeasiblePose(f"non-finite pose {pose}")
    th = ik_batch(p.delta, p.phi, p.r, geom)[0]
    if np.isnan(th).any():
        raise InfeasiblePose(f"pose {pose} is outside the reachable workspace")
    return LegAngles(*(float(x) for x in th))


def is_feasible(pose: TilePose, geom: TileGeometry) -> bool:
    return not np.isnan(ik_batch(pose.delta, pose.phi, pose.r, geom)[0]).any()


def leg_residuals(pose: TilePose, angles, geom: TileGeometry) -> np.ndarray:
    """Signed violation ``|P_i - E_i| - l/2`` of each leg's closure constraint (mm)."""
    theta = np.asarray(angles.as_array() if isinstance(angles, LegAngles) else angles, dtype=float)
    radial, base = _leg_frames(geom)
    tf = pose_to_transform(pose, geom)
    plate = tf.apply(base)
    half = geom.leg_length / 2
    elbow = base + half * (-np.cos(theta)[:, None] * radial
                           + np.sin(theta)[:, None] * np.array([0.0, 0.0, 1.0]))
    return np.linalg.norm(plate - elbow, axis=1) - half


# --- forward kinematics ---------------------------------------------------
# Solved in tilt-vector coordinates (a, b) = phi * (cos delta, sin delta),
# which stay smooth through the untilted pose where delta is undefined.

def _residual_ab(x, theta, geom: TileGeometry) -> np.ndarray:
    # scalar version of leg_residuals; this sits in the inner solver loop
    a, b, r = float(x[0]), float(x[1]), float(x[2])
    phi = math.hypot(a, b)
    cd, sd = (a / phi, b / phi) if phi > 0 else (1.0, 0.0)
    cp, sp = math.cos(phi), math.sin(phi)
    kx, ky, vc = -sd, cd, 1.0 - cp
    r00, r01 = cp + kx * kx * vc, kx * ky * vc
    r10, r11 = kx * ky * vc, cp + ky * ky * vc
    r20, r21 = -ky * sp, kx * sp
    tx, ty, tz = r * sp * cd, r * sp * sd, r * cp
    half = geom.leg_length / 2
    R = geom.base_radius
    out = np.empty(3)
    for i, az in enumerate(geom.leg_azimuths):
        ux, uy = math.cos(az), math.sin(az)
        bx, by = R * ux, R * uy
        px = r00 * bx + r01 * by + tx
        py = r10 * bx + r11 * by + ty
        pz = r20 * bx + r21 * by + tz
        ct, st = math.cos(theta[i]), math.sin(theta[i])
        ex, ey, ez = bx - half * ct * ux, by - half * ct * uy, half * st
        out[i] = math.sqrt((px - ex) ** 2 + (py - ey) ** 2 + (pz - ez) ** 2) - half
    return out


def _seed(theta: np.ndarray, geom: TileGeometry) -> np.ndarray:
    radial, base = _leg_frames(geom)
    heights = geom.leg_length * np.sin(theta)
    design = np.column_stack([np.ones(3), base[:, 0], base[:, 1]])
    c, gx, gy = np.linalg.solve(design, heights)
    phi = math.atan(math.hypot(gx, gy))
    # the plate shifts downhill, so the uphill leg is the most extended
    delta = math.atan2(gy, gx)
    return np.array([phi * math.cos(delta), phi * math.sin(delta), c])


def forward_kinematics(angles: LegAngles, geom: TileGeometry, seed: TilePose | None = None,
                       max_iter: int = 100, tol: float = 1e-9) -> TilePose | None:
    """Pose reached by ``angles`` or ``None`` if the solver does not converge.

    Damped Gauss-Newton on the three leg-closure residuals. A ``seed`` pose
    (for instance the previous control tick) speeds up tracking.
    """
    theta = angles.as_array()
    if seed is not None:
        s = seed.canonical()
        x = np.array([s.phi * math.cos(s.delta), s.phi * math.sin(s.delta), s.r])
    else:
        x = _seed(theta, geom)
    res = _residual_ab(x, theta, geom)
    cost = float(res @ res)
    lam = 1e-6
    h = 1e-7
    for _ in range(max_iter):
        if np.max(np.abs(res)) < tol:
            break
        jac = np.empty((3, 3))
        for k in range(3):
            xp = x.copy()
            xp[k] += h
            jac[:, k] = (_residual_ab(xp, theta, geom) - res) / h
        jtj = jac.T @ jac
        g = jac.T @ res
        while True:
            step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), -g)
            xn = x + step
            rn = _residual_ab(xn, theta, geom)
            cn = float(rn @ rn)
            if cn < cost or lam > 1e8:
                break
            lam *= 10.0
        x, res, cost = xn, rn, cn
        lam = max(lam / 10.0, 1e-12)
    if not np.max(np.abs(res)) < max(tol, 1e-9):
        return None
    a, b, r = x
    phi = math.hypot(a, b)
    return make_pose(math.atan2(b, a) if phi > 0 else 0.0, phi, r)
