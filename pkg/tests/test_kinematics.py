import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilearray.kinematics import (InfeasiblePose, LegAngles, TileGeometry, TilePose,
                                  end_effector_corners, forward_kinematics, ik_batch,
                                  inverse_kinematics, is_feasible, leg_residuals, make_pose,
                                  pose_to_transform, pose_to_translation, rot_y, rot_z)

GEOM = TileGeometry()


def test_default_geometry():
    g = TileGeometry()
    assert g.leg_length == 140 and g.base_radius == 44.01
    assert g.leg_azimuths == pytest.approx((math.pi / 3, math.pi, 5 * math.pi / 3))
    assert g.theta_min == 0 and g.theta_max == pytest.approx(7 * math.pi / 18)
    assert g.effector_width == 150
    assert g.max_height == pytest.approx(131.557, abs=1e-3)


@pytest.mark.parametrize("kw", [dict(leg_length=0), dict(base_radius=-1), dict(effector_width=0),
                                dict(effector_height=-1), dict(theta_min=1.0, theta_max=0.5),
                                dict(theta_max=2.0), dict(leg_azimuths=(0.0, 0.0, 1.0)),
                                dict(leg_azimuths=(0.0, 1.0, 7.0))])
def test_geometry_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        TileGeometry(**kw)


def test_canonical_pose():
    assert make_pose(1.3, 0.0, 90) == TilePose(0.0, 0.0, 90.0)
    assert make_pose(-math.pi / 2, 0.1, 90).delta == pytest.approx(3 * math.pi / 2)
    assert make_pose(5 * math.pi, 0.1, 90).delta == pytest.approx(math.pi)


def test_translation_examples():
    assert pose_to_translation(TilePose(0, 0, 90)) == pytest.approx([0, 0, 90])
    assert pose_to_translation(TilePose(0, math.pi / 2, 100)) == pytest.approx([100, 0, 0], abs=1e-12)
    got = pose_to_translation(TilePose(math.pi / 2, 5 * math.pi / 36, 90))
    s, c = math.sin(math.radians(25)), math.cos(math.radians(25))
    assert got == pytest.approx([0, 90 * s, 90 * c], abs=1e-12)
    assert got[1:] == pytest.approx([38.036, 81.568], abs=1e-3)


def test_transform_examples():
    t = pose_to_transform(TilePose(0, 0, 90))
    assert np.allclose(t.rotation, np.eye(3)) and t.translation == pytest.approx([0, 0, 90])
    # literal yaw-then-tilt composition keeps the yaw when not canonicalized
    t = pose_to_transform(TilePose(math.pi / 2, 0, 90), decouple_yaw=False)
    assert np.allclose(t.rotation, rot_z(math.pi / 2))
    t = pose_to_transform(make_pose(math.pi / 2, 0, 90))
    assert np.allclose(t.rotation, np.eye(3))
    t = pose_to_transform(TilePose(0, math.pi / 6, 100))
    assert np.allclose(t.rotation, rot_y(math.pi / 6))
    assert t.translation == pytest.approx([50, 0, 86.603], abs=1e-3)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 1.2), st.floats(1, 140))
def test_rotation_is_proper(delta, phi, r):
    rot = pose_to_transform(TilePose(delta, phi, r)).rotation
    assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)


def test_corner_examples():
    flat0 = TileGeometry(effector_height=0.0)
    c = end_effector_corners(TilePose(0, 0, 0), GEOM)
    for (i, j), p in c.corners.items():
        assert p == pytest.approx([75 * i, 75 * j, GEOM.effector_height])
    c = end_effector_corners(TilePose(0, 0, 90), GEOM)
    for (i, j), p in c.corners.items():
        assert p == pytest.approx([75 * i, 75 * j, 90 + GEOM.effector_height])
    c = end_effector_corners(TilePose(0, math.pi / 6, 90), flat0)
    assert c[(1, 1)] == pytest.approx([109.952, 75, 40.442], abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 1.2), st.floats(1, 140))
def test_corner_rigidity(delta, phi, r):
    pts = end_effector_corners(TilePose(delta, phi, r), GEOM).as_array()
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    sides = sorted(d[np.triu_indices(4, 1)])
    assert sides[:4] == pytest.approx([150] * 4, abs=1e-9)
    assert sides[4:] == pytest.approx([150 * math.sqrt(2)] * 2, abs=1e-9)


def test_ik_symmetric_case():
    r = 140 * math.sin(math.pi / 4)
    assert r == pytest.approx(98.995, abs=1e-3)
    legs = inverse_kinematics(TilePose(0, 0, r), GEOM)
    assert legs.as_array() == pytest.approx([math.pi / 4] * 3, abs=1e-9)
    assert np.abs(leg_residuals(TilePose(0, 0, r), legs, GEOM)).max() < 1e-9


def test_ik_rejects_too_high():
    with pytest.raises(InfeasiblePose):
        inverse_kinematics(TilePose(0, 0, 150), GEOM)
    assert not is_feasible(TilePose(0, 0, 150), GEOM)


def test_ik_accepts_boundary():
    r = GEOM.leg_length * math.sin(GEOM.theta_max)
    legs = inverse_kinematics(TilePose(0, 0, r), GEOM)
    assert legs.as_array() == pytest.approx([GEOM.theta_max] * 3, abs=1e-9)


def test_ik_rejects_non_finite():
    with pytest.raises(InfeasiblePose):
        inverse_kinematics(TilePose(0, float("nan"), 90), GEOM)


def test_ik_batch_matches_scalar():
    rng = np.random.default_rng(3)
    d, p, r = rng.uniform(0, 2 * math.pi, 200), rng.uniform(0, 0.6, 200), rng.uniform(20, 135, 200)
    batch = ik_batch(d, p, r, GEOM)
    for k in range(200):
        pose = TilePose(d[k], p[k], r[k])
        if np.isnan(batch[k]).any():
            assert not is_feasible(pose, GEOM)
        else:
            assert inverse_kinematics(pose, GEOM).as_array() == pytest.approx(batch[k], abs=1e-12)


def test_fk_examples():
    pose = forward_kinematics(LegAngles(math.pi / 4, math.pi / 4, math.pi / 4), GEOM)
    assert pose.delta == 0 and pose.phi == pytest.approx(0, abs=1e-9)
    assert pose.r == pytest.approx(140 * math.sin(math.pi / 4), abs=1e-9)
    t = 7 * math.pi / 18
    pose = forward_kinematics(LegAngles(t, t, t), GEOM)
    assert pose.phi == pytest.approx(0, abs=1e-9) and pose.r == pytest.approx(131.557, abs=1e-3)
    target = TilePose(math.pi / 6, math.pi / 18, 95)
    back = forward_kinematics(inverse_kinematics(target, GEOM), GEOM)
    assert back.as_tuple() == pytest.approx(target.as_tuple(), abs=1e-6)


def test_fk_uses_seed():
    target = TilePose(2.0, 0.3, 100)
    legs = inverse_kinematics(target, GEOM)
    back = forward_kinematics(legs, GEOM, seed=TilePose(2.05, 0.28, 98))
    assert back.as_tuple() == pytest.approx(target.as_tuple(), abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * math.pi, exclude_max=True), st.floats(0.0, 2 * math.pi / 3))
def test_three_fold_symmetry(delta, phi_frac):
    for r in (40.0, 90.0, 125.0):
        a = is_feasible(TilePose(delta, phi_frac / 2, r), GEOM)
        b = is_feasible(TilePose((delta + 2 * math.pi / 3) % (2 * math.pi), phi_frac / 2, r), GEOM)
        assert a == b
