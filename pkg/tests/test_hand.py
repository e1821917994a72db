import numpy as np
import pytest

from lidtwist.geometry import ConfigError
from lidtwist.hand import (
    NUM_JOINTS,
    HandParams,
    HandState,
    apply_action,
    build_kinematics,
    finger_ik,
    finger_jacobians,
    fingertip_jacobian,
    forward_kinematics,
    keep_outside,
    step_joints,
)


@pytest.fixture
def kin():
    return build_kinematics()


def test_joint_layout(kin):
    assert int(kin.joint_count.sum()) == NUM_JOINTS
    assert kin.joint_start.tolist() == [0, 5, 9, 13, 17]
    with pytest.raises(ConfigError):
        build_kinematics(joint_counts=(4, 4, 4, 4, 4))


def test_zero_pose_reach(kin):
    tips, sensors = forward_kinematics(np.zeros(NUM_JOINTS), kin)
    assert tips.shape == (5, 3) and sensors.shape == (5, kin.k, 3)
    for f in range(5):
        sl = kin.finger_slice(f)
        reach = kin.links[sl].sum()
        planar = tips[f, :2] - kin.base[f, :2]
        assert np.hypot(*planar) == pytest.approx(reach)
        assert tips[f, 2] == pytest.approx(kin.base[f, 2])


def test_sensors_sit_on_cap(kin, rng):
    q = rng.uniform(kin.lower, kin.upper)
    tips, sensors = forward_kinematics(q, kin)
    assert np.allclose(np.linalg.norm(sensors - tips[:, None, :], axis=-1), kin.cap_radius)


def test_jacobian_matches_finite_differences(kin, rng):
    q = rng.uniform(kin.lower * 0.5, kin.upper * 0.5)
    jac = fingertip_jacobian(q, kin)
    h = 1e-6
    for j in range(NUM_JOINTS):
        dq = np.zeros(NUM_JOINTS)
        dq[j] = h
        num = (forward_kinematics(q + dq, kin)[0] - forward_kinematics(q - dq, kin)[0]) / (2 * h)
        assert np.allclose(jac[:, :, j], num, atol=1e-8)


def test_ik_round_trip(kin):
    for f in range(5):
        az = kin.azimuth[f]
        target = np.array([0.0465 * np.cos(az), 0.0465 * np.sin(az), 0.0])
        q = np.zeros(NUM_JOINTS)
        q[kin.finger_slice(f)] = finger_ik(kin, f, target)
        tips, _ = forward_kinematics(q, kin)
        assert np.allclose(tips[f], target, atol=1e-9)


def test_ema_update_oracle(kin):
    p = HandParams()
    state = HandState(q=np.zeros(NUM_JOINTS))
    a1 = np.full(NUM_JOINTS, 0.5)
    s1 = apply_action(state, a1, p, kin)
    assert np.allclose(s1.ema, 0.2 * 0.5)
    assert np.allclose(s1.q_target, 0.75 * 0.1 * 0.1)
    s2 = apply_action(s1, -a1, p, kin)
    assert np.allclose(s2.ema, 0.8 * 0.1 - 0.2 * 0.5)


def test_targets_and_joints_respect_limits(kin):
    p = HandParams()
    state = HandState(q=kin.upper.copy())
    for _ in range(50):
        state = apply_action(state, np.ones(NUM_JOINTS), p, kin)
        state, _ = step_joints(state, 0.0166, p, kin)
    assert np.all(state.q_target <= kin.upper) and np.all(state.q <= kin.upper)


def test_tracking_is_rate_limited(kin):
    p = HandParams()
    state = HandState(q=np.zeros(NUM_JOINTS), q_target=np.full(NUM_JOINTS, 0.5))
    new, dq = step_joints(state, 0.0166, p, kin)
    assert np.allclose(dq, 8.0 * 0.0166)
    assert np.allclose(new.tau, 2.0 * 0.5 - 0.05 * dq / 0.0166)


def test_non_finite_action_rejected(kin):
    state = HandState(q=np.zeros(NUM_JOINTS))
    bad = np.zeros(NUM_JOINTS)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        apply_action(state, bad, HandParams(), kin)


def test_batched_jacobians_match_single(kin, rng):
    q = rng.uniform(kin.lower * 0.5, kin.upper * 0.5, (4, NUM_JOINTS))
    jacs = finger_jacobians(q, kin)
    for i in range(4):
        ref = fingertip_jacobian(q[i], kin)
        for f in range(5):
            assert np.allclose(jacs[f][i], ref[f][:, kin.finger_slice(f)], atol=1e-15)


def test_wall_projection(kin):
    q = np.stack([finger_ik(kin, 1, [0.0, 0.045, 0.0]), finger_ik(kin, 1, [0.0, 0.060, 0.0])], axis=0)
    full = np.zeros((2, NUM_JOINTS))
    full[:, kin.finger_slice(1)] = q
    tips0, _ = forward_kinematics(full, kin)
    wall = 0.05

    def radius(tips):
        return np.full(tips.shape[:2], wall)

    out, tips, _ = keep_outside(full, kin, radius, np.zeros(3))
    # the sunken tip lands on the wall with height and bearing kept
    assert np.hypot(*tips[0, 1, :2]) == pytest.approx(wall, abs=1e-7)
    assert tips[0, 1, 2] == pytest.approx(tips0[0, 1, 2], abs=1e-7)
    assert np.arctan2(tips[0, 1, 1], tips[0, 1, 0]) == pytest.approx(np.arctan2(tips0[0, 1, 1], tips0[0, 1, 0]), abs=1e-6)
    # a tip already outside is left alone
    assert np.array_equal(out[1], full[1])
