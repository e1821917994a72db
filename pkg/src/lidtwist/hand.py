"""Kinematic five-finger hand with 22 actuated joints.

Every finger is a serial chain hanging from a palm above the lid: one yaw
joint about the vertical axis through the finger base, followed by pitch
joints that bend the chain down towards the rim. Joints track EMA-smoothed
position targets with a rate-limited first-order law; torques are a
synthetic PD expression that only feeds the work penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .geometry import ConfigError, sensor_cap

FINGER_NAMES = ("thumb", "index", "middle", "ring", "little")
NUM_JOINTS = 22


@dataclass(frozen=True)
class FingerKinematics:
    base: np.ndarray  # (5, 3)
    azimuth: np.ndarray  # (5,) rest heading of each chain
    joint_start: np.ndarray  # (5,) int
    joint_count: np.ndarray  # (5,) int
    links: np.ndarray  # (22,) link following each joint; 0 for yaw joints
    cap: np.ndarray  # (k, 3) sensor coefficients, see geometry.sensor_cap
    cap_radius: float
    lower: np.ndarray  # (22,)
    upper: np.ndarray  # (22,)

    def __post_init__(self):
        if len(self.joint_count) != 5 or int(np.sum(self.joint_count)) != NUM_JOINTS:
            raise ConfigError("hand needs 5 chains with 22 joints in total")

    @property
    def k(self):
        return self.cap.shape[0]

    def finger_slice(self, f):
        s = int(self.joint_start[f])
        return slice(s, s + int(self.joint_count[f]))

    def yaw_index(self, f):
        return int(self.joint_start[f])


def build_kinematics(
    joint_counts=(5, 4, 4, 4, 5),
    azimuths=None,
    base_radius=0.012,
    base_height=0.03,
    links_short=(0.03, 0.025, 0.015),
    links_long=(0.015, 0.02, 0.02, 0.015),
    k=9,
    cap_radius=0.006,
    cap_spread=0.5,
    yaw_limit=1.6,
    pitch_limits=(-0.4, 2.2),
) -> FingerKinematics:
    """Default desk-scale hand (profile ``desk-v1``)."""
    counts = np.asarray(joint_counts, dtype=np.int64)
    if azimuths is None:
        # thumb opposite the four fingers, every rest heading on a 45 degree guide
        azimuths = np.array([1.0, 0.5, 0.25, -0.25, -0.5]) * np.pi
    azimuths = np.asarray(azimuths, dtype=float)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    links = np.zeros(int(counts.sum()))
    lower = np.empty_like(links)
    upper = np.empty_like(links)
    for f, (s, c) in enumerate(zip(start, counts)):
        chain = {4: links_short, 5: links_long}.get(int(c))
        if chain is None or len(chain) != c - 1:
            raise ConfigError(f"no link profile for a {c}-joint finger")
        links[s + 1 : s + c] = chain
        lower[s], upper[s] = -yaw_limit, yaw_limit
        lower[s + 1 : s + c], upper[s + 1 : s + c] = pitch_limits
    base = np.stack(
        [base_radius * np.cos(azimuths), base_radius * np.sin(azimuths), np.full(5, base_height)], axis=1
    )
    return FingerKinematics(
        base=base,
        azimuth=azimuths,
        joint_start=start,
        joint_count=counts,
        links=links,
        cap=sensor_cap(k, cap_radius, cap_spread),
        cap_radius=cap_radius,
        lower=lower,
        upper=upper,
    )


@dataclass
class HandState:
    q: np.ndarray
    qdot: np.ndarray = field(default=None)
    q_target: np.ndarray = field(default=None)
    ema: np.ndarray = field(default=None)
    tau: np.ndarray = field(default=None)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        for name in ("qdot", "ema", "tau"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.q))
        if self.q_target is None:
            self.q_target = self.q.copy()


@dataclass(frozen=True)
class HandParams:
    eta: float = 0.75
    action_scale: float = 0.1
    action_clip: float = 1.0
    ema_beta: float = 0.8
    track_gain: float = 30.0  # 1/s
    rate_limit: float = 8.0  # rad/s
    kp: float = 2.0  # N m / rad
    kd: float = 0.05  # N m s / rad


def apply_action(state: HandState, action, params: HandParams, kin: FingerKinematics) -> HandState:
    """Fold a relative action into the EMA accumulator and the joint target."""
    a = np.asarray(action, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("action contains non-finite values")
    a = np.clip(a, -params.action_clip, params.action_clip)
    ema = params.ema_beta * state.ema + (1.0 - params.ema_beta) * a
    target = state.q_target + params.eta * ema * params.action_scale
    target = np.clip(target, kin.lower, kin.upper)
    return replace(state, ema=ema, q_target=target)


def step_joints(state: HandState, dt: float, params: HandParams, kin: FingerKinematics):
    """Move joints towards their targets; returns (new state, joint displacement)."""
    err = state.q_target - state.q
    limit = params.rate_limit * dt
    dq = np.clip(params.track_gain * dt * err, -limit, limit)
    q = np.clip(state.q + dq, kin.lower, kin.upper)
    dq = q - state.q
    qdot = dq / dt
    tau = params.kp * err - params.kd * qdot
    return replace(state, q=q, qdot=qdot, tau=tau), dq


def forward_kinematics(q, kin: FingerKinematics, backend=None):
    """Fingertip positions (..., 5, 3) and sensor points (..., 5, k, 3)."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    fk = kernels.get_backend(backend).finger_forward
    tips, sensors, _ = fk(
        np.atleast_2d(q), kin.base, kin.azimuth, kin.joint_start, kin.joint_count, kin.links, kin.cap
    )
    if single:
        return tips[0], sensors[0]
    return tips, sensors


def fingertip_velocities(tips, prev_tips, dt):
    return (np.asarray(tips) - np.asarray(prev_tips)) / dt


def fingertip_jacobian(q, kin: FingerKinematics) -> np.ndarray:
    """Analytic d(tip)/dq for a single configuration, shape (5, 3, 22)."""
    q = np.asarray(q, dtype=float)
    jac = np.zeros((5, 3, q.size))
    for f in range(5):
        sl = kin.finger_slice(f)
        s = sl.start
        psi = kin.azimuth[f] + q[s]
        radial = np.array([np.cos(psi), np.sin(psi), 0.0])
        lateral = np.array([-np.sin(psi), np.cos(psi), 0.0])
        angles = np.cumsum(q[s + 1 : sl.stop])
        lengths = kin.links[s + 1 : sl.stop]
        reach = np.sum(lengths * np.cos(angles))
        jac[f, :, s] = reach * lateral
        for i in range(len(angles)):
            dx = -np.sum(lengths[i:] * np.sin(angles[i:]))
            dz = -np.sum(lengths[i:] * np.cos(angles[i:]))
            jac[f, :, s + 1 + i] = dx * radial + dz * np.array([0.0, 0.0, 1.0])
    return jac


def _two_link(x, z_down, l1, l2):
    """Absolute first-link angle and elbow angle reaching (x, z_down)."""
    d = (x * x + z_down * z_down - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    elbow = np.arccos(np.clip(d, -1.0, 1.0))
    first = np.arctan2(z_down, x) - np.arctan2(l2 * np.sin(elbow), l1 + l2 * np.cos(elbow))
    return first, elbow


def finger_ik(kin: FingerKinematics, f: int, target, pad_angle=np.pi / 2, first_pitch=0.0):
    """Joint angles placing fingertip ``f`` at ``target`` with the last link at ``pad_angle``.

    ``pad_angle`` is the cumulative pitch of the last link (pi/2 points it
    straight down, pad facing the finger base). Five-joint chains hold their
    first pitch joint at ``first_pitch``. The result is clipped to limits.
    """
    sl = kin.finger_slice(f)
    s, c = sl.start, sl.stop - sl.start
    lengths = kin.links[s + 1 : sl.stop]
    target = np.asarray(target, dtype=float)
    h = target[:2] - kin.base[f, :2]
    psi = np.arctan2(h[1], h[0])
    yaw = np.angle(np.exp(1j * (psi - kin.azimuth[f])))
    x = np.hypot(h[0], h[1])
    z_down = kin.base[f, 2] - target[2]
    wx = x - lengths[-1] * np.cos(pad_angle)
    wz = z_down - lengths[-1] * np.sin(pad_angle)
    q = np.zeros(c)
    q[0] = yaw
    if c == 4:
        a1, elbow = _two_link(wx, wz, lengths[0], lengths[1])
        q[1], q[2] = a1, elbow
    elif c == 5:
        jx = lengths[0] * np.cos(first_pitch)
        jz = lengths[0] * np.sin(first_pitch)
        a2, elbow = _two_link(wx - jx, wz - jz, lengths[1], lengths[2])
        q[1], q[2], q[3] = first_pitch, a2 - first_pitch, elbow
    else:
        raise ConfigError(f"no IK for a {c}-joint finger")
    q[-1] = pad_angle - np.sum(q[1:-1])
    return np.clip(q, kin.lower[sl], kin.upper[sl])


def finger_jacobians(q, kin: FingerKinematics):
    """Batched d(tip)/dq of each finger: a list of five (N, 3, joints) arrays."""
    q = np.atleast_2d(q)
    out = []
    for f in range(5):
        sl = kin.finger_slice(f)
        s = sl.start
        psi = kin.azimuth[f] + q[:, s]
        radial = np.stack([np.cos(psi), np.sin(psi), np.zeros_like(psi)], axis=1)
        lateral = np.stack([-np.sin(psi), np.cos(psi), np.zeros_like(psi)], axis=1)
        angles = np.cumsum(q[:, s + 1 : sl.stop], axis=1)
        lengths = kin.links[s + 1 : sl.stop]
        jac = np.zeros((q.shape[0], 3, sl.stop - s))
        jac[:, :, 0] = np.sum(lengths * np.cos(angles), axis=1)[:, None] * lateral
        # reach and height derivatives accumulate from the joint outwards
        dx = -np.cumsum((lengths * np.sin(angles))[:, ::-1], axis=1)[:, ::-1]
        dz = -np.cumsum((lengths * np.cos(angles))[:, ::-1], axis=1)[:, ::-1]
        jac[:, :, 1:] = dx[:, None, :] * radial[:, :, None]
        jac[:, 2, 1:] += dz
        out.append(jac)
    return out


def keep_outside(q, kin: FingerKinematics, wall, center, fallback=None, iters=4, damping=1e-6, tol=1e-6, backend=None):
    """Project fingertip caps that sank into the lid back onto its side wall.

    ``wall(tips)`` returns the smallest allowed horizontal distance of each
    cap centre from the lid axis, shape (N, 5). An offending tip is moved
    radially out to the wall with its height and bearing kept (a
    frictionless wall), by damped Gauss-Newton steps on the finger's
    joints. A finger still inside afterwards (joint limits, deep folds)
    restarts from its ``fallback`` joints when given. Returns the corrected
    joints and the final tips and sensors.
    """
    q = np.array(q, dtype=float)
    q, tips, sensors, stuck = _project(q, kin, wall, center, iters, damping, tol, backend)
    if fallback is not None and stuck.any():
        fallback = np.atleast_2d(fallback)
        for f in np.flatnonzero(stuck.any(axis=0)):
            sl = kin.finger_slice(f)
            q[stuck[:, f], sl] = fallback[stuck[:, f], sl]
        q, tips, sensors, _ = _project(q, kin, wall, center, iters, damping, tol, backend)
    return q, tips, sensors


def _project(q, kin, wall, center, iters, damping, tol, backend):
    c = np.asarray(center, dtype=float)[:2]

    def depth_of(tips):
        rel = tips[..., :2] - c
        dist = np.hypot(rel[..., 0], rel[..., 1])
        return rel, dist, wall(tips) - dist

    tips, sensors = forward_kinematics(q, kin, backend)
    rel, dist, depth = depth_of(tips)
    hit = depth > tol
    if not hit.any():
        return q, tips, sensors, hit
    goal = tips.copy()
    goal[..., :2] += rel / np.maximum(dist, 1e-12)[..., None] * np.maximum(depth, 0.0)[..., None]
    for _ in range(iters):
        jacs = finger_jacobians(q, kin)
        for f in range(5):
            rows = np.flatnonzero(hit[:, f])
            if rows.size == 0:
                continue
            sl = kin.finger_slice(f)
            jac = jacs[f][rows]
            err = goal[rows, f] - tips[rows, f]
            jjt = jac @ jac.transpose(0, 2, 1) + damping * np.eye(3)
            dq = (jac.transpose(0, 2, 1) @ np.linalg.solve(jjt, err[..., None]))[..., 0]
            q[rows, sl] = np.clip(q[rows, sl] + dq, kin.lower[sl], kin.upper[sl])
        tips, sensors = forward_kinematics(q, kin, backend)
    return q, tips, sensors, depth_of(tips)[2] > tol
