"""Vectorised lid-twisting MDP.

One step runs in a fixed order: action noise, EMA target update, joint
tracking, forward kinematics, contact grading, virtual torque and lid
integration, rewards, termination, observation. Every environment owns its
random stream, so a row never depends on its neighbours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import kernels, rewards
from .config import RunConfig
from .geometry import NUM_FINGERS, boundary_radius, make_lid_frames
from .hand import NUM_JOINTS, HandParams, HandState, apply_action, build_kinematics, finger_ik, keep_outside, step_joints
from .lid import LidParams, calibrate_coupling_gain, moment_arms

TRACE_SCHEMA = "lidtwist.trace"
TRACE_VERSION = 1


class UsageError(RuntimeError):
    """Environment called out of protocol (e.g. stepping a finished episode)."""


@dataclass(frozen=True)
class ObsLayout:
    d_z: int

    @property
    def slices(self):
        j = NUM_JOINTS
        z0 = 3 * j
        return {
            "q": slice(0, j),
            "qdot": slice(j, 2 * j),
            "q_target": slice(2 * j, 3 * j),
            "z": slice(z0, z0 + self.d_z),
            "p": slice(z0 + self.d_z, z0 + self.d_z + 3),
        }

    @property
    def dim(self):
        return 3 * NUM_JOINTS + self.d_z + 3

    def split(self, obs):
        return {k: obs[..., s] for k, s in self.slices.items()}


@dataclass(frozen=True)
class PrivLayout:
    obs_dim: int
    k: int

    @property
    def slices(self):
        o = self.obs_dim
        n = NUM_FINGERS * self.k
        return {
            "obs": slice(0, o),
            "lid_phase": slice(o, o + 2),  # sin/cos of frames-count x lid angle
            "lid_rate": slice(o + 2, o + 3),
            "friction": slice(o + 3, o + 4),
            "distances": slice(o + 4, o + 4 + n),
            "quality": slice(o + 4 + n, o + 4 + n + NUM_FINGERS),
        }

    @property
    def dim(self):
        return self.obs_dim + 4 + NUM_FINGERS * self.k + NUM_FINGERS


@dataclass
class StepResult:
    obs: np.ndarray
    priv: np.ndarray
    reward: np.ndarray
    breakdown: rewards.RewardBreakdown
    done: np.ndarray
    cause: list
    truncated: np.ndarray
    terminal_obs: np.ndarray
    terminal_priv: np.ndarray
    info: dict = field(default_factory=dict)


def build_lid_params(cfg: RunConfig) -> LidParams:
    gain = cfg.lid.coupling_gain
    if gain <= 0:
        gain = calibrate_coupling_gain(
            friction_max=cfg.randomization.friction_max * cfg.lid.friction_scale,
            k=cfg.contact.sensors,
            rim_radius=cfg.lid.rim_radius,
            nominal_speed=cfg.lid.nominal_speed,
            margin=cfg.lid.calibration_margin,
        )
    return LidParams(
        friction_scale=cfg.lid.friction_scale,
        friction_range=(cfg.randomization.friction_min, cfg.randomization.friction_max),
        torsional_damping=cfg.lid.torsional_damping,
        damping_scale=cfg.lid.damping_scale,
        torsional_stiffness=cfg.lid.torsional_stiffness,
        inertia=cfg.lid.inertia,
        coupling_gain=gain,
        nominal_speed=cfg.lid.nominal_speed,
        calibration_margin=cfg.lid.calibration_margin,
    )


def build_hand(cfg: RunConfig):
    kin = build_kinematics(
        base_radius=cfg.hand.base_radius,
        base_height=cfg.hand.base_height,
        k=cfg.contact.sensors,
        cap_radius=cfg.contact.cap_radius,
        cap_spread=cfg.contact.cap_spread,
    )
    params = HandParams(
        eta=cfg.hand.eta,
        action_scale=cfg.hand.action_scale,
        action_clip=cfg.hand.action_clip,
        ema_beta=cfg.hand.ema_beta,
        track_gain=cfg.hand.track_gain,
        rate_limit=cfg.hand.rate_limit,
        kp=cfg.hand.kp,
        kd=cfg.hand.kd,
    )
    return kin, params


def pregrasp_pose(kin, frames, gap: float) -> np.ndarray:
    """Joint angles with each fingertip pad just outside its nearest guide frame."""
    q = np.zeros(NUM_JOINTS)
    az = frames.azimuths()
    for f in range(NUM_FINGERS):
        diff = np.angle(np.exp(1j * (az - kin.azimuth[f])))
        j = int(np.argmin(np.abs(diff)))
        point = frames.points[j]
        radial = np.array([point[0], point[1], 0.0]) / np.hypot(point[0], point[1])
        target = point + (kin.cap_radius + gap) * radial
        q[kin.finger_slice(f)] = finger_ik(kin, f, target)
    return q


def rotate_frames(base_points, angles):
    """Guide frames (N, m, 3) after each lid turned by ``angles`` (N,)."""
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    x = base_points[None, :, 0]
    y = base_points[None, :, 1]
    out = np.empty((angles.shape[0], base_points.shape[0], 3))
    out[..., 0] = c * x + s * y
    out[..., 1] = -s * x + c * y
    out[..., 2] = base_points[None, :, 2]
    return out


class VecLidEnv:
    """N independent lid-twisting environments stepped together.

    ``seeds`` gives one seed per environment (default: derived from
    ``cfg.run.seed``). With ``autoreset`` finished environments are reset
    inside the same ``step`` call; otherwise stepping them raises.
    """

    def __init__(
        self,
        cfg: RunConfig,
        num_envs: int | None = None,
        seeds=None,
        encoder_params: enc.EncoderParams | None = None,
        autoreset: bool = True,
        record: bool = False,
        backend: str | None = None,
    ):
        self.cfg = cfg
        n = num_envs if num_envs is not None else (len(seeds) if seeds is not None else cfg.run.num_envs)
        if seeds is None:
            children = np.random.SeedSequence(cfg.run.seed).spawn(n)
            self.rngs = [np.random.Generator(np.random.PCG64(c)) for c in children]
        else:
            if len(seeds) != n:
                raise ValueError("need one seed per environment")
            self.rngs = [np.random.default_rng(int(s)) for s in seeds]
        self.n = n
        self.k = cfg.contact.sensors
        self.kern = kernels.get_backend(backend)
        self.kin, self.hand_params = build_hand(cfg)
        self.lid_params = build_lid_params(cfg)
        self.gain = self.lid_params.coupling_gain
        self.frames = make_lid_frames(cfg.lid.shape, cfg.lid.rim_radius, cfg.contact.frames)
        self.q_rest = pregrasp_pose(self.kin, self.frames, cfg.hand.pregrasp_gap)
        self.weights = rewards.RewardWeights(
            cpr=cfg.rewards.lambda_cpr,
            crr=cfg.rewards.lambda_crr,
            rr=cfg.rewards.lambda_rr,
            angle=cfg.rewards.lambda_angle,
            action=cfg.rewards.lambda_action,
            work=cfg.rewards.lambda_work,
            gaiting=cfg.rewards.lambda_gaiting,
            distance=cfg.rewards.lambda_distance,
        )
        self.reward_set = cfg.rewards.set
        self.dt = cfg.run.dt
        self.max_steps = cfg.run.max_episode_length
        self.clip_obs = cfg.run.clip_observation
        if encoder_params is None:
            encoder_params = enc.passthrough_params(cfg.encoder.window, self.k, NUM_FINGERS)
        if encoder_params.k != self.k or encoder_params.fingers != NUM_FINGERS:
            raise ValueError("encoder was built for a different sensor layout")
        self.encoder = encoder_params
        self.window = enc.TactileWindow(encoder_params.window, NUM_FINGERS * self.k, n)
        self.obs_layout = ObsLayout(encoder_params.d_z)
        self.priv_layout = PrivLayout(self.obs_layout.dim, self.k)
        self.lid_center = np.zeros(3)
        self.lid_axis = np.array([0.0, 0.0, 1.0])
        self.z_ref = np.array([0.0, 0.0, 1.0])
        self.autoreset = autoreset
        self.record = record
        self.traces = []  # finished episode traces when recording
        self._live = [None] * n

        j = NUM_JOINTS
        self.q = np.zeros((n, j))
        self.qdot = np.zeros((n, j))
        self.q_target = np.zeros((n, j))
        self.ema = np.zeros((n, j))
        self.tau = np.zeros((n, j))
        self.tips = np.zeros((n, NUM_FINGERS, 3))
        self.angle = np.zeros(n)
        self.rate = np.zeros(n)
        self.friction_mult = np.zeros(n)
        self.contact_prev = np.zeros((n, NUM_FINGERS), bool)
        self.first = np.ones(n, bool)
        self.steps = np.zeros(n, np.int64)
        self.done = np.zeros(n, bool)
        self.episode_ids = np.zeros(n, np.int64)
        self._last_dist = np.zeros((n, NUM_FINGERS, self.k))
        self._last_quality = np.zeros((n, NUM_FINGERS))
        self._last_norm = np.zeros((n, NUM_FINGERS, self.k))

    # ------------------------------------------------------------------ state
    @property
    def obs_dim(self):
        return self.obs_layout.dim

    @property
    def priv_dim(self):
        return self.priv_layout.dim

    def hand_state(self, i: int) -> HandState:
        return HandState(
            q=self.q[i].copy(),
            qdot=self.qdot[i].copy(),
            q_target=self.q_target[i].copy(),
            ema=self.ema[i].copy(),
            tau=self.tau[i].copy(),
        )

    def lid_state(self, i: int):
        from .lid import LidState

        return LidState(
            angle=float(self.angle[i]),
            rate=float(self.rate[i]),
            friction=float(self.friction_mult[i] * self.lid_params.friction_scale),
            damping=self.lid_params.damping,
            inertia=self.lid_params.inertia,
        )

    def _reset_rows(self, idx):
        lo, hi = self.lid_params.friction_range
        for i in idx:
            rng = self.rngs[i]
            self.friction_mult[i] = rng.uniform(lo, hi)
            jitter = rng.normal(0.0, self.cfg.hand.pregrasp_jitter, NUM_JOINTS)
            q = np.clip(self.q_rest + jitter, self.kin.lower, self.kin.upper)
            self.q[i] = q
            self.q_target[i] = q
        idx = np.asarray(idx, dtype=np.int64)
        self.qdot[idx] = 0.0
        self.ema[idx] = 0.0
        self.tau[idx] = 0.0
        self.angle[idx] = 0.0
        self.rate[idx] = 0.0
        self.contact_prev[idx] = False
        self.first[idx] = True
        self.steps[idx] = 0
        self.done[idx] = False
        mask = np.zeros(self.n, bool)
        mask[idx] = True
        self.window.reset(mask)
        if self.cfg.lid.solid:
            self.q[idx], tips, sensors = self._block(self.q[idx], self.angle[idx])
            self.q_target[idx] = self.q[idx]
        else:
            tips, sensors, _ = self._fk(self.q[idx])
        self.tips[idx] = tips
        dist = self._distances(sensors, self.angle[idx])
        _, norm, quality, _ = self.kern.grade_contacts(dist, self.cfg.contact.eps)
        self._last_dist[idx] = dist
        self._last_norm[idx] = norm
        self._last_quality[idx] = quality
        if self.record:
            for i in idx:
                self.episode_ids[i] += 1
                self._live[i] = {
                    "header": self._trace_header(int(i)),
                    "steps": [],
                }

    def set_friction(self, multipliers):
        """Override the friction multiplier of the running episodes (one per env)."""
        mult = np.broadcast_to(np.asarray(multipliers, dtype=float), (self.n,))
        if not np.all(np.isfinite(mult)) or np.any(mult <= 0):
            raise ValueError("friction multipliers must be positive")
        self.friction_mult[:] = mult

    def reset(self):
        """Reset every environment; returns (obs, priv)."""
        self._reset_rows(range(self.n))
        obs = self._observe(np.arange(self.n))
        return obs, self._privileged(obs, np.arange(self.n))

    # ------------------------------------------------------------ mechanics
    def _fk(self, q):
        k = self.kin
        return self.kern.finger_forward(
            np.ascontiguousarray(q), k.base, k.azimuth, k.joint_start, k.joint_count, k.links, k.cap
        )

    def _block(self, q, angles, fallback=None):
        """Joints, tips and sensors after pushing caps out of the lid."""
        shape, radius, cap = self.cfg.lid.shape, self.cfg.lid.rim_radius, self.kin.cap_radius
        angles = np.asarray(angles, dtype=float)[:, None]

        def wall(tips):
            az = np.arctan2(tips[..., 1] - self.lid_center[1], tips[..., 0] - self.lid_center[0])
            return boundary_radius(shape, radius, az + angles) + cap

        return keep_outside(q, self.kin, wall, self.lid_center, fallback, backend=self.kern.name)

    def _distances(self, sensors, angles):
        frames = rotate_frames(self.frames.points, np.asarray(angles, dtype=float))
        m = sensors.shape[0]
        flat = sensors.reshape(m, NUM_FINGERS * self.k, 3)
        return self.kern.min_distances(flat, frames).reshape(m, NUM_FINGERS, self.k)

    def _noise(self, sigma, size):
        out = np.empty((self.n, size))
        for i, rng in enumerate(self.rngs):
            out[i] = rng.normal(0.0, sigma, size)
        return out

    def _observe(self, idx):
        """Observation rows for ``idx``; draws measurement noise for those rows."""
        rnd = self.cfg.randomization
        q = self.q[idx]
        qdot = self.qdot[idx]
        if rnd.enabled and rnd.joint_noise > 0:
            noise = np.empty((len(idx), 2 * NUM_JOINTS))
            for r, i in enumerate(idx):
                noise[r] = self.rngs[i].normal(0.0, rnd.joint_noise, 2 * NUM_JOINTS)
            q = q + noise[:, :NUM_JOINTS]
            qdot = qdot + noise[:, NUM_JOINTS:]
        z = enc.encode(self.window.data[idx].reshape(len(idx), -1), self.encoder)
        p = np.broadcast_to(self.lid_center, (len(idx), 3))
        obs = np.concatenate([q, qdot, self.q_target[idx], z, p], axis=1)
        return np.clip(obs, -self.clip_obs, self.clip_obs)

    def _privileged(self, obs, idx):
        m = self.frames.m
        phase = m * self.angle[idx]
        extra = np.concatenate(
            [
                np.sin(phase)[:, None],
                np.cos(phase)[:, None],
                self.rate[idx, None],
                self.friction_mult[idx, None],
                self._last_dist[idx].reshape(len(idx), -1),
                self._last_quality[idx],
            ],
            axis=1,
        )
        return np.concatenate([obs, extra], axis=1)

    def step(self, actions) -> StepResult:
        """Advance all environments one control step (``batch_step``)."""
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n, NUM_JOINTS):
            raise ValueError(f"expected actions of shape {(self.n, NUM_JOINTS)}, got {actions.shape}")
        if not np.all(np.isfinite(actions)):
            raise ValueError("actions contain non-finite values")
        if np.any(self.done):
            raise UsageError("step called on a finished episode; reset first")
        cfg = self.cfg
        rnd = cfg.randomization
        hp = self.hand_params
        dt = self.dt

        # 1. action noise
        noisy = actions
        if rnd.enabled and rnd.action_noise > 0:
            noisy = actions + self._noise(rnd.action_noise, NUM_JOINTS)
        # 2-3. EMA target update and joint tracking
        q_prev = self.q
        state = HandState(q=self.q, qdot=self.qdot, q_target=self.q_target, ema=self.ema, tau=self.tau)
        state = apply_action(state, noisy, hp, self.kin)
        state, dq = step_joints(state, dt, hp, self.kin)
        self.q, self.qdot, self.q_target, self.ema, self.tau = (
            state.q,
            state.qdot,
            state.q_target,
            state.ema,
            state.tau,
        )
        # 4. kinematics, with the side wall blocking the caps
        if cfg.lid.solid:
            q_free = self.q
            self.q, tips, sensors = self._block(q_free, self.angle, q_prev)
            dq = dq + (self.q - q_free)
            self.qdot = dq / dt
            self.tau = hp.kp * (self.q_target - self.q) - hp.kd * self.qdot
        else:
            tips, sensors, _ = self._fk(self.q)
        vel = (tips - self.tips) / dt
        self.tips = tips
        # 5. contacts
        dist = self._distances(sensors, self.angle)
        pen, norm, quality, contact = self.kern.grade_contacts(dist, cfg.contact.eps)
        if cfg.contact.literal_release:
            released = self.contact_prev.copy()
        else:
            released = self.contact_prev & ~contact
        released[self.first] = False
        self.contact_prev = contact
        self.first[:] = False
        # 6. virtual torque and lid
        wz = moment_arms(tips, vel, self.lid_center)
        torque = self.gain * np.sum(quality * wz, axis=1)
        friction = self.friction_mult * self.lid_params.friction_scale
        old_angle = self.angle
        self.angle, self.rate = self.kern.step_lid(
            self.angle,
            self.rate,
            torque,
            friction,
            np.full(self.n, self.lid_params.damping),
            np.full(self.n, self.lid_params.inertia),
            dt,
        )
        dq_lid = self.angle - old_angle
        # 7. rewards
        breakdown = rewards.evaluate(
            grasp_quality=quality,
            released=released,
            dq_lid=dq_lid,
            z_lid=np.broadcast_to(self.lid_axis, (self.n, 3)),
            z_ref=np.broadcast_to(self.z_ref, (self.n, 3)),
            action=actions,
            tau=self.tau,
            dq_joints=dq,
            velocities=vel,
            tips=tips,
            lid_center=np.broadcast_to(self.lid_center, (self.n, 3)),
            min_distances=dist.min(axis=2),
            weights=self.weights,
            reward_set=self.reward_set,
            per_joint_work=cfg.rewards.work_per_joint,
        )
        # 8. termination
        self.steps += 1
        far = dist.reshape(self.n, -1).max(axis=1) >= cfg.contact.rho
        timeout = self.steps >= self.max_steps
        done = far | timeout
        causes = ["fingertip_distance" if f else ("timeout" if t else "") for f, t in zip(far, timeout)]
        truncated = timeout & ~far
        # 9. observation
        self._last_dist = dist
        self._last_norm = norm
        self._last_quality = quality
        self.window.push(norm.reshape(self.n, -1))
        all_idx = np.arange(self.n)
        obs = self._observe(all_idx)
        priv = self._privileged(obs, all_idx)

        if self.record:
            self._record(actions, breakdown, contact, released, quality, dq_lid, causes)

        terminal_obs = obs.copy()
        terminal_priv = priv.copy()
        finished = np.flatnonzero(done)
        if finished.size:
            if self.record:
                for i in finished:
                    self.traces.append(self._live[i])
                    self._live[i] = None
            if self.autoreset:
                self._reset_rows(finished)
                obs[finished] = self._observe(finished)
                priv[finished] = self._privileged(obs[finished], finished)
            else:
                self.done[finished] = True
        return StepResult(
            obs=obs,
            priv=priv,
            reward=breakdown.r_final,
            breakdown=breakdown,
            done=done,
            cause=causes,
            truncated=truncated,
            terminal_obs=terminal_obs,
            terminal_priv=terminal_priv,
            info={"dq_lid": dq_lid, "angle": self.angle.copy(), "quality": quality, "contact": contact},
        )

    batch_step = step

    # -------------------------------------------------------------- tracing
    def _trace_header(self, i):
        return {
            "schema": TRACE_SCHEMA,
            "version": TRACE_VERSION,
            "env": i,
            "episode": int(self.episode_ids[i]),
            "shape": self.cfg.lid.shape,
            "reward_set": self.reward_set,
            "dt": self.dt,
            "friction": float(self.friction_mult[i]),
            "initial_angle": 0.0,
        }

    def _record(self, actions, b, contact, released, quality, dq_lid, causes):
        terms = b.as_dict()
        for i in range(self.n):
            live = self._live[i]
            if live is None:
                continue
            live["steps"].append(
                {
                    "t": int(self.steps[i]),
                    "angle": float(self.angle[i]),
                    "dq_lid": float(dq_lid[i]),
                    "rewards": {k: float(np.asarray(v)[i]) for k, v in terms.items()},
                    "contact": [bool(c) for c in contact[i]],
                    "released": [bool(c) for c in released[i]],
                    "quality": [float(g) for g in quality[i]],
                    "action": [float(a) for a in actions[i]],
                    "cause": causes[i],
                }
            )


class LidEnv:
    """Single environment; the same machinery as a one-row ``VecLidEnv``."""

    def __init__(self, cfg: RunConfig, seed: int | None = None, encoder_params=None, record=False, backend=None):
        seeds = None if seed is None else [seed]
        self.vec = VecLidEnv(
            cfg, num_envs=1, seeds=seeds, encoder_params=encoder_params, autoreset=False, record=record, backend=backend
        )

    def reset(self):
        obs, priv = self.vec.reset()
        return obs[0], priv[0]

    def step(self, action):
        res = self.vec.step(np.asarray(action, dtype=float)[None, :])
        return res.obs[0], res.priv[0], res.breakdown.row(0), bool(res.done[0]), res.cause[0]

    def check_termination(self, raw_distances, step_count):
        return check_termination(raw_distances, step_count, self.vec.cfg.contact.rho, self.vec.max_steps)


def check_termination(raw_distances, step_count, rho=0.06, max_steps=1000):
    """(done, cause) for one contact report and step counter."""
    if float(np.max(raw_distances)) >= rho:
        return True, "fingertip_distance"
    if step_count >= max_steps:
        return True, "timeout"
    return False, ""


def write_trace(trace, path):
    """Write one episode as line-delimited JSON: a header line, then one line per step."""
    with open(path, "w") as fh:
        fh.write(json.dumps(trace["header"], sort_keys=True) + "\n")
        for rec in trace["steps"]:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path):
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("schema") != TRACE_SCHEMA:
        raise ValueError(f"{path}: not a trace file")
    if lines[0].get("version") != TRACE_VERSION:
        raise ValueError(f"{path}: unsupported trace version {lines[0].get('version')}")
    return {"header": lines[0], "steps": lines[1:]}


def angle_sequence(trace):
    """Lid angles including the initial one, as used by the metrics."""
    start = trace["header"].get("initial_angle", 0.0)
    return np.array([start] + [s["angle"] for s in trace["steps"]])

