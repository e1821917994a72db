"""Hand-coded finger gaiting controller.

Each finger cycles through swing (lift, return, press) and stance (sweep in
the opening direction). The regrasp target is whichever guide frame will sit
closest to the start of the stroke when the stance begins, so the gait stays
locked to the lid while it turns. Desired joint angles come from analytic
IK and are converted into the relative action that the EMA filter turns
into exactly that target when unsaturated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import NUM_FINGERS
from .hand import NUM_JOINTS, finger_ik


@dataclass(frozen=True)
class GaitSchedule:
    phase_offsets: tuple  # fraction of the period, one per finger
    stroke: float = 1.8  # rad of azimuth swept per stance
    lift: float = 0.012  # m, radial clearance during swing
    press_gap: float = 0.0005  # m, pad clearance during stance
    period: int = 60  # steps
    swing_fraction: float = 0.4
    direction: float = 1.0  # +1 opens the lid, -1 turns it the other way
    chase: bool = True  # stance pads follow a lid that runs ahead of the stroke

    def __post_init__(self):
        if len(self.phase_offsets) != NUM_FINGERS:
            raise ValueError("need one phase offset per finger")
        if self.period < 4:
            raise ValueError("period too short")
        steps = {round((o % 1.0) * self.period) % self.period for o in self.phase_offsets}
        if len(steps) != NUM_FINGERS:
            raise ValueError("phase offsets must be distinct modulo the period")

    @property
    def stance_steps(self):
        return self.period * (1.0 - self.swing_fraction)


def default_schedule(period=60, swing_fingers=2, stroke=1.8, lift=0.012, press_gap=0.0005, reverse=False):
    """Evenly staggered gait with ``swing_fingers`` fingers in swing at any time."""
    # neighbours two apart so adjacent fingers do not swing together
    order = [0, 2, 4, 1, 3]
    offsets = [0.0] * NUM_FINGERS
    for slot, f in enumerate(order):
        offsets[f] = slot / NUM_FINGERS
    return GaitSchedule(
        phase_offsets=tuple(offsets),
        stroke=stroke,
        lift=lift,
        press_gap=press_gap,
        period=period,
        swing_fraction=swing_fingers / NUM_FINGERS,
        direction=-1.0 if reverse else 1.0,
    )


def probe_schedule(cfg):
    """Slow gait without chasing; the lid then sticks or slips depending on friction."""
    g = cfg.gait
    base = default_schedule(g.period, g.swing_fingers, g.probe_stroke, g.lift, g.press_gap, g.reverse)
    return replace(base, chase=False)


def _wrap(a):
    return np.angle(np.exp(1j * np.asarray(a)))


class GaitController:
    """Scripted policy for one environment configuration."""

    def __init__(self, kin, frames, hand_params, schedule: GaitSchedule, dt: float, rest_q):
        self.kin = kin
        self.frames = frames
        self.hp = hand_params
        self.schedule = schedule
        self.dt = dt
        self.cap = kin.cap_radius
        from .hand import forward_kinematics

        self._fk = forward_kinematics
        tips, _ = forward_kinematics(rest_q, kin)
        self.home = np.arctan2(tips[:, 1], tips[:, 0])
        self.frame_az = frames.azimuths()
        self.frame_r = frames.radii()
        self.follow = 0.05  # rad the pad trails its frame when chasing

    def _phase(self, f, t):
        s = self.schedule
        return ((t / s.period) + s.phase_offsets[f]) % 1.0

    def _regrasp(self, f, lid, steps_ahead):
        """Azimuth and radius of the frame to grab when stance starts."""
        s = self.schedule
        start = self.home[f] + s.direction * s.stroke / 2.0
        # lid angle grows clockwise, so frames move to smaller azimuths
        ahead = lid.angle + lid.rate * steps_ahead * self.dt
        az = self.frame_az - ahead
        j = int(np.argmin(np.abs(_wrap(az - start))))
        return start + _wrap(az[j] - start), self.frame_r[j], self.frame_az[j]

    def desired_q(self, state, lid, t):
        s = self.schedule
        cmd_tips, _ = self._fk(state.q_target, self.kin)
        q_des = state.q_target.copy()
        swing = s.swing_fraction
        for f in range(NUM_FINGERS):
            u = self._phase(f, t)
            cur = cmd_tips[f]
            cur_az = np.arctan2(cur[1], cur[0])
            if u >= swing:
                # stance: keep pressing the grabbed frame and sweep
                step = s.stroke / (s.stance_steps)
                az = cur_az - s.direction * step
                rel = _wrap(self.frame_az - lid.angle - cur_az)
                j = int(np.argmin(np.abs(rel)))
                # a lid that runs ahead would leave the pad behind; chase its frame
                chase = cur_az + rel[j] + s.direction * self.follow
                if s.chase and s.direction * (chase - az) < 0:
                    az = chase
                radius = self.frame_r[j] + self.cap + s.press_gap
            else:
                to_stance = (swing - u) * s.period
                az, r_frame, _ = self._regrasp(f, lid, to_stance)
                if u < 0.25 * swing:
                    az = cur_az
                    radius = r_frame + self.cap + s.lift
                elif u < 0.75 * swing:
                    radius = r_frame + self.cap + s.lift
                else:
                    radius = r_frame + self.cap + s.press_gap
            target = np.array([radius * np.cos(az), radius * np.sin(az), 0.0])
            q_des[self.kin.finger_slice(f)] = finger_ik(self.kin, f, target)
        return q_des

    def action(self, state, lid, t):
        """Relative action whose EMA output moves the target to the desired pose."""
        hp = self.hp
        q_des = self.desired_q(state, lid, t)
        wanted = (q_des - state.q_target) / (hp.eta * hp.action_scale)
        a = (wanted - hp.ema_beta * state.ema) / (1.0 - hp.ema_beta)
        return np.clip(a, -hp.action_clip, hp.action_clip)


def gait_action(state, lid, schedule, t, env, i=0):
    """Scripted action for environment ``i`` of ``env`` at step ``t``."""
    ctrl = controller_for(env, schedule)
    return ctrl.action(state, lid, t)


def controller_for(env, schedule=None):
    cfg = env.cfg
    if schedule is None:
        g = cfg.gait
        schedule = default_schedule(g.period, g.swing_fingers, g.stroke, g.lift, g.press_gap, g.reverse)
    return GaitController(env.kin, env.frames, env.hand_params, schedule, env.dt, env.q_rest)


class ScriptedPolicy:
    """Batched wrapper: one gait clock per environment, reset with the episode."""

    def __init__(self, env, schedule=None):
        self.env = env
        self.ctrl = controller_for(env, schedule)

    def __call__(self, obs=None, priv=None):
        env = self.env
        out = np.zeros((env.n, NUM_JOINTS))
        for i in range(env.n):
            out[i] = self.ctrl.action(env.hand_state(i), env.lid_state(i), int(env.steps[i]))
        return out


def friction_dataset(cfg, episodes, steps, frictions=None, seed=0, warmup=None, schedule=None):
    """Tactile windows and friction labels from scripted rollouts.

    Frictions default to an even sweep of the configured range, one per
    episode, and the gait defaults to ``probe_schedule``. Windows from the first ``warmup`` steps (default: the window
    length) are dropped because they still hold the zero pre-fill.
    """
    from .env import VecLidEnv

    lo, hi = cfg.randomization.friction_min, cfg.randomization.friction_max
    if frictions is None:
        frictions = np.linspace(lo, hi, episodes) if episodes > 1 else np.array([0.5 * (lo + hi)])
    frictions = np.asarray(frictions, dtype=float)
    if frictions.shape != (episodes,):
        raise ValueError("need one friction per episode")
    warmup = cfg.encoder.window if warmup is None else warmup
    seeds = np.random.SeedSequence(seed).generate_state(episodes)
    # finished rows auto-reset but are no longer sampled
    env = VecLidEnv(cfg, num_envs=episodes, seeds=[int(s) for s in seeds], autoreset=True)
    env.reset()
    env.set_friction(frictions)
    policy = ScriptedPolicy(env, probe_schedule(cfg) if schedule is None else schedule)
    windows, labels = [], []
    alive = np.ones(episodes, bool)
    for t in range(steps):
        res = env.step(policy())
        # a finished row has already been reset, so its window is empty
        alive &= ~res.done
        if not alive.any():
            break
        if t + 1 >= warmup:
            rows = np.flatnonzero(alive)
            windows.append(env.window.data[rows].reshape(len(rows), -1).copy())
            labels.append(frictions[rows])
    if not windows:
        return np.zeros((0, env.window.data[0].size)), np.zeros(0)
    return np.concatenate(windows), np.concatenate(labels)


def pretrain_encoder(cfg, seed=None):
    """Generate the friction dataset described by ``cfg.encoder`` and fit the encoder."""
    from . import encoder as enc

    e = cfg.encoder
    seed = e.seed if seed is None else seed
    windows, frictions = friction_dataset(cfg, e.pretrain_episodes, e.pretrain_steps, seed=seed)
    return enc.pretrain(
        windows,
        frictions,
        window=e.window,
        k=cfg.contact.sensors,
        fingers=NUM_FINGERS,
        d_z=e.d_z,
        hidden=e.hidden,
        epochs=e.pretrain_epochs,
        seed=seed,
    )
