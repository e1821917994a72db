"""Contact-aware reward and penalty terms and their weighted composition.

Every term accepts arrays with an optional leading batch axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .geometry import ConfigError

REWARD_SETS = ("tac2motion", "baseline", "cpr_rr", "crr_rr")
COMPONENTS = ("cpr", "crr", "rr", "angle", "action", "work", "gaiting")


@dataclass(frozen=True)
class RewardWeights:
    cpr: float = 8.0
    crr: float = 2.0
    rr: float = 850.0
    angle: float = 20.0
    action: float = 0.001
    work: float = 1.0
    gaiting: float = 8.0
    # fingertip-distance weight of the baseline stand-in, per metre
    distance: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"reward weight {f.name} must be strictly positive")


@dataclass
class RewardBreakdown:
    r_cpr: np.ndarray | float
    r_crr: np.ndarray | float
    r_rr: np.ndarray | float
    r_angle: np.ndarray | float
    r_action: np.ndarray | float
    r_work: np.ndarray | float
    r_gaiting: np.ndarray | float
    dq_lid: np.ndarray | float = 0.0
    r_dist: np.ndarray | float = 0.0
    r_composed: np.ndarray | float = 0.0
    r_final: np.ndarray | float = 0.0

    def as_dict(self):
        return {k: v for k, v in asdict(self).items()}

    def row(self, i):
        """Scalar breakdown of batch entry ``i``."""
        return RewardBreakdown(**{k: float(np.asarray(v)[i]) for k, v in asdict(self).items()})


def contact_pressure_reward(grasp_quality):
    return np.sum(grasp_quality, axis=-1)


def contact_release_reward(released):
    return np.sum(np.asarray(released, dtype=float), axis=-1)


def rotation_reward(grasp_quality, dq_lid):
    return np.sum(grasp_quality, axis=-1) * dq_lid


def angle_penalty(z_lid, z_ref):
    z_lid = np.asarray(z_lid, dtype=float)
    z_ref = np.asarray(z_ref, dtype=float)
    n1 = np.linalg.norm(z_lid, axis=-1)
    n2 = np.linalg.norm(z_ref, axis=-1)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ConfigError("axis vectors must be non-zero")
    cos = np.sum(z_lid * z_ref, axis=-1) / (n1 * n2)
    return -np.arccos(np.clip(cos, -1.0, 1.0))


def action_penalty(action):
    a = np.asarray(action, dtype=float)
    return -np.sum(a * a, axis=-1)


def work_penalty(tau, dq, per_joint: bool = True):
    """Negative absolute mechanical work; ``per_joint=False`` uses |tau . dq|."""
    prod = np.asarray(tau, dtype=float) * np.asarray(dq, dtype=float)
    if per_joint:
        return -np.sum(np.abs(prod), axis=-1)
    return -np.abs(np.sum(prod, axis=-1))


def gaiting_penalty(grasp_quality, velocities, tips, lid_center):
    """sum_i sign(w_i^z) G_i with w_i = v_i x (tip_i - center)."""
    p = np.asarray(tips) - np.asarray(lid_center)[..., None, :]
    v = np.asarray(velocities)
    wz = v[..., 0] * p[..., 1] - v[..., 1] * p[..., 0]
    return np.sum(np.sign(wz) * np.asarray(grasp_quality), axis=-1)


def baseline_distance_reward(min_distances):
    """Negative mean over fingers of the closest sensor-to-guide distance."""
    return -np.mean(np.asarray(min_distances), axis=-1)


def compose(b: RewardBreakdown, w: RewardWeights, reward_set: str = "tac2motion"):
    """Fill ``r_composed`` and ``r_final`` of ``b`` for the chosen reward set."""
    if reward_set not in REWARD_SETS:
        raise ConfigError(f"unknown reward set {reward_set!r}")
    penalties = w.angle * b.r_angle + w.action * b.r_action + w.work * b.r_work
    if reward_set == "baseline":
        # stand-in: fingertip distance plus plain lid rotation; the gaiting
        # term is specific to the contact-aware method
        composed = w.distance * b.r_dist + w.rr * b.dq_lid
        final = composed + penalties
    else:
        if reward_set == "tac2motion":
            composed = w.cpr * b.r_cpr + w.crr * b.r_crr + w.rr * b.r_rr
        elif reward_set == "cpr_rr":
            composed = w.cpr * b.r_cpr + w.rr * b.r_rr
        else:
            composed = w.crr * b.r_crr + w.rr * b.r_rr
        final = composed + penalties + w.gaiting * b.r_gaiting
    b.r_composed = composed
    b.r_final = final
    return final


def evaluate(
    grasp_quality,
    released,
    dq_lid,
    z_lid,
    z_ref,
    action,
    tau,
    dq_joints,
    velocities,
    tips,
    lid_center,
    min_distances,
    weights: RewardWeights,
    reward_set: str = "tac2motion",
    per_joint_work: bool = True,
) -> RewardBreakdown:
    b = RewardBreakdown(
        r_cpr=contact_pressure_reward(grasp_quality),
        r_crr=contact_release_reward(released),
        r_rr=rotation_reward(grasp_quality, dq_lid),
        r_angle=angle_penalty(z_lid, z_ref),
        r_action=action_penalty(action),
        r_work=work_penalty(tau, dq_joints, per_joint_work),
        r_gaiting=gaiting_penalty(grasp_quality, velocities, tips, lid_center),
        dq_lid=dq_lid,
        r_dist=baseline_distance_reward(min_distances),
    )
    compose(b, weights, reward_set)
    return b
