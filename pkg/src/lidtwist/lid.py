"""Single rotational degree of freedom of the lid under virtual torque.

Torque from tactile contact is resisted by Coulomb torsional friction with a
stick phase and by viscous damping. The table values for friction and
damping are dimensionless multipliers of ``friction_scale`` and
``damping_scale``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels


@dataclass(frozen=True)
class LidParams:
    friction_scale: float = 0.004  # N m per unit friction multiplier
    friction_range: tuple = (0.9, 1.5)
    torsional_damping: float = 3.0
    damping_scale: float = 0.001  # N m s / rad per unit damping
    torsional_stiffness: float = 0.5  # kept for reference, not applied
    inertia: float = 2e-4  # kg m^2
    coupling_gain: float | None = None  # None: calibrate at build time
    nominal_speed: float = 0.1  # m/s, tangential fingertip speed used for calibration
    calibration_margin: float = 20.0

    @property
    def damping(self):
        return self.torsional_damping * self.damping_scale


@dataclass
class LidState:
    angle: float = 0.0
    rate: float = 0.0
    axis: np.ndarray = None
    center: np.ndarray = None
    friction: float = 0.0  # N m breakaway torque
    damping: float = 0.0
    inertia: float = 2e-4

    def __post_init__(self):
        self.axis = np.array([0.0, 0.0, 1.0]) if self.axis is None else np.asarray(self.axis, float)
        self.center = np.zeros(3) if self.center is None else np.asarray(self.center, float)
        norm = np.linalg.norm(self.axis)
        if norm == 0.0:
            raise ValueError("lid axis must be non-zero")
        self.axis = self.axis / norm


def new_lid(params: LidParams, friction_multiplier: float) -> LidState:
    return LidState(
        friction=friction_multiplier * params.friction_scale,
        damping=params.damping,
        inertia=params.inertia,
    )


def calibrate_coupling_gain(
    friction_max: float,
    k: int,
    rim_radius: float,
    nominal_speed: float,
    margin: float = 20.0,
    fingers: int = 5,
) -> float:
    """Gain that lets every finger at half grasp quality break the lid loose.

    With all fingers at ``G = k/2`` moving tangentially at ``nominal_speed``
    on the rim, the moment arm term is ``nominal_speed * rim_radius`` each,
    and the resulting torque is ``margin`` times the largest breakaway torque.
    """
    drive = fingers * (k / 2.0) * nominal_speed * rim_radius
    return margin * friction_max / drive


def moment_arms(tips, velocities, center) -> np.ndarray:
    """z-component of v_i x (tip_i - center) for each fingertip."""
    p = np.asarray(tips) - np.asarray(center)
    v = np.asarray(velocities)
    return v[..., 0] * p[..., 1] - v[..., 1] * p[..., 0]


def virtual_torque(grasp_quality, tips, velocities, center, gain: float):
    """Torque on the lid from contacting fingertips sweeping around it."""
    wz = moment_arms(tips, velocities, center)
    return gain * np.sum(np.asarray(grasp_quality) * wz, axis=-1)


def step_lid(lid: LidState, torque: float, dt: float) -> LidState:
    """Advance one step with stick-slip friction; see ``kernels.step_lid``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    angle, rate = kernels.step_lid(
        np.array([lid.angle]),
        np.array([lid.rate]),
        np.array([float(torque)]),
        np.array([lid.friction]),
        np.array([lid.damping]),
        np.array([lid.inertia]),
        dt,
    )
    return replace(lid, angle=float(angle[0]), rate=float(rate[0]))
