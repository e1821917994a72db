"""Run configuration: typed sections with INI-style (key = value) files.

Defaults reproduce the simulation and randomization tables of the method;
desk-scale choices (environment count, step budget, hand geometry) are
marked below.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields

from .geometry import ConfigError, SHAPE_SIDES
from .rewards import REWARD_SETS


@dataclass
class HandSection:
    profile: str = "desk-v1"
    eta: float = 0.75
    action_scale: float = 0.1
    action_clip: float = 1.0
    ema_beta: float = 0.8
    track_gain: float = 30.0
    rate_limit: float = 8.0
    kp: float = 2.0
    kd: float = 0.05
    base_radius: float = 0.012
    base_height: float = 0.03
    pregrasp_gap: float = 0.001
    pregrasp_jitter: float = 0.01


@dataclass
class LidSection:
    shape: str = "cylinder"
    rim_radius: float = 0.04
    friction_scale: float = 0.004
    torsional_damping: float = 3.0
    damping_scale: float = 0.001
    torsional_stiffness: float = 0.5
    inertia: float = 2e-4
    coupling_gain: float = 0.0  # 0 selects the calibrated gain
    nominal_speed: float = 0.1
    calibration_margin: float = 20.0
    solid: bool = False  # block fingertip caps at the side wall


@dataclass
class ContactSection:
    eps: float = 0.005
    rho: float = 0.06
    frames: int = 8
    sensors: int = 9
    cap_radius: float = 0.006
    cap_spread: float = 0.5
    literal_release: bool = False


@dataclass
class RewardsSection:
    set: str = "tac2motion"
    lambda_cpr: float = 8.0
    lambda_crr: float = 2.0
    lambda_rr: float = 850.0
    lambda_angle: float = 20.0
    lambda_action: float = 0.001
    lambda_work: float = 1.0
    lambda_gaiting: float = 8.0
    lambda_distance: float = 100.0
    work_per_joint: bool = True


@dataclass
class RandomizationSection:
    enabled: bool = True
    action_noise: float = 0.2
    joint_noise: float = 0.4
    friction_min: float = 0.9
    friction_max: float = 1.5


@dataclass
class PPOSection:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    epochs: int = 5
    minibatches: int = 4
    horizon: int = 32
    entropy_coef: float = 1e-3
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    kl_abort: float = 0.05
    hidden: tuple = (256, 256)
    init_log_std: float = -0.5
    normalize_obs: bool = True
    normalize_value: bool = True


@dataclass
class EncoderSection:
    mode: str = "pretrained"  # pretrained | passthrough
    path: str = ""
    window: int = 10
    d_z: int = 16
    hidden: tuple = (64, 64)
    pretrain_episodes: int = 192
    pretrain_steps: int = 400
    pretrain_epochs: int = 30
    seed: int = 0


@dataclass
class GaitSection:
    period: int = 60
    swing_fingers: int = 2
    stroke: float = 1.8  # rad of lid azimuth swept per stance
    lift: float = 0.012
    press_gap: float = 0.0005
    reverse: bool = False
    probe_stroke: float = 0.3  # slow, non-chasing stroke for encoder data


@dataclass
class RunSection:
    seed: int = 0
    num_envs: int = 64
    total_steps: int = 2_000_000
    out_dir: str = "runs/default"
    dt: float = 0.0166
    max_episode_length: int = 1000
    clip_observation: float = 10.0
    checkpoint_every: int = 0  # updates; 0 writes only the final checkpoint
    log_every: int = 1
    eval_episodes: int = 100


@dataclass
class RunConfig:
    hand: HandSection = field(default_factory=HandSection)
    lid: LidSection = field(default_factory=LidSection)
    contact: ContactSection = field(default_factory=ContactSection)
    rewards: RewardsSection = field(default_factory=RewardsSection)
    randomization: RandomizationSection = field(default_factory=RandomizationSection)
    ppo: PPOSection = field(default_factory=PPOSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    gait: GaitSection = field(default_factory=GaitSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self):
        if self.lid.shape not in SHAPE_SIDES:
            raise ConfigError(f"lid.shape: unknown shape {self.lid.shape!r}")
        if self.rewards.set not in REWARD_SETS:
            raise ConfigError(f"rewards.set: unknown reward set {self.rewards.set!r}")
        if self.encoder.mode not in ("pretrained", "passthrough"):
            raise ConfigError(f"encoder.mode: unknown mode {self.encoder.mode!r}")
        if self.contact.frames < 3:
            raise ConfigError("contact.frames: need at least 3 frames")
        if self.contact.eps <= 0 or self.contact.rho <= 0:
            raise ConfigError("contact.eps and contact.rho must be positive")
        if self.randomization.friction_min > self.randomization.friction_max:
            raise ConfigError("randomization.friction_min exceeds friction_max")
        if self.run.num_envs < 1:
            raise ConfigError("run.num_envs must be positive")
        for f in fields(RewardsSection):
            if f.name.startswith("lambda_") and not getattr(self.rewards, f.name) > 0:
                raise ConfigError(f"rewards.{f.name} must be strictly positive")
        return self

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for sec in fields(self):
            section = getattr(self, sec.name)
            parser[sec.name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]

    def with_overrides(self, overrides) -> "RunConfig":
        cfg = dataclasses.replace(self, **{f.name: dataclasses.replace(getattr(self, f.name)) for f in fields(self)})
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not section.key=value")
            key, value = item.split("=", 1)
            _assign(cfg, key.strip(), value.strip())
        return cfg.validate()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else int
            return tuple(kind(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def _assign(cfg: RunConfig, dotted: str, raw: str):
    if "." not in dotted:
        raise ConfigError(f"{dotted}: keys must be section.key")
    sec_name, key = dotted.split(".", 1)
    section = getattr(cfg, sec_name, None) if sec_name in {f.name for f in fields(cfg)} else None
    if section is None:
        raise ConfigError(f"{dotted}: unknown section {sec_name!r}")
    names = {f.name for f in fields(section)}
    if key not in names:
        raise ConfigError(f"{dotted}: unknown key")
    setattr(section, key, _parse(raw, getattr(type(section)(), key), dotted))


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    cfg = base or RunConfig()
    cfg = cfg.with_overrides([])
    for sec in parser.sections():
        for key, value in parser[sec].items():
            _assign(cfg, f"{sec}.{key}", value)
    return cfg.validate()


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path) as fh:
            cfg = from_ini(fh.read(), cfg)
    return cfg.with_overrides(list(overrides))
