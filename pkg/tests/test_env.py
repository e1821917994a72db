import numpy as np
import pytest

from lidtwist import encoder as enc
from lidtwist.env import LidEnv, UsageError, VecLidEnv, angle_sequence, check_termination, read_trace, write_trace
from lidtwist.hand import NUM_JOINTS


def test_dimensions(cfg):
    env = VecLidEnv(cfg, num_envs=3)
    obs, priv = env.reset()
    d_z = env.encoder.d_z
    assert obs.shape == (3, 69 + d_z) and env.obs_dim == 69 + d_z
    assert priv.shape == (3, env.priv_dim)
    assert env.priv_dim == env.obs_dim + 4 + 5 * 9 + 5
    assert np.array_equal(priv[:, : env.obs_dim], obs)


def test_pretrained_encoder_sets_latent_width(cfg):
    p = enc.init_params(window=cfg.encoder.window, d_z=7, hidden=(8,))
    env = VecLidEnv(cfg, num_envs=1, encoder_params=p)
    assert env.reset()[0].shape == (1, 69 + 7)
    with pytest.raises(ValueError):
        VecLidEnv(cfg, num_envs=1, encoder_params=enc.init_params(k=4, hidden=(8,)))


def _rollout(cfg, steps=40):
    env = VecLidEnv(cfg, num_envs=2, seeds=[1, 2])
    env.reset()
    rng = np.random.default_rng(0)
    out = []
    for _ in range(steps):
        r = env.step(rng.uniform(-1, 1, (2, NUM_JOINTS)))
        out.append(np.concatenate([r.obs.ravel(), r.priv.ravel(), r.reward]))
    return np.array(out)


def test_seeded_rollouts_repeat(cfg):
    assert np.array_equal(_rollout(cfg), _rollout(cfg))


def test_rejects_bad_actions(cfg):
    env = VecLidEnv(cfg, num_envs=2)
    env.reset()
    with pytest.raises(ValueError):
        env.step(np.zeros((2, 21)))
    bad = np.zeros((2, NUM_JOINTS))
    bad[1, 0] = np.inf
    with pytest.raises(ValueError):
        env.step(bad)


def test_stepping_finished_episode_raises(cfg):
    env = LidEnv(cfg.with_overrides(["run.max_episode_length=3"]), seed=0)
    env.reset()
    for _ in range(3):
        *_, done, cause = env.step(np.zeros(NUM_JOINTS))
    assert done and cause == "timeout"
    with pytest.raises(UsageError):
        env.step(np.zeros(NUM_JOINTS))
    env.reset()
    env.step(np.zeros(NUM_JOINTS))


def test_autoreset_flags_truncation(cfg):
    env = VecLidEnv(cfg.with_overrides(["run.max_episode_length=2"]), num_envs=2)
    env.reset()
    env.step(np.zeros((2, NUM_JOINTS)))
    r = env.step(np.zeros((2, NUM_JOINTS)))
    assert r.done.all() and r.truncated.all()
    assert np.all(env.steps == 0)


def test_hand_pulled_away_terminates(quiet_cfg):
    env = VecLidEnv(quiet_cfg, num_envs=1, autoreset=False)
    env.reset()
    for t in range(400):
        r = env.step(-np.ones((1, NUM_JOINTS)))
        if r.done[0]:
            break
    assert r.cause[0] == "fingertip_distance" and not r.truncated[0]
    assert env._last_dist.max() >= quiet_cfg.contact.rho


@pytest.mark.parametrize(
    "dist,step,expected",
    [(0.0599, 999, (False, "")), (0.06, 0, (True, "fingertip_distance")), (0.01, 1000, (True, "timeout"))],
)
def test_termination_boundaries(dist, step, expected):
    raw = np.full((5, 9), 0.001)
    raw[2, 4] = dist
    assert check_termination(raw, step) == expected


def test_trace_round_trip(cfg, tmp_path):
    env = VecLidEnv(cfg.with_overrides(["run.max_episode_length=5"]), num_envs=1, record=True)
    env.reset()
    for _ in range(5):
        env.step(np.zeros((1, NUM_JOINTS)))
    (trace,) = env.traces
    assert len(trace["steps"]) == 5 and trace["header"]["shape"] == "cylinder"
    write_trace(trace, tmp_path / "t.jsonl")
    back = read_trace(tmp_path / "t.jsonl")
    assert back == trace
    assert np.array_equal(angle_sequence(back)[1:], [s["angle"] for s in trace["steps"]])
    (tmp_path / "bad.jsonl").write_text('{"schema": "other"}\n')
    with pytest.raises(ValueError):
        read_trace(tmp_path / "bad.jsonl")


def test_friction_randomized_within_range(cfg):
    env = VecLidEnv(cfg, num_envs=50)
    env.reset()
    assert env.friction_mult.min() >= 0.9 and env.friction_mult.max() <= 1.5
    assert env.friction_mult.std() > 0.05


@pytest.mark.parametrize("shape", ["cylinder", "square"])
def test_solid_lid_keeps_caps_outside(cfg, shape):
    from lidtwist.geometry import boundary_radius

    cfg = cfg.with_overrides(["lid.solid=true", f"lid.shape={shape}"])
    env = VecLidEnv(cfg, num_envs=4, seeds=[0, 1, 2, 3])
    env.reset()
    rng = np.random.default_rng(3)
    # a steady squeeze towards the lid plus noise
    bias = np.where(np.arange(NUM_JOINTS) % 4 == 0, 0.0, 0.6)
    worst = np.inf
    for _ in range(150):
        env.step(np.clip(bias + rng.normal(0, 0.5, (4, NUM_JOINTS)), -1, 1))
        az = np.arctan2(env.tips[..., 1], env.tips[..., 0])
        wall = boundary_radius(shape, cfg.lid.rim_radius, az + env.angle[:, None]) + env.kin.cap_radius
        worst = min(worst, float(np.min(np.hypot(env.tips[..., 0], env.tips[..., 1]) - wall)))
    # a turning polygon can sweep into a finger pinned at a joint limit;
    # what remains is sub-millimetre
    assert worst > (-1e-6 if shape == "cylinder" else -1e-3)
