import pytest

from lidtwist.config import RunConfig, from_ini, load_config
from lidtwist.geometry import ConfigError


def test_reward_weight_defaults():
    r = RunConfig().rewards
    assert (r.lambda_cpr, r.lambda_crr, r.lambda_rr, r.lambda_angle, r.lambda_action, r.lambda_work, r.lambda_gaiting) == (
        8.0, 2.0, 850.0, 20.0, 0.001, 1.0, 8.0,
    )


def test_simulation_defaults():
    cfg = RunConfig()
    assert cfg.hand.eta == 0.75 and cfg.hand.action_scale == 0.1
    assert cfg.randomization.action_noise == 0.2 and cfg.randomization.joint_noise == 0.4
    assert (cfg.randomization.friction_min, cfg.randomization.friction_max) == (0.9, 1.5)
    assert cfg.contact.eps == 0.005 and cfg.contact.rho == 0.06
    assert cfg.run.dt == 0.0166 and cfg.run.max_episode_length == 1000
    assert cfg.run.num_envs == 64 and cfg.run.total_steps == 2_000_000


def test_ini_round_trip():
    cfg = load_config(overrides=["ppo.hidden=32,16", "rewards.set=baseline", "randomization.enabled=false"])
    again = from_ini(cfg.to_ini())
    assert again == cfg
    assert again.to_ini() == cfg.to_ini()
    assert again.ppo.hidden == (32, 16)


def test_file_and_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[lid]\nshape = hexagon\n[run]\nseed = 9\n")
    cfg = load_config(path, ["run.seed=3"])
    assert cfg.lid.shape == "hexagon" and cfg.run.seed == 3


@pytest.mark.parametrize(
    "item",
    ["lid.colour=red", "nosuch.key=1", "lid.shape=octagon", "rewards.set=fancy", "rewards.lambda_rr=0", "run.seed=abc", "plain"],
)
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        load_config(overrides=[item])


def test_unknown_key_in_file():
    with pytest.raises(ConfigError, match="lid.colour"):
        from_ini("[lid]\ncolour = red\n")


def test_digest_tracks_content():
    a = RunConfig()
    assert a.digest() == RunConfig().digest()
    assert a.digest() != a.with_overrides(["run.seed=1"]).digest()
