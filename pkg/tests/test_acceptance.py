"""Release acceptance suite.

One test per criterion; the pytest summary prints a PASS/FAIL line for each.
Criteria 9 and 11 train full desk-scale policies (about an hour on one CPU)
and carry the ``slow`` marker.
"""

import math
import time

import numpy as np
import pytest
import torch

import oracles
from lidtwist import encoder as enc
from lidtwist import metrics, ppo, rewards, runner
from lidtwist.config import RunConfig
from lidtwist.env import VecLidEnv, check_termination
from lidtwist.geometry import nearest_distance
from lidtwist.lid import LidParams, LidState, new_lid, step_lid
from lidtwist.scripted import ScriptedPolicy, friction_dataset, pretrain_encoder

TWO_PI = 2 * math.pi


def detail(request, text):
    request.node.user_properties.append(("detail", text))


def rel_close(a, b, tol=1e-12):
    return abs(a - b) <= tol * abs(b) if b != 0 else a == 0


# ------------------------------------------------------------------ 1
@pytest.mark.acceptance(1, "geometry oracle")
def test_geometry_oracle(request):
    rng = np.random.default_rng(1)
    cases = []
    for _ in range(1000):
        m = int(rng.integers(1, 33))
        frames = rng.uniform(-0.1, 0.1, (m, 3))
        q = rng.uniform(-0.1, 0.1, 3)
        cases.append((q, frames))
    t0 = time.perf_counter()
    got = [nearest_distance(q, f) for q, f in cases]
    elapsed = time.perf_counter() - t0
    want = [oracles.nearest_distance([q], f)[0] for q, f in cases]
    mismatches = sum(g != w for g, w in zip(got, want))
    detail(request, f"{mismatches} mismatches in 1000, {elapsed:.3f} s")
    assert mismatches == 0
    assert elapsed < 1.0


# ------------------------------------------------------------------ 2
def _reward_inputs(rng, n):
    quality = rng.uniform(0, 9, (n, 5)) * (rng.random((n, 5)) < 0.7)
    z_lid = rng.normal(size=(n, 3))
    z_lid[:, 2] += 3.0
    return dict(
        grasp_quality=quality,
        released=rng.random((n, 5)) < 0.3,
        dq_lid=rng.normal(0, 0.02, n),
        z_lid=z_lid,
        z_ref=np.tile([0.0, 0.0, 1.0], (n, 1)),
        action=rng.uniform(-1, 1, (n, 22)),
        tau=rng.normal(0, 1, (n, 22)),
        dq_joints=rng.normal(0, 0.1, (n, 22)),
        velocities=rng.normal(0, 0.2, (n, 5, 3)),
        tips=rng.uniform(-0.06, 0.06, (n, 5, 3)),
        lid_center=rng.normal(0, 0.005, (n, 3)),
        min_distances=rng.uniform(0, 0.05, (n, 5)),
    )


@pytest.mark.acceptance(2, "reward formula oracles")
def test_reward_oracles(request):
    n = 1000
    rng = np.random.default_rng(2)
    x = _reward_inputs(rng, n)
    w = rewards.RewardWeights()
    assert (w.cpr, w.crr, w.rr, w.angle, w.action, w.work, w.gaiting) == (8.0, 2.0, 850.0, 20.0, 0.001, 1.0, 8.0)
    t0 = time.perf_counter()
    b = rewards.evaluate(**x, weights=w)
    bad = 0
    for i in range(n):
        q = list(x["grasp_quality"][i])
        expect = {
            "r_cpr": oracles.r_cpr(q),
            "r_crr": oracles.r_crr(x["released"][i]),
            "r_rr": oracles.r_rr(q, x["dq_lid"][i]),
            "r_angle": oracles.r_angle(x["z_lid"][i], x["z_ref"][i]),
            "r_action": oracles.r_action(x["action"][i]),
            "r_work": oracles.r_work(x["tau"][i], x["dq_joints"][i]),
            "r_gaiting": oracles.r_gaiting(q, x["velocities"][i], x["tips"][i], x["lid_center"][i]),
        }
        for k, v in expect.items():
            bad += not rel_close(float(b.__dict__[k][i]), v)
        weighted = [
            8.0 * expect["r_cpr"], 2.0 * expect["r_crr"], 850.0 * expect["r_rr"], 20.0 * expect["r_angle"],
            0.001 * expect["r_action"], 1.0 * expect["r_work"], 8.0 * expect["r_gaiting"],
        ]
        # terms of both signs cancel, so the tolerance is relative to their magnitude
        scale = sum(abs(v) for v in weighted)
        bad += not math.isclose(float(b.r_final[i]), sum(weighted), rel_tol=1e-12, abs_tol=1e-12 * scale)
        recomposed = rewards.compose(b.row(i), w, "tac2motion")
        bad += not math.isclose(recomposed, float(b.r_final[i]), rel_tol=1e-12, abs_tol=1e-12 * scale)
    elapsed = time.perf_counter() - t0
    detail(request, f"{bad} disagreements over 7 terms + composition x 1000, {elapsed:.2f} s")
    assert bad == 0
    assert elapsed < 5.0


# ------------------------------------------------------------------ 3
@pytest.mark.acceptance(3, "termination exactness")
def test_termination_exactness(request):
    rng = np.random.default_rng(3)
    rho = 0.06
    edge = [rho, np.nextafter(rho, 0), np.nextafter(rho, 1)]
    disagreements = 0
    fired = 0
    for _ in range(10_000):
        d = rng.uniform(0, 0.055, (5, 9))
        if rng.random() < 0.5:
            d[rng.integers(5), rng.integers(9)] = edge[rng.integers(3)] if rng.random() < 0.5 else rng.uniform(0.055, 0.07)
        step = int(rng.choice([999, 1000, 1001])) if rng.random() < 0.3 else int(rng.integers(0, 1200))
        done, _ = check_termination(d, step, rho, 1000)
        fired += done
        disagreements += done != oracles.termination(d.tolist(), step, rho, 1000)
    detail(request, f"{disagreements} disagreements over 10000 reports ({fired} terminations)")
    assert disagreements == 0


# ------------------------------------------------------------------ 4
@pytest.mark.acceptance(4, "lid dynamics properties")
def test_lid_properties(request):
    t0 = time.perf_counter()
    dt = 0.0166
    violations = 0
    for mult in (0.9, 1.5):
        lid = new_lid(LidParams(), mult)
        f = lid.friction
        for sign in (1, -1):
            stay = step_lid(lid, sign * 0.99 * f, dt)
            move = step_lid(lid, sign * 1.01 * f, dt)
            violations += stay.rate != 0.0 or stay.angle != 0.0
            violations += not sign * move.rate > 0.0
    rng = np.random.default_rng(4)
    p = LidParams()
    for _ in range(10_000):
        f = rng.uniform(0.9, 1.5) * p.friction_scale
        if rng.random() < 0.5:
            # from rest, torque below breakaway
            tau = rng.uniform(-1, 1) * f
            out = step_lid(LidState(angle=0.3, rate=0.0, friction=f, damping=p.damping, inertia=p.inertia), tau, dt)
            violations += out.rate != 0.0 or out.angle != 0.3
        else:
            # free decay never flips direction or speeds up
            rate = rng.normal(0, 5.0)
            out = step_lid(LidState(rate=rate, friction=f, damping=p.damping, inertia=p.inertia), 0.0, dt)
            violations += out.rate * rate < 0 or abs(out.rate) > abs(rate)
    elapsed = time.perf_counter() - t0
    detail(request, f"{violations} violations, {elapsed:.2f} s")
    assert violations == 0
    assert elapsed < 5.0


# ------------------------------------------------------------------ 5
@pytest.mark.acceptance(5, "metric consistency")
def test_metric_consistency(request):
    dt = 0.0166
    worst = 0.0
    for rate in np.geomspace(0.005, 0.5, 25):
        tr = oracles.constant_rate_trace(float(rate), 3000, dt)
        worst = max(worst, abs(metrics.rotation_time(tr, dt) * metrics.rotation_score(tr) - TWO_PI * dt))
    wrong = 0
    for shape, limit in metrics.TIME_LIMITS.items():
        for finish, expected in ((limit - dt, True), (limit + dt, False)):
            tr = oracles.constant_rate_trace(TWO_PI * dt / finish, int(limit / dt) + 50, dt, shape)
            wrong += metrics.success(tr, shape, dt) is not expected
    assert metrics.TIME_LIMITS == {"cylinder": 2.5, "square": 5.0, "hexagon": 3.5}
    detail(request, f"max |RT*RS - 2pi*dt| = {worst:.1e}, {wrong} misclassified boundary traces")
    assert worst <= 1e-9
    assert wrong == 0


# ------------------------------------------------------------------ 6
@pytest.mark.acceptance(6, "scripted-gait smoke")
def test_scripted_gait(request):
    t0 = time.perf_counter()
    cfg = RunConfig().with_overrides(["encoder.mode=passthrough"])
    n = 100
    frictions = np.linspace(0.9, 1.5, n)
    env = VecLidEnv(cfg, num_envs=n, seeds=[1000 + i for i in range(n)], autoreset=True)
    env.reset()
    env.set_friction(frictions)
    assert np.array_equal(env.friction_mult, frictions)
    policy = ScriptedPolicy(env)
    alive = np.ones(n, bool)
    turned = np.zeros(n, bool)
    for _ in range(1000):
        res = env.step(policy())
        # rows that finished have been reset; only first episodes count
        turned |= alive & (res.info["angle"] >= TWO_PI) & ~res.done
        alive &= ~res.done
        if not (alive & ~turned).any():
            break
    elapsed = time.perf_counter() - t0
    count = int(turned.sum())
    detail(request, f"{count}/100 episodes reach 2*pi, {elapsed:.1f} s")
    assert count >= 95
    assert elapsed < 120.0


# ------------------------------------------------------------------ 7
@pytest.mark.acceptance(7, "PPO gradient oracle")
def test_ppo_gradient_oracle(request):
    torch.manual_seed(7)
    actor = ppo.Actor(4, ppo.ACTION_DIM, (6,), -0.4, dtype=torch.float64)
    critic = ppo.Critic(5, (6,), dtype=torch.float64)
    obs = torch.tensor([[0.2, -0.4, 0.1, 0.7]], dtype=torch.float64)
    priv = torch.tensor([[0.5, -0.1, 0.3, 0.0, -0.6]], dtype=torch.float64)
    gen = torch.Generator().manual_seed(0)
    worst = 0.0
    for adv, shift in ((1.2, 0.04), (-0.8, -0.03), (0.6, 0.5), (-1.1, -0.5)):
        with torch.no_grad():
            mean, log_std = actor(obs)
            act = mean + torch.exp(log_std) * torch.randn(mean.shape, generator=gen, dtype=torch.float64)
            old = ppo.log_prob(mean, log_std, act) - shift
        batch = (obs, priv, act, old, torch.tensor([adv], dtype=torch.float64), torch.tensor([0.3], dtype=torch.float64))
        params = list(actor.parameters()) + list(critic.parameters())

        def loss():
            return ppo.ppo_loss(actor, critic, *batch, clip=0.2, value_coef=0.5, entropy_coef=0.0)[0]

        grads = torch.autograd.grad(loss(), params)
        numeric = oracles.central_difference(loss, params)
        for a, b in zip(grads, numeric):
            scale = torch.clamp(torch.abs(b), min=1e-6)
            worst = max(worst, float(torch.max(torch.abs(a - b) / scale)))
    detail(request, f"max relative gradient error {worst:.1e}")
    assert worst <= 1e-4


# ------------------------------------------------------------------ 8
@pytest.mark.acceptance(8, "learning smoke")
def test_learning_smoke(request):
    t0 = time.perf_counter()
    task = ppo.TargetActionTask(num_envs=16, seed=0)
    runner.deterministic_torch(0)
    policy = ppo.build_policy(task.obs_dim, task.obs_dim + 1, hidden=(64, 64), seed=0)
    opt = ppo.Optimizers(policy, 3e-3)
    collector = ppo.Collector(task, seed=0)
    gen = torch.Generator().manual_seed(1)
    rng = np.random.default_rng(0)
    random_return = task.episode_length * np.mean(
        [-np.sum((rng.uniform(-1, 1, ppo.ACTION_DIM) - task.target) ** 2) for _ in range(20_000)]
    )
    for _ in range(200):
        buf = collector.collect(policy, 32, 0.99)
        ppo.update(policy, buf, opt, entropy_coef=0.0, generator=gen)
    learned = float(np.mean(buf.finished_returns))
    gain = (learned - random_return) / abs(random_return)
    elapsed = time.perf_counter() - t0
    detail(request, f"random {random_return:.1f}, trained {learned:.1f} ({gain:+.0%}), {elapsed:.0f} s")
    assert gain >= 0.5
    assert elapsed < 600


# ------------------------------------------------------------------ encoder
@pytest.fixture(scope="session")
def default_encoder():
    return pretrain_encoder(RunConfig())


@pytest.mark.acceptance(10, "encoder separability")
def test_encoder_separability(request, default_encoder, tmp_path):
    cfg = RunConfig()
    lo, hi = cfg.randomization.friction_min, cfg.randomization.friction_max
    frictions = [lo] * 8 + [hi] * 8
    windows, labels = friction_dataset(cfg, 16, cfg.encoder.pretrain_steps, frictions, seed=424242)
    pred = default_encoder.predict(windows)
    mid = 0.5 * (lo + hi)
    acc = float(np.mean((pred > mid) == (labels > mid)))

    params = default_encoder.params
    before = params.checksum()
    run_cfg = cfg.with_overrides(["run.total_steps=131072"])
    res = runner.train(run_cfg, tmp_path / "run", encoder_params=params)
    stored = enc.load(tmp_path / "run" / runner.ENCODER_FILE).checksum()
    ckpt = torch.load(res.checkpoint, weights_only=False)["extra"]["encoder"]
    same = before == params.checksum() == stored == ckpt == res.encoder_checksum
    detail(request, f"held-out accuracy {acc:.3f} on {len(labels)} windows; checksum unchanged: {same}")
    assert acc >= 0.9
    assert same


# ------------------------------------------------------------------ 9 and 11
ABLATION_SETS = ("tac2motion", "crr_rr", "baseline")
SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def ablation(default_encoder, tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    params = default_encoder.params
    out = {}
    t0 = time.perf_counter()
    for seed in SEEDS:
        for rset in ABLATION_SETS:
            cfg = RunConfig().with_overrides([f"rewards.set={rset}", f"run.seed={seed}", "lid.shape=cylinder"])
            assert cfg.run.num_envs == 64 and cfg.run.total_steps == 2_000_000
            run = root / f"{rset}_{seed}"
            res = runner.train(cfg, run, encoder_params=params)
            eps, _ = runner.evaluate(
                cfg, "checkpoint", run / "eval", checkpoint=res.checkpoint, encoder_params=params, traces=False
            )
            rs = np.array([float(r["rs"]) for r in res.rows])
            steps = np.array([r["step"] for r in res.rows], dtype=float)
            out[rset, seed] = {
                "run": run,
                "cfg": cfg,
                "final_rs": float(np.mean([e.rs for e in eps])),
                "auc": float(np.sum(0.5 * (rs[1:] + rs[:-1]) * np.diff(steps))),
                "checksum": res.encoder_checksum,
            }
    out["elapsed"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
@pytest.mark.acceptance(9, "directional ablation")
def test_directional_ablation(request, ablation):
    wins_final = sum(ablation["tac2motion", s]["final_rs"] > ablation["crr_rr", s]["final_rs"] for s in SEEDS)
    wins_auc = sum(ablation["tac2motion", s]["auc"] > ablation["baseline", s]["auc"] for s in SEEDS)
    cells = "; ".join(
        f"s{s} RS t2m {ablation['tac2motion', s]['final_rs']:.4f} crr {ablation['crr_rr', s]['final_rs']:.4f} "
        f"AUC t2m {ablation['tac2motion', s]['auc']:.0f} base {ablation['baseline', s]['auc']:.0f}"
        for s in SEEDS
    )
    hours = ablation["elapsed"] / 3600
    detail(request, f"final RS wins {wins_final}/3, AUC wins {wins_auc}/3, {hours:.2f} h ({cells})")
    assert wins_final >= 2
    assert wins_auc >= 2
    assert hours <= 2.0


@pytest.mark.slow
@pytest.mark.acceptance(11, "determinism")
def test_training_determinism(request, ablation, default_encoder, tmp_path):
    first = ablation["tac2motion", 0]
    res = runner.train(first["cfg"], tmp_path / "again", encoder_params=default_encoder.params)
    a = (first["run"] / runner.TRAIN_CSV).read_bytes()
    b = (tmp_path / "again" / runner.TRAIN_CSV).read_bytes()
    detail(request, f"{len(res.rows)} updates, training CSVs {'identical' if a == b else 'differ'} ({len(a)} bytes)")
    assert a == b
