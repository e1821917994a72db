"""Training, evaluation rollouts and ablation sweeps on top of the environment."""

from __future__ import annotations

import json
import math
import subprocess
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import encoder as enc
from . import metrics, ppo
from .config import RunConfig
from .env import VecLidEnv, write_trace
from .geometry import NUM_FINGERS
from .scripted import ScriptedPolicy, pretrain_encoder

ENCODER_FILE = "encoder.bin"
CONFIG_FILE = "config.ini"
TRAIN_CSV = "training.csv"
FINAL_CHECKPOINT = "checkpoint_final.pt"


def build_id() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        out = None
    if out is not None and out.returncode == 0 and out.stdout.strip():
        return f"{__version__}+{out.stdout.strip()}"
    return __version__


def prepare_run_dir(path, cfg: RunConfig, command: str):
    """Create the run directory with the effective config, seed and build id."""
    run = Path(path)
    run.mkdir(parents=True, exist_ok=True)
    (run / CONFIG_FILE).write_text(cfg.to_ini())
    meta = {
        "command": command,
        "seed": cfg.run.seed,
        "config_hash": cfg.digest(),
        "build": build_id(),
        "torch": torch.__version__,
        "numpy": np.__version__,
    }
    (run / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return run


def deterministic_torch(seed: int):
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def resolve_encoder(cfg: RunConfig, run_dir=None, log=None) -> enc.EncoderParams:
    """Encoder for a run: pass-through, loaded from ``encoder.path``, or pretrained now."""
    e = cfg.encoder
    if e.mode == "passthrough":
        return enc.passthrough_params(e.window, cfg.contact.sensors, NUM_FINGERS)
    if e.path:
        params = enc.load(e.path)
        if params.window != e.window or params.k != cfg.contact.sensors:
            raise ValueError(f"encoder {e.path} has W={params.window}, k={params.k}; config wants W={e.window}, k={cfg.contact.sensors}")
        return params
    if log:
        log(f"pretraining encoder on {e.pretrain_episodes} scripted episodes")
    params = pretrain_encoder(cfg).params
    if run_dir is not None:
        enc.save(params, Path(run_dir) / ENCODER_FILE)
    return params


@dataclass
class TrainResult:
    rows: list
    checkpoint: Path
    policy: ppo.PolicyParams
    encoder_checksum: str


def train(cfg: RunConfig, run_dir, encoder_params=None, log=None) -> TrainResult:
    run = prepare_run_dir(run_dir, cfg, "train")
    seed = cfg.run.seed
    deterministic_torch(seed)
    if encoder_params is None:
        encoder_params = resolve_encoder(cfg, run, log)
    # keep a copy beside the checkpoints so evaluation finds the same encoder
    if not (run / ENCODER_FILE).exists() and not encoder_params.passthrough:
        enc.save(encoder_params, run / ENCODER_FILE)
    checksum = encoder_params.checksum()
    env = VecLidEnv(cfg, encoder_params=encoder_params)
    p = cfg.ppo
    policy = ppo.build_policy(
        env.obs_dim, env.priv_dim, p.hidden, p.init_log_std, p.normalize_obs, p.normalize_value, seed=seed
    )
    opt = ppo.Optimizers(policy, p.lr)
    collector = ppo.Collector(env, seed)
    gen = torch.Generator().manual_seed(seed + 1)
    batch = env.n * p.horizon
    n_updates = max(1, math.ceil(cfg.run.total_steps / batch))
    recent = deque(maxlen=100)
    rows = []
    csv_path = run / TRAIN_CSV
    for u in range(n_updates):
        buf = collector.collect(policy, p.horizon, p.gamma)
        recent.extend(buf.finished_returns)
        _, stats = ppo.update(
            policy,
            buf,
            opt,
            clip=p.clip,
            epochs=p.epochs,
            minibatches=p.minibatches,
            gamma=p.gamma,
            lam=p.gae_lambda,
            value_coef=p.value_coef,
            entropy_coef=p.entropy_coef,
            max_grad_norm=p.max_grad_norm,
            kl_abort=p.kl_abort,
            generator=gen,
        )
        step = (u + 1) * batch
        rows.append(
            {
                "update": u + 1,
                "step": step,
                "mean_return": float(np.mean(recent)) if recent else float("nan"),
                "rs": float(np.mean(buf.dq_lid)),
                **{k: stats[k] for k in ("policy_loss", "value_loss", "entropy", "kl", "clip_frac")},
            }
        )
        if cfg.run.log_every and (u + 1) % cfg.run.log_every == 0:
            ppo.write_csv(rows, csv_path)
            if log:
                r = rows[-1]
                log(f"update {u + 1}/{n_updates} step {step} return {r['mean_return']:.3f} rs {r['rs']:.5f} kl {r['kl']:.4f}")
        if cfg.run.checkpoint_every and (u + 1) % cfg.run.checkpoint_every == 0:
            ppo.save_checkpoint(run / f"checkpoint_{step}.pt", policy, opt, cfg.digest(), step, {"encoder": checksum})
        if encoder_params.checksum() != checksum:
            raise RuntimeError("encoder parameters changed during training")
    ppo.write_csv(rows, csv_path)
    final = run / FINAL_CHECKPOINT
    ppo.save_checkpoint(final, policy, opt, cfg.digest(), rows[-1]["step"], {"encoder": checksum})
    return TrainResult(rows=rows, checkpoint=final, policy=policy, encoder_checksum=checksum)


# ---------------------------------------------------------------- rollouts
class RandomPolicy:
    def __init__(self, env, seed=0):
        self.env = env
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs=None, priv=None):
        return self.rng.uniform(-1.0, 1.0, (self.env.n, ppo.ACTION_DIM))


class CheckpointPolicy:
    """Deterministic (mean) actions of a trained actor; never reads ``priv``."""

    def __init__(self, policy: ppo.PolicyParams):
        self.policy = policy

    def __call__(self, obs, priv=None):
        actions, _ = self.policy.act(obs, deterministic=True)
        return np.clip(actions, -1.0, 1.0)


def rollout(cfg: RunConfig, make_policy, episodes: int, encoder_params=None, seed=None):
    """Run ``episodes`` seeded episodes (one per environment row); returns their traces."""
    seed = cfg.run.seed if seed is None else seed
    seeds = [int(s) for s in np.random.SeedSequence([seed, 0xE7A1]).generate_state(episodes)]
    if encoder_params is None:
        encoder_params = enc.passthrough_params(cfg.encoder.window, cfg.contact.sensors, NUM_FINGERS)
    env = VecLidEnv(cfg, seeds=seeds, encoder_params=encoder_params, autoreset=True, record=True)
    obs, priv = env.reset()
    policy = make_policy(env)
    first = {}
    while len(first) < episodes:
        res = env.step(policy(obs, priv))
        obs, priv = res.obs, res.priv
        while env.traces:
            tr = env.traces.pop(0)
            first.setdefault(tr["header"]["env"], tr)
    return [first[i] for i in range(episodes)]


def policy_factory(kind: str, checkpoint=None, hidden=(256, 256), seed=0):
    if kind == "scripted":
        return lambda env: ScriptedPolicy(env)
    if kind == "random":
        return lambda env: RandomPolicy(env, seed)
    if kind == "checkpoint":
        if checkpoint is None or not Path(checkpoint).exists():
            raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
        pol, _ = ppo.load_checkpoint(checkpoint, hidden)
        return lambda env: CheckpointPolicy(pol)
    raise ValueError(f"unknown policy kind {kind!r}")


def evaluate(cfg: RunConfig, kind: str, out_dir, episodes=None, checkpoint=None, method=None, encoder_params=None, traces=True):
    """Roll out a policy, write traces and metric files; returns (episode metrics, reports)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    episodes = cfg.run.eval_episodes if episodes is None else episodes
    if kind == "checkpoint" and encoder_params is None:
        encoder_params = checkpoint_encoder(cfg, checkpoint)
    make = policy_factory(kind, checkpoint, cfg.ppo.hidden, cfg.run.seed)
    tr = rollout(cfg, make, episodes, encoder_params)
    method = method or kind
    eps = [metrics.episode_metrics(t, method, i) for i, t in enumerate(tr)]
    if traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for i, t in enumerate(tr):
            t["header"]["method"] = method
            write_trace(t, tdir / f"{method}_{cfg.lid.shape}_{i:04d}.jsonl")
    reps = metrics.aggregate(eps)
    (out / "episodes.csv").write_text(metrics.episodes_csv(eps))
    (out / "metrics.csv").write_text(metrics.reports_csv(reps))
    (out / "metrics.txt").write_text(metrics.format_table(reps))
    return eps, reps


def checkpoint_encoder(cfg: RunConfig, checkpoint):
    """Encoder that a checkpoint was trained with (stored next to it)."""
    if checkpoint is None or not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    beside = Path(checkpoint).parent / ENCODER_FILE
    if beside.exists():
        params = enc.load(beside)
    else:
        params = resolve_encoder(cfg)
    data = torch.load(checkpoint, map_location="cpu", weights_only=False)
    want = data.get("extra", {}).get("encoder")
    if want is not None and want != params.checksum():
        raise ValueError("encoder does not match the one the checkpoint was trained with")
    return params


REWARD_ORDER = ("tac2motion", "cpr_rr", "crr_rr", "baseline")


def ablate(cfg: RunConfig, out_dir, shapes=("cylinder",), seeds=None, sets=REWARD_ORDER, episodes=None, log=None):
    """Train and evaluate each reward set on each shape; returns the combined reports."""
    out = prepare_run_dir(out_dir, cfg, "ablate")
    seeds = [cfg.run.seed] if seeds is None else list(seeds)
    encoder_params = resolve_encoder(cfg, out, log)
    all_eps = []
    for shape in shapes:
        for rset in sets:
            for seed in seeds:
                run_cfg = cfg.with_overrides([f"lid.shape={shape}", f"rewards.set={rset}", f"run.seed={seed}"])
                tag = f"{rset}_{shape}_s{seed}"
                if log:
                    log(f"ablation run {tag}")
                res = train(run_cfg, out / tag, encoder_params=encoder_params, log=log)
                eps, _ = evaluate(
                    run_cfg,
                    "checkpoint",
                    out / tag / "eval",
                    episodes=episodes,
                    checkpoint=res.checkpoint,
                    method=rset,
                    encoder_params=encoder_params,
                    traces=False,
                )
                all_eps.extend(eps)
    order = {s: i for i, s in enumerate(sets)}
    all_eps.sort(key=lambda e: (order[e.method], e.shape))
    reps = metrics.aggregate(all_eps)
    reps.sort(key=lambda r: order[r.method])
    (out / "ablation_episodes.csv").write_text(metrics.episodes_csv(all_eps))
    (out / "ablation.csv").write_text(metrics.reports_csv(reps))
    (out / "ablation.txt").write_text(metrics.format_table(reps))
    return reps


def export(run_dir, out_dir=None):
    """Recompute metric files from the trace records under ``run_dir``."""
    run = Path(run_dir)
    paths = sorted(run.rglob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no trace files under {run}")
    from .env import read_trace

    eps = []
    for i, p in enumerate(paths):
        t = read_trace(p)
        method = t["header"].get("method", "unknown")
        eps.append(metrics.episode_metrics(t, method, i))
    reps = metrics.aggregate(eps)
    dest = Path(out_dir) if out_dir else run
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "export_episodes.csv").write_text(metrics.episodes_csv(eps))
    (dest / "export_metrics.csv").write_text(metrics.reports_csv(reps))
    (dest / "export_metrics.txt").write_text(metrics.format_table(reps))
    return reps

