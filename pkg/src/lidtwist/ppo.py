"""Clipped PPO with GAE and an asymmetric critic.

The actor sees only the observation; the critic sees the privileged state.
They are separate networks with separate optimizers, so a zero advantage
leaves the actor untouched whatever the critic does.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

ACTION_DIM = 22
CHECKPOINT_FORMAT = "lidtwist.ckpt"
CHECKPOINT_VERSION = 1


class RunningNorm:
    """Running mean/variance (parallel Welford) in float64."""

    def __init__(self, dim, eps=1e-4):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = eps

    def update(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.mean.size)
        n = x.shape[0]
        if n == 0:
            return
        b_mean = x.mean(axis=0)
        b_var = x.var(axis=0)
        delta = b_mean - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * n / tot
        m2 = self.var * self.count + b_var * n + delta**2 * self.count * n / tot
        self.var = m2 / tot
        self.count = tot

    def normalize(self, x, clip=5.0):
        out = (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(out, -clip, clip)

    def state(self):
        return {"mean": self.mean.copy(), "var": self.var.copy(), "count": self.count}

    def load(self, st):
        self.mean = np.asarray(st["mean"], dtype=np.float64).copy()
        self.var = np.asarray(st["var"], dtype=np.float64).copy()
        self.count = float(st["count"])


def mlp(inp, hidden, out, dtype=torch.float32):
    layers, last = [], inp
    for h in hidden:
        layers += [nn.Linear(last, h, dtype=dtype), nn.Tanh()]
        last = h
    layers.append(nn.Linear(last, out, dtype=dtype))
    return nn.Sequential(*layers)


class Actor(nn.Module):
    """Observation -> action mean and a state-independent log-std.

    The mean is left unbounded; the environment clips. A squashed mean stops
    learning once a reward term drives it into saturation.
    """

    def __init__(self, obs_dim, act_dim=ACTION_DIM, hidden=(256, 256), init_log_std=-0.5, dtype=torch.float32):
        super().__init__()
        self.obs_dim = obs_dim
        self.body = mlp(obs_dim, hidden, act_dim, dtype)
        self.log_std = nn.Parameter(torch.full((act_dim,), float(init_log_std), dtype=dtype))

    def forward(self, obs):
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"actor expects {self.obs_dim} inputs, got {obs.shape[-1]}")
        return self.body(obs), self.log_std.expand(obs.shape[:-1] + self.log_std.shape)


class Critic(nn.Module):
    def __init__(self, priv_dim, hidden=(256, 256), dtype=torch.float32):
        super().__init__()
        self.priv_dim = priv_dim
        self.body = mlp(priv_dim, hidden, 1, dtype)

    def forward(self, priv):
        return self.body(priv).squeeze(-1)


def log_prob(mean, log_std, actions):
    var = torch.exp(2.0 * log_std)
    return torch.sum(-0.5 * (actions - mean) ** 2 / var - log_std - 0.5 * math.log(2 * math.pi), dim=-1)


def entropy(log_std):
    return torch.sum(log_std + 0.5 * (1.0 + math.log(2 * math.pi)), dim=-1)


@dataclass
class PolicyParams:
    actor: Actor
    critic: Critic
    obs_norm: RunningNorm | None = None
    priv_norm: RunningNorm | None = None
    value_norm: RunningNorm | None = None

    def actor_input(self, obs):
        x = obs if self.obs_norm is None else self.obs_norm.normalize(obs)
        return torch.as_tensor(np.asarray(x), dtype=self.actor.log_std.dtype)

    def critic_input(self, priv):
        x = priv if self.priv_norm is None else self.priv_norm.normalize(priv)
        return torch.as_tensor(np.asarray(x), dtype=self.actor.log_std.dtype)

    def denorm_value(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.value_norm is None:
            return v
        return v * np.sqrt(self.value_norm.var[0] + 1e-8) + self.value_norm.mean[0]

    def norm_value(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.value_norm is None:
            return v
        return (v - self.value_norm.mean[0]) / np.sqrt(self.value_norm.var[0] + 1e-8)

    @torch.no_grad()
    def act(self, obs, generator=None, deterministic=False):
        """Sampled (or mean) actions and their log-probs for a batch of observations."""
        mean, log_std = self.actor(self.actor_input(obs))
        if not torch.all(torch.isfinite(mean)):
            bad = int(torch.sum(~torch.isfinite(mean)))
            raise FloatingPointError(f"actor produced {bad} non-finite outputs; obs range [{np.min(obs)}, {np.max(obs)}]")
        if deterministic:
            actions = mean
        else:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            actions = mean + torch.exp(log_std) * noise
        return actions.numpy().astype(np.float64), log_prob(mean, log_std, actions).numpy().astype(np.float64)

    @torch.no_grad()
    def value(self, priv):
        v = self.critic(self.critic_input(priv)).numpy()
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("critic produced non-finite values")
        return self.denorm_value(v)


def build_policy(obs_dim, priv_dim, hidden=(256, 256), init_log_std=-0.5, normalize_obs=True, normalize_value=True, seed=0):
    torch.manual_seed(seed)
    actor = Actor(obs_dim, ACTION_DIM, tuple(hidden), init_log_std)
    critic = Critic(priv_dim, tuple(hidden))
    return PolicyParams(
        actor=actor,
        critic=critic,
        obs_norm=RunningNorm(obs_dim) if normalize_obs else None,
        priv_norm=RunningNorm(priv_dim) if normalize_obs else None,
        value_norm=RunningNorm(1) if normalize_value else None,
    )


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, N, obs_dim)
    priv: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray  # r_final, plus the bootstrap term on truncated steps
    values: np.ndarray
    dones: np.ndarray
    last_value: np.ndarray  # (N,)
    dq_lid: np.ndarray = field(default=None)
    finished_returns: list = field(default_factory=list)

    @property
    def size(self):
        return self.rewards.size


class Collector:
    """Keeps the running observation and per-env returns between rollouts."""

    def __init__(self, env, seed=0):
        self.env = env
        self.obs, self.priv = env.reset()
        self.ep_return = np.zeros(env.n)
        self.gen = torch.Generator().manual_seed(int(seed))

    def collect(self, policy: PolicyParams, horizon: int, gamma: float = 0.99) -> RolloutBuffer:
        env = self.env
        n = env.n
        T = int(horizon)
        obs_b = np.zeros((T, n, self.obs.shape[1]))
        priv_b = np.zeros((T, n, self.priv.shape[1]))
        act_b = np.zeros((T, n, ACTION_DIM))
        logp_b = np.zeros((T, n))
        rew_b = np.zeros((T, n))
        val_b = np.zeros((T, n))
        done_b = np.zeros((T, n))
        dq_b = np.zeros((T, n))
        finished = []
        for t in range(T):
            obs_b[t] = self.obs
            priv_b[t] = self.priv
            actions, logp = policy.act(self.obs, self.gen)
            values = policy.value(self.priv)
            res = env.step(np.clip(actions, -1.0, 1.0))
            reward = np.asarray(res.reward, dtype=np.float64)
            self.ep_return += reward
            if np.any(res.truncated):
                idx = np.flatnonzero(res.truncated)
                reward = reward.copy()
                reward[idx] += gamma * policy.value(res.terminal_priv[idx])
            for i in np.flatnonzero(res.done):
                finished.append(float(self.ep_return[i]))
                self.ep_return[i] = 0.0
            act_b[t] = actions
            logp_b[t] = logp
            rew_b[t] = reward
            val_b[t] = values
            done_b[t] = res.done
            dq_b[t] = res.info["dq_lid"]
            self.obs, self.priv = res.obs, res.priv
        return RolloutBuffer(
            obs=obs_b,
            priv=priv_b,
            actions=act_b,
            log_probs=logp_b,
            rewards=rew_b,
            values=val_b,
            dones=done_b,
            last_value=policy.value(self.priv),
            dq_lid=dq_b,
            finished_returns=finished,
        )


def collect(policy, envs, T, seed=0, gamma=0.99):
    """One rollout of ``T`` steps from freshly reset environments."""
    return Collector(envs, seed).collect(policy, T, gamma)


def gae(buffer: RolloutBuffer, gamma: float, lam: float):
    """(normalized advantages, returns, raw advantages), each shaped like the rewards.

    Returns are built from the raw advantages so the critic regresses onto
    the actual lambda-return.
    """
    r = np.asarray(buffer.rewards, dtype=np.float64)
    v = np.asarray(buffer.values, dtype=np.float64)
    d = np.asarray(buffer.dones, dtype=np.float64)
    T = r.shape[0]
    adv = np.zeros_like(r)
    next_value = np.asarray(buffer.last_value, dtype=np.float64)
    running = np.zeros_like(next_value)
    for t in range(T - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_value * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = v[t]
    returns = adv + v
    return normalize_advantages(adv), returns, adv


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    centered = adv - adv.mean()
    std = centered.std()
    if std < 1e-8:
        return centered
    return centered / std


def ppo_loss(actor, critic, obs, priv, actions, old_logp, adv, returns, clip=0.2, value_coef=1.0, entropy_coef=0.0):
    """Total loss and its parts for one minibatch of tensors."""
    mean, log_std = actor(obs)
    logp = log_prob(mean, log_std, actions)
    ratio = torch.exp(logp - old_logp)
    surr = torch.min(ratio * adv, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)
    policy_loss = -surr.mean()
    value_loss = 0.5 * torch.mean((critic(priv) - returns) ** 2)
    ent = entropy(log_std).mean()
    total = policy_loss + value_coef * value_loss - entropy_coef * ent
    with torch.no_grad():
        log_ratio = logp - old_logp
        kl = torch.mean(torch.exp(log_ratio) - 1.0 - log_ratio)
        clip_frac = torch.mean((torch.abs(ratio - 1.0) > clip).to(ratio.dtype))
    return total, {
        "policy_loss": policy_loss.detach(),
        "value_loss": value_loss.detach(),
        "entropy": ent.detach(),
        "kl": kl,
        "clip_frac": clip_frac,
    }


class Optimizers:
    def __init__(self, policy: PolicyParams, lr: float):
        self.actor = torch.optim.Adam(policy.actor.parameters(), lr=lr)
        self.critic = torch.optim.Adam(policy.critic.parameters(), lr=lr)

    def state_dict(self):
        return {"actor": self.actor.state_dict(), "critic": self.critic.state_dict()}

    def load_state_dict(self, st):
        self.actor.load_state_dict(st["actor"])
        self.critic.load_state_dict(st["critic"])


def update(
    policy: PolicyParams,
    buffer: RolloutBuffer,
    opt: Optimizers,
    clip=0.2,
    epochs=5,
    minibatches=4,
    gamma=0.99,
    lam=0.95,
    value_coef=1.0,
    entropy_coef=1e-3,
    max_grad_norm=1.0,
    kl_abort=0.05,
    generator=None,
):
    """One PPO update over ``buffer``; returns averaged stats."""
    adv, returns, _ = gae(buffer, gamma, lam)
    dtype = policy.actor.log_std.dtype
    n = buffer.size
    # normalize with the statistics the rollout was collected under, so the
    # stored log-probs still describe the current policy; refresh them after
    obs = policy.actor_input(buffer.obs.reshape(n, -1))
    priv = policy.critic_input(buffer.priv.reshape(n, -1))
    if policy.obs_norm is not None:
        policy.obs_norm.update(buffer.obs.reshape(-1, buffer.obs.shape[-1]))
        policy.priv_norm.update(buffer.priv.reshape(-1, buffer.priv.shape[-1]))
    if policy.value_norm is not None:
        policy.value_norm.update(returns.reshape(-1, 1))
    actions = torch.as_tensor(buffer.actions.reshape(n, -1), dtype=dtype)
    old_logp = torch.as_tensor(buffer.log_probs.reshape(n), dtype=dtype)
    adv_t = torch.as_tensor(adv.reshape(n), dtype=dtype)
    ret_t = torch.as_tensor(policy.norm_value(returns.reshape(n)), dtype=dtype)
    mb = max(1, n // max(1, int(minibatches)))
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "kl": 0.0, "clip_frac": 0.0}
    count = 0
    stopped = False
    for _ in range(int(epochs)):
        perm = torch.randperm(n, generator=generator)
        for start in range(0, n, mb):
            idx = perm[start : start + mb]
            loss, parts = ppo_loss(
                policy.actor,
                policy.critic,
                obs[idx],
                priv[idx],
                actions[idx],
                old_logp[idx],
                adv_t[idx],
                ret_t[idx],
                clip,
                value_coef,
                entropy_coef,
            )
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite PPO loss {float(loss)}")
            opt.actor.zero_grad()
            opt.critic.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.actor.parameters(), max_grad_norm)
            nn.utils.clip_grad_norm_(policy.critic.parameters(), max_grad_norm)
            opt.actor.step()
            opt.critic.step()
            for k in sums:
                sums[k] += float(parts[k])
            count += 1
            if float(parts["kl"]) > kl_abort:
                stopped = True
                break
        if stopped:
            break
    stats = {k: v / max(count, 1) for k, v in sums.items()}
    stats["early_stop"] = stopped
    stats["minibatch_steps"] = count
    return policy, stats


# ---------------------------------------------------------------- checkpoints
def save_checkpoint(path, policy: PolicyParams, opt: Optimizers | None, config_hash: str, step: int, extra=None):
    norms = {}
    for name in ("obs_norm", "priv_norm", "value_norm"):
        norm = getattr(policy, name)
        norms[name] = None if norm is None else norm.state()
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config_hash": config_hash,
            "step": int(step),
            "obs_dim": policy.actor.obs_dim,
            "priv_dim": policy.critic.priv_dim,
            "actor": policy.actor.state_dict(),
            "critic": policy.critic.state_dict(),
            "norms": norms,
            "optim": None if opt is None else opt.state_dict(),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path, hidden=(256, 256), expected_hash=None):
    data = torch.load(path, map_location="cpu", weights_only=False)
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a policy checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {data.get('version')}")
    if expected_hash is not None and data["config_hash"] != expected_hash:
        raise ValueError(f"{path}: checkpoint config hash {data['config_hash']} does not match {expected_hash}")
    policy = build_policy(data["obs_dim"], data["priv_dim"], hidden)
    policy.actor.load_state_dict(data["actor"])
    policy.critic.load_state_dict(data["critic"])
    for name, st in data["norms"].items():
        if st is None:
            setattr(policy, name, None)
        else:
            getattr(policy, name).load(st)
    return policy, data


# -------------------------------------------------------------- target task
class TargetActionTask:
    """Stateless smoke task: reward is minus the squared distance to a fixed action."""

    def __init__(self, num_envs=16, obs_dim=8, seed=0, episode_length=16):
        rng = np.random.default_rng(seed)
        self.n = num_envs
        self.target = rng.uniform(-0.6, 0.6, ACTION_DIM)
        self.obs_dim = obs_dim
        self.episode_length = episode_length
        self.t = np.zeros(num_envs, np.int64)

    def reset(self):
        self.t[:] = 0
        return np.zeros((self.n, self.obs_dim)), np.zeros((self.n, self.obs_dim + 1))

    def step(self, actions):
        reward = -np.sum((np.asarray(actions) - self.target) ** 2, axis=1)
        self.t += 1
        done = self.t >= self.episode_length
        self.t[done] = 0
        obs = np.zeros((self.n, self.obs_dim))
        priv = np.zeros((self.n, self.obs_dim + 1))
        return _TaskStep(
            obs=obs,
            priv=priv,
            reward=reward,
            done=done,
            truncated=done.copy(),
            terminal_priv=priv,
            info={"dq_lid": np.zeros(self.n)},
        )


@dataclass
class _TaskStep:
    obs: np.ndarray
    priv: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    truncated: np.ndarray
    terminal_priv: np.ndarray
    info: dict


# ------------------------------------------------------------------ logging
CSV_FIELDS = ("update", "step", "mean_return", "rs", "policy_loss", "value_loss", "entropy", "kl", "clip_frac")


def format_row(row):
    out = {}
    for k in CSV_FIELDS:
        v = row[k]
        out[k] = str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.9g}"
    return out


def write_csv(rows, path=None):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(format_row(row))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
