"""Soft Actor-Critic with demonstration extensions.

Losses return analytic gradients alongside their values so they can be
checked against finite differences. The training loop interleaves one
gradient step with ``batch_size / replay_ratio`` environment steps and
relabels successful episodes before they enter the buffer.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from . import env as reacher
from . import expert as expert_mod
from . import nn
from .replay import Batch, Episode, PerConfig, ReplayStore, relabel_success

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class SacConfig:
    # SAC core
    gamma: float = 0.99
    alpha: float = 0.2
    auto_alpha: bool = False
    target_entropy: float | None = None  # defaults to -act_dim
    tau: float = 0.005
    lr: float = 3e-4
    hidden: tuple = (256, 256)
    activation: str = "relu"
    batch_size: int = 64
    replay_ratio: int = 32
    # critic / actor extensions
    use_nstep: bool = False
    n_step: int = 5
    lambda_n: float = 1.0
    use_bc: bool = False
    lambda_bc: float = 2.0
    q_filter: bool = False
    l2_actor: float = 1e-4
    l2_critic: float = 1e-4
    # demonstrations and relabeling
    n_demos: int = 200
    b: float = 5.0
    demo_bonus: bool = False
    relabel_success: bool = False
    relabel_window: int = 21  # N when no demonstrations are loaded
    pretrain_iters: int = 3000
    random_steps: int = 1000
    reset_to_demo_prob: float = 0.0
    # replay
    buffer_mode: str = "single"
    capacity: int = 1_000_000
    demo_capacity: int = 100_000
    demo_fraction: float = 0.10
    target_demo_ratio: float = 0.10
    maintain_demo_ratio: bool = True
    per_mode: str = "standard"
    per_alpha: float = 0.3
    per_beta: float = 1.0
    per_eps: float = 1e-3
    per_eps_demo: float = 1.0
    per_lambda_actor: float = 1.0
    importance_weights: bool = True
    rolling_window: int = 100

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size % self.replay_ratio:
            raise ValueError("batch_size must be a multiple of replay_ratio")
        if self.batch_size // self.replay_ratio < 1:
            raise ValueError("batch_size / replay_ratio must be >= 1")
        for f in ("lambda_n", "lambda_bc", "l2_actor", "l2_critic", "b", "alpha"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")
        if not 0 <= self.reset_to_demo_prob <= 1:
            raise ValueError("reset_to_demo_prob must lie in [0, 1]")
        if self.buffer_mode not in ("single", "dual"):
            raise ValueError(f"unknown buffer_mode {self.buffer_mode!r}")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")

    @property
    def env_steps_per_train(self) -> int:
        return self.batch_size // self.replay_ratio

    @property
    def demo_b(self) -> float:
        return self.b if self.demo_bonus else 0.0

    def per_config(self) -> PerConfig:
        return PerConfig(
            alpha=self.per_alpha, beta=self.per_beta, eps=self.per_eps, eps_demo=self.per_eps_demo,
            lambda_actor=self.per_lambda_actor, mode=self.per_mode,
            importance_weights=self.importance_weights,
        )


@dataclass
class AgentNets:
    actor: nn.MlpParams
    critic1: nn.MlpParams
    critic2: nn.MlpParams
    target1: nn.MlpParams
    target2: nn.MlpParams
    actor_opt: nn.AdamState
    critic1_opt: nn.AdamState
    critic2_opt: nn.AdamState
    log_alpha: float = math.log(0.2)
    alpha_m: float = 0.0
    alpha_v: float = 0.0
    alpha_t: int = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def named_params(self) -> dict:
        return {
            "actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
            "target1": self.target1, "target2": self.target2,
        }


def make_nets(obs_dim: int, act_dim: int, config: SacConfig, rng: np.random.Generator) -> AgentNets:
    h = list(config.hidden)
    actor = nn.init_mlp([obs_dim] + h + [2 * act_dim], rng, config.activation)
    c1 = nn.init_mlp([obs_dim + act_dim] + h + [1], rng, config.activation)
    c2 = nn.init_mlp([obs_dim + act_dim] + h + [1], rng, config.activation)
    opt = lambda p: nn.AdamState.for_params(p, lr=config.lr)  # noqa: E731
    return AgentNets(
        actor, c1, c2, c1.copy(), c2.copy(), opt(actor), opt(c1), opt(c2), log_alpha=math.log(max(config.alpha, 1e-12))
    )


def _entropy_coef(nets: AgentNets, config: SacConfig) -> float:
    return nets.alpha if config.auto_alpha else config.alpha


def q_values(critic: nn.MlpParams, obs, actions):
    out, cache = nn.forward(critic, np.concatenate([obs, actions], axis=1))
    return out[:, 0], cache


# -- losses ------------------------------------------------------------------

def critic_targets(batch: Batch, nets: AgentNets, config: SacConfig, noise) -> np.ndarray:
    """1-step soft Bellman targets; ``noise`` drives the next-action sample."""
    y1, _ = _targets(batch, nets, config, noise, with_nstep=False)
    return y1


def _soft_value(obs, nets, alpha, noise):
    head = nn.policy_sample(nets.actor, obs, noise)
    qa, _ = q_values(nets.target1, obs, head.action)
    qb, _ = q_values(nets.target2, obs, head.action)
    return np.minimum(qa, qb) - alpha * head.log_prob


def _targets(batch: Batch, nets: AgentNets, config: SacConfig, noise, with_nstep: bool):
    alpha = _entropy_coef(nets, config)
    B = len(batch)
    if with_nstep:
        v = _soft_value(np.concatenate([batch.next_obs, batch.nstep_obs]), nets, alpha, np.concatenate([noise, noise]))
        v1, vn = v[:B], v[B:]
    else:
        v1, vn = _soft_value(batch.next_obs, nets, alpha, noise), None
    y1 = batch.rewards + config.gamma * (1.0 - batch.dones) * v1
    yn = None
    if with_nstep:
        disc = config.gamma ** batch.nstep_steps.astype(np.float64)
        yn = batch.nstep_returns + disc * (1.0 - batch.nstep_dones) * vn
    return y1, yn


def critic_loss(batch: Batch, nets: AgentNets, config: SacConfig, noise):
    """Returns ``(loss, td_errors, (grads1, grads2))``.

    loss = sum over both critics of weighted mean (Q - y1)^2
           + lambda_n * weighted mean (Q - y_n)^2, plus L2 on critic weights.
    td_errors are |Q1 - y1|.
    """
    use_n = config.use_nstep and config.lambda_n > 0
    if use_n and batch.nstep_returns is None:
        raise ValueError("n-step loss enabled but batch has no n-step fields")
    y1, yn = _targets(batch, nets, config, noise, with_nstep=use_n)
    B = len(batch)
    w = batch.weights
    loss = 0.0
    grads = []
    td = None
    for critic in (nets.critic1, nets.critic2):
        q, cache = q_values(critic, batch.obs, batch.actions)
        e1 = q - y1
        loss += float(np.mean(w * e1**2))
        dq = 2.0 * w * e1 / B
        if use_n:
            en = q - yn
            loss += config.lambda_n * float(np.mean(w * en**2))
            dq = dq + 2.0 * config.lambda_n * w * en / B
        if td is None:
            td = np.abs(e1)
        g, _ = nn.backward(critic, cache, dq[:, None])
        loss += config.l2_critic * nn.l2_norm_sq(critic)
        nn.add_l2_grad(g, critic, config.l2_critic)
        grads.append(g)
    return loss, td, tuple(grads)


def _bc_terms(mean, demo_obs, demo_actions, critic1, config: SacConfig):
    """BC loss and its gradient w.r.t. the pre-tanh policy mean."""
    n = len(demo_actions)
    if n == 0:
        return 0.0, np.zeros_like(mean)
    pi = np.tanh(mean)
    diff = pi - demo_actions
    sq = np.sum(diff**2, axis=1)
    mask = np.ones(n)
    if config.q_filter:
        q_demo, _ = q_values(critic1, demo_obs, demo_actions)
        q_pi, _ = q_values(critic1, demo_obs, pi)
        mask = (q_demo > q_pi).astype(np.float64)
    loss = float(np.sum(mask * sq) / n)
    d_mean = 2.0 * diff * (1.0 - pi**2) * mask[:, None] / n
    return loss, d_mean


def bc_loss(demo_obs, demo_actions, nets: AgentNets, config: SacConfig):
    """Mean squared distance between tanh(policy mean) and demo actions,
    optionally Q-filtered. Returns ``(loss, actor_grads)``."""
    demo_obs = np.asarray(demo_obs, dtype=np.float64)
    demo_actions = np.asarray(demo_actions, dtype=np.float64)
    if len(demo_obs) == 0:
        return 0.0, nets.actor.zeros_like()
    out, cache = nn.forward(nets.actor, demo_obs)
    A = demo_actions.shape[1]
    loss, d_mean = _bc_terms(out[:, :A], demo_obs, demo_actions, nets.critic1, config)
    grads, _ = nn.backward(nets.actor, cache, np.concatenate([d_mean, np.zeros_like(d_mean)], axis=1))
    return loss, grads


def actor_loss(batch: Batch, nets: AgentNets, config: SacConfig, noise):
    """Returns ``(loss, actor_grads, info)``; ``info`` carries per-sample
    terms, the log-probs and the BC value."""
    alpha = _entropy_coef(nets, config)
    B = len(batch)
    A = batch.actions.shape[1]
    head = nn.policy_sample(nets.actor, batch.obs, noise)
    q1, c1 = q_values(nets.critic1, batch.obs, head.action)
    q2, c2 = q_values(nets.critic2, batch.obs, head.action)
    pick1 = (q1 <= q2).astype(np.float64)
    min_q = np.where(pick1 > 0, q1, q2)
    per_sample = alpha * head.log_prob - min_q
    loss = float(np.mean(per_sample))
    # dL/da through whichever critic is the minimum
    _, dx1 = nn.backward(nets.critic1, c1, (-pick1 / B)[:, None], param_grads=False)
    _, dx2 = nn.backward(nets.critic2, c2, (-(1.0 - pick1) / B)[:, None], param_grads=False)
    d_action = dx1[:, -A:] + dx2[:, -A:]
    d_logp = np.full(B, alpha / B)
    d_mean = None
    bc = 0.0
    if config.use_bc and config.lambda_bc > 0:
        demo = batch.is_demo
        bc, d_mean_demo = _bc_terms(head.mean[demo], batch.obs[demo], batch.actions[demo], nets.critic1, config)
        loss += config.lambda_bc * bc
        d_mean = np.zeros_like(head.mean)
        d_mean[demo] = config.lambda_bc * d_mean_demo
    grads = nn.policy_backward(nets.actor, head, d_action, d_logp, d_mean)
    loss += config.l2_actor * nn.l2_norm_sq(nets.actor)
    nn.add_l2_grad(grads, nets.actor, config.l2_actor)
    return loss, grads, {"per_sample": per_sample, "log_prob": head.log_prob, "bc": bc}


# -- training ----------------------------------------------------------------

def _update_alpha(nets: AgentNets, log_prob, config: SacConfig, act_dim: int) -> None:
    target = -act_dim if config.target_entropy is None else config.target_entropy
    g = -float(np.mean(log_prob + target))
    nets.alpha_t += 1
    nets.alpha_m = 0.9 * nets.alpha_m + 0.1 * g
    nets.alpha_v = 0.999 * nets.alpha_v + 0.001 * g * g
    m_hat = nets.alpha_m / (1 - 0.9**nets.alpha_t)
    v_hat = nets.alpha_v / (1 - 0.999**nets.alpha_t)
    nets.log_alpha -= config.lr * m_hat / (math.sqrt(v_hat) + 1e-8)


def train_step(nets: AgentNets, store: ReplayStore, config: SacConfig, rng: np.random.Generator) -> dict:
    """One SAC update from a prioritized batch. Returns diagnostics."""
    batch, _, handles = store.sample_batch(config.batch_size, rng)
    if config.use_nstep and config.lambda_n > 0:
        batch = batch.with_nstep(*store.assemble_nstep(handles, config.n_step, config.gamma))
    A = batch.actions.shape[1]
    noise_next = rng.standard_normal((len(batch), A))
    noise_pi = rng.standard_normal((len(batch), A))

    c_loss, td, (g1, g2) = critic_loss(batch, nets, config, noise_next)
    if not math.isfinite(c_loss):
        raise TrainingError(_dump("critic loss", c_loss, batch, nets))
    nn.adam_step(nets.critic1, g1, nets.critic1_opt)
    nn.adam_step(nets.critic2, g2, nets.critic2_opt)

    a_loss, ga, info = actor_loss(batch, nets, config, noise_pi)
    if not math.isfinite(a_loss):
        raise TrainingError(_dump("actor loss", a_loss, batch, nets))
    nn.adam_step(nets.actor, ga, nets.actor_opt)
    if config.auto_alpha:
        _update_alpha(nets, info["log_prob"], config, A)

    nn.polyak_update(nets.target1, nets.critic1, config.tau)
    nn.polyak_update(nets.target2, nets.critic2, config.tau)

    actor_terms = info["per_sample"] if config.per_mode == "modified" else None
    store.update_priorities(handles, td, actor_terms)
    return {
        "critic_loss": c_loss,
        "actor_loss": a_loss,
        "bc_loss": info["bc"],
        "td_mean": float(np.mean(td)),
        "demo_batch_fraction": float(np.mean(batch.is_demo)),
        "alpha": _entropy_coef(nets, config),
    }


def _dump(what, value, batch, nets) -> str:
    return (
        f"non-finite {what} ({value}); batch reward range [{batch.rewards.min()}, {batch.rewards.max()}], "
        f"actor |W|^2={nn.l2_norm_sq(nets.actor):.3g}, critic1 |W|^2={nn.l2_norm_sq(nets.critic1):.3g}"
    )


def pretrain(nets: AgentNets, store: ReplayStore, config: SacConfig, rng: np.random.Generator) -> AgentNets:
    """``pretrain_iters`` updates with no environment interaction."""
    for _ in range(config.pretrain_iters):
        train_step(nets, store, config, rng)
    return nets


def greedy_action(nets: AgentNets, obs) -> np.ndarray:
    out, _ = nn.forward(nets.actor, np.asarray(obs)[None, :])
    A = out.shape[1] // 2
    return np.tanh(out[0, :A])


def sample_action(nets: AgentNets, obs, rng: np.random.Generator) -> np.ndarray:
    A = nets.actor.weights[-1].shape[1] // 2
    head = nn.policy_sample(nets.actor, np.asarray(obs)[None, :], rng.standard_normal((1, A)))
    return head.action[0]


def evaluate_greedy(nets: AgentNets, env_config: reacher.EnvConfig, n_episodes: int, seed) -> float:
    """Success rate of the deterministic policy on fresh targets (diagnostics only)."""
    rng = np.random.default_rng(seed)
    wins = 0
    for _ in range(n_episodes):
        s = reacher.reset(env_config, rng)
        while not s.done:
            s, _, _, _ = reacher.step(s, greedy_action(nets, reacher.observe(s)), env_config)
        wins += s.success
    return wins / n_episodes


# -- main loop ---------------------------------------------------------------

METRIC_COLUMNS = (
    "episode", "env_steps", "train_steps", "success", "length",
    "rolling_success", "critic_loss", "actor_loss", "demo_batch_fraction",
)


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)
    window: int = 100
    _recent: deque = field(default=None, repr=False)

    def __post_init__(self):
        self._recent = deque(maxlen=self.window)

    def record(self, **row) -> dict:
        self._recent.append(int(row["success"]))
        row["episode"] = len(self.rows)
        row["rolling_success"] = sum(self._recent) / len(self._recent)
        self.rows.append({k: row[k] for k in METRIC_COLUMNS})
        return self.rows[-1]

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)


class _EpisodeBuilder:
    def __init__(self):
        self.obs, self.actions, self.rewards, self.next_obs = [], [], [], []

    def add(self, o, a, r, o2):
        self.obs.append(o)
        self.actions.append(a)
        self.rewards.append(r)
        self.next_obs.append(o2)

    def __len__(self):
        return len(self.rewards)

    def build(self, success: bool) -> Episode:
        return Episode.from_steps(self.obs, self.actions, self.rewards, self.next_obs, success)


@dataclass
class Streams:
    """Independent random streams derived from one run seed."""

    nets: np.random.Generator
    env: np.random.Generator
    replay: np.random.Generator
    policy: np.random.Generator
    demo_seed: np.random.SeedSequence

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        ss = np.random.SeedSequence(seed)
        a, b, c, d, e = ss.spawn(5)
        return cls(*(np.random.default_rng(x) for x in (a, b, c, d)), e)


def run_training(env_config: reacher.EnvConfig, expert_config: expert_mod.ExpertConfig, config: SacConfig,
                 seed: int, max_env_steps: int, on_episode=None) -> MetricsLog:
    """Full run: demos, random interactions, pretraining, then interleaved
    training and collection until ``max_env_steps`` environment steps."""
    rs = Streams.from_seed(seed)
    env = reacher.ReacherEnv(env_config)
    obs_dim, act_dim = env_config.obs_dim, env_config.act_dim
    nets = make_nets(obs_dim, act_dim, config, rs.nets)
    store = ReplayStore(
        obs_dim, act_dim, mode=config.buffer_mode, capacity=config.capacity,
        demo_capacity=config.demo_capacity, demo_fraction=config.demo_fraction,
        target_demo_ratio=config.target_demo_ratio, per=config.per_config(),
    )

    demo_stream = expert_mod.DemoStream(env_config, rs.demo_seed, expert_config)
    demo_episodes = []
    if config.n_demos > 0:
        demo_episodes = [demo_stream() for _ in range(config.n_demos)]
        store.insert_demoset(demo_episodes, config.demo_b)
        n_avg = max(2, expert_mod.mean_episode_length(demo_episodes))
    else:
        n_avg = config.relabel_window

    def demo_source():
        ep = demo_stream()
        demo_episodes.append(ep)
        return ep

    maintain = config.maintain_demo_ratio and config.n_demos > 0 and config.buffer_mode == "single"

    env_steps = 0
    # uniform random interactions, never relabeled
    while env_steps < config.random_steps and env_steps < max_env_steps:
        o = env.reset(rs.env)
        ep = _EpisodeBuilder()
        done = success = False
        while not done:
            a = rs.env.uniform(-1.0, 1.0, size=act_dim)
            o2, r, done, success = env.step(a)
            ep.add(o, a, r, o2)
            o = o2
            env_steps += 1
        store.push_episode(ep.build(success))

    if len(store) == 0:
        raise TrainingError("nothing to train on: no demonstrations and no random interactions")

    for _ in range(config.pretrain_iters):
        train_step(nets, store, config, rs.replay)

    metrics = MetricsLog(window=config.rolling_window)
    train_steps = 0
    acc = {"critic_loss": 0.0, "actor_loss": 0.0, "demo_batch_fraction": 0.0, "n": 0}

    def new_episode():
        if demo_episodes and config.reset_to_demo_prob > 0 and rs.env.random() < config.reset_to_demo_prob:
            demo = demo_episodes[rs.env.integers(len(demo_episodes))]
            t = rs.env.integers(len(demo))
            return env.reset_to(reacher.state_from_observation(demo.obs[t], env_config))
        return env.reset(rs.env)

    o = new_episode()
    ep = _EpisodeBuilder()
    while env_steps < max_env_steps:
        d = train_step(nets, store, config, rs.replay)
        train_steps += 1
        for k in ("critic_loss", "actor_loss", "demo_batch_fraction"):
            acc[k] += d[k]
        acc["n"] += 1
        for _ in range(config.env_steps_per_train):
            a = sample_action(nets, o, rs.policy)
            o2, r, done, success = env.step(a)
            ep.add(o, a, r, o2)
            o = o2
            env_steps += 1
            if done:
                episode = ep.build(success)
                if success and config.relabel_success:
                    episode = relabel_success(episode, config.b, n_avg)
                store.push_episode(episode)
                if maintain:
                    store.maintain_demo_ratio(demo_source, config.demo_b)
                n = max(acc["n"], 1)
                row = metrics.record(
                    env_steps=env_steps, train_steps=train_steps, success=int(success), length=len(episode),
                    critic_loss=acc["critic_loss"] / n, actor_loss=acc["actor_loss"] / n,
                    demo_batch_fraction=acc["demo_batch_fraction"] / n,
                )
                acc = {"critic_loss": 0.0, "actor_loss": 0.0, "demo_batch_fraction": 0.0, "n": 0}
                if on_episode is not None:
                    on_episode(row, nets, store)
                o = new_episode()
                ep = _EpisodeBuilder()
            if env_steps >= max_env_steps:
                break
    return metrics


def config_field_names() -> list:
    return [f.name for f in fields(SacConfig)]
