"""Central finite-difference checks for the network and SAC loss gradients."""

from __future__ import annotations

import numpy as np

from . import nn, sac
from .replay import Batch

FD_STEP = 1e-6
TOLERANCE = 1e-4
# components smaller than this are compared in absolute terms
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(loss_fn, flat: np.ndarray, step=FD_STEP) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``flat`` (in place)."""
    g = np.empty_like(flat)
    flat = flat.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = loss_fn()
        flat[i] = old - step
        lo = loss_fn()
        flat[i] = old
        g.flat[i] = (hi - lo) / (2.0 * step)
    return g


def random_batch(rng, B=5, obs_dim=16, act_dim=4, n_demo=2, nstep=True) -> Batch:
    rewards = rng.choice([0.0, 5.0, 100.0], size=B)
    dones = rng.random(B) < 0.3
    demo = np.zeros(B, dtype=bool)
    demo[:n_demo] = True
    batch = Batch(
        obs=rng.normal(size=(B, obs_dim)),
        actions=rng.uniform(-0.9, 0.9, size=(B, act_dim)),
        rewards=rewards / 100.0,
        next_obs=rng.normal(size=(B, obs_dim)),
        dones=dones,
        is_demo=demo,
        weights=rng.uniform(0.3, 1.0, size=B),
    )
    if nstep:
        steps = rng.integers(1, 6, size=B)
        batch = batch.with_nstep(rng.normal(size=B) * 0.5, rng.normal(size=(B, obs_dim)), rng.random(B) < 0.3, steps)
    return batch


def small_nets(rng, obs_dim=16, act_dim=4, hidden=(8, 8), activation="tanh"):
    cfg = sac.SacConfig(hidden=hidden, activation=activation)
    nets = sac.make_nets(obs_dim, act_dim, cfg, rng)
    # decorrelate targets from online critics so the min() is not tied
    for t in (nets.target1, nets.target2):
        t.flat += 0.1 * rng.normal(size=t.flat.shape)
    return nets


def check_mlp(rng, activation="tanh") -> float:
    params = nn.init_mlp([6, 7, 5, 3], rng, activation)
    x = rng.normal(size=(4, 6))
    upstream = rng.normal(size=(4, 3))

    def loss():
        out, _ = nn.forward(params, x)
        return float(np.sum(out * upstream))

    out, cache = nn.forward(params, x)
    grads, dx = nn.backward(params, cache, upstream)
    err = relative_error(grads.flat, numeric_grad(loss, params.flat)).max()
    err_x = relative_error(dx, numeric_grad(loss, x)).max()
    return float(max(err, err_x))


def check_critic(rng, nstep=True, l2=1e-2, activation="tanh") -> float:
    nets = small_nets(rng, activation=activation)
    cfg = sac.SacConfig(use_nstep=nstep, lambda_n=1.0, l2_critic=l2, gamma=0.9, alpha=0.3)
    batch = random_batch(rng, nstep=nstep)
    noise = rng.normal(size=(len(batch), 4))
    _, _, (g1, g2) = sac.critic_loss(batch, nets, cfg, noise)
    fn = lambda: sac.critic_loss(batch, nets, cfg, noise)[0]  # noqa: E731
    e1 = relative_error(g1.flat, numeric_grad(fn, nets.critic1.flat)).max()
    e2 = relative_error(g2.flat, numeric_grad(fn, nets.critic2.flat)).max()
    return float(max(e1, e2))


def check_actor(rng, use_bc=True, q_filter=False, l2=1e-2, activation="tanh") -> float:
    nets = small_nets(rng, activation=activation)
    cfg = sac.SacConfig(use_bc=use_bc, lambda_bc=2.0, q_filter=q_filter, l2_actor=l2, alpha=0.3)
    batch = random_batch(rng, nstep=False)
    noise = rng.normal(size=(len(batch), 4))
    _, grads, _ = sac.actor_loss(batch, nets, cfg, noise)
    fn = lambda: sac.actor_loss(batch, nets, cfg, noise)[0]  # noqa: E731
    return float(relative_error(grads.flat, numeric_grad(fn, nets.actor.flat)).max())


def check_bc(rng, q_filter=False, activation="tanh") -> float:
    nets = small_nets(rng, activation=activation)
    cfg = sac.SacConfig(q_filter=q_filter)
    obs = rng.normal(size=(6, 16))
    acts = rng.uniform(-0.9, 0.9, size=(6, 4))
    _, grads = sac.bc_loss(obs, acts, nets, cfg)
    fn = lambda: sac.bc_loss(obs, acts, nets, cfg)[0]  # noqa: E731
    return float(relative_error(grads.flat, numeric_grad(fn, nets.actor.flat)).max())


def run_all(seed: int = 0) -> dict:
    """Every check on fresh random networks; returns name -> max relative error."""
    rng = np.random.default_rng(seed)
    results = {}
    for act in ("tanh", "relu"):
        results[f"mlp[{act}]"] = check_mlp(rng, act)
        results[f"critic 1-step+L2 [{act}]"] = check_critic(rng, nstep=False, activation=act)
        results[f"critic n-step+L2 [{act}]"] = check_critic(rng, nstep=True, activation=act)
        results[f"actor entropy+Q+BC+L2 [{act}]"] = check_actor(rng, use_bc=True, activation=act)
        results[f"actor Q-filtered BC [{act}]"] = check_actor(rng, use_bc=True, q_filter=True, activation=act)
        results[f"bc [{act}]"] = check_bc(rng, activation=act)
    return results
