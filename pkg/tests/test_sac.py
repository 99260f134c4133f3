import math
from dataclasses import replace

import numpy as np
import pytest

from sacr2 import nn, sac
from sacr2.env import EnvConfig
from sacr2.expert import ExpertConfig, generate_demos
from sacr2.gradcheck import TOLERANCE, random_batch, run_all, small_nets
from sacr2.replay import ReplayStore
from sacr2.sac import SacConfig, TrainingError


def test_config_schedule_and_validation():
    assert SacConfig().env_steps_per_train == 2
    with pytest.raises(ValueError):
        SacConfig(batch_size=64, replay_ratio=48)
    with pytest.raises(ValueError):
        SacConfig(lambda_bc=-1.0)
    with pytest.raises(ValueError):
        SacConfig(buffer_mode="triple")


def test_targets_start_as_exact_copies(rng):
    nets = sac.make_nets(16, 4, SacConfig(hidden=(8, 8)), rng)
    assert nets.target1 == nets.critic1 and nets.target2 == nets.critic2
    assert nets.target1.flat is not nets.critic1.flat


def test_terminal_target_is_reward(rng):
    nets = small_nets(rng)
    b = random_batch(rng, B=8, nstep=False)
    b.dones[:] = True
    y = sac.critic_targets(b, nets, SacConfig(), rng.normal(size=(8, 4)))
    assert np.array_equal(y, b.rewards)


def test_zero_discount_target_is_reward(rng):
    nets = small_nets(rng)
    b = random_batch(rng, B=8, nstep=False)
    y = sac.critic_targets(b, nets, SacConfig(gamma=0.0), rng.normal(size=(8, 4)))
    assert np.array_equal(y, b.rewards)


def constant_critic(value, in_dim):
    return nn.MlpParams([np.zeros((in_dim, 1))], [np.array([value])], activation="tanh")


def test_target_closed_form_toy():
    # constant target critics and a state-independent policy head: hand-computable
    cfg = SacConfig(gamma=0.9, alpha=0.5)
    nets = sac.make_nets(2, 1, replace(cfg, hidden=(3,)), np.random.default_rng(0))
    nets.target1 = constant_critic(4.0, 3)
    nets.target2 = constant_critic(3.0, 3)
    nets.actor = nn.MlpParams([np.zeros((2, 2))], [np.array([0.2, math.log(0.5)])], activation="tanh")
    b = random_batch(np.random.default_rng(1), B=2, obs_dim=2, act_dim=1, nstep=False)
    b.rewards[:] = [1.0, 0.0]
    b.dones[:] = [False, False]
    noise = np.array([[0.4], [-1.0]])
    y = sac.critic_targets(b, nets, cfg, noise)
    for i in range(2):
        u = 0.2 + 0.5 * noise[i, 0]
        logp = -0.5 * noise[i, 0] ** 2 - math.log(0.5) - 0.5 * math.log(2 * math.pi) - math.log(1 - math.tanh(u) ** 2 + 1e-6)
        assert y[i] == pytest.approx(b.rewards[i] + 0.9 * (3.0 - 0.5 * logp), abs=1e-12)


def test_nstep_with_one_step_doubles_loss(rng):
    nets = small_nets(rng)
    b = random_batch(rng, B=16, nstep=False)
    b = b.with_nstep(b.rewards.copy(), b.next_obs.copy(), b.dones.copy(), np.ones(16, dtype=int))
    noise = rng.normal(size=(16, 4))
    l2 = 1e-2
    combined, _, _ = sac.critic_loss(b, nets, SacConfig(use_nstep=True, lambda_n=0.7, l2_critic=l2), noise)
    plain, _, _ = sac.critic_loss(b, nets, SacConfig(use_nstep=False, l2_critic=0.0), noise)
    reg = l2 * (nn.l2_norm_sq(nets.critic1) + nn.l2_norm_sq(nets.critic2))
    assert combined == pytest.approx(1.7 * plain + reg, rel=1e-12)


def test_lambda_n_zero_is_plain_msbe(rng):
    nets = small_nets(rng)
    b = random_batch(rng, B=10)
    noise = rng.normal(size=(10, 4))
    a = sac.critic_loss(b, nets, SacConfig(use_nstep=True, lambda_n=0.0), noise)[0]
    c = sac.critic_loss(b, nets, SacConfig(use_nstep=False), noise)[0]
    assert a == c


def test_td_errors_are_abs_q1_minus_y1(rng):
    nets = small_nets(rng)
    b = random_batch(rng, B=10)
    noise = rng.normal(size=(10, 4))
    cfg = SacConfig(use_nstep=True)
    _, td, _ = sac.critic_loss(b, nets, cfg, noise)
    q1, _ = sac.q_values(nets.critic1, b.obs, b.actions)
    assert np.allclose(td, np.abs(q1 - sac.critic_targets(b, nets, cfg, noise)), rtol=0, atol=1e-14)


def test_gradcheck_suite_passes():
    results = run_all(seed=3)
    assert len(results) == 12
    assert max(results.values()) <= TOLERANCE


def test_actor_q_gradient_vanishes_for_constant_critics(rng):
    nets = small_nets(rng)
    nets.critic1 = constant_critic(2.0, 20)
    nets.critic2 = constant_critic(1.0, 20)
    b = random_batch(rng, B=8, nstep=False)
    _, g, _ = sac.actor_loss(b, nets, SacConfig(alpha=0.0, l2_actor=0.0), rng.normal(size=(8, 4)))
    assert not g.flat.any()


def test_alpha_scales_entropy_term_linearly(rng):
    nets = small_nets(rng)
    b = random_batch(rng, B=8, nstep=False)
    noise = rng.normal(size=(8, 4))
    l1, _, info = sac.actor_loss(b, nets, SacConfig(alpha=0.1), noise)
    l2, _, _ = sac.actor_loss(b, nets, SacConfig(alpha=0.4), noise)
    assert l2 - l1 == pytest.approx(0.3 * np.mean(info["log_prob"]), rel=1e-10)


def test_bc_zero_when_policy_matches(rng):
    nets = small_nets(rng)
    obs = rng.normal(size=(5, 16))
    out, _ = nn.forward(nets.actor, obs)
    loss, g = sac.bc_loss(obs, np.tanh(out[:, :4]), nets, SacConfig())
    assert loss == 0.0 and not g.flat.any()


def test_bc_empty_batch(rng):
    nets = small_nets(rng)
    loss, g = sac.bc_loss(np.zeros((0, 16)), np.zeros((0, 4)), nets, SacConfig())
    assert loss == 0.0 and not g.flat.any()


def linear_action_critic(obs_dim, act_dim, sign):
    w = np.zeros((obs_dim + act_dim, 1))
    w[obs_dim:] = sign
    return nn.MlpParams([w], [np.zeros(1)], activation="tanh")


def test_q_filter(rng):
    nets = small_nets(rng)
    obs = rng.normal(size=(6, 16))
    pi = np.tanh(nn.forward(nets.actor, obs)[0][:, :4])
    demo = np.clip(pi - 0.3, -1, 1)
    plain, _ = sac.bc_loss(obs, demo, nets, SacConfig(q_filter=False))
    assert plain > 0
    # critic prefers larger actions: the policy ranks above the demo everywhere
    nets.critic1 = linear_action_critic(16, 4, +1.0)
    assert sac.bc_loss(obs, demo, nets, SacConfig(q_filter=True))[0] == 0.0
    # critic prefers the demo everywhere: the filter keeps every term
    nets.critic1 = linear_action_critic(16, 4, -1.0)
    assert sac.bc_loss(obs, demo, nets, SacConfig(q_filter=True))[0] == plain


def test_bc_step_decreases_distance(rng):
    for _ in range(10):
        nets = small_nets(rng, activation="relu")
        obs = rng.normal(size=(8, 16))
        demo = rng.uniform(-0.9, 0.9, size=(8, 4))
        before, g = sac.bc_loss(obs, demo, nets, SacConfig())
        nets.actor.flat -= 1e-4 * g.flat
        after, _ = sac.bc_loss(obs, demo, nets, SacConfig())
        assert after < before


def test_bc_only_on_demo_rows(rng):
    nets = small_nets(rng)
    b = random_batch(rng, B=8, n_demo=3, nstep=False)
    noise = rng.normal(size=(8, 4))
    _, _, info = sac.actor_loss(b, nets, SacConfig(use_bc=True), noise)
    expected, _ = sac.bc_loss(b.obs[:3], b.actions[:3], nets, SacConfig())
    assert info["bc"] == pytest.approx(expected, rel=1e-12)


# -- training --------------------------------------------------------------------

TINY = dict(hidden=(16, 16), batch_size=16, replay_ratio=8)


def demo_store(cfg, n=10, seed=0):
    demos = generate_demos(n, EnvConfig(), seed=seed)
    store = ReplayStore(16, 4, mode=cfg.buffer_mode, per=cfg.per_config())
    store.insert_demoset(demos, cfg.demo_b)
    return store


def test_train_step_deterministic_and_updates_priorities():
    cfg = SacConfig(**TINY, use_nstep=True, use_bc=True, demo_bonus=True)
    runs = []
    for _ in range(2):
        store = demo_store(cfg)
        nets = sac.make_nets(16, 4, cfg, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        leaves0 = store.buffers[0].sum_tree.leaves.copy()
        diags = [sac.train_step(nets, store, cfg, rng) for _ in range(5)]
        assert not np.array_equal(store.buffers[0].sum_tree.leaves, leaves0)
        runs.append((diags, nets.actor.flat.copy()))
    assert runs[0][0] == runs[1][0] and np.array_equal(runs[0][1], runs[1][1])
    assert set(runs[0][0][0]) >= {"critic_loss", "actor_loss", "bc_loss", "td_mean", "demo_batch_fraction"}


def test_train_step_moves_targets_by_polyak():
    cfg = SacConfig(**TINY)
    store = demo_store(cfg)
    nets = sac.make_nets(16, 4, cfg, np.random.default_rng(0))
    t0 = nets.target1.copy()
    sac.train_step(nets, store, cfg, np.random.default_rng(1))
    assert np.allclose(nets.target1.flat, 0.995 * t0.flat + 0.005 * nets.critic1.flat, rtol=0, atol=1e-15)


def test_modified_per_uses_actor_terms():
    cfg = SacConfig(**TINY, per_mode="modified")
    store = demo_store(cfg)
    nets = sac.make_nets(16, 4, cfg, np.random.default_rng(0))
    sac.train_step(nets, store, cfg, np.random.default_rng(1))
    pr = store.buffers[0].priority[: len(store)]
    touched = pr != 1.0  # fresh transitions start at leaf 1
    # every demo priority carries the eps_D bonus on top of eps
    assert touched.any() and np.all(pr[touched] >= 1.0 + 1e-3)


def test_non_finite_loss_aborts():
    cfg = SacConfig(**TINY)
    store = demo_store(cfg)
    store.buffers[0].rewards[:] = np.nan
    nets = sac.make_nets(16, 4, cfg, np.random.default_rng(0))
    with pytest.raises(TrainingError, match="non-finite"):
        sac.train_step(nets, store, cfg, np.random.default_rng(1))


def test_auto_alpha_moves():
    cfg = SacConfig(**TINY, auto_alpha=True)
    store = demo_store(cfg)
    nets = sac.make_nets(16, 4, cfg, np.random.default_rng(0))
    for _ in range(5):
        d = sac.train_step(nets, store, cfg, np.random.default_rng(1))
    assert d["alpha"] != pytest.approx(0.2, abs=0) and d["alpha"] == nets.alpha


def test_pretrain_zero_iterations_leaves_nets():
    cfg = SacConfig(**TINY, pretrain_iters=0)
    store = demo_store(cfg)
    nets = sac.make_nets(16, 4, cfg, np.random.default_rng(0))
    before = {k: v.copy() for k, v in nets.named_params().items()}
    sac.pretrain(nets, store, cfg, np.random.default_rng(1))
    assert all(nets.named_params()[k] == before[k] for k in before)


def test_pretraining_on_demos_gives_some_success():
    cfg = SacConfig(hidden=(128, 128), use_bc=True)
    store = demo_store(cfg, n=200)
    nets = sac.make_nets(16, 4, cfg, np.random.default_rng(0))
    sac.pretrain(nets, store, cfg, np.random.default_rng(1))
    assert sac.evaluate_greedy(nets, EnvConfig(), 100, seed=99) > 0.0


def short_run(seed=0, steps=600, **kw):
    cfg = SacConfig(**{**TINY, "n_demos": 5, "pretrain_iters": 20, "random_steps": 200, **kw})
    seen = []

    def cb(row, nets, store):
        seen.append(set(np.unique(store.rewards_snapshot())))

    m = sac.run_training(EnvConfig(), ExpertConfig(), cfg, seed, steps, cb)
    return m, seen, cfg


def test_run_training_deterministic():
    a, _, _ = short_run(seed=4)
    b, _, _ = short_run(seed=4)
    assert a.rows == b.rows
    c, _, _ = short_run(seed=5)
    assert a.rows != c.rows


def test_run_training_rows_and_budget():
    m, _, _ = short_run(steps=700)
    steps = m.column("env_steps")
    assert steps[-1] <= 700 and np.all(np.diff(steps) > 0)
    assert m.column("episode").tolist() == list(range(len(m.rows)))
    s = m.column("success")
    for k in range(len(s)):
        assert m.rows[k]["rolling_success"] == pytest.approx(s[max(0, k - 99) : k + 1].mean(), abs=1e-15)
    # two env steps per train step after the random phase
    t = m.column("train_steps")
    assert np.all(t <= (steps - 200) / 2 + 1)


@pytest.mark.parametrize("kw", [{"demo_bonus": True, "relabel_success": True, "b": 5.0}, {}])
def test_buffer_rewards_only_take_known_values(kw):
    _, seen, cfg = short_run(**kw)
    allowed = {0.0, 100.0, cfg.b if kw else 0.0}
    assert seen and all(vals <= allowed for vals in seen)


def test_no_demo_configuration_runs():
    m, seen, _ = short_run(n_demos=0, pretrain_iters=0, maintain_demo_ratio=False,
                           demo_bonus=True, relabel_success=True, steps=500)
    assert len(m.rows) > 0
    assert all(vals <= {0.0, 5.0, 100.0} for vals in seen)


@pytest.mark.parametrize("kw", [{"buffer_mode": "dual"}, {"reset_to_demo_prob": 0.5}, {"use_nstep": True, "use_bc": True, "q_filter": True}])
def test_ablation_variants_run(kw):
    m, _, _ = short_run(steps=400, **kw)
    assert len(m.rows) > 0 and all(np.isfinite(r["critic_loss"]) for r in m.rows)


def test_nothing_to_train_on():
    with pytest.raises(TrainingError):
        sac.run_training(EnvConfig(), ExpertConfig(), SacConfig(**TINY, n_demos=0, random_steps=0), 0, 100)
