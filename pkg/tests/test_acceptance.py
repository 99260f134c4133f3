"""Acceptance criteria, one test each. Every test prints a single
``[ACCEPTANCE k] PASS|FAIL ...`` line, repeated in the pytest summary.

Criteria 1-6 are property checks that run in a few minutes. Criteria 7-12
compare multi-seed suites (4 seeds x 150k env steps). Those suites are run
through ``run_suite`` on a persistent results directory, so completed seeds
are reused and an interrupted run resumes where it stopped. The directory
defaults to ``<repo>/results`` and can be moved with ``SACR2_RESULTS``.

Run standalone with ``python tests/test_acceptance.py``.
"""

import filecmp
import math
import os
import sys
from pathlib import Path

import numpy as np
import pytest

from sacr2 import gradcheck
from sacr2.env import EnvConfig
from sacr2.expert import DemoStream, generate_demos
from sacr2.harness.presets import preset
from sacr2.harness.suite import run_suite
from sacr2.replay import Episode, PerConfig, ReplayStore, relabel_success

RESULTS = Path(os.environ.get("SACR2_RESULTS", Path(__file__).resolve().parents[1] / "results"))
REPORT = []


def report(k, ok, detail):
    line = f"[ACCEPTANCE {k:>2}] {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)
    assert ok, line


def episode(rng, length, success, is_demo=False, tag=0.0, obs_dim=3, act_dim=2):
    obs = rng.normal(size=(length, obs_dim))
    obs[:, 0] = tag + np.arange(length)
    nxt = rng.normal(size=(length, obs_dim))
    rewards = np.zeros(length)
    if success:
        rewards[-1] = 100.0
    return Episode.from_steps(obs, rng.uniform(-1, 1, (length, act_dim)), rewards, nxt, success, is_demo)


# -- property suites ---------------------------------------------------------------

def test_1_gradient_correctness():
    worst = 0.0
    names = set()
    for seed in range(3):
        res = gradcheck.run_all(seed)
        names |= set(res)
        worst = max(worst, max(res.values()))
    report(1, worst <= 1e-4, f"max relative error {worst:.2e} over {len(names)} checks x 3 seeds (tol 1e-4)")


def test_2_relabeling_exactness():
    rng = np.random.default_rng(2)
    bad = 0
    trials = 0
    for n_avg in (2, 5, 21):
        for _ in range(500):
            length = int(rng.integers(1, 101))
            ep = episode(rng, length, True)
            out = relabel_success(ep, 5.0, n_avg)
            k = min(n_avg - 1, length - 1)
            changed = np.flatnonzero(out.rewards != ep.rewards)
            ok = (
                len(changed) == k
                and np.array_equal(changed, np.arange(length - 1 - k, length - 1))
                and np.all(out.rewards[changed] == 5.0)
                and out.rewards[-1] == 100.0
                and all(np.array_equal(getattr(out, f), getattr(ep, f)) for f in ("obs", "actions", "next_obs", "dones"))
            )
            bad += not ok
            trials += 1
    demos = [episode(rng, int(rng.integers(2, 40)), True, True) for _ in range(100)]
    for mode in ("single", "dual"):
        store = ReplayStore(3, 2, mode=mode)
        store.insert_demoset(demos, 5.0)
        b = store.gather(store.all_handles())
        final = np.zeros(len(b), bool)
        final[np.cumsum([len(d) for d in demos]) - 1] = True
        bad += not (np.all(b.rewards[final] == 100.0) and np.all(b.rewards[~final] == 5.0) and b.is_demo.all())
        bad += not np.array_equal(b.obs, np.concatenate([d.obs for d in demos]))
    report(2, bad == 0, f"{trials} random relabels + demo insertion in both modes, {bad} mismatches")


def test_3_nstep_oracle():
    rng = np.random.default_rng(3)
    eps = [episode(rng, int(rng.integers(1, 60)), bool(rng.integers(2)), tag=1000.0 * i) for i in range(50)]
    eps = [relabel_success(e, 5.0, 21) if e.success and i % 2 else e for i, e in enumerate(eps)]
    store = ReplayStore(3, 2)
    for e in eps:
        store.push_episode(e)
    lookup = {e.obs[t, 0]: (e, t) for e in eps for t in range(len(e))}
    h = store.all_handles()
    b = store.gather(h)
    worst = 0.0
    mismatches = 0
    for n in (1, 3, 5):
        for gamma in (0.9, 0.99):
            ret, obs, done, steps = store.assemble_nstep(h, n, gamma)
            for i in range(len(h)):
                e, t = lookup[b.obs[i, 0]]
                m = min(n, len(e) - t)
                r = sum(gamma**k * e.rewards[t + k] for k in range(m))
                worst = max(worst, abs(ret[i] - r) / max(abs(r), 1e-300) if r else abs(ret[i]))
                mismatches += not (np.array_equal(obs[i], e.next_obs[t + m - 1]) and done[i] == e.dones[t + m - 1] and steps[i] == m)
    report(3, worst <= 1e-12 and mismatches == 0,
           f"{len(h)} transitions x 6 (n, gamma): max rel error {worst:.1e}, {mismatches} state/done/steps mismatches")


def test_4_per_statistics():
    rng = np.random.default_rng(4)
    store = ReplayStore(3, 2)
    for i in range(100):
        store.push_episode(episode(rng, 1, False, tag=float(i)))
    store.update_priorities(store.all_handles(), rng.uniform(0, 3, 100))
    tree = store.buffers[0].sum_tree
    probs = tree.leaves[:100] / tree.total
    counts = np.zeros(100)
    for _ in range(10):
        counts += np.bincount(tree.sample(100_000, rng), minlength=100)
    dev = np.abs(counts / 1e6 - probs).sum()
    freq_ok = dev <= 0.02

    store = ReplayStore(3, 2, capacity=500)
    for op in range(100_000):
        if op % 10 == 0:
            store.push_episode(episode(rng, int(rng.integers(1, 30)), bool(rng.integers(2))))
        else:
            _, _, h = store.sample_batch(4, rng)
            store.update_priorities(h, rng.exponential(2.0, 4))
    tree = store.buffers[0].sum_tree
    root_err = abs(tree.total - tree.leaves.sum()) / tree.leaves.sum()

    mod = ReplayStore(3, 2, per=PerConfig(mode="modified"))
    p = mod.compute_priorities([0.8, 0.8], actor_terms=[1.1, 1.1], is_demo=[True, False])
    bonus = p[0] - p[1]
    report(4, freq_ok and root_err <= 1e-6 and bonus == mod.per.eps_demo,
           f"sampling deviation sum|f-p| = {dev:.4f} (<= 0.02), root rel error {root_err:.1e} after 1e5 ops, "
           f"demo bonus {bonus} (eps_D {mod.per.eps_demo})")


def test_5_dual_composition():
    rng = np.random.default_rng(5)
    seen = {}
    for fraction, expected in ((0.5, 32), (0.1, 6)):
        store = ReplayStore(3, 2, mode="dual", demo_fraction=fraction)
        store.insert_demoset([episode(rng, 20, True, True) for _ in range(5)], 5.0)
        for _ in range(10):
            store.push_episode(episode(rng, 30, False))
        counts = {int(store.sample_batch(64, rng)[0].is_demo.sum()) for _ in range(10_000)}
        seen[fraction] = (counts, expected)
    ok = all(c == {e} for c, e in seen.values())
    report(5, ok, "demo counts per batch over 1e4 batches: "
           + ", ".join(f"fraction {f}: {sorted(c)} (want {e})" for f, (c, e) in seen.items()))


def test_6_determinism(tmp_path):
    cfg = preset("sacr2_b5").with_overrides(n_seeds=1, base_seed=7, max_env_steps=2000)
    a = run_suite(cfg, suite_dir=str(tmp_path / "a"))
    b = run_suite(cfg, suite_dir=str(tmp_path / "b"))
    fa, fb = tmp_path / "a" / "seed_7" / "metrics.csv", tmp_path / "b" / "seed_7" / "metrics.csv"
    same = a.complete and b.complete and filecmp.cmp(fa, fb, shallow=False)
    report(6, same, f"sacr2_b5 seed 7, 2000 env steps: CSVs {'identical' if same else 'differ'} "
           f"({len(fa.read_text().splitlines()) - 1} episodes)")


# -- desk-scale reproductions ---------------------------------------------------------

_SUITES = {}


def suite(name):
    if name not in _SUITES:
        res = run_suite(preset(name), suite_dir=str(RESULTS / name))
        assert res.complete, f"suite {name} incomplete: {res.failed}"
        _SUITES[name] = res.summary
    return _SUITES[name]


def fmt(x):
    return "inf" if math.isinf(x) else f"{x:.1f}"


def test_7_expert_validity():
    cfg = EnvConfig()
    stream = DemoStream(cfg, 0)
    for _ in range(200):
        stream()
    rate = 1 - stream.failures / stream.attempts
    n = generate_demos(200, cfg, seed=0).mean_length
    report(7, rate >= 0.99 and 15 <= n <= 27,
           f"expert success {rate:.3f} over {stream.attempts} attempts, N = {n} (want >= 0.99, N in [15, 27])")


def test_8_demonstrations_help():
    star, demo, plain = suite("sac_demo_star"), suite("sac_demo"), suite("sac_plain")
    a, b, c = star.mean_episodes_to_90, demo.mean_episodes_to_90, plain.mean_episodes_to_90
    report(8, a < b < c,
           f"episodes to 0.90 (seed mean): sac_demo_star {fmt(a)} < sac_demo {fmt(b)} < sac_plain {fmt(c)}; "
           f"per seed {star.episodes_to_90} / {demo.episodes_to_90} / {plain.episodes_to_90}")


def test_9_sacr2_effect():
    s, d = suite("sacr2_b5"), suite("sac_demo")
    ok = s.n_reached >= 3 and s.mean_episodes_to_90 <= d.mean_episodes_to_90
    report(9, ok, f"sacr2_b5 reached 0.90 on {s.n_reached}/4 seeds, mean {fmt(s.mean_episodes_to_90)} "
           f"vs sac_demo {fmt(d.mean_episodes_to_90)}; per seed {s.episodes_to_90} / {d.episodes_to_90}")


def test_10_relabeling_stabilizes():
    nr, r = suite("sacr2_norelabel_b5"), suite("sacr2_b5")
    collapses = sum(nr.collapsed)
    f_nr, f_r = float(np.mean(nr.final_rolling)), float(np.mean(r.final_rolling))
    report(10, collapses >= 1 or f_nr < f_r,
           f"sacr2_norelabel_b5 collapses on {collapses}/4 seeds; final rolling success {f_nr:.3f} vs sacr2_b5 {f_r:.3f}")


def test_11_no_demonstrations():
    nd, plain = suite("sacr2_nodemo"), suite("sac_plain")
    report(11, nd.n_reached == 4,
           f"sacr2_nodemo reached 0.90 on {nd.n_reached}/4 seeds {nd.episodes_to_90}; "
           f"sac_plain (reference) {plain.n_reached}/4 {plain.episodes_to_90}")


def test_12_demo_batch_fraction():
    fr = suite("sac_demo").demo_batch_fraction
    ok = all(0.08 <= f <= 0.14 for f in fr)
    report(12, ok, "sac_demo steady-state demo batch fraction per seed "
           + ", ".join(f"{f:.3f}" for f in fr) + f" (mean {np.mean(fr):.3f}; want each in [0.08, 0.14])")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
