import numpy as np
import pytest

from sacr2 import env as reacher
from sacr2.env import EnvConfig
from sacr2.expert import (
    DemoFormatError,
    ExpertConfig,
    ExpertError,
    expert_action,
    generate_demos,
    load_demos,
    rollout,
    save_demos,
)


@pytest.fixture(scope="module")
def demos():
    return generate_demos(200, EnvConfig(), seed=0)


def test_expert_reaches_99_percent_of_targets(cfg):
    rng = np.random.default_rng(2024)
    wins = sum(rollout(cfg, rng).success for _ in range(1000))
    assert wins >= 990


def test_action_near_zero_at_target(cfg):
    s = reacher.make_state(reacher.home_angles(cfg), [0, 0], cfg)
    s = reacher.make_state(reacher.home_angles(cfg), s.ee_position, cfg)
    assert np.linalg.norm(expert_action(s, cfg)) < 0.05


def test_actions_bounded(cfg, rng):
    for _ in range(50):
        ep = rollout(cfg, rng)
        assert np.abs(ep.actions).max() <= 1.0


def test_demoset_contents(demos, cfg):
    assert len(demos) == 200
    assert 15 <= demos.mean_length <= 27
    lengths = [len(ep) for ep in demos.episodes]
    assert demos.mean_length == int(np.floor(np.mean(lengths) + 0.5))
    for ep in demos.episodes:
        assert ep.success and ep.is_demo
        assert ep.rewards[-1] == cfg.sparse_reward and not ep.rewards[:-1].any()
        assert ep.dones[-1] and not ep.dones[:-1].any()
        assert len(ep) <= cfg.max_steps
    assert demos.env_hash == cfg.env_hash()


def test_jitter_gives_action_diversity(cfg):
    a = rollout(cfg, np.random.default_rng(1), start=reacher.make_state(reacher.home_angles(cfg), [0.5, 0.3], cfg))
    b = rollout(cfg, np.random.default_rng(2), start=reacher.make_state(reacher.home_angles(cfg), [0.5, 0.3], cfg))
    assert not np.array_equal(a.actions[0], b.actions[0])
    assert np.abs(a.actions[0] - b.actions[0]).max() <= 0.04 + 1e-12


def test_same_seed_same_file_bytes(tmp_path, cfg):
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    save_demos(generate_demos(10, cfg, seed=5), p1)
    save_demos(generate_demos(10, cfg, seed=5), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_round_trip(tmp_path, demos, cfg):
    p = tmp_path / "demos.txt"
    save_demos(demos, p)
    back = load_demos(p, cfg)
    assert back.mean_length == demos.mean_length and back.env_hash == demos.env_hash
    assert len(back) == len(demos)
    for a, b in zip(demos.episodes, back.episodes):
        for f in ("obs", "actions", "rewards", "next_obs", "dones"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        assert a.success == b.success
    # without a config the layout is inferred
    assert load_demos(p).num_transitions == demos.num_transitions


def test_wrong_env_hash_names_both(tmp_path, cfg):
    p = tmp_path / "demos.txt"
    save_demos(generate_demos(3, cfg, seed=1), p)
    other = EnvConfig(reach_threshold=0.04)
    with pytest.raises(DemoFormatError) as exc:
        load_demos(p, other)
    assert cfg.env_hash() in str(exc.value) and other.env_hash() in str(exc.value)


@pytest.mark.parametrize("cut", [0.5, 0.97])
def test_truncated_file_is_an_error(tmp_path, cfg, cut):
    p = tmp_path / "demos.txt"
    save_demos(generate_demos(5, cfg, seed=1), p)
    data = p.read_bytes()
    p.write_bytes(data[: int(len(data) * cut)])
    with pytest.raises(DemoFormatError):
        load_demos(p, cfg)


def test_truncated_at_line_boundary_is_an_error(tmp_path, cfg):
    p = tmp_path / "demos.txt"
    save_demos(generate_demos(5, cfg, seed=1), p)
    lines = p.read_text().splitlines(keepends=True)
    p.write_text("".join(lines[:-3]))
    with pytest.raises(DemoFormatError):
        load_demos(p, cfg)


def test_version_mismatch(tmp_path, cfg):
    p = tmp_path / "demos.txt"
    save_demos(generate_demos(2, cfg, seed=1), p)
    p.write_text(p.read_text().replace("SACR2DEMO v1", "SACR2DEMO v9", 1))
    with pytest.raises(DemoFormatError, match="v9"):
        load_demos(p, cfg)


def test_stored_n_must_match(tmp_path, cfg):
    p = tmp_path / "demos.txt"
    d = generate_demos(4, cfg, seed=1)
    save_demos(d, p)
    text = p.read_text().split("\n", 1)
    head = text[0].split()
    head[-1] = str(int(head[-1]) + 3)
    p.write_text(" ".join(head) + "\n" + text[1])
    with pytest.raises(DemoFormatError):
        load_demos(p, cfg)


def test_broken_expert_aborts(cfg):
    with pytest.raises(ExpertError):
        generate_demos(5, cfg, seed=0, expert=ExpertConfig(gain=0.0, jitter=0.0))


def test_zero_episodes_rejected(cfg):
    with pytest.raises(ValueError):
        generate_demos(0, cfg, seed=0)
