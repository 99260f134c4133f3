"""Scripted Jacobian-transpose demonstrator and the demonstration file format."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import env as reacher
from .replay import Episode

log = logging.getLogger(__name__)

DEMO_MAGIC = "SACR2DEMO"
DEMO_VERSION = "v1"

# tuned so mean demo length lands near 21-23 steps on the default arm
DEFAULT_GAIN = 0.8
DEFAULT_JITTER = 0.02
MAX_FAILURE_RATE = 0.05


class ExpertError(RuntimeError):
    pass


class DemoFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ExpertConfig:
    gain: float = DEFAULT_GAIN
    jitter: float = DEFAULT_JITTER


def expert_action(state: reacher.ReacherState, config: reacher.EnvConfig,
                  expert: ExpertConfig = ExpertConfig(), rng=None) -> np.ndarray:
    """Jacobian-transpose step toward the target.

    The direction is ``J^T e``; its length is the line-search optimum of the
    linearised error, ``<e, J J^T e> / |J J^T e|^2``, times ``gain``. Scaled
    into action units and clipped, this saturates far from the target and
    shrinks smoothly near it, which avoids the limit cycles a fixed gain runs
    into when one step can overshoot the reach threshold.
    """
    J = reacher.jacobian(state.joint_angles, config.link_lengths)
    err = state.target_position - state.ee_position
    direction = J.T @ err
    moved = J @ direction
    denom = float(moved @ moved)
    length = float(err @ moved) / denom if denom > 1e-12 else 0.0
    a = np.clip(expert.gain * length * direction / config.action_scale, -1.0, 1.0)
    if rng is not None and expert.jitter > 0:
        a = np.clip(a + rng.uniform(-expert.jitter, expert.jitter, size=a.shape), -1.0, 1.0)
    return a


def rollout(config: reacher.EnvConfig, rng: np.random.Generator,
            expert: ExpertConfig = ExpertConfig(), start: reacher.ReacherState | None = None) -> Episode:
    """One expert episode with raw environment rewards."""
    state = reacher.reset(config, rng) if start is None else start
    obs, acts, rews, nxt = [], [], [], []
    while not state.done:
        a = expert_action(state, config, expert, rng)
        obs.append(reacher.observe(state))
        state, r, _, _ = reacher.step(state, a, config)
        acts.append(a)
        rews.append(r)
        nxt.append(reacher.observe(state))
    return Episode.from_steps(obs, acts, rews, nxt, state.success, is_demo=True)


@dataclass
class DemoSet:
    episodes: list
    mean_length: int
    env_hash: str

    def __len__(self):
        return len(self.episodes)

    @property
    def num_transitions(self) -> int:
        return sum(len(ep) for ep in self.episodes)


def mean_episode_length(episodes) -> int:
    # round half away from zero, not banker's rounding
    return int(np.floor(np.mean([len(ep) for ep in episodes]) + 0.5))


class DemoStream:
    """Endless source of successful expert episodes.

    Each attempt draws from its own child stream of the master seed, so the
    sequence is reproducible regardless of how many episodes a consumer takes.
    """

    def __init__(self, config: reacher.EnvConfig, seed, expert: ExpertConfig = ExpertConfig()):
        self.config = config
        self.expert = expert
        self._seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.attempts = 0
        self.failures = 0

    def _attempt(self) -> Episode:
        rng = np.random.default_rng(self._seq.spawn(1)[0])
        self.attempts += 1
        return rollout(self.config, rng, self.expert)

    def __call__(self) -> Episode:
        while True:
            ep = self._attempt()
            if ep.success:
                return ep
            self.failures += 1
            if self.attempts >= 20 and self.failures > MAX_FAILURE_RATE * self.attempts:
                raise ExpertError(
                    f"expert failed {self.failures}/{self.attempts} episodes "
                    f"(> {MAX_FAILURE_RATE:.0%}); check env/expert configuration"
                )
            if self.failures >= 50 and self.failures == self.attempts:
                raise ExpertError("expert never succeeds; check env/expert configuration")


def generate_demos(n_episodes: int, config: reacher.EnvConfig, seed,
                   expert: ExpertConfig = ExpertConfig()) -> DemoSet:
    """Exactly ``n_episodes`` successful expert episodes (failures discarded)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    stream = DemoStream(config, seed, expert)
    episodes = [stream() for _ in range(n_episodes)]
    for i, ep in enumerate(episodes):
        ep.episode_id = i
    if stream.failures:
        log.info("expert: %d/%d attempts failed", stream.failures, stream.attempts)
    return DemoSet(episodes, mean_episode_length(episodes), config.env_hash())


def demo_n(demos: DemoSet) -> int:
    """N used by success relabeling; at least 2."""
    return max(2, demos.mean_length)


def save_demos(demos: DemoSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{DEMO_MAGIC} {DEMO_VERSION} {demos.env_hash} {len(demos.episodes)} {demos.mean_length}\n")
        for eid, ep in enumerate(demos.episodes):
            for t in range(len(ep)):
                fields = [eid, t] + ep.obs[t].tolist() + ep.actions[t].tolist()
                fields += [float(ep.rewards[t])] + ep.next_obs[t].tolist() + [int(ep.dones[t])]
                fh.write(" ".join(repr(f) for f in fields) + "\n")


def load_demos(path, config: reacher.EnvConfig | None = None) -> DemoSet:
    """Parse a demo file; if ``config`` is given its hash must match."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    header = lines[0].split()
    if len(header) != 5 or header[0] != DEMO_MAGIC:
        raise DemoFormatError(f"{path}: not a demonstration file")
    if header[1] != DEMO_VERSION:
        raise DemoFormatError(f"{path}: demo format {header[1]}, expected {DEMO_VERSION}")
    env_hash, n_eps, stored_n = header[2], int(header[3]), int(header[4])
    if config is not None and config.env_hash() != env_hash:
        raise DemoFormatError(
            f"{path}: demos recorded for env {env_hash}, current env is {config.env_hash()}"
        )
    if lines[-1] != "":
        raise DemoFormatError(f"{path}: truncated (no trailing newline)")
    body = lines[1:-1]
    if not body:
        raise DemoFormatError(f"{path}: no transitions")
    width = len(body[0].split())
    # eid, t, s, a, r, s', done  ->  2 + 2*obs + act + 2
    rows = []
    for lineno, line in enumerate(body, start=2):
        parts = line.split()
        if len(parts) != width:
            raise DemoFormatError(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
        rows.append([float(p) for p in parts])
    data = np.array(rows)
    if config is not None:
        obs_dim, act_dim = config.obs_dim, config.act_dim
    else:
        # without a config, infer act_dim from the reacher layout obs = 3*act + 4
        act_dim = (width - 12) // 7
        obs_dim = 3 * act_dim + 4
    if width != 2 * obs_dim + act_dim + 4:
        raise DemoFormatError(f"{path}: record width {width} does not fit obs={obs_dim}, act={act_dim}")
    episodes = []
    eids = data[:, 0].astype(np.int64)
    for eid in range(n_eps):
        rows_e = data[eids == eid]
        if len(rows_e) == 0:
            raise DemoFormatError(f"{path}: episode {eid} missing (file truncated?)")
        if not np.array_equal(rows_e[:, 1], np.arange(len(rows_e))):
            raise DemoFormatError(f"{path}: episode {eid} has non-contiguous steps")
        o = 2
        s = rows_e[:, o : o + obs_dim]; o += obs_dim
        a = rows_e[:, o : o + act_dim]; o += act_dim
        r = rows_e[:, o]; o += 1
        s2 = rows_e[:, o : o + obs_dim]; o += obs_dim
        d = rows_e[:, o].astype(bool)
        if not d[-1]:
            raise DemoFormatError(f"{path}: episode {eid} does not end in success (file truncated?)")
        episodes.append(Episode(s, a, r, s2, d, True, True, eid))
    if len(np.unique(eids)) != n_eps:
        raise DemoFormatError(f"{path}: header promises {n_eps} episodes, found {len(np.unique(eids))}")
    n = mean_episode_length(episodes)
    if n != stored_n:
        raise DemoFormatError(f"{path}: stored N={stored_n} but episodes give N={n}")
    return DemoSet(episodes, n, env_hash)
