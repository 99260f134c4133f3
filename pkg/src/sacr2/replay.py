"""Transition storage: episodes, reward relabeling, prioritized single/dual
replay buffers and n-step return assembly.

Rewards are relabeled destructively at insertion time. Demonstrations get
the bonus ``b`` on every non-final transition; successful agent episodes
get it on their last ``N - 1`` non-final transitions.

``done`` on a stored transition means the episode *terminated* (the target
was reached). Time-limit truncation is not terminal, so the critic keeps
bootstrapping through it; the final transition of every episode carries
``last=True`` instead, which is what bounds n-step lookahead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .sumtree import MaxTree, SumTree

log = logging.getLogger(__name__)


class ReplayError(RuntimeError):
    pass


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    is_demo: bool
    episode_id: int
    step_idx: int


@dataclass
class Episode:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    success: bool
    is_demo: bool = False
    episode_id: int = -1

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.next_obs = np.asarray(self.next_obs, dtype=np.float64)
        self.dones = np.asarray(self.dones, dtype=bool)
        n = len(self.rewards)
        if n == 0:
            raise ValueError("empty episode")
        for name in ("obs", "actions", "next_obs", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"episode field {name} has length {len(getattr(self, name))}, expected {n}")
        if self.dones[:-1].any():
            raise ValueError("done flag set before the final transition")

    def __len__(self):
        return len(self.rewards)

    def copy(self) -> "Episode":
        return replace(
            self,
            obs=self.obs.copy(),
            actions=self.actions.copy(),
            rewards=self.rewards.copy(),
            next_obs=self.next_obs.copy(),
            dones=self.dones.copy(),
        )

    def transitions(self) -> list:
        return [
            Transition(
                self.obs[i], self.actions[i], float(self.rewards[i]), self.next_obs[i],
                bool(self.dones[i]), self.is_demo, self.episode_id, i,
            )
            for i in range(len(self))
        ]

    @classmethod
    def from_steps(cls, obs, actions, rewards, next_obs, success, is_demo=False) -> "Episode":
        dones = np.zeros(len(rewards), dtype=bool)
        dones[-1] = bool(success)
        return cls(np.array(obs), np.array(actions), np.array(rewards), np.array(next_obs), dones, bool(success), is_demo)


def relabel_demo(episode: Episode, b: float) -> Episode:
    """Copy with every non-final reward set to ``b``."""
    out = episode.copy()
    out.rewards[:-1] = b
    return out


def relabel_success(episode: Episode, b: float, n_avg: int) -> Episode:
    """Copy with the last ``min(N - 1, len - 1)`` non-final rewards set to ``b``."""
    if not episode.success:
        raise ReplayError("relabel_success called on an unsuccessful episode")
    if n_avg < 2:
        raise ValueError("N must be >= 2")
    out = episode.copy()
    T = len(out)
    k = min(n_avg - 1, T - 1)
    out.rewards[T - 1 - k : T - 1] = b
    return out


@dataclass
class PerConfig:
    alpha: float = 0.3
    beta: float = 1.0
    eps: float = 1e-3
    eps_demo: float = 1.0
    lambda_actor: float = 1.0
    mode: str = "standard"  # standard | modified
    importance_weights: bool = True

    def __post_init__(self):
        if self.mode not in ("standard", "modified"):
            raise ValueError(f"unknown PER mode {self.mode!r}")


@dataclass
class Handles:
    buffer: np.ndarray
    slot: np.ndarray
    stamp: np.ndarray

    def __len__(self):
        return len(self.slot)

    def __getitem__(self, idx):
        return Handles(self.buffer[idx], self.slot[idx], self.stamp[idx])


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    is_demo: np.ndarray
    weights: np.ndarray
    handles: Handles | None = None
    # n-step fields, filled by ReplayStore.assemble_nstep
    nstep_returns: np.ndarray | None = None
    nstep_obs: np.ndarray | None = None
    nstep_dones: np.ndarray | None = None
    nstep_steps: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    def with_nstep(self, returns, obs, dones, steps) -> "Batch":
        return replace(self, nstep_returns=returns, nstep_obs=obs, nstep_dones=dones, nstep_steps=steps)


class RingBuffer:
    """Fixed-capacity FIFO of transitions with a priority sum tree."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.last = np.zeros(capacity, dtype=bool)
        self.is_demo = np.zeros(capacity, dtype=bool)
        self.episode_id = np.full(capacity, -1, dtype=np.int64)
        self.step_idx = np.zeros(capacity, dtype=np.int64)
        self.stamp = np.full(capacity, -1, dtype=np.int64)
        self.priority = np.zeros(capacity)
        self.sum_tree = SumTree(capacity)
        self.max_tree = MaxTree(capacity)
        self.ptr = 0
        self.size = 0
        self.writes = 0
        self.demo_count = 0

    def add(self, episode: Episode, episode_id: int, priority_leaf: float) -> np.ndarray:
        T = len(episode)
        slots = (self.ptr + np.arange(T)) % self.capacity
        if T > self.capacity:
            # only the tail survives; keep the write order consistent
            slots = slots[-self.capacity :]
            src = slice(T - self.capacity, T)
        else:
            src = slice(0, T)
        live = self.stamp[slots] >= 0
        self.demo_count -= int(np.count_nonzero(self.is_demo[slots] & live))
        self.obs[slots] = episode.obs[src]
        self.actions[slots] = episode.actions[src]
        self.rewards[slots] = episode.rewards[src]
        self.next_obs[slots] = episode.next_obs[src]
        self.dones[slots] = episode.dones[src]
        self.last[slots] = False
        self.last[slots[-1]] = True
        self.is_demo[slots] = episode.is_demo
        self.episode_id[slots] = episode_id
        self.step_idx[slots] = np.arange(T)[src]
        self.stamp[slots] = self.writes + np.arange(len(slots))
        self.writes += len(slots)
        if episode.is_demo:
            self.demo_count += len(slots)
        self.ptr = (self.ptr + T) % self.capacity
        self.size = min(self.size + T, self.capacity)
        self.set_leaf(slots, np.full(len(slots), priority_leaf))
        return slots

    def set_leaf(self, slots, leaf_values) -> None:
        self.sum_tree.update(slots, leaf_values)
        self.max_tree.update(slots, leaf_values)


class ReplayStore:
    """Single- or dual-buffer prioritized replay.

    In ``single`` mode demonstrations and agent data share one buffer and the
    demo share is held near ``target_demo_ratio`` by
    :meth:`maintain_demo_ratio`. In ``dual`` mode demos live in their own
    buffer and every batch contains exactly ``round(demo_fraction * B)`` of them.
    """

    AGENT, DEMO = 0, 1

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        mode: str = "single",
        capacity: int = 10**6,
        demo_capacity: int = 10**5,
        demo_fraction: float = 0.10,
        target_demo_ratio: float = 0.10,
        per: PerConfig | None = None,
    ):
        if mode not in ("single", "dual"):
            raise ValueError(f"unknown buffer mode {mode!r}")
        self.mode = mode
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.demo_fraction = demo_fraction
        self.target_demo_ratio = target_demo_ratio
        self.per = per or PerConfig()
        self.buffers = [RingBuffer(capacity, obs_dim, act_dim)]
        if mode == "dual":
            self.buffers.append(RingBuffer(demo_capacity, obs_dim, act_dim))
        self.next_episode_id = 0
        self.stale_updates = 0

    # -- bookkeeping -------------------------------------------------------
    def __len__(self):
        return sum(b.size for b in self.buffers)

    @property
    def demo_count(self) -> int:
        return sum(b.demo_count for b in self.buffers)

    @property
    def demo_ratio(self) -> float:
        return self.demo_count / max(len(self), 1)

    def _leaf_for_new(self, buf: RingBuffer) -> float:
        m = buf.max_tree.max
        return m if m > 0 else 1.0

    def _insert(self, buf_id: int, episode: Episode) -> np.ndarray:
        buf = self.buffers[buf_id]
        eid = self.next_episode_id
        self.next_episode_id += 1
        leaf = self._leaf_for_new(buf)
        slots = buf.add(episode, eid, leaf)
        buf.priority[slots] = leaf ** (1.0 / self.per.alpha) if self.per.alpha > 0 else leaf
        return slots

    # -- insertion ---------------------------------------------------------
    def insert_demoset(self, demos, b: float) -> "ReplayStore":
        """Insert demonstration episodes with non-final rewards set to ``b``."""
        if b < 0:
            raise ValueError("reward bonus must be non-negative")
        episodes = demos.episodes if hasattr(demos, "episodes") else demos
        for ep in episodes:
            self.insert_demo_episode(ep, b)
        return self

    def insert_demo_episode(self, episode: Episode, b: float) -> None:
        ep = relabel_demo(episode, b)
        ep.is_demo = True
        self._insert(self.DEMO if self.mode == "dual" else self.AGENT, ep)

    def push_episode(self, episode: Episode) -> "ReplayStore":
        """Append a collected episode (already relabeled if applicable)."""
        self._insert(self.AGENT, episode)
        return self

    # -- sampling ----------------------------------------------------------
    def _draw(self, buf_id: int, n: int, rng: np.random.Generator):
        buf = self.buffers[buf_id]
        if buf.size == 0:
            raise ReplayError("cannot sample from an empty buffer")
        slots = buf.sum_tree.sample(n, rng)
        probs = buf.sum_tree[slots] / buf.sum_tree.total
        weights = (buf.size * probs) ** (-self.per.beta)
        return slots, weights

    def demo_batch_count(self, batch_size: int) -> int:
        # python's round() is half-to-even
        return int(round(self.demo_fraction * batch_size))

    def sample_batch(self, batch_size: int, rng: np.random.Generator):
        """Returns ``(batch, importance_weights, handles)``."""
        if len(self) == 0:
            raise ReplayError("cannot sample from an empty store")
        if self.mode == "single":
            parts = [(self.AGENT, batch_size)]
        else:
            n_demo = self.demo_batch_count(batch_size)
            parts = [(self.DEMO, n_demo), (self.AGENT, batch_size - n_demo)]
        buf_ids, slots, weights = [], [], []
        for buf_id, n in parts:
            if n == 0:
                continue
            s, w = self._draw(buf_id, n, rng)
            buf_ids.append(np.full(n, buf_id))
            slots.append(s)
            weights.append(w)
        buf_ids = np.concatenate(buf_ids)
        slots = np.concatenate(slots)
        weights = np.concatenate(weights)
        if self.per.importance_weights:
            weights = weights / weights.max()
        else:
            weights = np.ones_like(weights)
        stamps = np.empty(len(slots), dtype=np.int64)
        for i, buf in enumerate(self.buffers):
            m = buf_ids == i
            stamps[m] = buf.stamp[slots[m]]
        handles = Handles(buf_ids, slots, stamps)
        batch = self.gather(handles)
        batch.weights = weights
        return batch, weights, handles

    def gather(self, handles: Handles) -> Batch:
        B = len(handles)
        obs = np.empty((B, self.obs_dim))
        act = np.empty((B, self.act_dim))
        rew = np.empty(B)
        nxt = np.empty((B, self.obs_dim))
        done = np.empty(B, dtype=bool)
        demo = np.empty(B, dtype=bool)
        for i, buf in enumerate(self.buffers):
            m = handles.buffer == i
            if not m.any():
                continue
            s = handles.slot[m]
            obs[m] = buf.obs[s]
            act[m] = buf.actions[s]
            rew[m] = buf.rewards[s]
            nxt[m] = buf.next_obs[s]
            done[m] = buf.dones[s]
            demo[m] = buf.is_demo[s]
        return Batch(obs, act, rew, nxt, done, demo, np.ones(B), handles)

    def all_handles(self) -> Handles:
        bufs, slots, stamps = [], [], []
        for i, buf in enumerate(self.buffers):
            s = np.flatnonzero(buf.stamp >= 0)
            bufs.append(np.full(len(s), i))
            slots.append(s)
            stamps.append(buf.stamp[s])
        return Handles(np.concatenate(bufs), np.concatenate(slots), np.concatenate(stamps))

    # -- priorities --------------------------------------------------------
    def compute_priorities(self, td_errors, actor_terms=None, is_demo=None) -> np.ndarray:
        td = np.asarray(td_errors, dtype=np.float64)
        p = td**2 + self.per.eps
        if self.per.mode == "modified":
            if actor_terms is not None:
                p = p + self.per.lambda_actor * np.asarray(actor_terms, dtype=np.float64) ** 2
            if is_demo is not None:
                p = p + self.per.eps_demo * np.asarray(is_demo, dtype=bool)
        return p

    def update_priorities(self, handles: Handles, td_errors, actor_terms=None) -> "ReplayStore":
        """Set priorities of still-live handles; stale ones are skipped and counted."""
        td = np.asarray(td_errors, dtype=np.float64)
        act = None if actor_terms is None else np.asarray(actor_terms, dtype=np.float64)
        for i, buf in enumerate(self.buffers):
            m = handles.buffer == i
            if not m.any():
                continue
            slots = handles.slot[m]
            fresh = buf.stamp[slots] == handles.stamp[m]
            self.stale_updates += int(np.count_nonzero(~fresh))
            if not fresh.any():
                continue
            slots = slots[fresh]
            p = self.compute_priorities(
                td[m][fresh], None if act is None else act[m][fresh], buf.is_demo[slots]
            )
            # a slot sampled twice keeps its last value, as with sequential updates
            buf.priority[slots] = p
            buf.set_leaf(slots, p**self.per.alpha)
        return self

    # -- n-step ------------------------------------------------------------
    def assemble_nstep(self, handles: Handles, n: int, gamma: float):
        """n-step returns that never look past the end of an episode.

        Returns ``(returns, obs_after, done, steps_used)`` arrays.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        B = len(handles)
        ret = np.zeros(B)
        steps = np.zeros(B, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        obs_after = np.empty((B, self.obs_dim))
        for i, buf in enumerate(self.buffers):
            m = handles.buffer == i
            if not m.any():
                continue
            start = handles.slot[m]
            eid = buf.episode_id[start]
            r = np.zeros(len(start))
            used = np.zeros(len(start), dtype=np.int64)
            d = np.zeros(len(start), dtype=bool)
            final = start.copy()
            active = np.ones(len(start), dtype=bool)
            disc = 1.0
            for k in range(n):
                idx = (start + k) % buf.capacity
                active &= buf.episode_id[idx] == eid
                if not active.any():
                    break
                r += np.where(active, disc * buf.rewards[idx], 0.0)
                used += active
                final = np.where(active, idx, final)
                d |= active & buf.dones[idx]
                active &= ~buf.last[idx]
                disc *= gamma
            ret[m] = r
            steps[m] = used
            done[m] = d
            obs_after[m] = buf.next_obs[final]
        return ret, obs_after, done, steps

    # -- demo ratio (single mode) -----------------------------------------
    def maintain_demo_ratio(self, demo_source, b: float) -> int:
        """Top up demonstrations until they make up ``target_demo_ratio`` of
        the store. ``demo_source()`` must return one successful Episode.
        Returns the number of episodes inserted. No-op in dual mode."""
        if self.mode != "single":
            return 0
        added = 0
        while self.demo_count < self.target_demo_ratio * len(self):
            ep = demo_source()
            if ep is None or not ep.success:
                raise ReplayError("demo source failed to produce a successful episode")
            self.insert_demo_episode(ep, b)
            added += 1
        return added

    # -- debugging ---------------------------------------------------------
    def dump(self, path) -> None:
        """Write every live transition plus its priority, one record per line."""
        h = self.all_handles()
        with open(path, "w") as fh:
            fh.write(f"SACR2BUFFER v1 {self.mode} {len(h)}\n")
            for bi, slot in zip(h.buffer, h.slot):
                buf = self.buffers[bi]
                fields = [int(buf.episode_id[slot]), int(buf.step_idx[slot])]
                fields += buf.obs[slot].tolist() + buf.actions[slot].tolist() + [float(buf.rewards[slot])]
                fields += buf.next_obs[slot].tolist() + [int(buf.dones[slot]), float(buf.priority[slot])]
                fh.write(" ".join(repr(f) for f in fields) + "\n")

    def rewards_snapshot(self) -> np.ndarray:
        return np.concatenate([buf.rewards[buf.stamp >= 0] for buf in self.buffers])
