"""Array-backed segment trees for proportional sampling."""

from __future__ import annotations

import numpy as np


class SegmentTree:
    """Binary tree over ``capacity`` leaves, stored heap-style in one array.

    Node ``i`` has children ``2i`` and ``2i + 1``; the root is node 1 and leaf
    ``j`` lives at ``size + j`` where ``size`` is the next power of two.
    Updates recompute parents from their children, so the root never drifts
    from the reduction of the leaves by more than one rounding per level.
    """

    def __init__(self, capacity: int, op=np.add, neutral: float = 0.0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        size = 1
        while size < self.capacity:
            size *= 2
        self._size = size
        self._op = op
        self._neutral = neutral
        self._tree = np.full(2 * size, neutral, dtype=np.float64)

    def __len__(self):
        return self.capacity

    def __getitem__(self, idx):
        return self._tree[self._size + np.asarray(idx)]

    def update(self, indices, values) -> None:
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), indices.shape)
        if indices.size == 0:
            return
        if indices.min() < 0 or indices.max() >= self.capacity:
            raise IndexError("leaf index out of range")
        nodes = indices + self._size
        # later duplicates win, matching sequential assignment
        self._tree[nodes] = values
        tree, op = self._tree, self._op
        # duplicate parents just recompute the same value
        nodes = nodes // 2
        while nodes[0] >= 1:
            tree[nodes] = op(tree[2 * nodes], tree[2 * nodes + 1])
            nodes = nodes // 2

    def __setitem__(self, idx, value):
        self.update(idx, value)

    def reduce(self) -> float:
        return float(self._tree[1])

    @property
    def leaves(self) -> np.ndarray:
        return self._tree[self._size : self._size + self.capacity]


class SumTree(SegmentTree):
    def __init__(self, capacity: int):
        super().__init__(capacity, np.add, 0.0)

    @property
    def total(self) -> float:
        return float(self._tree[1])

    def find_prefixsum(self, mass) -> np.ndarray:
        """Leaf ``j`` such that sum(leaves[:j]) <= mass < sum(leaves[:j+1])."""
        mass = np.atleast_1d(np.asarray(mass, dtype=np.float64)).copy()
        node = np.ones(mass.shape, dtype=np.int64)
        while node[0] < self._size:
            left = 2 * node
            left_val = self._tree[left]
            go_right = mass >= left_val
            mass = np.where(go_right, mass - left_val, mass)
            node = left + go_right
        leaf = node - self._size
        # rounding can push a draw past the last populated leaf
        bad = (leaf >= self.capacity) | (self._tree[node] <= 0.0)
        if bad.any():
            nonzero = np.flatnonzero(self.leaves > 0.0)
            if nonzero.size == 0:
                raise ValueError("cannot sample from an all-zero tree")
            pos = np.searchsorted(nonzero, np.minimum(leaf[bad], self.capacity - 1), side="right") - 1
            leaf[bad] = nonzero[np.clip(pos, 0, nonzero.size - 1)]
        return leaf

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        total = self.total
        if total <= 0.0:
            raise ValueError("cannot sample from an all-zero tree")
        return self.find_prefixsum(rng.random(n) * total)


class MaxTree(SegmentTree):
    def __init__(self, capacity: int):
        super().__init__(capacity, np.maximum, 0.0)

    @property
    def max(self) -> float:
        return float(self._tree[1])
