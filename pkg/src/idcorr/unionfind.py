"""Array-backed disjoint-set forest over the integers ``0 .. n-1``."""

from __future__ import annotations

import numpy as np


class UnionFind:
    """Disjoint sets with path compression.

    Roots are always the smallest member of their set, so ``find`` doubles as
    "smallest index in my component".
    """

    def __init__(self, n: int):
        self.parent = list(range(n))

    def __len__(self) -> int:
        return len(self.parent)

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        """Join the sets of a and b; return False if they were already joined."""
        ra = self.find(a)
        rb = self.find(b)
        if ra == rb:
            return False
        if ra < rb:
            self.parent[rb] = ra
        else:
            self.parent[ra] = rb
        return True

    def union_all(self, pairs) -> None:
        for a, b in pairs:
            self.union(int(a), int(b))

    def roots(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)

    def components(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            groups.setdefault(self.find(i), []).append(i)
        return [groups[r] for r in sorted(groups)]
