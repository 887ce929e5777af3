"""Nearest-neighbor indexes over tree nodes.

The planner needs two query families over the same growing id set:

- Euclidean: nearest node and all nodes within a radius (wiring sphere).
  Served by a flat coordinate array swept with one vectorized pass per call.
- Assisting metric: nearest node under d_A. For the diffusion metric this is
  Euclidean distance in embedding space, served by per-component VP-trees
  rebuilt lazily as the set doubles, with a linear buffer for fresh inserts.
  The euclidean kind aliases the flat store; the geodesic kind brute-forces
  against a single cached distance field per query.

All queries break distance ties toward the smaller node id, so results are
independent of internal layout.
"""

from __future__ import annotations

import math

import numpy as np

State = tuple[float, ...]


class _PointStore:
    """Append-only array of 2D positions answering exact distance queries.

    A linear sweep sounds crude next to a spatial hash, but node counts stay
    in the low tens of thousands and one fused numpy pass over a contiguous
    array beats walking hash buckets from interpreted code at every size the
    planner reaches.
    """

    def __init__(self):
        self._xy = np.empty((256, 2))
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def insert(self, i: int, s: State) -> None:
        assert i == self._n, "ids must be inserted in sequence"
        if self._n == len(self._xy):
            grown = np.empty((2 * self._n, 2))
            grown[: self._n] = self._xy
            self._xy = grown
        self._xy[self._n, 0] = s[0]
        self._xy[self._n, 1] = s[1]
        self._n += 1

    def _dists(self, q: State):
        xy = self._xy[: self._n]
        return np.hypot(xy[:, 0] - q[0], xy[:, 1] - q[1])

    def nearest(self, q: State) -> int:
        if not self._n:
            raise ValueError("empty index")
        # argmin keeps the first minimum, so exact ties go to the lower id
        return int(np.argmin(self._dists(q)))

    def within(self, q: State, r: float) -> list[int]:
        """Ids inside the closed ball of radius r, ascending id order."""
        return np.flatnonzero(self._dists(q) <= r).tolist()


class _VPNode:
    __slots__ = ("id", "coords", "mu", "inner", "outer")

    def __init__(self, id_, coords):
        self.id = id_
        self.coords = coords
        self.mu = 0.0
        self.inner = None
        self.outer = None


def _vp_build(items: list[tuple[tuple[float, ...], int]]):
    """items: (coords, id). Deterministic: first item is the vantage point,
    split at the median (distance, id)."""
    if not items:
        return None
    (vp_coords, vp_id), rest = items[0], items[1:]
    node = _VPNode(vp_id, vp_coords)
    if rest:
        ranked = sorted(((math.dist(vp_coords, c), i, (c, i)) for c, i in rest))
        mid = len(ranked) // 2
        node.mu = ranked[mid][0]
        node.inner = _vp_build([entry for _, _, entry in ranked[:mid]])
        node.outer = _vp_build([entry for _, _, entry in ranked[mid:]])
    return node


def _vp_nearest(root, q: tuple[float, ...], best: tuple[float, int]):
    stack = [root]
    while stack:
        node = stack.pop()
        if node is None:
            continue
        d = math.dist(q, node.coords)
        if (d, node.id) < best:
            best = (d, node.id)
        if node.inner is None and node.outer is None:
            continue
        if d < node.mu:
            near, far, gap = node.inner, node.outer, node.mu - d
        else:
            near, far, gap = node.outer, node.inner, d - node.mu
        if gap <= best[0]:          # non-strict keeps exact tie-breaks
            stack.append(far)
        stack.append(near)          # popped first
    return best


class _VPForest:
    """Per-component VP-trees with a linear buffer; rebuilds when the
    buffered fraction reaches the built size."""

    def __init__(self):
        self.entries: list[tuple[int, tuple[float, ...]]] = []  # (comp, coords)
        self.trees: dict[int, _VPNode] = {}
        self.built = 0

    def insert(self, i: int, comp: int, coords: tuple[float, ...]) -> None:
        assert i == len(self.entries), "ids must be inserted in sequence"
        self.entries.append((comp, coords))
        pending = len(self.entries) - self.built
        if pending > max(64, self.built):
            self.rebuild()

    def rebuild(self) -> None:
        groups: dict[int, list[tuple[tuple[float, ...], int]]] = {}
        for i, (comp, coords) in enumerate(self.entries):
            groups.setdefault(comp, []).append((coords, i))
        self.trees = {comp: _vp_build(items) for comp, items in groups.items()}
        self.built = len(self.entries)

    def nearest(self, comp: int, coords: tuple[float, ...]) -> tuple[float, int]:
        best = (math.inf, -1)
        tree = self.trees.get(comp)
        if tree is not None:
            best = _vp_nearest(tree, coords, best)
        for i in range(self.built, len(self.entries)):
            c, pc = self.entries[i]
            if c != comp:
                continue
            d = math.dist(coords, pc)
            if (d, i) < best:
                best = (d, i)
        return best


class DualIndex:
    """Euclidean and assisting-metric queries over the planner's node set.

    Nodes are inserted with sequential integer ids matching the tree's.
    """

    def __init__(self, metric):
        self.metric = metric
        self.grid = _PointStore()
        self.kind = metric.kind
        if self.kind == "diffusion":
            self._forest = _VPForest()
        elif self.kind == "geodesic":
            self._snapped: list[int] = []

    def __len__(self) -> int:
        return len(self.grid)

    def insert(self, i: int, s: State) -> None:
        self.grid.insert(i, s)
        if self.kind == "diffusion":
            comp, coords = self.metric.embed(s)
            self._forest.insert(i, comp, coords)
        elif self.kind == "geodesic":
            self._snapped.append(self.metric.snap(s))

    def nearest_euclid(self, q: State) -> int:
        return self.grid.nearest(q)

    def within_euclid(self, q: State, r: float) -> list[int]:
        return self.grid.within(q, r)

    def nearest_assist(self, q: State) -> int:
        """Nearest node under the assisting metric. When every node is
        infinitely far (other component), falls back to Euclidean nearest so
        the caller always gets a node."""
        if self.kind == "euclidean":
            return self.grid.nearest(q)
        if self.kind == "diffusion":
            comp, coords = self.metric.embed(q)
            _, i = self._forest.nearest(comp, coords)
            if i < 0:
                return self.grid.nearest(q)
            return i
        # geodesic: one shortest-path field from the query serves every node
        qn = self.metric.snap(q)
        if qn >= 0:
            field = self.metric.field_from(qn)
            best = (math.inf, -1)
            for i, sn in enumerate(self._snapped):
                d = field[sn] if sn >= 0 else math.inf
                if d < best[0] or (d == best[0] and i < best[1]):
                    best = (d, i)
            if best[1] >= 0 and math.isfinite(best[0]):
                return best[1]
        return self.grid.nearest(q)

    def assist_distance(self, a: State, b: State) -> float:
        if self.kind == "euclidean":
            return math.dist(a, b)
        return self.metric.distance(a, b)
