"""Rooted planning tree over sampled states.

Node storage is index-based (parallel lists) so the spatial indexes and the
rewiring queues can refer to nodes by integer id. Costs are cost-to-come from
the current root along tree edges, maintained incrementally; an infinite cost
marks a node whose connection is currently severed by an obstacle, and
infinity is kept downward-closed (every descendant of an infinite-cost node
is infinite too).
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

State = tuple[float, ...]


class TreeEdgeError(ValueError):
    """Raised for edge updates that would corrupt the tree structure."""


class PlanTree:
    def __init__(self, root_state: State):
        self.positions: list[State] = [tuple(map(float, root_state))]
        self.parent: list[int] = [-1]
        self.children: list[list[int]] = [[]]
        self.cost: list[float] = [0.0]
        self.root = 0
        # Last-seen epoch stamps for the rewiring passes; the planner bumps
        # its epoch counters instead of clearing these arrays. The goal pass
        # keeps separate membership for its stack and queue: the offshoot
        # walk must be able to claim nodes the root sweep has already queued.
        self.stamp_root: list[int] = [0]
        self.stamp_goal_stack: list[int] = [0]
        self.stamp_goal_queue: list[int] = [0]

    def __len__(self) -> int:
        return len(self.positions)

    # -- queries -------------------------------------------------------------

    def state(self, i: int) -> State:
        return self.positions[i]

    def valid(self, i: int) -> bool:
        return math.isfinite(self.cost[i])

    def edge_len(self, a: int, b: int) -> float:
        return math.dist(self.positions[a], self.positions[b])

    def path_from_root(self, i: int) -> list[int]:
        """Node ids from the root to node i inclusive."""
        chain = []
        while i != -1:
            chain.append(i)
            i = self.parent[i]
        chain.reverse()
        if chain[0] != self.root:
            raise TreeEdgeError("node is disconnected from the root")
        return chain

    def subtree(self, i: int):
        """Iterate node ids of the subtree rooted at i (preorder)."""
        stack = [i]
        while stack:
            j = stack.pop()
            yield j
            stack.extend(self.children[j])

    # -- growth ----------------------------------------------------------------

    def add_node(self, state: State, parent: int) -> int:
        i = len(self.positions)
        self.positions.append(tuple(map(float, state)))
        self.parent.append(parent)
        self.children.append([])
        self.children[parent].append(i)
        self.cost.append(self.cost[parent] + math.dist(self.positions[parent],
                                                       self.positions[i]))
        self.stamp_root.append(0)
        self.stamp_goal_stack.append(0)
        self.stamp_goal_queue.append(0)
        return i

    # -- restructuring -----------------------------------------------------------

    def update_edge(self, child: int, new_parent: int) -> None:
        """Reparent child under new_parent, refusing cycles.

        Costs in the child's subtree are shifted by the cost delta, or fully
        recomputed when the change crosses into or out of infinity.
        """
        if child == self.root:
            raise TreeEdgeError("cannot reparent the root")
        if new_parent == child:
            raise TreeEdgeError("node cannot parent itself")
        old_parent = self.parent[child]
        if new_parent == old_parent:
            return
        # Cycle guard: walking up from new_parent must not pass through child.
        j = new_parent
        while j != -1:
            if j == child:
                raise TreeEdgeError("edge update would create a cycle")
            j = self.parent[j]
        self.children[old_parent].remove(child)
        self.children[new_parent].append(child)
        self.parent[child] = new_parent
        old_cost = self.cost[child]
        new_cost = self.cost[new_parent] + self.edge_len(new_parent, child)
        if math.isfinite(old_cost) and math.isfinite(new_cost):
            delta = new_cost - old_cost
            if delta != 0.0:
                for i in self.subtree(child):
                    self.cost[i] += delta
        else:
            self._recompute_subtree(child)

    def _recompute_subtree(self, start: int) -> None:
        stack = [start]
        while stack:
            i = stack.pop()
            p = self.parent[i]
            self.cost[i] = self.cost[p] + self.edge_len(p, i)
            stack.extend(self.children[i])

    def invalidate(self, i: int) -> None:
        """Mark node i and its whole subtree unreachable (infinite cost)."""
        if i == self.root:
            raise TreeEdgeError("cannot invalidate the root")
        for j in self.subtree(i):
            self.cost[j] = math.inf

    def set_root(self, new_root: int) -> None:
        """Re-root at an existing node by reversing the parent chain, then
        recompute every cost from the new root.

        The undirected edge set is unchanged. Recomputation resurrects
        invalidated subtrees; callers that track blocked edges must re-check
        them afterwards.
        """
        if new_root == self.root:
            return
        chain = []
        j = new_root
        while j != -1:
            chain.append(j)
            j = self.parent[j]
        if chain[-1] != self.root:
            raise TreeEdgeError("new root is disconnected from the root")
        for a, b in zip(chain, chain[1:]):   # b was a's parent; flip the edge
            self.children[b].remove(a)
            self.children[a].append(b)
            self.parent[b] = a
        self.parent[new_root] = -1
        self.root = new_root
        self.cost[new_root] = 0.0
        queue = deque([new_root])
        while queue:
            i = queue.popleft()
            ci = self.cost[i]
            for c in self.children[i]:
                self.cost[c] = ci + self.edge_len(i, c)
                queue.append(c)

    # -- export ------------------------------------------------------------------

    def snapshot(self) -> dict:
        """Arrays view for serialization: positions (n,d), parents (n,), costs
        (n,). The root's parent is -1."""
        return {
            "positions": np.asarray(self.positions, dtype=np.float64),
            "parents": np.asarray(self.parent, dtype=np.int64),
            "costs": np.asarray(self.cost, dtype=np.float64),
        }
