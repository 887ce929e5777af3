"""Real-time multi-query tree planner with assisting-metric guidance.

One planner instance owns a tree rooted at the agent, grows it by sampled
expansion, keeps it optimized by two rewiring passes (outward from the root,
and targeted along goal offshoots), and advances the root/agent each step.
The assisting metric steers growth through regions where straight-line
reasoning fails; all tree edge costs remain Euclidean.

Budgets run in two modes: "deterministic" counts operations (expansions per
step, rewire visits per pass, steer samples), giving bit-reproducible runs
for tests and benchmarks; "wallclock" uses per-phase time slices for live
sessions.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .env import (
    Environment,
    Rect,
    sample_free,
    sample_rewire_ellipse,
    sample_sphere,
    segment_hits_rect,
)
from .metrics import make_assisting_metric
from .spatial import DualIndex
from .tree import PlanTree

State = tuple[float, ...]


@dataclass
class PlannerConfig:
    metric: str = "diffusion"         # assisting metric kind
    nearest_mode: str = "paper"       # paper | euclid | assist
    s_max: float = 5.0                # wiring radius / root shift gate (m)
    k_max: int = 20                   # neighborhood cap in the insert gate
    alpha: float = 0.1                # sampling split: goal bias
    beta: float = 2.0                 # sampling split: uniform vs ellipse
    unit_step: bool = False           # steer 1 m, validated on the stepped edge
    random_rewire: bool = False       # random-node pass instead of goal pass
    goal_reached_tol: float | None = None   # default s_max
    agent_speed: float = 4.0          # m/s
    step_dt: float = 0.25             # agent integration step (s)
    mode: str = "deterministic"       # deterministic | wallclock
    # deterministic budgets
    expansions_per_step: int = 15
    steer_samples: int = 10
    # Node visits per step. Sized against expansions_per_step so per-step
    # repair keeps pace with growth without dominating the step: the root
    # sweep touches every node once per epoch anyway, while the goal pass
    # needs enough budget for its descent to outrun path staleness during
    # travel (hundreds of visits over a typical leg).
    rewire_root_visits: int = 4
    rewire_goal_visits: int = 10
    # wallclock budgets (seconds)
    t_exp: float = 0.15
    t_root: float = 0.002
    t_goal: float = 0.004
    t_steer: float = 0.002
    seed: int = 0

    def tol(self) -> float:
        return self.s_max if self.goal_reached_tol is None else self.goal_reached_tol


# Named planner variants used across benchmarks and the service. The rtrrt
# pair keeps the legacy behavior: unit-length steering judged on the stepped
# edge only, rewiring at random nodes, and a tighter neighborhood cap.
VARIANTS: dict[str, dict] = {
    "amrrt_e": dict(metric="euclidean"),
    "amrrt_d": dict(metric="diffusion"),
    "amrrt_g": dict(metric="geodesic"),
    "rtrrt": dict(metric="euclidean", nearest_mode="euclid",
                  unit_step=True, random_rewire=True, k_max=12),
    "rtrrt_d": dict(metric="diffusion", nearest_mode="assist",
                    unit_step=True, random_rewire=True, k_max=12),
}


def variant_config(name: str, **overrides) -> PlannerConfig:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected {sorted(VARIANTS)}")
    return replace(PlannerConfig(**VARIANTS[name]), **overrides)


@dataclass
class StepReport:
    agent: State
    path: list[State]                 # current root -> attachment (+ goal)
    path_ids: list[int]
    goal: State | None
    goal_found: bool
    goal_cost: float                  # cost of the goal path, inf when none
    size: int
    iters: int                        # cumulative expansion attempts
    root_shifted: bool


class Planner:
    def __init__(self, env: Environment, config: PlannerConfig | None = None,
                 agent: State = (0.0, 0.0), metric=None):
        self.env = env
        self.cfg = config or PlannerConfig()
        self.metric = metric if metric is not None else make_assisting_metric(
            self.cfg.metric, env)
        if self.metric.kind != self.cfg.metric:
            raise ValueError("metric kind does not match config")
        self.rng = np.random.default_rng(self.cfg.seed)
        self.agent: State = tuple(map(float, agent))
        if not env.in_free(self.agent):
            raise ValueError(f"agent start {self.agent} is not in free space")
        self.tree = PlanTree(self.agent)
        self.index = DualIndex(self.metric)
        self.index.insert(0, self.agent)
        self.goal: State | None = None
        self.q_root: deque[int] = deque()
        self.q_goal: deque[int] = deque()
        self.s_goal: list[int] = []
        self.epoch_root = 0
        self.epoch_gstack = 0
        self.epoch_gqueue = 0
        self.iters = 0                      # expansion attempts
        self.steps = 0
        self._env_version = env.version
        self._mutations = 0
        self._link_cache: tuple | None = None
        self._los_cache: dict[tuple[int, int], bool] = {}
        self._goal_los: dict[int, bool] = {}

    def _los_nodes(self, i: int, j: int) -> bool:
        """obs_free between two tree nodes, memoized: node positions never
        move and visibility is symmetric, so entries stay valid until the
        obstacle set changes."""
        key = (i, j) if i < j else (j, i)
        v = self._los_cache.get(key)
        if v is None:
            v = self.env.obs_free(self.tree.positions[i],
                                  self.tree.positions[j])
            self._los_cache[key] = v
        return v

    def _los_goal(self, i: int) -> bool:
        v = self._goal_los.get(i)
        if v is None:
            v = self.env.obs_free(self.tree.positions[i], self.goal)
            self._goal_los[i] = v
        return v

    # -- goal management -----------------------------------------------------

    def set_goal(self, goal: State | None) -> None:
        """Replace the current goal. Goal rewiring restarts from the root:
        the offshoot stack is seeded here rather than waiting for both
        structures to drain, because the root sweep refills the queue every
        step and would otherwise starve the restart indefinitely. The root
        rewiring sweep itself is goal-independent and keeps its queue."""
        self.goal = tuple(map(float, goal)) if goal is not None else None
        self.q_goal.clear()
        self.s_goal.clear()
        self.epoch_gstack += 1
        self.epoch_gqueue += 1
        if self.goal is not None:
            self.tree.stamp_goal_stack[self.tree.root] = self.epoch_gstack
            self.s_goal.append(self.tree.root)
        self._link_cache = None
        self._goal_los.clear()

    def goal_link(self) -> tuple[int, float]:
        """Best goal attachment: the finite-cost node within goal tolerance
        of the goal with a free final segment, minimizing total path cost.
        Returns (node id, cost-to-goal); (-1, inf) when no path exists."""
        if self.goal is None:
            return -1, math.inf
        key = (self.iters, len(self.tree), self._mutations)
        if self._link_cache is not None and self._link_cache[0] == key:
            return self._link_cache[1]
        goal = self.goal
        tree = self.tree
        best = (math.inf, -1)
        for i in self.index.within_euclid(goal, self.cfg.tol()):
            c = tree.cost[i]
            if not math.isfinite(c):
                continue
            total = c + math.dist(tree.positions[i], goal)
            if (total, i) < (best[0], best[1]) and self._los_goal(i):
                best = (total, i)
        link = (best[1], best[0]) if best[1] >= 0 else (-1, math.inf)
        self._link_cache = (key, link)
        return link

    def goal_found(self) -> bool:
        return self.goal_link()[0] >= 0

    # -- sampling --------------------------------------------------------------

    def sample_state(self) -> State:
        """Draw the next expansion target: the goal itself while undiscovered,
        the free space for coverage, or the shrinking ellipse around the
        current goal path for refinement."""
        cfg = self.cfg
        if self.goal is None:
            return sample_free(self.env, self.rng)
        attach, c_best = self.goal_link()
        has_path = attach >= 0
        p = self.rng.random()
        if p > cfg.alpha and not has_path:
            return self.goal
        if p < cfg.alpha / cfg.beta or not has_path:
            return sample_free(self.env, self.rng)
        root_state = self.tree.positions[self.tree.root]
        return sample_rewire_ellipse(root_state, self.goal, c_best, self.rng)

    # -- nearest / steer ----------------------------------------------------------

    def nearest(self, x: State) -> int:
        """Nearest tree node: Euclidean when the connecting line is free,
        otherwise nearest under the assisting metric."""
        mode = self.cfg.nearest_mode
        if mode == "euclid":
            return self.index.nearest_euclid(x)
        if mode == "assist":
            return self.index.nearest_assist(x)
        e = self.index.nearest_euclid(x)
        if self.env.obs_free(self.tree.positions[e], x):
            return e
        return self.index.nearest_assist(x)

    def steer(self, x_init: State, x_end: State,
              deadline: float | None = None) -> State:
        """Point to grow toward x_end from x_init: projected along the free
        line, or the best assisting-metric candidate sampled around x_init
        when the line is blocked. Returns x_init itself when stuck."""
        cfg = self.cfg
        d = math.dist(x_init, x_end)
        if d == 0.0:
            return x_init
        if cfg.unit_step:
            # Legacy steer: take the unit step toward x_end and let the
            # stepped edge itself decide, regardless of what the rest of
            # the line does.
            p = 1.0 / max(1.0, d)
            cand = tuple(a + p * (b - a) for a, b in zip(x_init, x_end))
            if self.env.in_free(cand) and self.env.obs_free(x_init, cand):
                return cand
            return x_init
        if self.env.obs_free(x_init, x_end):
            p = cfg.s_max / max(cfg.s_max, d)
            return tuple(a + p * (b - a) for a, b in zip(x_init, x_end))
        best = x_init
        d_end = self._assist_to(x_end)    # hoists the target-side embedding
        c_min = d_end(x_init)
        r = min(cfg.s_max, d)
        n = 0
        while (n < cfg.steer_samples if deadline is None
               else time.perf_counter() < deadline):
            n += 1
            cand = sample_sphere(x_init, r, self.rng)
            c = d_end(cand)
            if c < c_min and self.env.in_free(cand) and \
                    self.env.obs_free(x_init, cand):
                best, c_min = cand, c
        return best

    # -- expansion ------------------------------------------------------------------

    def expand(self, steer_deadline: float | None = None) -> int:
        """One expansion attempt; returns the new node id or -1."""
        cfg = self.cfg
        self.iters += 1
        x_rand = self.sample_state()
        ni = self.nearest(x_rand)
        x_nrst = self.tree.positions[ni]
        x_new = self.steer(x_nrst, x_rand, deadline=steer_deadline)
        if x_new == x_nrst:
            return -1                     # steering made no progress
        near = self.index.within_euclid(x_new, cfg.s_max)
        if len(near) <= cfg.k_max or math.dist(x_nrst, x_rand) > cfg.s_max:
            tree = self.tree
            best_i = ni
            best_c = tree.cost[ni] + math.dist(x_nrst, x_new)
            for j in near:
                if j == ni:
                    continue
                c = tree.cost[j] + math.dist(tree.positions[j], x_new)
                if c < best_c and self.env.obs_free(tree.positions[j], x_new):
                    best_i, best_c = j, c
            node = tree.add_node(x_new, best_i)
            self.index.insert(node, x_new)
            return node
        return -1

    # -- rewiring ----------------------------------------------------------------

    def _rewire_neighbors(self, i: int, collect_unseen: bool):
        """Shared inner loop: pull each reachable neighbor of node i through i
        when that lowers its cost. Optionally returns neighbors the offshoot
        stack has not claimed this epoch."""
        tree = self.tree
        si = tree.positions[i]
        ci = tree.cost[i]
        unseen = [] if collect_unseen else None
        for j in self.index.within_euclid(si, self.cfg.s_max):
            if j == i:
                continue
            if not self._los_nodes(i, j):
                continue
            c_new = ci + math.dist(si, tree.positions[j])
            # the parent check blocks no-op reparents: delta-propagated costs
            # can drift a few ulps above the exact parent-chain sum
            if c_new < tree.cost[j] and j != tree.root and \
                    tree.parent[j] != i:
                tree.update_edge(j, i)
                self._mutations += 1
            if collect_unseen and tree.stamp_goal_stack[j] != self.epoch_gstack:
                unseen.append(j)
        return unseen

    def rewire_root(self, visits: int | None = None,
                    deadline: float | None = None) -> int:
        """Sweep outward from the root, pulling neighbors onto cheaper paths.
        The queue reseeds from the root once drained, beginning a new epoch."""
        if not self.q_root:
            self.epoch_root += 1
            self.tree.stamp_root[self.tree.root] = self.epoch_root
            self.q_root.append(self.tree.root)
        tree = self.tree
        count = 0
        while self.q_root:
            if deadline is None:
                if visits is not None and count >= visits:
                    break
            elif time.perf_counter() >= deadline:
                break
            i = self.q_root.popleft()
            count += 1
            si = tree.positions[i]
            ci = tree.cost[i]
            for j in self.index.within_euclid(si, self.cfg.s_max):
                if j == i:
                    continue
                if not self._los_nodes(i, j):
                    continue
                c_new = ci + math.dist(si, tree.positions[j])
                if c_new < tree.cost[j] and j != tree.root and \
                        tree.parent[j] != i:
                    tree.update_edge(j, i)
                    self._mutations += 1
                if tree.stamp_root[j] != self.epoch_root:
                    tree.stamp_root[j] = self.epoch_root
                    self.q_root.append(j)
                if tree.stamp_goal_queue[j] != self.epoch_gqueue:
                    tree.stamp_goal_queue[j] = self.epoch_gqueue
                    self.q_goal.append(j)
        return count

    def _assist_to(self, target: State):
        """Distance-to-target callable under the assisting metric, with the
        target-side work (snap/field) hoisted out of the caller's loop."""
        metric = self.metric
        if metric.kind == "euclidean":
            return lambda s: math.dist(s, target)
        if metric.kind == "diffusion":
            gc, gcoord = metric.embed(target)

            def dist_d(s):
                c, coord = metric.embed(s)
                return math.dist(coord, gcoord) if c == gc else math.inf
            return dist_d
        gn = metric.snap(target)
        field = metric.field_from(gn) if gn >= 0 else None

        def dist_g(s):
            if field is None:
                return math.inf
            sn = metric.snap(s)
            return float(field[sn]) if sn >= 0 else math.inf
        return dist_g

    def rewire_goal(self, visits: int | None = None,
                    deadline: float | None = None) -> int:
        """Rewire along offshoots toward the goal, inside the ellipse that
        bounds any path cheaper than the current one. The stack walks the
        current offshoot (best-first), the queue seeds the next ones."""
        attach, c_best = self.goal_link()
        if attach < 0:
            return 0
        tree = self.tree
        goal = self.goal
        root_state = tree.positions[tree.root]
        d_goal = self._assist_to(goal)
        if not self.s_goal and not self.q_goal:
            self.epoch_gstack += 1
            self.epoch_gqueue += 1
            tree.stamp_goal_stack[tree.root] = self.epoch_gstack
            self.s_goal.append(tree.root)
        count = 0
        while self.s_goal or self.q_goal:
            if deadline is None:
                if visits is not None and count >= visits:
                    break
            elif time.perf_counter() >= deadline:
                break
            i = self.s_goal.pop() if self.s_goal else self.q_goal.popleft()
            count += 1
            si = tree.positions[i]
            if math.dist(root_state, si) + math.dist(si, goal) <= c_best:
                unseen = self._rewire_neighbors(i, collect_unseen=True)
                if unseen:
                    unseen.sort(key=lambda j: (d_goal(tree.positions[j]), j))
                    for j in unseen:
                        tree.stamp_goal_stack[j] = self.epoch_gstack
                    self.s_goal.extend(reversed(unseen))
                    for j in unseen:
                        if tree.stamp_goal_queue[j] != self.epoch_gqueue:
                            tree.stamp_goal_queue[j] = self.epoch_gqueue
                            self.q_goal.append(j)
            if self.s_goal and d_goal(tree.positions[self.s_goal[-1]]) > \
                    d_goal(si):
                self.s_goal.clear()       # offshoot no longer approaches goal
        return count

    def rewire_random(self, visits: int | None = None,
                      deadline: float | None = None) -> int:
        """Legacy pass: rewire around uniformly chosen tree nodes (inside the
        same ellipse gate), with no ordering between them."""
        attach, c_best = self.goal_link()
        if attach < 0:
            return 0
        tree = self.tree
        root_state = tree.positions[tree.root]
        goal = self.goal
        count = 0
        while True:
            if deadline is None:
                if visits is None or count >= visits:
                    break
            elif time.perf_counter() >= deadline:
                break
            i = int(self.rng.integers(len(tree)))
            count += 1
            si = tree.positions[i]
            if math.dist(root_state, si) + math.dist(si, goal) <= c_best:
                self._rewire_neighbors(i, collect_unseen=False)
        return count

    # -- dynamic obstacles ---------------------------------------------------------

    def refresh_env(self) -> None:
        """Fold dynamic obstacle changes into the tree: nodes covered by a
        new obstacle, or whose parent edge crosses it, lose their subtree
        costs. Removals need no action; rewiring reclaims the region."""
        changes = self.env.changes_since(self._env_version)
        self._env_version = self.env.version
        if changes:
            self._los_cache.clear()
            self._goal_los.clear()
        tree = self.tree
        for _, op, rect in changes:
            if op != "add":
                continue
            cx = (rect.x0 + rect.x1) / 2.0
            cy = (rect.y0 + rect.y1) / 2.0
            reach = math.hypot(rect.x1 - rect.x0, rect.y1 - rect.y0) / 2.0 \
                + self.cfg.s_max
            for i in self.index.within_euclid((cx, cy), reach):
                if i == tree.root or not tree.valid(i):
                    continue
                x, y = tree.positions[i][0], tree.positions[i][1]
                if rect.contains(x, y):
                    tree.invalidate(i)
                    self._mutations += 1
                    continue
                p = tree.parent[i]
                px, py = tree.positions[p][0], tree.positions[p][1]
                if segment_hits_rect(px, py, x, y, rect):
                    tree.invalidate(i)
                    self._mutations += 1
        if changes:
            self._link_cache = None

    def _reapply_obstacles(self) -> None:
        """Re-invalidate nodes sitting in current obstacles (needed after a
        root shift, which recomputes costs for every node)."""
        tree = self.tree
        for rect in self.env.dynamic_obstacles.values():
            cx = (rect.x0 + rect.x1) / 2.0
            cy = (rect.y0 + rect.y1) / 2.0
            reach = math.hypot(rect.x1 - rect.x0, rect.y1 - rect.y0) / 2.0 \
                + self.cfg.s_max
            for i in self.index.within_euclid((cx, cy), reach):
                if i == tree.root or not tree.valid(i):
                    continue
                x, y = tree.positions[i][0], tree.positions[i][1]
                p = tree.parent[i]
                px, py = tree.positions[p][0], tree.positions[p][1]
                if rect.contains(x, y) or segment_hits_rect(px, py, x, y, rect):
                    tree.invalidate(i)
                    self._mutations += 1

    # -- planning / stepping ----------------------------------------------------------

    def plan_path(self) -> list[int]:
        """Node ids from the root toward the goal attachment (or the node
        nearest the goal while undiscovered), truncated at the first edge an
        obstacle has cut; the far side of a cut edge is invalidated."""
        attach, _ = self.goal_link()
        if attach >= 0:
            target = attach
        elif self.goal is not None:
            target = self.nearest(self.goal)
        else:
            return [self.tree.root]
        ids = self.tree.path_from_root(target)
        tree = self.tree
        for k in range(1, len(ids)):
            a, b = ids[k - 1], ids[k]
            if not self._los_nodes(a, b):
                tree.invalidate(b)
                self._mutations += 1
                self._link_cache = None
                return ids[:k]
        return ids

    def step(self) -> StepReport:
        """One real-time iteration: absorb world changes, expand/rewire
        within budget, plan, advance the root when the agent is close, and
        move the agent."""
        cfg = self.cfg
        self.steps += 1
        self.refresh_env()
        goal_pass = self.rewire_random if cfg.random_rewire else self.rewire_goal
        if cfg.mode == "wallclock":
            t_end = time.perf_counter() + cfg.t_exp
            while time.perf_counter() < t_end:
                self.expand(steer_deadline=time.perf_counter() + cfg.t_steer)
                self.rewire_root(deadline=time.perf_counter() + cfg.t_root)
                if self.goal_found():
                    goal_pass(deadline=time.perf_counter() + cfg.t_goal)
        else:
            for _ in range(cfg.expansions_per_step):
                self.expand()
            self.rewire_root(visits=cfg.rewire_root_visits)
            if self.goal_found():
                goal_pass(visits=cfg.rewire_goal_visits)
        ids = self.plan_path()
        root_before = ids[0]
        root_state = self.tree.positions[root_before]
        shifted = False
        # The straight-line agent controller requires sight of whatever it
        # chases, so the root may only advance to a node the agent can see
        # (always true once the agent stands at the root, since the path edge
        # itself is free).
        if len(ids) > 1 and math.dist(self.agent, root_state) < cfg.s_max \
                and self.env.obs_free(self.agent, self.tree.positions[ids[1]]):
            self.tree.set_root(ids[1])
            self._mutations += 1
            self._reapply_obstacles()
            self._link_cache = None
            ids = ids[1:]
            shifted = True
        self._move_agent(root_before, root_state, ids)
        attach, c_best = self.goal_link()
        path_states = [self.tree.positions[i] for i in ids]
        if attach >= 0 and ids and ids[-1] == attach:
            path_states = path_states + [self.goal]
        return StepReport(
            agent=self.agent,
            path=path_states,
            path_ids=ids,
            goal=self.goal,
            goal_found=attach >= 0,
            goal_cost=c_best,
            size=len(self.tree),
            iters=self.iters,
            root_shifted=shifted,
        )

    def _move_agent(self, root_before: int, root_state: State,
                    ids: list[int]) -> None:
        """Advance the agent toward the (pre-shift) root; once the root is
        the goal attachment and the goal is directly visible, head for the
        goal itself."""
        cfg = self.cfg
        target = root_state
        if self.goal is not None:
            attach, _ = self.goal_link()
            if attach == root_before and \
                    self.env.obs_free(self.agent, self.goal):
                target = self.goal
        d = math.dist(self.agent, target)
        if d == 0.0:
            return
        if not self.env.obs_free(self.agent, target):
            return            # hold position until replanning restores sight
        reach = cfg.agent_speed * cfg.step_dt
        t = min(1.0, reach / d)
        nxt = tuple(a + t * (b - a) for a, b in zip(self.agent, target))
        if self.env.in_free(nxt):
            self.agent = nxt
