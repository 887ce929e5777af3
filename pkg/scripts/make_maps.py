#!/usr/bin/env python3
"""Generate the bundled fixture maps and tour scenarios.

Everything here is deterministic (fixed seeds), so rerunning the script
reproduces the committed artifacts byte for byte. Each map is checked after
generation: the free space must form a single connected component, and every
tour leg must have a finite grid-shortest-path length inside a sane range.

Outputs:
    src/amplan/maps/<id>.map      occupancy documents (row 0 = top)
    scenarios/<id>.json           start + ordered tour goals per map
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from amplan.env import Environment          # noqa: E402
from amplan.metrics import GeodesicOracle, build_grid_graph  # noqa: E402

MAPS_DIR = REPO / "src" / "amplan" / "maps"
SCENARIO_DIR = REPO / "scenarios"

# Small two-room fixture used throughout the unit tests: wall down column 5
# with a one-cell gap in document row 5.
CORRIDOR10 = """\
map 10 10 1
.....#....
.....#....
.....#....
.....#....
.....#....
..........
.....#....
.....#....
.....#....
.....#....
"""


def grid_to_text(blocked: np.ndarray, cell: float = 1.0) -> str:
    rows, cols = blocked.shape
    lines = [f"map {cols * cell:g} {rows * cell:g} {cell:g}"]
    for r in range(rows):
        lines.append("".join("#" if blocked[r, c] else "." for c in range(cols)))
    return "\n".join(lines) + "\n"


def empty_grid() -> np.ndarray:
    return np.zeros((100, 100), dtype=bool)


def corridor_grid() -> np.ndarray:
    """Four double-thick vertical walls with gaps alternating top/bottom.

    Straight lines between most point pairs are blocked while the true route
    zigzags through the gaps, which is the regime where straight-line
    guidance misleads the search worst.
    """
    g = np.zeros((100, 100), dtype=bool)
    for col, gap0 in ((18, 6), (38, 86), (58, 6), (78, 86)):
        g[:, col:col + 2] = True
        g[gap0:gap0 + 8, col:col + 2] = False
    return g


def maze_grid(seed: int = 20240605, braid: int = 10) -> np.ndarray:
    """Recursive-backtracker maze on a 10x10 supercell lattice.

    Supercells are 10x10 cells with an 8x8 free interior; carved openings are
    6 cells wide. A perfect maze is fully connected by construction; `braid`
    extra walls are then opened to add loops so optimal paths are not
    pathologically long.
    """
    n, cell = 10, 10
    rng = np.random.default_rng(seed)
    g = np.ones((100, 100), dtype=bool)
    for i in range(n):
        for j in range(n):
            g[cell * i + 1:cell * i + 9, cell * j + 1:cell * j + 9] = False

    def carve(a, b):
        (i, j), (ni, nj) = a, b
        if ni != i:
            r0 = cell * max(i, ni)
            g[r0 - 1:r0 + 1, cell * j + 2:cell * j + 8] = False
        else:
            c0 = cell * max(j, nj)
            g[cell * i + 2:cell * i + 8, c0 - 1:c0 + 1] = False

    visited = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        i, j = stack[-1]
        nbrs = [(i + di, j + dj)
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= i + di < n and 0 <= j + dj < n
                and (i + di, j + dj) not in visited]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[int(rng.integers(len(nbrs)))]
        carve((i, j), nxt)
        visited.add(nxt)
        stack.append(nxt)

    closed = []
    for i in range(n):
        for j in range(n):
            if i + 1 < n and g[cell * (i + 1) - 1, cell * j + 4]:
                closed.append(((i, j), (i + 1, j)))
            if j + 1 < n and g[cell * i + 4, cell * (j + 1) - 1]:
                closed.append(((i, j), (i, j + 1)))
    picks = rng.choice(len(closed), size=min(braid, len(closed)), replace=False)
    for idx in sorted(int(p) for p in picks):
        carve(*closed[idx])
    return g


def office_grid(seed: int = 20240607, door_w: int = 5,
                extras: float = 0.35, n: int = 5) -> np.ndarray:
    """n x n grid of 20 m rooms joined by seeded doorways.

    Connectivity is guaranteed by carving doors along a spanning tree of the
    room lattice; a fraction of extra doors adds loops. Routes between
    distant rooms thread many doorways with no open shortcuts, which keeps
    unassisted search slow at this size while leaving it enough percolation
    to finish a leg within the benchmark budget.
    """
    room = 20
    size = room * n
    rng = np.random.default_rng(seed)
    g = np.zeros((size, size), dtype=bool)
    for k in range(1, n):
        g[room * k - 1:room * k + 1, :] = True
        g[:, room * k - 1:room * k + 1] = True

    def door(a, b):
        (i, j), (ni, nj) = a, b
        off = int(rng.integers(2, room - door_w - 1))
        if ni != i:
            r0 = room * max(i, ni)
            g[r0 - 1:r0 + 1, room * j + off:room * j + off + door_w] = False
        else:
            c0 = room * max(j, nj)
            g[room * i + off:room * i + off + door_w, c0 - 1:c0 + 1] = False

    visited = {(0, 0)}
    stack = [(0, 0)]
    tree_edges = set()
    while stack:
        i, j = stack[-1]
        nbrs = [(i + di, j + dj)
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= i + di < n and 0 <= j + dj < n
                and (i + di, j + dj) not in visited]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[int(rng.integers(len(nbrs)))]
        door((i, j), nxt)
        tree_edges.add(frozenset(((i, j), nxt)))
        visited.add(nxt)
        stack.append(nxt)

    for i in range(n):
        for j in range(n):
            for ni, nj in ((i + 1, j), (i, j + 1)):
                if ni < n and nj < n:
                    e = frozenset(((i, j), (ni, nj)))
                    if e not in tree_edges and rng.random() < extras:
                        door((i, j), (ni, nj))
    return g


def bugtrap_grid() -> np.ndarray:
    """Concave trap: a walled box whose mouth opens away from the start, with
    inward lips so straight growth toward the interior goal dead-ends."""
    g = np.zeros((30, 30), dtype=bool)
    g[8, 8:23] = True
    g[22, 8:23] = True
    g[8:23, 8] = True
    g[8:23, 22] = True
    g[13:18, 22] = False          # mouth on the right wall
    g[12, 14:23] = True           # upper lip
    g[18, 14:23] = True           # lower lip
    return g


def center(col: int, row: int, rows: int, cell: float = 1.0):
    """World coordinates of a cell center (row 0 = top)."""
    return ((col + 0.5) * cell, (rows - row - 0.5) * cell)


def supercell_center(i: int, j: int, block: int, rows: int):
    return center(block * j + block // 2, block * i + block // 2, rows)


def build_all():
    # map id -> (text, start, goals, planner overrides). Small maps scale the
    # wiring radius down: with s_max=5 the neighborhood cap saturates a
    # 10-30 m map before narrow openings get threaded.
    specs = {}

    specs["corridor10"] = (CORRIDOR10, (2.5, 2.5), [(7.5, 2.5)],
                           {"s_max": 2.0})

    # Open space is the hardest near-optimality regime: nothing funnels the
    # tree, so straight-line cost needs dense sampling plus heavy rewiring
    # while the agent moves. Quadruple the per-step budgets here.
    g = empty_grid()
    specs["empty"] = (grid_to_text(g),
                      (10.5, 10.5),
                      [(90.5, 10.5), (90.5, 90.5), (10.5, 90.5),
                       (50.5, 50.5), (90.5, 50.5), (10.5, 50.5)],
                      {"expansions_per_step": 60, "rewire_goal_visits": 40,
                       "rewire_root_visits": 15})

    g = corridor_grid()
    specs["corridor"] = (grid_to_text(g),
                         (9.5, 50.5),
                         [(30.5, 90.5), (30.5, 10.5), (50.5, 10.5),
                          (70.5, 90.5), (90.5, 90.5), (9.5, 50.5)], {})

    g = maze_grid()
    tour = [(6, 3), (0, 2), (2, 7), (5, 5), (9, 9), (7, 2)]
    specs["maze"] = (grid_to_text(g),
                     supercell_center(9, 0, 10, 100),
                     [supercell_center(i, j, 10, 100) for i, j in tour], {})

    g = office_grid()

    def room_center(i, j):
        return (20.0 * j + 10.0, 100.0 - 20.0 * i - 10.0)

    tour = [(0, 4), (4, 1), (1, 0), (3, 3), (0, 0), (4, 4)]
    specs["office"] = (grid_to_text(g), room_center(4, 0),
                       [room_center(i, j) for i, j in tour], {})

    g = bugtrap_grid()
    specs["bugtrap"] = (grid_to_text(g), (3.5, 14.5), [(12.5, 14.5)],
                        {"s_max": 2.0})

    return specs


LEG_RANGE = {
    "corridor10": (3.0, 12.0),
    "empty": (20.0, 130.0),
    "corridor": (20.0, 460.0),
    "maze": (40.0, 340.0),
    "office": (30.0, 240.0),
    "bugtrap": (15.0, 70.0),
}


def verify(map_id: str, env: Environment, start, goals) -> list[float]:
    graph = build_grid_graph(env, env.cell_size)
    if graph.n_components != 1:
        raise AssertionError(
            f"{map_id}: free space has {graph.n_components} components")
    oracle = GeodesicOracle(env)
    lo, hi = LEG_RANGE[map_id]
    legs = []
    prev = start
    for k, goal in enumerate(goals):
        if not env.in_free(prev) or not env.in_free(goal):
            raise AssertionError(f"{map_id}: leg {k} endpoint not in free space")
        d = oracle.distance(prev, goal)
        if not math.isfinite(d) or not (lo <= d <= hi):
            raise AssertionError(
                f"{map_id}: leg {k} length {d:.1f} outside [{lo}, {hi}]")
        legs.append(d)
        prev = goal
    return legs


def main():
    MAPS_DIR.mkdir(parents=True, exist_ok=True)
    SCENARIO_DIR.mkdir(parents=True, exist_ok=True)
    for map_id, (text, start, goals, planner) in build_all().items():
        env = Environment.from_text(text)
        assert env.to_text() == text, f"{map_id}: round-trip mismatch"
        legs = verify(map_id, env, start, goals)
        (MAPS_DIR / f"{map_id}.map").write_text(text)
        scenario = {
            "schema": 1,
            "map": map_id,
            "start": list(start),
            "goals": [list(goal) for goal in goals],
        }
        if planner:
            scenario["planner"] = planner
        doc = json.dumps(scenario, indent=2) + "\n"
        (SCENARIO_DIR / f"{map_id}.json").write_text(doc)
        # The session server resolves start positions from the installed
        # package, so each scenario ships next to its map document too.
        (MAPS_DIR / f"{map_id}.scenario.json").write_text(doc)
        free = env.free_cell_count()
        pretty = " ".join(f"{leg:.1f}" for leg in legs)
        print(f"{map_id:>10}: {free:6d} free cells, legs [{pretty}]")


if __name__ == "__main__":
    main()
