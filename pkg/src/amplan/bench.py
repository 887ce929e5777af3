"""Tour benchmark harness.

A scenario names a map, a start state and an ordered list of goals. For each
(variant, seed) the planner runs the goals in sequence on one persistent
tree, recording how long the search took to first reach each goal
(expansion attempts in deterministic mode, seconds in wallclock mode) and
the distance the agent actually travelled, normalized by the grid-optimal
length. Reports go out as one CSV row per (variant, seed, leg) plus a JSON
summary with per-variant aggregates.

The agent keeps moving while the planner searches, as it would live; the
travelled distance for a leg therefore covers everything from the previous
goal to arrival, not just the post-discovery glide.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .env import Environment, Rect
from .maps import MAP_IDS, map_text
from .metrics import GeodesicOracle, make_assisting_metric
from .planner import Planner, variant_config

State = tuple[float, ...]

REPORT_SCHEMA = 1
CSV_COLUMNS = ("variant", "seed", "leg", "status", "search_time",
               "path_length", "optimal_length", "ratio")

# The 8-connected lattice overestimates continuous shortest paths by up to
# 2 - sqrt(2) ~ 8.2% (worst at 22.5 deg), so travelled length legitimately
# undercuts the grid optimum on diagonal-heavy routes; add endpoint-snapping
# slack on top.
RATIO_FLOOR = 0.92


class ScenarioError(ValueError):
    """Raised for an invalid scenario document."""


@dataclass
class ObstacleEvent:
    after_steps: int          # global planner step count that triggers it
    op: str                   # add | remove
    rect: Rect | None = None  # for add
    tag: str | None = None    # names an added obstacle so remove can refer


@dataclass
class Scenario:
    map_spec: str
    start: State
    goals: list[State]
    planner: dict = field(default_factory=dict)   # map-scale config overrides
    events: list[ObstacleEvent] = field(default_factory=list)
    base_dir: Path | None = None

    def load_env(self) -> Environment:
        if self.map_spec in MAP_IDS:
            return Environment.from_text(map_text(self.map_spec))
        path = Path(self.map_spec)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        if not path.exists():
            raise ScenarioError(f"map {self.map_spec!r} not found")
        return Environment.from_text(path.read_text())

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        for key in ("map", "start", "goals"):
            if key not in doc:
                raise ScenarioError(f"scenario missing field {key!r}")
        goals = [tuple(map(float, g)) for g in doc["goals"]]
        if not goals:
            raise ScenarioError("scenario has no goals")
        events = []
        for ev in doc.get("dynamic", []) or []:
            op = ev.get("op")
            if op not in ("add", "remove"):
                raise ScenarioError(f"bad obstacle event op {op!r}")
            rect = Rect(*ev["rect"]) if op == "add" else None
            events.append(ObstacleEvent(after_steps=int(ev["after_steps"]),
                                        op=op, rect=rect, tag=ev.get("tag")))
        events.sort(key=lambda e: e.after_steps)
        return cls(map_spec=str(doc["map"]),
                   start=tuple(map(float, doc["start"])),
                   goals=goals, planner=dict(doc.get("planner", {})),
                   events=events, base_dir=path.parent)


@dataclass
class RunConfig:
    mode: str = "deterministic"       # deterministic | wallclock
    search_cap: int = 200_000         # expansion attempts per leg
    search_cap_s: float = 30.0        # wallclock seconds per leg
    travel_cap: int = 4_000           # agent steps per leg after search
    arrive_tol: float = 1.0           # meters
    seeds: tuple[int, ...] = tuple(range(25))
    variants: tuple[str, ...] = ("amrrt_d",)
    sidecar_dir: Path | None = None   # reuse diffusion sidecars if present
    overrides: dict = field(default_factory=dict)  # PlannerConfig overrides


@dataclass
class LegRow:
    variant: str
    seed: int
    leg: int
    status: str                 # ok | cap_search | cap_travel
    search_time: float          # expansion attempts or seconds
    path_length: float
    optimal_length: float

    @property
    def ratio(self) -> float | None:
        if self.status != "ok":
            return None
        if self.optimal_length == 0.0:
            return 1.0
        return self.path_length / self.optimal_length

    def as_csv(self, mode: str) -> list[str]:
        if mode == "deterministic":
            search = str(int(self.search_time))
        else:
            search = repr(self.search_time)
        ratio = self.ratio
        return [self.variant, str(self.seed), str(self.leg), self.status,
                search, repr(self.path_length), repr(self.optimal_length),
                "" if ratio is None else repr(ratio)]


class _MetricCache:
    """One assisting metric per kind for a given static map, with build
    (preprocessing) wall time recorded per kind."""

    def __init__(self, env: Environment, sidecar_dir: Path | None = None,
                 map_name: str = "map"):
        self.env = env
        self.sidecar_dir = sidecar_dir
        self.map_name = map_name
        self._metrics: dict[str, object] = {}
        self.prep_seconds: dict[str, float] = {}

    def get(self, kind: str):
        if kind not in self._metrics:
            sidecar = None
            if kind == "diffusion" and self.sidecar_dir is not None:
                sidecar = Path(self.sidecar_dir) / f"{self.map_name}.dmap"
            t0 = time.perf_counter()
            self._metrics[kind] = make_assisting_metric(kind, self.env,
                                                        sidecar=sidecar)
            self.prep_seconds[kind] = time.perf_counter() - t0
        return self._metrics[kind]


def optimal_length(oracle: GeodesicOracle, a: State, b: State) -> float:
    """Grid-shortest-path length between a and b (raw, no smoothing)."""
    if a == b:
        return 0.0
    return oracle.distance(a, b)


def run_tour(scenario: Scenario, variant: str, seed: int, run_cfg: RunConfig,
             metrics: _MetricCache, oracle: GeodesicOracle) -> list[LegRow]:
    """One variant/seed tour over the scenario goals on a persistent tree.

    Each leg has two phases. Search: planner iterations with the agent
    standing (speed zeroed) until a goal link appears, counting expansion
    attempts (or seconds in wallclock mode). Travel: step until the agent
    is within arrive_tol of the goal, integrating the distance actually
    moved. Parking the agent during search keeps the leg anchor exact: a
    moving agent drifts toward whatever frontier the variant happens to
    chase, which pre-travels part of the leg off the books and lets slow
    searchers trade search time for untracked distance.
    """
    env = scenario.load_env()     # fresh: obstacle scripts must not leak
    cfg = variant_config(variant, seed=seed, mode=run_cfg.mode,
                         **{**scenario.planner, **run_cfg.overrides})
    metric = metrics.get(cfg.metric)
    planner = Planner(env, cfg, agent=scenario.start, metric=metric)

    events = list(scenario.events)
    tags: dict[str, int] = {}
    total_steps = 0

    def fire_events():
        nonlocal events
        while events and events[0].after_steps <= total_steps:
            ev = events.pop(0)
            if ev.op == "add":
                oid = env.add_obstacle(ev.rect)
                if ev.tag:
                    tags[ev.tag] = oid
            else:
                env.remove_obstacle(tags.pop(ev.tag))
            planner.refresh_env()

    rows = []
    for leg, goal in enumerate(scenario.goals):
        planner.set_goal(goal)
        optimal = optimal_length(oracle, planner.agent, goal)
        travelled = 0.0
        iters0 = planner.iters
        t0 = time.perf_counter()

        def step_once(measure: bool):
            nonlocal travelled, total_steps
            before = planner.agent
            planner.step()
            if measure:
                travelled += math.dist(before, planner.agent)
            total_steps += 1
            fire_events()

        status = "ok"
        speed = cfg.agent_speed
        cfg.agent_speed = 0.0     # park the agent while searching
        while not planner.goal_found():
            if run_cfg.mode == "deterministic":
                if planner.iters - iters0 >= run_cfg.search_cap:
                    status = "cap_search"
                    break
            elif time.perf_counter() - t0 >= run_cfg.search_cap_s:
                status = "cap_search"
                break
            step_once(False)
        cfg.agent_speed = speed
        if run_cfg.mode == "deterministic":
            search = float(planner.iters - iters0)
        else:
            search = time.perf_counter() - t0

        if status == "ok":
            steps = 0
            while math.dist(planner.agent, goal) > run_cfg.arrive_tol:
                if steps >= run_cfg.travel_cap:
                    status = "cap_travel"
                    break
                step_once(True)
                steps += 1
            if status == "ok":
                travelled += math.dist(planner.agent, goal)

        rows.append(LegRow(variant=variant, seed=seed, leg=leg, status=status,
                           search_time=search, path_length=travelled,
                           optimal_length=optimal))
    return rows


def run_scenario(scenario: Scenario, run_cfg: RunConfig,
                 progress=None) -> tuple[list[LegRow], dict]:
    """All (variant, seed) tours for one scenario, rows sorted."""
    env = scenario.load_env()
    for k, state in enumerate((scenario.start, *scenario.goals)):
        if not env.in_free(state):
            what = "start" if k == 0 else f"goal {k - 1}"
            raise ScenarioError(f"scenario {what} {state} not in free space")
    if not run_cfg.seeds:
        raise ScenarioError("at least one seed required")

    map_name = (scenario.map_spec if scenario.map_spec in MAP_IDS
                else Path(scenario.map_spec).stem)
    metrics = _MetricCache(env, run_cfg.sidecar_dir, map_name)
    oracle = GeodesicOracle(env)

    rows: list[LegRow] = []
    for variant in run_cfg.variants:
        for seed in run_cfg.seeds:
            rows.extend(run_tour(scenario, variant, seed, run_cfg,
                                 metrics, oracle))
            if progress is not None:
                progress(variant, seed)
    rows.sort(key=lambda r: (r.variant, r.seed, r.leg))
    summary = summarize(rows, run_cfg, metrics.prep_seconds, map_name)
    return rows, summary


def rewiring_trial(scenario: Scenario, seed: int, metrics: _MetricCache,
                   visits_goal: int = 250, visits_random: int = 750,
                   grow: int = 8000, trial_goal: int = 0) -> dict:
    """Race the goal-directed rewiring pass against uniform random rewiring,
    both starting from the same tree.

    Grows one goal-agnostic tree dense enough that the visit budgets are
    scarce relative to the node count (the regime where ordering matters),
    reveals a goal, then forks the planner into two arms that differ only in
    which pass spends its budget. Returns the goal-path cost at the fork and
    after each arm.
    """
    env = scenario.load_env()
    cfg = variant_config("amrrt_d", seed=seed, mode="deterministic",
                         **scenario.planner)
    metric = metrics.get(cfg.metric)
    arm_goal = Planner(env, cfg, agent=scenario.start, metric=metric)
    for _ in range(grow):
        arm_goal.expand()
    arm_goal.set_goal(scenario.goals[trial_goal])
    while not arm_goal.goal_found():
        arm_goal.expand()
    # the map and metric are read-only here; share them across the fork
    arm_random = copy.deepcopy(arm_goal, {id(env): env, id(metric): metric})

    cost0 = arm_goal.goal_link()[1]
    used = 0
    while used < visits_goal:
        n = arm_goal.rewire_goal(visits=visits_goal - used)
        if n == 0:
            break
        used += n
    arm_random.rewire_random(visits=visits_random)
    return {
        "cost_start": cost0,
        "cost_goal_pass": arm_goal.goal_link()[1],
        "cost_random_pass": arm_random.goal_link()[1],
        "visits_goal": used,
        "visits_random": visits_random,
    }


def summarize(rows: list[LegRow], run_cfg: RunConfig,
              prep_seconds: dict[str, float], map_name: str) -> dict:
    """Per-variant aggregates. Leg-level stats pool every leg; the tour_*
    stats first average within each seed's tour and then take the median
    across seeds, so one tour is one observation and a tree already covering
    the goal region (search 0) does not swamp the statistic."""
    if not rows:
        raise ValueError("no rows to summarize")
    per_variant: dict[str, dict] = {}
    for variant in sorted({r.variant for r in rows}):
        vrows = [r for r in rows if r.variant == variant]
        ok = [r for r in vrows if r.status == "ok"]
        searches = [r.search_time for r in vrows]
        ratios = [r.ratio for r in ok]
        agg = {
            "legs": len(vrows),
            "ok": len(ok),
            "failed": len(vrows) - len(ok),
            "search_time_mean": statistics.fmean(searches),
            "search_time_median": statistics.median(searches),
        }
        if ratios:
            agg["ratio_mean"] = statistics.fmean(ratios)
            agg["ratio_median"] = statistics.median(ratios)
        by_seed: dict[int, list[LegRow]] = {}
        for r in vrows:
            by_seed.setdefault(r.seed, []).append(r)
        agg["tour_search_median"] = statistics.median(
            statistics.fmean(r.search_time for r in srows)
            for srows in by_seed.values())
        tour_ratios = []
        for srows in by_seed.values():
            rs = [r.ratio for r in srows if r.status == "ok"]
            if rs:
                tour_ratios.append(statistics.fmean(rs))
        if tour_ratios:
            agg["tour_ratio_median"] = statistics.median(tour_ratios)
        per_variant[variant] = agg
    return {
        "schema": REPORT_SCHEMA,
        "map": map_name,
        "mode": run_cfg.mode,
        "seeds": list(run_cfg.seeds),
        "preprocessing_seconds": dict(sorted(prep_seconds.items())),
        "variants": per_variant,
    }


def check_rows(rows: list[LegRow]) -> list[str]:
    """Leg-level report invariants; returns violation strings."""
    problems = []
    for r in rows:
        where = f"{r.variant}/seed{r.seed}/leg{r.leg}"
        if r.search_time < 0:
            problems.append(f"{where}: negative search time")
        ratio = r.ratio
        if ratio is not None and ratio < RATIO_FLOOR:
            problems.append(f"{where}: ratio {ratio:.4f} below {RATIO_FLOOR}")
    return problems


def emit_report(rows: list[LegRow], summary: dict, out_dir: str | Path,
                mode: str) -> tuple[Path, Path]:
    if not rows:
        raise ValueError("refusing to write an empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow(r.as_csv(mode))
    json_path = out_dir / "summary.json"
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=False) + "\n")
    return csv_path, json_path
