"""Tour harness: leg accounting, report emission, scenario parsing, CLI."""

import json

import pytest
from pytest import approx

from amplan.bench import (CSV_COLUMNS, LegRow, RunConfig, Scenario,
                          ScenarioError, check_rows, emit_report,
                          run_scenario)
from amplan.cli import main
from amplan.maps import load_map

CORRIDOR10_SCENARIO = Scenario(
    map_spec="corridor10", start=(2.5, 2.5), goals=[(7.5, 2.5)],
    planner={"s_max": 2.0})


def tiny_cfg(**kw):
    base = dict(mode="deterministic", search_cap=20_000,
                seeds=(0, 1), variants=("amrrt_d",))
    base.update(kw)
    return RunConfig(**base)


def test_goal_equals_start_is_a_free_leg():
    sc = Scenario(map_spec="corridor10", start=(2.5, 2.5), goals=[(2.5, 2.5)])
    rows, _ = run_scenario(sc, tiny_cfg(seeds=(0,)))
    (row,) = rows
    assert row.status == "ok"
    assert row.search_time == 0
    assert row.ratio == approx(1.0)


def test_corridor_tour_completes_and_respects_floor():
    rows, summary = run_scenario(CORRIDOR10_SCENARIO, tiny_cfg())
    assert [r.status for r in rows] == ["ok", "ok"]
    assert check_rows(rows) == []
    agg = summary["variants"]["amrrt_d"]
    assert agg["ok"] == 2
    assert agg["ratio_mean"] == approx(1.0, abs=0.35)


def test_straight_leg_on_empty_map_is_near_optimal():
    # open space, no walls: the travelled route should hug the straight line
    sc = Scenario(map_spec="empty", start=(10.5, 10.5), goals=[(90.5, 10.5)])
    rows, _ = run_scenario(sc, tiny_cfg(variants=("amrrt_e",), seeds=(0, 1, 2)))
    for row in rows:
        assert row.status == "ok"
        assert row.ratio <= 1.15


def test_rows_are_sorted_and_legs_complete():
    sc = Scenario(map_spec="corridor10", start=(2.5, 2.5),
                  goals=[(7.5, 2.5), (2.5, 7.5)], planner={"s_max": 2.0})
    rows, _ = run_scenario(sc, tiny_cfg(variants=("amrrt_e", "amrrt_d")))
    keys = [(r.variant, r.seed, r.leg) for r in rows]
    assert keys == sorted(keys)
    assert len(rows) == 2 * 2 * 2


def test_deterministic_reruns_are_byte_identical(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        rows, summary = run_scenario(CORRIDOR10_SCENARIO, tiny_cfg())
        emit_report(rows, summary, out, "deterministic")
    assert (out_a / "report.csv").read_bytes() == (out_b / "report.csv").read_bytes()
    sum_a = json.loads((out_a / "summary.json").read_text())
    sum_b = json.loads((out_b / "summary.json").read_text())
    sum_a.pop("preprocessing_seconds")    # wall time, legitimately varies
    sum_b.pop("preprocessing_seconds")
    assert sum_a == sum_b


def test_report_csv_shape(tmp_path):
    rows, summary = run_scenario(CORRIDOR10_SCENARIO, tiny_cfg(seeds=(0,)))
    csv_path, json_path = emit_report(rows, summary, tmp_path, "deterministic")
    header, *data = csv_path.read_text().splitlines()
    assert header.split(",") == list(CSV_COLUMNS)
    assert len(data) == len(rows)
    first = data[0].split(",")
    assert first[0] == "amrrt_d"
    assert first[4] == str(int(rows[0].search_time))    # integer attempts
    doc = json.loads(json_path.read_text())
    assert doc["schema"] == 1
    assert doc["map"] == "corridor10"
    assert "diffusion" in doc["preprocessing_seconds"]


def test_emit_report_refuses_empty_rows(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], {}, tmp_path, "deterministic")


def test_check_rows_flags_bad_rows():
    good = LegRow("amrrt_d", 0, 0, "ok", 10.0, 100.0, 100.0)
    undercut = LegRow("amrrt_d", 0, 1, "ok", 10.0, 50.0, 100.0)
    negative = LegRow("amrrt_d", 1, 0, "ok", -1.0, 100.0, 100.0)
    capped = LegRow("rtrrt", 0, 0, "cap_search", 9.0, 0.0, 100.0)
    problems = check_rows([good, undercut, negative, capped])
    assert len(problems) == 2
    assert any("ratio" in p for p in problems)
    assert any("negative" in p for p in problems)
    assert capped.ratio is None


def test_capped_leg_recorded_and_tour_continues():
    # slab over the only gap: leg 0 must hit the cap; leg 1 stays reachable
    from amplan.bench import ObstacleEvent
    from amplan.env import Rect
    sc = Scenario(
        map_spec="corridor10", start=(2.5, 2.5),
        goals=[(7.5, 2.5), (2.5, 7.5)], planner={"s_max": 2.0},
        events=[ObstacleEvent(after_steps=1, op="add",
                              rect=Rect(4.8, 3.9, 6.2, 6.1), tag="slab")])
    rows, _ = run_scenario(sc, tiny_cfg(seeds=(0,), search_cap=600))
    assert rows[0].status == "cap_search"
    assert rows[0].search_time >= 600
    assert rows[0].ratio is None
    assert rows[1].status == "ok"


def test_obstacle_event_blocks_then_clears():
    # drop a slab over the corridor gap just after the run starts, lift it
    # later; the leg must still complete by routing after the lift
    from amplan.bench import ObstacleEvent
    from amplan.env import Rect
    sc = Scenario(
        map_spec="corridor10", start=(2.5, 2.5), goals=[(7.5, 2.5)],
        planner={"s_max": 2.0},
        events=[
            ObstacleEvent(after_steps=1, op="add",
                          rect=Rect(4.8, 3.9, 6.2, 6.1), tag="slab"),
            ObstacleEvent(after_steps=120, op="remove", tag="slab"),
        ])
    rows, _ = run_scenario(sc, tiny_cfg(seeds=(0,)))
    (row,) = rows
    assert row.status == "ok"
    # the slab forces the search to outlast its removal point
    assert row.search_time > 120


def test_scenario_from_file_roundtrip(tmp_path):
    doc = {
        "map": "corridor10",
        "start": [2.5, 2.5],
        "goals": [[7.5, 2.5]],
        "planner": {"s_max": 2.0},
        "dynamic": [{"after_steps": 5, "op": "add",
                     "rect": [4.0, 4.0, 6.0, 6.0], "tag": "box"}],
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    sc = Scenario.from_file(path)
    assert sc.map_spec == "corridor10"
    assert sc.start == (2.5, 2.5)
    assert sc.goals == [(7.5, 2.5)]
    assert sc.planner == {"s_max": 2.0}
    assert sc.events[0].tag == "box"
    assert sc.load_env().in_free(sc.start)


@pytest.mark.parametrize("breakage, message", [
    ({"start": None}, "missing field"),
    ({"goals": []}, "no goals"),
    ({"dynamic": [{"after_steps": 0, "op": "teleport"}]}, "event op"),
])
def test_scenario_file_validation(tmp_path, breakage, message):
    doc = {"map": "corridor10", "start": [2.5, 2.5], "goals": [[7.5, 2.5]]}
    doc.update(breakage)
    doc = {k: v for k, v in doc.items() if v is not None}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ScenarioError):
        Scenario.from_file(path)


def test_scenario_rejects_blocked_endpoints():
    env = load_map("corridor10")
    blocked = next((x + 0.5, y + 0.5) for x in range(10) for y in range(10)
                   if not env.in_free((x + 0.5, y + 0.5)))
    sc = Scenario(map_spec="corridor10", start=blocked, goals=[(7.5, 2.5)])
    with pytest.raises(ScenarioError, match="start"):
        run_scenario(sc, tiny_cfg())
    sc = Scenario(map_spec="corridor10", start=(2.5, 2.5), goals=[blocked])
    with pytest.raises(ScenarioError, match="goal"):
        run_scenario(sc, tiny_cfg())


def test_cli_run_writes_report(tmp_path, capsys):
    doc = {"map": "corridor10", "start": [2.5, 2.5], "goals": [[7.5, 2.5]],
           "planner": {"s_max": 2.0}}
    scenario = tmp_path / "sc.json"
    scenario.write_text(json.dumps(doc))
    out = tmp_path / "out"
    rc = main(["run", "--scenario", str(scenario), "--variants", "amrrt_e",
               "--seeds", "2", "--out", str(out), "--quiet"])
    assert rc == 0
    assert (out / "report.csv").exists()
    assert json.loads((out / "summary.json").read_text())["mode"] == "deterministic"


def test_cli_oracle_prints_distance(capsys):
    rc = main(["oracle", "--map", "corridor10",
               "--from", "2.5,2.5", "--to", "7.5,2.5"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "->" in out
    dist = float(out.strip().rsplit(" ", 1)[-1])
    assert dist == approx(6.66, abs=0.5)


def test_cli_diffmap_writes_sidecar(tmp_path, capsys):
    side = tmp_path / "corridor10.dmap"
    rc = main(["diffmap", "--map", "corridor10", "--out", str(side)])
    assert rc == 0
    assert side.exists() and side.stat().st_size > 0


def test_cli_bad_scenario_exits_nonzero(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    rc = main(["run", "--scenario", str(missing), "--out", str(tmp_path)])
    assert rc == 2
    assert "error" in capsys.readouterr().err
