"""Live session server.

One WebSocket connection drives one planner. The operator opens a session
with a `hello`, then steers it with `set_goal`, `add_obstacle`,
`remove_obstacle`, `pause` and `resume` while the server streams `snapshot`
messages. Every message, both directions, is one JSON text frame:

    {"kind": "...", "seq": n, "payload": {...}}

with sequence numbers strictly increasing per direction. States are `[x, y]`
meter pairs. The snapshot payload carries `agent`, `goal`, `path`, `tree`
(`positions`, `parents`, `costs`), `stats` (`size`, `goal_cost`,
`goal_found`, `iter`) and the current dynamic `obstacles`. Costs that are
infinite on the planner side (no goal path, invalidated nodes) are encoded
as JSON null.

Concurrency contract: the stepping loop is the only writer of planner and
environment state. The socket reader just validates frames and appends them
to a bounded inbox; commands apply between planner iterations, and each
applied command is answered with a fresh snapshot. Snapshot payloads are
copied out of the planner at the boundary, but JSON encoding happens in the
sender task so a slow consumer can never stall stepping; if the consumer
falls behind, older unsent snapshots are simply replaced by newer ones.

The stepping loop starts paused. Real-time pacing defaults to one planner
step per `step_dt` of simulated time; `step_hz` in the hello config picks a
different rate, with 0 meaning step flat out (used by scripted clients).
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import math
import time
import uuid
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse
from starlette.websockets import WebSocket, WebSocketDisconnect

from .env import Environment, Rect, UnknownObstacleError
from .maps import MAP_IDS, load_map, map_text, scenario_doc
from .metrics import make_assisting_metric
from .planner import Planner, VARIANTS, variant_config

KINDS = ("hello", "set_goal", "add_obstacle", "remove_obstacle",
         "pause", "resume", "snapshot", "error")

# Client kinds accepted after the handshake. A bare `snapshot` request is a
# legal no-op command: the on-command snapshot that follows every applied
# command is its reply, which gives scripted clients a deterministic
# request/response rhythm.
COMMAND_KINDS = ("set_goal", "add_obstacle", "remove_obstacle",
                 "pause", "resume", "snapshot")


class ProtocolError(ValueError):
    """Malformed or inapplicable message; the session survives it."""


@dataclass(frozen=True)
class Message:
    kind: str
    seq: int
    payload: dict


def encode_message(msg: Message) -> str:
    # allow_nan=False keeps the wire format strict JSON; callers must map
    # non-finite values to null themselves (see _wire_snapshot).
    return json.dumps({"kind": msg.kind, "seq": msg.seq, "payload": msg.payload},
                      separators=(",", ":"), allow_nan=False)


def decode_message(text) -> Message:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError, UnicodeDecodeError, ValueError):
        raise ProtocolError("frame is not valid JSON") from None
    if not isinstance(doc, dict):
        raise ProtocolError("message must be a JSON object")
    extra = set(doc) - {"kind", "seq", "payload"}
    if extra:
        raise ProtocolError(f"unexpected fields {sorted(extra)}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ProtocolError(f"unknown kind {kind!r}")
    seq = doc.get("seq")
    if isinstance(seq, bool) or not isinstance(seq, int) or seq < 0:
        raise ProtocolError("seq must be a non-negative integer")
    payload = doc.get("payload", {})
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be an object")
    return Message(kind, seq, payload)


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) \
        and math.isfinite(v)


def _state(v, name: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2 or not all(map(_num, v)):
        raise ProtocolError(f"{name} must be a finite [x, y] pair")
    return float(v[0]), float(v[1])


def _rect(v) -> Rect:
    if not isinstance(v, (list, tuple)) or len(v) != 4 or not all(map(_num, v)):
        raise ProtocolError("rect must be finite [x0, y0, x1, y1]")
    try:
        return Rect(*map(float, v))
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None


# -- session configuration -----------------------------------------------------

@dataclass
class SessionConfig:
    variant: str = "amrrt_d"
    snapshot_hz: float = 10.0
    snapshot_cap: int = 20_000
    step_hz: float | None = None      # None = real time (1 step per step_dt)
    inbox_cap: int = 64


def parse_session_config(doc: dict, default_variant: str) -> tuple[SessionConfig, dict]:
    """Split a hello config into server-side knobs and planner overrides.

    Unknown keys are rejected rather than ignored so a typo in a scripted
    client fails loudly.
    """
    doc = dict(doc)
    variant = doc.pop("variant", default_variant)
    if variant not in VARIANTS:
        raise ProtocolError(f"unknown variant {variant!r}")
    cfg = SessionConfig(variant=variant)
    if "snapshot_hz" in doc:
        v = doc.pop("snapshot_hz")
        if not _num(v) or v <= 0:
            raise ProtocolError("snapshot_hz must be a positive number")
        cfg.snapshot_hz = float(v)
    if "snapshot_cap" in doc:
        v = doc.pop("snapshot_cap")
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ProtocolError("snapshot_cap must be a positive integer")
        cfg.snapshot_cap = v
    if "step_hz" in doc:
        v = doc.pop("step_hz")
        if v is not None and (not _num(v) or v < 0):
            raise ProtocolError("step_hz must be a non-negative number or null")
        cfg.step_hz = None if v is None else float(v)
    from dataclasses import fields as dc_fields
    from .planner import PlannerConfig
    allowed = {f.name for f in dc_fields(PlannerConfig)}
    for key in doc:
        if key not in allowed:
            raise ProtocolError(f"unknown config field {key!r}")
    return cfg, doc


def _check_planner_config(cfg) -> None:
    if not cfg.s_max > 0:
        raise ProtocolError(f"s_max must be positive, got {cfg.s_max}")
    if not cfg.step_dt > 0:
        raise ProtocolError(f"step_dt must be positive, got {cfg.step_dt}")
    if cfg.mode not in ("deterministic", "wallclock"):
        raise ProtocolError(f"unknown mode {cfg.mode!r}")


def _fallback_start(env: Environment) -> tuple[float, float]:
    # Maps loaded from arbitrary files carry no tour scenario; start at the
    # first free cell center in document order.
    cs = env.cell_size
    rows, cols = env.grid_shape()
    for r in range(rows):
        for c in range(cols):
            x, y = (c + 0.5) * cs, (r + 0.5) * cs
            if env.static_free(x, y):
                return x, y
    raise ProtocolError("map has no free cell")


def resolve_map(spec: str, allow_path: bool = False):
    """Map spec -> (fresh environment, start state, planner override base)."""
    if spec in MAP_IDS:
        doc = scenario_doc(spec)
        return load_map(spec), tuple(doc["start"]), dict(doc.get("planner", {}))
    if allow_path and Path(spec).exists():
        env = load_map(Path(spec))
        return env, _fallback_start(env), {}
    raise ProtocolError(f"unknown map {spec!r}")


# -- snapshots -------------------------------------------------------------------

def subsample_tree(positions, parents, costs, cap: int, pinned) -> tuple:
    """Uniform tree subsample with `pinned` ids (the current path, which
    always contains the root) kept, reparenting each survivor to its nearest
    kept ancestor. Exact per-edge cost sums become cost monotonicity along
    the kept chains; acyclicity and index validity are preserved.
    """
    n = len(parents)
    keep = np.zeros(n, dtype=bool)
    keep[np.fromiter(pinned, dtype=np.int64)] = True
    budget = cap - int(keep.sum())
    if budget > 0:
        pool = np.flatnonzero(~keep)
        # seeded by the tree size so repeated snapshots of the same tree pick
        # the same nodes
        extra = np.random.default_rng(n).choice(
            pool, size=min(budget, len(pool)), replace=False)
        keep[extra] = True
    kept = np.flatnonzero(keep)
    new_id = np.full(n, -1, dtype=np.int64)
    new_id[kept] = np.arange(len(kept))

    # nearest kept ancestor-or-self, memoized with path collapsing
    nka = np.where(keep, np.arange(n), -1)
    for i in range(n):
        if nka[i] != -1:
            continue
        chain = []
        j = i
        while nka[j] == -1:
            chain.append(j)
            j = parents[j]
        for c in chain:
            nka[c] = nka[j]

    new_parents = np.empty(len(kept), dtype=np.int64)
    for k, i in enumerate(kept):
        p = parents[i]
        new_parents[k] = -1 if p == -1 else new_id[nka[p]]
    return positions[kept], new_parents, costs[kept]


def snapshot_payload(planner: Planner, env: Environment, cap: int) -> dict:
    """Consistent point-in-time copy, taken between planner iterations.

    Tree arrays stay numpy here; `_wire_snapshot` turns them into JSON
    values inside the sender so the copy is the only work on the step path.
    `stats.size` reports the full tree even when the arrays are subsampled.
    """
    path_ids = planner.plan_path()
    snap = planner.tree.snapshot()
    positions, parents, costs = snap["positions"], snap["parents"], snap["costs"]
    attach, goal_cost = planner.goal_link()
    found = attach >= 0
    path = [[float(positions[i][0]), float(positions[i][1])] for i in path_ids]
    if found and path_ids and path_ids[-1] == attach:
        path.append([planner.goal[0], planner.goal[1]])
    size = len(parents)
    if size > cap:
        positions, parents, costs = subsample_tree(
            positions, parents, costs, cap, set(path_ids))
    return {
        "agent": [planner.agent[0], planner.agent[1]],
        "goal": list(planner.goal) if planner.goal is not None else None,
        "path": path,
        "tree": {"positions": positions, "parents": parents, "costs": costs},
        "stats": {
            "size": size,
            "goal_cost": goal_cost if math.isfinite(goal_cost) else None,
            "goal_found": found,
            "iter": planner.iters,
        },
        "obstacles": [{"id": oid, "rect": [r.x0, r.y0, r.x1, r.y1]}
                      for oid, r in sorted(env.dynamic_obstacles.items())],
    }


def _wire_snapshot(payload: dict) -> dict:
    t = payload["tree"]
    wire = dict(payload)
    wire["tree"] = {
        "positions": t["positions"].tolist(),
        "parents": t["parents"].tolist(),
        "costs": [c if math.isfinite(c) else None for c in t["costs"].tolist()],
    }
    return wire


# -- session -------------------------------------------------------------------

class Session:
    """State shared between the reader, the stepping loop and the sender."""

    def __init__(self, ws: WebSocket, planner: Planner, env: Environment,
                 cfg: SessionConfig):
        self.id = uuid.uuid4().hex[:12]
        self.ws = ws
        self.planner = planner
        self.env = env
        self.cfg = cfg
        self.paused = True
        self.closed = False
        self.inbox: deque[Message] = deque(maxlen=cfg.inbox_cap)
        self.wake = asyncio.Event()
        self._control: deque[tuple[str, dict]] = deque()
        self._snap: dict | None = None
        self._send_ready = asyncio.Event()
        self._seq_out = 0
        self._seq_in = -1

    def _next_seq(self) -> int:
        self._seq_out += 1
        return self._seq_out

    def close(self) -> None:
        self.closed = True
        self.wake.set()
        self._send_ready.set()

    # -- reader side ----------------------------------------------------------

    def submit(self, raw: str) -> None:
        """Validate one frame and queue it; never touches the planner."""
        try:
            msg = decode_message(raw)
        except ProtocolError as exc:
            self.post("error", {"reason": str(exc)})
            return
        if msg.seq <= self._seq_in:
            self.post("error", {"reason":
                                f"seq {msg.seq} is not above {self._seq_in}",
                                "ref": msg.seq})
            return
        self._seq_in = msg.seq
        if msg.kind not in COMMAND_KINDS:
            self.post("error", {"reason": f"unexpected {msg.kind!r} after "
                                          "the handshake", "ref": msg.seq})
            return
        self.inbox.append(msg)      # bounded: the oldest command falls off
        self.wake.set()

    def post(self, kind: str, payload: dict) -> None:
        self._control.append((kind, payload))
        self._send_ready.set()

    # -- stepping loop ----------------------------------------------------------

    def drain_inbox(self) -> int:
        """Apply queued commands at a step boundary; newest set_goal wins.
        Returns how many commands were applied."""
        if not self.inbox:
            return 0
        cmds = []
        while self.inbox:
            cmds.append(self.inbox.popleft())
        goal_at = max((i for i, m in enumerate(cmds) if m.kind == "set_goal"),
                      default=-1)
        applied = 0
        for i, msg in enumerate(cmds):
            if msg.kind == "set_goal" and i != goal_at:
                continue
            applied += self.apply(msg)
        return applied

    def apply(self, msg: Message) -> int:
        try:
            if msg.kind == "set_goal":
                goal = _state(msg.payload.get("goal"), "goal")
                if not self.env.in_free(goal):
                    raise ProtocolError(
                        f"goal [{goal[0]:g}, {goal[1]:g}] is not in free space")
                self.planner.set_goal(goal)
            elif msg.kind == "add_obstacle":
                rect = _rect(msg.payload.get("rect"))
                oid = self.env.add_obstacle(rect)
                self.post("add_obstacle",
                          {"id": oid, "rect": [rect.x0, rect.y0, rect.x1, rect.y1]})
            elif msg.kind == "remove_obstacle":
                oid = msg.payload.get("id")
                if isinstance(oid, bool) or not isinstance(oid, int):
                    raise ProtocolError("id must be an integer")
                self.env.remove_obstacle(oid)
                self.post("remove_obstacle", {"id": oid})
            elif msg.kind == "pause":
                self.paused = True
            elif msg.kind == "resume":
                self.paused = False
            return 1
        except UnknownObstacleError as exc:
            self.post("error", {"reason": f"unknown obstacle id {exc.args[0]}",
                                "ref": msg.seq})
        except (ProtocolError, ValueError) as exc:
            self.post("error", {"reason": str(exc), "ref": msg.seq})
        return 0

    def publish_snapshot(self) -> None:
        self._snap = snapshot_payload(self.planner, self.env,
                                      self.cfg.snapshot_cap)
        self._send_ready.set()

    async def run(self) -> None:
        period = 1.0 / self.cfg.snapshot_hz
        last_snap = float("-inf")
        next_step = None
        while not self.closed:
            if self.drain_inbox():
                self.publish_snapshot()
                last_snap = time.monotonic()
            if self.paused:
                if self.inbox:
                    continue
                next_step = None
                self.wake.clear()
                await self.wake.wait()
                continue
            try:
                await asyncio.to_thread(self.planner.step)
            except Exception as exc:          # planner wedged: report, hold
                self.paused = True
                self.post("error", {"reason": f"step failed: {exc}"})
                continue
            now = time.monotonic()
            if now - last_snap >= period:
                self.publish_snapshot()
                last_snap = now
            pace = (self.planner.cfg.step_dt if self.cfg.step_hz is None
                    else (1.0 / self.cfg.step_hz if self.cfg.step_hz else 0.0))
            if pace:
                next_step = (now if next_step is None else next_step) + pace
                delay = next_step - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_step = None          # lagging; drop the debt

    # -- sender ---------------------------------------------------------------

    async def sender(self) -> None:
        try:
            while True:
                if not self._control and self._snap is None:
                    if self.closed:
                        return
                    self._send_ready.clear()
                    await self._send_ready.wait()
                    continue
                while self._control:
                    kind, payload = self._control.popleft()
                    await self.ws.send_text(
                        encode_message(Message(kind, self._next_seq(), payload)))
                snap = self._snap
                if snap is not None:
                    self._snap = None
                    seq = self._next_seq()
                    text = await asyncio.to_thread(
                        lambda: encode_message(
                            Message("snapshot", seq, _wire_snapshot(snap))))
                    await self.ws.send_text(text)
        except Exception:
            # the socket died under us; the endpoint handles the teardown
            return


# -- application ----------------------------------------------------------------

def create_app(map_id: str = "corridor10", variant: str = "amrrt_d") -> FastAPI:
    """Build the server. `map_id`/`variant` are defaults a hello may override
    (hello map choices are restricted to bundled ids plus this default, which
    the operator may point at a map file)."""
    resolve_map(map_id, allow_path=True)      # fail fast on a bad default
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    app = FastAPI(title="amplan session server")
    app.state.default_map = map_id
    app.state.default_variant = variant
    app.state.metrics = {}
    app.state.metrics_lock = asyncio.Lock()

    @app.get("/maps")
    def list_maps():
        out = []
        for mid in MAP_IDS:
            env = load_map(mid)
            out.append({"id": mid, "width": env.width, "height": env.height,
                        "cell_size": env.cell_size,
                        "free_cells": env.free_cell_count()})
        return {"maps": out}

    @app.get("/maps/{map_id}")
    def get_map(map_id: str):
        try:
            return PlainTextResponse(map_text(map_id))
        except KeyError:
            return JSONResponse({"error": f"unknown map {map_id!r}"},
                                status_code=404)

    async def metric_for(map_spec: str, kind: str, env: Environment):
        # Metrics read only the static grid, so sessions on the same map
        # share one instance; the build (eigendecomposition for diffusion)
        # runs off the event loop.
        key = (map_spec, kind)
        async with app.state.metrics_lock:
            if key not in app.state.metrics:
                app.state.metrics[key] = await asyncio.to_thread(
                    make_assisting_metric, kind, env)
        return app.state.metrics[key]

    async def open_session(ws: WebSocket, payload: dict) -> tuple[Session, dict]:
        map_spec = payload.get("map", app.state.default_map)
        if not isinstance(map_spec, str):
            raise ProtocolError("map must be a string")
        cfg_doc = payload.get("config", {})
        if not isinstance(cfg_doc, dict):
            raise ProtocolError("config must be an object")
        cfg, overrides = parse_session_config(cfg_doc, app.state.default_variant)
        env, start, base = resolve_map(
            map_spec, allow_path=map_spec == app.state.default_map)
        pcfg = variant_config(cfg.variant, **{**base, **overrides})
        _check_planner_config(pcfg)
        metric = await metric_for(map_spec, pcfg.metric, env)
        try:
            planner = Planner(env, pcfg, agent=start, metric=metric)
        except ValueError as exc:
            raise ProtocolError(str(exc)) from None
        sess = Session(ws, planner, env, cfg)
        hello = {
            "session": sess.id,
            "map": map_spec,
            "variant": cfg.variant,
            "mode": pcfg.mode,
            "width": env.width,
            "height": env.height,
            "cell_size": env.cell_size,
            "text": env.to_text(),
            "start": [start[0], start[1]],
            "snapshot_hz": cfg.snapshot_hz,
            "paused": True,
        }
        return sess, hello

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        await ws.accept()

        async def refuse(reason: str):
            with contextlib.suppress(Exception):
                await ws.send_text(
                    encode_message(Message("error", 1, {"reason": reason})))
                await ws.close()

        try:
            raw = await ws.receive_text()
        except WebSocketDisconnect:
            return
        try:
            first = decode_message(raw)
            if first.kind != "hello":
                raise ProtocolError("first message must be hello")
            sess, hello = await open_session(ws, first.payload)
        except ProtocolError as exc:
            await refuse(str(exc))
            return
        sess._seq_in = first.seq
        await ws.send_text(
            encode_message(Message("hello", sess._next_seq(), hello)))
        tasks = [asyncio.create_task(sess.run()),
                 asyncio.create_task(sess.sender())]
        try:
            while True:
                sess.submit(await ws.receive_text())
        except WebSocketDisconnect:
            pass
        finally:
            sess.close()
            for task in tasks:
                task.cancel()
                with contextlib.suppress(asyncio.CancelledError, Exception):
                    await task

    return app
