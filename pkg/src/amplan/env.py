"""World model: bounded 2D map with static occupancy grid, dynamic rectangular
obstacles, collision queries and the sampling primitives used by the planner.

Coordinates are in meters with the origin at the bottom-left corner; the map
document's first row describes the top of the world (maximum y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

State = tuple[float, ...]


class MapFormatError(ValueError):
    """Raised for a malformed map document."""


class SamplingExhaustedError(RuntimeError):
    """Raised when rejection sampling fails to find a free state."""


class DegenerateEllipseError(ValueError):
    """Raised when the requested ellipse has c_best < c_min."""


class UnknownObstacleError(KeyError):
    """Raised when removing a dynamic obstacle id that does not exist."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle (meters), closed region."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate rect {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


def segment_hits_rect(ax, ay, bx, by, rect: Rect) -> bool:
    # Liang-Barsky clip; grazing contact counts as a hit (rect is closed).
    t0, t1 = 0.0, 1.0
    dx, dy = bx - ax, by - ay
    for p, q in ((-dx, ax - rect.x0), (dx, rect.x1 - ax),
                 (-dy, ay - rect.y0), (dy, rect.y1 - ay)):
        if p == 0.0:
            if q < 0.0:
                return False
        else:
            r = q / p
            if p < 0.0:
                if r > t1:
                    return False
                if r > t0:
                    t0 = r
            else:
                if r < t0:
                    return False
                if r < t1:
                    t1 = r
    return True


class Environment:
    """Bounded free/obstacle space backed by an occupancy grid.

    Static occupancy comes from the map document; dynamic obstacles are
    axis-aligned rectangles added/removed at runtime. `version` increases on
    every dynamic change so readers can detect staleness. Mutations must
    happen between planner iterations (single-writer contract); reads are
    safe from any thread.
    """

    def __init__(self, width: float, height: float, cell_size: float,
                 blocked: np.ndarray):
        if width <= 0 or height <= 0 or cell_size <= 0:
            raise ValueError("width, height and cell_size must be positive")
        self.width = float(width)
        self.height = float(height)
        self.cell_size = float(cell_size)
        self._rows, self._cols = blocked.shape
        # Flat row-major bitmap, row 0 = top of the world. bytearray indexing
        # is the fastest scalar lookup available for the raycast hot path.
        self._blocked = bytearray(blocked.astype(np.uint8).reshape(-1).tobytes())
        self.dynamic_obstacles: dict[int, Rect] = {}
        self.version = 0
        self._next_obstacle_id = 1
        self._change_log: list[tuple[int, str, Rect]] = []  # (version, op, rect)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "Environment":
        """Parse a map document: header ``map <w> <h> <cell>`` then grid rows
        of ``.`` (free) / ``#`` (obstacle), row 0 at the top."""
        lines = [ln for ln in text.splitlines() if ln.strip() != ""]
        if not lines:
            raise MapFormatError("empty map document")
        header = lines[0].split()
        if len(header) != 4 or header[0] != "map":
            raise MapFormatError(f"bad header line: {lines[0]!r}")
        try:
            width, height, cell = (float(tok) for tok in header[1:])
        except ValueError as exc:
            raise MapFormatError(f"non-numeric header field: {exc}") from exc
        if width <= 0 or height <= 0 or cell <= 0:
            raise MapFormatError("header dimensions must be positive")
        rows = round(height / cell)
        cols = round(width / cell)
        if abs(rows * cell - height) > 1e-9 or abs(cols * cell - width) > 1e-9:
            raise MapFormatError("cell_size must divide width and height")
        grid_lines = lines[1:]
        if len(grid_lines) != rows:
            raise MapFormatError(f"expected {rows} grid rows, got {len(grid_lines)}")
        blocked = np.zeros((rows, cols), dtype=bool)
        for r, ln in enumerate(grid_lines):
            if len(ln) != cols:
                raise MapFormatError(f"row {r} has length {len(ln)}, expected {cols}")
            for c, ch in enumerate(ln):
                if ch == "#":
                    blocked[r, c] = True
                elif ch != ".":
                    raise MapFormatError(f"bad character {ch!r} at row {r} col {c}")
        if blocked.all():
            raise MapFormatError("map has no free cells")
        return cls(width, height, cell, blocked)

    def to_text(self) -> str:
        rows, cols = self._rows, self._cols
        cs = self.cell_size
        out = [f"map {self.width:g} {self.height:g} {cs:g}"]
        for r in range(rows):
            base = r * cols
            out.append("".join("#" if self._blocked[base + c] else "."
                               for c in range(cols)))
        return "\n".join(out) + "\n"

    # -- cell mapping ------------------------------------------------------

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self._rows, self._cols

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing an in-bounds point. Row 0 is the
        top row; a point at height y falls in row floor((H - y)/cell)."""
        cs = self.cell_size
        col = int(x / cs)
        row = int((self.height - y) / cs)
        if col >= self._cols:
            col = self._cols - 1
        if row >= self._rows:
            row = self._rows - 1
        return row, col

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def static_free(self, x: float, y: float) -> bool:
        if not (0.0 <= x <= self.width and 0.0 <= y <= self.height):
            return False
        row, col = self.cell_of(x, y)
        return not self._blocked[row * self._cols + col]

    def in_free(self, state: State) -> bool:
        """True iff the state is inside bounds, its static cell is free and
        it lies in no dynamic obstacle."""
        x, y = state[0], state[1]
        if not self.static_free(x, y):
            return False
        for rect in self.dynamic_obstacles.values():
            if rect.contains(x, y):
                return False
        return True

    def free_cell_count(self) -> int:
        return len(self._blocked) - sum(self._blocked)

    # -- collision testing -------------------------------------------------

    def obs_free(self, a: State, b: State) -> bool:
        """True iff the whole segment [a, b] lies in free space.

        Static occupancy is tested with a DDA grid raycast (exact w.r.t. the
        cell model); dynamic obstacles with rectangle-segment intersection.
        Segments leaving the world bounds are not free.
        """
        ax, ay = a[0], a[1]
        bx, by = b[0], b[1]
        if not (self.in_bounds(ax, ay) and self.in_bounds(bx, by)):
            return False
        if self._raycast_blocked(ax, ay, bx, by):
            return False
        for rect in self.dynamic_obstacles.values():
            if segment_hits_rect(ax, ay, bx, by, rect):
                return False
        return True

    def _raycast_blocked(self, ax: float, ay: float, bx: float, by: float) -> bool:
        # Grid-space coordinates: u along columns, v along rows from the top.
        cs = self.cell_size
        cols, rows = self._cols, self._rows
        blocked = self._blocked
        u0 = ax / cs
        v0 = (self.height - ay) / cs
        u1 = bx / cs
        v1 = (self.height - by) / cs
        iu = min(int(u0), cols - 1)
        iv = min(int(v0), rows - 1)
        ju = min(int(u1), cols - 1)
        jv = min(int(v1), rows - 1)
        if blocked[iv * cols + iu] or blocked[jv * cols + ju]:
            return True
        du = u1 - u0
        dv = v1 - v0
        if du > 0.0:
            su, tdu = 1, 1.0 / du
            tmu = (iu + 1 - u0) * tdu
        elif du < 0.0:
            su, tdu = -1, -1.0 / du
            tmu = (u0 - iu) * tdu
        else:
            su, tdu, tmu = 0, math.inf, math.inf
        if dv > 0.0:
            sv, tdv = 1, 1.0 / dv
            tmv = (iv + 1 - v0) * tdv
        elif dv < 0.0:
            sv, tdv = -1, -1.0 / dv
            tmv = (v0 - iv) * tdv
        else:
            sv, tdv, tmv = 0, math.inf, math.inf
        for _ in range(cols + rows + 4):
            if iu == ju and iv == jv:
                return False
            if tmu > 1.0 and tmv > 1.0:
                return False  # remaining crossings lie past the endpoint
            if tmu < tmv:
                iu += su
                tmu += tdu
            elif tmv < tmu:
                iv += sv
                tmv += tdv
            else:
                # Exact corner crossing: the segment may graze the two cells
                # adjacent to the corner, so test both before stepping
                # diagonally.
                nu, nv = iu + su, iv + sv
                if 0 <= nu < cols and blocked[iv * cols + nu]:
                    return True
                if 0 <= nv < rows and blocked[nv * cols + iu]:
                    return True
                iu, iv = nu, nv
                tmu += tdu
                tmv += tdv
            if not (0 <= iu < cols and 0 <= iv < rows):
                return False  # grazed the world boundary at the endpoint
            if blocked[iv * cols + iu]:
                return True
        return False

    # -- dynamic obstacles --------------------------------------------------

    def add_obstacle(self, rect: Rect) -> int:
        """Add a dynamic rectangular obstacle; returns its id."""
        if not (self.in_bounds(rect.x0, rect.y0) and self.in_bounds(rect.x1, rect.y1)):
            raise ValueError(f"rect {rect} outside world bounds")
        oid = self._next_obstacle_id
        self._next_obstacle_id += 1
        self.dynamic_obstacles[oid] = rect
        self.version += 1
        self._change_log.append((self.version, "add", rect))
        return oid

    def remove_obstacle(self, oid: int) -> None:
        if oid not in self.dynamic_obstacles:
            raise UnknownObstacleError(oid)
        rect = self.dynamic_obstacles.pop(oid)
        self.version += 1
        self._change_log.append((self.version, "remove", rect))

    def set_obstacle(self, rect: Rect, present: bool, oid: int | None = None):
        """Convenience toggle: add when present, remove (by id) otherwise."""
        if present:
            return self.add_obstacle(rect)
        if oid is None:
            raise UnknownObstacleError("removal requires an obstacle id")
        self.remove_obstacle(oid)
        return oid

    def changes_since(self, version: int) -> list[tuple[int, str, Rect]]:
        """Dynamic-obstacle events with version > the given counter."""
        return [ev for ev in self._change_log if ev[0] > version]


# -- sampling primitives ----------------------------------------------------

def sample_free(env: Environment, rng: np.random.Generator,
                max_attempts: int = 10_000) -> State:
    """Uniform sample over the free area (rejection over the bounding box)."""
    w, h = env.width, env.height
    for _ in range(max_attempts):
        x = rng.random() * w
        y = rng.random() * h
        if env.in_free((x, y)):
            return (x, y)
    raise SamplingExhaustedError(
        f"no free sample found in {max_attempts} attempts")


def sample_sphere(center: State, r: float, rng: np.random.Generator) -> State:
    """Uniform sample from the ball of radius r about center (not filtered
    against free space; callers reject as needed)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    d = len(center)
    direction = rng.standard_normal(d)
    norm = math.sqrt(float(direction @ direction))
    while norm == 0.0:
        direction = rng.standard_normal(d)
        norm = math.sqrt(float(direction @ direction))
    radius = r * rng.random() ** (1.0 / d)
    return tuple(c + radius * v / norm for c, v in zip(center, direction))


def sample_rewire_ellipse(root: State, goal: State, c_best: float,
                          rng: np.random.Generator) -> State:
    """Uniform sample from the ellipse with foci root/goal and transverse
    diameter c_best (conjugate diameter sqrt(c_best^2 - c_min^2))."""
    if not math.isfinite(c_best):
        raise DegenerateEllipseError("c_best must be finite")
    diff = [g - r for r, g in zip(root, goal)]
    c_min = math.sqrt(sum(v * v for v in diff))
    if c_best < c_min - 1e-9:
        raise DegenerateEllipseError(f"c_best {c_best} < c_min {c_min}")
    c_best = max(c_best, c_min)
    d = len(root)
    a = c_best / 2.0
    b = math.sqrt(max(c_best * c_best - c_min * c_min, 0.0)) / 2.0
    # Unit-ball sample, scaled along the transverse/conjugate axes, rotated
    # so the transverse axis runs root -> goal, centered between the foci.
    point = sample_sphere((0.0,) * d, 1.0, rng)
    scaled = [point[0] * a] + [p * b for p in point[1:]]
    center = [(r + g) / 2.0 for r, g in zip(root, goal)]
    if c_min < 1e-12:
        return tuple(c + s for c, s in zip(center, scaled))
    axis = [v / c_min for v in diff]
    if d == 2:
        cx, sx = axis
        rx = scaled[0] * cx - scaled[1] * sx
        ry = scaled[0] * sx + scaled[1] * cx
        return (center[0] + rx, center[1] + ry)
    basis = np.eye(d)
    basis[:, 0] = axis
    q, _ = np.linalg.qr(basis)
    if float(q[:, 0] @ np.asarray(axis)) < 0:
        q = -q
    rotated = q @ np.asarray(scaled)
    return tuple(c + float(v) for c, v in zip(center, rotated))
