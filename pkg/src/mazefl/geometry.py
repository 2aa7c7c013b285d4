"""Mazes, block taxonomy, irregular wall profiles and exact 2-D ray casting.

Conventions
-----------
* World frame: +x east, +y north, headings counterclockwise from +x.
* Cell ``(i, j)`` is column ``i`` (x) and row ``j`` (y); its center is at
  ``((i + 0.5) * cell_size, (j + 0.5) * cell_size)``.
* ``h_walls[j][i]`` is the wall on the line ``y = j * cell_size`` spanning
  column ``i`` (shape ``(size + 1, size)``).
* ``v_walls[j][i]`` is the wall on the line ``x = i * cell_size`` spanning
  row ``j`` (shape ``(size, size + 1)``).
* Wall masks use bit order front=1, right=2, back=4, left=8.  A *world*
  mask is the observer mask of someone facing north, so N=1, E=2, S=4, W=8.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

FRONT, RIGHT, BACK, LEFT = 1, 2, 4, 8
NORTH, EAST, SOUTH, WEST = FRONT, RIGHT, BACK, LEFT
FULL_MASK = 0b1111
NUM_LABELS = 15

CELL_SIZE = 0.6
P_OPEN = 0.3
TWO_PI = 2.0 * math.pi

# world direction bit -> (di, dj)
STEP = {NORTH: (0, 1), EAST: (1, 0), SOUTH: (0, -1), WEST: (-1, 0)}


class InvalidMask(ValueError):
    pass


class InvalidSize(ValueError):
    pass


class OutOfBounds(IndexError):
    pass


# --------------------------------------------------------------------------
# Block taxonomy


def label_from_mask(mask: int) -> int:
    """Canonical label of an observer-frame wall mask.

    Every 4-bit subset except the fully enclosed cell is a valid block, so
    the label is the mask value itself.
    """
    mask = int(mask)
    if not 0 <= mask < FULL_MASK:
        raise InvalidMask(f"mask {mask:#06b} is not a valid block configuration")
    return mask


def mask_from_label(label: int) -> int:
    label = int(label)
    if not 0 <= label < NUM_LABELS:
        raise InvalidMask(f"label {label} outside 0..{NUM_LABELS - 1}")
    return label


def rotate_mask(mask: int, quarter_turns: int) -> int:
    """Wall mask as seen after turning clockwise by ``quarter_turns`` * 90 deg.

    A wall in front ends up on the left after one clockwise turn.
    """
    k = quarter_turns % 4
    mask &= FULL_MASK
    return ((mask >> k) | (mask << (4 - k))) & FULL_MASK


def normalize_angle(theta: float) -> float:
    theta = math.fmod(theta, TWO_PI)
    if theta < 0.0:
        theta += TWO_PI
    # fmod of a value just below 0 can round up to exactly 2*pi
    return 0.0 if theta >= TWO_PI else theta


def heading_turns(heading: float) -> int:
    """Clockwise quarter turns from north to the nearest cardinal of ``heading``."""
    return int(round((math.pi / 2 - heading) / (math.pi / 2))) % 4


def turns_heading(turns: int) -> float:
    """Inverse of :func:`heading_turns` for exact cardinal headings."""
    return normalize_angle(math.pi / 2 - (turns % 4) * math.pi / 2)


def world_to_observer(world_mask: int, heading: float) -> int:
    return rotate_mask(world_mask, heading_turns(heading))


def observer_to_world(observer_mask: int, heading: float) -> int:
    return rotate_mask(observer_mask, -heading_turns(heading))


# --------------------------------------------------------------------------
# Wall profiles and mazes


@dataclass(frozen=True)
class WallProfile:
    kind: str
    base_thickness: float
    cylinder_radius: float
    positions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(float(p) for p in self.positions))
        if self.cylinder_radius <= 0 or self.base_thickness < 0:
            raise ValueError("wall profile dimensions must be positive")
        if not self.positions or not all(0.0 <= p <= 1.0 for p in self.positions):
            raise ValueError("cylinder positions must be fractions in [0, 1]")

    @property
    def cylinder_count(self) -> int:
        return len(self.positions)

    @property
    def protrusion(self) -> float:
        """How far the profile reaches into the cell from the nominal wall line."""
        return self.base_thickness + self.cylinder_radius

    def fits(self, cell_size: float) -> bool:
        return self.base_thickness + 2 * self.cylinder_radius < cell_size / 4

    @classmethod
    def alpha(cls) -> "WallProfile":
        return cls("alpha", 0.02, 0.05, (1 / 3, 2 / 3))

    @classmethod
    def beta(cls) -> "WallProfile":
        return cls("beta", 0.02, 0.035, (0.25, 0.5, 0.75))

    @classmethod
    def named(cls, kind: str) -> "WallProfile":
        try:
            return {"alpha": cls.alpha, "beta": cls.beta}[kind]()
        except KeyError:
            raise ValueError(f"unknown wall profile {kind!r}") from None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base_thickness": self.base_thickness,
            "cylinder_radius": self.cylinder_radius,
            "positions": list(self.positions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WallProfile":
        return cls(d["kind"], float(d["base_thickness"]), float(d["cylinder_radius"]),
                   tuple(d["positions"]))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))


@dataclass(frozen=True, eq=False)
class Maze:
    size: int
    cell_size: float
    profile: WallProfile
    h_walls: np.ndarray
    v_walls: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        h = np.array(self.h_walls, dtype=bool)
        v = np.array(self.v_walls, dtype=bool)
        if h.shape != (self.size + 1, self.size) or v.shape != (self.size, self.size + 1):
            raise ValueError("wall arrays do not match maze size")
        h.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "h_walls", h)
        object.__setattr__(self, "v_walls", v)

    def __eq__(self, other):
        if not isinstance(other, Maze):
            return NotImplemented
        return (self.size == other.size and self.cell_size == other.cell_size
                and self.profile == other.profile and self.seed == other.seed
                and np.array_equal(self.h_walls, other.h_walls)
                and np.array_equal(self.v_walls, other.v_walls))

    @property
    def cells(self) -> list[tuple[int, int]]:
        return [(i, j) for j in range(self.size) for i in range(self.size)]

    def contains(self, cell: tuple[int, int]) -> bool:
        i, j = cell
        return 0 <= i < self.size and 0 <= j < self.size

    def _check(self, cell):
        if not self.contains(cell):
            raise OutOfBounds(f"cell {cell} outside {self.size}x{self.size} maze")

    def world_mask(self, cell: tuple[int, int]) -> int:
        self._check(cell)
        i, j = cell
        return ((NORTH if self.h_walls[j + 1, i] else 0)
                | (EAST if self.v_walls[j, i + 1] else 0)
                | (SOUTH if self.h_walls[j, i] else 0)
                | (WEST if self.v_walls[j, i] else 0))

    def has_wall(self, cell: tuple[int, int], direction: int) -> bool:
        return bool(self.world_mask(cell) & direction)

    def center(self, cell: tuple[int, int]) -> tuple[float, float]:
        i, j = cell
        return ((i + 0.5) * self.cell_size, (j + 0.5) * self.cell_size)

    def cell_at(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size)))

    def neighbors(self, cell: tuple[int, int]) -> list[tuple[int, int]]:
        """Cells reachable in one step (no wall in between)."""
        mask = self.world_mask(cell)
        out = []
        for bit, (di, dj) in STEP.items():
            if not mask & bit:
                out.append((cell[0] + di, cell[1] + dj))
        return out

    def reachable(self, start: tuple[int, int] = (0, 0)) -> set[tuple[int, int]]:
        seen = {start}
        stack = [start]
        while stack:
            c = stack.pop()
            for n in self.neighbors(c):
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return seen

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "cell_size": self.cell_size,
            "profile": self.profile.to_dict(),
            "h_walls": self.h_walls.astype(int).tolist(),
            "v_walls": self.v_walls.astype(int).tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Maze":
        return cls(int(d["size"]), float(d["cell_size"]), WallProfile.from_dict(d["profile"]),
                   np.array(d["h_walls"], dtype=bool), np.array(d["v_walls"], dtype=bool),
                   d.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Maze":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_maze(seed: int, size: int = 4, profile: WallProfile | str = "alpha",
                  cell_size: float = CELL_SIZE, p_open: float = P_OPEN) -> Maze:
    """Random spanning tree (randomized DFS) plus extra loop-making removals."""
    if size < 2:
        raise InvalidSize(f"maze size must be >= 2, got {size}")
    if isinstance(profile, str):
        profile = WallProfile.named(profile)
    rng = np.random.default_rng(seed)
    h = np.ones((size + 1, size), dtype=bool)
    v = np.ones((size, size + 1), dtype=bool)

    def open_between(a, b):
        (i, j), (k, l) = a, b
        if i == k:
            h[max(j, l), i] = False
        else:
            v[j, max(i, k)] = False

    visited = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        i, j = stack[-1]
        options = [(i + di, j + dj) for di, dj in STEP.values()
                   if 0 <= i + di < size and 0 <= j + dj < size
                   and (i + di, j + dj) not in visited]
        if not options:
            stack.pop()
            continue
        nxt = options[rng.integers(len(options))]
        open_between((i, j), nxt)
        visited.add(nxt)
        stack.append(nxt)

    # interior walls only; boundary rows/columns stay closed
    for j in range(1, size):
        for i in range(size):
            if h[j, i] and rng.random() < p_open:
                h[j, i] = False
    for j in range(size):
        for i in range(1, size):
            if v[j, i] and rng.random() < p_open:
                v[j, i] = False

    maze = Maze(size, cell_size, profile, h, v, seed)
    assert all(maze.world_mask(c) != FULL_MASK for c in maze.cells)
    return maze


# --------------------------------------------------------------------------
# Obstacles


@dataclass(frozen=True)
class Segment:
    p1: tuple[float, float]
    p2: tuple[float, float]

    def __post_init__(self):
        if math.dist(self.p1, self.p2) <= 0:
            raise ValueError("degenerate segment")


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")


Obstacle = Union[Segment, Circle]


def _wall_obstacles(maze: Maze, cell, direction: int) -> list[Obstacle]:
    """Base segment plus cylinders of one wall, on the face pointing into ``cell``."""
    cs, prof = maze.cell_size, maze.profile
    x0, y0 = cell[0] * cs, cell[1] * cs
    t = prof.base_thickness
    # nominal line endpoints (a, b) and inward normal n
    if direction == NORTH:
        a, b, n = (x0, y0 + cs), (x0 + cs, y0 + cs), (0.0, -1.0)
    elif direction == SOUTH:
        a, b, n = (x0, y0), (x0 + cs, y0), (0.0, 1.0)
    elif direction == EAST:
        a, b, n = (x0 + cs, y0), (x0 + cs, y0 + cs), (-1.0, 0.0)
    else:
        a, b, n = (x0, y0), (x0, y0 + cs), (1.0, 0.0)
    p1 = (a[0] + n[0] * t, a[1] + n[1] * t)
    p2 = (b[0] + n[0] * t, b[1] + n[1] * t)
    out: list[Obstacle] = [Segment(p1, p2)]
    for f in prof.positions:
        out.append(Circle((p1[0] + f * (p2[0] - p1[0]), p1[1] + f * (p2[1] - p1[1])),
                          prof.cylinder_radius))
    return out


def wall_obstacles(maze: Maze, cell: tuple[int, int]) -> list[Obstacle]:
    """Obstacles contributed by the walls of ``cell`` itself."""
    mask = maze.world_mask(cell)
    out: list[Obstacle] = []
    for bit in (NORTH, EAST, SOUTH, WEST):
        if mask & bit:
            out.extend(_wall_obstacles(maze, cell, bit))
    return out


def cell_obstacles(maze: Maze, cell: tuple[int, int], max_range: float = 12.0) -> list[Obstacle]:
    """Everything a sensor at the center of ``cell`` could hit within ``max_range``.

    Gathers the wall obstacles of every cell whose square comes within range
    of the center, which is a superset of what is visible through open sides.
    """
    maze._check(cell)
    cx, cy = maze.center(cell)
    cs = maze.cell_size
    out: list[Obstacle] = []
    for c in maze.cells:
        x0, y0 = c[0] * cs, c[1] * cs
        dx = max(x0 - cx, 0.0, cx - (x0 + cs))
        dy = max(y0 - cy, 0.0, cy - (y0 + cs))
        if math.hypot(dx, dy) <= max_range:
            out.extend(wall_obstacles(maze, c))
    return out


@dataclass(frozen=True, eq=False)
class ObstacleSet:
    """Obstacles packed into arrays for vectorized casting.

    ``segments`` rows are ``(x1, y1, x2, y2)``; ``circles`` rows ``(cx, cy, r)``.
    """
    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    circles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @classmethod
    def pack(cls, obstacles: Iterable[Obstacle]) -> "ObstacleSet":
        segs, circs = [], []
        for ob in obstacles:
            if isinstance(ob, Segment):
                segs.append((*ob.p1, *ob.p2))
            else:
                circs.append((*ob.center, ob.radius))
        return cls(np.array(segs, dtype=float).reshape(-1, 4),
                   np.array(circs, dtype=float).reshape(-1, 3))

    def __len__(self):
        return len(self.segments) + len(self.circles)

    def clearance(self, x: float, y: float) -> float:
        """Distance from a point to the nearest obstacle surface (negative if inside a circle)."""
        best = math.inf
        if len(self.segments):
            a = self.segments[:, :2]
            d = self.segments[:, 2:] - a
            p = np.array([x, y]) - a
            s = np.clip(np.einsum("ij,ij->i", p, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
            best = min(best, float(np.min(np.hypot(*(p - s[:, None] * d).T))))
        if len(self.circles):
            c = self.circles
            best = min(best, float(np.min(np.hypot(x - c[:, 0], y - c[:, 1]) - c[:, 2])))
        return best


_EPS = 1e-12


def cast_rays(obstacles: ObstacleSet, x: float, y: float, angles: np.ndarray,
              max_range: float) -> np.ndarray:
    """Distance to the first hit along each ray, or ``max_range`` if nothing is hit."""
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    angles = np.asarray(angles, dtype=float)
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    best = np.full(angles.shape, float(max_range))

    if len(obstacles.segments):
        s = obstacles.segments
        ax, ay = s[:, 0] - x, s[:, 1] - y
        ex, ey = s[:, 2] - s[:, 0], s[:, 3] - s[:, 1]
        denom = dx * ey - dy * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ax * ey - ay * ex) / denom
            u = (ax * dy - ay * dx) / denom
        hit = (np.abs(denom) > _EPS) & (t > _EPS) & (u >= 0.0) & (u <= 1.0)
        t = np.where(hit, t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    if len(obstacles.circles):
        c = obstacles.circles
        ox, oy = x - c[:, 0], y - c[:, 1]
        b = dx * ox + dy * oy
        cc = ox * ox + oy * oy - c[:, 2] ** 2
        disc = b * b - cc
        root = np.sqrt(np.maximum(disc, 0.0))
        t1 = -b - root
        t2 = -b + root
        t = np.where(t1 > _EPS, t1, t2)
        t = np.where((disc >= 0.0) & (t > _EPS), t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    return best


def ray_cast(obstacles: Sequence[Obstacle] | ObstacleSet, origin: tuple[float, float],
             angle: float, max_range: float) -> float:
    if not isinstance(obstacles, ObstacleSet):
        obstacles = ObstacleSet.pack(obstacles)
    return float(cast_rays(obstacles, origin[0], origin[1], np.array([angle]), max_range)[0])
