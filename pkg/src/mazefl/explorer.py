"""Autonomous maze discovery: classify each new cell, pick moves by clockwise priority."""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dataset import JitterParams
from .geometry import (FULL_MASK, STEP, Maze, Pose, observer_to_world,
                       turns_heading, world_to_observer)
from .lidar import LidarScan, NoiseModel, features, maze_obstacles, sweep

log = logging.getLogger(__name__)

# world direction bits indexed by clockwise quarter turns from north
DIRECTIONS = (1, 2, 4, 8)


class Action(enum.Enum):
    """Rotate clockwise by ``turns`` quarter turns, then move forward one cell."""
    Forward0 = 0
    ForwardCW90 = 1
    Forward180 = 2
    ForwardCCW90 = 3

    @property
    def turns(self) -> int:
        return self.value


# straight, clockwise, counter-clockwise, back
PRIORITY = (Action.Forward0, Action.ForwardCW90, Action.ForwardCCW90, Action.Forward180)


class Halt(Exception):
    pass


class Stuck(Exception):
    pass


class OracleClassifier:
    """Perfect perception: reads the ground-truth wall mask instead of a sweep."""
    needs_scan = False

    def __init__(self, maze: Maze):
        self.maze = maze

    def label(self, scan: LidarScan | None, cell, heading: float) -> int:
        return world_to_observer(self.maze.world_mask(cell), heading)


class ModelClassifier:
    """Argmax of the MLP, optionally averaging logits over several sweeps."""
    needs_scan = True

    def __init__(self, params: nn.MlpParams):
        self.params = params

    def label(self, scans, cell=None, heading=None) -> int:
        if isinstance(scans, LidarScan):
            scans = [scans]
        logits = nn.forward(self.params, np.stack([features(s) for s in scans]))
        return int(np.argmax(logits.mean(axis=0)))


def classify_cell(model, scan: LidarScan) -> tuple[int, int]:
    """Observer-frame label and the world-frame mask of *open* sides."""
    clf = model if hasattr(model, "label") else ModelClassifier(model)
    label = clf.label(scan, scan.cell, scan.pose.heading)
    walls = observer_to_world(label, scan.pose.heading)
    return label, FULL_MASK & ~walls


@dataclass
class ExplorerState:
    size: int
    cell: tuple[int, int] = (0, 0)
    turns: int = 0  # heading as clockwise quarter turns from north
    visited: set = field(default_factory=set)
    # believed open sides per classified cell (world frame)
    open_sides: dict = field(default_factory=dict)
    stack: list = field(default_factory=list)

    def target(self, action: Action) -> tuple[tuple[int, int], int]:
        d = DIRECTIONS[(self.turns + action.turns) % 4]
        di, dj = STEP[d]
        return (self.cell[0] + di, self.cell[1] + dj), d

    def in_grid(self, c) -> bool:
        return 0 <= c[0] < self.size and 0 <= c[1] < self.size

    def frontier(self) -> bool:
        for c, mask in self.open_sides.items():
            for d in DIRECTIONS:
                if mask & d:
                    n = (c[0] + STEP[d][0], c[1] + STEP[d][1])
                    if self.in_grid(n) and n not in self.visited:
                        return True
        return False


def action_towards(state: ExplorerState, cell) -> Action:
    for a in PRIORITY:
        if state.target(a)[0] == cell:
            return a
    raise ValueError(f"{cell} is not adjacent to {state.cell}")


def next_action(state: ExplorerState, open_sides: int) -> Action:
    """Clockwise-priority DFS step from ``state.cell`` given its believed open sides.

    Raises :class:`Halt` once no known frontier remains and :class:`Stuck`
    when the current cell is believed fully walled.
    """
    if not open_sides & FULL_MASK:
        raise Stuck(f"no open side believed at {state.cell}")
    for a in PRIORITY:
        n, d = state.target(a)
        if open_sides & d and state.in_grid(n) and n not in state.visited:
            return a
    if not state.stack or not state.frontier():
        raise Halt()
    return action_towards(state, state.stack[-1])


@dataclass
class DiscoveredMap:
    size: int
    # world-frame wall mask per cell as first classified, None if never visited
    cells: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    steps: int = 0
    stuck: bool = False
    budget_exhausted: bool = False
    blocked: list = field(default_factory=list)
    disagreements: int = 0

    def __post_init__(self):
        if not self.cells:
            self.cells = [[None] * self.size for _ in range(self.size)]

    def label(self, cell):
        return self.cells[cell[1]][cell[0]]

    def visited_cells(self) -> list[tuple[int, int]]:
        return [(i, j) for j in range(self.size) for i in range(self.size)
                if self.cells[j][i] is not None]

    def to_dict(self) -> dict:
        return {"size": self.size, "cells": self.cells, "trajectory": self.trajectory,
                "steps": self.steps, "stuck": self.stuck,
                "budget_exhausted": self.budget_exhausted, "blocked": self.blocked,
                "disagreements": self.disagreements}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscoveredMap":
        return cls(int(d["size"]), d["cells"], d["trajectory"], int(d["steps"]),
                   bool(d["stuck"]), bool(d.get("budget_exhausted", False)),
                   d.get("blocked", []), int(d.get("disagreements", 0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "DiscoveredMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _pose(maze, cell, turns, jitter, rng) -> Pose:
    x, y = maze.center(cell)
    heading = turns_heading(turns)
    if jitter is None or (jitter.pos_sigma == 0 and jitter.heading_sigma == 0):
        return Pose(x, y, heading)
    obstacles = maze_obstacles(maze, cell)
    for _ in range(100):
        p = Pose(x + rng.normal(0, jitter.pos_sigma), y + rng.normal(0, jitter.pos_sigma),
                 heading + rng.normal(0, jitter.heading_sigma))
        if maze.cell_at(p.x, p.y) == cell and obstacles.clearance(p.x, p.y) >= maze.profile.base_thickness:
            return p
    return Pose(x, y, heading)


def discover(maze: Maze, model, noise: NoiseModel | None = None, seed: int = 0,
             sweeps_per_cell: int = 1, jitter: JitterParams | None = None,
             step_budget: int | None = None, start=(0, 0), start_turns: int = 0) -> DiscoveredMap:
    """Explore ``maze`` from ``start`` with ``model`` (an MlpParams or a classifier)."""
    noise = NoiseModel() if noise is None else noise
    rng = np.random.default_rng(seed)
    clf = model if hasattr(model, "label") else ModelClassifier(model)
    budget = 10 * maze.size ** 2 if step_budget is None else step_budget
    state = ExplorerState(maze.size, tuple(start), start_turns)
    out = DiscoveredMap(maze.size)

    while True:
        cell = state.cell
        heading = turns_heading(state.turns)
        if cell not in state.visited:
            state.visited.add(cell)
            if clf.needs_scan:
                scans = [sweep(maze, _pose(maze, cell, state.turns, jitter, rng), noise, rng)
                         for _ in range(sweeps_per_cell)]
                label = clf.label(scans, cell, heading)
            else:
                label = clf.label(None, cell, heading)
            walls = observer_to_world(label, heading)
            _check_neighbors(out, cell, walls)
            out.cells[cell[1]][cell[0]] = walls
            open_sides = FULL_MASK & ~walls
            if out.trajectory:
                # the side we entered through is proven passable
                open_sides |= DIRECTIONS[(state.turns + 2) % 4]
            state.open_sides[cell] = open_sides

        try:
            action = next_action(state, state.open_sides[cell])
        except Halt:
            break
        except Stuck:
            out.stuck = True
            break
        target, d = state.target(action)
        if maze.has_wall(cell, d) or not maze.contains(target):
            out.blocked.append({"cell": list(cell), "direction": d})
            log.debug("blocked at %s moving %d", cell, d)
            state.open_sides[cell] &= ~d
            continue
        if out.steps >= budget:
            out.budget_exhausted = True
            break
        out.trajectory.append({"cell": list(cell), "heading": state.turns * 90, "action": action.name})
        if state.stack and target == state.stack[-1]:
            state.stack.pop()
        else:
            state.stack.append(cell)
        state.turns = (state.turns + action.turns) % 4
        state.cell = target
        out.steps += 1

    out.trajectory.append({"cell": list(state.cell), "heading": state.turns * 90, "action": None})
    return out


def _check_neighbors(out: DiscoveredMap, cell, walls: int) -> None:
    """Count shared-wall disagreements with already-mapped neighbours (first label wins)."""
    for k, d in enumerate(DIRECTIONS):
        n = (cell[0] + STEP[d][0], cell[1] + STEP[d][1])
        if not (0 <= n[0] < out.size and 0 <= n[1] < out.size):
            continue
        other = out.label(n)
        if other is None:
            continue
        opposite = DIRECTIONS[(k + 2) % 4]
        if bool(walls & d) != bool(other & opposite):
            out.disagreements += 1
            log.info("map disagreement between %s and %s", cell, n)


def compare_maps(truth: Maze, discovered: DiscoveredMap) -> tuple[float, int]:
    """Fraction of visited cells whose inferred world mask matches, and the visited count."""
    visited = discovered.visited_cells()
    if not visited:
        return 0.0, 0
    hits = sum(discovered.label(c) == truth.world_mask(c) for c in visited)
    return hits / len(visited), len(visited)
