"""Simulated 360-degree LiDAR with RPLIDAR A1 characteristics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Maze, ObstacleSet, Pose, cast_rays, cell_obstacles

NUM_RAYS = 1147
MIN_RANGE = 0.15
MAX_RANGE = 12.0


class PoseInsideObstacle(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    relative_sigma: float = 0.01
    accuracy_range: float = 3.0
    # sigma multiplier outside the accuracy range
    far_factor: float = 3.0

    def __post_init__(self):
        if self.relative_sigma < 0:
            raise ValueError("relative_sigma must be non-negative")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(relative_sigma=0.0)

    def sigma(self, d: np.ndarray) -> np.ndarray:
        scale = np.where(d < self.accuracy_range, 1.0, self.far_factor)
        return self.relative_sigma * scale * d


@dataclass(frozen=True, eq=False)
class LidarScan:
    ranges: np.ndarray
    pose: Pose
    cell: tuple[int, int]
    label: int | None = None

    def __post_init__(self):
        if self.ranges.shape != (NUM_RAYS,):
            raise ValueError(f"a sweep has exactly {NUM_RAYS} readings")


def ray_angles(heading: float) -> np.ndarray:
    """Ray 0 points along the heading; rays advance counterclockwise."""
    return heading + 2.0 * math.pi * np.arange(NUM_RAYS) / NUM_RAYS


def maze_obstacles(maze: Maze, cell: tuple[int, int]) -> ObstacleSet:
    """Packed obstacles around ``cell``, memoized on the maze instance."""
    cache = maze.__dict__.setdefault("_obstacle_cache", {})
    if cell not in cache:
        cache[cell] = ObstacleSet.pack(cell_obstacles(maze, cell, MAX_RANGE))
    return cache[cell]


def true_ranges(maze: Maze, pose: Pose) -> np.ndarray:
    cell = maze.cell_at(pose.x, pose.y)
    obstacles = maze_obstacles(maze, cell)
    if obstacles.clearance(pose.x, pose.y) < maze.profile.base_thickness:
        raise PoseInsideObstacle(f"pose ({pose.x:.3f}, {pose.y:.3f}) collides with a wall")
    return cast_rays(obstacles, pose.x, pose.y, ray_angles(pose.heading), MAX_RANGE)


def sweep(maze: Maze, pose: Pose, noise: NoiseModel | None = None,
          rng: np.random.Generator | None = None, label: int | None = None) -> LidarScan:
    noise = noise or NoiseModel()
    d = true_ranges(maze, pose)
    if noise.relative_sigma > 0:
        if rng is None:
            raise ValueError("a noisy sweep needs an explicit rng")
        d = d + rng.standard_normal(NUM_RAYS) * noise.sigma(d)
    d = np.clip(d, MIN_RANGE, MAX_RANGE)
    return LidarScan(d, pose, maze.cell_at(pose.x, pose.y), label)


def features(scan: LidarScan | np.ndarray) -> np.ndarray:
    ranges = scan.ranges if isinstance(scan, LidarScan) else np.asarray(scan, dtype=float)
    return ranges / MAX_RANGE


def ranges_from_features(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float) * MAX_RANGE
