"""Data-collection protocol and the ``MZFL`` binary dataset format."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Maze, Pose, world_to_observer
from .lidar import NUM_RAYS, NoiseModel, PoseInsideObstacle, features, maze_obstacles, sweep

MAGIC = b"MZFL"
VERSION = 1
HEADINGS = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
MAX_JITTER_TRIES = 100


class FormatError(ValueError):
    pass


class EmptyClass(ValueError):
    pass


@dataclass(frozen=True)
class JitterParams:
    pos_sigma: float = 0.02
    heading_sigma: float = 0.05

    def __post_init__(self):
        if self.pos_sigma < 0 or self.heading_sigma < 0:
            raise ValueError("jitter sigmas must be non-negative")

    @classmethod
    def none(cls) -> "JitterParams":
        return cls(0.0, 0.0)


@dataclass(eq=False)
class Dataset:
    x: np.ndarray  # (n, 1147) float32 features
    y: np.ndarray  # (n,) uint8 labels
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32).reshape(-1, NUM_RAYS)
        self.y = np.ascontiguousarray(self.y, dtype=np.uint8).reshape(-1)
        if len(self.x) != len(self.y):
            raise ValueError("features and labels differ in length")
        if len(self.y) and int(self.y.max()) > 14:
            raise ValueError("labels must lie in 0..14")

    def __len__(self):
        return len(self.y)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and self.provenance == other.provenance)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], dict(self.provenance))

    @classmethod
    def concat(cls, parts: list["Dataset"]) -> "Dataset":
        return cls(np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]),
                   {"parts": [p.provenance for p in parts]})

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=15)


def cell_rng(seed: int, cell: tuple[int, int]) -> np.random.Generator:
    """Independent stream per cell so collection can be split across workers."""
    return np.random.default_rng(np.random.SeedSequence([seed, cell[0], cell[1]]))


def _jittered_pose(maze, cell, heading, jitter, rng) -> Pose:
    cx, cy = maze.center(cell)
    for _ in range(MAX_JITTER_TRIES):
        dx, dy = rng.normal(0.0, jitter.pos_sigma, 2) if jitter.pos_sigma else (0.0, 0.0)
        dh = rng.normal(0.0, jitter.heading_sigma) if jitter.heading_sigma else 0.0
        pose = Pose(cx + dx, cy + dy, heading + dh)
        if maze.cell_at(pose.x, pose.y) != cell:
            continue
        if maze_obstacles(maze, cell).clearance(pose.x, pose.y) >= maze.profile.base_thickness:
            return pose
    return Pose(cx, cy, heading)


def collect_cell(maze: Maze, cell, sweeps_per_orientation: int, jitter: JitterParams,
                 noise: NoiseModel, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = cell_rng(seed, cell)
    n = 4 * sweeps_per_orientation
    x = np.empty((n, NUM_RAYS), dtype=np.float32)
    y = np.empty(n, dtype=np.uint8)
    world = maze.world_mask(cell)
    k = 0
    for heading in HEADINGS:
        label = world_to_observer(world, heading)
        for _ in range(sweeps_per_orientation):
            pose = _jittered_pose(maze, cell, heading, jitter, rng)
            try:
                scan = sweep(maze, pose, noise, rng)
            except PoseInsideObstacle:  # pragma: no cover - rejection sampling prevents this
                scan = sweep(maze, Pose(*maze.center(cell), heading), noise, rng)
            x[k] = features(scan)
            y[k] = label
            k += 1
    return x, y


def collect(maze: Maze, sweeps_per_orientation: int = 200, jitter: JitterParams | None = None,
            seed: int = 0, noise: NoiseModel | None = None) -> Dataset:
    """Visit every cell, face the four cardinal headings, take jittered sweeps."""
    if sweeps_per_orientation < 1:
        raise ValueError("sweeps_per_orientation must be >= 1")
    jitter = JitterParams() if jitter is None else jitter
    noise = NoiseModel() if noise is None else noise
    parts = [collect_cell(maze, c, sweeps_per_orientation, jitter, noise, seed) for c in maze.cells]
    provenance = {
        "maze_seed": maze.seed,
        "profile": maze.profile.kind,
        "sweeps_per_orientation": sweeps_per_orientation,
        "jitter": {"pos_sigma": jitter.pos_sigma, "heading_sigma": jitter.heading_sigma,
                   "per_sweep": True},
        "noise": {"relative_sigma": noise.relative_sigma, "accuracy_range": noise.accuracy_range},
        "seed": seed,
    }
    return Dataset(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                   provenance)


def split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; both halves keep the original sample order."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    test_idx = []
    for label in range(15):
        idx = np.flatnonzero(dataset.y == label)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise EmptyClass(f"label {label} has only {len(idx)} sample")
        n_test = min(max(int(round(len(idx) * test_fraction)), 1), len(idx) - 1)
        test_idx.append(rng.permutation(idx)[:n_test])
    is_test = np.zeros(len(dataset), dtype=bool)
    if test_idx:
        is_test[np.concatenate(test_idx)] = True
    train, test = dataset.subset(~is_test), dataset.subset(is_test)
    train.provenance["split"] = {"part": "train", "test_fraction": test_fraction, "seed": seed}
    test.provenance["split"] = {"part": "test", "test_fraction": test_fraction, "seed": seed}
    return train, test


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("x", "<f4", (dim,)), ("y", "u1")])


def to_bytes(dataset: Dataset) -> bytes:
    rec = np.empty(len(dataset), dtype=_record_dtype(NUM_RAYS))
    rec["x"] = dataset.x
    rec["y"] = dataset.y
    meta = json.dumps(dataset.provenance, sort_keys=True, separators=(",", ":")).encode()
    header = MAGIC + struct.pack("<BII", VERSION, len(dataset), NUM_RAYS)
    return header + rec.tobytes() + struct.pack("<I", len(meta)) + meta


def from_bytes(buf: bytes) -> Dataset:
    head = 4 + struct.calcsize("<BII")
    if len(buf) < head or buf[:4] != MAGIC:
        raise FormatError("not an MZFL dataset")
    version, count, dim = struct.unpack_from("<BII", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if dim != NUM_RAYS:
        raise FormatError(f"feature dimension {dim} != {NUM_RAYS}")
    dt = _record_dtype(dim)
    end = head + count * dt.itemsize
    if len(buf) < end + 4:
        raise FormatError("truncated dataset body")
    (meta_len,) = struct.unpack_from("<I", buf, end)
    if len(buf) != end + 4 + meta_len:
        raise FormatError("provenance block length mismatch")
    rec = np.frombuffer(buf, dtype=dt, count=count, offset=head)
    try:
        provenance = json.loads(buf[end + 4:].decode()) if meta_len else {}
    except ValueError as exc:
        raise FormatError(f"bad provenance block: {exc}") from None
    try:
        return Dataset(rec["x"].copy(), rec["y"].copy(), provenance)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save(dataset: Dataset, path) -> None:
    Path(path).write_bytes(to_bytes(dataset))


def load(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())
