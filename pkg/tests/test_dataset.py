import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mazefl import dataset as ds
from mazefl.geometry import generate_maze, world_to_observer
from mazefl.lidar import MAX_RANGE, MIN_RANGE, NUM_RAYS, NoiseModel, ranges_from_features

from oracles import mask_histogram


@pytest.fixture(scope="module")
def maze():
    return generate_maze(4, 4, "beta")


@pytest.fixture(scope="module")
def small(maze):
    return ds.collect(maze, 1, ds.JitterParams.none(), seed=0)


def synthetic(n_per_label, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(15), n_per_label)
    x = rng.uniform(0.0125, 1.0, (len(y), NUM_RAYS)).astype(np.float32)
    return ds.Dataset(x, y, {"synthetic": True})


def test_one_sweep_per_heading_labels(maze, small):
    assert len(small) == 64
    expected = []
    for cell in maze.cells:
        for heading in ds.HEADINGS:
            expected.append(world_to_observer(maze.world_mask(cell), heading))
    assert small.y.tolist() == expected


def test_label_histogram_matches_maze(maze, small):
    oracle = mask_histogram(maze.h_walls, maze.v_walls)
    assert oracle[15] == 0
    assert small.label_counts().tolist() == oracle[:15].tolist()


def test_features_decode_to_valid_ranges(small):
    r = ranges_from_features(small.x)
    assert r.min() >= MIN_RANGE - 1e-6 and r.max() <= MAX_RANGE + 1e-6


def test_collect_deterministic(maze):
    a = ds.collect(maze, 2, seed=9)
    b = ds.collect(maze, 2, seed=9)
    assert a == b
    assert a.x.tobytes() != ds.collect(maze, 2, seed=10).x.tobytes()
    assert a.provenance["jitter"]["per_sweep"] is True


def test_jittered_poses_stay_clear(maze):
    rng = np.random.default_rng(0)
    jit = ds.JitterParams(0.05, 0.1)
    for _ in range(200):
        p = ds._jittered_pose(maze, (0, 0), 0.0, jit, rng)
        assert maze.cell_at(p.x, p.y) == (0, 0)


def test_split_counts():
    d = synthetic(853)  # 12795 samples, not a multiple of 5
    train, test = ds.split(d, 0.2, seed=1)
    assert len(train) + len(test) == len(d)
    for label in range(15):
        n_test = int((test.y == label).sum())
        assert abs(n_test - 0.2 * 853) <= 1


def test_split_12800():
    d = ds.Dataset(np.zeros((12800, NUM_RAYS)), np.repeat(np.arange(16) % 15, 800)[:12800])
    train, test = ds.split(d, 0.2, seed=0)
    assert (len(train), len(test)) == (10240, 2560)


def test_split_disjoint_exhaustive():
    d = synthetic(10)
    d.x[:, 0] = np.arange(len(d))  # tag rows
    train, test = ds.split(d, 0.3, seed=2)
    a, b = set(train.x[:, 0].tolist()), set(test.x[:, 0].tolist())
    assert not a & b
    assert a | b == set(range(len(d)))
    assert ds.split(d, 0.3, seed=2)[1] == test


def test_split_rejects_singleton_class():
    d = ds.Dataset(np.zeros((3, NUM_RAYS)), [0, 0, 5])
    with pytest.raises(ds.EmptyClass):
        ds.split(d, 0.5)


def test_save_load_roundtrip(tmp_path, small):
    ds.save(small, tmp_path / "d.mzfl")
    assert ds.load(tmp_path / "d.mzfl") == small
    assert (tmp_path / "d.mzfl").read_bytes() == ds.to_bytes(ds.load(tmp_path / "d.mzfl"))


def test_format_layout(small):
    buf = ds.to_bytes(small)
    assert buf[:4] == b"MZFL" and buf[4] == 1
    assert int.from_bytes(buf[5:9], "little") == 64
    assert int.from_bytes(buf[9:13], "little") == NUM_RAYS
    first = np.frombuffer(buf, "<f4", NUM_RAYS, 13)
    assert np.array_equal(first, small.x[0])
    assert buf[13 + 4 * NUM_RAYS] == small.y[0]


def test_empty_roundtrip():
    empty = ds.Dataset(np.zeros((0, NUM_RAYS)), np.zeros(0))
    assert ds.from_bytes(ds.to_bytes(empty)) == empty


@pytest.mark.parametrize("cut", [0, 3, 10, 100, -1, -5])
def test_truncated_file_is_format_error(small, cut):
    buf = ds.to_bytes(small)
    with pytest.raises(ds.FormatError):
        ds.from_bytes(buf[:cut])


def test_bad_magic_and_version(small):
    buf = bytearray(ds.to_bytes(small))
    with pytest.raises(ds.FormatError):
        ds.from_bytes(b"XXXX" + bytes(buf[4:]))
    buf[4] = 2
    with pytest.raises(ds.FormatError):
        ds.from_bytes(bytes(buf))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 2 ** 31), st.dictionaries(st.text(max_size=5), st.integers()))
def test_roundtrip_property(n, seed, prov):
    rng = np.random.default_rng(seed)
    d = ds.Dataset(rng.random((n, NUM_RAYS)), rng.integers(0, 15, n), prov)
    assert ds.from_bytes(ds.to_bytes(d)) == d
