"""End-to-end acceptance checks, one test per criterion.

The two full pipeline runs are shared: criteria 1-4 read the first run's
report, criterion 9 compares both.  A one-line verdict per criterion is
printed in the terminal summary.
"""
import json
import math
import subprocess
import sys
from collections import Counter

import numpy as np
import pytest

from mazefl import nn
from mazefl.explorer import OracleClassifier, compare_maps, discover
from mazefl.fedavg import aggregate
from mazefl.geometry import Pose, cell_obstacles, generate_maze, ray_cast
from mazefl.lidar import NoiseModel, sweep

from conftest import ACCEPTANCE
from fuzz import OK_OUTCOMES, fuzz_client, fuzz_server_handshake, fuzz_server_round
from oracles import dense_ray_oracle, mlp_loss, numeric_grad, relative_error, weighted_mean_bruteforce

pytestmark = pytest.mark.acceptance


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    out = []
    for k in range(2):
        work = tmp_path_factory.mktemp(f"experiment{k}")
        subprocess.run([sys.executable, "-m", "mazefl.cli", "experiment", "--workdir", str(work),
                        "--out", str(work / "report.json")], check=True, stdout=subprocess.DEVNULL)
        out.append({"dir": work, "bytes": (work / "report.json").read_bytes(),
                    "report": json.loads((work / "report.json").read_text()),
                    "timings": json.loads((work / "timings.json").read_text())})
    return out


def test_c1_own_maze_accuracy(runs):
    rep, t = runs[0]["report"]["local"], runs[0]["timings"]
    a, b = rep["alpha_on_alpha"], rep["beta_on_beta"]
    ok = a >= 0.95 and b >= 0.95 and t["local_alpha"] <= 600 and t["local_beta"] <= 600
    record("C1", ok, f"alpha {a:.4f}, beta {b:.4f} (need >= 0.95); "
                     f"train {t['local_alpha']:.0f}s / {t['local_beta']:.0f}s (need <= 600s)")


def test_c2_cross_maze_degradation(runs):
    rep = runs[0]["report"]["local"]
    gap_a = rep["alpha_on_alpha"] - rep["alpha_on_beta"]
    gap_b = rep["beta_on_beta"] - rep["beta_on_alpha"]
    record("C2", gap_a >= 0.15 and gap_b >= 0.15,
           f"alpha model {rep['alpha_on_alpha']:.4f} -> {rep['alpha_on_beta']:.4f} (gap {gap_a:.4f}); "
           f"beta model {rep['beta_on_beta']:.4f} -> {rep['beta_on_alpha']:.4f} (gap {gap_b:.4f}); need >= 0.15")


def test_c3_federated_generalization(runs):
    rep, t = runs[0]["report"], runs[0]["timings"]
    fa, fb = rep["fl"]["alpha_on_alpha"], rep["fl"]["alpha_on_beta"]
    cross_on_b = rep["local"]["alpha_on_beta"]  # the alpha model's cross-maze accuracy
    cross_on_a = rep["local"]["beta_on_alpha"]
    ok = (fa >= 0.95 and fb >= 0.95 and fb - cross_on_b >= 0.10 and fa - cross_on_a >= 0.10
          and t["fl"] <= 1200)
    record("C3", ok, f"global model alpha {fa:.4f}, beta {fb:.4f} (need >= 0.95); "
                     f"vs local cross {cross_on_a:.4f} / {cross_on_b:.4f} (need +0.10); {t['fl']:.0f}s")


def test_c4_discovery_fidelity(runs):
    disc = runs[0]["report"]["discovery"]["fl"]
    fl_acc = {k: disc[f"alpha_on_{k}"]["accuracy"] for k in ("alpha", "beta")}
    failures = 0
    for seed in range(1000):
        m = generate_maze(seed, 4, "alpha" if seed % 2 == 0 else "beta")
        found = discover(m, OracleClassifier(m))
        acc, visited = compare_maps(m, found)
        if acc != 1.0 or visited != len(m.reachable((0, 0))) or found.budget_exhausted:
            failures += 1
    ok = min(fl_acc.values()) >= 0.9 and failures == 0
    record("C4", ok, f"global model map accuracy alpha {fl_acc['alpha']:.4f}, beta {fl_acc['beta']:.4f} "
                     f"(need >= 0.9); oracle imperfect on {failures}/1000 mazes")


def _gradient_batch():
    """20 real noisy sweeps with random labels, and a model with non-zero biases."""
    maze = generate_maze(0, 4, "alpha")
    rng = np.random.default_rng(5)
    cells = rng.integers(0, 4, (20, 2))
    headings = rng.choice([0.0, math.pi / 2, math.pi, 3 * math.pi / 2], 20)
    x = np.stack([sweep(maze, Pose(*maze.center(tuple(c)), hd), NoiseModel(), rng).ranges / 12.0
                  for c, hd in zip(cells, headings)])
    params = nn.init(5)
    params.b1[:] = rng.normal(0, 0.05, params.b1.shape)
    params.b2[:] = rng.normal(0, 0.05, params.b2.shape)
    return params, x, rng.integers(0, 15, 20)


def _smooth_units(params, x, h):
    """Hidden units whose pre-activation stays clear of the ReLU kink under an h-perturbation.

    Nudging W1[i, j] or b1[i] by h moves unit i's pre-activation by at most
    h * max(1, |x|); central differences straddling the kink are meaningless.
    """
    z = x @ params.W1.T + params.b1
    return np.abs(z).min(axis=0) > 2 * h * max(1.0, np.abs(x).max())


def _check_all(params, x, y, h, wd, w1_cols=None):
    _, grads = nn.loss_and_grad(params, x, y, wd)
    smooth = _smooth_units(params, x, h)

    def loss():
        return mlp_loss(*params.arrays(), x, y, wd)

    worst = {}
    for name in ("W2", "b2"):
        num = numeric_grad(loss, getattr(params, name), h)
        worst[name] = relative_error(getattr(grads, name), num).max()
    units = np.flatnonzero(smooth)
    num = numeric_grad(loss, params.b1, h, [(i,) for i in units])
    worst["b1"] = relative_error(grads.b1[units], num[units]).max()
    cols = np.arange(x.shape[1]) if w1_cols is None else w1_cols
    num = numeric_grad(loss, params.W1, h, [(i, j) for i in units for j in cols])
    worst["W1"] = relative_error(grads.W1[np.ix_(units, cols)], num[np.ix_(units, cols)]).max()
    return worst, int((~smooth).sum())


def test_c5_gradient_oracle():
    h, wd = 1e-4, 0.001
    params, x, y = _gradient_batch()
    # full network: every W2/b2/b1 entry, W1 on 12 random input columns
    cols = np.random.default_rng(0).choice(1147, 12, replace=False)
    worst, skipped = _check_all(params, x, y, h, wd, cols)
    # every parameter of a 40-ray network through the same code
    small = nn.init(1, 40, 256, 15)
    small.b1[:] = np.random.default_rng(1).normal(0, 0.05, 256)
    worst_small, skipped_small = _check_all(small, x[:, :40], y, h, wd)
    worst.update({f"{k}(40-ray)": v for k, v in worst_small.items()})
    m = max(worst.values())
    record("C5", m < 1e-4, "max relative error " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
           + f" (need < 1e-4; {skipped}+{skipped_small} kink-adjacent hidden units excluded)")


def test_c6_aggregation_oracle():
    rng = np.random.default_rng(6)
    shapes = nn.init(0).shapes
    worst = 0.0
    for trial in range(3):
        counts = [int(c) for c in rng.integers(1, 20_000, 3)]
        models = [nn.MlpParams(*(rng.normal(0, 0.1, s) for s in shapes)) for _ in counts]
        out = aggregate(list(zip(models, counts)))
        for k, arr in enumerate(out.arrays()):
            inputs = [mdl.arrays()[k] for mdl in models]
            ref = weighted_mean_bruteforce(inputs, counts)
            scale = np.max(np.abs(inputs), axis=0)
            worst = max(worst, float(np.max(np.abs(arr - ref) / scale)),
                        float(np.linalg.norm(arr - ref) / np.linalg.norm(ref)))
    p = nn.init(3)
    identity = aggregate([(p, 5), (p.copy(), 11), (p.copy(), 1)]) == p
    record("C6", worst <= 1e-12 and identity,
           f"max relative deviation {worst:.2e} (need <= 1e-12); identical-model identity {identity}")


def test_c7_ray_cast_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(20):
        m = generate_maze(int(rng.integers(2 ** 31)), 4, "alpha" if k % 2 == 0 else "beta")
        for _ in range(100):
            cell = (int(rng.integers(4)), int(rng.integers(4)))
            cx, cy = m.center(cell)
            origin = (cx + rng.uniform(-0.1, 0.1), cy + rng.uniform(-0.1, 0.1))
            angle = rng.uniform(0, 2 * math.pi)
            obs = cell_obstacles(m, cell)
            diff = abs(ray_cast(obs, origin, angle, 12.0) - dense_ray_oracle(obs, origin, angle, 12.0))
            worst = max(worst, diff)
    record("C7", worst <= 1e-3, f"max |exact - dense oracle| {worst:.2e} m over 2000 rays (need <= 1e-3)")


def test_c8_protocol_robustness():
    rng = np.random.default_rng(8)
    ck = nn.checkpoint_bytes(nn.init(0))
    rejected, survived = fuzz_server_handshake(rng, 4000, ck)
    round_outcomes = fuzz_server_round(rng, 2000, ck)
    client_outcomes = fuzz_client(rng, 4000, ck)
    tally = Counter(rejected) + Counter(round_outcomes) + Counter(client_outcomes)
    n = len(rejected) + len(round_outcomes) + len(client_outcomes)
    bad = {k: v for k, v in tally.items() if k not in OK_OUTCOMES}
    ok = n == 10_000 and not bad and survived and len(rejected) == 4000
    record("C8", ok, f"{n} fuzzed frames: {dict(sorted(tally.items()))}; "
                     f"server still served a good client afterwards: {survived}")


def test_c9_determinism(runs):
    same = runs[0]["bytes"] == runs[1]["bytes"]
    record("C9", same, f"two full pipeline runs, reports byte-identical: {same} "
                       f"({len(runs[0]['bytes'])} bytes; {runs[0]['timings']['total']:.0f}s per run)")
