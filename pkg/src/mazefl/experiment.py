"""End-to-end pipeline: two mazes, two local models, FedAvg, eight discovery runs."""
from __future__ import annotations

import copy
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

from . import dataset as ds
from . import nn, render
from .explorer import compare_maps, discover
from .geometry import Maze, generate_maze
from .lidar import NoiseModel

log = logging.getLogger(__name__)

KINDS = ("alpha", "beta")

DEFAULT_CONFIG = {
    "workdir": "runs/default",
    "mazes": {"alpha": {"seed": 1, "size": 4}, "beta": {"seed": 2, "size": 4}},
    "sweeps": 200,
    "jitter": {"pos_sigma": 0.02, "heading_sigma": 0.05},
    "noise": {"relative_sigma": 0.01, "accuracy_range": 3.0},
    "collect_seed": {"alpha": 101, "beta": 102},
    "test_fraction": 0.2,
    "split_seed": 0,
    "init_seed": 0,
    "local": {"epochs": 100, "seed": 0},
    "fl": {"rounds": 15, "local_epochs": 2, "batch_size": 16, "learning_rate": 0.001,
           "weight_decay": 0.001, "local_unit": "epoch", "timeout": 600.0,
           "client_seed": {"alpha": 1, "beta": 2}},
    "discovery": {"seed": 0, "sweeps_per_cell": 1},
}


def load_config(path=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        _merge(cfg, json.loads(Path(path).read_text()))
    return cfg


def _merge(base: dict, over: dict) -> None:
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def sig(x: float) -> float:
    """Round to 6 significant digits for reports."""
    return float(f"{x:.6g}")


def _cli(*args) -> list[str]:
    return [sys.executable, "-m", "mazefl.cli", *map(str, args)]


def run_federated(cfg: dict, paths: dict, out: Path) -> dict:
    """Launch one fl-server and one fl-client per maze as local processes over loopback."""
    fl = cfg["fl"]
    server = subprocess.Popen(
        _cli("fl-server", "--listen", "127.0.0.1:0", "--rounds", fl["rounds"], "--clients", len(KINDS),
             "--seed", cfg["init_seed"], "--out", out / "global.mznn",
             "--batch-size", fl["batch_size"], "--lr", fl["learning_rate"],
             "--weight-decay", fl["weight_decay"], "--timeout", fl["timeout"],
             "--eval-alpha", paths["alpha"]["test"], "--eval-beta", paths["beta"]["test"],
             "--history", out / "fl_history.json"),
        stdout=subprocess.PIPE, text=True)
    try:
        hello = json.loads(server.stdout.readline())
        address = hello["listening"]
        clients = []
        for cid, kind in enumerate(KINDS):
            clients.append(subprocess.Popen(
                _cli("fl-client", "--server", address, "--train", paths[kind]["train"],
                     "--local-epochs", fl["local_epochs"], "--client-id", cid,
                     "--seed", fl["client_seed"][kind], "--batch-size", fl["batch_size"],
                     "--lr", fl["learning_rate"], "--weight-decay", fl["weight_decay"],
                     "--local-unit", fl["local_unit"], "--timeout", fl["timeout"],
                     "--out", out / f"fl_{kind}.mznn"),
                stdout=subprocess.DEVNULL))
        codes = [c.wait() for c in clients]
        server.stdout.read()
        code = server.wait()
    finally:
        if server.poll() is None:
            server.kill()
    if code != 0 or any(codes):
        raise RuntimeError(f"federated run failed (server {code}, clients {codes})")
    return {kind: nn.load_checkpoint(out / f"fl_{kind}.mznn") for kind in KINDS}


def run(cfg: dict) -> dict:
    out = Path(cfg["workdir"])
    out.mkdir(parents=True, exist_ok=True)
    jitter = ds.JitterParams(**cfg["jitter"])
    noise = NoiseModel(**cfg["noise"])
    t0 = time.monotonic()

    mazes: dict[str, Maze] = {}
    splits, paths = {}, {}
    for kind in KINDS:
        m = cfg["mazes"][kind]
        maze = generate_maze(m["seed"], m["size"], kind)
        maze.save(out / f"maze_{kind}.json")
        render.write(maze, out / f"maze_{kind}.svg")
        mazes[kind] = maze
        data = ds.collect(maze, cfg["sweeps"], jitter, cfg["collect_seed"][kind], noise)
        train, test = ds.split(data, cfg["test_fraction"], cfg["split_seed"])
        paths[kind] = {"train": out / f"{kind}_train.mzfl", "test": out / f"{kind}_test.mzfl"}
        ds.save(train, paths[kind]["train"])
        ds.save(test, paths[kind]["test"])
        splits[kind] = (train, test)
        log.info("collected %s: %d train / %d test", kind, len(train), len(test))

    fl = cfg["fl"]
    timings = {"collect": round(time.monotonic() - t0, 1)}
    local_models = {}
    for kind in KINDS:
        t1 = time.monotonic()
        tc = nn.TrainConfig(learning_rate=fl["learning_rate"], weight_decay=fl["weight_decay"],
                            batch_size=fl["batch_size"], epochs=cfg["local"]["epochs"],
                            seed=cfg["local"]["seed"])
        params = nn.to_wire(nn.train(nn.init(cfg["init_seed"]), splits[kind][0], tc))
        nn.save_checkpoint(params, out / f"local_{kind}.mznn")
        local_models[kind] = params
        timings[f"local_{kind}"] = round(time.monotonic() - t1, 1)

    t1 = time.monotonic()
    fl_models = run_federated(cfg, paths, out)
    timings["fl"] = round(time.monotonic() - t1, 1)
    history = json.loads((out / "fl_history.json").read_text())

    def acc(params, kind):
        return sig(nn.evaluate(params, splits[kind][1])[0])

    report = {"local": {}, "fl": {}, "discovery": {"local": {}, "fl": {}},
              "fl_rounds": [{k: sig(h[k]) for k in KINDS} for h in history]}
    for mode, models in (("local", local_models), ("fl", fl_models)):
        for robot in KINDS:
            for world in KINDS:
                key = f"{robot}_on_{world}"
                report[mode][key] = acc(models[robot], world)
                seed = cfg["discovery"]["seed"] + 10 * KINDS.index(robot) + KINDS.index(world)
                found = discover(mazes[world], models[robot], noise, seed,
                                 cfg["discovery"]["sweeps_per_cell"])
                found.save(out / f"discovered_{mode}_{key}.json")
                render.write(mazes[world], out / f"discovered_{mode}_{key}.svg", found)
                accuracy, visited = compare_maps(mazes[world], found)
                report["discovery"][mode][key] = {
                    "accuracy": sig(accuracy), "visited": visited, "steps": found.steps,
                    "stuck": found.stuck, "blocked": len(found.blocked),
                }
    # wall-clock numbers vary run to run, so they stay out of the report
    timings["total"] = round(time.monotonic() - t0, 1)
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
