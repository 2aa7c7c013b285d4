"""``mazefl`` command line: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset as ds
from . import nn, render
from .explorer import DiscoveredMap, compare_maps, discover
from .fedavg import FedConfig, FedServer, run_client
from .geometry import Maze, generate_maze
from .lidar import NoiseModel


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_gen_maze(a):
    generate_maze(a.seed, a.size, a.profile).save(a.out)


def cmd_collect(a):
    maze = Maze.load(a.maze)
    data = ds.collect(maze, a.sweeps, ds.JitterParams(a.jitter_pos, a.jitter_heading), a.seed,
                      NoiseModel(a.noise))
    ds.save(data, a.out)
    _emit({"samples": len(data)})


def cmd_split(a):
    train, test = ds.split(ds.load(a.inp), a.test_fraction, a.seed)
    ds.save(train, a.out_train)
    ds.save(test, a.out_test)
    _emit({"train": len(train), "test": len(test)})


def cmd_train_local(a):
    train = ds.load(a.train)
    cfg = nn.TrainConfig(learning_rate=a.lr, weight_decay=a.weight_decay, batch_size=a.batch_size,
                         epochs=a.epochs, seed=a.seed)
    params = nn.to_wire(nn.train(nn.init(a.seed), train, cfg))
    nn.save_checkpoint(params, a.out)
    result = {"train_accuracy": nn.evaluate(params, train)[0]}
    if a.test:
        result["test_accuracy"] = nn.evaluate(params, ds.load(a.test))[0]
    _emit(result)


def _fed_config(a, **kw) -> FedConfig:
    return FedConfig(batch_size=a.batch_size, learning_rate=a.lr, weight_decay=a.weight_decay,
                     timeout=a.timeout, **kw)


def cmd_fl_server(a):
    evals = {}
    if a.eval_alpha:
        evals["alpha"] = ds.load(a.eval_alpha)
    if a.eval_beta:
        evals["beta"] = ds.load(a.eval_beta)
    cfg = _fed_config(a, rounds=a.rounds, expected_clients=a.clients, listen=a.listen)
    server = FedServer(cfg, evals)
    _emit({"listening": server.address})
    sys.stdout.flush()
    final = server.serve(nn.init(a.seed))
    nn.save_checkpoint(final, a.out)
    if a.history:
        Path(a.history).write_text(json.dumps(server.history, indent=1) + "\n")


def cmd_fl_client(a):
    cfg = _fed_config(a, local_epochs=a.local_epochs, local_unit=a.local_unit, seed=a.seed)
    final = run_client(cfg, ds.load(a.train), a.server, a.client_id, retry_for=a.retry)
    if a.out:
        nn.save_checkpoint(final, a.out)


def cmd_eval(a):
    acc, confusion = nn.evaluate(nn.load_checkpoint(a.model), ds.load(a.data))
    _emit({"accuracy": acc, "confusion": confusion.tolist()})


def cmd_discover(a):
    maze = Maze.load(a.maze)
    found = discover(maze, nn.load_checkpoint(a.model), NoiseModel(a.noise), a.seed, a.sweeps_per_cell)
    found.save(a.out)
    accuracy, visited = compare_maps(maze, found)
    _emit({"accuracy": accuracy, "visited": visited, "steps": found.steps, "stuck": found.stuck})


def cmd_render(a):
    maze = Maze.load(a.maze)
    found = DiscoveredMap.load(a.discovered) if a.discovered else None
    if a.out:
        render.write(maze, a.out, found, a.format)
    else:
        text = render.render_svg(maze, found) if a.format == "svg" else render.render_ascii(maze, found)
        sys.stdout.write(text)


def cmd_experiment(a):
    from . import experiment
    cfg = experiment.load_config(a.config)
    if a.workdir:
        cfg["workdir"] = a.workdir
    report = experiment.run(cfg)
    text = experiment.dumps_report(report)
    if a.out:
        Path(a.out).write_text(text)
    sys.stdout.write(text)


def _train_flags(p, epochs=True):
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--weight-decay", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=16)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mazefl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-maze")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--profile", choices=("alpha", "beta"), default="alpha")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_maze)

    p = sub.add_parser("collect")
    p.add_argument("--maze", required=True)
    p.add_argument("--sweeps", type=int, default=200)
    p.add_argument("--jitter-pos", type=float, default=0.02)
    p.add_argument("--jitter-heading", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.01, help="relative range sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("split")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-local")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_train_local)

    p = sub.add_parser("fl-server")
    p.add_argument("--listen", default="127.0.0.1:7070")
    p.add_argument("--rounds", type=int, default=15)
    p.add_argument("--clients", type=int, default=2)
    p.add_argument("--seed", type=int, default=0, help="seed of the initial global model")
    p.add_argument("--out", required=True)
    p.add_argument("--eval-alpha")
    p.add_argument("--eval-beta")
    p.add_argument("--history", help="write per-round log as JSON")
    p.add_argument("--timeout", type=float, default=120.0)
    _train_flags(p)
    p.set_defaults(func=cmd_fl_server)

    p = sub.add_parser("fl-client")
    p.add_argument("--server", default="127.0.0.1:7070")
    p.add_argument("--train", required=True)
    p.add_argument("--local-epochs", type=int, default=2)
    p.add_argument("--local-unit", choices=("epoch", "step"), default="epoch")
    p.add_argument("--client-id", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--retry", type=float, default=10.0, help="seconds to retry a refused connection")
    p.add_argument("--out")
    _train_flags(p)
    p.set_defaults(func=cmd_fl_client)

    p = sub.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("discover")
    p.add_argument("--maze", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--sweeps-per-cell", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("render")
    p.add_argument("--maze", required=True)
    p.add_argument("--discovered")
    p.add_argument("--format", choices=("svg", "ascii"), default="svg")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("experiment")
    p.add_argument("--config", help="JSON overrides of the default experiment config")
    p.add_argument("--workdir")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as exc:  # every failure becomes one machine-readable line
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
