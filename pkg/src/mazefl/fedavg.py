"""FedAvg parameter server and client over the MZFD stream protocol."""
from __future__ import annotations

import logging
import socket
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import CheckpointError, MlpParams, TrainConfig
from .protocol import (ClientHello, Done, GlobalModel, LocalUpdate, PeerDisconnected,
                       ProtocolError, parse_address, read_message, send_message)

log = logging.getLogger(__name__)


class ShapeMismatch(ValueError):
    pass


class ClientDisconnected(ConnectionError):
    pass


class FedTimeout(TimeoutError):
    pass


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 15
    local_epochs: int = 2
    expected_clients: int = 2
    batch_size: int = 16
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    listen: str = "127.0.0.1:0"
    timeout: float = 120.0
    # "epoch": local_epochs full passes; "step": local_epochs minibatches
    local_unit: str = "epoch"
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.expected_clients < 1:
            raise ValueError("expected_clients must be >= 1")
        if self.local_unit not in ("epoch", "step"):
            raise ValueError("local_unit must be 'epoch' or 'step'")

    def local_train_config(self, seed: int, round_: int) -> TrainConfig:
        kw = dict(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                  batch_size=self.batch_size, seed=round_seed(seed, round_))
        if self.local_unit == "epoch":
            return TrainConfig(epochs=self.local_epochs, **kw)
        return TrainConfig(epochs=0, max_steps=self.local_epochs, **kw)


def round_seed(seed: int, round_: int) -> int:
    return int(np.random.SeedSequence([seed, round_]).generate_state(1)[0])


def aggregate(updates: list[tuple[MlpParams, int]]) -> MlpParams:
    """Sample-count weighted mean of client models.

    Accumulates in float64 as ``p0 + sum_k w_k (p_k - p0)`` so that averaging
    identical models returns them unchanged.  Callers wanting bit-stable
    results must pass updates in a canonical order.
    """
    if not updates:
        raise ValueError("aggregate needs at least one update")
    shapes = updates[0][0].shapes
    if any(p.shapes != shapes for p, _ in updates):
        raise ShapeMismatch("client models have different shapes")
    counts = [int(n) for _, n in updates]
    if any(n < 0 for n in counts) or sum(counts) == 0:
        raise ValueError("sample counts must be non-negative with a positive total")
    total = float(sum(counts))
    base = updates[0][0].arrays()
    out = [a.copy() for a in base]
    for params, n in updates[1:]:
        w = n / total
        for acc, a, b in zip(out, params.arrays(), base):
            acc += w * (a - b)
    return MlpParams(*out)


# --------------------------------------------------------------------------
# Server


class _Peer:
    def __init__(self, sock: socket.socket, hello: ClientHello):
        self.sock = sock
        self.client_id = hello.client_id
        self.num_samples = hello.num_samples


def _expect(sock: socket.socket, kind, what: str):
    try:
        msg = read_message(sock)
    except socket.timeout:
        raise FedTimeout(f"timed out waiting for {what}") from None
    except PeerDisconnected as exc:
        raise ClientDisconnected(str(exc)) from None
    except (ConnectionError, OSError) as exc:
        raise ClientDisconnected(f"connection lost waiting for {what}: {exc}") from None
    if not isinstance(msg, kind):
        raise ProtocolError(f"expected {what}, got {type(msg).__name__}")
    return msg


class FedServer:
    """Bind first (so the port is known), then :meth:`serve`."""

    def __init__(self, config: FedConfig, eval_sets: dict | None = None):
        self.config = config
        self.eval_sets = eval_sets or {}
        self.history: list[dict] = []
        self.rejected: list[str] = []
        host, port = parse_address(config.listen)
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(config.timeout)

    @property
    def address(self) -> str:
        host, port = self._sock.getsockname()[:2]
        return f"{host}:{port}"

    def close(self):
        self._sock.close()

    def _accept_clients(self) -> list[_Peer]:
        peers: dict[int, _Peer] = {}
        while len(peers) < self.config.expected_clients:
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                raise FedTimeout("timed out waiting for clients to connect") from None
            conn.settimeout(self.config.timeout)
            try:
                hello = _expect(conn, ClientHello, "ClientHello")
            except (ProtocolError, ClientDisconnected, FedTimeout) as exc:
                # a bad handshake only costs that connection
                log.warning("rejecting connection: %s", exc)
                self.rejected.append(type(exc).__name__)
                conn.close()
                continue
            if hello.client_id in peers:
                log.warning("duplicate client id %d, rejecting", hello.client_id)
                self.rejected.append("DuplicateClient")
                conn.close()
                continue
            peers[hello.client_id] = _Peer(conn, hello)
            log.info("client %d joined with %d samples", hello.client_id, hello.num_samples)
        return [peers[k] for k in sorted(peers)]

    def _exchange(self, peer: _Peer, round_: int, blob: bytes) -> tuple[MlpParams, int]:
        try:
            send_message(peer.sock, GlobalModel(round_, blob))
        except OSError as exc:
            raise ClientDisconnected(f"client {peer.client_id}: {exc}") from None
        upd = _expect(peer.sock, LocalUpdate, f"LocalUpdate from client {peer.client_id}")
        if upd.round != round_:
            raise ProtocolError(f"client {peer.client_id} sent round {upd.round}, expected {round_}")
        try:
            params = nn.params_from_bytes(upd.checkpoint)
        except CheckpointError as exc:
            raise ProtocolError(f"client {peer.client_id}: {exc}") from None
        if not params.is_finite():
            raise ProtocolError(f"client {peer.client_id} sent non-finite parameters")
        return params, upd.num_samples

    def serve(self, init_params: MlpParams) -> MlpParams:
        peers = self._accept_clients()
        global_params = nn.to_wire(init_params)
        try:
            with ThreadPoolExecutor(max_workers=len(peers)) as pool:
                for r in range(1, self.config.rounds + 1):
                    blob = nn.checkpoint_bytes(global_params)
                    t0 = time.monotonic()
                    futures = [pool.submit(self._exchange, p, r, blob) for p in peers]
                    # collecting every future is the round barrier; order is client_id order
                    updates = [f.result() for f in futures]
                    global_params = nn.to_wire(aggregate(updates))
                    entry = {"round": r, "seconds": round(time.monotonic() - t0, 3)}
                    for name, data in self.eval_sets.items():
                        entry[name] = nn.evaluate(global_params, data)[0]
                    self.history.append(entry)
                    log.info("round %d done %s", r, entry)
            final = nn.checkpoint_bytes(global_params)
            for p in peers:
                try:
                    send_message(p.sock, Done(self.config.rounds, final))
                except OSError:
                    log.warning("client %d left before Done", p.client_id)
        finally:
            for p in peers:
                p.sock.close()
            self.close()
        return global_params


def run_server(config: FedConfig, init_params: MlpParams, eval_sets: dict | None = None) -> MlpParams:
    return FedServer(config, eval_sets).serve(init_params)


# --------------------------------------------------------------------------
# Client


def connect(address: str, timeout: float, retry_for: float = 0.0) -> socket.socket:
    host, port = parse_address(address)
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            sock.settimeout(timeout)
            return sock
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.1)


def _send(sock: socket.socket, msg) -> None:
    try:
        send_message(sock, msg)
    except socket.timeout:
        raise FedTimeout("timed out sending to the server") from None
    except OSError as exc:
        raise PeerDisconnected(f"server went away: {exc}") from None


def run_client(config: FedConfig, dataset, address: str, client_id: int = 0,
               retry_for: float = 0.0) -> MlpParams:
    """Join the server, train locally each round, return the final global model."""
    sock = connect(address, config.timeout, retry_for)
    n = len(dataset)
    try:
        _send(sock, ClientHello(client_id, n))
        expected_round = 1
        while True:
            try:
                msg = read_message(sock)
            except socket.timeout:
                raise FedTimeout("timed out waiting for the server") from None
            if isinstance(msg, Done):
                # Done names the last round; it must be the last one we trained
                if msg.round == 0 or msg.round != expected_round - 1:
                    raise ProtocolError(f"Done for round {msg.round} after "
                                        f"{expected_round - 1} completed rounds")
                if not msg.checkpoint:
                    raise ProtocolError("Done without a final model")
                try:
                    return nn.params_from_bytes(msg.checkpoint)
                except CheckpointError as exc:
                    raise ProtocolError(str(exc)) from None
            if not isinstance(msg, GlobalModel):
                raise ProtocolError(f"unexpected {type(msg).__name__} from server")
            if msg.round != expected_round:
                raise ProtocolError(f"server sent round {msg.round}, expected {expected_round}")
            try:
                params = nn.params_from_bytes(msg.checkpoint)
            except CheckpointError as exc:
                raise ProtocolError(str(exc)) from None
            local = nn.train(params, dataset, config.local_train_config(config.seed, msg.round))
            _send(sock, LocalUpdate(msg.round, n, nn.checkpoint_bytes(local)))
            log.info("client %d finished round %d", client_id, msg.round)
            expected_round += 1
    finally:
        sock.close()


def simulate(config: FedConfig, init_params: MlpParams, datasets: list, seeds: list[int]) -> MlpParams:
    """In-process FedAvg with the same arithmetic as the socket path (no transport)."""
    g = nn.to_wire(init_params)
    for r in range(1, config.rounds + 1):
        ups = []
        for data, seed in zip(datasets, seeds):
            cfg = config.local_train_config(seed, r)
            ups.append((nn.to_wire(nn.train(g, data, cfg)), len(data)))
        g = nn.to_wire(aggregate(ups))
    return g
