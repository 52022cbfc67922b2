"""Wire-protocol environment server: reset/step episodes for external trainers.

One session drives one episode engine. Frames are JSON objects with strictly
increasing integer ids; over stdio they are newline-delimited, over TCP each
frame is preceded by a 4-byte little-endian length. Rewards are computed from
the filter fidelity, the only signal an experiment would have.
"""

from __future__ import annotations

import json
import socket
import struct
import sys
import threading

from .errors import ProtocolError, TransportClosed
from .policy import encode_observation, observation_length, reward
from .qfilter import estimate_in_frame
from .simulator import (
    STATUS_COMPLETED,
    STATUS_GUARD_STOP,
    EpisodeConfig,
    EpisodeEngine,
)

PROTOCOL_VERSION = 1


class BridgeSession:
    """Protocol state machine; transport-agnostic."""

    def __init__(self, cfg: EpisodeConfig, complex_mode: bool, noisy_training: bool = False):
        if not noisy_training:
            cfg = _strip_noise(cfg)
        self.cfg = cfg
        self.complex_mode = complex_mode
        self.engine = EpisodeEngine(cfg)
        self.last_id: int | None = None
        self.episode_active = False
        self.closed = False

    # -- message handling ----------------------------------------------------

    def handle(self, message) -> dict:
        """Process one decoded frame, returning the reply frame."""
        try:
            msg_id = self._check_id(message)
            kind = message.get("kind")
            if kind == "spec":
                return self._reply_spec(msg_id)
            if kind == "reset":
                return self._reply_reset(msg_id, message)
            if kind == "step":
                return self._reply_step(msg_id, message)
            if kind == "close":
                self.closed = True
                return {"id": msg_id, "ok": True, "kind": "close"}
            raise ProtocolError(f"unknown kind {kind!r}")
        except ProtocolError as exc:
            reply_id = message.get("id") if isinstance(message, dict) else None
            return {"id": reply_id, "ok": False, "error": str(exc)}

    def _check_id(self, message) -> int:
        if not isinstance(message, dict):
            raise ProtocolError("frame must be a JSON object")
        msg_id = message.get("id")
        if not isinstance(msg_id, int):
            raise ProtocolError("frame id must be an integer")
        if self.last_id is not None and msg_id <= self.last_id:
            raise ProtocolError(
                f"frame id {msg_id} not greater than previous {self.last_id}"
            )
        self.last_id = msg_id
        return msg_id

    def _action_dim(self) -> int:
        return 2 if self.complex_mode else 1

    def _reply_spec(self, msg_id: int) -> dict:
        dim = self.cfg.space.dim
        return {
            "id": msg_id,
            "ok": True,
            "kind": "spec",
            "version": PROTOCOL_VERSION,
            "observation_length": observation_length(dim, self.complex_mode),
            "action_dim": self._action_dim(),
            "action_low": -1.0,
            "action_high": 1.0,
            "max_cycles": self.cfg.max_cycles,
        }

    def _observation(self) -> list[float]:
        rho = estimate_in_frame(self.engine.filter_state)
        return encode_observation(rho, self.complex_mode).tolist()

    def _info(self) -> dict:
        return {
            "cycle": self.engine.cycle,
            "true_fidelity": self.engine.true_fidelity(),
            "filter_fidelity": self.engine.filter_fidelity(),
        }

    def _reply_reset(self, msg_id: int, message: dict) -> dict:
        seed = message.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise ProtocolError("reset seed must be an integer")
        self.engine.reset(seed)
        self.episode_active = True
        return {
            "id": msg_id,
            "ok": True,
            "kind": "reset",
            "observation": self._observation(),
            "done": False,
            "info": self._info(),
        }

    def _reply_step(self, msg_id: int, message: dict) -> dict:
        if not self.episode_active:
            raise ProtocolError("step before reset (or after episode end)")
        action = message.get("action")
        if not isinstance(action, list) or len(action) != self._action_dim():
            raise ProtocolError(
                f"action must be a list of {self._action_dim()} floats"
            )
        try:
            values = [float(v) for v in action]
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"non-numeric action: {exc}") from exc
        alpha = complex(values[0], values[1] if len(values) == 2 else 0.0)

        if self.engine.cycle == 0:
            self.engine.adjustment_cycle(alpha)
        else:
            self.engine.feedback_cycle(alpha)

        status = None
        done = False
        if self.engine.guard_tripped():
            done = True
            status = STATUS_GUARD_STOP
        elif self.engine.cycle > self.cfg.max_cycles:
            done = True
            status = STATUS_COMPLETED
        if done:
            self.episode_active = False

        info = self._info()
        if status is not None:
            info["terminal_status"] = status
        return {
            "id": msg_id,
            "ok": True,
            "kind": "step",
            "observation": self._observation(),
            "reward": reward(info["filter_fidelity"]),
            "done": done,
            "info": info,
        }


def _strip_noise(cfg: EpisodeConfig) -> EpisodeConfig:
    from dataclasses import replace

    return replace(cfg, noise=None) if cfg.noise is not None else cfg


# -- stdio transport ----------------------------------------------------------


def serve_stdio(session: BridgeSession, stdin=None, stdout=None) -> None:
    """Newline-delimited JSON over stdio; runs until close or EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            _write_line(stdout, {"id": None, "ok": False, "error": f"bad JSON: {exc}"})
            continue
        reply = session.handle(message)
        _write_line(stdout, reply)
        if session.closed:
            return


def _write_line(stdout, reply: dict) -> None:
    stdout.write(json.dumps(reply) + "\n")
    stdout.flush()


# -- TCP transport -------------------------------------------------------------


def _read_frame(conn: socket.socket) -> dict:
    header = _read_exact(conn, 4)
    (length,) = struct.unpack("<I", header)
    if length > 64 * 1024 * 1024:
        raise ProtocolError(f"frame length {length} too large")
    payload = _read_exact(conn, length)
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON frame: {exc}") from exc


def _read_exact(conn: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            raise TransportClosed("peer closed the connection")
        buf += chunk
    return buf


def _write_frame(conn: socket.socket, reply: dict) -> None:
    payload = json.dumps(reply).encode("utf-8")
    conn.sendall(struct.pack("<I", len(payload)) + payload)


def _serve_connection(conn: socket.socket, make_session) -> None:
    session = make_session()
    with conn:
        while not session.closed:
            try:
                message = _read_frame(conn)
            except TransportClosed:
                return
            except ProtocolError as exc:
                _write_frame(conn, {"id": None, "ok": False, "error": str(exc)})
                continue
            _write_frame(conn, session.handle(message))


def serve_tcp(
    make_session,
    host: str = "127.0.0.1",
    port: int = 0,
    ready_callback=None,
    max_sessions: int | None = None,
) -> None:
    """Length-prefixed JSON over TCP; each connection is an isolated session."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen()
        if ready_callback is not None:
            ready_callback(server.getsockname()[1])
        served = 0
        while max_sessions is None or served < max_sessions:
            conn, _ = server.accept()
            thread = threading.Thread(
                target=_serve_connection, args=(conn, make_session), daemon=True
            )
            thread.start()
            served += 1
            if max_sessions is not None:
                thread.join()
