"""Wire-protocol client for the cavity-feedback environment bridge.

Speaks the documented protocol only: newline-delimited JSON over a spawned
server's stdio, or length-prefixed JSON over TCP. No imports from the
simulator package; the byte stream is the whole contract.
"""

from __future__ import annotations

import json
import socket
import struct
import subprocess
import sys
import time


class BridgeError(RuntimeError):
    """The server replied ok=false or the transport failed."""


class StdioTransport:
    def __init__(self, serve_argv: list[str]):
        self.proc = subprocess.Popen(
            serve_argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )

    def roundtrip(self, payload: dict) -> dict:
        if self.proc.poll() is not None:
            raise BridgeError(f"bridge server exited with code {self.proc.returncode}")
        self.proc.stdin.write(json.dumps(payload) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise BridgeError("bridge server closed stdout")
        return json.loads(line)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class TcpTransport:
    def __init__(self, host: str, port: int, retries: int = 10, delay: float = 0.3):
        last_error = None
        for attempt in range(retries):
            try:
                self.sock = socket.create_connection((host, port), timeout=30)
                break
            except OSError as exc:
                last_error = exc
                time.sleep(delay * (attempt + 1))
        else:
            raise BridgeError(f"cannot reach bridge at {host}:{port}: {last_error}")

    def roundtrip(self, payload: dict) -> dict:
        data = json.dumps(payload).encode("utf-8")
        try:
            self.sock.sendall(struct.pack("<I", len(data)) + data)
            header = self._read_exact(4)
            (length,) = struct.unpack("<I", header)
            return json.loads(self._read_exact(length).decode("utf-8"))
        except OSError as exc:
            raise BridgeError(f"bridge connection failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise BridgeError("bridge closed the connection")
            buf += chunk
        return buf

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class BridgeClient:
    """Numbered request/reply session against one bridge server."""

    def __init__(self, transport):
        self.transport = transport
        self._next_id = 1

    @classmethod
    def spawn_stdio(cls, env_config_path, noisy_training: bool = False) -> "BridgeClient":
        argv = [
            sys.executable,
            "-m",
            "cavityfeedback.cli",
            "serve",
            "--transport",
            "stdio",
            "--config",
            str(env_config_path),
        ]
        if noisy_training:
            argv.append("--noisy-training")
        return cls(StdioTransport(argv))

    @classmethod
    def connect_tcp(cls, host: str, port: int, retries: int = 10) -> "BridgeClient":
        return cls(TcpTransport(host, port, retries=retries))

    def request(self, kind: str, **fields) -> dict:
        payload = {"id": self._next_id, "kind": kind, **fields}
        self._next_id += 1
        reply = self.transport.roundtrip(payload)
        if not reply.get("ok"):
            raise BridgeError(f"{kind} rejected: {reply.get('error', 'unknown error')}")
        return reply

    def spec(self) -> dict:
        return self.request("spec")

    def reset(self, seed: int | None = None):
        reply = self.request("reset", **({"seed": seed} if seed is not None else {}))
        return reply["observation"], reply["info"]

    def step(self, action):
        reply = self.request("step", action=[float(a) for a in action])
        return reply["observation"], reply["reward"], reply["done"], reply["info"]

    def close(self) -> None:
        try:
            self.request("close")
        except BridgeError:
            pass
        self.transport.close()
