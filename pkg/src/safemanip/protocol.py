"""Agent wire protocol: newline-delimited JSON over a TCP socket.

The experiment runner is the server and drives the session: it sends one
request at a time (act / update / reset_notice / save / ping) and waits for
the matching response before sending the next.  Every message carries the
protocol version and the request id; responses must echo the id.  Keeping
the replay buffer and goal relabeling on the server side means an attached
agent only ever sees act and update calls.

Canonical encoding: UTF-8 JSON with sorted keys and compact separators,
one object per line.
"""
from __future__ import annotations

import json
import socket
from pathlib import Path

import numpy as np

PROTOCOL_VERSION = 1
_RESPONSE_TYPE = {
    "ping": "pong",
    "act": "action",
    "update": "diagnostics",
    "reset_notice": "ok",
    "save": "ok",
}


class ProtocolViolation(RuntimeError):
    """Malformed, out-of-order, or contract-breaking message."""


def encode(message: dict) -> bytes:
    """Canonical wire form of one message."""
    return (json.dumps(message, sort_keys=True,
                       separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"undecodable message: {exc}") from exc
    if not isinstance(msg, dict):
        raise ProtocolViolation("message must be a JSON object")
    if msg.get("v") != PROTOCOL_VERSION:
        raise ProtocolViolation(f"unsupported protocol version {msg.get('v')!r}")
    if "type" not in msg:
        raise ProtocolViolation("message lacks a type")
    return msg


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    if endpoint.startswith("tcp://"):
        endpoint = endpoint[len("tcp://"):]
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class AgentSession:
    """Server side of one agent connection (one outstanding request)."""

    def __init__(self, conn: socket.socket, action_dim: int | None = None,
                 timeout: float = 30.0):
        self._conn = conn
        self._conn.settimeout(timeout)
        self._buf = b""
        self._next_id = 0
        self.action_dim = action_dim

    def _read_line(self) -> bytes:
        while b"\n" not in self._buf:
            chunk = self._conn.recv(65536)
            if not chunk:
                raise ProtocolViolation("agent closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def request(self, rtype: str, payload: dict | None = None) -> dict:
        """Send one request and return the validated response payload."""
        rid = self._next_id
        self._next_id += 1
        msg = {"v": PROTOCOL_VERSION, "id": rid, "type": rtype}
        if payload:
            msg.update(payload)
        self._conn.sendall(encode(msg))
        resp = decode(self._read_line())
        if resp.get("id") != rid:
            raise ProtocolViolation(
                f"response id {resp.get('id')!r} does not match request {rid}")
        want = _RESPONSE_TYPE[rtype]
        if resp.get("type") == "error":
            raise ProtocolViolation(f"agent error: {resp.get('message')!r}")
        if resp.get("type") != want:
            raise ProtocolViolation(
                f"expected {want!r} response, got {resp.get('type')!r}")
        return resp

    # -- typed calls ---------------------------------------------------------

    def ping(self) -> dict:
        return self.request("ping")

    def act(self, obs, goal) -> np.ndarray:
        resp = self.request("act", {"obs": list(map(float, obs)),
                                    "goal": list(map(float, goal))})
        action = resp.get("action")
        if not isinstance(action, list):
            raise ProtocolViolation("action must be a list of floats")
        arr = np.asarray(action, dtype=np.float64)
        if self.action_dim is not None and arr.shape != (self.action_dim,):
            raise ProtocolViolation(
                f"action length {arr.shape} != {(self.action_dim,)}")
        if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > 1.0):
            raise ProtocolViolation("action components must be finite in [-1, 1]")
        return arr

    def update(self, batch: dict) -> dict:
        payload = {k: np.asarray(v).tolist() for k, v in batch.items()}
        resp = self.request("update", {"batch": payload})
        diag = resp.get("diagnostics", {})
        if not isinstance(diag, dict):
            raise ProtocolViolation("diagnostics must be an object")
        return diag

    def reset_notice(self, seed: int) -> None:
        self.request("reset_notice", {"seed": int(seed)})

    def save(self, path: str) -> None:
        self.request("save", {"path": str(path)})

    def close(self):
        try:
            self._conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._conn.close()


def serve_agent_protocol(endpoint: str, action_dim: int | None = None,
                         timeout: float = 30.0,
                         accept_timeout: float = 60.0) -> AgentSession:
    """Bind the endpoint, wait for one agent to connect, return the session."""
    host, port = parse_endpoint(endpoint)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    srv.settimeout(accept_timeout)
    try:
        conn, _ = srv.accept()
    finally:
        srv.close()
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return AgentSession(conn, action_dim=action_dim, timeout=timeout)


def conformance_vectors_path() -> Path:
    return Path(__file__).resolve().parent / "configs" / "protocol_vectors.jsonl"


def load_conformance_vectors() -> list[dict]:
    """Request/response byte pairs in canonical encoding, for codec tests."""
    out = []
    with conformance_vectors_path().open("rb") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


class ExternalPolicy:
    """Policy provider backed by a protocol session."""

    def __init__(self, session: AgentSession, n_joints: int):
        self.session = session
        self.n = n_joints
        session.action_dim = n_joints

    def act(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        goal = obs[2 * self.n:3 * self.n]
        return self.session.act(obs, goal)

    def update(self, batch) -> dict:
        return self.session.update(batch)

    def save(self, path):
        self.session.save(str(path))
