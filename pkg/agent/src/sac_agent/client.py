"""Wire-protocol client: connect to the experiment runner and serve requests.

The runner sends one request at a time (newline-delimited JSON, version and
id in every message); this client answers act/update/reset_notice/save/ping
and replies with an error message on anything it cannot handle, keeping the
session alive.  The agent is constructed lazily from the first act request's
dimensions unless a checkpoint is given.
"""
from __future__ import annotations

import argparse
import json
import socket
import sys

import numpy as np

from .sac import SacAgent, SacConfig

PROTOCOL_VERSION = 1


def encode(message: dict) -> bytes:
    return (json.dumps(message, sort_keys=True,
                       separators=(",", ":")) + "\n").encode("utf-8")


def parse_endpoint(endpoint: str):
    if endpoint.startswith("tcp://"):
        endpoint = endpoint[len("tcp://"):]
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class ProtocolClient:
    def __init__(self, endpoint: str, agent: SacAgent | None = None,
                 seed: int = 0, config: SacConfig | None = None,
                 deterministic: bool = False, connect_retries: int = 50):
        self.endpoint = endpoint
        self.agent = agent
        self.seed = seed
        self.config = config or SacConfig()
        self.deterministic = deterministic
        self.connect_retries = connect_retries
        self._sock: socket.socket | None = None

    def _connect(self):
        import time
        host, port = parse_endpoint(self.endpoint)
        last = None
        for _ in range(self.connect_retries):
            try:
                self._sock = socket.create_connection((host, port), timeout=60)
                self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return
            except OSError as exc:
                last = exc
                time.sleep(0.1)
        raise ConnectionError(f"could not reach {self.endpoint}: {last}")

    def _ensure_agent(self, obs_dim: int, act_dim: int) -> SacAgent:
        if self.agent is None:
            self.agent = SacAgent(obs_dim, act_dim, self.config, seed=self.seed)
        return self.agent

    def _handle(self, msg: dict) -> dict:
        rid = msg.get("id")
        base = {"v": PROTOCOL_VERSION, "id": rid}
        if msg.get("v") != PROTOCOL_VERSION:
            return {**base, "type": "error",
                    "message": f"unsupported version {msg.get('v')!r}"}
        mtype = msg.get("type")
        if mtype == "ping":
            return {**base, "type": "pong"}
        if mtype == "act":
            obs = np.asarray(msg["obs"], dtype=np.float64)
            goal = np.asarray(msg["goal"], dtype=np.float64)
            agent = self._ensure_agent(obs.shape[0], goal.shape[0])
            action = agent.act(obs, deterministic=self.deterministic)
            action = np.clip(action, -1.0, 1.0)
            return {**base, "type": "action", "action": action.tolist()}
        if mtype == "update":
            batch = {k: np.asarray(v, dtype=np.float64)
                     for k, v in msg["batch"].items()}
            agent = self._ensure_agent(batch["obs"].shape[1],
                                       batch["action"].shape[1])
            diag = agent.update(batch)
            return {**base, "type": "diagnostics", "diagnostics": diag}
        if mtype == "reset_notice":
            if self.agent is not None:
                self.agent.seed_noise(msg.get("seed", 0))
            else:
                self.seed = int(msg.get("seed", 0))
            return {**base, "type": "ok"}
        if mtype == "save":
            if self.agent is not None:
                self.agent.save(msg["path"])
            return {**base, "type": "ok"}
        return {**base, "type": "error", "message": f"unknown type {mtype!r}"}

    def serve_forever(self):
        """Connect and answer requests until the runner closes the session."""
        self._connect()
        fh = self._sock.makefile("rb")
        try:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    msg = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    continue  # runner-side garbage: nothing sane to answer
                try:
                    reply = self._handle(msg)
                except Exception as exc:  # keep the session alive
                    reply = {"v": PROTOCOL_VERSION, "id": msg.get("id"),
                             "type": "error", "message": str(exc)}
                self._sock.sendall(encode(reply))
        finally:
            fh.close()
            self._sock.close()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sac-agent",
        description="soft actor-critic agent over the experiment protocol")
    parser.add_argument("--endpoint", required=True, help="host:port to join")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--checkpoint", default=None,
                        help="resume from a saved agent checkpoint")
    parser.add_argument("--deterministic", action="store_true",
                        help="use the distribution mean (evaluation mode)")
    parser.add_argument("--lr", type=float, default=3e-4)
    parser.add_argument("--gamma", type=float, default=0.99)
    parser.add_argument("--alpha", type=float, default=0.2)
    parser.add_argument("--polyak", type=float, default=0.995)
    args = parser.parse_args(argv)
    agent = SacAgent.load(args.checkpoint, seed=args.seed) \
        if args.checkpoint else None
    config = SacConfig(gamma=args.gamma, alpha=args.alpha, lr=args.lr,
                       polyak=args.polyak)
    client = ProtocolClient(args.endpoint, agent=agent, seed=args.seed,
                            config=config, deterministic=args.deterministic)
    client.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
