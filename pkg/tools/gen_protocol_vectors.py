#!/usr/bin/env python3
"""Regenerate the wire-protocol conformance vectors.

Each line holds one request/response pair in the canonical encoding; codecs
on either side of the protocol must round-trip these bytes exactly.
"""
import json
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from safemanip.protocol import PROTOCOL_VERSION, encode  # noqa: E402

OBS = [0.1, -0.2, 0.3, 0.0, 0.5, -0.5,          # q
       0.0, 0.0, 0.0, 0.0, 0.0, 0.0,            # qd
       1.0, 0.5, -1.0, 0.25, 0.75, -0.25,       # goal
       0.4, 0.1, 1.2,                           # ee
       0.2, 0.3, 0.1, -0.2, 0.3, 0.1, 0.0, 0.6, 0.4]  # relative keypoints
GOAL = [1.0, 0.5, -1.0, 0.25, 0.75, -0.25]
ACTION = [0.5, -0.25, 1.0, -1.0, 0.0, 0.125]

PAIRS = [
    ({"v": PROTOCOL_VERSION, "id": 0, "type": "ping"},
     {"v": PROTOCOL_VERSION, "id": 0, "type": "pong"}),
    ({"v": PROTOCOL_VERSION, "id": 1, "type": "act", "obs": OBS, "goal": GOAL},
     {"v": PROTOCOL_VERSION, "id": 1, "type": "action", "action": ACTION}),
    ({"v": PROTOCOL_VERSION, "id": 2, "type": "update",
      "batch": {"obs": [OBS, OBS], "action": [ACTION, ACTION],
                "reward": [-1.0, 0.0], "next_obs": [OBS, OBS]}},
     {"v": PROTOCOL_VERSION, "id": 2, "type": "diagnostics",
      "diagnostics": {"entropy": 1.5, "pi_loss": -0.25, "q_loss": 0.125}}),
    ({"v": PROTOCOL_VERSION, "id": 3, "type": "reset_notice", "seed": 42},
     {"v": PROTOCOL_VERSION, "id": 3, "type": "ok"}),
    ({"v": PROTOCOL_VERSION, "id": 4, "type": "save", "path": "agent.ckpt"},
     {"v": PROTOCOL_VERSION, "id": 4, "type": "ok"}),
]


def main():
    out = (Path(__file__).resolve().parents[1] / "src" / "safemanip"
           / "configs" / "protocol_vectors.jsonl")
    with out.open("w") as fh:
        for req, resp in PAIRS:
            fh.write(json.dumps({
                "request": encode(req).decode().rstrip("\n"),
                "response": encode(resp).decode().rstrip("\n"),
            }) + "\n")
    print(f"wrote {out} ({len(PAIRS)} vectors)")


if __name__ == "__main__":
    main()
