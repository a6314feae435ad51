"""End-to-end smoke: the agent learns through the runner's wire protocol.

These drive the experiment runner CLI as a subprocess with --agent external
and serve it from an in-process client, which is exactly the deployment
topology.  Expect a few minutes of wall time.
"""
import csv
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from sac_agent.client import ProtocolClient


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def run_external_training(tmp_path, scenario, epochs, episodes, seed,
                          extra=()):
    torch.set_num_threads(1)  # tiny networks: avoid thread-sync overhead
    out = tmp_path / f"{scenario}_run"
    port = free_port()
    cmd = [sys.executable, "-m", "safemanip", "--mode", "train",
           "--scenario", scenario, "--agent", "external",
           "--endpoint", f"127.0.0.1:{port}",
           "--epochs", str(epochs), "--episodes-per-epoch", str(episodes),
           "--seed", str(seed), "--out", str(out), *extra]
    proc = subprocess.Popen(cmd)
    try:
        client = ProtocolClient(f"127.0.0.1:{port}", seed=0,
                                connect_retries=600)
        client.serve_forever()
        proc.wait(timeout=120)
    finally:
        if proc.poll() is None:
            proc.kill()
    assert proc.returncode == 0
    with (out / "metrics.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == epochs
    return rows, out


def test_learning_smoke_one_joint(tmp_path):
    """Success rate trends upward over a 20-epoch run on the single-joint
    no-human reaching task."""
    rows, out = run_external_training(
        tmp_path, "no_human_1dof", epochs=20, episodes=30, seed=1,
        extra=["--k-start-steps", "2000", "--update-after", "1000"])
    rates = np.array([float(r["success_rate"]) for r in rows])
    slope = np.polyfit(np.arange(len(rates)), rates, 1)[0]
    print(f"[{'PASS' if slope > 0 else 'FAIL'}] learning smoke: "
          f"success {rates[0]:.2f} -> {rates[-1]:.2f}, slope {slope:.4f} (> 0)")
    assert slope > 0.0
    # the trained policy ends well above the random-exploration start
    assert rates[-3:].mean() > rates[:3].mean()
    assert (out / "agent_final.ckpt").exists()


def test_evasion_smoke_zero_unsafe(tmp_path):
    """Reduced-scale training on the evasion scenario keeps the unsafe
    collision rate at exactly zero with the shield on."""
    rows, _ = run_external_training(
        tmp_path, "human_evasion", epochs=20, episodes=6, seed=2,
        extra=["--k-start-steps", "1000", "--update-after", "1000",
               "--max-episode-steps", "60"])
    unsafe = [float(r["unsafe_collision_rate"]) for r in rows]
    total = sum(unsafe)
    print(f"[{'PASS' if total == 0 else 'FAIL'}] evasion smoke: "
          f"sum of unsafe_collision_rate over 20 epochs = {total} (exact 0)")
    assert total == 0.0
    assert all(u == 0.0 for u in unsafe)
