"""Experiment runner: training, evaluation, shield benchmarking, safety fuzz.

Every run writes three artifacts into the output directory: ``metrics.csv``
(one row per epoch), ``events.jsonl`` (one record per episode), and
``run_manifest.json`` (resolved configuration, seed, and a content hash).
Identical seeds and specs reproduce the CSV byte-for-byte except for the
timing columns.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .env import ManipulatorEnv, Scenario
from .protocol import ExternalPolicy, serve_agent_protocol
from .rl import EpochStats, TrainConfig, make_policy, train

METRIC_COLUMNS = [
    "epoch", "success_rate", "unsafe_collision_rate", "safe_collision_rate",
    "timeout_rate", "mean_episode_steps", "mean_tick_us", "median_tick_us",
    "p99_tick_us",
]
TIMING_COLUMNS = ["mean_tick_us", "median_tick_us", "p99_tick_us"]

FUZZ_SCENARIOS = ["randomized_goal", "human_evasion", "adversarial"]
FUZZ_AGENTS = ["random", "scripted", "sweep"]


@dataclass
class RunSpec:
    scenario: str
    mode: str                      # train | evaluate | benchmark-shield | fuzz-safety
    agent: str = "random"          # random | scripted | sweep | external
    seed: int = 0
    out: str = "runs/out"
    epochs: int | None = None
    episodes_per_epoch: int | None = None
    shield: bool | None = None     # None: scenario default
    endpoint: str | None = None
    max_episode_steps: int | None = None
    k_start_steps: int | None = None
    update_after: int | None = None


class MetricsWriter:
    def __init__(self, path: Path):
        self._fh = path.open("w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRIC_COLUMNS)

    def __call__(self, stats: EpochStats):
        row = asdict(stats)
        self._writer.writerow([row[c] for c in METRIC_COLUMNS])
        self._fh.flush()

    def close(self):
        self._fh.close()


class EventWriter:
    def __init__(self, path: Path):
        self._fh = path.open("w")

    def __call__(self, record: dict):
        record = {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                  for k, v in record.items()}
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def _content_hash(spec: RunSpec, scenario_path: str) -> str:
    payload = {
        "spec": asdict(spec),
        "scenario_sha256": hashlib.sha256(
            Path(scenario_path).read_bytes()).hexdigest(),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _resolve_scenario(spec: RunSpec) -> Scenario:
    scenario = Scenario.load(spec.scenario)
    if spec.shield is not None:
        scenario.shield = spec.shield
    if spec.max_episode_steps is not None:
        scenario.max_episode_steps = spec.max_episode_steps
    return scenario


def _make_env_and_policy(spec: RunSpec, scenario: Scenario):
    env = ManipulatorEnv(scenario, seed=spec.seed)
    if spec.agent == "external":
        if not spec.endpoint:
            raise ValueError("agent=external requires --endpoint")
        print(f"waiting for agent on {spec.endpoint} ...", flush=True)
        session = serve_agent_protocol(spec.endpoint, action_dim=env.n_joints)
        session.ping()
        session.reset_notice(spec.seed)
        policy = ExternalPolicy(session, env.n_joints)
    else:
        policy = make_policy(spec.agent, env, seed=spec.seed + 1)
    return env, policy


def _write_manifest(spec: RunSpec, scenario: Scenario, out: Path):
    manifest = {
        "spec": asdict(spec),
        "scenario_name": scenario.name,
        "seed": spec.seed,
        "content_hash": _content_hash(spec, _scenario_path(spec.scenario)),
    }
    (out / "run_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _scenario_path(spec_scenario: str) -> str:
    p = Path(spec_scenario)
    if p.exists():
        return str(p)
    from .env import CONFIG_DIR
    return str(CONFIG_DIR / "scenarios" / f"{spec_scenario}.yaml")


def run_training(spec: RunSpec, evaluate_only: bool = False) -> dict:
    scenario = _resolve_scenario(spec)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(spec, scenario, out)
    env, policy = _make_env_and_policy(spec, scenario)
    config = TrainConfig(
        n_epochs=spec.epochs or (10 if evaluate_only else 200),
        n_episodes_per_epoch=spec.episodes_per_epoch or 30,
        k_start_steps=(0 if evaluate_only else
                       5000 if spec.k_start_steps is None else spec.k_start_steps),
    )
    if spec.update_after is not None:
        config.update_after = spec.update_after
    metrics = MetricsWriter(out / "metrics.csv")
    events = EventWriter(out / "events.jsonl")
    try:
        summary = train(config, env, policy, seed=spec.seed,
                        metrics_sink=metrics, event_sink=events,
                        checkpoint_dir=None if evaluate_only else out,
                        train_updates=not evaluate_only)
    finally:
        metrics.close()
        events.close()
    if spec.agent == "external":
        if not evaluate_only:
            policy.save(str(out / "agent_final.ckpt"))
        policy.session.close()
    epochs = summary["epochs"]
    unsafe = sum(e.unsafe_collision_rate for e in epochs)
    print(f"{'evaluate' if evaluate_only else 'train'}: "
          f"{len(epochs)} epochs, {summary['t_total']} env steps, "
          f"final success_rate={epochs[-1].success_rate:.2f}, "
          f"unsafe epochs={sum(1 for e in epochs if e.unsafe_collision_rate > 0)}")
    summary["unsafe_rate_sum"] = unsafe
    return summary


def run_benchmark(spec: RunSpec) -> dict:
    scenario = _resolve_scenario(spec)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(spec, scenario, out)
    env, policy = _make_env_and_policy(spec, scenario)
    episodes = (spec.episodes_per_epoch or 10) * (spec.epochs or 1)
    ticks = []
    sim_time = 0.0
    wall = 0.0
    for ep in range(episodes):
        obs = env.reset()
        done = False
        t0 = time.perf_counter()
        while not done:
            res = env.step(policy.act(obs))
            obs = res.observation
            done = res.done
        wall += time.perf_counter() - t0
        ticks.extend(env.episode_tick_times)
        sim_time += len(env.episode_tick_times) * scenario.dt
    arr = np.asarray(ticks)
    report = {
        "episodes": episodes,
        "ticks": len(arr),
        "mean_tick_us": float(arr.mean()),
        "median_tick_us": float(np.median(arr)),
        "p99_tick_us": float(np.percentile(arr, 99)),
        "max_tick_us": float(arr.max()),
        "sim_seconds": sim_time,
        "wall_seconds": wall,
        "realtime_factor": sim_time / wall if wall > 0 else float("inf"),
    }
    (out / "benchmark.json").write_text(json.dumps(report, indent=2) + "\n")
    print("shield benchmark: median {median_tick_us:.0f} us, p99 "
          "{p99_tick_us:.0f} us over {ticks} ticks; {realtime_factor:.1f}x "
          "realtime".format(**report))
    return report


def run_fuzz(spec: RunSpec) -> dict:
    """Randomized safety audit across scenarios x agents; exit 0 iff the
    per-tick audit finds zero moving-contact instants."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    per_cell = spec.episodes_per_epoch or 12
    max_steps = spec.max_episode_steps or 12
    cells = []
    total_unsafe = 0
    total_episodes = 0
    seed_base = spec.seed
    for scen_name in FUZZ_SCENARIOS:
        for agent in FUZZ_AGENTS:
            scenario = Scenario.load(scen_name)
            scenario.shield = True
            scenario.max_episode_steps = max_steps
            env = ManipulatorEnv(scenario, seed=seed_base)
            policy = make_policy(agent, env, seed=seed_base + 1)
            reasons = {}
            unsafe_ticks = 0
            min_margin_moving = np.inf
            for ep in range(per_cell):
                obs = env.reset(seed=seed_base * 1_000_003 + ep)
                done = False
                while not done:
                    res = env.step(policy.act(obs))
                    obs = res.observation
                    done = res.done
                reasons[res.done_reason] = reasons.get(res.done_reason, 0) + 1
                unsafe_ticks += env.episode_unsafe_ticks
            total_unsafe += unsafe_ticks
            total_episodes += per_cell
            cells.append({
                "scenario": scen_name, "agent": agent, "episodes": per_cell,
                "unsafe_contact_ticks": unsafe_ticks, "done_reasons": reasons,
            })
            seed_base += 7919
            print(f"fuzz {scen_name}/{agent}: {per_cell} episodes, "
                  f"unsafe ticks={unsafe_ticks}, reasons={reasons}", flush=True)
    report = {
        "total_episodes": total_episodes,
        "unsafe_contact_ticks": total_unsafe,
        "cells": cells,
    }
    (out / "fuzz_report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"fuzz-safety: {total_episodes} episodes, "
          f"{total_unsafe} unsafe contact ticks")
    return report


def run(spec: RunSpec) -> int:
    if spec.mode == "train":
        run_training(spec, evaluate_only=False)
        return 0
    if spec.mode == "evaluate":
        run_training(spec, evaluate_only=True)
        return 0
    if spec.mode == "benchmark-shield":
        run_benchmark(spec)
        return 0
    if spec.mode == "fuzz-safety":
        report = run_fuzz(spec)
        return 0 if report["unsafe_contact_ticks"] == 0 else 1
    raise ValueError(f"unknown mode {spec.mode!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safemanip",
        description="shielded manipulator simulation experiments")
    parser.add_argument("--scenario", default="randomized_goal",
                        help="bundled scenario name or YAML path")
    parser.add_argument("--mode", required=True,
                        choices=["train", "evaluate", "benchmark-shield",
                                 "fuzz-safety"])
    parser.add_argument("--agent", default="random",
                        choices=["random", "scripted", "sweep", "external"])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--episodes-per-epoch", type=int, default=None)
    parser.add_argument("--out", default="runs/out")
    parser.add_argument("--shield", choices=["on", "off"], default=None,
                        help="override the scenario's shield flag")
    parser.add_argument("--endpoint", default=None,
                        help="host:port for the external agent protocol")
    parser.add_argument("--max-episode-steps", type=int, default=None)
    parser.add_argument("--k-start-steps", type=int, default=None,
                        help="random exploration steps before the policy acts")
    parser.add_argument("--update-after", type=int, default=None,
                        help="total steps before the first update flush")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = RunSpec(
        scenario=args.scenario,
        mode=args.mode,
        agent=args.agent,
        seed=args.seed,
        out=args.out,
        epochs=args.epochs,
        episodes_per_epoch=args.episodes_per_epoch,
        shield=None if args.shield is None else args.shield == "on",
        endpoint=args.endpoint,
        max_episode_steps=args.max_episode_steps,
        k_start_steps=args.k_start_steps,
        update_after=args.update_after,
    )
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
