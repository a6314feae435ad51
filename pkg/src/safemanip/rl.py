"""Replay buffer, hindsight goal relabeling, and the training loop.

The loop is policy-agnostic: a policy provider only needs act/update, so the
same machinery drives the uniform-random explorer, scripted controllers, and
an external deep-RL agent attached over the wire protocol.  Goal relabeling
rewrites the goal slice of stored observations with joint positions actually
reached later in the episode and recomputes rewards through the environment's
own reward function.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import ManipulatorEnv


class EmptyBuffer(RuntimeError):
    """sample_batch() on a buffer with no stored transitions."""


@dataclass
class Transition:
    obs: np.ndarray       # observation with the goal slice included
    action: np.ndarray
    reward: float
    next_obs: np.ndarray

    def __post_init__(self):
        if self.reward not in (0.0, -1.0):
            raise ValueError("reward must be 0 or -1")
        if self.obs.shape != self.next_obs.shape:
            raise ValueError("obs/next_obs shape mismatch")


class ReplayBuffer:
    """Uniform ring buffer with FIFO eviction."""

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.size = 0
        self._head = 0
        self._obs = None
        self._act = None
        self._rew = None
        self._next = None

    def _alloc(self, obs_dim: int, act_dim: int):
        self._obs = np.zeros((self.capacity, obs_dim), dtype=np.float64)
        self._act = np.zeros((self.capacity, act_dim), dtype=np.float64)
        self._rew = np.zeros(self.capacity, dtype=np.float64)
        self._next = np.zeros((self.capacity, obs_dim), dtype=np.float64)

    def store(self, tr: Transition):
        if self._obs is None:
            self._alloc(tr.obs.shape[0], tr.action.shape[0])
        i = self._head
        self._obs[i] = tr.obs
        self._act[i] = tr.action
        self._rew[i] = tr.reward
        self._next[i] = tr.next_obs
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_batch(self, size: int, rng: np.random.Generator) -> dict:
        """Uniform with replacement; deterministic under the generator."""
        if self.size == 0:
            raise EmptyBuffer("no transitions stored")
        idx = rng.integers(0, self.size, size=size)
        return {
            "obs": self._obs[idx].copy(),
            "action": self._act[idx].copy(),
            "reward": self._rew[idx].copy(),
            "next_obs": self._next[idx].copy(),
        }

    def state_arrays(self):
        n = self.size
        return {"obs": self._obs[:n], "act": self._act[:n],
                "rew": self._rew[:n], "next": self._next[:n]}


@dataclass
class TrainConfig:
    k_her: int = 4
    k_start_steps: int = 5000
    update_after: int = 1000
    update_every: int = 200
    n_epochs: int = 200
    n_episodes_per_epoch: int = 30
    batch_size: int = 128
    gamma: float = 0.99
    alpha: float = 0.2
    replay_capacity: int = 1_000_000

    def __post_init__(self):
        for name, v in asdict(self).items():
            if name == "k_start_steps":
                if v < 0:
                    raise ValueError("k_start_steps must be >= 0")
            elif not v > 0:
                raise ValueError(f"{name} must be positive")


def her_augment(episode: list[Transition], k_her: int,
                rng: np.random.Generator, reward_fn, n_joints: int
                ) -> list[Transition]:
    """Emit each original transition followed by its hindsight relabels.

    For transition i, up to k_her indices are drawn uniformly without
    replacement from the later transitions; each provides a fictional goal
    (the joint position of its start state, i.e. a configuration actually
    reached), and the reward is recomputed against that goal.
    """
    if not episode:
        raise ValueError("episode must be nonempty")
    n = n_joints
    length = len(episode)
    out = []
    for i, tr in enumerate(episode):
        out.append(tr)
        remaining = length - 1 - i
        k = min(k_her, remaining)
        if k == 0:
            continue
        picks = rng.choice(remaining, size=k, replace=False) + i + 1
        for idx in picks:
            goal = episode[idx].obs[:n].copy()
            obs = tr.obs.copy()
            obs[2 * n:3 * n] = goal
            next_obs = tr.next_obs.copy()
            next_obs[2 * n:3 * n] = goal
            reward = reward_fn(tr.next_obs[:n], goal)
            out.append(Transition(obs, action=tr.action, reward=reward,
                                  next_obs=next_obs))
    return out


# -- policy providers --------------------------------------------------------

class RandomPolicy:
    """Uniform over the action cube; updates are no-ops."""

    def __init__(self, n_joints: int, seed: int = 0):
        self.n = n_joints
        self.rng = np.random.default_rng(seed)

    def act(self, obs) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, self.n)

    def update(self, batch) -> dict:
        return {}

    def save(self, path):
        pass


class GreedyGoalPolicy:
    """Scripted controller: head straight for the episode goal."""

    def __init__(self, n_joints: int, dq_max: float):
        self.n = n_joints
        self.dq_max = dq_max

    def act(self, obs) -> np.ndarray:
        q = obs[:self.n]
        goal = obs[2 * self.n:3 * self.n]
        return np.clip((goal - q) / self.dq_max, -1.0, 1.0)

    def update(self, batch) -> dict:
        return {}

    def save(self, path):
        pass


class SweepPolicy:
    """Scripted adversarial probe: bang-bang sweeps across the workspace."""

    def __init__(self, n_joints: int, period: int = 14):
        self.n = n_joints
        self.period = period
        self._k = 0

    def act(self, obs) -> np.ndarray:
        self._k += 1
        phase = (self._k // self.period) % 2
        a = np.full(self.n, 0.3 if phase else -0.3)
        a[0] = 1.0 if phase else -1.0
        if self.n > 1:
            a[1] = 0.8 if (self._k // (2 * self.period)) % 2 else -0.2
        return a

    def update(self, batch) -> dict:
        return {}

    def save(self, path):
        pass


def make_policy(kind: str, env: ManipulatorEnv, seed: int = 0):
    if kind == "random":
        return RandomPolicy(env.n_joints, seed=seed)
    if kind in ("scripted", "greedy"):
        return GreedyGoalPolicy(env.n_joints, env.scenario.dq_max)
    if kind == "sweep":
        return SweepPolicy(env.n_joints)
    raise ValueError(f"unknown policy kind {kind!r}")


# -- training loop -----------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    success_rate: float
    unsafe_collision_rate: float
    safe_collision_rate: float
    timeout_rate: float
    mean_episode_steps: float
    mean_tick_us: float
    median_tick_us: float
    p99_tick_us: float


def collect_epoch_stats(epoch: int, reasons: list[str], steps: list[int],
                        tick_times: list[float]) -> EpochStats:
    n = len(reasons)
    count = lambda r: sum(1 for x in reasons if x == r) / n
    ticks = np.asarray(tick_times) if tick_times else np.array([0.0])
    return EpochStats(
        epoch=epoch,
        success_rate=count("goal_reached"),
        unsafe_collision_rate=count("unsafe_collision"),
        safe_collision_rate=count("safe_collision"),
        timeout_rate=count("timeout"),
        mean_episode_steps=float(np.mean(steps)),
        mean_tick_us=float(np.mean(ticks)),
        median_tick_us=float(np.median(ticks)),
        p99_tick_us=float(np.percentile(ticks, 99)),
    )


def train(config: TrainConfig, env: ManipulatorEnv, policy, seed: int = 0,
          metrics_sink=None, event_sink=None, checkpoint_dir=None,
          resume: bool = False, train_updates: bool = True) -> dict:
    """Run the training procedure and return a run summary.

    Exploration is uniform-random for the first k_start_steps environment
    steps; after every episode the local buffer is stored with hindsight
    relabels; updates start after update_after total steps and then flush
    every update_every steps with one update call per elapsed step.  With
    ``train_updates=False`` the loop runs in evaluation mode: no storage, no
    updates (used by the CLI's evaluate mode).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    buffer = ReplayBuffer(config.replay_capacity)
    t_total = 0
    t_last_update = 0
    start_epoch = 0
    update_calls = 0

    ckpt = Path(checkpoint_dir) / "checkpoint.npz" if checkpoint_dir else None
    if resume and ckpt is not None and ckpt.exists():
        state = np.load(ckpt, allow_pickle=True)
        start_epoch = int(state["epoch"]) + 1
        t_total = int(state["t_total"])
        t_last_update = int(state["t_last_update"])
        update_calls = int(state["update_calls"])
        rng.bit_generator.state = json.loads(str(state["rng_state"]))
        env.set_rng_state(json.loads(str(state["env_rng"])))
        if state["buf_n"] > 0:
            for i in range(int(state["buf_n"])):
                buffer.store(Transition(state["buf_obs"][i], state["buf_act"][i],
                                        float(state["buf_rew"][i]),
                                        state["buf_next"][i]))

    n_joints = env.n_joints
    summary = {"epochs": [], "t_total_start": t_total}
    for epoch in range(start_epoch, config.n_epochs):
        reasons, steps_list, tick_times = [], [], []
        for episode in range(config.n_episodes_per_epoch):
            obs = env.reset()
            local: list[Transition] = []
            done = False
            reason = "running"
            steps = 0
            while not done:
                if t_total >= config.k_start_steps:
                    action = np.asarray(policy.act(obs), dtype=np.float64)
                else:
                    action = rng.uniform(-1.0, 1.0, n_joints)
                res = env.step(action)
                local.append(Transition(obs.copy(), action.copy(),
                                        res.reward, res.observation.copy()))
                t_total += 1
                steps += 1
                obs = res.observation
                done = res.done
                reason = res.done_reason
            reasons.append(reason)
            steps_list.append(steps)
            tick_times.extend(env.episode_tick_times)
            if event_sink is not None:
                event_sink({
                    "epoch": epoch, "episode": episode, "steps": steps,
                    "done_reason": reason,
                    "min_margin": float(env.episode_min_margin),
                    "unsafe_ticks": int(env.episode_unsafe_ticks),
                })
            if train_updates:
                for tr in her_augment(local, config.k_her, rng,
                                      env.compute_reward, n_joints):
                    buffer.store(tr)
                if (t_total >= config.update_after
                        and t_total - t_last_update >= config.update_every):
                    for _ in range(t_total - t_last_update):
                        policy.update(buffer.sample_batch(config.batch_size, rng))
                        update_calls += 1
                    t_last_update = t_total
        stats = collect_epoch_stats(epoch, reasons, steps_list, tick_times)
        summary["epochs"].append(stats)
        if metrics_sink is not None:
            metrics_sink(stats)
        if ckpt is not None:
            arrays = buffer.state_arrays() if buffer.size else None
            np.savez(
                ckpt, epoch=epoch, t_total=t_total,
                t_last_update=t_last_update, update_calls=update_calls,
                rng_state=json.dumps(rng.bit_generator.state),
                env_rng=json.dumps(env.get_rng_state()),
                buf_n=buffer.size,
                buf_obs=arrays["obs"] if arrays else np.zeros(0),
                buf_act=arrays["act"] if arrays else np.zeros(0),
                buf_rew=arrays["rew"] if arrays else np.zeros(0),
                buf_next=arrays["next"] if arrays else np.zeros(0),
            )
    summary["t_total"] = t_total
    summary["update_calls"] = update_calls
    summary["buffer_size"] = buffer.size
    return summary
