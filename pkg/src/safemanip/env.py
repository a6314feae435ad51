"""Goal-conditioned RL environment around the shielded kinematic simulator.

The world advances in shield ticks (dt); the agent acts every rl_dt by
emitting a joint-position delta that becomes the shield's next intermediate
goal.  Rewards are sparse (0 on reaching the episode goal, -1 otherwise) and
episodes end on goal, human contact, or timeout.  Every tick an independent
audit checks the true human-robot distance; contact while any joint moves is
the safety violation the shield is supposed to exclude.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import _kernels
from .human_motion import AdversarialHuman, MotionPlayback, NoHuman
from .human_reach import HumanMeasurement, HumanModel
from .robot_model import KinematicChain
from .shield import MotionCommand, SafetyShield, ShieldConfig, TickRecord
from .trajectory import JointState, JointTrajectory, LimitSet, plan_intended

log = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent / "configs"


class EpisodeAlreadyDone(RuntimeError):
    """step() called after the episode ended; call reset() first."""


class GoalSamplingExhausted(RuntimeError):
    """No static-collision-free episode goal found within the budget."""


class ResampleBudgetExhausted(RuntimeError):
    """No static-collision-free intermediate goal found within the budget."""


@dataclass
class Scenario:
    """Episode recipe: robot, human source, goal sampler, timing, limits."""

    name: str
    robot: str
    human_model: str
    start_q: np.ndarray
    goal_type: str                      # uniform | fixed
    goal_value: np.ndarray | None
    goal_jitter: float
    human_type: str                     # playback | adversarial | none
    human_file: str | None
    human_offset_xy: tuple[float, float]
    human_offset_t: tuple[float, float]
    dt: float = 0.004
    rl_dt: float = 0.2
    max_episode_steps: int = 100
    eps_goal: float = 0.05
    eps_inner: float = 0.01
    dq_max: float = 0.4
    limits: LimitSet = field(default_factory=lambda: LimitSet(2.0, 2.0, 15.0))
    failsafe: LimitSet = field(default_factory=lambda: LimitSet(2.0, 10.0, 400.0))
    table_center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.36]))
    table_half_extents: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.5, 0.36]))
    table_clearance: float = 0.02
    static_ignore_links: tuple[int, ...] = (0,)
    shield: bool = True
    goal_rejection_budget: int = 1000
    action_resample_budget: int = 1000

    def __post_init__(self):
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if self.rl_dt < self.dt:
            raise ValueError("rl_dt must cover at least one tick")
        for name in ("human_offset_xy", "human_offset_t"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range must be ordered")
        if self.dq_max < self.limits.v_max * self.rl_dt - 1e-12:
            log.warning(
                "dq_max=%.3f < v_max*rl_dt=%.3f: the robot will finish every "
                "action early and stop between actions", self.dq_max,
                self.limits.v_max * self.rl_dt)

    @staticmethod
    def load(spec) -> "Scenario":
        """Load a scenario YAML by path or bundled name."""
        path = Path(spec)
        if not path.exists():
            bundled = CONFIG_DIR / "scenarios" / f"{spec}.yaml"
            if bundled.exists():
                path = bundled
            else:
                raise FileNotFoundError(f"scenario {spec!r} not found")
        data = yaml.safe_load(path.read_text())
        base = path.parent

        def resolve(rel):
            if rel is None:
                return None
            p = Path(rel)
            if p.is_absolute():
                return str(p)
            for root in (base, CONFIG_DIR):
                if (root / p).exists():
                    return str(root / p)
            raise FileNotFoundError(f"referenced file {rel!r} not found")

        goal = data.get("goal", {"type": "uniform"})
        human = data.get("human", {"type": "none"})
        limits = data.get("limits", {})
        fs = data.get("failsafe", {})
        table = data.get("table", {})
        return Scenario(
            name=data.get("name", path.stem),
            robot=resolve(data["robot"]),
            human_model=resolve(data.get("human_model", "human_model.yaml")),
            start_q=np.asarray(data["start_q"], dtype=np.float64),
            goal_type=goal["type"],
            goal_value=(np.asarray(goal["value"], dtype=np.float64)
                        if "value" in goal else None),
            goal_jitter=float(goal.get("jitter", 0.0)),
            human_type=human["type"],
            human_file=resolve(human.get("file")),
            human_offset_xy=tuple(human.get("offset_xy", (0.0, 0.0))),
            human_offset_t=tuple(human.get("offset_t", (0.0, 0.0))),
            dt=float(data.get("dt", 0.004)),
            rl_dt=float(data.get("rl_dt", 0.2)),
            max_episode_steps=int(data.get("max_episode_steps", 100)),
            eps_goal=float(data.get("eps_goal", 0.05)),
            eps_inner=float(data.get("eps_inner", 0.01)),
            dq_max=float(data.get("dq_max", 0.4)),
            limits=LimitSet(float(limits.get("v_max", 2.0)),
                            float(limits.get("a_max", 2.0)),
                            float(limits.get("j_max", 15.0))),
            failsafe=LimitSet(float(limits.get("v_max", 2.0)),
                              float(fs.get("a_max", 10.0)),
                              float(fs.get("j_max", 400.0))),
            table_center=np.asarray(table.get("center", [0.0, 0.0, 0.36]),
                                    dtype=np.float64),
            table_half_extents=np.asarray(table.get("half_extents", [0.8, 0.5, 0.36]),
                                          dtype=np.float64),
            table_clearance=float(table.get("clearance", 0.02)),
            static_ignore_links=tuple(data.get("static_ignore_links", (0,))),
            shield=bool(data.get("shield", True)),
            goal_rejection_budget=int(data.get("goal_rejection_budget", 1000)),
            action_resample_budget=int(data.get("action_resample_budget", 1000)),
        )


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    done_reason: str  # goal_reached | unsafe_collision | safe_collision | timeout | running
    info: dict


class DirectFollower:
    """Baseline executor: runs intended trajectories without verification."""

    def __init__(self, chain: KinematicChain, cfg: ShieldConfig):
        self.chain = chain
        self.cfg = cfg
        self.state: JointState | None = None
        self.current: JointTrajectory | None = None
        self.active_goal: np.ndarray | None = None
        self.last_record: TickRecord | None = None

    def reset(self, q0):
        self.state = JointState.rest(np.asarray(q0, dtype=np.float64))
        self.current = None
        self.active_goal = None
        self.last_record = None

    def set_intermediate_goal(self, goal):
        self.active_goal = np.asarray(goal, dtype=np.float64).copy()

    def tick(self, t_k: float, meas) -> MotionCommand:
        import time as _time
        t0 = _time.perf_counter_ns()
        if self.active_goal is not None and (
                self.current is None
                or not np.array_equal(self.current.goal, self.active_goal)):
            self.current = plan_intended(self.state, self.active_goal,
                                         self.cfg.traj_limits, start_time=t_k)
        if self.current is None:
            cmd = MotionCommand(JointState.rest(self.state.q.copy()), "hold")
        else:
            q, v, a = self.current._sample_raw(t_k + self.cfg.dt)
            st = object.__new__(JointState)
            st.q, st.qd, st.qdd = q, v, a
            cmd = MotionCommand(st, "intended")
        self.state = cmd.state
        self.last_record = TickRecord(
            t=t_k, mode="baseline", verified=None, min_distance=np.inf,
            compute_us=(_time.perf_counter_ns() - t0) / 1e3, replanned=False)
        return cmd


class ManipulatorEnv:
    """One episode worker; instances are independent and seedable."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        self.chain = KinematicChain.from_config(scenario.robot)
        self.human_model = HumanModel.from_config(scenario.human_model)
        cfg = ShieldConfig(dt=scenario.dt, traj_limits=scenario.limits,
                           fs_limits=scenario.failsafe)
        self.shield_cfg = cfg
        if scenario.shield:
            self.executor = SafetyShield(self.chain, cfg,
                                         human_model=self.human_model)
        else:
            self.executor = DirectFollower(self.chain, cfg)
        if scenario.human_type == "playback":
            self.human = MotionPlayback(scenario.human_file,
                                        speed_bound=self.human_model.params.v_h_max)
        elif scenario.human_type == "adversarial":
            self.human = AdversarialHuman(
                anchor=self.chain.mount_xyz,
                speed_bound=self.human_model.params.v_h_max)
        elif scenario.human_type == "none":
            self.human = NoHuman()
        else:
            raise ValueError(f"unknown human source {scenario.human_type!r}")
        self._kp_names = self.human.keypoint_names
        if self._kp_names:
            self._body_i1, self._body_i2 = self.human_model._indices_for(self._kp_names)
            for required in ("wrist_l", "wrist_r", "head"):
                if required not in self._kp_names:
                    raise ValueError(f"human source lacks keypoint {required!r}")
            self._obs_kp = tuple(self._kp_names.index(n)
                                 for n in ("wrist_l", "wrist_r", "head"))
        else:
            self._obs_kp = ()
        self._ticks_per_step = int(round(scenario.rl_dt / scenario.dt))
        self._master = np.random.SeedSequence(seed)
        self._skip = np.zeros(self.chain.n_joints, dtype=np.bool_)
        for i in scenario.static_ignore_links:
            self._skip[i] = True
        self.rng: np.random.Generator | None = None
        self.state: JointState | None = None
        self.episode_goal: np.ndarray | None = None
        self._done = True
        self._tick_count = 0
        self._step_count = 0
        self._human_pos = np.zeros((0, 3))
        self.episode_tick_times: list[float] = []
        self.episode_min_margin = np.inf
        self.episode_unsafe_ticks = 0
        self._ee_is_last_p2 = np.array_equal(self.chain.ee_offset,
                                             self.chain.links[-1].cap_p2)

    @property
    def n_joints(self) -> int:
        return self.chain.n_joints

    def get_rng_state(self) -> dict:
        """Episode-sequence state for epoch-granular checkpointing."""
        return {"entropy": str(self._master.entropy),
                "spawned": int(self._master.n_children_spawned)}

    def set_rng_state(self, state: dict):
        self._master = np.random.SeedSequence(
            entropy=int(state["entropy"]),
            n_children_spawned=int(state["spawned"]))

    @property
    def observation_dim(self) -> int:
        return 3 * self.n_joints + 12

    # -- helpers -----------------------------------------------------------

    def _fk_points(self, q):
        return self.chain.link_capsule_points_batch(q[None, :])

    def _ee_from_points(self, cp1, cp2, q):
        if self._ee_is_last_p2:
            return cp2[0, -1]
        return self.chain.ee_position(q)

    def static_collision(self, q) -> bool:
        """True iff any link capsule hits the table box or the floor."""
        cp1, cp2 = self._fk_points(np.asarray(q, dtype=np.float64))
        margin = _kernels.static_margin(
            cp1[0], cp2[0], self.chain.link_radii,
            self.scenario.table_center, self.scenario.table_half_extents,
            self.scenario.table_clearance, self._skip)
        return margin <= 0.0

    def compute_reward(self, achieved, goal, eps_goal=None) -> float:
        """Sparse reward: 0 iff every joint is strictly within eps of goal."""
        eps = self.scenario.eps_goal if eps_goal is None else eps_goal
        achieved = np.asarray(achieved, dtype=np.float64)
        goal = np.asarray(goal, dtype=np.float64)
        if achieved.shape != goal.shape:
            raise ValueError("achieved/goal length mismatch")
        return 0.0 if bool(np.all(np.abs(achieved - goal) < eps)) else -1.0

    def action_to_goal(self, q, action) -> np.ndarray:
        """Map a [-1, 1] action to a statically admissible joint goal.

        The scaled delta is clamped to the joint limits; a goal inside the
        static environment is replaced by uniformly resampling the whole
        action until one is admissible.
        """
        q = np.asarray(q, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        goal = np.clip(q + action * self.scenario.dq_max,
                       self.chain.limits_lo, self.chain.limits_hi)
        if not self.static_collision(goal):
            return goal
        for _ in range(self.scenario.action_resample_budget):
            action = self.rng.uniform(-1.0, 1.0, self.n_joints)
            goal = np.clip(q + action * self.scenario.dq_max,
                           self.chain.limits_lo, self.chain.limits_hi)
            if not self.static_collision(goal):
                return goal
        raise ResampleBudgetExhausted(
            f"no admissible intermediate goal near q={q} within "
            f"{self.scenario.action_resample_budget} draws")

    def _sample_goal(self) -> np.ndarray:
        sc = self.scenario
        for _ in range(sc.goal_rejection_budget):
            if sc.goal_type == "uniform":
                goal = self.rng.uniform(self.chain.limits_lo, self.chain.limits_hi)
            elif sc.goal_type == "fixed":
                goal = sc.goal_value + self.rng.uniform(
                    -sc.goal_jitter, sc.goal_jitter, self.n_joints)
                goal = np.clip(goal, self.chain.limits_lo, self.chain.limits_hi)
            else:
                raise ValueError(f"unknown goal sampler {sc.goal_type!r}")
            if not self.static_collision(goal):
                return goal
        raise GoalSamplingExhausted(
            f"no static-collision-free goal in {sc.goal_rejection_budget} draws")

    def _human_bodies(self):
        if not self._kp_names:
            return None
        return (self._human_pos[self._body_i1], self._human_pos[self._body_i2],
                self.human_model.radii)

    def _audit(self, q) -> float:
        """True-distance margin between robot links and human bodies."""
        bodies = self._human_bodies()
        if bodies is None:
            return np.inf
        cp1, cp2 = self._fk_points(q)
        return float(_kernels.min_pair_margin(cp1[0], cp2[0],
                                              self.chain.link_radii,
                                              bodies[0], bodies[1], bodies[2]))

    def observe(self) -> np.ndarray:
        """Layout: q, qd, episode goal, ee position, then wrist_l/wrist_r/head
        relative to the end-effector (zeros when no human is present)."""
        cp1, cp2 = self._fk_points(self.state.q)
        ee = self._ee_from_points(cp1, cp2, self.state.q)
        rel = np.zeros(9)
        if self._obs_kp:
            for k, idx in enumerate(self._obs_kp):
                rel[3 * k:3 * k + 3] = self._human_pos[idx] - ee
        return np.concatenate([self.state.q, self.state.qd, self.episode_goal,
                               ee, rel])

    # -- episode API ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start a new episode; identical seeds give identical episodes."""
        if seed is not None:
            self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        else:
            self.rng = np.random.default_rng(self._master.spawn(1)[0])
        sc = self.scenario
        self.human.reset(self.rng, offset_xy=sc.human_offset_xy,
                         offset_t=sc.human_offset_t)
        self.state = JointState.rest(sc.start_q.copy())
        if self.static_collision(sc.start_q):
            raise ValueError("scenario start configuration hits the static scene")
        self.episode_goal = self._sample_goal()
        self.executor.reset(sc.start_q)
        self._tick_count = 0
        self._step_count = 0
        self._done = False
        self.episode_tick_times = []
        self.episode_min_margin = np.inf
        self.episode_unsafe_ticks = 0
        cp1, cp2 = self._fk_points(self.state.q)
        ee = self._ee_from_points(cp1, cp2, self.state.q)
        self._human_pos = self.human.positions_at(0.0, ee)
        return self.observe()

    def step(self, action) -> StepResult:
        if self._done:
            raise EpisodeAlreadyDone("episode over; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.n_joints,):
            raise ValueError("action length must match joint count")
        if np.any(np.abs(action) > 1.0):
            log.warning("action outside [-1, 1] clamped: %s", action)
            action = np.clip(action, -1.0, 1.0)
        sc = self.scenario
        goal = self.action_to_goal(self.state.q, action)
        self.executor.set_intermediate_goal(goal)

        collision_reason = None
        step_min_margin = np.inf
        ticks = 0
        for _ in range(self._ticks_per_step):
            t_k = self._tick_count * sc.dt
            meas = HumanMeasurement(t_k, self._kp_names, self._human_pos,
                                    error=self.human_model.meas_error)
            cmd = self.executor.tick(t_k, meas)
            self.state = cmd.state
            self._tick_count += 1
            ticks += 1
            self.episode_tick_times.append(self.executor.last_record.compute_us)
            t_next = self._tick_count * sc.dt
            cp1, cp2 = self._fk_points(self.state.q)
            ee = self._ee_from_points(cp1, cp2, self.state.q)
            self._human_pos = self.human.positions_at(t_next, ee)
            margin = self._audit(self.state.q)
            step_min_margin = min(step_min_margin, margin)
            self.episode_min_margin = min(self.episode_min_margin, margin)
            if margin <= 0.0:
                moving = bool(np.any(self.state.qd != 0.0))
                if moving:
                    self.episode_unsafe_ticks += 1
                    collision_reason = "unsafe_collision"
                else:
                    collision_reason = "safe_collision"
                break
            if np.all(np.abs(self.state.q - goal) < sc.eps_inner):
                break

        self._step_count += 1
        reward = self.compute_reward(self.state.q, self.episode_goal)
        if reward == 0.0:
            done, reason = True, "goal_reached"
        elif collision_reason is not None:
            done, reason = True, collision_reason
        elif self._step_count >= sc.max_episode_steps:
            done, reason = True, "timeout"
        else:
            done, reason = False, "running"
        self._done = done
        info = {
            "ticks": ticks,
            "step_min_margin": step_min_margin,
            "intermediate_goal": goal,
            "episode_unsafe_ticks": self.episode_unsafe_ticks,
        }
        return StepResult(self.observe(), reward, done, reason, info)
