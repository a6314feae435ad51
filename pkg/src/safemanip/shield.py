"""High-frequency safety shield.

Every tick the shield considers one step of the intended trajectory followed
by a freshly planned failsafe stop, and executes that step only if the swept
robot occupancy of step-plus-stop is disjoint from the human reachable set
over the same horizon.  Otherwise it executes the previously verified
failsafe.  Since every verified plan ends at rest and verification covers the
entire time to rest (including measurement staleness), the robot is provably
stopped before any human contact is possible, by induction from the initial
stopped state.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import OccupancySet, occupancy_sets_disjoint
from .human_reach import (HumanMeasurement, HumanModel, reachable_arrays,
                          reachable_occupancy)
from .robot_model import KinematicChain, swept_occupancy
from .trajectory import (
    InfeasibleStart,
    JointState,
    JointTrajectory,
    LimitSet,
    PathDecelTrajectory,
    plan_failsafe,
    plan_intended,
)


class ClockSkew(RuntimeError):
    """Tick time regressed or drifted off the tick grid."""


class OutOfJointLimits(ValueError):
    """Requested intermediate goal violates the joint position limits."""


class ShieldMode(enum.Enum):
    STOPPED = "stopped"
    FOLLOW_INTENDED = "intended"
    FOLLOW_FAILSAFE = "failsafe"


@dataclass(frozen=True)
class ShieldConfig:
    dt: float = 0.004
    traj_limits: LimitSet = field(default_factory=lambda: LimitSet(2.0, 2.0, 15.0))
    fs_limits: LimitSet = field(default_factory=lambda: LimitSet(2.0, 10.0, 400.0))
    substep: float | None = None  # occupancy partition; defaults to dt

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("tick period must be positive")
        if (self.fs_limits.a_max <= self.traj_limits.a_max
                or self.fs_limits.j_max <= self.traj_limits.j_max):
            raise ValueError("failsafe limits must exceed trajectory limits")

    @property
    def occupancy_substep(self) -> float:
        return self.substep if self.substep is not None else self.dt


@dataclass
class MotionCommand:
    state: JointState
    branch: str  # intended | failsafe | hold


@dataclass
class TickRecord:
    t: float
    mode: str
    verified: bool | None
    min_distance: float
    compute_us: float
    replanned: bool


def verify(robot_occ: OccupancySet, human_occ: OccupancySet) -> bool:
    """True iff no robot capsule intersects any human capsule (closed test)."""
    return occupancy_sets_disjoint(robot_occ, human_occ)


class SafetyShield:
    """Per-robot shield state machine; externally synchronized (one caller)."""

    def __init__(self, chain: KinematicChain, config: ShieldConfig,
                 human_model: HumanModel | None = None):
        self.chain = chain
        self.cfg = config
        self.human_model = human_model
        self.pad_speeds = chain.conservative_link_speeds(config.traj_limits.v_max)
        self.mode = ShieldMode.STOPPED
        self.state: JointState | None = None
        self.current: JointTrajectory | PathDecelTrajectory | None = None
        self.last_failsafe: PathDecelTrajectory | None = None
        self.active_goal: np.ndarray | None = None
        self._expected_t: float | None = None
        self.last_record: TickRecord | None = None
        self._rest_plan: JointTrajectory | None = None  # cache for held states

    def reset(self, q0):
        self.state = JointState.rest(np.asarray(q0, dtype=np.float64))
        self.mode = ShieldMode.STOPPED
        self.current = None
        self.last_failsafe = None
        self.active_goal = None
        self._expected_t = None
        self.last_record = None
        self._rest_plan = None

    def set_intermediate_goal(self, goal):
        """Record a new goal; it takes effect at the next tick boundary."""
        goal = np.asarray(goal, dtype=np.float64)
        if goal.shape != (self.chain.n_joints,) or not np.all(np.isfinite(goal)):
            raise OutOfJointLimits("goal must be a finite joint vector")
        if np.any(goal < self.chain.limits_lo - 1e-9) or \
                np.any(goal > self.chain.limits_hi + 1e-9):
            raise OutOfJointLimits("goal outside joint position limits")
        self.active_goal = goal.copy()

    # -- internals ---------------------------------------------------------

    def _check_clock(self, t_k: float):
        if self._expected_t is None:
            self._expected_t = t_k
            return
        if t_k < self._expected_t - 1e-9:
            raise ClockSkew(f"tick time regressed: {t_k} < {self._expected_t}")
        if abs(t_k - self._expected_t) > 1e-6:
            raise ClockSkew(
                f"tick time off the grid: {t_k} vs expected {self._expected_t}")

    def _candidate(self, t_k: float):
        """The intended trajectory to consider this tick, or None."""
        if self.active_goal is None:
            return None, False
        if (self.mode is ShieldMode.FOLLOW_INTENDED
                and isinstance(self.current, JointTrajectory)
                and np.array_equal(self.current.goal, self.active_goal)):
            return self.current, False
        # a robot waiting at rest for an unverifiable goal replans the same
        # trajectory every tick: reuse it, only re-verification changes
        cached = self._rest_plan
        if (cached is not None
                and np.all(self.state.qd == 0.0) and np.all(self.state.qdd == 0.0)
                and np.array_equal(cached.seg_q0[:, 0], self.state.q)
                and np.array_equal(cached.goal, self.active_goal)):
            return cached.retimed(t_k), True
        try:
            traj = plan_intended(self.state, self.active_goal,
                                 self.cfg.traj_limits, start_time=t_k)
        except InfeasibleStart:
            # mid-braking states are not plannable under the gentle limits;
            # keep following the failsafe and retry next tick
            return None, True
        if np.all(self.state.qd == 0.0) and np.all(self.state.qdd == 0.0):
            self._rest_plan = traj
        return traj, True

    def _verified_against(self, candidate: JointTrajectory, t_k: float,
                          u_hi: float, meas: HumanMeasurement,
                          horizon: float) -> bool:
        """Hierarchical disjointness test, equal to verify(swept, reachable).

        A per-link bounding sphere over the whole window is checked first;
        spheres contain every fine capsule, so a clear coarse pass implies
        the fine pass.  Only conflicted links pay for the fine check.
        """
        hp1, hp2, hr = reachable_arrays(self.human_model, meas, horizon)
        if hr.shape[0] == 0:
            return True
        sub = self.cfg.occupancy_substep
        n_int = max(1, int(np.ceil((u_hi - t_k) / sub - 1e-12)))
        h = (u_hi - t_k) / n_int
        grid = t_k + np.arange(n_int + 1) * h
        cp1, cp2 = self.chain.link_capsule_points_batch(
            candidate.positions_at(grid))
        pads = self.pad_speeds * h / 4.0 + 1e-6
        return bool(_kernels.verify_window(cp1, cp2, self.chain.link_radii,
                                           pads, hp1, hp2, hr))

    def _instantaneous_min_distance(self, meas: HumanMeasurement) -> float:
        if self.human_model is None or len(meas.names) == 0:
            return np.inf
        hp1, hp2, hr = reachable_arrays(self.human_model, meas, 0.0)
        cp1, cp2 = self.chain.link_capsule_points_batch(self.state.q[None, :])
        return float(_kernels.min_pair_margin(cp1[0], cp2[0],
                                              self.chain.link_radii,
                                              hp1, hp2, hr))

    # -- the tick ----------------------------------------------------------

    def tick(self, t_k: float, meas: HumanMeasurement) -> MotionCommand:
        """Decide and return the motion for [t_k, t_k + dt]."""
        t_wall = time.perf_counter_ns()
        if self.state is None:
            raise RuntimeError("reset() must be called before ticking")
        self._check_clock(t_k)
        if meas.timestamp > t_k + 1e-9:
            raise ClockSkew("measurement timestamp lies in the future")
        staleness = max(t_k - meas.timestamp, 0.0)
        dt = self.cfg.dt
        t_next = t_k + dt

        candidate, replanned = self._candidate(t_k)
        verified = None
        command = None
        if candidate is not None:
            fs = plan_failsafe(candidate, candidate.nominal_path_state(t_next),
                               self.cfg.fs_limits)
            horizon = dt + fs.duration + staleness
            u_hi = t_next + fs.u_advance()
            if self.human_model is None or len(meas.names) == 0:
                verified = True
            else:
                verified = self._verified_against(candidate, t_k, u_hi, meas,
                                                  horizon)
            if verified:
                self.current = candidate
                self.mode = ShieldMode.FOLLOW_INTENDED
                self.last_failsafe = fs
                assert self.last_failsafe is not None  # induction invariant
                command = MotionCommand(candidate.sample(t_next), "intended")

        if command is None:
            if self.mode is ShieldMode.FOLLOW_INTENDED:
                # the step was not verified: fall back to the failsafe that
                # was proven safe together with the previously executed step
                assert self.last_failsafe is not None
                assert abs(self.last_failsafe.start_time - t_k) < 1e-6
                self.current = self.last_failsafe
                self.mode = ShieldMode.FOLLOW_FAILSAFE
            if self.mode is ShieldMode.FOLLOW_FAILSAFE:
                st = self.current.sample(t_next)
                command = MotionCommand(st, "failsafe")
                if np.all(st.qd == 0.0) and np.all(st.qdd == 0.0):
                    self.mode = ShieldMode.STOPPED
            else:
                command = MotionCommand(
                    JointState.rest(self.state.q.copy()), "hold")

        self.state = command.state
        self._expected_t = t_next
        self.last_record = TickRecord(
            t=t_k, mode=self.mode.value, verified=verified,
            min_distance=self._instantaneous_min_distance(meas),
            compute_us=(time.perf_counter_ns() - t_wall) / 1e3,
            replanned=replanned,
        )
        return command
