"""Jerk-limited online trajectory generation.

Intended motions are time-synchronized seven-segment profiles from an
arbitrary joint state to rest at a goal.  Failsafe (stop) motions never
replan the geometric path: they decelerate the path parameter of the intended
trajectory with a jerk-limited profile, so a stop always exists and is O(1)
to compute.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import MAX_SEGMENTS


class InfeasibleStart(ValueError):
    """Start state violates the planning limits beyond tolerance."""


@dataclass(frozen=True)
class LimitSet:
    """Kinematic bounds per joint (symmetric)."""

    v_max: float
    a_max: float
    j_max: float

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0 and self.j_max > 0):
            raise ValueError("limits must be strictly positive")


@dataclass
class JointState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=np.float64))
        self.qd = np.atleast_1d(np.asarray(self.qd, dtype=np.float64))
        self.qdd = np.atleast_1d(np.asarray(self.qdd, dtype=np.float64))
        if not (self.q.shape == self.qd.shape == self.qdd.shape):
            raise ValueError("q, qd, qdd must have equal lengths")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))
                and np.all(np.isfinite(self.qdd))):
            raise ValueError("joint state must be finite")

    @staticmethod
    def rest(q) -> "JointState":
        q = np.atleast_1d(np.asarray(q, dtype=np.float64))
        return JointState(q, np.zeros_like(q), np.zeros_like(q))

    @staticmethod
    def _wrap(q, qd, qdd) -> "JointState":
        # hot-path constructor for arrays already known to be valid
        st = object.__new__(JointState)
        st.q = q
        st.qd = qd
        st.qdd = qdd
        return st

    @property
    def n_joints(self) -> int:
        return self.q.shape[0]

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.qd.copy(), self.qdd.copy())


@dataclass
class PathState:
    """Progress along an intended trajectory: parameter in [0, 1] plus its
    time derivatives.  Nominal execution has sd == 1/duration."""

    s: float
    sd: float
    sdd: float

    def __post_init__(self):
        if not (0.0 <= self.s <= 1.0):
            raise ValueError("path parameter must lie in [0, 1]")
        if self.sd < 0.0:
            raise ValueError("path velocity must be >= 0")


class JointTrajectory:
    """Piecewise-constant-jerk joint trajectory, one shared duration.

    Samples exactly: position is cubic per segment.  Beyond the end the
    trajectory clamps to rest at the goal (exact zeros).
    """

    def __init__(self, start_time, duration, goal, seg_durs, seg_jerks,
                 seg_q0, seg_v0, seg_a0, limits: LimitSet):
        self.start_time = float(start_time)
        self.duration = float(duration)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.seg_durs = seg_durs
        self.seg_jerks = seg_jerks
        self.seg_q0 = seg_q0
        self.seg_v0 = seg_v0
        self.seg_a0 = seg_a0
        self.limits = limits
        n, s = seg_durs.shape
        self.n_joints = n
        bounds = np.zeros((n, s + 1))
        np.cumsum(seg_durs, axis=1, out=bounds[:, 1:])
        bounds[:, -1] = self.duration  # absorb cumulative-sum ulp drift
        self._bounds = bounds

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def retimed(self, start_time: float) -> "JointTrajectory":
        """Same motion shifted to a new start time (shares segment arrays)."""
        other = object.__new__(JointTrajectory)
        other.__dict__.update(self.__dict__)
        other.start_time = float(start_time)
        return other

    def _sample_raw(self, t: float):
        """(q, qd, qdd) arrays at world time t; no validation overhead."""
        if t >= self.end_time or self.duration == 0.0:
            z = np.zeros(self.n_joints)
            return self.goal.copy(), z, z.copy()
        h = t - self.start_time
        if h < 0.0:
            h = 0.0
        q = np.empty(self.n_joints)
        v = np.empty(self.n_joints)
        a = np.empty(self.n_joints)
        _kernels.sample_profile(self._bounds, self.seg_jerks, self.seg_q0,
                                self.seg_v0, self.seg_a0, h, q, v, a)
        return q, v, a

    def sample(self, t: float) -> JointState:
        """Exact state at world time t (clamped to [start, end])."""
        return JointState._wrap(*self._sample_raw(t))

    def sample_many(self, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized sampling: returns (M, N) arrays q, qd, qdd."""
        ts = np.asarray(ts, dtype=np.float64)
        h = np.clip(ts - self.start_time, 0.0, max(self.duration, 0.0))
        m = h.shape[0]
        q = np.empty((m, self.n_joints))
        v = np.empty((m, self.n_joints))
        a = np.empty((m, self.n_joints))
        for n in range(self.n_joints):
            idx = np.clip(np.searchsorted(self._bounds[n], h, side="right") - 1,
                          0, self.seg_durs.shape[1] - 1)
            dt = h - self._bounds[n, idx]
            jj = self.seg_jerks[n, idx]
            q0 = self.seg_q0[n, idx]
            v0 = self.seg_v0[n, idx]
            a0 = self.seg_a0[n, idx]
            q[:, n] = q0 + v0 * dt + 0.5 * a0 * dt * dt + jj * dt ** 3 / 6.0
            v[:, n] = v0 + a0 * dt + 0.5 * jj * dt * dt
            a[:, n] = a0 + jj * dt
        ended = ts >= self.end_time
        if self.duration == 0.0:
            ended = np.ones_like(ended)
        if np.any(ended):
            q[ended] = self.goal
            v[ended] = 0.0
            a[ended] = 0.0
        return q, v, a

    def positions_at(self, ts) -> np.ndarray:
        ts = np.ascontiguousarray(ts, dtype=np.float64)
        out = np.empty((ts.shape[0], self.n_joints))
        _kernels.sample_positions_grid(self._bounds, self.seg_jerks,
                                       self.seg_q0, self.seg_v0, self.seg_a0,
                                       self.goal, self.duration,
                                       ts - self.start_time, out)
        return out

    def abs_bounds_over_window(self, u_lo: float, u_hi: float):
        """Suprema of |qd|, |qdd|, |jerk| over the local-time window, exact
        per segment (velocity extrema at endpoints or interior vertex)."""
        return _kernels.window_bounds(self._bounds, self.seg_durs,
                                      self.seg_jerks, self.seg_v0,
                                      self.seg_a0, u_lo, u_hi)

    def nominal_path_state(self, t: float) -> PathState:
        """Path state when the trajectory is being executed at nominal rate."""
        if self.duration == 0.0:
            return PathState(1.0, 0.0, 0.0)
        s = (t - self.start_time) / self.duration
        if s >= 1.0:
            return PathState(1.0, 0.0, 0.0)
        return PathState(max(s, 0.0), 1.0 / self.duration, 0.0)


class PathDecelTrajectory:
    """Failsafe trajectory: the intended path, traversed by a decelerating
    time-substitution u(t) that reaches zero rate.  All sampled positions lie
    on the intended geometric path by construction."""

    def __init__(self, reference: JointTrajectory, start_time: float,
                 u0: float, sigma0: float, sigmad0: float,
                 seg_durs, seg_jerks, limits: LimitSet):
        self.reference = reference
        self.start_time = float(start_time)
        self.u0 = float(u0)
        self.seg_durs = np.asarray(seg_durs, dtype=np.float64)
        self.seg_jerks = np.asarray(seg_jerks, dtype=np.float64)
        self.limits = limits
        self.n_joints = reference.n_joints
        self._sigma0 = float(sigma0)
        self._sigmad0 = float(sigmad0)
        # integrate the rate profile once: per-segment start (t, u, sig, sigd)
        u, sig, sigd = self.u0, self._sigma0, self._sigmad0
        starts = [(0.0, u, sig, sigd)]
        acc = 0.0
        for dur, j in zip(self.seg_durs, self.seg_jerks):
            u, sig, sigd = _kernels.advance_state(u, sig, sigd, float(dur), float(j))
            acc += float(dur)
            starts.append((acc, u, sig, sigd))
        self._starts = starts
        self.duration = acc
        self.u_end = min(u, self.reference.duration)
        self.goal = reference._sample_raw(reference.start_time + self.u_end)[0]

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def u_advance(self) -> float:
        """Local reference-time consumed before standstill."""
        return self._starts[-1][1] - self.u0

    def _path_state_at(self, h: float):
        """(u, sig, sigd) of the rate profile at local time h in [0, dur]."""
        t0, u, sig, sigd = self._starts[0]
        for i in range(len(self.seg_durs)):
            t_next = self._starts[i + 1][0]
            if h <= t_next or i == len(self.seg_durs) - 1:
                t0, u, sig, sigd = self._starts[i]
                return _kernels.advance_state(u, sig, sigd, h - t0,
                                              float(self.seg_jerks[i]))
        return u, sig, sigd

    def _sample_raw(self, t: float):
        if self.duration == 0.0 or t >= self.end_time:
            z = np.zeros(self.n_joints)
            return self.goal.copy(), z, z.copy()
        h = t - self.start_time
        if h < 0.0:
            h = 0.0
        u, sig, sigd = self._path_state_at(h)
        sig = max(sig, 0.0)
        ref = self.reference
        if u >= ref.duration:
            z = np.zeros(self.n_joints)
            return ref.goal.copy(), z, z.copy()
        q, v, a = ref._sample_raw(ref.start_time + u)
        return q, v * sig, a * sig * sig + v * sigd

    def sample(self, t: float) -> JointState:
        return JointState._wrap(*self._sample_raw(t))

    def sample_many(self, ts):
        qs, vs, accs = [], [], []
        for t in np.asarray(ts, dtype=np.float64):
            q, v, a = self._sample_raw(float(t))
            qs.append(q)
            vs.append(v)
            accs.append(a)
        return np.array(qs), np.array(vs), np.array(accs)

    def positions_at(self, ts) -> np.ndarray:
        return self.sample_many(ts)[0]

    def path_parameter_at(self, t: float) -> float:
        """Normalized path parameter of the sampled point (for audits)."""
        h = min(max(t - self.start_time, 0.0), self.duration)
        if self.duration == 0.0:
            u = self.u0
        else:
            u = self._path_state_at(h)[0]
        if self.reference.duration == 0.0:
            return 1.0
        return min(u / self.reference.duration, 1.0)


_FEAS_TOL = 1e-6


def plan_intended(start: JointState, goal, limits: LimitSet,
                  start_time: float = 0.0) -> JointTrajectory:
    """Plan a time-synchronized trajectory from `start` to rest at `goal`.

    Every joint gets a seven-segment jerk-limited profile; faster joints are
    slowed by scaling their limits until all durations agree (a terminal dwell
    absorbs the residual, so durations match bit-exactly).

    Raises InfeasibleStart if the start state cannot be continued within the
    limits (out-of-range velocity/acceleration, or an acceleration that would
    force the velocity past its bound).
    """
    goal = np.atleast_1d(np.asarray(goal, dtype=np.float64))
    n = start.n_joints
    if goal.shape != (n,):
        raise ValueError("goal length must match joint count")
    if not np.all(np.isfinite(goal)):
        raise ValueError("goal must be finite")
    for i in range(n):
        if not _kernels.start_feasible(start.qd[i], start.qdd[i], limits.v_max,
                                       limits.a_max, limits.j_max, _FEAS_TOL):
            raise InfeasibleStart(
                f"joint {i} state (qd={start.qd[i]:.4f}, qdd={start.qdd[i]:.4f}) "
                f"cannot be continued within limits {limits}")

    durs = np.zeros((n, MAX_SEGMENTS))
    jerks = np.zeros((n, MAX_SEGMENTS))
    totals = np.zeros(n)
    for i in range(n):
        totals[i] = _kernels.plan_joint(
            start.q[i], start.qd[i], start.qdd[i], goal[i],
            limits.v_max, limits.a_max, limits.j_max, durs[i], jerks[i],
            _kernels._VC_ITERS)
    t_sync = float(np.max(totals)) if n else 0.0

    for i in range(n):
        if totals[i] < t_sync - 1e-12:
            totals[i] = _kernels.stretch_joint(
                start.q[i], start.qd[i], start.qdd[i], goal[i],
                limits.v_max, limits.a_max, limits.j_max, t_sync,
                durs[i], jerks[i])
        # exact terminal dwell: all joints share one duration bit-exactly
        # (plan_joint fills at most 7 slots; the last slot is dwell-reserved)
        dwell = t_sync - totals[i]
        if dwell > 0.0:
            nonzero = np.nonzero(durs[i])[0]
            slot = int(nonzero[-1]) + 1 if nonzero.size else 0
            durs[i, slot] = dwell
            jerks[i, slot] = 0.0

    seg_q0 = np.zeros((n, MAX_SEGMENTS))
    seg_v0 = np.zeros((n, MAX_SEGMENTS))
    seg_a0 = np.zeros((n, MAX_SEGMENTS))
    _kernels.build_profile_states(durs, jerks, start.q, start.qd, start.qdd,
                                  seg_q0, seg_v0, seg_a0)
    return JointTrajectory(start_time, t_sync, goal, durs, jerks,
                           seg_q0, seg_v0, seg_a0, limits)


def plan_failsafe(intended: JointTrajectory, at: PathState,
                  fs_limits: LimitSet) -> PathDecelTrajectory:
    """Plan a path-consistent stop of `intended` from path state `at`.

    The path rate is ramped to zero with a jerk-limited profile whose bounds
    are derived from the failsafe limits and the exact velocity/acceleration/
    jerk suprema of the intended trajectory over the braking window, so the
    composed joint motion never exceeds the failsafe limits.  Never fails: a
    stop always exists.
    """
    t_ref = intended.duration
    u0 = at.s * t_ref
    sigma0 = at.sd * t_ref
    sigmad0 = min(at.sdd * t_ref, 0.0)  # nominal execution has zero path accel
    start_time = intended.start_time + u0

    if t_ref == 0.0 or (sigma0 <= 1e-12 and abs(sigmad0) <= 1e-12):
        return PathDecelTrajectory(intended, start_time, u0, 0.0, 0.0,
                                   np.zeros(0), np.zeros(0), fs_limits)

    def ramp_for_window(u_hi):
        v_w, a_w, j_w = intended.abs_bounds_over_window(u0, u_hi)
        v_f = max(v_w, 1e-6)
        a_budget = fs_limits.a_max - a_w * sigma0 * sigma0
        if a_budget <= 0.0:
            raise ValueError("failsafe acceleration limit below the intended "
                             "trajectory's own acceleration")
        a_sigma = a_budget / v_f
        j_budget = fs_limits.j_max - j_w * sigma0 ** 3
        if j_budget <= 0.0:
            raise ValueError("failsafe jerk limit below the intended "
                             "trajectory's own jerk")
        if a_w * sigma0 > 0.0:
            # cap the path deceleration so the cross term eats at most half
            # of the jerk budget, leaving room for the path jerk itself
            a_sigma = min(a_sigma, 0.5 * j_budget / (3.0 * a_w * sigma0))
        j_sigma = (fs_limits.j_max - j_w * sigma0 ** 3
                   - 3.0 * a_w * sigma0 * a_sigma) / v_f
        t1, j1, t2, j2, t3, j3 = _kernels.velocity_ramp(
            sigma0, sigmad0, 0.0, a_sigma, j_sigma)
        du, dur, _, _ = _kernels.ramp_integral(sigma0, sigmad0, 0.0,
                                               a_sigma, j_sigma)
        return np.array([t1, t2, t3]), np.array([j1, j2, j3]), du

    # conservative first pass over the whole remaining path, then tighten the
    # window to the portion actually visited (the tighter limits brake harder,
    # so the visited window only shrinks and the bounds stay valid)
    _, _, du = ramp_for_window(t_ref)
    durs, jerks, _ = ramp_for_window(min(t_ref, u0 + du))
    return PathDecelTrajectory(intended, start_time, u0, sigma0, sigmad0,
                               durs, jerks, fs_limits)


def stopping_horizon(intended: JointTrajectory, at: PathState,
                     fs_limits: LimitSet, dt: float) -> int:
    """Number of dt ticks needed to reach a complete stop from `at`."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    duration = plan_failsafe(intended, at, fs_limits).duration
    return int(math.ceil(duration / dt))
