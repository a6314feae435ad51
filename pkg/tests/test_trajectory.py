"""Trajectory planning against numerical-integration oracles."""
import numpy as np
import pytest

from safemanip.trajectory import (
    InfeasibleStart,
    JointState,
    LimitSet,
    PathState,
    plan_failsafe,
    plan_intended,
    stopping_horizon,
)

TRAJ = LimitSet(v_max=2.0, a_max=2.0, j_max=15.0)
FAILSAFE = LimitSet(v_max=2.0, a_max=10.0, j_max=400.0)


def integrate_trajectory(traj, dt=1e-5):
    """Oracle: re-integrate the piecewise-constant jerk signal step by step.

    Independent of the closed-form sampler: only reads the stored segment
    jerks/durations and advances (q, v, a) with the cubic update per step.
    """
    n = traj.n_joints
    q = traj.seg_q0[:, 0].copy()
    v = traj.seg_v0[:, 0].copy()
    a = traj.seg_a0[:, 0].copy()
    max_v = np.abs(v).copy()
    max_a = np.abs(a).copy()
    max_j = np.zeros(n)
    for i in range(n):
        qi, vi, ai = q[i], v[i], a[i]
        for dur, jerk in zip(traj.seg_durs[i], traj.seg_jerks[i]):
            if dur <= 0:
                continue
            steps = int(np.ceil(dur / dt))
            h = dur / steps
            for _ in range(steps):
                qi = qi + vi * h + 0.5 * ai * h * h + jerk * h ** 3 / 6.0
                vi = vi + ai * h + 0.5 * jerk * h * h
                ai = ai + jerk * h
                max_v[i] = max(max_v[i], abs(vi))
                max_a[i] = max(max_a[i], abs(ai))
            max_j[i] = max(max_j[i], abs(jerk))
        q[i], v[i], a[i] = qi, vi, ai
    return q, v, a, max_v, max_a, max_j


def test_null_motion():
    start = JointState.rest([0.3])
    traj = plan_intended(start, [0.3], TRAJ)
    assert traj.duration == 0.0
    st = traj.sample(0.0)
    assert st.q[0] == 0.3 and st.qd[0] == 0.0 and st.qdd[0] == 0.0


def test_single_joint_short_move_integration_oracle():
    start = JointState.rest([0.0])
    traj = plan_intended(start, [0.4], TRAJ)
    q, v, a, max_v, max_a, max_j = integrate_trajectory(traj)
    assert abs(q[0] - 0.4) < 1e-6
    assert abs(v[0]) < 1e-6 and abs(a[0]) < 1e-6
    assert max_v[0] <= 2.0 + 1e-6
    assert max_a[0] <= 2.0 + 1e-6
    assert max_j[0] <= 15.0 + 1e-9


def test_sample_reproduces_start_exactly():
    rng = np.random.default_rng(3)
    for _ in range(50):
        q0 = rng.uniform(-2, 2, 3)
        v0 = rng.uniform(-1.5, 1.5, 3)
        a0 = rng.uniform(-1.5, 1.5, 3)
        # keep the start consistent with the velocity bound
        v0 = np.clip(v0, -2 + np.abs(a0) ** 2 / 30, 2 - np.abs(a0) ** 2 / 30)
        start = JointState(q0, v0, a0)
        traj = plan_intended(start, rng.uniform(-2, 2, 3), TRAJ, start_time=5.0)
        st = traj.sample(5.0)
        assert np.array_equal(st.q, q0)
        assert np.array_equal(st.qd, v0)
        assert np.array_equal(st.qdd, a0)


def test_sample_beyond_end_is_goal_at_rest():
    traj = plan_intended(JointState.rest([0.0, 1.0]), [1.0, -0.5], TRAJ)
    st = traj.sample(traj.end_time + 100.0)
    assert np.array_equal(st.q, np.array([1.0, -0.5]))
    assert np.all(st.qd == 0.0) and np.all(st.qdd == 0.0)
    end = traj.sample(traj.end_time)
    assert np.all(end.qd == 0.0) and np.all(end.qdd == 0.0)


def test_sample_finite_difference_consistency():
    traj = plan_intended(JointState.rest([0.0]), [1.2], TRAJ)
    ts = np.linspace(1e-3, traj.duration - 1e-3, 97)
    eps = 1e-6
    for t in ts:
        qm = traj.sample(t - eps).q[0]
        qp = traj.sample(t + eps).q[0]
        v_fd = (qp - qm) / (2 * eps)
        assert abs(v_fd - traj.sample(t).qd[0]) < 1e-4


def test_six_dof_synchronized_durations():
    rng = np.random.default_rng(5)
    for _ in range(25):
        start = JointState.rest(rng.uniform(-2, 2, 6))
        goal = rng.uniform(-2, 2, 6)
        traj = plan_intended(start, goal, TRAJ)
        # per-joint boundary sums are forced onto the shared duration
        totals = traj._bounds[:, -1]
        assert np.all(totals == traj.duration)
        q, v, a, *_ = integrate_trajectory(traj, dt=1e-4)
        assert np.max(np.abs(q - goal)) < 1e-5


def test_moving_start_reaches_goal_within_limits():
    rng = np.random.default_rng(9)
    for _ in range(40):
        n = rng.integers(1, 7)
        q0 = rng.uniform(-2, 2, n)
        a0 = rng.uniform(-1.8, 1.8, n)
        v_head = 2.0 - a0 ** 2 / (2 * 15.0) - 1e-3  # peak-velocity headroom
        v0 = rng.uniform(-1, 1, n) * v_head
        start = JointState(q0, v0, a0)
        goal = rng.uniform(-2.5, 2.5, n)
        traj = plan_intended(start, goal, TRAJ)
        q, v, a, max_v, max_a, max_j = integrate_trajectory(traj, dt=1e-4)
        assert np.max(np.abs(q - goal)) < 1e-5
        assert np.max(np.abs(v)) < 1e-5 and np.max(np.abs(a)) < 1e-5
        assert np.all(max_v <= 2.0 + 1e-6)
        assert np.all(max_a <= 2.0 + 1e-6)
        assert np.all(max_j <= 15.0 + 1e-9)


def test_limit_compliance_on_sampling_grid():
    rng = np.random.default_rng(21)
    for _ in range(20):
        start = JointState.rest(rng.uniform(-2, 2, 4))
        traj = plan_intended(start, rng.uniform(-2, 2, 4), TRAJ)
        if traj.duration == 0:
            continue
        ts = np.arange(0.0, traj.duration, 1e-4)
        q, v, a = traj.sample_many(ts)
        assert np.max(np.abs(v)) <= TRAJ.v_max + 1e-6
        assert np.max(np.abs(a)) <= TRAJ.a_max + 1e-6
        j_fd = np.diff(a, axis=0) / 1e-4
        assert np.max(np.abs(j_fd)) <= TRAJ.j_max + 1e-3


def test_infeasible_start_raises():
    with pytest.raises(InfeasibleStart):
        plan_intended(JointState([0.0], [2.5], [0.0]), [1.0], TRAJ)
    with pytest.raises(InfeasibleStart):
        plan_intended(JointState([0.0], [0.0], [5.0]), [1.0], TRAJ)
    # at the velocity bound with positive acceleration: any continuation
    # overshoots v_max, so the state is not plannable
    with pytest.raises(InfeasibleStart):
        plan_intended(JointState([0.0], [2.0], [1.0]), [1.0], TRAJ)


def test_determinism_bit_identical_segments():
    start = JointState([0.1, -0.2], [0.5, -0.3], [0.2, 0.1])
    a = plan_intended(start, [1.0, 0.5], TRAJ)
    b = plan_intended(start.copy(), np.array([1.0, 0.5]), TRAJ)
    assert np.array_equal(a.seg_durs, b.seg_durs)
    assert np.array_equal(a.seg_jerks, b.seg_jerks)


def cruise_trajectory(v_cruise=2.0, distance=4.0):
    """An intended trajectory that starts already cruising at `v_cruise`."""
    start = JointState([0.0], [v_cruise], [0.0])
    return plan_intended(start, [distance], TRAJ)


def test_failsafe_at_rest_is_trivial():
    traj = plan_intended(JointState.rest([0.0]), [1.0], TRAJ)
    fs = plan_failsafe(traj, PathState(1.0, 0.0, 0.0), FAILSAFE)
    assert fs.duration == 0.0
    assert stopping_horizon(traj, PathState(1.0, 0.0, 0.0), FAILSAFE, 0.004) == 0


def test_failsafe_stop_time_from_cruise_closed_form():
    # braking a 2 rad/s cruise at (a=10, j=400): trapezoidal deceleration,
    # stop time = v/a + a/j = 0.2 + 0.025 = 0.225 s
    traj = cruise_trajectory()
    at = traj.nominal_path_state(traj.start_time)  # start of the cruise
    fs = plan_failsafe(traj, at, FAILSAFE)
    assert fs.duration == pytest.approx(0.225, abs=1e-9)
    assert stopping_horizon(traj, at, FAILSAFE, 0.004) == 57

    # integration oracle on the composed joint motion
    ts = np.linspace(fs.start_time, fs.end_time, 2000)
    q, v, a = fs.sample_many(ts)
    assert abs(v[0, 0] - 2.0) < 1e-9
    assert abs(v[-1, 0]) < 1e-12
    assert np.max(np.abs(a)) <= 10.0 + 1e-6
    v_fd = np.diff(q[:, 0]) / np.diff(ts)
    assert np.max(np.abs(v_fd - 0.5 * (v[1:, 0] + v[:-1, 0]))) < 1e-4


def test_failsafe_respects_failsafe_limits_on_grid():
    rng = np.random.default_rng(33)
    for _ in range(30):
        start = JointState.rest(rng.uniform(-2, 2, 3))
        traj = plan_intended(start, rng.uniform(-2, 2, 3), TRAJ)
        if traj.duration == 0:
            continue
        s = rng.uniform(0.0, 0.95)
        fs = plan_failsafe(traj, PathState(s, 1.0 / traj.duration, 0.0), FAILSAFE)
        if fs.duration == 0:
            continue
        ts = np.linspace(fs.start_time, fs.end_time, 1500)
        q, v, a = fs.sample_many(ts)
        assert np.max(np.abs(v)) <= TRAJ.v_max + 1e-6
        assert np.max(np.abs(a)) <= FAILSAFE.a_max + 1e-6
        j_fd = np.abs(np.diff(a, axis=0) / np.diff(ts)[:, None])
        # ignore the one-sample spikes where the finite difference straddles
        # a segment boundary of either the ramp or the reference
        assert np.percentile(j_fd, 99) <= FAILSAFE.j_max + 1.0
        # terminal rest
        assert np.all(v[-1] == 0.0) and np.all(a[-1] == 0.0)


def test_failsafe_path_consistency():
    # every failsafe sample must lie on the intended geometric path
    rng = np.random.default_rng(41)
    for _ in range(20):
        start = JointState.rest(rng.uniform(-2, 2, 3))
        traj = plan_intended(start, rng.uniform(-2, 2, 3), TRAJ)
        if traj.duration == 0:
            continue
        s = rng.uniform(0.0, 0.9)
        fs = plan_failsafe(traj, PathState(s, 1.0 / traj.duration, 0.0), FAILSAFE)
        for t in np.linspace(fs.start_time, fs.end_time, 200):
            q_fs = fs.sample(t).q
            s_here = fs.path_parameter_at(t)
            q_ref = traj.sample(traj.start_time + s_here * traj.duration).q
            assert np.max(np.abs(q_fs - q_ref)) < 1e-9


def test_failsafe_never_overshoots_path_end():
    traj = cruise_trajectory(distance=0.5)
    # brake very close to the end of the path
    at = PathState(0.98, 1.0 / traj.duration, 0.0)
    fs = plan_failsafe(traj, at, FAILSAFE)
    for t in np.linspace(fs.start_time, fs.end_time + 0.1, 300):
        assert fs.path_parameter_at(t) <= 1.0 + 1e-12
    # the stop point lies on the reference path at the consumed parameter
    end = fs.sample(fs.end_time + 1.0)
    on_path = traj.sample(traj.start_time + fs.u_end).q
    assert np.all(np.abs(end.q - on_path) < 1e-12)


def test_failsafe_clamps_when_braking_runs_past_path_end():
    # a slow crawl right before the end: the braking window would extend past
    # the path end, so the stop clamps exactly onto the goal
    traj = plan_intended(JointState.rest([0.0]), [2.0], TRAJ)
    at = PathState(0.999, 1.0 / traj.duration, 0.0)
    fs = plan_failsafe(traj, at, FAILSAFE)
    end = fs.sample(fs.end_time + 1.0)
    assert fs.u_end <= traj.duration
    # the reference is itself nearly at rest there, so the stop point sits
    # within the reference's own remaining motion of the goal
    assert np.all(np.abs(end.q - traj.goal) < 1e-6)
    assert np.all(end.qd == 0.0)


def test_stopping_horizon_monotone_in_path_velocity():
    traj = cruise_trajectory()
    prev = -1
    for frac in np.linspace(0.05, 1.0, 12):
        sd = frac / traj.duration
        b = stopping_horizon(traj, PathState(0.0, sd, 0.0), FAILSAFE, 0.004)
        assert b >= prev
        prev = b


def test_random_plan_battery_limits_and_rest():
    # acceptance-scale battery lives in test_acceptance; this is a smoke slice
    rng = np.random.default_rng(55)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        start = JointState.rest(rng.uniform(-3, 3, n))
        goal = rng.uniform(-3, 3, n)
        traj = plan_intended(start, goal, TRAJ)
        ts = np.linspace(0, max(traj.duration, 1e-3), 400)
        q, v, a = traj.sample_many(ts)
        assert np.max(np.abs(v)) <= TRAJ.v_max + 1e-6
        assert np.max(np.abs(a)) <= TRAJ.a_max + 1e-6
        assert np.max(np.abs(q[-1] - goal)) < 1e-9
