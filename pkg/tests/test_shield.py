"""Safety shield state machine: scenario simulations and verification."""
from pathlib import Path

import numpy as np
import pytest

from safemanip.geometry import (
    OccupancySet,
    capsules_intersect,
    occupancy_sets_min_distance,
)
from safemanip.human_reach import BodySpec, HumanMeasurement, HumanModel
from safemanip.robot_model import KinematicChain, swept_occupancy
from safemanip.shield import (
    ClockSkew,
    MotionCommand,
    OutOfJointLimits,
    SafetyShield,
    ShieldConfig,
    ShieldMode,
    verify,
)
from safemanip.trajectory import JointState, LimitSet, plan_intended

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "safemanip" / "configs"
DT = 0.004


def chain1():
    return KinematicChain.from_config(CONFIGS / "robot_1dof.yaml")


def chain6():
    return KinematicChain.from_config(CONFIGS / "robot_6dof.yaml")


def sphere_human_model(radius=0.1):
    return HumanModel([BodySpec("ball", "p", "p", radius)], meas_error=0.0)


def meas_at(t, pos):
    return HumanMeasurement(t, ("p",), np.array([pos]), error=0.0)


def empty_meas(t):
    return HumanMeasurement(t, (), np.zeros((0, 3)), error=0.0)


def make_shield(chain, model=None):
    shield = SafetyShield(chain, ShieldConfig(), human_model=model)
    return shield


def min_contact_distance(chain, q, model, positions):
    """True robot-human surface distance at one instant (audit-side)."""
    caps = chain.link_capsules(q)
    human = OccupancySet(p1=positions, p2=positions,
                         radii=model.radii, t_begin=0, t_end=0)
    robot = OccupancySet(p1=np.array([c.p1 for c in caps]),
                         p2=np.array([c.p2 for c in caps]),
                         radii=np.array([c.radius for c in caps]),
                         t_begin=0, t_end=0)
    return occupancy_sets_min_distance(robot, human)


def test_null_goal_verifies_trivially_no_human():
    shield = make_shield(chain1())
    shield.reset([0.5])
    shield.set_intermediate_goal([0.5])
    cmd = shield.tick(0.0, empty_meas(0.0))
    assert shield.mode is ShieldMode.FOLLOW_INTENDED
    assert cmd.branch == "intended"
    assert cmd.state.q[0] == 0.5 and cmd.state.qd[0] == 0.0


def test_no_goal_holds():
    shield = make_shield(chain1())
    shield.reset([0.0])
    cmd = shield.tick(0.0, empty_meas(0.0))
    assert cmd.branch == "hold"
    assert shield.mode is ShieldMode.STOPPED


def test_human_absent_follows_intended_exactly():
    shield = make_shield(chain1())
    shield.reset([0.0])
    shield.set_intermediate_goal([1.0])
    cmd = shield.tick(0.0, empty_meas(0.0))
    assert cmd.branch == "intended"
    ref = plan_intended(JointState.rest([0.0]), [1.0],
                        shield.cfg.traj_limits, start_time=0.0)
    expect = ref.sample(DT)
    assert np.allclose(cmd.state.q, expect.q, atol=1e-15)
    assert np.allclose(cmd.state.qd, expect.qd, atol=1e-15)


def test_goal_out_of_limits_rejected():
    shield = make_shield(chain1())
    shield.reset([0.0])
    with pytest.raises(OutOfJointLimits):
        shield.set_intermediate_goal([5.0])


def test_clock_skew_detected():
    shield = make_shield(chain1())
    shield.reset([0.0])
    shield.tick(0.0, empty_meas(0.0))
    with pytest.raises(ClockSkew):
        shield.tick(-DT, empty_meas(0.0))


def test_liveness_goal_attained_without_human():
    shield = make_shield(chain1())
    shield.reset([0.0])
    shield.set_intermediate_goal([1.2])
    t = 0.0
    for k in range(2000):
        cmd = shield.tick(t, empty_meas(t))
        t += DT
        if abs(cmd.state.q[0] - 1.2) < 1e-9 and cmd.state.qd[0] == 0.0:
            break
    else:
        pytest.fail("goal not attained in 8 s")
    assert k < 1500


def test_goal_replacement_switches_target():
    shield = make_shield(chain1())
    shield.reset([0.0])
    shield.set_intermediate_goal([1.0])
    t = 0.0
    for _ in range(50):
        shield.tick(t, empty_meas(t))
        t += DT
    shield.set_intermediate_goal([-0.5])
    shield.tick(t, empty_meas(t))
    assert np.array_equal(shield.current.goal, np.array([-0.5]))
    # and the robot eventually lands on the new goal
    for _ in range(2000):
        t += DT
        cmd = shield.tick(t, empty_meas(t))
    assert abs(cmd.state.q[0] + 0.5) < 1e-9


def run_blocked_goal(shield, model, block_pos, ticks=1500):
    """Drive toward a goal whose path is blocked by a static human ball."""
    records = []
    t = 0.0
    contacts_while_moving = 0
    for _ in range(ticks):
        cmd = shield.tick(t, meas_at(t, block_pos))
        d = min_contact_distance(shield.chain, cmd.state.q, model,
                                 np.array([block_pos]))
        if d <= 0 and np.any(np.abs(cmd.state.qd) > 0):
            contacts_while_moving += 1
        records.append((cmd.branch, shield.mode))
        t += DT
    return records, contacts_while_moving


def test_blocked_goal_brakes_and_holds():
    # 1-DoF link sweeps a circle at z ~ 1.05; park a human ball on the path
    ch = chain1()
    model = sphere_human_model(0.12)
    shield = SafetyShield(ch, ShieldConfig(), human_model=model)
    shield.reset([0.0])
    shield.set_intermediate_goal([1.6])
    block = np.array([np.cos(0.8) * 0.3, np.sin(0.8) * 0.3, 1.05])
    records, bad = run_blocked_goal(shield, model, block)
    assert bad == 0
    modes = [m for _, m in records]
    assert ShieldMode.FOLLOW_FAILSAFE in modes or ShieldMode.STOPPED in modes
    assert modes[-1] is ShieldMode.STOPPED  # braked, then held
    # the robot never reached the goal
    assert abs(shield.state.q[0] - 1.6) > 0.05
    # after the human leaves, the pending goal is attained
    t = len(records) * DT
    for _ in range(2500):
        cmd = shield.tick(t, meas_at(t, np.array([10.0, 10.0, 10.0])))
        t += DT
    assert abs(cmd.state.q[0] - 1.6) < 1e-9


def test_sprinting_human_contact_only_at_rest():
    # worst-case: a ball sprints straight at the link at the full speed bound
    ch = chain1()
    model = sphere_human_model(0.10)
    shield = SafetyShield(ch, ShieldConfig(), human_model=model)
    shield.reset([0.0])
    shield.set_intermediate_goal([2.5])
    target = np.array([0.35, 0.0, 1.05])  # a point on the link's home pose
    pos = np.array([0.35, 2.5, 1.05])
    speed = 2.0
    t = 0.0
    touched = False
    for _ in range(3000):
        cmd = shield.tick(t, meas_at(t, pos))
        d = min_contact_distance(ch, cmd.state.q, model, pos[None, :])
        if d <= 0:
            touched = True
            assert np.all(cmd.state.qd == 0.0), \
                f"contact while moving at t={t}: qd={cmd.state.qd}"
        t += DT
        step = speed * DT
        to_target = target - pos
        dist = np.linalg.norm(to_target)
        pos = target if dist <= step else pos + to_target / dist * step
    assert touched  # the scenario actually produced contact


def test_stopped_robot_touched_stays_stopped():
    ch = chain1()
    model = sphere_human_model(0.15)
    shield = SafetyShield(ch, ShieldConfig(), human_model=model)
    shield.reset([0.0])
    # ball sits exactly on the link: any motion would be unsafe
    on_link = np.array([0.3, 0.0, 1.05])
    shield.set_intermediate_goal([1.5])
    t = 0.0
    for _ in range(300):
        cmd = shield.tick(t, meas_at(t, on_link))
        assert np.all(cmd.state.qd == 0.0)
        assert np.all(cmd.state.q == 0.0)  # never moved at all
        t += DT
    assert shield.mode is ShieldMode.STOPPED


def test_verify_agrees_with_bruteforce_oracle():
    rng = np.random.default_rng(17)
    for _ in range(200):
        ka, kb = rng.integers(1, 8), rng.integers(1, 8)
        mk = lambda k: OccupancySet(
            p1=rng.uniform(-1, 1, (k, 3)), p2=rng.uniform(-1, 1, (k, 3)),
            radii=rng.uniform(0.05, 0.4, k), t_begin=0.0, t_end=1.0)
        a, b = mk(ka), mk(kb)
        want = True
        for ca in a.capsules:
            for cb in b.capsules:
                if capsules_intersect(ca, cb):
                    want = False
        assert verify(a, b) == want


def test_hierarchical_check_matches_plain_verify():
    # the shield's fast path must compute exactly the contract-level boolean
    ch = chain6()
    model = sphere_human_model(0.12)
    shield = SafetyShield(ch, ShieldConfig(), human_model=model)
    rng = np.random.default_rng(23)
    mismatch = 0
    for _ in range(120):
        q0 = rng.uniform(ch.limits_lo, ch.limits_hi) * 0.5
        goal = rng.uniform(ch.limits_lo, ch.limits_hi) * 0.5
        traj = plan_intended(JointState.rest(q0), goal,
                             shield.cfg.traj_limits, start_time=0.0)
        pos = rng.uniform([-1, -1, 0.3], [1, 1, 1.8])
        meas = meas_at(0.0, pos)
        horizon = rng.uniform(0.01, 0.3)
        u_hi = min(horizon, max(traj.duration, 1e-3))
        shield.reset(q0)
        fast = shield._verified_against(traj, 0.0, u_hi, meas, horizon)
        occ = swept_occupancy(ch, traj, 0.0, u_hi, shield.cfg.occupancy_substep,
                              pad_speeds=shield.pad_speeds)
        from safemanip.human_reach import reachable_occupancy
        human = reachable_occupancy(model, meas, horizon)
        slow = verify(occ, human)
        assert fast == slow
        mismatch += int(not slow)
    assert mismatch > 10  # the fuzz actually exercised both outcomes


def test_tick_determinism():
    def run():
        ch = chain6()
        model = sphere_human_model(0.1)
        shield = SafetyShield(ch, ShieldConfig(), human_model=model)
        shield.reset(np.zeros(6))
        shield.set_intermediate_goal(np.full(6, 0.4))
        t = 0.0
        out = []
        pos = np.array([0.4, 0.8, 1.0])
        for k in range(200):
            cmd = shield.tick(t, meas_at(t, pos))
            out.append(cmd.state.q.copy())
            t += DT
            pos = pos + np.array([0.0, -0.002, 0.0])
        return np.array(out)

    a, b = run(), run()
    assert np.array_equal(a, b)
