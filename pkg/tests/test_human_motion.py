"""Motion sources: file validation, playback determinism, speed bounds."""
from pathlib import Path

import numpy as np
import pytest

from safemanip.human_motion import (
    AdversarialHuman,
    MotionFileError,
    MotionPlayback,
    NoHuman,
)

MOTION = (Path(__file__).resolve().parents[1] / "src" / "safemanip"
          / "configs" / "motions" / "walk_to_table.csv")


def test_bundled_trace_loads_with_required_keypoints():
    pb = MotionPlayback(MOTION)
    for kp in ("head", "wrist_l", "wrist_r", "pelvis"):
        assert kp in pb.keypoint_names
    assert pb.times[-1] > 15.0


def test_playback_interpolates_and_clamps():
    pb = MotionPlayback(MOTION)
    rng = np.random.default_rng(1)
    pb.reset(rng, offset_xy=(0.0, 0.0), offset_t=(0.0, 0.0))
    before = pb.positions_at(-5.0)
    first = pb.positions_at(0.0)
    assert np.array_equal(before, first)
    late = pb.positions_at(1e4)
    last = pb.positions_at(pb.times[-1])
    assert np.array_equal(late, last)
    # interpolation lands between neighbors
    mid = pb.positions_at(0.5 * (pb.times[3] + pb.times[4]))
    lo = np.minimum(pb.positions[3], pb.positions[4])
    hi = np.maximum(pb.positions[3], pb.positions[4])
    assert np.all(mid >= lo - 1e-12) and np.all(mid <= hi + 1e-12)


def test_playback_offsets_shift_positions_and_time():
    pb = MotionPlayback(MOTION)
    rng = np.random.default_rng(2)
    pb.reset(rng, offset_xy=(-0.2, 0.2), offset_t=(0.0, 1.0))
    off = pb._offset.copy()
    t0 = pb._t0
    assert -0.2 <= off[0] <= 0.2 and -0.2 <= off[1] <= 0.2 and off[2] == 0
    assert 0.0 <= t0 <= 1.0
    base = MotionPlayback(MOTION)
    base.reset(np.random.default_rng(3), offset_xy=(0, 0), offset_t=(0, 0))
    assert np.allclose(pb.positions_at(2.0), base.positions_at(2.0 + t0) + off)


def test_playback_deterministic_under_seed():
    a = MotionPlayback(MOTION)
    b = MotionPlayback(MOTION)
    a.reset(np.random.default_rng(42), offset_xy=(-0.2, 0.2), offset_t=(0, 1))
    b.reset(np.random.default_rng(42), offset_xy=(-0.2, 0.2), offset_t=(0, 1))
    for t in (0.0, 1.7, 9.3):
        assert np.array_equal(a.positions_at(t), b.positions_at(t))


def test_playback_speed_within_bound():
    pb = MotionPlayback(MOTION, speed_bound=2.0)
    pb.reset(np.random.default_rng(5), offset_xy=(-0.2, 0.2), offset_t=(0, 1))
    dt = 0.004
    prev = pb.positions_at(0.0)
    for k in range(1, 4000):
        cur = pb.positions_at(k * dt)
        speed = np.linalg.norm(cur - prev, axis=1) / dt
        assert np.max(speed) <= 2.0 + 1e-9
        prev = cur


def test_too_fast_file_rejected(tmp_path):
    path = tmp_path / "fast.csv"
    path.write_text(
        "time,head_x,head_y,head_z\n"
        "0.0,0.0,0.0,1.7\n"
        "0.1,0.5,0.0,1.7\n")  # 5 m/s
    with pytest.raises(MotionFileError, match="exceeds the"):
        MotionPlayback(path)


def test_malformed_files_rejected(tmp_path):
    bad_header = tmp_path / "a.csv"
    bad_header.write_text("t,head_x,head_y,head_z\n0,0,0,0\n")
    with pytest.raises(MotionFileError):
        MotionPlayback(bad_header)
    bad_time = tmp_path / "b.csv"
    bad_time.write_text(
        "time,head_x,head_y,head_z\n0.0,0,0,0\n0.0,0,0,0\n")
    with pytest.raises(MotionFileError, match="strictly increasing"):
        MotionPlayback(bad_time)


def test_adversarial_chases_robot_within_speed_bound():
    adv = AdversarialHuman(anchor=[0.0, 0.0, 0.8], speed_bound=2.0)
    rng = np.random.default_rng(7)
    adv.reset(rng)
    ee = np.array([0.0, 0.0, 1.2])
    dt = 0.004
    prev = adv.positions_at(0.0, ee)
    d_prev = np.min(np.linalg.norm(prev - ee, axis=1))
    for k in range(1, 2000):
        cur = adv.positions_at(k * dt, ee)
        speed = np.linalg.norm(cur - prev, axis=1) / dt
        assert np.max(speed) <= 2.0 + 1e-9
        prev = cur
    d_final = np.min(np.linalg.norm(prev - ee, axis=1))
    assert d_final < d_prev  # it actually closed in


def test_adversarial_deterministic():
    mk = lambda seed: AdversarialHuman(anchor=[0, 0, 0.8])
    a, b = mk(0), mk(0)
    a.reset(np.random.default_rng(9))
    b.reset(np.random.default_rng(9))
    ee = np.array([0.1, 0.2, 1.0])
    for k in range(100):
        pa = a.positions_at(k * 0.004, ee)
        pb = b.positions_at(k * 0.004, ee)
        assert np.array_equal(pa, pb)


def test_no_human_source():
    src = NoHuman()
    src.reset(np.random.default_rng(0))
    assert src.positions_at(1.0).shape == (0, 3)
