#!/usr/bin/env python3
"""Generate the bundled walk-to-table keypoint trace.

A person walks to the work table, leans in, runs a wrenching motion over the
tabletop for ten seconds, then leaves.  All keypoint speeds stay strictly
below 2 m/s so the trace is admissible under the occupancy speed bound.

Writes src/safemanip/configs/motions/walk_to_table.csv (25 Hz, ~22 s).
"""
import csv
from pathlib import Path

import numpy as np

RATE = 25.0
KEYPOINTS = [
    "head", "neck", "pelvis",
    "shoulder_l", "shoulder_r", "elbow_l", "elbow_r", "wrist_l", "wrist_r",
    "hip_l", "hip_r", "knee_l", "knee_r", "ankle_l", "ankle_r",
]

WALK_START_Y = 2.8
STAND_Y = 0.85
WALK_X = 0.15
T_ARRIVE = 4.0
T_LEAN = 6.0
T_WRENCH_END = 16.0
T_RETRACT = 18.0
T_END = 22.0


def smoothstep(a, b, t):
    if t <= a:
        return 0.0
    if t >= b:
        return 1.0
    x = (t - a) / (b - a)
    return x * x * (3 - 2 * x)


def pose_at(t):
    walk = smoothstep(0.0, T_ARRIVE, t)
    leave = smoothstep(T_RETRACT, T_END, t)
    pelvis_y = WALK_START_Y + (STAND_Y - WALK_START_Y) * walk \
        + (WALK_START_Y - STAND_Y) * leave
    stride_amp = (smoothstep(0.2, 1.0, t) * (1.0 - smoothstep(T_ARRIVE - 1.2, T_ARRIVE - 0.2, t))
                  + smoothstep(T_RETRACT + 0.2, T_RETRACT + 1.0, t)
                  * (1.0 - smoothstep(T_END - 1.2, T_END - 0.2, t)))
    stride = stride_amp * np.sin(2 * np.pi * 1.0 * t)
    bob = 0.02 * stride_amp * np.sin(2 * np.pi * 2.0 * t)

    lean = smoothstep(T_ARRIVE, T_LEAN, t) - smoothstep(T_WRENCH_END, T_RETRACT, t)
    wrench_on = smoothstep(T_LEAN - 1.5, T_LEAN, t) - smoothstep(
        T_WRENCH_END - 1.5, T_WRENCH_END, t)

    pelvis = np.array([WALK_X, pelvis_y, 0.95 + bob])
    lean_dy = -0.12 * lean
    lean_dz = -0.06 * lean
    neck = pelvis + np.array([0.0, lean_dy, 0.50 + lean_dz])
    head = neck + np.array([0.0, -0.05 * lean, 0.15])
    sh_l = neck + np.array([-0.20, 0.0, -0.03])
    sh_r = neck + np.array([+0.20, 0.0, -0.03])

    # wrenching: wrists circle over the tabletop, elbows follow halfway
    phase = 2 * np.pi * 0.625 * t  # 1.6 s period
    reach_y = 0.38 + 0.05 * np.sin(phase * 0.5)
    wr_l_work = np.array([WALK_X - 0.10 + 0.12 * np.cos(phase),
                          reach_y + 0.10 * np.sin(phase), 0.95])
    wr_r_work = np.array([WALK_X + 0.15 + 0.12 * np.cos(phase + np.pi / 3),
                          reach_y + 0.10 * np.sin(phase + np.pi / 3), 0.92])
    swing = 0.12 * stride
    wr_l_rest = sh_l + np.array([0.0, -swing, -0.55])
    wr_r_rest = sh_r + np.array([0.0, +swing, -0.55])
    wrist_l = wr_l_rest + (wr_l_work - wr_l_rest) * wrench_on
    wrist_r = wr_r_rest + (wr_r_work - wr_r_rest) * wrench_on
    elbow_l = sh_l + 0.45 * (wrist_l - sh_l) + np.array([0.0, 0.05, -0.08])
    elbow_r = sh_r + 0.45 * (wrist_r - sh_r) + np.array([0.0, 0.05, -0.08])

    hip_l = pelvis + np.array([-0.12, 0.0, -0.05])
    hip_r = pelvis + np.array([+0.12, 0.0, -0.05])
    step_l = 0.15 * stride
    step_r = -0.15 * stride
    knee_l = hip_l + np.array([0.0, step_l * 0.6, -0.45])
    knee_r = hip_r + np.array([0.0, step_r * 0.6, -0.45])
    ankle_l = knee_l + np.array([0.0, step_l * 0.4, -0.42])
    ankle_r = knee_r + np.array([0.0, step_r * 0.4, -0.42])

    return {
        "head": head, "neck": neck, "pelvis": pelvis,
        "shoulder_l": sh_l, "shoulder_r": sh_r,
        "elbow_l": elbow_l, "elbow_r": elbow_r,
        "wrist_l": wrist_l, "wrist_r": wrist_r,
        "hip_l": hip_l, "hip_r": hip_r,
        "knee_l": knee_l, "knee_r": knee_r,
        "ankle_l": ankle_l, "ankle_r": ankle_r,
    }


def main():
    out = (Path(__file__).resolve().parents[1] / "src" / "safemanip"
           / "configs" / "motions" / "walk_to_table.csv")
    times = np.arange(0.0, T_END + 1e-9, 1.0 / RATE)
    frames = [pose_at(t) for t in times]

    # verify the speed bound before writing
    worst = 0.0
    for a, b in zip(frames, frames[1:]):
        for kp in KEYPOINTS:
            v = np.linalg.norm(b[kp] - a[kp]) * RATE
            worst = max(worst, v)
    assert worst < 1.9, f"trace too fast: {worst:.2f} m/s"

    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["time"]
        for kp in KEYPOINTS:
            header += [f"{kp}_x", f"{kp}_y", f"{kp}_z"]
        writer.writerow(header)
        for t, frame in zip(times, frames):
            row = [f"{t:.4f}"]
            for kp in KEYPOINTS:
                row += [f"{c:.5f}" for c in frame[kp]]
            writer.writerow(row)
    print(f"wrote {out} ({len(times)} frames, peak speed {worst:.2f} m/s)")


if __name__ == "__main__":
    main()
