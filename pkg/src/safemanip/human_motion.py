"""Human motion sources for the simulator.

Playback interpolates a recorded keypoint file with a per-episode planar
offset and start-time shift.  The adversarial source steers all keypoints
toward the robot at a bounded speed.  Both enforce the normative keypoint
speed bound, which the reachable-occupancy computation relies on.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class MotionFileError(ValueError):
    """Malformed or bound-violating motion file."""


class MotionPlayback:
    """Keypoint animation from a CSV file.

    Format: header ``time,<kp>_x,<kp>_y,<kp>_z,...``; time strictly
    increasing (seconds), positions in meters.  Finite-difference keypoint
    speeds must respect `speed_bound`; files violating it are rejected since
    they would void the occupancy soundness argument.  Playback clamps to the
    first/last frame outside the recorded range.
    """

    def __init__(self, path, speed_bound: float = 2.0):
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(x) for x in row] for row in reader if row]
        if not rows:
            raise MotionFileError(f"{path}: no samples")
        if header[0] != "time":
            raise MotionFileError(f"{path}: first column must be 'time'")
        names = []
        for i in range(1, len(header), 3):
            triplet = header[i:i + 3]
            base = triplet[0][:-2]
            if [f"{base}_x", f"{base}_y", f"{base}_z"] != triplet:
                raise MotionFileError(f"{path}: bad keypoint columns {triplet}")
            names.append(base)
        data = np.asarray(rows, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise MotionFileError(f"{path}: non-finite values")
        self.times = data[:, 0]
        if np.any(np.diff(self.times) <= 0):
            raise MotionFileError(f"{path}: time must be strictly increasing")
        self.positions = data[:, 1:].reshape(len(rows), len(names), 3)
        self.keypoint_names = tuple(names)
        if len(self.times) > 1:
            speeds = (np.linalg.norm(np.diff(self.positions, axis=0), axis=2)
                      / np.diff(self.times)[:, None])
            worst = float(np.max(speeds))
            if worst > speed_bound + 1e-9:
                raise MotionFileError(
                    f"{path}: keypoint speed {worst:.3f} m/s exceeds the "
                    f"bound {speed_bound} m/s")
        self.speed_bound = speed_bound
        self._offset = np.zeros(3)
        self._t0 = 0.0

    def reset(self, rng: np.random.Generator, offset_xy=(0.0, 0.0),
              offset_t=(0.0, 0.0)):
        """Draw the episode's planar offset and animation start shift."""
        dx = rng.uniform(offset_xy[0], offset_xy[1])
        dy = rng.uniform(offset_xy[0], offset_xy[1])
        self._offset = np.array([dx, dy, 0.0])
        self._t0 = rng.uniform(offset_t[0], offset_t[1])

    def positions_at(self, t: float, robot_ee=None) -> np.ndarray:
        """Interpolated keypoints at sim time t (robot state unused)."""
        at = t + self._t0
        times = self.times
        if at <= times[0]:
            base = self.positions[0]
        elif at >= times[-1]:
            base = self.positions[-1]
        else:
            i = int(np.searchsorted(times, at, side="right")) - 1
            w = (at - times[i]) / (times[i + 1] - times[i])
            base = (1.0 - w) * self.positions[i] + w * self.positions[i + 1]
        return base + self._offset


class AdversarialHuman:
    """Synthetic worst-case human: every keypoint chases the robot.

    Keypoints spawn as a rough standing skeleton at a random bearing and
    close in on the end-effector at a per-episode speed strictly below the
    normative bound.  Stateful: must be queried at nondecreasing times.
    """

    SKELETON = {
        "head": (0.0, 0.0, 0.70), "neck": (0.0, 0.0, 0.55),
        "pelvis": (0.0, 0.0, 0.0),
        "shoulder_l": (-0.20, 0.0, 0.50), "shoulder_r": (0.20, 0.0, 0.50),
        "elbow_l": (-0.28, 0.12, 0.25), "elbow_r": (0.28, 0.12, 0.25),
        "wrist_l": (-0.25, 0.30, 0.10), "wrist_r": (0.25, 0.30, 0.10),
        "hip_l": (-0.12, 0.0, -0.05), "hip_r": (0.12, 0.0, -0.05),
        "knee_l": (-0.12, 0.0, -0.50), "knee_r": (0.12, 0.0, -0.50),
        "ankle_l": (-0.12, 0.0, -0.90), "ankle_r": (0.12, 0.0, -0.90),
    }

    def __init__(self, anchor, speed_bound: float = 2.0,
                 spawn_distance=(1.2, 2.2), pelvis_height: float = 0.95):
        self.anchor = np.asarray(anchor, dtype=np.float64)
        self.speed_bound = speed_bound
        self.spawn_distance = spawn_distance
        self.pelvis_height = pelvis_height
        self.keypoint_names = tuple(self.SKELETON.keys())
        self._offsets = np.array([self.SKELETON[n] for n in self.keypoint_names])
        self._pts = None
        self._speed = 0.0
        self._last_t = 0.0

    def reset(self, rng: np.random.Generator, **_):
        bearing = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(*self.spawn_distance)
        pelvis = self.anchor + np.array([np.cos(bearing) * dist,
                                         np.sin(bearing) * dist,
                                         self.pelvis_height])
        self._pts = pelvis[None, :] + self._offsets
        # strictly below the bound so the occupancy assumption always holds
        self._speed = rng.uniform(0.6, 0.98) * self.speed_bound
        self._last_t = 0.0

    def positions_at(self, t: float, robot_ee=None) -> np.ndarray:
        if self._pts is None:
            raise RuntimeError("reset() must be called before playback")
        dt = t - self._last_t
        if dt < 0:
            raise ValueError("adversarial source requires nondecreasing time")
        self._last_t = t
        if dt == 0.0 or robot_ee is None:
            return self._pts.copy()
        # chase: each keypoint moves toward the end-effector plus its own
        # skeleton offset (scaled down so the body collapses onto the robot)
        targets = np.asarray(robot_ee)[None, :] + 0.3 * self._offsets
        delta = targets - self._pts
        dist = np.linalg.norm(delta, axis=1, keepdims=True)
        step = self._speed * dt
        scale = np.minimum(1.0, step / np.maximum(dist, 1e-12))
        self._pts = self._pts + delta * scale
        return self._pts.copy()


class NoHuman:
    """Absent human: an empty measurement every tick."""

    keypoint_names: tuple[str, ...] = ()

    def reset(self, rng, **_):
        pass

    def positions_at(self, t: float, robot_ee=None) -> np.ndarray:
        return np.zeros((0, 3))
