"""Serial-chain kinematics and over-approximating swept link occupancy.

The chain is a sequence of revolute joints, each with a fixed origin
transform and a rotation axis, carrying one capsule-shaped link.  Swept
occupancy covers a trajectory window with per-interval capsule enclosures
padded for intra-interval motion, which is what the safety shield verifies
against the human reachable set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import _kernels
from .geometry import Capsule, OccupancySet, Segment


def rpy_matrix(r: float, p: float, y: float) -> np.ndarray:
    """Rotation matrix from roll/pitch/yaw (extrinsic x-y-z)."""
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def axis_angle_batch(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices for one axis and a batch of angles."""
    c = np.cos(angles)
    s = np.sin(angles)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    kk = np.outer(axis, axis)
    eye = np.eye(3)
    return (c[:, None, None] * eye[None, :, :]
            + s[:, None, None] * k[None, :, :]
            + (1.0 - c)[:, None, None] * kk[None, :, :])


@dataclass(frozen=True)
class JointSpec:
    axis: np.ndarray
    origin_rot: np.ndarray
    origin_xyz: np.ndarray
    limit_lo: float
    limit_hi: float


@dataclass(frozen=True)
class LinkSpec:
    cap_p1: np.ndarray
    cap_p2: np.ndarray
    radius: float


class KinematicChain:
    """Immutable chain definition with batched forward kinematics."""

    def __init__(self, joints: list[JointSpec], links: list[LinkSpec],
                 mount_rot: np.ndarray, mount_xyz: np.ndarray,
                 ee_offset: np.ndarray | None = None, name: str = "robot"):
        if len(joints) < 1:
            raise ValueError("chain needs at least one joint")
        if len(links) != len(joints):
            raise ValueError("one link per joint required")
        for j in joints:
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ValueError("joint axes must be unit norm")
            if not j.limit_lo < j.limit_hi:
                raise ValueError("joint limits must satisfy min < max")
        self.joints = joints
        self.links = links
        self.mount_rot = np.asarray(mount_rot, dtype=np.float64)
        self.mount_xyz = np.asarray(mount_xyz, dtype=np.float64)
        self.ee_offset = (np.asarray(ee_offset, dtype=np.float64)
                          if ee_offset is not None else links[-1].cap_p2.copy())
        self.name = name
        self.n_joints = len(joints)
        self.limits_lo = np.array([j.limit_lo for j in joints])
        self.limits_hi = np.array([j.limit_hi for j in joints])
        self._link_p1 = np.array([l.cap_p1 for l in links])
        self._link_p2 = np.array([l.cap_p2 for l in links])
        self.link_radii = np.array([l.radius for l in links])
        # packed arrays for the compiled kinematics kernel
        self._axes = np.array([j.axis for j in joints])
        self._orots = np.array([j.origin_rot for j in joints])
        self._oxyz = np.array([j.origin_xyz for j in joints])

    @staticmethod
    def from_config(path) -> "KinematicChain":
        """Load a chain from the YAML robot description.

        Schema: ``mount: {xyz, rpy}``, ``joints: [{axis, origin: {xyz, rpy},
        limit: {min, max}}]``, ``links: [{capsule: {p1, p2, radius}}]``,
        optional ``ee_offset``.  Angles in radians, lengths in meters.
        """
        path = Path(path)
        data = yaml.safe_load(path.read_text())
        joints = []
        for j in data["joints"]:
            origin = j.get("origin", {})
            joints.append(JointSpec(
                axis=np.asarray(j["axis"], dtype=np.float64),
                origin_rot=rpy_matrix(*origin.get("rpy", [0.0, 0.0, 0.0])),
                origin_xyz=np.asarray(origin.get("xyz", [0.0, 0.0, 0.0]),
                                      dtype=np.float64),
                limit_lo=float(j["limit"]["min"]),
                limit_hi=float(j["limit"]["max"]),
            ))
        links = []
        for l in data["links"]:
            cap = l["capsule"]
            links.append(LinkSpec(
                cap_p1=np.asarray(cap["p1"], dtype=np.float64),
                cap_p2=np.asarray(cap["p2"], dtype=np.float64),
                radius=float(cap["radius"]),
            ))
        mount = data.get("mount", {})
        return KinematicChain(
            joints, links,
            mount_rot=rpy_matrix(*mount.get("rpy", [0.0, 0.0, 0.0])),
            mount_xyz=np.asarray(mount.get("xyz", [0.0, 0.0, 0.0]),
                                 dtype=np.float64),
            ee_offset=(np.asarray(data["ee_offset"], dtype=np.float64)
                       if "ee_offset" in data else None),
            name=data.get("name", path.stem),
        )

    def fk_batch(self, q: np.ndarray):
        """Link poses for a batch of configurations.

        Returns (rots, pos): ``(M, L, 3, 3)`` world rotations and
        ``(M, L, 3)`` world origins of every link frame.
        """
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        m = q.shape[0]
        rots = np.empty((m, self.n_joints, 3, 3))
        pos = np.empty((m, self.n_joints, 3))
        r_prev = np.broadcast_to(self.mount_rot, (m, 3, 3))
        p_prev = np.broadcast_to(self.mount_xyz, (m, 3))
        for i, joint in enumerate(self.joints):
            p_i = p_prev + np.einsum("mij,j->mi", r_prev, joint.origin_xyz)
            r_fixed = np.einsum("mij,jk->mik", r_prev, joint.origin_rot)
            r_i = np.einsum("mij,mjk->mik", r_fixed,
                            axis_angle_batch(joint.axis, q[:, i]))
            rots[:, i] = r_i
            pos[:, i] = p_i
            r_prev, p_prev = r_i, p_i
        return rots, pos

    def forward_kinematics(self, q):
        """Single-configuration link poses plus end-effector position."""
        rots, pos = self.fk_batch(np.asarray(q, dtype=np.float64)[None, :])
        poses = [(rots[0, i], pos[0, i]) for i in range(self.n_joints)]
        ee = pos[0, -1] + rots[0, -1] @ self.ee_offset
        return poses, ee

    def ee_position(self, q) -> np.ndarray:
        rots, pos = self.fk_batch(np.asarray(q, dtype=np.float64)[None, :])
        return pos[0, -1] + rots[0, -1] @ self.ee_offset

    def link_capsule_points_batch(self, q: np.ndarray):
        """World capsule endpoints for a batch of configurations:
        ``(M, L, 3)`` arrays p1, p2."""
        q = np.atleast_2d(np.ascontiguousarray(q, dtype=np.float64))
        m = q.shape[0]
        p1 = np.empty((m, self.n_joints, 3))
        p2 = np.empty((m, self.n_joints, 3))
        _kernels.fk_capsule_points(q, self._axes, self._orots, self._oxyz,
                                   self.mount_rot, self.mount_xyz,
                                   self._link_p1, self._link_p2, p1, p2)
        return p1, p2

    def link_capsules(self, q) -> list[Capsule]:
        """World-frame link capsules at one configuration."""
        p1, p2 = self.link_capsule_points_batch(
            np.asarray(q, dtype=np.float64)[None, :])
        return [Capsule(Segment(p1[0, i], p2[0, i]), self.links[i].radius)
                for i in range(self.n_joints)]

    def conservative_link_speeds(self, qd_max) -> np.ndarray:
        """Upper bound on the Cartesian speed of any point of each link.

        Sums, over all ancestor joints, the joint speed bound times a reach
        bound (accumulated origin offsets plus the link capsule extent).
        Configuration-independent, so it can be computed once per chain.
        """
        qd_max = np.broadcast_to(np.asarray(qd_max, dtype=np.float64),
                                 (self.n_joints,))
        speeds = np.zeros(self.n_joints)
        for l in range(self.n_joints):
            extent = max(np.linalg.norm(self.links[l].cap_p1),
                         np.linalg.norm(self.links[l].cap_p2)) + self.links[l].radius
            for j in range(l + 1):
                reach = extent
                for i in range(j + 1, l + 1):
                    reach += np.linalg.norm(self.joints[i].origin_xyz)
                speeds[l] += qd_max[j] * reach
        return speeds


def _point_segment_distance_batch(pts, a, b):
    """Distances from points (K, 3) to matching segments (K, 3)-(K, 3)."""
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    safe = np.where(dd > 1e-12, dd, 1.0)
    t = np.clip(np.einsum("ij,ij->i", pts - a, d) / safe, 0.0, 1.0)
    t = np.where(dd > 1e-12, t, 0.0)
    closest = a + t[:, None] * d
    return np.linalg.norm(pts - closest, axis=1)


def swept_occupancy(chain: KinematicChain, traj, t0: float, t1: float,
                    substep: float, pad_speeds=None) -> OccupancySet:
    """Capsules covering every link over the trajectory window [t0, t1].

    The window is split into intervals no longer than `substep`; each link
    contributes one enclosure of its endpoint-pose capsules per interval,
    inflated by ``pad_speed * interval / 4 + 1e-6`` to cover intra-interval
    curvature.  Capsules are ordered by (link index, interval index).
    """
    if substep <= 0:
        raise ValueError("substep must be positive")
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if pad_speeds is None:
        pad_speeds = chain.conservative_link_speeds(traj.limits.v_max)
    n_int = max(1, int(math.ceil((t1 - t0) / substep - 1e-12)))
    grid = np.linspace(t0, t1, n_int + 1)
    h = (t1 - t0) / n_int
    qs = traj.positions_at(grid)
    cp1, cp2 = chain.link_capsule_points_batch(qs)  # (M, L, 3)

    n_links = chain.n_joints
    a = 0.5 * (cp1[:-1] + cp1[1:])  # (n_int, L, 3) axis starts
    b = 0.5 * (cp2[:-1] + cp2[1:])
    a_flat = a.transpose(1, 0, 2).reshape(-1, 3)  # link-major ordering
    b_flat = b.transpose(1, 0, 2).reshape(-1, 3)

    def endpoint_dist(pts):
        flat = pts.transpose(1, 0, 2).reshape(-1, 3)
        return _point_segment_distance_batch(flat, a_flat, b_flat)

    d = np.maximum.reduce([
        endpoint_dist(cp1[:-1]), endpoint_dist(cp1[1:]),
        endpoint_dist(cp2[:-1]), endpoint_dist(cp2[1:]),
    ])
    pads = np.asarray(pad_speeds, dtype=np.float64) * h / 4.0 + 1e-6
    radii = (np.repeat(chain.link_radii, n_int)
             + d + np.repeat(pads, n_int))
    return OccupancySet(
        p1=a_flat, p2=b_flat, radii=radii, t_begin=t0, t_end=t1,
        link_index=np.repeat(np.arange(n_links), n_int),
        interval_index=np.tile(np.arange(n_int), n_links),
    )
