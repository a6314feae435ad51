"""Scalar motion-profile kernels.

Pure float math, JIT-compiled with numba when available (the per-tick shield
budget needs it); falls back to plain Python with identical IEEE semantics.
All routines are deterministic: fixed iteration counts, no early exits that
depend on convergence tests.

A profile is a list of constant-jerk segments ``(duration, jerk)`` applied to
the state ``(q, v, a)``.  Position is cubic inside each segment.
"""
from __future__ import annotations

import math
import os

import numpy as np

MAX_SEGMENTS = 8  # 3 (entry ramp) + 1 (cruise) + 3 (exit ramp) + 1 (dwell)

_VC_ITERS = 90        # cruise-velocity bisection; bracket halves each iteration
_VC_SEARCH_ITERS = 40  # reduced depth inside the stretch search
_LAMBDA_ITERS = 32     # limit-scale bisection for duration stretching


def _identity_jit(*args, **kwargs):
    def wrap(f):
        return f
    return wrap


if os.environ.get("SAFEMANIP_NO_NUMBA"):
    njit = _identity_jit
else:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = _identity_jit


@njit(cache=True)
def advance_state(q, v, a, t, j):
    """Propagate (q, v, a) through one constant-jerk segment of length t."""
    q_n = q + v * t + 0.5 * a * t * t + j * t * t * t / 6.0
    v_n = v + a * t + 0.5 * j * t * t
    a_n = a + j * t
    return q_n, v_n, a_n


@njit(cache=True)
def velocity_ramp(v0, a0, v1, a_max, j_max):
    """Time-optimal jerk-limited velocity change (v0, a0) -> (v1, 0).

    Returns six scalars (t1, j1, t2, j2, t3, j3): ramp to peak acceleration,
    constant-acceleration hold, ramp back to zero.  Position is ignored here;
    callers integrate it with `advance_state`.
    """
    dv = v1 - v0
    dv_direct = a0 * abs(a0) / (2.0 * j_max)
    if dv >= dv_direct:
        a_pk = math.sqrt(max(j_max * dv + 0.5 * a0 * a0, 0.0))
        if a_pk > a_max:
            a_pk = a_max
        t1 = max((a_pk - a0) / j_max, 0.0)
        dv_bang = (2.0 * a_pk * a_pk - a0 * a0) / (2.0 * j_max)
        th = (dv - dv_bang) / a_pk if a_pk > 1e-15 else 0.0
        if th < 0.0:
            th = 0.0
        t3 = a_pk / j_max
        return t1, j_max, th, 0.0, t3, -j_max
    a_pk = -math.sqrt(max(0.5 * a0 * a0 - j_max * dv, 0.0))
    if a_pk < -a_max:
        a_pk = -a_max
    t1 = max((a0 - a_pk) / j_max, 0.0)
    dv_bang = (a0 * a0 - 2.0 * a_pk * a_pk) / (2.0 * j_max)
    th = (dv - dv_bang) / a_pk if a_pk < -1e-15 else 0.0
    if th < 0.0:
        th = 0.0
    t3 = -a_pk / j_max
    return t1, -j_max, th, 0.0, t3, j_max


@njit(cache=True)
def ramp_integral(v0, a0, v1, a_max, j_max):
    """Displacement, duration and end state of a velocity ramp."""
    t1, j1, t2, j2, t3, j3 = velocity_ramp(v0, a0, v1, a_max, j_max)
    q, v, a = 0.0, v0, a0
    q, v, a = advance_state(q, v, a, t1, j1)
    q, v, a = advance_state(q, v, a, t2, j2)
    q, v, a = advance_state(q, v, a, t3, j3)
    return q, t1 + t2 + t3, v, a


@njit(cache=True)
def _coverage(v0, a0, vc, a_max, j_max):
    """Displacement of ramp (v0,a0)->vc followed by ramp vc->rest."""
    d1, _, v_mid, a_mid = ramp_integral(v0, a0, vc, a_max, j_max)
    d2, _, _, _ = ramp_integral(v_mid, a_mid, 0.0, a_max, j_max)
    return d1 + d2


@njit(cache=True)
def plan_joint(q0, v0, a0, q1, v_max, a_max, j_max, durs, jerks, iters):
    """Plan one joint from (q0, v0, a0) to rest at q1 under the given limits.

    Seven-segment layout: entry velocity ramp to a cruise velocity, optional
    cruise, exit ramp to rest.  The cruise velocity is found by bisection on
    the covered displacement (`iters` halvings), which is continuous in the
    cruise velocity and brackets the target at the velocity-limit endpoints.

    Writes segments into `durs`/`jerks` (length MAX_SEGMENTS, zero-padded)
    and returns the total duration.
    """
    for i in range(MAX_SEGMENTS):
        durs[i] = 0.0
        jerks[i] = 0.0
    target = q1 - q0
    if abs(target) < 1e-15 and abs(v0) < 1e-15 and abs(a0) < 1e-15:
        return 0.0

    cover_hi = _coverage(v0, a0, v_max, a_max, j_max)
    cover_lo = _coverage(v0, a0, -v_max, a_max, j_max)
    if target >= cover_hi:
        vc = v_max
    elif target <= cover_lo:
        vc = -v_max
    else:
        lo = -v_max
        hi = v_max
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if _coverage(v0, a0, mid, a_max, j_max) <= target:
                lo = mid
            else:
                hi = mid
        vc = lo

    # assemble: entry ramp
    t1, j1, t2, j2, t3, j3 = velocity_ramp(v0, a0, vc, a_max, j_max)
    q, v, a = q0, v0, a0
    q, v, a = advance_state(q, v, a, t1, j1)
    q, v, a = advance_state(q, v, a, t2, j2)
    q, v, a = advance_state(q, v, a, t3, j3)
    durs[0] = t1
    jerks[0] = j1
    durs[1] = t2
    jerks[1] = j2
    durs[2] = t3
    jerks[2] = j3

    # cruise: cover the remaining displacement at the entry ramp's end velocity
    d_exit, _, _, _ = ramp_integral(v, a, 0.0, a_max, j_max)
    t_cruise = 0.0
    if abs(v) > 1e-12:
        t_cruise = (target - (q - q0) - d_exit) / v
        if t_cruise < 0.0:
            t_cruise = 0.0
    durs[3] = t_cruise
    jerks[3] = 0.0
    q, v, a = advance_state(q, v, a, t_cruise, 0.0)

    # exit ramp to rest
    t1, j1, t2, j2, t3, j3 = velocity_ramp(v, a, 0.0, a_max, j_max)
    durs[4] = t1
    jerks[4] = j1
    durs[5] = t2
    jerks[5] = j2
    durs[6] = t3
    jerks[6] = j3

    total = 0.0
    for i in range(MAX_SEGMENTS):
        total += durs[i]
    return total


@njit(cache=True)
def build_profile_states(durs, jerks, q0, v0, a0, seg_q0, seg_v0, seg_a0):
    """Fill per-segment start states for an (N, S) profile."""
    n, s = durs.shape
    for i in range(n):
        q, v, a = q0[i], v0[i], a0[i]
        for k in range(s):
            seg_q0[i, k] = q
            seg_v0[i, k] = v
            seg_a0[i, k] = a
            q, v, a = advance_state(q, v, a, durs[i, k], jerks[i, k])


@njit(cache=True)
def fk_capsule_points(qs, axes, orots, oxyz, mrot, mxyz, lp1, lp2, out1, out2):
    """World capsule endpoints for a batch of configurations.

    qs: (M, N) joint angles; axes: (N, 3) unit axes; orots/oxyz: fixed origin
    transforms; mrot/mxyz: mount pose; lp1/lp2: (N, 3) link-local endpoints.
    Writes (M, N, 3) world endpoints into out1/out2.
    """
    m, n = qs.shape
    r_prev = np.empty((3, 3))
    r_fix = np.empty((3, 3))
    r_joint = np.empty((3, 3))
    r_new = np.empty((3, 3))
    p_prev = np.empty(3)
    p_i = np.empty(3)
    for s in range(m):
        for r in range(3):
            for c in range(3):
                r_prev[r, c] = mrot[r, c]
            p_prev[r] = mxyz[r]
        for i in range(n):
            # p_i = p_prev + r_prev @ oxyz[i]
            for r in range(3):
                p_i[r] = (p_prev[r] + r_prev[r, 0] * oxyz[i, 0]
                          + r_prev[r, 1] * oxyz[i, 1] + r_prev[r, 2] * oxyz[i, 2])
            # r_fix = r_prev @ orots[i]
            for r in range(3):
                for c in range(3):
                    r_fix[r, c] = (r_prev[r, 0] * orots[i, 0, c]
                                   + r_prev[r, 1] * orots[i, 1, c]
                                   + r_prev[r, 2] * orots[i, 2, c])
            # r_joint = Rodrigues(axes[i], q)
            ca = math.cos(qs[s, i])
            sa = math.sin(qs[s, i])
            omc = 1.0 - ca
            ax = axes[i, 0]
            ay = axes[i, 1]
            az = axes[i, 2]
            r_joint[0, 0] = ca + ax * ax * omc
            r_joint[0, 1] = ax * ay * omc - az * sa
            r_joint[0, 2] = ax * az * omc + ay * sa
            r_joint[1, 0] = ay * ax * omc + az * sa
            r_joint[1, 1] = ca + ay * ay * omc
            r_joint[1, 2] = ay * az * omc - ax * sa
            r_joint[2, 0] = az * ax * omc - ay * sa
            r_joint[2, 1] = az * ay * omc + ax * sa
            r_joint[2, 2] = ca + az * az * omc
            # r_new = r_fix @ r_joint
            for r in range(3):
                for c in range(3):
                    r_new[r, c] = (r_fix[r, 0] * r_joint[0, c]
                                   + r_fix[r, 1] * r_joint[1, c]
                                   + r_fix[r, 2] * r_joint[2, c])
            for r in range(3):
                out1[s, i, r] = (p_i[r] + r_new[r, 0] * lp1[i, 0]
                                 + r_new[r, 1] * lp1[i, 1] + r_new[r, 2] * lp1[i, 2])
                out2[s, i, r] = (p_i[r] + r_new[r, 0] * lp2[i, 0]
                                 + r_new[r, 1] * lp2[i, 1] + r_new[r, 2] * lp2[i, 2])
                r_prev[r, 0] = r_new[r, 0]
                r_prev[r, 1] = r_new[r, 1]
                r_prev[r, 2] = r_new[r, 2]
                p_prev[r] = p_i[r]


@njit(cache=True, inline="always")
def _seg_seg_dist2(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz):
    """Squared distance between segments AB and CD (scalar, clamped)."""
    ux = bx - ax
    uy = by - ay
    uz = bz - az
    vx = dx - cx
    vy = dy - cy
    vz = dz - cz
    wx = ax - cx
    wy = ay - cy
    wz = az - cz
    aa = ux * ux + uy * uy + uz * uz
    bb = ux * vx + uy * vy + uz * vz
    cc = vx * vx + vy * vy + vz * vz
    dd = ux * wx + uy * wy + uz * wz
    ee = vx * wx + vy * wy + vz * wz
    den = aa * cc - bb * bb
    best = 1e300
    # interior critical point (non-parallel, non-degenerate only)
    if den > 1e-12:
        s = (bb * ee - cc * dd) / den
        t = (aa * ee - bb * dd) / den
        if 0.0 <= s <= 1.0 and 0.0 <= t <= 1.0:
            px = wx + s * ux - t * vx
            py = wy + s * uy - t * vy
            pz = wz + s * uz - t * vz
            best = px * px + py * py + pz * pz
    # four edges of the parameter square: fix one end, project the other
    for edge in range(4):
        if edge == 0:
            t = 0.0
            s = -dd / aa if aa > 1e-12 else 0.0
        elif edge == 1:
            t = 1.0
            s = (bb - dd) / aa if aa > 1e-12 else 0.0
        elif edge == 2:
            s = 0.0
            t = ee / cc if cc > 1e-12 else 0.0
        else:
            s = 1.0
            t = (ee + bb) / cc if cc > 1e-12 else 0.0
        s = min(1.0, max(0.0, s))
        t = min(1.0, max(0.0, t))
        px = wx + s * ux - t * vx
        py = wy + s * uy - t * vy
        pz = wz + s * uz - t * vz
        d2 = px * px + py * py + pz * pz
        if d2 < best:
            best = d2
    return best


@njit(cache=True)
def min_pair_margin(p1a, p2a, ra, p1b, p2b, rb):
    """Min over all pairs of (segment distance - radius sum)."""
    ka = p1a.shape[0]
    kb = p1b.shape[0]
    best = 1e300
    for i in range(ka):
        for j in range(kb):
            d2 = _seg_seg_dist2(
                p1a[i, 0], p1a[i, 1], p1a[i, 2], p2a[i, 0], p2a[i, 1], p2a[i, 2],
                p1b[j, 0], p1b[j, 1], p1b[j, 2], p2b[j, 0], p2b[j, 1], p2b[j, 2])
            m = math.sqrt(d2) - ra[i] - rb[j]
            if m < best:
                best = m
    return best


@njit(cache=True, inline="always")
def _point_box_dist(px, py, pz, cx, cy, cz, hx, hy, hz):
    ex = max(abs(px - cx) - hx, 0.0)
    ey = max(abs(py - cy) - hy, 0.0)
    ez = max(abs(pz - cz) - hz, 0.0)
    return math.sqrt(ex * ex + ey * ey + ez * ez)


@njit(cache=True)
def seg_box_distance(p1, p2, c, h):
    """Segment to axis-aligned box distance.

    dist(point, box) is convex along the segment; golden-section search
    localizes the minimum to machine precision.
    """
    invphi = 0.6180339887498949
    lo = 0.0
    hi = 1.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)

    def at(t):
        return _point_box_dist(p1[0] + t * (p2[0] - p1[0]),
                               p1[1] + t * (p2[1] - p1[1]),
                               p1[2] + t * (p2[2] - p1[2]),
                               c[0], c[1], c[2], h[0], h[1], h[2])

    f1 = at(x1)
    f2 = at(x2)
    for _ in range(80):
        if f1 <= f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - invphi * (hi - lo)
            f1 = at(x1)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + invphi * (hi - lo)
            f2 = at(x2)
    best = min(f1, f2)
    b0 = at(0.0)
    b1 = at(1.0)
    if b0 < best:
        best = b0
    if b1 < best:
        best = b1
    return best


@njit(cache=True)
def static_margin(cp1, cp2, radii, box_c, box_h, clearance, skip):
    """Clearance margin of link capsules vs the table box and the floor.

    Returns min over checked links of
    ``min(dist_to_box - radius - clearance, lowest_z - radius)``;
    a non-positive margin means static collision.
    """
    best = 1e300
    n = cp1.shape[0]
    for i in range(n):
        if skip[i]:
            continue
        d = seg_box_distance(cp1[i], cp2[i], box_c, box_h)
        m = d - radii[i] - clearance
        if m < best:
            best = m
        zfloor = min(cp1[i, 2], cp2[i, 2]) - radii[i]
        if zfloor < best:
            best = zfloor
    return best


@njit(cache=True)
def verify_window(cp1, cp2, link_radii, pads, hp1, hp2, hr):
    """Disjointness of swept link occupancy and the human set.

    cp1/cp2: (M, L, 3) link capsule endpoints on the window grid.  Checks a
    per-link bounding sphere first; on conflict, falls back to the exact
    per-interval enclosures (paired-midpoint axis, endpoint-covering radius
    plus pad) for that link only.  Equivalent to the pairwise test on the
    full fine set.
    """
    m, nl, _ = cp1.shape
    kh = hp1.shape[0]
    n_int = m - 1
    for l in range(nl):
        # bounding sphere of all endpoint samples of this link
        lox = 1e300
        loy = 1e300
        loz = 1e300
        hix = -1e300
        hiy = -1e300
        hiz = -1e300
        for s in range(m):
            for pt in range(2):
                x = cp1[s, l, 0] if pt == 0 else cp2[s, l, 0]
                y = cp1[s, l, 1] if pt == 0 else cp2[s, l, 1]
                z = cp1[s, l, 2] if pt == 0 else cp2[s, l, 2]
                lox = min(lox, x)
                loy = min(loy, y)
                loz = min(loz, z)
                hix = max(hix, x)
                hiy = max(hiy, y)
                hiz = max(hiz, z)
        ccx = 0.5 * (lox + hix)
        ccy = 0.5 * (loy + hiy)
        ccz = 0.5 * (loz + hiz)
        r2 = 0.0
        for s in range(m):
            for pt in range(2):
                x = cp1[s, l, 0] if pt == 0 else cp2[s, l, 0]
                y = cp1[s, l, 1] if pt == 0 else cp2[s, l, 1]
                z = cp1[s, l, 2] if pt == 0 else cp2[s, l, 2]
                d2 = (x - ccx) ** 2 + (y - ccy) ** 2 + (z - ccz) ** 2
                if d2 > r2:
                    r2 = d2
        sph_r = math.sqrt(r2) + link_radii[l] + pads[l]
        link_clear = True
        for j in range(kh):
            d2 = _seg_seg_dist2(ccx, ccy, ccz, ccx, ccy, ccz,
                                hp1[j, 0], hp1[j, 1], hp1[j, 2],
                                hp2[j, 0], hp2[j, 1], hp2[j, 2])
            if math.sqrt(d2) - sph_r - hr[j] <= 0.0:
                link_clear = False
                break
        if link_clear:
            continue
        # exact per-interval enclosures for this link
        for k in range(n_int):
            axx = 0.5 * (cp1[k, l, 0] + cp1[k + 1, l, 0])
            axy = 0.5 * (cp1[k, l, 1] + cp1[k + 1, l, 1])
            axz = 0.5 * (cp1[k, l, 2] + cp1[k + 1, l, 2])
            bxx = 0.5 * (cp2[k, l, 0] + cp2[k + 1, l, 0])
            bxy = 0.5 * (cp2[k, l, 1] + cp2[k + 1, l, 1])
            bxz = 0.5 * (cp2[k, l, 2] + cp2[k + 1, l, 2])
            rad = 0.0
            for src in range(4):
                if src == 0:
                    px = cp1[k, l, 0]
                    py = cp1[k, l, 1]
                    pz = cp1[k, l, 2]
                elif src == 1:
                    px = cp1[k + 1, l, 0]
                    py = cp1[k + 1, l, 1]
                    pz = cp1[k + 1, l, 2]
                elif src == 2:
                    px = cp2[k, l, 0]
                    py = cp2[k, l, 1]
                    pz = cp2[k, l, 2]
                else:
                    px = cp2[k + 1, l, 0]
                    py = cp2[k + 1, l, 1]
                    pz = cp2[k + 1, l, 2]
                d2 = _seg_seg_dist2(px, py, pz, px, py, pz,
                                    axx, axy, axz, bxx, bxy, bxz)
                d = math.sqrt(d2)
                if d > rad:
                    rad = d
            rad += link_radii[l] + pads[l]
            for j in range(kh):
                d2 = _seg_seg_dist2(axx, axy, axz, bxx, bxy, bxz,
                                    hp1[j, 0], hp1[j, 1], hp1[j, 2],
                                    hp2[j, 0], hp2[j, 1], hp2[j, 2])
                if math.sqrt(d2) - rad - hr[j] <= 0.0:
                    return False
    return True


@njit(cache=True)
def sample_profile(bounds, jerks, seg_q0, seg_v0, seg_a0, h, out_q, out_v, out_a):
    """Evaluate an (N, S)-segment profile at local time h (inside the span)."""
    n, s = jerks.shape
    for i in range(n):
        k = s - 1
        for kk in range(s):
            if bounds[i, kk + 1] > h:
                k = kk
                break
        dt = h - bounds[i, k]
        j = jerks[i, k]
        q0 = seg_q0[i, k]
        v0 = seg_v0[i, k]
        a0 = seg_a0[i, k]
        out_q[i] = q0 + v0 * dt + 0.5 * a0 * dt * dt + j * dt * dt * dt / 6.0
        out_v[i] = v0 + a0 * dt + 0.5 * j * dt * dt
        out_a[i] = a0 + j * dt


@njit(cache=True)
def sample_positions_grid(bounds, jerks, seg_q0, seg_v0, seg_a0, goal,
                          duration, hs, out):
    """Positions of an (N, S) profile at local times hs (clamped to span)."""
    m = hs.shape[0]
    n, s = jerks.shape
    for ti in range(m):
        h = hs[ti]
        if h >= duration or duration == 0.0:
            for i in range(n):
                out[ti, i] = goal[i]
            continue
        if h < 0.0:
            h = 0.0
        for i in range(n):
            k = s - 1
            for kk in range(s):
                if bounds[i, kk + 1] > h:
                    k = kk
                    break
            dt = h - bounds[i, k]
            out[ti, i] = (seg_q0[i, k] + seg_v0[i, k] * dt
                          + 0.5 * seg_a0[i, k] * dt * dt
                          + jerks[i, k] * dt * dt * dt / 6.0)


@njit(cache=True)
def window_bounds(bounds, durs, jerks, seg_v0, seg_a0, u_lo, u_hi):
    """Suprema of |v|, |a|, |jerk| over a local-time window of a profile."""
    n, s = jerks.shape
    v_w = 0.0
    a_w = 0.0
    j_w = 0.0
    for i in range(n):
        for k in range(s):
            dur = durs[i, k]
            if dur <= 0.0:
                continue
            start = bounds[i, k]
            if start >= u_hi or start + dur <= u_lo:
                continue
            h0 = min(max(u_lo - start, 0.0), dur)
            h1 = min(max(u_hi - start, 0.0), dur)
            j = jerks[i, k]
            v0 = seg_v0[i, k]
            a0 = seg_a0[i, k]
            a_h0 = a0 + j * h0
            a_h1 = a0 + j * h1
            aa = max(abs(a_h0), abs(a_h1))
            if aa > a_w:
                a_w = aa
            vv = max(abs(v0 + a0 * h0 + 0.5 * j * h0 * h0),
                     abs(v0 + a0 * h1 + 0.5 * j * h1 * h1))
            if j != 0.0:
                h_star = -a0 / j
                if h0 < h_star < h1:
                    v_star = v0 + a0 * h_star + 0.5 * j * h_star * h_star
                    if abs(v_star) > vv:
                        vv = abs(v_star)
            if vv > v_w:
                v_w = vv
            if abs(j) > j_w:
                j_w = abs(j)
    return v_w, a_w, j_w


@njit(cache=True)
def start_feasible(v0, a0, v_max, a_max, j_max, tol):
    """A start state is plannable iff inside limits and its minimum-peak
    velocity continuation (ramp the acceleration straight to zero) stays
    inside the velocity bound."""
    if abs(v0) > v_max + tol or abs(a0) > a_max + tol:
        return False
    v_peak = v0 + a0 * abs(a0) / (2.0 * j_max)
    return abs(v_peak) <= v_max + tol


@njit(cache=True)
def stretch_joint(q0, v0, a0, q1, v_max, a_max, j_max, t_target, durs, jerks):
    """Plan one joint, slowed to approach duration `t_target` from below.

    All three limits are scaled by a common factor found by bisection; scales
    that violate the start state are treated as infeasible.  The remaining
    gap to `t_target` is closed exactly by the caller with a terminal dwell.
    Returns the planned duration (<= t_target + tiny).

    The search runs at reduced bisection depth; the final plan repeats the
    winning scale at the same depth so the reported duration is consistent.
    """
    t_full = plan_joint(q0, v0, a0, q1, v_max, a_max, j_max, durs, jerks,
                        _VC_ITERS)
    if t_full >= t_target - 1e-12:
        return t_full
    if t_full == 0.0:
        # idle joint: the terminal dwell covers the whole span
        return 0.0
    lo = 0.0
    hi = 1.0
    for _ in range(_LAMBDA_ITERS):
        mid = 0.5 * (lo + hi)
        if not start_feasible(v0, a0, mid * v_max, mid * a_max, mid * j_max, 1e-12):
            lo = mid
            continue
        t_mid = plan_joint(q0, v0, a0, q1, mid * v_max, mid * a_max,
                           mid * j_max, durs, jerks, _VC_SEARCH_ITERS)
        if t_mid <= t_target:
            hi = mid
        else:
            lo = mid
    return plan_joint(q0, v0, a0, q1, hi * v_max, hi * a_max, hi * j_max,
                      durs, jerks, _VC_SEARCH_ITERS)
