"""Numpy implementations of the per-step simulation kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors every function
here with the same signature and the same floating point operation order.
"""

import numpy as np


def min_distances(points, frames):
    """Nearest frame distance for each query point.

    points: (..., P, 3), frames: (..., M, 3) with matching leading dims.
    Returns (..., P).
    """
    diff = points[..., :, None, :] - frames[..., None, :, :]
    sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    return np.sqrt(sq.min(axis=-1))


def grade_contacts(dist, eps):
    """Threshold, row-normalise and sum penetrations.

    dist: (N, F, K). Returns (pen, norm, quality, contact) where pen and norm
    are (N, F, K), quality is (N, F) and contact is a boolean (N, F).
    """
    pen = np.where(dist <= eps, dist, 0.0)
    rowmax = pen.max(axis=-1)
    safe = np.where(rowmax > 0.0, rowmax, 1.0)
    norm = pen / safe[..., None]
    quality = np.zeros(rowmax.shape)
    for j in range(norm.shape[-1]):
        quality = quality + norm[..., j]
    contact = rowmax > 0.0
    return pen, norm, quality, contact


def finger_forward(q, base, azimuth, joint_start, joint_count, links, cap):
    """Fingertip positions, last-link angles and tactile sensor points.

    q: (N, J) joint angles. base: (F, 3), azimuth: (F,), joint_start and
    joint_count: (F,) ints, links: (J,) link length after each joint (the
    yaw joint carries 0). cap: (K, 3) sensor coefficients along the pad
    normal, the last-link direction and the lateral direction.

    Returns tips (N, F, 3), sensors (N, F, K, 3), reach (N, F) planar reach.
    """
    n_env = q.shape[0]
    n_fing = base.shape[0]
    n_cap = cap.shape[0]
    tips = np.empty((n_env, n_fing, 3))
    sensors = np.empty((n_env, n_fing, n_cap, 3))
    reach = np.empty((n_env, n_fing))
    for f in range(n_fing):
        s = joint_start[f]
        c = joint_count[f]
        psi = azimuth[f] + q[:, s]
        a = np.zeros(n_env)
        x = np.zeros(n_env)
        z = np.zeros(n_env)
        for j in range(s + 1, s + c):
            a = a + q[:, j]
            x = x + links[j] * np.cos(a)
            z = z - links[j] * np.sin(a)
        cp = np.cos(psi)
        sp = np.sin(psi)
        ca = np.cos(a)
        sa = np.sin(a)
        tx = base[f, 0] + x * cp
        ty = base[f, 1] + x * sp
        tz = base[f, 2] + z
        tips[:, f, 0] = tx
        tips[:, f, 1] = ty
        tips[:, f, 2] = tz
        reach[:, f] = x
        # pad normal, link direction, lateral direction
        nx, ny, nz = -sa * cp, -sa * sp, -ca
        dx, dy, dz = ca * cp, ca * sp, -sa
        lx, ly = -sp, cp
        for k in range(n_cap):
            cn, cd, cl = cap[k, 0], cap[k, 1], cap[k, 2]
            sensors[:, f, k, 0] = tx + cn * nx + cd * dx + cl * lx
            sensors[:, f, k, 1] = ty + cn * ny + cd * dy + cl * ly
            sensors[:, f, k, 2] = tz + cn * nz + cd * dz
    return tips, sensors, reach


def step_lid(angle, rate, torque, friction, damping, inertia, dt):
    """Stick-slip integration of the lid's rotational degree of freedom.

    All array arguments are (N,). Returns new (angle, rate).
    """
    at_rest = rate == 0.0
    stick = at_rest & (np.abs(torque) <= friction)
    direction = np.where(at_rest, np.sign(torque), np.sign(rate))
    acc = (torque - damping * rate - friction * direction) / inertia
    new_rate = rate + dt * acc
    # friction may stop the lid but never reverses it
    crossed = (~at_rest) & (new_rate * rate <= 0.0)
    new_rate = np.where(crossed | stick, 0.0, new_rate)
    new_angle = angle + dt * new_rate
    return new_angle, new_rate
