# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the per-step kernels in ``_pykernels``.

Operation order inside each expression follows the numpy versions so the two
backends agree bit-for-bit on distances and to rounding elsewhere.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, fabs

cnp.import_array()


def min_distances3(const double[:, :, ::1] points, const double[:, :, ::1] frames):
    cdef Py_ssize_t n_env = points.shape[0]
    cdef Py_ssize_t n_pts = points.shape[1]
    cdef Py_ssize_t n_frm = frames.shape[1]
    out_arr = np.empty((n_env, n_pts))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, p, m
    cdef double dx, dy, dz, sq, best
    for e in range(n_env):
        for p in range(n_pts):
            best = 0.0
            for m in range(n_frm):
                dx = points[e, p, 0] - frames[e, m, 0]
                dy = points[e, p, 1] - frames[e, m, 1]
                dz = points[e, p, 2] - frames[e, m, 2]
                sq = dx * dx + dy * dy + dz * dz
                if m == 0 or sq < best:
                    best = sq
            out[e, p] = sqrt(best)
    return out_arr


def grade_contacts(const double[:, :, ::1] dist, double eps):
    cdef Py_ssize_t n_env = dist.shape[0]
    cdef Py_ssize_t n_fing = dist.shape[1]
    cdef Py_ssize_t n_cap = dist.shape[2]
    pen_arr = np.zeros((n_env, n_fing, n_cap))
    norm_arr = np.zeros((n_env, n_fing, n_cap))
    qual_arr = np.zeros((n_env, n_fing))
    contact_arr = np.zeros((n_env, n_fing), dtype=bool)
    cdef double[:, :, ::1] pen = pen_arr
    cdef double[:, :, ::1] norm = norm_arr
    cdef double[:, ::1] qual = qual_arr
    cdef cnp.npy_bool[:, ::1] contact = contact_arr
    cdef Py_ssize_t e, f, k
    cdef double d, rowmax, total
    for e in range(n_env):
        for f in range(n_fing):
            rowmax = 0.0
            for k in range(n_cap):
                d = dist[e, f, k]
                if d <= eps:
                    pen[e, f, k] = d
                    if d > rowmax:
                        rowmax = d
            if rowmax > 0.0:
                total = 0.0
                for k in range(n_cap):
                    norm[e, f, k] = pen[e, f, k] / rowmax
                    total = total + norm[e, f, k]
                qual[e, f] = total
                contact[e, f] = True
    return pen_arr, norm_arr, qual_arr, contact_arr


def finger_forward(const double[:, ::1] q, const double[:, ::1] base, const double[::1] azimuth,
                   const long[::1] joint_start, const long[::1] joint_count,
                   const double[::1] links, const double[:, ::1] cap):
    cdef Py_ssize_t n_env = q.shape[0]
    cdef Py_ssize_t n_fing = base.shape[0]
    cdef Py_ssize_t n_cap = cap.shape[0]
    tips_arr = np.empty((n_env, n_fing, 3))
    sensors_arr = np.empty((n_env, n_fing, n_cap, 3))
    reach_arr = np.empty((n_env, n_fing))
    cdef double[:, :, ::1] tips = tips_arr
    cdef double[:, :, :, ::1] sensors = sensors_arr
    cdef double[:, ::1] reach = reach_arr
    cdef Py_ssize_t e, f, j, k, s, c
    cdef double psi, a, x, z, cp, sp, ca, sa, tx, ty, tz
    cdef double nx, ny, nz, dx, dy, dz, lx, ly, cn, cd, cl
    for e in range(n_env):
        for f in range(n_fing):
            s = joint_start[f]
            c = joint_count[f]
            psi = azimuth[f] + q[e, s]
            a = 0.0
            x = 0.0
            z = 0.0
            for j in range(s + 1, s + c):
                a = a + q[e, j]
                x = x + links[j] * cos(a)
                z = z - links[j] * sin(a)
            cp = cos(psi)
            sp = sin(psi)
            ca = cos(a)
            sa = sin(a)
            tx = base[f, 0] + x * cp
            ty = base[f, 1] + x * sp
            tz = base[f, 2] + z
            tips[e, f, 0] = tx
            tips[e, f, 1] = ty
            tips[e, f, 2] = tz
            reach[e, f] = x
            nx = -sa * cp
            ny = -sa * sp
            nz = -ca
            dx = ca * cp
            dy = ca * sp
            dz = -sa
            lx = -sp
            ly = cp
            for k in range(n_cap):
                cn = cap[k, 0]
                cd = cap[k, 1]
                cl = cap[k, 2]
                sensors[e, f, k, 0] = tx + cn * nx + cd * dx + cl * lx
                sensors[e, f, k, 1] = ty + cn * ny + cd * dy + cl * ly
                sensors[e, f, k, 2] = tz + cn * nz + cd * dz
    return tips_arr, sensors_arr, reach_arr


cdef inline double _sign(double v) nogil:
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


def step_lid(const double[::1] angle, const double[::1] rate, const double[::1] torque,
             const double[::1] friction, const double[::1] damping, const double[::1] inertia, double dt):
    cdef Py_ssize_t n = angle.shape[0]
    angle_arr = np.empty(n)
    rate_arr = np.empty(n)
    cdef double[::1] new_angle = angle_arr
    cdef double[::1] new_rate = rate_arr
    cdef Py_ssize_t e
    cdef double r, t, direction, acc, nr
    for e in range(n):
        r = rate[e]
        t = torque[e]
        if r == 0.0:
            direction = _sign(t)
        else:
            direction = _sign(r)
        acc = (t - damping[e] * r - friction[e] * direction) / inertia[e]
        nr = r + dt * acc
        if r == 0.0:
            if fabs(t) <= friction[e]:
                nr = 0.0
        elif nr * r <= 0.0:
            nr = 0.0
        new_rate[e] = nr
        new_angle[e] = angle[e] + dt * nr
    return angle_arr, rate_arr
