"""Hot per-step kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set
``LIDTWIST_KERNELS=numpy`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "numpy"
_impl = _pykernels
if os.environ.get("LIDTWIST_KERNELS", "").lower() not in ("numpy", "python"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def available_backends():
    names = ["numpy"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name=None):
    """Return a namespace of kernel functions for ``name`` (default: active)."""
    if name is None:
        name = BACKEND
    if name == "numpy":
        return _PyNamespace
    if name == "cython":
        return _CNamespace
    raise ValueError(f"unknown kernel backend {name!r}")


class _PyNamespace:
    name = "numpy"
    min_distances = staticmethod(_pykernels.min_distances)
    grade_contacts = staticmethod(_pykernels.grade_contacts)
    finger_forward = staticmethod(_pykernels.finger_forward)
    step_lid = staticmethod(_pykernels.step_lid)


class _CNamespace:
    name = "cython"

    @staticmethod
    def min_distances(points, frames):
        from . import _ckernels

        points = np.ascontiguousarray(points, dtype=np.float64)
        frames = np.ascontiguousarray(frames, dtype=np.float64)
        if points.ndim == 2:
            return _ckernels.min_distances3(points[None], frames[None])[0]
        lead = points.shape[:-2]
        out = _ckernels.min_distances3(
            points.reshape(-1, *points.shape[-2:]), frames.reshape(-1, *frames.shape[-2:])
        )
        return out.reshape(*lead, points.shape[-2])

    @staticmethod
    def grade_contacts(dist, eps):
        from . import _ckernels

        return _ckernels.grade_contacts(np.ascontiguousarray(dist, dtype=np.float64), float(eps))

    @staticmethod
    def finger_forward(q, base, azimuth, joint_start, joint_count, links, cap):
        from . import _ckernels

        return _ckernels.finger_forward(
            np.ascontiguousarray(q, dtype=np.float64),
            np.ascontiguousarray(base, dtype=np.float64),
            np.ascontiguousarray(azimuth, dtype=np.float64),
            np.ascontiguousarray(joint_start, dtype=np.int64),
            np.ascontiguousarray(joint_count, dtype=np.int64),
            np.ascontiguousarray(links, dtype=np.float64),
            np.ascontiguousarray(cap, dtype=np.float64),
        )

    @staticmethod
    def step_lid(angle, rate, torque, friction, damping, inertia, dt):
        from . import _ckernels

        def c(v):
            return np.ascontiguousarray(np.broadcast_to(v, np.shape(angle)), dtype=np.float64)

        return _ckernels.step_lid(c(angle), c(rate), c(torque), c(friction), c(damping), c(inertia), float(dt))


_active = get_backend(BACKEND)
min_distances = _active.min_distances
grade_contacts = _active.grade_contacts
finger_forward = _active.finger_forward
step_lid = _active.step_lid
