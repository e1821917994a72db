"""Contact-guide frames on the lid rim and tactile penetration grading."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

SHAPE_SIDES = {"cylinder": 0, "square": 4, "hexagon": 6}
NUM_FINGERS = 5


class ConfigError(ValueError):
    """Invalid configuration or geometry parameters."""


def rotation_about(axis, angle):
    """Right-handed rotation matrix about a unit ``axis`` by ``angle``."""
    x, y, z = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


def opening_rotation(angle, axis=(0.0, 0.0, 1.0)):
    """Rotation carrying lid-fixed points to world after the lid turned ``angle``.

    The lid angle grows in the direction a fingertip moving with positive
    ``(v x p)_z`` drives it, which is clockwise seen from +z.
    """
    return rotation_about(axis, -angle)


@dataclass(frozen=True)
class ContactFrameSet:
    points: np.ndarray  # (m, 3) guide-box centres, lid frame
    shape_tag: str
    rim_radius: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ConfigError("contact frame set must be a non-empty (m, 3) array")
        object.__setattr__(self, "points", pts)

    @property
    def m(self):
        return self.points.shape[0]

    def rotated(self, angle, axis=(0.0, 0.0, 1.0)):
        """Frames after the lid has turned by ``angle`` (opening-positive)."""
        rot = opening_rotation(angle, axis)
        return replace(self, points=self.points @ rot.T)

    def azimuths(self):
        return np.arctan2(self.points[:, 1], self.points[:, 0])

    def radii(self):
        return np.hypot(self.points[:, 0], self.points[:, 1])


def boundary_radius(shape: str, rim_radius: float, azimuth):
    """Distance from the lid axis to its side wall at ``azimuth`` (lid frame).

    Polygons have a face midpoint at azimuth 0; ``rim_radius`` is the
    circumradius.
    """
    azimuth = np.asarray(azimuth, dtype=float)
    sides = SHAPE_SIDES[shape]
    if sides == 0:
        return np.full(azimuth.shape, float(rim_radius))
    sector = 2.0 * np.pi / sides
    apothem = rim_radius * math.cos(math.pi / sides)
    local = np.mod(azimuth + sector / 2.0, sector) - sector / 2.0
    return apothem / np.cos(local)


def make_lid_frames(shape: str, rim_radius: float = 0.04, m: int = 8) -> ContactFrameSet:
    """Place ``m`` guide frames on the rim of a cylinder, square or hexagon lid.

    Frames sit at equal angular spacing starting from a face midpoint. For a
    polygon the radius at each angle is that of the boundary, so with ``m``
    equal to the number of sides they land on the face midpoints and with
    twice as many they alternate midpoints and corners. ``rim_radius`` is the
    circumradius.
    """
    if shape not in SHAPE_SIDES:
        raise ConfigError(f"unknown lid shape {shape!r}")
    if m < 3:
        raise ConfigError(f"need at least 3 contact frames, got {m}")
    if rim_radius <= 0:
        raise ConfigError("rim_radius must be positive")
    angles = 2.0 * np.pi * np.arange(m) / m
    radii = boundary_radius(shape, rim_radius, angles)
    pts = np.stack([radii * np.cos(angles), radii * np.sin(angles), np.zeros(m)], axis=1)
    return ContactFrameSet(points=pts, shape_tag=shape, rim_radius=float(rim_radius))


def nearest_distance(query_point, frames) -> float:
    """Euclidean distance from ``query_point`` to the closest frame point."""
    pts = frames.points if isinstance(frames, ContactFrameSet) else np.asarray(frames, float)
    if pts.size == 0:
        raise ConfigError("empty contact frame set")
    q = np.asarray(query_point, dtype=float).reshape(1, 3)
    return float(kernels.min_distances(q, pts.reshape(-1, 3))[0])


@dataclass
class ContactReport:
    raw_distances: np.ndarray  # (5, k) metres
    penetrations: np.ndarray  # (5, k) thresholded, metres
    normalized: np.ndarray | None = None  # (5, k) in [0, 1] once graded
    grasp_quality: np.ndarray = field(default_factory=lambda: np.zeros(NUM_FINGERS))
    contact_now: np.ndarray = field(default_factory=lambda: np.zeros(NUM_FINGERS, bool))
    released: np.ndarray = field(default_factory=lambda: np.zeros(NUM_FINGERS, bool))

    @property
    def graded(self):
        return self.normalized is not None


def compute_penetrations(sensors, frames, eps: float = 0.005) -> ContactReport:
    """Distances of every tactile sensor to the guide frames, thresholded at ``eps``.

    ``sensors`` is a (5, k, 3) array in the same frame as ``frames``.
    """
    if eps <= 0:
        raise ConfigError("contact threshold must be positive")
    sensors = np.asarray(sensors, dtype=float)
    pts = frames.points if isinstance(frames, ContactFrameSet) else np.asarray(frames, float)
    n_f, k = sensors.shape[:2]
    dist = kernels.min_distances(sensors.reshape(-1, 3), pts).reshape(n_f, k)
    pen = np.where(dist <= eps, dist, 0.0)
    contact = pen.max(axis=1) > 0.0
    return ContactReport(raw_distances=dist, penetrations=pen, contact_now=contact)


def normalize_and_grade(report: ContactReport) -> ContactReport:
    """Divide each finger's penetrations by its row maximum and sum them into G."""
    if report.graded:
        return report
    pen = report.penetrations
    rowmax = pen.max(axis=1)
    safe = np.where(rowmax > 0.0, rowmax, 1.0)
    norm = pen / safe[:, None]
    quality = norm.sum(axis=1)
    return replace(report, normalized=norm, grasp_quality=quality, contact_now=rowmax > 0.0)


def release_transitions(previous: ContactReport | None, current: ContactReport, literal: bool = False):
    """Per-finger contact-release flags between two consecutive reports.

    With ``literal`` the flag is simply "was in contact at the previous step".
    ``previous=None`` marks the first step of an episode.
    """
    if previous is None:
        return np.zeros(len(current.contact_now), dtype=bool)
    prev = np.asarray(previous.contact_now, dtype=bool)
    if literal:
        return prev.copy()
    return prev & ~np.asarray(current.contact_now, dtype=bool)


def sensor_cap(k: int = 9, cap_radius: float = 0.006, spread: float = 0.5) -> np.ndarray:
    """Sensor coefficients on a hemispherical fingertip cap.

    Points form a square grid (k must be a perfect square) of directions
    tilted up to ``spread`` radians from the pad normal. Columns are the
    components along the pad normal, the last-link direction and the lateral
    direction, so every point lies at distance ``cap_radius`` from the
    fingertip origin.
    """
    side = int(round(math.sqrt(k)))
    if side * side != k or k < 1:
        raise ConfigError(f"sensor count must be a perfect square, got {k}")
    ticks = np.linspace(-spread, spread, side) if side > 1 else np.zeros(1)
    rows = []
    for u in ticks:
        for v in ticks:
            d = np.array([1.0, math.tan(u), math.tan(v)])
            rows.append(cap_radius * d / np.linalg.norm(d))
    return np.array(rows)
