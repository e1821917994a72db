"""Rotation score, rotation time, success rate and their aggregation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import ConfigError

# seconds allowed for the first full revolution
TIME_LIMITS = {"cylinder": 2.5, "square": 5.0, "hexagon": 3.5}
TWO_PI = 2.0 * np.pi


class UndefinedMetric(ValueError):
    """Metric needs more data than the trace holds."""


def _angles(trace):
    if isinstance(trace, dict):
        from .env import angle_sequence

        return angle_sequence(trace)
    return np.asarray(trace, dtype=float)


def rotation_score(trace) -> float:
    """Mean per-step lid angle change (rad/step)."""
    a = _angles(trace)
    if a.size < 2:
        raise UndefinedMetric("rotation score needs at least two angles")
    return float(np.mean(np.diff(a)))


def revolution_times(trace, dt: float):
    """Interpolated step times at which the cumulative rotation first reaches 2*pi*n."""
    a = _angles(trace)
    if a.size < 2:
        return []
    rel = a - a[0]
    peak = np.maximum.accumulate(rel)
    times = []
    level = TWO_PI
    while peak[-1] >= level:
        i = int(np.argmax(peak >= level))
        lo, hi = rel[i - 1], rel[i]
        # peak first reaches the level at i, so rel[i] >= level > every earlier value
        frac = (level - lo) / (hi - lo)
        times.append((i - 1 + frac) * dt)
        level += TWO_PI
    return times


def rotation_time(trace, dt: float):
    """Mean seconds per completed revolution, or None when none completed."""
    times = revolution_times(trace, dt)
    if not times:
        return None
    return float(np.mean(np.diff([0.0] + times)))


def time_limit(shape: str) -> float:
    try:
        return TIME_LIMITS[shape]
    except KeyError:
        raise ConfigError(f"unknown shape {shape!r}") from None


def success(trace, shape: str, dt: float, limits=None) -> bool:
    """True when the first revolution completes within the shape's time limit."""
    table = TIME_LIMITS if limits is None else limits
    if shape not in table:
        raise ConfigError(f"unknown shape {shape!r}")
    limit = table[shape]
    times = revolution_times(trace, dt)
    return bool(times) and bool(times[0] <= limit + 1e-9)


@dataclass(frozen=True)
class EpisodeMetrics:
    method: str
    shape: str
    episode: int
    steps: int
    rs: float
    rt: float | None
    success: bool
    friction: float = float("nan")


def episode_metrics(trace, method: str, episode: int = 0) -> EpisodeMetrics:
    head = trace["header"]
    dt = head["dt"]
    shape = head["shape"]
    return EpisodeMetrics(
        method=method,
        shape=shape,
        episode=episode,
        steps=len(trace["steps"]),
        rs=rotation_score(trace),
        rt=rotation_time(trace, dt),
        success=success(trace, shape, dt),
        friction=float(head.get("friction", float("nan"))),
    )


@dataclass(frozen=True)
class MetricReport:
    method: str
    shape: str
    episodes: int
    rs_mean: float
    rs_std: float
    rt_mean: float | None
    rt_std: float | None
    rt_undefined: int
    sr: float


def report(episodes, method=None, shape=None) -> MetricReport:
    eps = list(episodes)
    if not eps:
        raise UndefinedMetric("no episodes to aggregate")
    rs = np.array([e.rs for e in eps])
    rts = np.array([e.rt for e in eps if e.rt is not None])
    return MetricReport(
        method=method or eps[0].method,
        shape=shape or eps[0].shape,
        episodes=len(eps),
        rs_mean=float(rs.mean()),
        rs_std=float(rs.std()),
        rt_mean=float(rts.mean()) if rts.size else None,
        rt_std=float(rts.std()) if rts.size else None,
        rt_undefined=len(eps) - int(rts.size),
        sr=sum(e.success for e in eps) / len(eps),
    )


def aggregate(episodes):
    """One report per (method, shape) plus an ``average`` row per method.

    The average row takes the plain mean of the cell values, std columns
    included; RT averages only the cells where it is defined.
    """
    cells = {}
    for e in episodes:
        cells.setdefault((e.method, e.shape), []).append(e)
    rows = []
    methods = []
    for key in sorted(cells, key=lambda k: (k[0], k[1])):
        rows.append(report(cells[key], *key))
        if key[0] not in methods:
            methods.append(key[0])
    out = []
    for m in methods:
        mine = [r for r in rows if r.method == m]
        out.extend(mine)
        if len(mine) > 1:
            rt = [r for r in mine if r.rt_mean is not None]
            out.append(
                MetricReport(
                    method=m,
                    shape="average",
                    episodes=sum(r.episodes for r in mine),
                    rs_mean=float(np.mean([r.rs_mean for r in mine])),
                    rs_std=float(np.mean([r.rs_std for r in mine])),
                    rt_mean=float(np.mean([r.rt_mean for r in rt])) if rt else None,
                    rt_std=float(np.mean([r.rt_std for r in rt])) if rt else None,
                    rt_undefined=sum(r.rt_undefined for r in mine),
                    sr=float(np.mean([r.sr for r in mine])),
                )
            )
    return out


def _num(v, fmt):
    return "" if v is None else format(v, fmt)


EPISODE_FIELDS = ("method", "shape", "episode", "steps", "rs", "rt", "success", "friction")
REPORT_FIELDS = ("method", "shape", "episodes", "rs_mean", "rs_std", "rt_mean", "rt_std", "rt_undefined", "sr")


def episodes_csv(episodes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPISODE_FIELDS)
    for e in episodes:
        w.writerow(
            [e.method, e.shape, e.episode, e.steps, repr(e.rs), _num(e.rt, ".17g"), int(e.success), repr(e.friction)]
        )
    return buf.getvalue()


def read_episodes_csv(text: str):
    rows = csv.DictReader(io.StringIO(text))
    return [
        EpisodeMetrics(
            method=r["method"],
            shape=r["shape"],
            episode=int(r["episode"]),
            steps=int(r["steps"]),
            rs=float(r["rs"]),
            rt=float(r["rt"]) if r["rt"] else None,
            success=r["success"] == "1",
            friction=float(r["friction"]),
        )
        for r in rows
    ]


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in reports:
        d = asdict(r)
        w.writerow([d[k] if isinstance(d[k], (str, int)) else _num(d[k], ".17g") for k in REPORT_FIELDS])
    return buf.getvalue()


def format_table(reports) -> str:
    """Aligned plain-text table with mean ± std cells."""
    header = ("Method", "Shape", "N", "RS [rad/step]", "RT [s]", "SR")
    body = []
    for r in reports:
        rt = "n/a" if r.rt_mean is None else f"{r.rt_mean:.2f} ± {r.rt_std:.2f}"
        if r.rt_undefined and r.rt_mean is not None:
            rt += f" ({r.rt_undefined} undef.)"
        body.append((r.method, r.shape, str(r.episodes), f"{r.rs_mean:.4f} ± {r.rs_std:.4f}", rt, f"{r.sr:.2f}"))
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for n, row in enumerate([header] + body):
        cells = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
