"""Topology-aware costs: interpolated invisible-region paths, collision
avoidance between pairs of matches, and speed consistency along the full
(visible + invisible) trajectory.

All geometry here lives in the common ground plane defined by the scenario's
per-camera transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .trackdata import CameraTransform, Hypothesis, Track

DEFAULT_SAMPLE_STEP = 1.0  # frames


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class InterpolatedPath:
    """Natural cubic spline through both tracks' points in the common plane,
    parameterized by frame index over [t_entry_a, t_exit_b]."""

    spline: CubicSpline  # vector-valued, (t,) -> (2,)
    t_start: float  # entry of track a
    t_end: float  # exit of track b
    t_exit_a: float  # start of the invisible window
    t_entry_b: float  # end of the invisible window

    def __call__(self, t) -> np.ndarray:
        return self.spline(t)

    def velocity(self, t) -> np.ndarray:
        return self.spline(t, 1)

    def speed(self, t) -> np.ndarray:
        v = self.spline(np.asarray(t, dtype=float), 1)
        return np.linalg.norm(v, axis=-1)


def interpolate_path(a: Track, b: Track, topo: dict[str, CameraTransform]) -> InterpolatedPath:
    """Fit a natural cubic spline per axis through the union of both tracks'
    points mapped into the common plane.

    Requires track `a` to exit strictly before track `b` enters; a shared
    timestamp would make the knot sequence degenerate.
    """
    if a.t_exit >= b.t_entry:
        raise PathError(
            f"duplicate/overlapping timestamps: track {a.id!r} exits at {a.t_exit}, "
            f"track {b.id!r} enters at {b.t_entry}"
        )
    if len(a.points) < 2 or len(b.points) < 2:
        raise PathError(f"tracks {a.id!r}, {b.id!r} must each have >= 2 points")
    pts_a = topo[a.camera].apply(a.xy)
    pts_b = topo[b.camera].apply(b.xy)
    ts = np.concatenate([a.times, b.times])
    pts = np.concatenate([pts_a, pts_b])
    spline = CubicSpline(ts, pts, axis=0, bc_type="natural")
    return InterpolatedPath(
        spline=spline,
        t_start=float(a.t_entry),
        t_end=float(b.t_exit),
        t_exit_a=float(a.t_exit),
        t_entry_b=float(b.t_entry),
    )


def _window_samples(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(np.floor((hi - lo) / step + 1e-9))
    ts = lo + step * np.arange(n + 1)
    if ts[-1] < hi - 1e-9:
        ts = np.append(ts, hi)
    return ts


def collision_cost(
    m1: Hypothesis,
    m2: Hypothesis,
    paths,
    grp: float,
    step: float = DEFAULT_SAMPLE_STEP,
) -> float:
    """(1 - grp) * exp(-d) where d is the closest approach of the two
    interpolated paths over the overlap of their invisible windows.

    `paths` maps hypotheses to their `InterpolatedPath`; `grp` is the raw
    social grouping value for the pair. Empty overlap means no interaction.
    """
    p1, p2 = paths[m1], paths[m2]
    lo = max(p1.t_exit_a, p2.t_exit_a)
    hi = min(p1.t_entry_b, p2.t_entry_b)
    if hi < lo:
        return 0.0
    ts = _window_samples(lo, hi, step)
    d = float(np.min(np.linalg.norm(p1(ts) - p2(ts), axis=-1)))
    return (1.0 - grp) * float(np.exp(-d))


def invisible_speed_cost(path: InterpolatedPath, step: float = DEFAULT_SAMPLE_STEP) -> float:
    """Spread (max - min) of the path speed sampled over the full trajectory,
    visible segments included. Zero iff the sampled speed is constant."""
    ts = _window_samples(path.t_start, path.t_end, step)
    speeds = path.speed(ts)
    return float(speeds.max() - speeds.min())
