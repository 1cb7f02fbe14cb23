"""Preferred-speed cost, logistic squashing, and the two social quadratic costs.

Speeds are boundary step displacements: the last step before a track exits
and the first step after it enters. Camera-level statistics z-normalize them
so that a person's walking pace is comparable across differently scaled views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .trackdata import Hypothesis, Scenario, Track

# Floor on the speed standard deviation; prevents z-score blow-up on
# degenerate cameras where every observed step has identical length.
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class SpeedStats:
    """Mean/std of boundary step displacements observed in one camera."""

    mu: float
    sigma: float
    degenerate: bool = False

    def zscore(self, step: float) -> float:
        return (step - self.mu) / self.sigma


@dataclass(frozen=True)
class SquashParams:
    """Logistic squashing: phi -> alpha / (1 + exp(-beta * phi))."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"squash parameters must be positive, got {self}")


def squash(phi, p: SquashParams = SquashParams()):
    """Map a raw cost onto (0, alpha), strictly monotone in `phi`."""
    return p.alpha * expit(p.beta * np.asarray(phi, dtype=float))


def exit_step(track: Track) -> float:
    """Length of the last step before the track leaves the camera."""
    if len(track.points) < 2:
        raise ValueError(f"track {track.id!r} has a single point; exit speed undefined")
    return float(np.linalg.norm(track.xy[-1] - track.xy[-2]))


def entry_step(track: Track) -> float:
    """Length of the first step after the track enters the camera."""
    if len(track.points) < 2:
        raise ValueError(f"track {track.id!r} has a single point; entry speed undefined")
    return float(np.linalg.norm(track.xy[1] - track.xy[0]))


def camera_speed_stats(tracks) -> SpeedStats:
    """Population mean/std of all boundary steps (entry and exit) in one camera.

    Tracks with fewer than two points contribute no samples. With fewer than
    two contributing tracks the result is flagged degenerate.
    """
    samples = []
    contributing = 0
    for tr in tracks:
        if len(tr.points) < 2:
            continue
        samples.append(exit_step(tr))
        samples.append(entry_step(tr))
        contributing += 1
    if not samples:
        return SpeedStats(mu=0.0, sigma=SIGMA_FLOOR, degenerate=True)
    arr = np.asarray(samples)
    sigma = max(float(arr.std()), SIGMA_FLOOR)
    return SpeedStats(mu=float(arr.mean()), sigma=sigma, degenerate=contributing < 2)


def speed_cost(a: Track, b: Track, sa: SpeedStats, sb: SpeedStats) -> float:
    """|z-normalized exit speed of `a` - z-normalized entry speed of `b`|."""
    return abs(sa.zscore(exit_step(a)) - sb.zscore(entry_step(b)))


def _exit_entry(m: Hypothesis, s: Scenario) -> tuple[Track, Track]:
    return s.tracks_a[m.i_a], s.tracks_b[m.j_b]


def spatial_grouping_cost(m1: Hypothesis, m2: Hypothesis, s: Scenario) -> float:
    """Penalty for two matches that exit/enter near each other but imply
    different traveled distances through the invisible region.

    The first two exponential factors gate the cost to spatially close pairs;
    the third compares (exit speed + entry speed) * travel time for each
    match. Speeds are raw boundary step lengths per frame, not z-scores;
    z-scoring would break the distance-as-velocity-times-time reading.
    """
    a1, b1 = _exit_entry(m1, s)
    a2, b2 = _exit_entry(m2, s)
    gate_exit = np.exp(-np.linalg.norm(a1.exit_point - a2.exit_point))
    gate_entry = np.exp(-np.linalg.norm(b1.entry_point - b2.entry_point))
    d1 = (exit_step(a1) + entry_step(b1)) * (b1.t_entry - a1.t_exit)
    d2 = (exit_step(a2) + entry_step(b2)) * (b2.t_entry - a2.t_exit)
    return float(gate_exit * gate_entry * abs(d1 - d2))


def social_grouping_cost(m1: Hypothesis, m2: Hypothesis, s: Scenario) -> float:
    """Reward in (0, 1] for two matches that exit and enter together in both
    space and time; 1 means identical exit/entry locations and times."""
    a1, b1 = _exit_entry(m1, s)
    a2, b2 = _exit_entry(m2, s)
    return float(
        np.exp(
            -np.linalg.norm(a1.exit_point - a2.exit_point)
            - np.linalg.norm(b1.entry_point - b2.entry_point)
            - abs(b1.t_entry - b2.t_entry)
            - abs(a1.t_exit - a2.t_exit)
        )
    )
