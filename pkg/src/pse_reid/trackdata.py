"""Domain types for cameras, gates, tracks and match hypotheses.

A scenario holds two cameras with their gate anchors, the tracks observed in
each, an optional rigid topology mapping both cameras into a common plane,
and (optionally) ground-truth correspondences. All types are immutable after
load and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

# Candidate time window in frames; overridable everywhere it is consumed.
DEFAULT_TAU = 1000.0


class ScenarioError(ValueError):
    """Base class for scenario data problems."""


class ScenarioParseError(ScenarioError):
    """Malformed scenario file (missing fields, wrong shapes)."""


class ScenarioValidationError(ScenarioError):
    """Well-formed file whose content violates a track/camera invariant."""


@dataclass(frozen=True)
class TrackPoint:
    t: int
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class Track:
    """One person's observation in one camera.

    `points` are ordered by strictly increasing frame index; `snapshots` is an
    (S, F) array of opaque appearance feature vectors sampled along the track.
    """

    id: str
    camera: str
    points: tuple[TrackPoint, ...]
    snapshots: np.ndarray

    def __post_init__(self):
        if not self.points:
            raise ScenarioValidationError(f"track {self.id!r}: no points")
        ts = [p.t for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioValidationError(
                f"track {self.id!r}: timestamps not strictly increasing: {ts}"
            )
        snaps = np.asarray(self.snapshots, dtype=float)
        if snaps.ndim != 2 or snaps.shape[0] < 1:
            raise ScenarioValidationError(
                f"track {self.id!r}: snapshots must be a non-empty 2-D array"
            )
        if not np.all(np.isfinite(snaps)):
            raise ScenarioValidationError(f"track {self.id!r}: non-finite snapshot values")
        object.__setattr__(self, "snapshots", snaps)

    @property
    def t_entry(self) -> int:
        return self.points[0].t

    @property
    def t_exit(self) -> int:
        return self.points[-1].t

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points], dtype=float)

    @cached_property
    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.points], dtype=float)

    @property
    def entry_point(self) -> np.ndarray:
        return self.xy[0]

    @property
    def exit_point(self) -> np.ndarray:
        return self.xy[-1]

    @property
    def feature_dim(self) -> int:
        return self.snapshots.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (
            self.id == other.id
            and self.camera == other.camera
            and self.points == other.points
            and self.snapshots.shape == other.snapshots.shape
            and np.array_equal(self.snapshots, other.snapshots)
        )


@dataclass(frozen=True, eq=False)
class Camera:
    """A camera with U >= 1 virtual gate anchor points on its boundary."""

    id: str
    gates: np.ndarray  # (U, 2)

    def __post_init__(self):
        g = np.asarray(self.gates, dtype=float)
        if g.ndim != 2 or g.shape[1] != 2 or g.shape[0] < 1:
            raise ScenarioValidationError(f"camera {self.id!r}: gates must be a (U, 2) array, U >= 1")
        if len(np.unique(g, axis=0)) != len(g):
            raise ScenarioValidationError(f"camera {self.id!r}: gate anchors must be distinct")
        object.__setattr__(self, "gates", g)

    @property
    def n_gates(self) -> int:
        return self.gates.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.gates, other.gates)


@dataclass(frozen=True, eq=False)
class CameraTransform:
    """Rigid-ish map (2x2 matrix + translation) from camera-local coordinates
    into the shared ground plane. Must be invertible."""

    matrix: np.ndarray  # (2, 2)
    translation: np.ndarray  # (2,)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(2, 2)
        t = np.asarray(self.translation, dtype=float).reshape(2)
        if abs(np.linalg.det(m)) < 1e-12:
            raise ScenarioValidationError("topology transform is singular")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, CameraTransform):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix) and np.array_equal(
            self.translation, other.translation
        )


class Hypothesis(NamedTuple):
    """Candidate pairing of track index `i_a` (camera a) with `j_b` (camera b)."""

    i_a: int
    j_b: int


@dataclass(frozen=True, eq=False)
class Scenario:
    camera_a: Camera
    camera_b: Camera
    tracks_a: tuple[Track, ...]
    tracks_b: tuple[Track, ...]
    # camera id -> transform into the common plane; None when topology unknown
    topology: dict[str, CameraTransform] | None = None
    # pairs of (track id in a, track id in b)
    ground_truth: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        for side, cam, tracks in (
            ("a", self.camera_a, self.tracks_a),
            ("b", self.camera_b, self.tracks_b),
        ):
            seen = set()
            for tr in tracks:
                if tr.camera != cam.id:
                    raise ScenarioValidationError(
                        f"track {tr.id!r} claims camera {tr.camera!r} but sits in tracks_{side}"
                        f" (camera {cam.id!r})"
                    )
                if tr.id in seen:
                    raise ScenarioValidationError(f"duplicate track id {tr.id!r} in camera {cam.id!r}")
                seen.add(tr.id)
        dims = {tr.feature_dim for tr in self.tracks_a} | {tr.feature_dim for tr in self.tracks_b}
        if len(dims) > 1:
            raise ScenarioValidationError(f"snapshot feature dimensions differ across tracks: {sorted(dims)}")
        if self.topology is not None:
            missing = {self.camera_a.id, self.camera_b.id} - set(self.topology)
            if missing:
                raise ScenarioValidationError(f"topology missing transform for cameras {sorted(missing)}")
        if self.ground_truth is not None:
            ids_a = {tr.id for tr in self.tracks_a}
            ids_b = {tr.id for tr in self.tracks_b}
            for ia, jb in self.ground_truth:
                if ia not in ids_a or jb not in ids_b:
                    raise ScenarioValidationError(f"ground-truth pair ({ia!r}, {jb!r}) references unknown track")

    @property
    def n_a(self) -> int:
        return len(self.tracks_a)

    @property
    def n_b(self) -> int:
        return len(self.tracks_b)

    @property
    def feature_dim(self) -> int:
        for tr in (*self.tracks_a, *self.tracks_b):
            return tr.feature_dim
        return 0

    @cached_property
    def index_a(self) -> dict[str, int]:
        return {tr.id: i for i, tr in enumerate(self.tracks_a)}

    @cached_property
    def index_b(self) -> dict[str, int]:
        return {tr.id: j for j, tr in enumerate(self.tracks_b)}

    def ground_truth_pairs(self) -> list[tuple[int, int]]:
        """Ground truth as (i_a, j_b) track-index pairs; empty when absent."""
        if self.ground_truth is None:
            return []
        return [(self.index_a[ia], self.index_b[jb]) for ia, jb in self.ground_truth]

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.camera_a == other.camera_a
            and self.camera_b == other.camera_b
            and self.tracks_a == other.tracks_a
            and self.tracks_b == other.tracks_b
            and self.topology == other.topology
            and self.ground_truth == other.ground_truth
        )


def nearest_gate(camera: Camera, p) -> int:
    """Index of the gate anchor minimizing squared distance to `p`.

    Ties break toward the lowest gate index.
    """
    p = np.asarray(p, dtype=float).reshape(2)
    d2 = np.sum((camera.gates - p) ** 2, axis=1)
    return int(np.argmin(d2))


def candidate_matches(s: Scenario, tau: float = DEFAULT_TAU) -> list[Hypothesis]:
    """All (i_a, j_b) pairs whose entry-after-exit gap lies in [0, tau].

    The gap is directed: track j_b must enter camera b no earlier than track
    i_a exited camera a. Output is in lexicographic (i_a, j_b) order.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    exits = np.array([tr.t_exit for tr in s.tracks_a], dtype=float)
    entries = np.array([tr.t_entry for tr in s.tracks_b], dtype=float)
    out = []
    for i in range(s.n_a):
        gaps = entries - exits[i]
        for j in np.nonzero((gaps >= 0) & (gaps <= tau))[0]:
            out.append(Hypothesis(i, int(j)))
    return out


def _parse_track(rec: dict) -> Track:
    tid = rec.get("id", "<missing id>")
    try:
        points = tuple(TrackPoint(int(t), float(x), float(y)) for t, x, y in rec["points"])
        snaps = np.asarray(rec["snapshots"], dtype=float)
        return Track(id=str(rec["id"]), camera=str(rec["camera"]), points=points, snapshots=snaps)
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"track {tid!r}: malformed record ({exc})") from exc


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario JSON file (see `save_scenario` for the format)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: not valid JSON ({exc})") from exc

    try:
        cams = [Camera(id=str(c["id"]), gates=np.asarray(c["gates"], dtype=float)) for c in raw["cameras"]]
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{path}: malformed cameras block ({exc})") from exc
    if len(cams) != 2:
        raise ScenarioParseError(f"{path}: expected exactly 2 cameras, got {len(cams)}")
    cam_a, cam_b = cams

    tracks_a, tracks_b = [], []
    for rec in raw.get("tracks", []):
        tr = _parse_track(rec)
        if tr.camera == cam_a.id:
            tracks_a.append(tr)
        elif tr.camera == cam_b.id:
            tracks_b.append(tr)
        else:
            raise ScenarioValidationError(f"track {tr.id!r}: unknown camera {tr.camera!r}")

    topology = None
    if raw.get("topology") is not None:
        try:
            topology = {
                cam_id: CameraTransform(
                    matrix=np.asarray(block["matrix"], dtype=float),
                    translation=np.asarray(block["translation"], dtype=float),
                )
                for cam_id, block in raw["topology"].items()
            }
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioParseError(f"{path}: malformed topology block ({exc})") from exc

    gt = None
    if raw.get("ground_truth") is not None:
        gt = tuple((str(a), str(b)) for a, b in raw["ground_truth"])

    return Scenario(
        camera_a=cam_a,
        camera_b=cam_b,
        tracks_a=tuple(tracks_a),
        tracks_b=tuple(tracks_b),
        topology=topology,
        ground_truth=gt,
    )


def scenario_to_dict(s: Scenario) -> dict:
    d: dict = {
        "cameras": [
            {"id": s.camera_a.id, "gates": s.camera_a.gates.tolist()},
            {"id": s.camera_b.id, "gates": s.camera_b.gates.tolist()},
        ],
        "tracks": [
            {
                "id": tr.id,
                "camera": tr.camera,
                "points": [[p.t, p.x, p.y] for p in tr.points],
                "snapshots": tr.snapshots.tolist(),
            }
            for tr in (*s.tracks_a, *s.tracks_b)
        ],
    }
    if s.topology is not None:
        d["topology"] = {
            cam_id: {"matrix": tf.matrix.tolist(), "translation": tf.translation.tolist()}
            for cam_id, tf in sorted(s.topology.items())
        }
    if s.ground_truth is not None:
        d["ground_truth"] = [list(pair) for pair in s.ground_truth]
    return d


def save_scenario(s: Scenario, path) -> None:
    """Write the canonical JSON form; `load_scenario` inverts it exactly."""
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2, sort_keys=True))
