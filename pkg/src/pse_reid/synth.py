"""Synthetic two-camera scenario generator with planted structure.

People spawn behind a gate in camera a, walk a constant-velocity track to the
gate, cross the invisible region according to a planted destination matrix
and travel-time mixture, and re-enter camera b. Groups share gates, times
(jitter <= 2 frames) and nearby positions (jitter <= 1 unit per member).
Every identity carries a latent appearance vector; snapshots are noisy copies
of it, and identities cluster in latent space to create lookalike confusers.

Everything is a pure function of the config; the same seed yields the same
scenario byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .trackdata import Camera, CameraTransform, Scenario, Track, TrackPoint
from .transitions import TravelTimeDensity


@dataclass
class SynthConfig:
    seed: int = 0
    n_people: int = 50
    n_gates: int = 11
    gate_spacing: float = 25.0
    # planted destination matrix (row-stochastic); None = default pattern of
    # 0.8 on the mirrored gate and 0.2 two gates over
    dest: list[list[float]] | None = None
    # shared travel-time mixture: list of (weight, mean, std)
    travel_time: list[tuple[float, float, float]] = field(
        default_factory=lambda: [(0.5, 30.0, 2.0), (0.5, 80.0, 3.0)]
    )
    group_fraction: float = 0.0
    group_sizes: tuple[int, int] = (2, 3)
    # people cross a gate anywhere along its width; group members stay within
    # one unit of each other while strangers spread across the whole gate
    gate_width: float = 8.0
    speed_mean: float = 1.3
    speed_std: float = 0.2
    speed_jitter: float = 0.02  # relative cross-camera speed perturbation
    feature_dim: int = 32
    feature_noise: float = 0.6
    cluster_spread: float = 0.45
    cluster_size: int = 5
    snapshots_per_track: int = 5
    track_len_range: tuple[int, int] = (8, 16)
    unmatched_fraction_a: float = 0.1
    unmatched_fraction_b: float = 0.1
    exit_window: int = 300
    topology: bool = False
    invisible_depth: float = 45.0

    def __post_init__(self):
        if self.n_people < 1:
            raise ValueError("n_people must be >= 1")
        if self.dest is not None:
            d = np.asarray(self.dest, dtype=float)
            if d.shape != (self.n_gates, self.n_gates):
                raise ValueError(f"dest must be ({self.n_gates}, {self.n_gates}), got {d.shape}")
            if np.any(d < 0) or not np.allclose(d.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("dest rows must be non-negative and sum to 1")
        weights = [w for w, _, _ in self.travel_time]
        if not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
            raise ValueError("travel_time component weights must sum to 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["travel_time"] = [list(c) for c in self.travel_time]
        d["group_sizes"] = list(self.group_sizes)
        d["track_len_range"] = list(self.track_len_range)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SynthConfig":
        d = dict(d)
        if "travel_time" in d:
            d["travel_time"] = [tuple(c) for c in d["travel_time"]]
        if "group_sizes" in d:
            d["group_sizes"] = tuple(d["group_sizes"])
        if "track_len_range" in d:
            d["track_len_range"] = tuple(d["track_len_range"])
        return SynthConfig(**d)


@dataclass
class PlantedTruth:
    """Generator-side state the tests treat as oracles."""

    dest: np.ndarray
    travel_time: list[tuple[float, float, float]]
    groups: list[list[str]]  # camera-a track ids walking together
    speeds: dict[str, float]  # person id -> base speed
    exit_gates: dict[str, int]
    entry_gates: dict[str, int]
    travel_times: dict[str, float]
    recommended_tau: float

    def travel_density(self) -> TravelTimeDensity:
        w, m, s = zip(*self.travel_time)
        return TravelTimeDensity.gaussian_mixture(w, m, [x * x for x in s])

    def to_dict(self) -> dict:
        return {
            "dest": self.dest.tolist(),
            "travel_time": [list(c) for c in self.travel_time],
            "groups": self.groups,
            "speeds": self.speeds,
            "exit_gates": self.exit_gates,
            "entry_gates": self.entry_gates,
            "travel_times": self.travel_times,
            "recommended_tau": self.recommended_tau,
        }


def default_dest(n_gates: int) -> np.ndarray:
    dest = np.zeros((n_gates, n_gates))
    for u in range(n_gates):
        mirror = n_gates - 1 - u
        dest[u, mirror] += 0.8
        dest[u, (mirror + 2) % n_gates] += 0.2
    return dest


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate_scenario(config: SynthConfig) -> tuple[Scenario, PlantedTruth]:
    """Build a scenario plus its planted truth. Deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    u = config.n_gates
    spacing = config.gate_spacing
    depth = config.invisible_depth

    gates_common_a = np.stack([[spacing * (k + 1), 0.0] for k in range(u)])
    gates_common_b = np.stack([[spacing * (k + 1), depth] for k in range(u)])

    if config.topology:
        theta = 0.35
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        tf_a = CameraTransform(matrix=np.eye(2), translation=np.zeros(2))
        tf_b = CameraTransform(matrix=rot, translation=np.array([4.0, -7.0]))
        topo = {"a": tf_a, "b": tf_b}
        inv = {
            cid: (np.linalg.inv(tf.matrix), tf.translation) for cid, tf in topo.items()
        }

        def to_local(cam: str, pts: np.ndarray) -> np.ndarray:
            m, t = inv[cam]
            return (np.atleast_2d(pts) - t) @ m.T
    else:
        topo = None

        def to_local(cam: str, pts: np.ndarray) -> np.ndarray:
            return np.atleast_2d(pts)

    dest = np.asarray(config.dest, dtype=float) if config.dest is not None else default_dest(u)
    tt_weights = np.array([w for w, _, _ in config.travel_time])
    tt_means = np.array([m for _, m, _ in config.travel_time])
    tt_stds = np.array([s for _, _, s in config.travel_time])

    n_matched = config.n_people
    n_only_a = int(round(config.unmatched_fraction_a * n_matched))
    n_only_b = int(round(config.unmatched_fraction_b * n_matched))
    total_ids = n_matched + n_only_a + n_only_b

    # identity latents clustered to create similar-looking people
    n_clusters = max(2, total_ids // config.cluster_size)
    bases = rng.normal(size=(n_clusters, config.feature_dim))
    latents = np.stack(
        [
            bases[k % n_clusters] + config.cluster_spread * rng.normal(size=config.feature_dim)
            for k in range(total_ids)
        ]
    )

    # group structure over the matched population
    grouped_count = int(round(config.group_fraction * n_matched))
    group_member_ids: list[list[int]] = []
    cursor = 0
    while cursor < grouped_count - 1:
        size = int(rng.integers(config.group_sizes[0], config.group_sizes[1] + 1))
        size = min(size, grouped_count - cursor)
        if size < 2:
            break
        group_member_ids.append(list(range(cursor, cursor + size)))
        cursor += size
    in_group = {pid: gid for gid, members in enumerate(group_member_ids) for pid in members}

    def draw_travel() -> float:
        comp = rng.choice(len(tt_weights), p=tt_weights)
        return max(1.0, rng.normal(tt_means[comp], tt_stds[comp]))

    def snapshots_for(latent: np.ndarray) -> np.ndarray:
        return latent[None, :] + config.feature_noise * rng.normal(
            size=(config.snapshots_per_track, config.feature_dim)
        )

    def make_track(
        tid: str,
        cam: str,
        anchor: np.ndarray,
        direction: np.ndarray,
        speed: float,
        t_anchor: int,
        n_pts: int,
        latent: np.ndarray,
        anchor_is_exit: bool,
    ) -> Track:
        ks = np.arange(n_pts, dtype=float)
        if anchor_is_exit:
            offsets = (ks - (n_pts - 1)) * speed
            times = t_anchor - (n_pts - 1) + np.arange(n_pts)
        else:
            offsets = ks * speed
            times = t_anchor + np.arange(n_pts)
        pts_common = anchor[None, :] + offsets[:, None] * direction[None, :]
        pts_local = to_local(cam, pts_common)
        points = tuple(
            TrackPoint(int(t), float(p[0]), float(p[1])) for t, p in zip(times, pts_local)
        )
        return Track(id=tid, camera=cam, points=points, snapshots=snapshots_for(latent))

    tracks_a: list[Track] = []
    tracks_b: list[Track] = []
    gt: list[tuple[str, str]] = []
    truth = PlantedTruth(
        dest=dest,
        travel_time=list(config.travel_time),
        groups=[],
        speeds={},
        exit_gates={},
        entry_gates={},
        travel_times={},
        recommended_tau=0.0,
    )

    # per-group shared draws
    group_state: dict[int, dict] = {}
    max_dt = 0.0

    for pid in range(n_matched):
        person = f"p{pid:04d}"
        id_a, id_b = f"a_{person}", f"b_{person}"
        gid = in_group.get(pid)
        half = config.gate_width / 2.0
        if gid is not None and gid in group_state:
            st = group_state[gid]
            ua, ub, base_exit, dt, speed, base_lat_a, base_lat_b = (
                st["ua"], st["ub"], st["base_exit"], st["dt"], st["speed"],
                st["lat_a"], st["lat_b"],
            )
            t_exit = base_exit + int(rng.integers(0, 2))  # pairwise gap <= 1 frame
            lat_a = base_lat_a + float(rng.uniform(-0.5, 0.5))
            lat_b = base_lat_b + float(rng.uniform(-0.5, 0.5))
        else:
            ua = int(rng.integers(u))
            ub = int(rng.choice(u, p=dest[ua]))
            base_exit = int(rng.integers(20, 20 + config.exit_window))
            speed = max(0.3, rng.normal(config.speed_mean, config.speed_std))
            dt = draw_travel()
            t_exit = base_exit
            lat_a = float(rng.uniform(-half, half))
            lat_b = float(rng.uniform(-half, half))
            if gid is not None:
                group_state[gid] = {
                    "ua": ua, "ub": ub, "base_exit": base_exit, "dt": dt, "speed": speed,
                    "lat_a": lat_a, "lat_b": lat_b,
                }

        # laterals run along the gate line (the x axis of the common plane)
        anchor_a = gates_common_a[ua] + np.array([lat_a, 0.0])
        anchor_b = gates_common_b[ub] + np.array([lat_b, 0.0])
        if config.topology:
            heading = _unit(anchor_b - anchor_a)
            dist = float(np.linalg.norm(anchor_b - anchor_a))
            dt_int = max(1, int(round(dist / speed)))
            v_exact = dist / dt_int
            speed_a = speed_b = v_exact
            dir_a = dir_b = heading
            dt_use = dt_int
        else:
            ang_a = rng.uniform(-0.6, 0.6)
            ang_b = rng.uniform(-0.6, 0.6)
            dir_a = np.array([math.sin(ang_a), math.cos(ang_a)])
            dir_b = np.array([math.sin(ang_b), math.cos(ang_b)])
            speed_a = speed
            speed_b = speed * (1.0 + config.speed_jitter * rng.normal())
            dt_use = int(round(dt))
        n_a_pts = int(rng.integers(config.track_len_range[0], config.track_len_range[1] + 1))
        n_b_pts = int(rng.integers(config.track_len_range[0], config.track_len_range[1] + 1))
        t_entry = t_exit + dt_use
        max_dt = max(max_dt, float(dt_use))

        tracks_a.append(
            make_track(id_a, "a", anchor_a, dir_a, speed_a, t_exit, n_a_pts, latents[pid], True)
        )
        tracks_b.append(
            make_track(id_b, "b", anchor_b, dir_b, speed_b, t_entry, n_b_pts, latents[pid], False)
        )
        gt.append((id_a, id_b))
        truth.speeds[person] = float(speed_a)
        truth.exit_gates[id_a] = ua
        truth.entry_gates[id_b] = ub
        truth.travel_times[person] = float(dt_use)

    for gid, members in enumerate(group_member_ids):
        truth.groups.append([f"a_p{pid:04d}" for pid in members])

    # people who exit camera a and never reappear
    half = config.gate_width / 2.0
    for k in range(n_only_a):
        pid = n_matched + k
        ua = int(rng.integers(u))
        speed = max(0.3, rng.normal(config.speed_mean, config.speed_std))
        t_exit = int(rng.integers(20, 20 + config.exit_window))
        ang = rng.uniform(-0.6, 0.6)
        direction = np.array([math.sin(ang), math.cos(ang)])
        anchor = gates_common_a[ua] + np.array([float(rng.uniform(-half, half)), 0.0])
        n_pts = int(rng.integers(config.track_len_range[0], config.track_len_range[1] + 1))
        tracks_a.append(
            make_track(f"a_x{k:04d}", "a", anchor, direction, speed, t_exit, n_pts, latents[pid], True)
        )

    # people who appear in camera b only
    for k in range(n_only_b):
        pid = n_matched + n_only_a + k
        ub = int(rng.integers(u))
        speed = max(0.3, rng.normal(config.speed_mean, config.speed_std))
        t_entry = int(rng.integers(20, 20 + config.exit_window))
        ang = rng.uniform(-0.6, 0.6)
        direction = np.array([math.sin(ang), math.cos(ang)])
        anchor = gates_common_b[ub] + np.array([float(rng.uniform(-half, half)), 0.0])
        n_pts = int(rng.integers(config.track_len_range[0], config.track_len_range[1] + 1))
        tracks_b.append(
            make_track(f"b_x{k:04d}", "b", anchor, direction, speed, t_entry, n_pts, latents[pid], False)
        )

    truth.recommended_tau = max_dt + 10.0
    gates_a_local = to_local("a", gates_common_a)
    gates_b_local = to_local("b", gates_common_b)
    scenario = Scenario(
        camera_a=Camera(id="a", gates=gates_a_local),
        camera_b=Camera(id="b", gates=gates_b_local),
        tracks_a=tuple(tracks_a),
        tracks_b=tuple(tracks_b),
        topology=topo,
        ground_truth=tuple(gt),
    )
    return scenario, truth


def save_truth(truth: PlantedTruth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True))
