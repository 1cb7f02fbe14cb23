"""Assembly of the full matching objective: squashed linear costs per
hypothesis, a sparse symmetric quadratic matrix over hypothesis pairs, and
the convexified form used by the conditional-gradient solver.

Sign conventions: lower is always better. Dissimilarity measures (speed
mismatch, spatial grouping, collision) enter with positive weights;
similarity measures (appearance, per-person discriminative score, social
grouping) keep their orientation and enter with negative weights, so a
well-supported match carries negative net cost and an implausible one
positive. This is what makes leaving a person unmatched (all-zero row) the
right call exactly when no candidate is good enough.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sparse

from . import motioncosts, topology as topo_mod, transitions as trans_mod
from .appearance import DiscriminativeModel, appearance_similarity_matrix, sample_snapshots
from .motioncosts import SpeedStats, SquashParams, squash
from .trackdata import DEFAULT_TAU, Hypothesis, Scenario, candidate_matches

# Quadratic entries whose raw (pre-squash) costs are all below this are
# dropped entirely; the exponential gates have already zeroed them out.
QUADRATIC_DROP_THRESHOLD = 1e-8

LINEAR_TERMS = ("app", "disc", "spd", "tr", "inv_spd")
QUADRATIC_TERMS = ("spt", "grp", "inv_coll")


class MissingModelError(ValueError):
    """A weighted term was requested without its component model."""


class InfeasibleAssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Weights:
    """Per-term weights of the combined objective.

    Dissimilarity costs (speed, spatial grouping, collision, invisible-region
    speed) carry positive weights; similarity rewards (appearance terms,
    social grouping) carry negative ones, so a well-supported match lowers
    the loss and is worth selecting at all. Magnitudes follow the
    grid-searched operating point; the appearance weights are unlisted there
    and default to the same magnitude as the other strong personal cues.
    """

    app: float = -5.0
    disc: float = -5.0
    spd: float = 5.0
    tr: float = 1.0
    spt: float = 0.2
    grp: float = -5.0
    inv_coll: float = 0.2
    inv_spd: float = 5.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (*LINEAR_TERMS, *QUADRATIC_TERMS)}

    @staticmethod
    def from_dict(d: dict) -> "Weights":
        return Weights(**{k: float(v) for k, v in d.items()})


@dataclass
class ComponentModels:
    """Everything `assemble_cost_model` needs besides the scenario itself.

    `squash_overrides` maps term names to explicit `SquashParams`; terms
    without an override are auto-calibrated (beta = 1 / std of the raw cost
    over the scenario's candidates, unit alpha).
    """

    speed_a: SpeedStats | None = None
    speed_b: SpeedStats | None = None
    transitions: trans_mod.GateTransitionModel | None = None
    disc_models: dict[int, DiscriminativeModel] | None = None
    squash_overrides: dict[str, SquashParams] | None = None


@dataclass(frozen=True, eq=False)
class CostModel:
    """The assembled objective: z' Q z + L z over the hypothesis list, which
    fixes the coordinate system of assignment vectors."""

    hypotheses: tuple[Hypothesis, ...]
    L: np.ndarray
    Q: sparse.csr_array
    n_a: int
    n_b: int
    convexified: bool = False

    @property
    def n_hypotheses(self) -> int:
        return len(self.hypotheses)

    def hypothesis_index(self) -> dict[Hypothesis, int]:
        return {h: k for k, h in enumerate(self.hypotheses)}

    def to_dict(self) -> dict:
        coo = self.Q.tocoo()
        return {
            "n_a": self.n_a,
            "n_b": self.n_b,
            "hypotheses": [[h.i_a, h.j_b] for h in self.hypotheses],
            "L": self.L.tolist(),
            "Q": {
                "rows": coo.row.tolist(),
                "cols": coo.col.tolist(),
                "values": coo.data.tolist(),
            },
            "convexified": self.convexified,
        }


@dataclass(frozen=True, eq=False)
class Assignment:
    """Binary selection vector over a cost model's hypotheses."""

    z: np.ndarray

    @staticmethod
    def from_indices(n: int, indices) -> "Assignment":
        z = np.zeros(n, dtype=np.int8)
        z[list(indices)] = 1
        return Assignment(z=z)

    @property
    def selected(self) -> np.ndarray:
        return np.nonzero(self.z)[0]

    def pairs(self, cm: CostModel) -> list[Hypothesis]:
        return [cm.hypotheses[k] for k in self.selected]

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return np.array_equal(self.z, other.z)


def check_feasible(cm: CostModel, assignment: Assignment) -> None:
    """Raise when a person in either camera is matched more than once."""
    z = assignment.z
    if z.shape != (cm.n_hypotheses,):
        raise InfeasibleAssignmentError(
            f"assignment has {z.shape[0]} entries, cost model has {cm.n_hypotheses}"
        )
    if not np.all((z == 0) | (z == 1)):
        raise InfeasibleAssignmentError("assignment vector must be binary")
    rows = np.zeros(cm.n_a, dtype=int)
    cols = np.zeros(cm.n_b, dtype=int)
    for k in assignment.selected:
        rows[cm.hypotheses[k].i_a] += 1
        cols[cm.hypotheses[k].j_b] += 1
    bad_rows = np.nonzero(rows > 1)[0]
    bad_cols = np.nonzero(cols > 1)[0]
    if bad_rows.size or bad_cols.size:
        parts = []
        if bad_rows.size:
            parts.append(f"camera-a track(s) {bad_rows.tolist()} matched more than once")
        if bad_cols.size:
            parts.append(f"camera-b track(s) {bad_cols.tolist()} matched more than once")
        raise InfeasibleAssignmentError("; ".join(parts))


def quadratic_value(cm: CostModel, z: np.ndarray) -> float:
    """z' Q z + L z for an arbitrary (possibly fractional) vector."""
    z = np.asarray(z, dtype=float)
    return float(z @ (cm.Q @ z) + cm.L @ z)


def loss(cm: CostModel, assignment: Assignment) -> float:
    """Objective value of a feasible binary assignment."""
    check_feasible(cm, assignment)
    return quadratic_value(cm, assignment.z.astype(float))


def linear_cost_matrix(cm: CostModel) -> np.ndarray:
    """(n_a, n_b) matrix of linear costs, +inf on non-candidate pairs."""
    mat = np.full((cm.n_a, cm.n_b), np.inf)
    for k, h in enumerate(cm.hypotheses):
        mat[h.i_a, h.j_b] = cm.L[k]
    return mat


def _calibrated(raw: np.ndarray, overrides, term: str) -> SquashParams:
    if overrides and term in overrides:
        return overrides[term]
    finite = raw[np.isfinite(raw)]
    std = float(finite.std()) if finite.size else 0.0
    return SquashParams(alpha=1.0, beta=1.0 / std if std > 1e-12 else 1.0)


def _require(value, term: str):
    if value is None:
        raise MissingModelError(f"term {term!r} has nonzero weight but no model component was provided")
    return value


def _step_lengths(tracks, which: str) -> np.ndarray:
    out = np.zeros(len(tracks))
    for k, tr in enumerate(tracks):
        if len(tr.points) < 2:
            out[k] = 0.0
        elif which == "exit":
            out[k] = motioncosts.exit_step(tr)
        else:
            out[k] = motioncosts.entry_step(tr)
    return out


def assemble_cost_model(
    s: Scenario,
    models: ComponentModels,
    weights: Weights = Weights(),
    tau: float = DEFAULT_TAU,
) -> CostModel:
    """Build the full cost model over `candidate_matches(s, tau)`.

    A term contributes iff its weight is nonzero; topology terms additionally
    require `s.topology`. Tracks that cannot support a term (single-point
    tracks for speed, a missing per-person discriminative model) receive the
    squash midpoint 0.5 so they are neither favored nor penalized.
    """
    hyps = tuple(candidate_matches(s, tau))
    n = len(hyps)
    ii = np.array([h.i_a for h in hyps], dtype=int)
    jj = np.array([h.j_b for h in hyps], dtype=int)
    over = models.squash_overrides
    use_topo = s.topology is not None

    L = np.zeros(n)
    if n and weights.app != 0.0:
        sim = appearance_similarity_matrix(s.tracks_a, s.tracks_b)
        raw = sim[ii, jj]
        L += weights.app * squash(raw, _calibrated(raw, over, "app"))
    if n and weights.disc != 0.0:
        disc_models = _require(models.disc_models, "disc")
        raw = np.full(n, np.nan)
        mean_snaps = np.stack([sample_snapshots(tr).mean(axis=0) for tr in s.tracks_b])
        for i, model in disc_models.items():
            mask = ii == i
            if mask.any():
                raw[mask] = mean_snaps[jj[mask]] @ model.w + model.v
        params = _calibrated(raw, over, "disc")
        vals = np.full(n, 0.5 * params.alpha)
        known = np.isfinite(raw)
        vals[known] = squash(raw[known], params)
        L += weights.disc * vals
    if n and weights.spd != 0.0:
        sa = _require(models.speed_a, "spd")
        sb = _require(models.speed_b, "spd")
        ok_a = np.array([len(tr.points) >= 2 for tr in s.tracks_a])
        ok_b = np.array([len(tr.points) >= 2 for tr in s.tracks_b])
        za = (_step_lengths(s.tracks_a, "exit") - sa.mu) / sa.sigma
        zb = (_step_lengths(s.tracks_b, "entry") - sb.mu) / sb.sigma
        raw = np.abs(za[ii] - zb[jj])
        defined = ok_a[ii] & ok_b[jj]
        raw_def = np.where(defined, raw, np.nan)
        params = _calibrated(raw_def, over, "spd")
        vals = np.full(n, 0.5 * params.alpha)
        vals[defined] = squash(raw[defined], params)
        L += weights.spd * vals
    if n and weights.tr != 0.0:
        model = _require(models.transitions, "tr")
        raw = trans_mod.transition_cost_vector(hyps, model, s)
        L += weights.tr * squash(raw, _calibrated(raw, over, "tr"))

    paths = None
    if n and use_topo and (weights.inv_spd != 0.0 or weights.inv_coll != 0.0):
        paths = _candidate_paths(s, hyps)
    if n and use_topo and weights.inv_spd != 0.0:
        raw = np.full(n, np.nan)
        for k in range(n):
            if paths[k] is not None:
                raw[k] = topo_mod.invisible_speed_cost(paths[k])
        params = _calibrated(raw, over, "inv_spd")
        vals = np.full(n, 0.5 * params.alpha)
        known = np.isfinite(raw)
        vals[known] = squash(raw[known], params)
        L += weights.inv_spd * vals

    Q = _assemble_quadratic(s, hyps, weights, over, paths if use_topo else None)
    return CostModel(hypotheses=hyps, L=L, Q=Q, n_a=s.n_a, n_b=s.n_b)


def _candidate_paths(s: Scenario, hyps) -> list:
    paths = []
    for h in hyps:
        a, b = s.tracks_a[h.i_a], s.tracks_b[h.j_b]
        if a.t_exit >= b.t_entry or len(a.points) < 2 or len(b.points) < 2:
            paths.append(None)
        else:
            paths.append(topo_mod.interpolate_path(a, b, s.topology))
    return paths


def _close_pairs(points: np.ndarray, bound: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index pairs (k < k') whose points lie within `bound`, plus distances."""
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    iu, ju = np.triu_indices(len(points), k=1)
    keep = d[iu, ju] <= bound
    return iu[keep], ju[keep], d[iu, ju][keep]


def _assemble_quadratic(s, hyps, weights, over, paths) -> sparse.csr_array:
    n = len(hyps)
    want_social = weights.spt != 0.0 or weights.grp != 0.0
    want_coll = paths is not None and weights.inv_coll != 0.0
    if n == 0 or not (want_social or want_coll):
        return sparse.csr_array((n, n))

    exit_pts = np.stack([tr.exit_point for tr in s.tracks_a])
    entry_pts = np.stack([tr.entry_point for tr in s.tracks_b])
    t_exit = np.array([tr.t_exit for tr in s.tracks_a], dtype=float)
    t_entry = np.array([tr.t_entry for tr in s.tracks_b], dtype=float)
    steps_a = _step_lengths(s.tracks_a, "exit")
    steps_b = _step_lengths(s.tracks_b, "entry")

    hyp_index = np.full((s.n_a, s.n_b), -1, dtype=int)
    for k, h in enumerate(hyps):
        hyp_index[h.i_a, h.j_b] = k
    ii = np.array([h.i_a for h in hyps], dtype=int)
    jj = np.array([h.j_b for h in hyps], dtype=int)
    travel_dist = (steps_a[ii] + steps_b[jj]) * (t_entry[jj] - t_exit[ii])

    # Gate bound: beyond this exit/entry separation, both exponential-gated
    # raw costs fall below the drop threshold no matter the third factor.
    spread = float(np.ptp(travel_dist)) if n else 0.0
    bound = max(
        -math.log(QUADRATIC_DROP_THRESHOLD),
        math.log(max(spread, 1.0) / QUADRATIC_DROP_THRESHOLD),
    )

    lo_parts: list[np.ndarray] = []
    hi_parts: list[np.ndarray] = []
    spt_parts: list[np.ndarray] = []
    grp_parts: list[np.ndarray] = []

    # Social costs relate matches of *different* people on both sides, so
    # pairs sharing a track (i1 == i2 or j1 == j2) never enter Q.
    ia1, ia2, da = _close_pairs(exit_pts, bound)
    jb1, jb2, db = _close_pairs(entry_pts, bound)
    for a_idx in range(len(ia1)):
        i1, i2, dai = int(ia1[a_idx]), int(ia2[a_idx]), da[a_idx]
        dt_exit = abs(t_exit[i1] - t_exit[i2])
        for variant in (0, 1):
            if variant == 0:
                h1, h2 = hyp_index[i1, jb1], hyp_index[i2, jb2]
            else:
                h1, h2 = hyp_index[i1, jb2], hyp_index[i2, jb1]
            valid = (h1 >= 0) & (h2 >= 0)
            if not valid.any():
                continue
            p, q = h1[valid], h2[valid]
            gate = np.exp(-dai - db[valid])
            grp = gate * np.exp(-np.abs(t_entry[jj[p]] - t_entry[jj[q]]) - dt_exit)
            spt = gate * np.abs(travel_dist[p] - travel_dist[q])
            keep = (grp >= QUADRATIC_DROP_THRESHOLD) | (spt >= QUADRATIC_DROP_THRESHOLD)
            if keep.any():
                lo_parts.append(np.minimum(p[keep], q[keep]))
                hi_parts.append(np.maximum(p[keep], q[keep]))
                spt_parts.append(spt[keep])
                grp_parts.append(grp[keep])

    if lo_parts:
        lo_all = np.concatenate(lo_parts)
        hi_all = np.concatenate(hi_parts)
        spt_all = np.concatenate(spt_parts)
        grp_all = np.concatenate(grp_parts)
        _, first = np.unique(lo_all.astype(np.int64) * n + hi_all, return_index=True)
        lo_all, hi_all = lo_all[first], hi_all[first]
        spt_all, grp_all = spt_all[first], grp_all[first]
    else:
        lo_all = hi_all = np.zeros(0, dtype=int)
        spt_all = grp_all = np.zeros(0)

    coll_pairs: list[tuple[int, int]] = []
    coll_raw: list[float] = []
    if want_coll:
        existing = set(zip(lo_all.tolist(), hi_all.tolist()))
        extra_lo, extra_hi, extra_spt, extra_grp = [], [], [], []
        for p, q, raw_c, raw_g in _collision_raw(s, hyps, paths, existing):
            if raw_c < QUADRATIC_DROP_THRESHOLD:
                continue
            coll_pairs.append((p, q))
            coll_raw.append(raw_c)
            if (p, q) not in existing:
                extra_lo.append(p)
                extra_hi.append(q)
                extra_spt.append(motioncosts.spatial_grouping_cost(hyps[p], hyps[q], s))
                extra_grp.append(raw_g)
                existing.add((p, q))
        if extra_lo:
            lo_all = np.concatenate([lo_all, np.array(extra_lo, dtype=int)])
            hi_all = np.concatenate([hi_all, np.array(extra_hi, dtype=int)])
            spt_all = np.concatenate([spt_all, np.array(extra_spt)])
            grp_all = np.concatenate([grp_all, np.array(extra_grp)])

    if lo_all.size == 0:
        return sparse.csr_array((n, n))

    # The drop rule is per term: a cost whose exponential gates drove it
    # below the threshold contributes nothing, even when the pair survives
    # through the other term. Without this, every surviving pair would pick
    # up the squash midpoint of the other term as a spurious baseline.
    vals = np.zeros(lo_all.size)
    if weights.spt != 0.0:
        live = spt_all >= QUADRATIC_DROP_THRESHOLD
        if live.any():
            params = _calibrated(spt_all[live], over, "spt")
            vals[live] += weights.spt * squash(spt_all[live], params)
    if weights.grp != 0.0:
        live = grp_all >= QUADRATIC_DROP_THRESHOLD
        if live.any():
            params = _calibrated(grp_all[live], over, "grp")
            vals[live] += weights.grp * squash(grp_all[live], params)
    if coll_pairs:
        slot = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(lo_all, hi_all))}
        coll_arr = np.asarray(coll_raw)
        p_coll = _calibrated(coll_arr, over, "inv_coll")
        coll_sq = weights.inv_coll * squash(coll_arr, p_coll)
        for (p, q), v in zip(coll_pairs, coll_sq):
            vals[slot[(p, q)]] += v

    live_pairs = vals != 0.0
    lo_all, hi_all, vals = lo_all[live_pairs], hi_all[live_pairs], vals[live_pairs]
    if lo_all.size == 0:
        return sparse.csr_array((n, n))
    rows = np.concatenate([lo_all, hi_all])
    cols = np.concatenate([hi_all, lo_all])
    data = np.concatenate([vals, vals])
    return sparse.csr_array((data, (rows, cols)), shape=(n, n))


def _collision_raw(s, hyps, paths, social_keys) -> list[tuple[int, int, float, float]]:
    """(p, q, raw collision, raw social grouping) for hypothesis pairs whose
    invisible windows overlap. Quadratic in the number of paths; intended for
    desk-scale topology scenarios."""
    sampled = {}
    for k, path in enumerate(paths):
        if path is None:
            continue
        lo, hi = int(math.ceil(path.t_exit_a)), int(math.floor(path.t_entry_b))
        if hi < lo:
            continue
        ts = np.arange(lo, hi + 1, dtype=float)
        sampled[k] = (lo, path(ts))
    out = []
    keys = sorted(sampled)
    for a_pos, p in enumerate(keys):
        lo_p, pos_p = sampled[p]
        for q in keys[a_pos + 1 :]:
            if hyps[p].i_a == hyps[q].i_a or hyps[p].j_b == hyps[q].j_b:
                continue
            lo_q, pos_q = sampled[q]
            lo = max(lo_p, lo_q)
            hi = min(lo_p + len(pos_p) - 1, lo_q + len(pos_q) - 1)
            if hi < lo:
                continue
            seg1 = pos_p[lo - lo_p : hi - lo_p + 1]
            seg2 = pos_q[lo - lo_q : hi - lo_q + 1]
            d = float(np.min(np.linalg.norm(seg1 - seg2, axis=-1)))
            grp = motioncosts.social_grouping_cost(hyps[p], hyps[q], s)
            raw = (1.0 - grp) * math.exp(-d)
            if raw >= QUADRATIC_DROP_THRESHOLD or (p, q) in social_keys:
                out.append((p, q, raw, grp))
    return out


def convexify(cm: CostModel) -> CostModel:
    """Replace Q with its normalized Laplacian I - D^{-1/2} Q D^{-1/2}, where
    D holds |Q| row sums (so the scaling is defined for mixed-sign Q).

    The result is positive semidefinite: the scaled matrix has spectral
    radius <= 1. Zero-sum rows keep an identity row/column.
    """
    d = np.asarray(np.abs(cm.Q).sum(axis=1)).ravel()
    scale = 1.0 / np.sqrt(np.where(d > 0, d, 1.0))
    m = cm.Q.multiply(scale[:, None]).multiply(scale[None, :])
    q_hat = sparse.csr_array(sparse.eye_array(cm.n_hypotheses, format="csr") - m)
    return replace(cm, Q=q_hat, convexified=True)
