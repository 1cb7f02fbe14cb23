"""Appearance similarity and per-person discriminative models.

Raw similarity is the median cosine similarity over up to 5x5 snapshot pairs
sampled evenly along each track. On top of that, a per-person linear model is
trained in a multiple-instance setting: the person's own snapshots are
positives, everyone else in the same camera plus impossible/poor matches in
the other camera are negatives, and a small bag of plausible candidates in
the other camera contributes exactly one imputed positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trackdata import Hypothesis, Scenario, Track, candidate_matches

SNAPSHOT_SAMPLES = 5
DEFAULT_BAG_SIZE = 5
DEFAULT_C = 1.0
# Camera-b population size beyond which only hard negatives are kept.
HARD_NEGATIVE_POPULATION = 100


class EmptyBagError(RuntimeError):
    """No in-window candidate exists; the discriminative model cannot be
    trained and the caller should fall back to raw appearance similarity."""


def sample_snapshots(track: Track, k: int = SNAPSHOT_SAMPLES) -> np.ndarray:
    """Up to `k` snapshots, evenly spaced along the track (always includes
    the first and last when more than one is available)."""
    n = track.snapshots.shape[0]
    if n <= k:
        return track.snapshots
    idx = np.linspace(0, n - 1, num=k).round().astype(int)
    return track.snapshots[idx]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def appearance_similarity(a: Track, b: Track, similarity=None) -> float:
    """Median cosine similarity over all sampled snapshot pairs, in [-1, 1].

    `similarity` may override the per-pair metric with any callable taking
    the two sampled snapshot matrices and returning a pairwise score matrix.
    """
    if a.feature_dim != b.feature_dim:
        raise ValueError(
            f"feature dimension mismatch: {a.id!r} has {a.feature_dim}, {b.id!r} has {b.feature_dim}"
        )
    sa = sample_snapshots(a)
    sb = sample_snapshots(b)
    if similarity is None:
        sims = _unit_rows(sa) @ _unit_rows(sb).T
    else:
        sims = np.asarray(similarity(sa, sb), dtype=float)
    return float(np.median(sims))


def appearance_similarity_matrix(tracks_a, tracks_b) -> np.ndarray:
    """All-pairs `appearance_similarity`, vectorized and chunked by rows.

    Equivalent to looping the scalar op over every pair.
    """
    sa = [_unit_rows(sample_snapshots(tr)) for tr in tracks_a]
    sb = [_unit_rows(sample_snapshots(tr)) for tr in tracks_b]
    counts_a = {s.shape[0] for s in sa}
    counts_b = {s.shape[0] for s in sb}
    out = np.empty((len(sa), len(sb)))
    if len(counts_a) == 1 and len(counts_b) == 1:
        ka = counts_a.pop()
        a_stack = np.stack(sa)  # (n_a, ka, F)
        b_stack = np.stack(sb)  # (n_b, kb, F)
        # keep each einsum chunk around ~2e7 floats
        chunk = max(1, int(2e7 // max(1, b_stack.shape[0] * ka * b_stack.shape[1])))
        for lo in range(0, len(sa), chunk):
            hi = min(lo + chunk, len(sa))
            sims = np.einsum("iaf,jbf->ijab", a_stack[lo:hi], b_stack)
            out[lo:hi] = np.median(sims.reshape(hi - lo, len(sb), -1), axis=2)
        return out
    for i, va in enumerate(sa):
        for j, vb in enumerate(sb):
            out[i, j] = float(np.median(va @ vb.T))
    return out


@dataclass(frozen=True)
class DiscriminativeModel:
    """Linear scorer <w, x> + v; higher means more similar to the person."""

    w: np.ndarray
    v: float
    converged: bool = True

    def score(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.w + self.v


@dataclass
class TrainingSets:
    """Labeled pools mined for one camera-a track.

    pos_a / neg_a / neg_b carry fixed labels; `pos_bag_b` groups candidate
    snapshots by track, of which exactly one track is imputed positive.
    """

    pos_a: np.ndarray
    neg_a: np.ndarray
    neg_b: np.ndarray
    pos_bag_b: list[tuple[str, np.ndarray]] = field(default_factory=list)


def mine_training_sets(
    s: Scenario,
    i_a: int,
    linear_costs,
    tau: float,
    bag_size: int = DEFAULT_BAG_SIZE,
) -> TrainingSets:
    """Assemble training pools for track `i_a` from both cameras.

    `linear_costs` must align with `candidate_matches(s, tau)`. Negatives in
    camera b are tracks outside the time window plus in-window candidates in
    the worst cost quartile; when camera b is large (> 100 tracks) only the
    worst-quartile hard negatives are kept. The bag holds the `bag_size`
    lowest-cost candidates.
    """
    cands = candidate_matches(s, tau)
    costs = np.asarray(linear_costs, dtype=float)
    if costs.shape != (len(cands),):
        raise ValueError(f"linear_costs has shape {costs.shape}, expected ({len(cands)},)")

    query = s.tracks_a[i_a]
    pos_a = query.snapshots
    neg_a_parts = [tr.snapshots for k, tr in enumerate(s.tracks_a) if k != i_a]
    neg_a = np.concatenate(neg_a_parts) if neg_a_parts else np.empty((0, query.feature_dim))

    mine = [(float(costs[k]), c.j_b) for k, c in enumerate(cands) if c.i_a == i_a]
    mine.sort()
    if not mine:
        raise EmptyBagError(f"track {query.id!r}: no candidate within the {tau}-frame window")
    bag_js = [j for _, j in mine[:bag_size]]
    bag = [(s.tracks_b[j].id, s.tracks_b[j].snapshots) for j in bag_js]

    in_window = {j for _, j in mine}
    neg_js = set()
    if len(mine) > bag_size:
        worst = np.quantile([c for c, _ in mine], 0.75)
        neg_js |= {j for c, j in mine if c >= worst and j not in set(bag_js)}
    if len(s.tracks_b) <= HARD_NEGATIVE_POPULATION:
        neg_js |= {j for j in range(s.n_b) if j not in in_window}
    neg_b_parts = [s.tracks_b[j].snapshots for j in sorted(neg_js)]
    neg_b = np.concatenate(neg_b_parts) if neg_b_parts else np.empty((0, query.feature_dim))

    return TrainingSets(pos_a=pos_a, neg_a=neg_a, neg_b=neg_b, pos_bag_b=bag)


MIL_MAX_ROUNDS = 10
SVM_EPOCHS = 200


def _solve_soft_margin(x: np.ndarray, y: np.ndarray, c: float, epochs: int = SVM_EPOCHS):
    """Full-batch subgradient descent on 0.5||w||^2 + C * sum hinge(y, <w,x>+v).

    Deterministic: w0 = 0, v0 = 0, step 1/(C*k) at epoch k (1/k when C == 0,
    where the data term vanishes anyway).
    """
    w = np.zeros(x.shape[1])
    v = 0.0
    for k in range(1, epochs + 1):
        margins = y * (x @ w + v)
        viol = margins < 1.0
        grad_w = w - c * (y[viol, None] * x[viol]).sum(axis=0)
        grad_v = -c * y[viol].sum()
        step = 1.0 / ((c if c > 0 else 1.0) * k)
        w = w - step * grad_w
        v = v - step * grad_v
    return w, v


def train_discriminative(ts: TrainingSets, c: float = DEFAULT_C) -> DiscriminativeModel:
    """mi-SVM style alternation: impute the single positive bag track, solve
    the supervised soft-margin problem, repeat to a fixed point (<= 10 rounds).

    A non-converged alternation returns the last model with `converged=False`.
    """
    if ts.pos_a.shape[0] == 0:
        raise ValueError("pos_a must be non-empty")
    if ts.neg_a.shape[0] == 0 and ts.neg_b.shape[0] == 0 and not ts.pos_bag_b:
        raise ValueError("need at least one negative set or a bag")

    dim = ts.pos_a.shape[1]
    fixed_x = [ts.pos_a]
    fixed_y = [np.ones(ts.pos_a.shape[0])]
    for neg in (ts.neg_a, ts.neg_b):
        if neg.shape[0]:
            fixed_x.append(neg)
            fixed_y.append(-np.ones(neg.shape[0]))

    if not ts.pos_bag_b:
        w, v = _solve_soft_margin(np.concatenate(fixed_x), np.concatenate(fixed_y), c)
        return DiscriminativeModel(w=w, v=float(v))

    bag_x = [np.asarray(snaps, dtype=float).reshape(-1, dim) for _, snaps in ts.pos_bag_b]
    positive = 0  # bag order is best-cost first, so start at the best candidate
    w = np.zeros(dim)
    v = 0.0
    converged = False
    for _ in range(MIL_MAX_ROUNDS):
        ys = [np.full(b.shape[0], 1.0 if t == positive else -1.0) for t, b in enumerate(bag_x)]
        x = np.concatenate(fixed_x + bag_x)
        y = np.concatenate(fixed_y + ys)
        w, v = _solve_soft_margin(x, y, c)
        scores = np.array([float(np.mean(b @ w + v)) for b in bag_x])
        imputed = int(np.argmax(scores))
        if imputed == positive:
            converged = True
            break
        positive = imputed
    return DiscriminativeModel(w=w, v=float(v), converged=converged)


def discriminative_cost(m: DiscriminativeModel, b: Track) -> float:
    """Mean model score over the track's sampled snapshots (higher = more
    similar; objective assembly negates before squashing)."""
    snaps = sample_snapshots(b)
    if snaps.shape[1] != m.w.shape[0]:
        raise ValueError(f"feature dimension mismatch: model {m.w.shape[0]}, track {snaps.shape[1]}")
    return float(np.mean(m.score(snaps)))
