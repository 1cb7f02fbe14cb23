"""Optimizers over the match polytope: an exact linear baseline (Munkres,
with or without skipping), stochastic local search over the full quadratic
objective, Frank-Wolfe on its convexified relaxation, and an exhaustive
oracle for desk-size instances.

All solvers return feasible binary assignments; randomness flows from an
explicit seed only.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .objective import (
    Assignment,
    CostModel,
    convexify,
    linear_cost_matrix,
    quadratic_value,
)
from .trackdata import Hypothesis

BRUTE_FORCE_LIMIT = 8


class InstanceTooLargeError(ValueError):
    pass


class TracePoint(NamedTuple):
    step: int
    loss: float
    fscore: float | None


@dataclass
class SolverResult:
    z: Assignment
    loss: float
    iterations: int
    wall_time: float
    trace: list[TracePoint] = field(default_factory=list)
    # Diagnostic: convexified objective per Frank-Wolfe iterate.
    objective_trace: list[float] | None = None

    def pairs(self, cm: CostModel) -> list[Hypothesis]:
        return self.z.pairs(cm)


@dataclass(frozen=True)
class SLSParams:
    """Knobs of the local search: `r_max` removals per sweep, a sweep budget,
    stagnation tolerance (improvements smaller than `tol` do not count, and
    the search stops after `patience` consecutive non-improving sweeps), and
    a cap on add-combination enumeration per step."""

    r_max: int = 4
    max_sweeps: int = 150
    seed: int = 0
    tol: float = 1e-9
    patience: int = 20
    max_combinations: int = 10_000

    def __post_init__(self):
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")


@dataclass(frozen=True)
class FWParams:
    max_iters: int = 100
    gap_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.gap_tol <= 0:
            raise ValueError("gap_tol must be positive")


def munkres_assign(costs: np.ndarray, allow_skip: bool = False) -> list[tuple[int, int]]:
    """Minimum-total-cost bipartite matching on a cost matrix where +inf
    marks forbidden pairs.

    With `allow_skip`, every person may stay unmatched at zero cost, so only
    pairs that lower the total get selected. Without it, the matching has
    maximum cardinality over allowed pairs, minimizing cost among those.
    Returns sorted (row, col) pairs.
    """
    costs = np.asarray(costs, dtype=float)
    n_a, n_b = costs.shape
    if n_a == 0 or n_b == 0:
        return []
    if allow_skip:
        big = np.inf
        padded = np.full((n_a + n_b, n_b + n_a), big)
        padded[:n_a, :n_b] = costs
        padded[np.arange(n_a), n_b + np.arange(n_a)] = 0.0
        padded[n_a + np.arange(n_b), np.arange(n_b)] = 0.0
        padded[n_a:, n_b:] = 0.0
        rows, cols = linear_sum_assignment(padded)
        return sorted(
            (int(r), int(c))
            for r, c in zip(rows, cols)
            if r < n_a and c < n_b and np.isfinite(costs[r, c])
        )
    finite = costs[np.isfinite(costs)]
    big = float(np.abs(finite).sum()) + 1.0 if finite.size else 1.0
    capped = np.where(np.isfinite(costs), costs, big)
    rows, cols = linear_sum_assignment(capped)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols) if np.isfinite(costs[r, c]))


def solve_linear(cm: CostModel, allow_skip: bool = False) -> Assignment:
    """Munkres over the model's linear costs, as an Assignment."""
    pairs = munkres_assign(linear_cost_matrix(cm), allow_skip=allow_skip)
    index = cm.hypothesis_index()
    return Assignment.from_indices(cm.n_hypotheses, [index[Hypothesis(*p)] for p in pairs])


def munkres_result(cm: CostModel, allow_skip: bool = False, gt=None) -> SolverResult:
    t0 = time.perf_counter()
    assignment = solve_linear(cm, allow_skip=allow_skip)
    value = quadratic_value(cm, assignment.z.astype(float))
    trace = [TracePoint(0, value, _trace_fscore(cm, assignment, gt))]
    return SolverResult(
        z=assignment, loss=value, iterations=1, wall_time=time.perf_counter() - t0, trace=trace
    )


def _trace_fscore(cm: CostModel, assignment: Assignment, gt) -> float | None:
    if gt is None:
        return None
    from .evaluation import fscore

    selected = {tuple(cm.hypotheses[k]) for k in assignment.selected}
    return fscore(selected, gt)[2]


class _PairLookup:
    """Vectorized access to Q[p, q] over index arrays; densifies small Q."""

    def __init__(self, cm: CostModel):
        n = cm.n_hypotheses
        if n <= 3000:
            self._dense = cm.Q.toarray()
            self._map = None
        else:
            self._dense = None
            coo = cm.Q.tocoo()
            self._map = {
                (int(r), int(c)): float(v) for r, c, v in zip(coo.row, coo.col, coo.data)
            }

    def __call__(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense[p, q]
        m = self._map
        return np.fromiter(
            (m.get((int(a), int(b)), 0.0) for a, b in zip(p.ravel(), q.ravel())),
            dtype=float,
            count=p.size,
        ).reshape(p.shape)


def _occupancy(cm: CostModel, selected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows = np.zeros(cm.n_a, dtype=bool)
    cols = np.zeros(cm.n_b, dtype=bool)
    for k in selected:
        rows[cm.hypotheses[k].i_a] = True
        cols[cm.hypotheses[k].j_b] = True
    return rows, cols


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def stochastic_local_search(cm: CostModel, params: SLSParams = SLSParams(), gt=None) -> SolverResult:
    """Alternating probabilistic removal and best-combination addition around
    the incumbent, starting from the full Munkres matching on linear costs.

    Each sweep perturbs the best-so-far solution: remove r matches (sampled
    proportionally to a softmax of their loss contribution, so costly matches
    go first), then greedily add the best feasible combination of s = r+1..1
    new matches whenever it improves. The incumbent only ever improves.
    """
    t0 = time.perf_counter()
    n = cm.n_hypotheses
    rng = np.random.default_rng(params.seed)
    pair_q = _PairLookup(cm)
    ii = np.array([h.i_a for h in cm.hypotheses], dtype=int)
    jj = np.array([h.j_b for h in cm.hypotheses], dtype=int)
    order_by_cost = np.lexsort((np.arange(n), cm.L))

    def value(sel: set[int]) -> float:
        z = np.zeros(n)
        z[list(sel)] = 1.0
        return quadratic_value(cm, z)

    def coupling(sel: set[int]) -> np.ndarray:
        z = np.zeros(n)
        z[list(sel)] = 1.0
        return 2.0 * (cm.Q @ z)

    best_sel = {cm.hypothesis_index()[Hypothesis(*p)] for p in
                munkres_assign(linear_cost_matrix(cm), allow_skip=False)}
    best_loss = value(best_sel)
    trace: list[TracePoint] = []
    step = 0
    iterations = 0

    def record():
        assignment = Assignment.from_indices(n, best_sel)
        trace.append(TracePoint(step, best_loss, _trace_fscore(cm, assignment, gt)))

    record()
    stagnant = 0
    for _ in range(params.max_sweeps):
        improved = False
        for r in range(0, params.r_max + 1):
            iterations += 1
            step += 1
            sel = set(best_sel)
            if r > 0 and sel:
                cpl = coupling(sel)
                pool = sorted(sel)
                for _ in range(min(r, len(pool))):
                    contrib = cm.L[pool] + cpl[pool]
                    pick = int(rng.choice(len(pool), p=_softmax(contrib)))
                    removed = pool.pop(pick)
                    sel.discard(removed)
                    if not pool:
                        break
                    cpl = coupling(sel)
            cur_loss = value(sel)
            for s in range(r + 1, 0, -1):
                add = _best_addition(cm, sel, s, pair_q, ii, jj, order_by_cost, params.max_combinations)
                if add is None:
                    continue
                delta, combo = add
                if delta < 0:
                    sel |= set(combo)
                    cur_loss += delta
            if cur_loss < best_loss - params.tol:
                best_loss = cur_loss
                best_sel = set(sel)
                improved = True
            record()
        if improved:
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= params.patience:
                break

    assignment = Assignment.from_indices(n, best_sel)
    final = quadratic_value(cm, assignment.z.astype(float))
    return SolverResult(
        z=assignment,
        loss=final,
        iterations=iterations,
        wall_time=time.perf_counter() - t0,
        trace=trace,
    )


def _best_addition(cm, sel, s, pair_q, ii, jj, order_by_cost, max_combinations):
    """Lowest-delta feasible combination of `s` additions, or None.

    Candidates are scanned in ascending linear cost; enumeration is capped.
    Ties resolve to the first (lexicographically earliest) combination.
    """
    rows, cols = _occupancy(cm, np.fromiter(sel, dtype=int, count=len(sel)))
    free_mask = ~(rows[ii] | cols[jj])
    free = order_by_cost[free_mask[order_by_cost]]
    if len(free) < s:
        return None
    cpl = 2.0 * (cm.Q @ _indicator(cm.n_hypotheses, sel))
    if s == 1:
        cand = free[:max_combinations]
        deltas = cm.L[cand] + cpl[cand]
        k = int(np.argmin(deltas))
        return float(deltas[k]), (int(cand[k]),)
    combos = np.array(
        list(itertools.islice(itertools.combinations(free.tolist(), s), max_combinations)),
        dtype=int,
    )
    if combos.size == 0:
        return None
    crows = ii[combos]
    ccols = jj[combos]
    feas = np.ones(len(combos), dtype=bool)
    for a in range(s):
        for b in range(a + 1, s):
            feas &= (crows[:, a] != crows[:, b]) & (ccols[:, a] != ccols[:, b])
    if not feas.any():
        return None
    combos = combos[feas]
    deltas = cm.L[combos].sum(axis=1) + cpl[combos].sum(axis=1)
    for a in range(s):
        for b in range(a + 1, s):
            deltas += 2.0 * pair_q(combos[:, a], combos[:, b])
    k = int(np.argmin(deltas))
    return float(deltas[k]), tuple(int(x) for x in combos[k])


def _indicator(n: int, sel) -> np.ndarray:
    z = np.zeros(n)
    z[list(sel)] = 1.0
    return z


def brute_force_optimum(cm: CostModel) -> SolverResult:
    """Exact minimum over every feasible subset of hypotheses, including the
    empty and all partial assignments. Guarded to n_a, n_b <= 8."""
    if cm.n_a > BRUTE_FORCE_LIMIT or cm.n_b > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(
            f"brute force limited to {BRUTE_FORCE_LIMIT} tracks per camera, "
            f"got {cm.n_a} x {cm.n_b}"
        )
    t0 = time.perf_counter()
    n = cm.n_hypotheses
    q_rows = [cm.Q[[k], :].tocoo() for k in range(n)]
    rows_idx = [r.col.astype(int) for r in q_rows]
    rows_val = [r.data for r in q_rows]
    coupling = np.zeros(n)
    row_used = np.zeros(cm.n_a, dtype=bool)
    col_used = np.zeros(cm.n_b, dtype=bool)
    best = {"loss": 0.0, "sel": ()}
    sel: list[int] = []
    nodes = 0

    def rec(k: int, cur: float):
        nonlocal nodes
        nodes += 1
        if k == n:
            if cur < best["loss"] - 1e-15:
                best["loss"] = cur
                best["sel"] = tuple(sel)
            return
        rec(k + 1, cur)
        h = cm.hypotheses[k]
        if row_used[h.i_a] or col_used[h.j_b]:
            return
        delta = cm.L[k] + coupling[k]
        row_used[h.i_a] = col_used[h.j_b] = True
        coupling[rows_idx[k]] += 2.0 * rows_val[k]
        sel.append(k)
        rec(k + 1, cur + delta)
        sel.pop()
        coupling[rows_idx[k]] -= 2.0 * rows_val[k]
        row_used[h.i_a] = col_used[h.j_b] = False

    rec(0, 0.0)
    assignment = Assignment.from_indices(n, best["sel"])
    return SolverResult(
        z=assignment,
        loss=quadratic_value(cm, assignment.z.astype(float)),
        iterations=nodes,
        wall_time=time.perf_counter() - t0,
    )


def _round_fractional(cm: CostModel, z: np.ndarray) -> Assignment:
    """Project a fractional point to a feasible binary assignment by
    maximum-weight matching on the fractional values."""
    mat = np.full((cm.n_a, cm.n_b), np.inf)
    for k, h in enumerate(cm.hypotheses):
        mat[h.i_a, h.j_b] = -z[k]
    pairs = munkres_assign(mat, allow_skip=True)
    index = cm.hypothesis_index()
    keep = [index[Hypothesis(*p)] for p in pairs if z[index[Hypothesis(*p)]] > 1e-12]
    return Assignment.from_indices(cm.n_hypotheses, keep)


def frank_wolfe(cm: CostModel, params: FWParams = FWParams(), gt=None) -> SolverResult:
    """Conditional gradient with away steps on the convexified objective,
    rounding every iterate and returning the best rounded solution under the
    original (non-convexified) loss.

    The linear subproblem is exact: the relaxed constraint polytope is the
    doubly substochastic set, whose vertices are partial matchings, so
    argmin <h, grad> is a min-cost matching with skipping allowed.
    """
    t0 = time.perf_counter()
    orig = cm
    cvx = cm if cm.convexified else convexify(cm)
    n = cm.n_hypotheses
    index = cm.hypothesis_index()
    ii = np.array([h.i_a for h in cm.hypotheses], dtype=int)
    jj = np.array([h.j_b for h in cm.hypotheses], dtype=int)

    def vertex_from_costs(costs_vec: np.ndarray, allow_skip: bool) -> np.ndarray:
        mat = np.full((cm.n_a, cm.n_b), np.inf)
        mat[ii, jj] = costs_vec
        pairs = munkres_assign(mat, allow_skip=allow_skip)
        v = np.zeros(n)
        v[[index[Hypothesis(*p)] for p in pairs]] = 1.0
        return v

    best_assignment = Assignment.from_indices(n, [])
    best_loss = 0.0

    def consider(vec: np.ndarray) -> None:
        nonlocal best_assignment, best_loss
        assignment = Assignment(z=vec.astype(np.int8))
        val = quadratic_value(orig, vec)
        if val < best_loss:
            best_loss = val
            best_assignment = assignment

    # Warm start at the full linear matching, like the local search; the
    # convexified objective on its own is minimized by the empty solution.
    # The skip variant (the linear-relaxation optimum vertex) seeds the
    # candidate pool as well.
    consider(vertex_from_costs(cm.L, allow_skip=True))
    z = vertex_from_costs(cm.L, allow_skip=False)
    consider(z)
    active: dict[tuple, np.ndarray] = {tuple(np.nonzero(z)[0].tolist()): z.copy()}

    trace: list[TracePoint] = [TracePoint(0, best_loss, _trace_fscore(orig, best_assignment, gt))]
    objective_trace = [quadratic_value(cvx, z)]

    iterations = 0
    for k in range(1, params.max_iters + 1):
        iterations = k
        grad = 2.0 * (cvx.Q @ z) + cvx.L
        h = vertex_from_costs(grad, allow_skip=True)
        gap = float(grad @ (z - h))
        consider(h)  # visited vertices are feasible binary solutions
        if gap <= params.gap_tol:
            break
        d_fw = h - z
        slope_fw = float(grad @ d_fw)

        d = d_fw
        lam_max = 1.0
        if active:
            scores = {key: float(grad @ v) for key, v in active.items()}
            away_key = max(scores, key=lambda key: (scores[key], key))
            f = active[away_key]
            d_aw = z - f
            slope_aw = float(grad @ d_aw)
            if slope_aw < slope_fw and slope_aw < 0:
                feasible = _max_feasible_step(cm, ii, jj, z, d_aw)
                if feasible > 1e-12:
                    d = d_aw
                    lam_max = min(1.0, feasible)

        denom = 2.0 * float(d @ (cvx.Q @ d))
        if denom <= 0:
            lam = lam_max
        else:
            lam = min(lam_max, max(0.0, -float(grad @ d) / denom))
        z = z + lam * d
        active[tuple(np.nonzero(h)[0].tolist())] = h

        rounded = _round_fractional(orig, z)
        consider(rounded.z.astype(float))
        trace.append(TracePoint(k, best_loss, _trace_fscore(orig, best_assignment, gt)))
        objective_trace.append(quadratic_value(cvx, z))

    return SolverResult(
        z=best_assignment,
        loss=quadratic_value(orig, best_assignment.z.astype(float)),
        iterations=iterations,
        wall_time=time.perf_counter() - t0,
        trace=trace,
        objective_trace=objective_trace,
    )


def _max_feasible_step(cm: CostModel, ii, jj, z: np.ndarray, d: np.ndarray) -> float:
    """Largest lambda in [0, 1] with z + lambda * d inside the relaxed
    polytope (coords >= 0, row and column sums <= 1)."""
    lam = 1.0
    neg = d < -1e-15
    if neg.any():
        lam = min(lam, float(np.min(z[neg] / -d[neg])))
    for idx, size in ((ii, cm.n_a), (jj, cm.n_b)):
        sums_z = np.bincount(idx, weights=z, minlength=size)
        sums_d = np.bincount(idx, weights=d, minlength=size)
        busy = sums_d > 1e-15
        if busy.any():
            lam = min(lam, float(np.min((1.0 - sums_z[busy]) / sums_d[busy])))
    return max(0.0, lam)


def closed_form_step(cm_convex: CostModel, z: np.ndarray, h: np.ndarray) -> float:
    """Exact line-search step toward vertex `h` for the convexified
    objective, clipped to [0, 1]; 1 when the quadratic term vanishes."""
    grad = 2.0 * (cm_convex.Q @ z) + cm_convex.L
    d = h - z
    denom = 2.0 * float(d @ (cm_convex.Q @ d))
    if denom <= 0:
        return 1.0
    return float(np.clip(-float(grad @ d) / denom, 0.0, 1.0))
