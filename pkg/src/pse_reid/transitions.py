"""Environmental model: where people go between cameras and how long it takes.

Destination is a row-stochastic matrix over (exit gate, entry gate) pairs.
Travel time per gate pair is a density: initialized uniform over [0, tau],
re-fitted as a 1-D Gaussian mixture (component count picked by BIC) from
matched pairs, and blended across refinement rounds with a fixed momentum so
one noisy round cannot wipe out the accumulated estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trackdata import DEFAULT_TAU, Hypothesis, Scenario, nearest_gate

VARIANCE_FLOOR = 1e-4
MAX_COMPONENTS = 5
DEFAULT_MOMENTUM = 0.15
DEFAULT_KEEP_QUANTILE = 0.5
_PRUNE_WEIGHT = 1e-9


@dataclass(frozen=True)
class TravelTimeDensity:
    """Convex mixture of 1-D components, each ("gaussian", mean, var) or
    ("uniform", lo, hi). Weights sum to 1."""

    weights: tuple[float, ...]
    kinds: tuple[str, ...]
    params: tuple[tuple[float, float], ...]

    @staticmethod
    def uniform(lo: float, hi: float) -> "TravelTimeDensity":
        return TravelTimeDensity(weights=(1.0,), kinds=("uniform",), params=((float(lo), float(hi)),))

    @staticmethod
    def gaussian_mixture(weights, means, variances) -> "TravelTimeDensity":
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        return TravelTimeDensity(
            weights=tuple(float(x) for x in w),
            kinds=("gaussian",) * len(w),
            params=tuple((float(m), float(v)) for m, v in zip(means, variances)),
        )

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x, dtype=float)
        for w, kind, (p1, p2) in zip(self.weights, self.kinds, self.params):
            if kind == "gaussian":
                out += w * np.exp(-0.5 * (x - p1) ** 2 / p2) / math.sqrt(2 * math.pi * p2)
            else:
                inside = (x >= p1) & (x <= p2)
                out += np.where(inside, w / (p2 - p1), 0.0)
        return out

    def blend(self, fresh: "TravelTimeDensity", momentum: float) -> "TravelTimeDensity":
        """Pointwise density mixing: (1 - momentum) * self + momentum * fresh."""
        weights = [w * (1.0 - momentum) for w in self.weights] + [w * momentum for w in fresh.weights]
        kinds = self.kinds + fresh.kinds
        params = self.params + fresh.params
        kept = [(w, k, p) for w, k, p in zip(weights, kinds, params) if w > _PRUNE_WEIGHT]
        total = sum(w for w, _, _ in kept)
        return TravelTimeDensity(
            weights=tuple(w / total for w, _, _ in kept),
            kinds=tuple(k for _, k, _ in kept),
            params=tuple(p for _, _, p in kept),
        )

    def gaussian_components(self) -> list[tuple[float, float, float]]:
        """(weight, mean, var) triples of the gaussian part, heaviest first."""
        comps = [
            (w, p1, p2)
            for w, k, (p1, p2) in zip(self.weights, self.kinds, self.params)
            if k == "gaussian"
        ]
        return sorted(comps, reverse=True)


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.asarray(centers)


def em_fit_gmm_1d(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-8):
    """EM for a 1-D Gaussian mixture with a variance floor.

    Returns (weights, means, variances, log_likelihood_trajectory). If an
    iteration would decrease the log-likelihood (possible when the variance
    floor binds), the previous parameters are kept and iteration stops, so
    the returned trajectory is non-decreasing.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, k, rng)
    variances = np.full(k, max(x.var() / k, VARIANCE_FLOOR))
    weights = np.full(k, 1.0 / k)
    trajectory = []

    def log_density():
        comp = (
            np.log(weights)[None, :]
            - 0.5 * np.log(2 * np.pi * variances)[None, :]
            - 0.5 * (x[:, None] - means[None, :]) ** 2 / variances[None, :]
        )
        m = comp.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(comp - m).sum(axis=1))
        return comp, lse

    comp, lse = log_density()
    trajectory.append(float(lse.sum()))
    for _ in range(max_iter):
        resp = np.exp(comp - lse[:, None])
        nk = resp.sum(axis=0) + 1e-300
        new_weights = nk / n
        new_means = (resp * x[:, None]).sum(axis=0) / nk
        new_vars = (resp * (x[:, None] - new_means[None, :]) ** 2).sum(axis=0) / nk
        new_vars = np.maximum(new_vars, VARIANCE_FLOOR)
        prev = (weights, means, variances)
        weights, means, variances = new_weights, new_means, new_vars
        comp, lse = log_density()
        ll = float(lse.sum())
        if ll < trajectory[-1] - 1e-10:
            weights, means, variances = prev
            comp, lse = log_density()
            break
        trajectory.append(ll)
        if abs(trajectory[-1] - trajectory[-2]) < tol:
            break
    return weights, means, variances, trajectory


def _bic(ll: float, k: int, n: int) -> float:
    return -2.0 * ll + (3 * k - 1) * math.log(n)


def fit_travel_time_gmm(
    samples,
    k_max: int = MAX_COMPONENTS,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
) -> TravelTimeDensity:
    """Fit a travel-time density from frame-gap samples.

    Component count is chosen by BIC over K = 1..min(k_max, n // 5). Fewer
    than 5 samples give a single floored Gaussian; no samples at all give the
    uniform prior over [0, tau].
    """
    x = np.asarray(samples, dtype=float)
    if x.size and (not np.all(np.isfinite(x)) or np.any(x < 0)):
        raise ValueError("travel-time samples must be finite and non-negative")
    n = len(x)
    if n == 0:
        return TravelTimeDensity.uniform(0.0, tau)
    if n < 5 or np.ptp(x) < 1e-12:
        return TravelTimeDensity.gaussian_mixture([1.0], [x.mean()], [max(x.var(), VARIANCE_FLOOR)])
    best = None
    for k in range(1, min(k_max, n // 5) + 1):
        weights, means, variances, trajectory = em_fit_gmm_1d(x, k, seed=seed)
        score = _bic(trajectory[-1], k, n)
        if best is None or score < best[0]:
            best = (score, weights, means, variances)
    _, weights, means, variances = best
    return TravelTimeDensity.gaussian_mixture(weights, means, variances)


@dataclass(frozen=True)
class GateTransitionModel:
    """Row-stochastic destination matrix plus per-gate-pair travel densities."""

    dest: np.ndarray  # (U_a, U_b)
    travel: dict[tuple[int, int], TravelTimeDensity]
    tau: float
    iteration: int = 0

    @staticmethod
    def uniform(u_a: int, u_b: int, tau: float = DEFAULT_TAU) -> "GateTransitionModel":
        dest = np.full((u_a, u_b), 1.0 / u_b)
        travel = {
            (ua, ub): TravelTimeDensity.uniform(0.0, tau) for ua in range(u_a) for ub in range(u_b)
        }
        return GateTransitionModel(dest=dest, travel=travel, tau=tau, iteration=0)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "tau": self.tau,
            "dest": self.dest.tolist(),
            "travel_time": [
                {
                    "exit_gate": ua,
                    "entry_gate": ub,
                    "components": [
                        {"kind": k, "weight": w, "p1": p1, "p2": p2}
                        for w, k, (p1, p2) in zip(d.weights, d.kinds, d.params)
                    ],
                }
                for (ua, ub), d in sorted(self.travel.items())
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "GateTransitionModel":
        travel = {}
        for rec in d["travel_time"]:
            comps = rec["components"]
            travel[(int(rec["exit_gate"]), int(rec["entry_gate"]))] = TravelTimeDensity(
                weights=tuple(float(c["weight"]) for c in comps),
                kinds=tuple(str(c["kind"]) for c in comps),
                params=tuple((float(c["p1"]), float(c["p2"])) for c in comps),
            )
        return GateTransitionModel(
            dest=np.asarray(d["dest"], dtype=float),
            travel=travel,
            tau=float(d["tau"]),
            iteration=int(d["iteration"]),
        )


def track_gates(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """(exit gate per camera-a track, entry gate per camera-b track)."""
    ga = np.array([nearest_gate(s.camera_a, tr.exit_point) for tr in s.tracks_a], dtype=int)
    gb = np.array([nearest_gate(s.camera_b, tr.entry_point) for tr in s.tracks_b], dtype=int)
    return ga, gb


def estimate_destination_distribution(matches, s: Scenario) -> np.ndarray:
    """Empirical destination matrix from matched pairs: row u_a holds the
    distribution over entry gates among matches exiting gate u_a. Rows with
    no observations fall back to uniform."""
    u_a, u_b = s.camera_a.n_gates, s.camera_b.n_gates
    counts = np.zeros((u_a, u_b))
    ga, gb = track_gates(s)
    for m in matches:
        counts[ga[m.i_a], gb[m.j_b]] += 1.0
    row_sums = counts.sum(axis=1, keepdims=True)
    dest = np.where(row_sums > 0, counts / np.maximum(row_sums, 1.0), 1.0 / u_b)
    return dest


def transition_cost(m: Hypothesis, model: GateTransitionModel, s: Scenario) -> float:
    """-p(exit gate, entry gate) * q(travel time | gates); more negative is
    a better-supported match, zero when the destination is impossible."""
    ua = nearest_gate(s.camera_a, s.tracks_a[m.i_a].exit_point)
    ub = nearest_gate(s.camera_b, s.tracks_b[m.j_b].entry_point)
    dt = s.tracks_b[m.j_b].t_entry - s.tracks_a[m.i_a].t_exit
    p = float(model.dest[ua, ub])
    if p == 0.0:
        return 0.0
    q = float(model.travel[(ua, ub)].pdf(np.array([dt]))[0])
    return -p * q


def transition_cost_vector(
    hypotheses, model: GateTransitionModel, s: Scenario, gates=None
) -> np.ndarray:
    """`transition_cost` over a hypothesis list, grouped by gate pair."""
    if not hypotheses:
        return np.zeros(0)
    if gates is None:
        gates = track_gates(s)
    ga, gb = gates
    exits = np.array([tr.t_exit for tr in s.tracks_a], dtype=float)
    entries = np.array([tr.t_entry for tr in s.tracks_b], dtype=float)
    ii = np.array([m.i_a for m in hypotheses], dtype=int)
    jj = np.array([m.j_b for m in hypotheses], dtype=int)
    dts = entries[jj] - exits[ii]
    out = np.zeros(len(hypotheses))
    u_b = model.dest.shape[1]
    keys = ga[ii] * u_b + gb[jj]
    for key in np.unique(keys):
        mask = keys == key
        ua = int(ga[ii[mask][0]])
        ub = int(gb[jj[mask][0]])
        p = float(model.dest[ua, ub])
        if p == 0.0:
            continue
        out[mask] = -p * model.travel[(ua, ub)].pdf(dts[mask])
    return out


@dataclass
class RefinementRound:
    iteration: int
    n_matched: int
    n_kept: int
    mean_kept_cost: float
    cmc_auc: float | None


def em_refine(
    s: Scenario,
    cost_builder,
    solver,
    rounds: int,
    momentum: float = DEFAULT_MOMENTUM,
    tau: float = DEFAULT_TAU,
    keep_quantile: float = DEFAULT_KEEP_QUANTILE,
) -> tuple[GateTransitionModel, list[RefinementRound]]:
    """Alternate between matching with current costs and re-estimating the
    transition model from the high-confidence matches.

    `cost_builder(s, model)` returns (hypotheses, linear cost vector);
    `solver(s, hypotheses, costs)` returns the selected hypotheses. Each
    round keeps the best `keep_quantile` fraction of selected matches by
    cost, replaces the destination matrix outright, and momentum-blends the
    travel densities of gate pairs that received fresh samples. Gate pairs
    with no samples keep their previous density.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    model = GateTransitionModel.uniform(s.camera_a.n_gates, s.camera_b.n_gates, tau=tau)
    gates = track_gates(s)
    gt = set(s.ground_truth_pairs())
    diagnostics: list[RefinementRound] = []

    for rnd in range(1, rounds + 1):
        hyps, costs = cost_builder(s, model)
        selected = solver(s, hyps, costs)
        cost_of = {h: c for h, c in zip(hyps, costs)}
        chosen = sorted(selected, key=lambda h: (cost_of[h], h))
        n_keep = max(1, math.ceil(keep_quantile * len(chosen))) if chosen else 0
        kept = chosen[:n_keep]

        dest = estimate_destination_distribution(kept, s)
        ga, gb = gates
        samples: dict[tuple[int, int], list[float]] = {}
        for m in kept:
            dt = s.tracks_b[m.j_b].t_entry - s.tracks_a[m.i_a].t_exit
            samples.setdefault((int(ga[m.i_a]), int(gb[m.j_b])), []).append(float(dt))
        travel = dict(model.travel)
        for pair, dts in samples.items():
            fresh = fit_travel_time_gmm(dts, tau=tau)
            travel[pair] = travel[pair].blend(fresh, momentum)

        auc = None
        if gt:
            from .evaluation import cmc_linear

            report = cmc_linear(hyps, costs, sorted(gt))
            auc = report.auc_1_50
        diagnostics.append(
            RefinementRound(
                iteration=rnd,
                n_matched=len(selected),
                n_kept=len(kept),
                mean_kept_cost=float(np.mean([cost_of[h] for h in kept])) if kept else float("nan"),
                cmc_auc=auc,
            )
        )
        model = GateTransitionModel(dest=dest, travel=travel, tau=tau, iteration=rnd)
    return model, diagnostics
