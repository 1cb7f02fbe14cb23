"""Ranking and assignment metrics: CMC curves (linear costs, and the
quadratic variant that fixes all other ground-truth matches), AUC over rank
ranges, and precision/recall/F-score of hard one-to-one assignments.

Ground truth enters as (i_a, j_b) track-index pairs; hypotheses are the
candidate (i_a, j_b) pairs costs are defined on.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_RANKS = 100  # CMC is always reported out to at least this rank


@dataclass
class QueryRanking:
    i_a: int
    true_j: int
    rank: int | None  # 1-based; None when the true match is not a candidate


@dataclass
class EvaluationReport:
    cmc: np.ndarray  # accuracy at rank r, index 0 = rank 1
    auc_1_50: float
    auc_1_100: float
    per_query: list[QueryRanking] = field(default_factory=list)
    precision: float | None = None
    recall: float | None = None
    fscore: float | None = None

    def to_dict(self) -> dict:
        return {
            "cmc": self.cmc.tolist(),
            "auc_1_50": self.auc_1_50,
            "auc_1_100": self.auc_1_100,
            "per_query": [
                {"i_a": q.i_a, "true_j": q.true_j, "rank": q.rank} for q in self.per_query
            ],
            "precision": self.precision,
            "recall": self.recall,
            "fscore": self.fscore,
        }

    @staticmethod
    def from_dict(d: dict) -> "EvaluationReport":
        return EvaluationReport(
            cmc=np.asarray(d["cmc"], dtype=float),
            auc_1_50=float(d["auc_1_50"]),
            auc_1_100=float(d["auc_1_100"]),
            per_query=[QueryRanking(int(q["i_a"]), int(q["true_j"]), q["rank"]) for q in d["per_query"]],
            precision=d.get("precision"),
            recall=d.get("recall"),
            fscore=d.get("fscore"),
        )


def _report_from_ranks(rankings: list[QueryRanking], max_candidates: int) -> EvaluationReport:
    n_ranks = max(MIN_RANKS, max_candidates)
    cmc = np.zeros(n_ranks)
    n_queries = len(rankings)
    for q in rankings:
        if q.rank is not None:
            cmc[q.rank - 1 :] += 1.0
    if n_queries:
        cmc /= n_queries
    return EvaluationReport(
        cmc=cmc,
        auc_1_50=float(cmc[:50].mean()),
        auc_1_100=float(cmc[:100].mean()),
        per_query=rankings,
    )


def _rank_queries(per_query_scores, gt) -> tuple[list[QueryRanking], int]:
    """Rank candidates of each ground-truth query by ascending score, ties by
    candidate index. `per_query_scores` maps i_a -> list of (j_b, score)."""
    rankings = []
    max_cands = 0
    for i_a, true_j in sorted(gt):
        cands = per_query_scores.get(i_a, [])
        max_cands = max(max_cands, len(cands))
        order = sorted(cands, key=lambda pair: (pair[1], pair[0]))
        rank = None
        for pos, (j, _) in enumerate(order, start=1):
            if j == true_j:
                rank = pos
                break
        rankings.append(QueryRanking(i_a=i_a, true_j=true_j, rank=rank))
    return rankings, max_cands


def cmc_linear(hypotheses, costs, gt) -> EvaluationReport:
    """CMC over ground-truth queries using per-hypothesis linear costs.

    A query whose true match is outside the candidate set counts as never
    matched at every rank.
    """
    costs = np.asarray(costs, dtype=float)
    per_query: dict[int, list[tuple[int, float]]] = {}
    for h, c in zip(hypotheses, costs):
        per_query.setdefault(h[0], []).append((h[1], float(c)))
    rankings, max_cands = _rank_queries(per_query, gt)
    return _report_from_ranks(rankings, max_cands)


def cmc_quadratic(cm, gt) -> EvaluationReport:
    """CMC that scores each candidate with the quadratic couplings it would
    pick up if every other ground-truth match were already selected.

    score(m') = L[m'] + 2 * sum over fixed matches Q[m', fixed]; the fixed
    matches' mutual couplings are a per-query constant and are omitted.
    Reduces to `cmc_linear` when Q is zero.
    """
    gt = sorted(gt)
    index = {tuple(h): k for k, h in enumerate(cm.hypotheses)}
    gt_hyp = {pair: index.get(pair) for pair in gt}
    per_query: dict[int, list[tuple[int, float]]] = {}
    by_query: dict[int, list[int]] = {}
    for k, h in enumerate(cm.hypotheses):
        by_query.setdefault(h.i_a, []).append(k)
    for i_a, true_j in gt:
        fixed = [
            gt_hyp[(ia, jb)]
            for ia, jb in gt
            if ia != i_a and gt_hyp[(ia, jb)] is not None
        ]
        z_fixed = np.zeros(cm.n_hypotheses)
        z_fixed[fixed] = 1.0
        coupling = 2.0 * (cm.Q @ z_fixed)
        scores = []
        for k in by_query.get(i_a, []):
            scores.append((cm.hypotheses[k].j_b, float(cm.L[k] + coupling[k])))
        per_query[i_a] = scores
    rankings, max_cands = _rank_queries(per_query, gt)
    return _report_from_ranks(rankings, max_cands)


def fscore(selected, gt) -> tuple[float, float, float]:
    """Precision, recall and F-score of a selected pair set against ground
    truth. Empty selection scores zero precision and F."""
    sel = {tuple(p) for p in selected}
    truth = {tuple(p) for p in gt}
    correct = len(sel & truth)
    precision = correct / len(sel) if sel else 0.0
    recall = correct / len(truth) if truth else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def emit_report(report: EvaluationReport, path) -> None:
    """Write the report as CSV (one row per rank plus a summary row) and a
    JSON mirror alongside with the same stem."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["row", "rank", "cmc", "precision", "recall", "fscore", "auc_1_50", "auc_1_100"]
        )
        for r, acc in enumerate(report.cmc, start=1):
            writer.writerow(["rank", r, f"{acc:.10g}", "", "", "", "", ""])
        writer.writerow(
            [
                "summary",
                "",
                "",
                _fmt(report.precision),
                _fmt(report.recall),
                _fmt(report.fscore),
                f"{report.auc_1_50:.10g}",
                f"{report.auc_1_100:.10g}",
            ]
        )
    path.with_suffix(".json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.10g}"


def read_report_csv(path) -> dict:
    """Parse an emitted CSV back into {'cmc': array, summary fields...}."""
    cmc = []
    summary: dict = {}
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            if row["row"] == "rank":
                cmc.append(float(row["cmc"]))
            else:
                for key in ("precision", "recall", "fscore", "auc_1_50", "auc_1_100"):
                    summary[key] = float(row[key]) if row[key] else None
    summary["cmc"] = np.asarray(cmc)
    return summary
