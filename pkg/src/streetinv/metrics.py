"""Evaluation metrics: pairwise matching, clustering quality, and 3D
identification / localization accuracy.

Pairwise precision/recall/F1 count unordered observation pairs (strict
upper triangle of the binary matrices). Clustering quality uses the
entropy-based homogeneity / completeness / V-measure family. The 3D level
matches predicted centers to ground-truth centers one-to-one within a
distance tolerance and reports identification rates plus the mean
localization error over the matched pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ContingencyTable",
    "MatchCounts",
    "CategoryMetrics",
    "EvaluationReport",
    "pairwise_metrics",
    "clustering_metrics",
    "identification_metrics",
    "build_report",
]


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class ContingencyTable:
    """Joint counts between predicted clusters and ground-truth objects."""

    counts: np.ndarray  # (n_clusters, n_objects)
    cluster_totals: np.ndarray
    object_totals: np.ndarray
    total: int

    @classmethod
    def from_labels(cls, y, c) -> "ContingencyTable":
        """Build the table from true labels `y` and cluster assignments `c`."""
        y = list(y)
        c = list(c)
        if len(y) != len(c) or not y:
            raise ValueError("label sequences must be nonempty and of equal length")
        object_index = {label: i for i, label in enumerate(dict.fromkeys(y))}
        cluster_index = {label: i for i, label in enumerate(dict.fromkeys(c))}
        counts = np.zeros((len(cluster_index), len(object_index)), dtype=int)
        for yi, ci in zip(y, c):
            counts[cluster_index[ci], object_index[yi]] += 1
        return cls(
            counts=counts,
            cluster_totals=counts.sum(axis=1),
            object_totals=counts.sum(axis=0),
            total=len(y),
        )


def _entropy(totals: np.ndarray, n: int) -> float:
    p = totals[totals > 0] / n
    return float(-(p * np.log(p)).sum())


def _rate(hits: int, denominator: int, complementary_errors: int) -> float:
    """Precision/recall with the zero-denominator convention.

    An empty denominator scores 0 when the complementary error count is
    positive (there was something to get wrong) and 1 otherwise.
    """
    if denominator == 0:
        return 0.0 if complementary_errors > 0 else 1.0
    return hits / denominator


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _validate_binary_matrix(name: str, m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.any(np.diagonal(m)):
        raise ValueError(f"{name} must have a zero diagonal")
    if not np.array_equal(m, m.T):
        raise ValueError(f"{name} must be symmetric")


def _pairwise_counts(y_true: np.ndarray, y_pred: np.ndarray) -> MatchCounts:
    upper = np.triu_indices(y_true.shape[0], k=1)
    t = y_true[upper].astype(bool)
    p = y_pred[upper].astype(bool)
    return MatchCounts(
        tp=int(np.sum(t & p)),
        fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)),
    )


def pairwise_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[float, float, float]:
    """Precision, recall, and F1 over unordered observation pairs.

    Both inputs are symmetric binary matrices with zero diagonals; entry
    (i, j) says whether observations i and j belong to the same object.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("matrices must have equal shape")
    _validate_binary_matrix("y_true", y_true)
    _validate_binary_matrix("y_pred", y_pred)
    counts = _pairwise_counts(y_true, y_pred)
    precision = _rate(counts.tp, counts.tp + counts.fp, counts.fn)
    recall = _rate(counts.tp, counts.tp + counts.fn, counts.fp)
    return precision, recall, _f1(precision, recall)


def clustering_metrics(y, c) -> tuple[float, float, float]:
    """Homogeneity, completeness, and V-measure of a cluster assignment.

    Entropies use the natural logarithm. Homogeneity is 1 when the true
    labeling carries no entropy, completeness is 1 when the clustering
    carries none, and V is 0 when both scores are 0.
    """
    table = ContingencyTable.from_labels(y, c)
    n = table.total
    h_y = _entropy(table.object_totals, n)
    h_c = _entropy(table.cluster_totals, n)

    h_y_given_c = 0.0
    h_c_given_y = 0.0
    for k in range(table.counts.shape[0]):
        for m in range(table.counts.shape[1]):
            n_km = table.counts[k, m]
            if n_km == 0:
                continue
            h_y_given_c -= (n_km / n) * math.log(n_km / table.cluster_totals[k])
            h_c_given_y -= (n_km / n) * math.log(n_km / table.object_totals[m])

    homogeneity = 1.0 - h_y_given_c / h_y if h_y > 0.0 else 1.0
    completeness = 1.0 - h_c_given_y / h_c if h_c > 0.0 else 1.0
    if homogeneity + completeness == 0.0:
        v_measure = 0.0
    else:
        v_measure = 2.0 * homogeneity * completeness / (homogeneity + completeness)
    return homogeneity, completeness, v_measure


def _greedy_mutual_pairs(
    pred: list[np.ndarray], gt: list[np.ndarray], tol: float
) -> list[tuple[int, int, float]]:
    """One-to-one pairing by repeatedly taking the globally closest pair.

    Only pairs within `tol` are eligible. The globally closest remaining
    pair is always mutually nearest, so this realizes mutual-nearest
    pairing deterministically (ties broken by indices).
    """
    candidates = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            d = float(np.linalg.norm(p - g))
            if d < tol:
                candidates.append((d, i, j))
    candidates.sort()
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    pairs = []
    for d, i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        pairs.append((i, j, d))
        used_pred.add(i)
        used_gt.add(j)
    return pairs


def _identification_match(
    pred: list[tuple[np.ndarray, str]],
    gt: list[tuple[np.ndarray, str]],
    tol: float,
) -> tuple[MatchCounts, list[float]]:
    categories = sorted({c for _, c in pred} | {c for _, c in gt})
    counts = MatchCounts()
    distances: list[float] = []
    for category in categories:
        p_centers = [np.asarray(c, dtype=float) for c, cat in pred if cat == category]
        g_centers = [np.asarray(c, dtype=float) for c, cat in gt if cat == category]
        pairs = _greedy_mutual_pairs(p_centers, g_centers, tol)
        counts.tp += len(pairs)
        counts.fp += len(p_centers) - len(pairs)
        counts.fn += len(g_centers) - len(pairs)
        distances.extend(d for _, _, d in pairs)
    return counts, distances


def identification_metrics(
    pred: list[tuple[np.ndarray, str]],
    gt: list[tuple[np.ndarray, str]],
    tol: float = 1.0,
) -> tuple[float, float, float, float | None]:
    """Identification precision/recall/F1 and mean localization error.

    Predictions and ground truths are (center, category) tuples; matching
    is one-to-one within each category under the distance tolerance. The
    localization error averages distances over matched pairs and is None
    when nothing matched.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    counts, distances = _identification_match(pred, gt, tol)
    precision = _rate(counts.tp, counts.tp + counts.fp, counts.fn)
    recall = _rate(counts.tp, counts.tp + counts.fn, counts.fp)
    loc_err = float(np.mean(distances)) if distances else None
    return precision, recall, _f1(precision, recall), loc_err


@dataclass
class CategoryMetrics:
    """All metric values for one category (or the aggregate)."""

    pre_mat: float = 0.0
    rec_mat: float = 0.0
    f1_mat: float = 0.0
    homogeneity: float = 0.0
    completeness: float = 0.0
    v_measure: float = 0.0
    pre_idf: float = 0.0
    rec_idf: float = 0.0
    f1_idf: float = 0.0
    loc_err: float | None = None
    counts_mat: MatchCounts = field(default_factory=MatchCounts)
    counts_idf: MatchCounts = field(default_factory=MatchCounts)


@dataclass
class EvaluationReport:
    """Per-category and aggregate metrics for one pipeline run."""

    aggregate: CategoryMetrics
    per_category: dict[str, CategoryMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def bundle(m: CategoryMetrics) -> dict:
            return {
                "pre_mat": m.pre_mat,
                "rec_mat": m.rec_mat,
                "f1_mat": m.f1_mat,
                "homogeneity": m.homogeneity,
                "completeness": m.completeness,
                "v_measure": m.v_measure,
                "pre_idf": m.pre_idf,
                "rec_idf": m.rec_idf,
                "f1_idf": m.f1_idf,
                "loc_err": m.loc_err,
                "counts_mat": {"tp": m.counts_mat.tp, "fp": m.counts_mat.fp, "fn": m.counts_mat.fn},
                "counts_idf": {"tp": m.counts_idf.tp, "fp": m.counts_idf.fp, "fn": m.counts_idf.fn},
            }

        return {
            "aggregate": bundle(self.aggregate),
            "per_category": {k: bundle(v) for k, v in sorted(self.per_category.items())},
        }

    def to_text(self) -> str:
        header = (
            f"{'category':<20} {'pre_mat':>8} {'rec_mat':>8} {'f1_mat':>8} "
            f"{'homo':>8} {'comp':>8} {'v_meas':>8} "
            f"{'pre_idf':>8} {'rec_idf':>8} {'f1_idf':>8} {'loc_err':>8}"
        )
        lines = [header, "-" * len(header)]

        def row(name: str, m: CategoryMetrics) -> str:
            loc = f"{m.loc_err:.4f}" if m.loc_err is not None else "-"
            return (
                f"{name:<20} {m.pre_mat:>8.4f} {m.rec_mat:>8.4f} {m.f1_mat:>8.4f} "
                f"{m.homogeneity:>8.4f} {m.completeness:>8.4f} {m.v_measure:>8.4f} "
                f"{m.pre_idf:>8.4f} {m.rec_idf:>8.4f} {m.f1_idf:>8.4f} {loc:>8}"
            )

        for name in sorted(self.per_category):
            lines.append(row(name, self.per_category[name]))
        lines.append("-" * len(header))
        lines.append(row("ALL", self.aggregate))
        return "\n".join(lines) + "\n"


def _metrics_slice(
    y_true: np.ndarray,
    y_pred: np.ndarray,
    true_labels: list,
    pred_labels: list,
    pred_objects: list[tuple[np.ndarray, str]],
    gt_objects: list[tuple[np.ndarray, str]],
    tol: float,
) -> CategoryMetrics:
    m = CategoryMetrics()
    if len(true_labels) > 0:
        m.counts_mat = _pairwise_counts(y_true, y_pred)
        m.pre_mat = _rate(m.counts_mat.tp, m.counts_mat.tp + m.counts_mat.fp, m.counts_mat.fn)
        m.rec_mat = _rate(m.counts_mat.tp, m.counts_mat.tp + m.counts_mat.fn, m.counts_mat.fp)
        m.f1_mat = _f1(m.pre_mat, m.rec_mat)
        m.homogeneity, m.completeness, m.v_measure = clustering_metrics(true_labels, pred_labels)
    m.counts_idf, distances = _identification_match(pred_objects, gt_objects, tol)
    m.pre_idf = _rate(m.counts_idf.tp, m.counts_idf.tp + m.counts_idf.fp, m.counts_idf.fn)
    m.rec_idf = _rate(m.counts_idf.tp, m.counts_idf.tp + m.counts_idf.fn, m.counts_idf.fp)
    m.f1_idf = _f1(m.pre_idf, m.rec_idf)
    m.loc_err = float(np.mean(distances)) if distances else None
    return m


def build_report(
    obs_categories: list[str],
    y_true: np.ndarray,
    y_pred: np.ndarray,
    true_labels: list,
    pred_labels: list,
    pred_objects: list[tuple[np.ndarray, str]],
    gt_objects: list[tuple[np.ndarray, str]],
    tol: float = 1.0,
) -> EvaluationReport:
    """Assemble the full report, per category and aggregated.

    `obs_categories`, `true_labels`, and `pred_labels` are aligned with
    the rows of the binary matrices. Category slices restrict matrices and
    labels to that category's observations; identification metrics are
    already category-gated by construction.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if not (len(obs_categories) == len(true_labels) == len(pred_labels) == y_true.shape[0]):
        raise ValueError("per-observation inputs must be aligned")
    aggregate = _metrics_slice(
        y_true, y_pred, true_labels, pred_labels, pred_objects, gt_objects, tol
    )
    per_category: dict[str, CategoryMetrics] = {}
    categories = sorted(
        set(obs_categories) | {c for _, c in pred_objects} | {c for _, c in gt_objects}
    )
    for category in categories:
        idx = [i for i, c in enumerate(obs_categories) if c == category]
        sel = np.ix_(idx, idx)
        per_category[category] = _metrics_slice(
            y_true[sel],
            y_pred[sel],
            [true_labels[i] for i in idx],
            [pred_labels[i] for i in idx],
            [(c, cat) for c, cat in pred_objects if cat == category],
            [(c, cat) for c, cat in gt_objects if cat == category],
            tol,
        )
    return EvaluationReport(aggregate=aggregate, per_category=per_category)
