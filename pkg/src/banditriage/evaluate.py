"""Metrics and statistics: recall/precision/F1 at capacity, per-week Pearson
feature correlations, and bootstrap confidence intervals on mean weekly recall.

The bootstrap resamples each week's pool with replacement to its original
size (per-record, stratified by week), recomputes the ranking per replicate,
and applies a two-sided Student-t critical value to the replicate means. The
trained model is never refit inside a replicate: the interval measures
ranking variance under resampling, not training variance.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .records import FEATURE_NAMES, Cohort
from .policy import rank_candidates
from .scoring import RiskModel, score_matrix
from .seeds import derive_seed

log = logging.getLogger(__name__)


class MetricError(Exception):
    """A metric is undefined for the given inputs."""


def _positives(pool: Mapping[int, bool]) -> set[int]:
    return {record_id for record_id, positive in pool.items() if positive}


def recall_at_k(selected: Iterable[int], pool: Mapping[int, bool]) -> float:
    """Fraction of the pool's positives captured by the selection.

    ``pool`` maps record_id -> positive?. A pool without positives yields
    0.0 (logged): dropping such periods silently would bias means upward.
    """
    selected = set(selected)
    outside = selected - pool.keys()
    if outside:
        raise MetricError(f"selected ids outside the pool: {sorted(outside)[:5]}")
    positives = _positives(pool)
    if not positives:
        log.warning("recall undefined: pool has no positives; reporting 0.0")
        return 0.0
    return len(selected & positives) / len(positives)


def precision_at_k(selected: Iterable[int], pool: Mapping[int, bool]) -> float:
    """Fraction of the selection that is positive. Empty selection is undefined."""
    selected = set(selected)
    if not selected:
        raise MetricError("precision undefined for an empty selection")
    outside = selected - pool.keys()
    if outside:
        raise MetricError(f"selected ids outside the pool: {sorted(outside)[:5]}")
    return len(selected & _positives(pool)) / len(selected)


def f1_at_k(selected: Iterable[int], pool: Mapping[int, bool]) -> float:
    """Harmonic mean 2PR/(P+R); 0.0 when P + R == 0."""
    selected = set(selected)
    p = precision_at_k(selected, pool)
    r = recall_at_k(selected, pool)
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def pearson(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Sample Pearson correlation; constant inputs are an error, not a 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"need equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise MetricError("need at least 2 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise MetricError("correlation undefined for a constant sequence")
    return float((xc @ yc) / math.sqrt(sx * sy))


@dataclass
class CorrelationTable:
    """Per-week, per-feature Pearson correlation with the positive label.

    Cells where the feature (or the label) is constant within the week are
    NaN and excluded from the per-feature median.
    """

    weeks: tuple[int, ...]
    features: tuple[str, ...]
    values: np.ndarray  # (n_weeks, n_features), NaN marks undefined cells

    def median_by_feature(self) -> dict[str, float]:
        out = {}
        for j, name in enumerate(self.features):
            column = self.values[:, j]
            defined = column[~np.isnan(column)]
            out[name] = float(np.median(defined)) if len(defined) else float("nan")
        return out

    def write_csv(self, path, *, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["week"] + list(self.features))
            for i, week in enumerate(self.weeks):
                writer.writerow(
                    [week] + ["" if np.isnan(v) else repr(float(v)) for v in self.values[i]]
                )
            medians = self.median_by_feature()
            writer.writerow(
                ["median"]
                + ["" if np.isnan(medians[f]) else repr(medians[f]) for f in self.features]
            )


def weekly_correlations(cohort: Cohort) -> CorrelationTable:
    """Correlate every feature with the positive label, week by week."""
    weeks = cohort.weeks
    values = np.full((len(weeks), len(FEATURE_NAMES)), np.nan)
    for i, week in enumerate(weeks):
        X = cohort.week_features(week)
        y = cohort.week_labels(week).astype(float)
        for j in range(len(FEATURE_NAMES)):
            try:
                values[i, j] = pearson(X[:, j], y)
            except MetricError:
                pass  # constant cell: stays NaN, excluded from the median
    return CorrelationTable(weeks=weeks, features=FEATURE_NAMES, values=values)


# ---------------------------------------------------------------------------
# Ranked-selection recall over weeks, and the bootstrap interval on its mean.
# ---------------------------------------------------------------------------


def weekly_recall_at_k(
    cohort: Cohort,
    model: RiskModel,
    k: int,
    *,
    weeks: Sequence[int] | None = None,
    seed: int = 0,
) -> dict[int, float]:
    """recall@k per week when the model's top-k of each week's pool is tested."""
    weeks = tuple(weeks) if weeks is not None else cohort.weeks
    out = {}
    for week in weeks:
        ids = cohort.week_ids(week)
        X = cohort.week_features(week)
        y = cohort.week_labels(week)
        ranked = rank_candidates(model, ids, X, derive_seed(seed, "week", week))
        selected = set(ranked[: min(k, len(ranked))].tolist())
        pool = dict(zip(ids.tolist(), y.tolist()))
        out[week] = recall_at_k(selected, pool)
    return out


def mean_weekly_recall(
    cohort: Cohort,
    model: RiskModel,
    k: int,
    *,
    weeks: Sequence[int] | None = None,
    seed: int = 0,
) -> float:
    per_week = weekly_recall_at_k(cohort, model, k, weeks=weeks, seed=seed)
    return float(np.mean(list(per_week.values())))


@dataclass
class BootstrapResult:
    mean: float
    lo: float
    hi: float
    level: float
    k: int
    replicate_means: list[float] = field(default_factory=list)
    skipped_replicates: int = 0


def bootstrap_ci(
    cohort: Cohort,
    model: RiskModel,
    k: int,
    replicates: int = 10,
    level: float = 0.95,
    *,
    weeks: Sequence[int] | None = None,
    seed: int = 0,
) -> BootstrapResult:
    """Student-t confidence interval on mean weekly recall@k.

    Each replicate resamples every week's pool with replacement to its
    original size and recomputes the top-k recall; the interval is
    mean +/- t* s/sqrt(R) over the R replicate means. Replicates are seeded
    by replicate index, so a parallel run would reproduce the serial result.
    A replicate whose every week has zero positives is skipped and counted.
    """
    if replicates < 2:
        raise MetricError("need at least 2 bootstrap replicates")
    if not 0.0 < level < 1.0:
        raise MetricError("confidence level must lie in (0, 1)")
    weeks = tuple(weeks) if weeks is not None else cohort.weeks

    # Scores per record are fixed by the model; precompute once per week.
    per_week = []
    for week in weeks:
        X = cohort.week_features(week)
        y = cohort.week_labels(week)
        per_week.append((score_matrix(model, X), y))

    means: list[float] = []
    skipped = 0
    for r in range(replicates):
        rng = np.random.default_rng(derive_seed(seed, "bootstrap", r))
        week_recalls = []
        any_positive = False
        for scores, y in per_week:
            n = len(y)
            idx = rng.integers(0, n, size=n)
            s_res = scores[idx]
            y_res = y[idx]
            n_pos = int(y_res.sum())
            if n_pos == 0:
                week_recalls.append(0.0)
                continue
            any_positive = True
            perm = rng.permutation(n)
            order = np.argsort(-s_res[perm], kind="stable")
            top = perm[order][: min(k, n)]
            week_recalls.append(float(y_res[top].sum()) / n_pos)
        if not any_positive:
            skipped += 1
            log.warning("bootstrap replicate %d skipped: no positives in any week", r)
            continue
        means.append(float(np.mean(week_recalls)))

    if len(means) < 2:
        raise MetricError("fewer than 2 usable bootstrap replicates")
    mean = float(np.mean(means))
    s = float(np.std(means, ddof=1))
    t_crit = float(stats.t.ppf(0.5 + level / 2.0, df=len(means) - 1))
    half = t_crit * s / math.sqrt(len(means))
    return BootstrapResult(
        mean=mean,
        lo=mean - half,
        hi=mean + half,
        level=level,
        k=k,
        replicate_means=means,
        skipped_replicates=skipped,
    )


@dataclass
class MetricReport:
    """One model's metric across weeks at one capacity, with its interval.

    ``mean`` is the bootstrap replicate mean (the reported value the interval
    belongs to); ``per_week`` holds the plug-in full-pool weekly values.
    """

    model_id: str
    k: int
    per_week: dict[int, float]
    mean: float
    ci: tuple[float, float] | None = None
    level: float = 0.95

    def __post_init__(self):
        if self.ci is not None:
            lo, hi = self.ci
            if not lo <= self.mean <= hi:
                raise MetricError(f"interval ({lo}, {hi}) does not bracket {self.mean}")


def recall_report(
    cohort: Cohort,
    model: RiskModel,
    k: int,
    *,
    model_id: str = "model",
    replicates: int = 10,
    level: float = 0.95,
    weeks: Sequence[int] | None = None,
    seed: int = 0,
) -> MetricReport:
    """Weekly recall@k plus its bootstrap interval, as one report row."""
    per_week = weekly_recall_at_k(cohort, model, k, weeks=weeks, seed=seed)
    boot = bootstrap_ci(cohort, model, k, replicates=replicates, level=level,
                        weeks=weeks, seed=seed)
    return MetricReport(
        model_id=model_id,
        k=k,
        per_week=per_week,
        mean=boot.mean,
        ci=(boot.lo, boot.hi),
        level=level,
    )


def weekly_recall_table(
    cohort: Cohort,
    model: RiskModel,
    ks: Sequence[int],
    *,
    weeks: Sequence[int] | None = None,
    seed: int = 0,
) -> list[dict]:
    """Rows keyed by week with one recall column per capacity."""
    weeks = tuple(weeks) if weeks is not None else cohort.weeks
    per_k = {k: weekly_recall_at_k(cohort, model, k, weeks=weeks, seed=seed) for k in ks}
    rows = []
    for week in weeks:
        row = {"week": week, "n_tests": int(len(cohort.week_ids(week)))}
        for k in ks:
            row[f"recall@{k}"] = per_k[k][week]
        rows.append(row)
    return rows


def model_comparison_table(
    cohort: Cohort,
    models: Mapping[str, RiskModel],
    ks: Sequence[int],
    *,
    weeks: Sequence[int] | None = None,
    seed: int = 0,
) -> list[dict]:
    """One row per model: mean weekly recall and F1 at each capacity."""
    weeks = tuple(weeks) if weeks is not None else cohort.weeks
    rows = []
    for name, model in models.items():
        row: dict = {"model": name}
        for k in ks:
            recalls, f1s = [], []
            for week in weeks:
                ids = cohort.week_ids(week)
                X = cohort.week_features(week)
                y = cohort.week_labels(week)
                ranked = rank_candidates(model, ids, X, derive_seed(seed, "cmp", name, week))
                selected = set(ranked[: min(k, len(ranked))].tolist())
                pool = dict(zip(ids.tolist(), y.tolist()))
                recalls.append(recall_at_k(selected, pool))
                f1s.append(f1_at_k(selected, pool) if selected else 0.0)
            row[f"recall@{k}"] = float(np.mean(recalls))
            row[f"f1@{k}"] = float(np.mean(f1s))
        rows.append(row)
    return rows
