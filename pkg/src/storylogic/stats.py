"""Agreement and correlation statistics for the benchmark.

Krippendorff's alpha uses the ordinal distance metric over the coincidence
matrix; Kendall's tau is the tie-corrected tau-b; Pearson is the sample
correlation. Each has an independent brute-force oracle in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats


class StatsError(ValueError):
    """Raised when a statistic is undefined for the given input."""


@dataclass(frozen=True)
class RatingTable:
    """Items x raters matrix of ordinal ratings; None marks a missing cell.

    ``scale`` lists the ordered categories; every present rating must be a
    member. Items with fewer than two ratings are excluded from alpha.
    """

    values: tuple[tuple[Any, ...], ...]
    scale: tuple[Any, ...]

    def __post_init__(self) -> None:
        if len(set(self.scale)) != len(self.scale) or not self.scale:
            raise StatsError("scale must be a non-empty list of distinct ordered categories")
        allowed = set(self.scale)
        present = 0
        for i, row in enumerate(self.values):
            for v in row:
                if v is None:
                    continue
                if v not in allowed:
                    raise StatsError(f"item {i}: rating {v!r} not in scale {self.scale}")
                present += 1
        if len(self.values) < 2 or present < 2:
            raise StatsError("need at least 2 items and 2 ratings overall")

    def pairable_rows(self) -> list[list[int]]:
        """Rows with >=2 ratings, as indices into ``scale``."""
        rank = {v: i for i, v in enumerate(self.scale)}
        rows = []
        for row in self.values:
            got = [rank[v] for v in row if v is not None]
            if len(got) >= 2:
                rows.append(got)
        return rows


def _ordinal_delta_sq(marginals: np.ndarray) -> np.ndarray:
    """delta^2[c, k] = (sum_{g=c..k} n_g - (n_c + n_k) / 2)^2."""
    m = len(marginals)
    csum = np.concatenate([[0.0], np.cumsum(marginals)])
    out = np.zeros((m, m))
    for c in range(m):
        for k in range(c, m):
            between = csum[k + 1] - csum[c]
            d = between - (marginals[c] + marginals[k]) / 2.0
            out[c, k] = out[k, c] = d * d
    return out


def krippendorff_alpha_ordinal(table: RatingTable) -> float:
    """alpha = 1 - D_o / D_e with the ordinal metric; 1.0 when both are 0."""
    rows = table.pairable_rows()
    if not rows:
        raise StatsError("no items with at least 2 ratings")
    m = len(table.scale)

    # coincidence matrix: each unit contributes its ordered value pairs,
    # weighted by 1 / (m_u - 1)
    coincidence = np.zeros((m, m))
    for got in rows:
        mu = len(got)
        for i, c in enumerate(got):
            for j, k in enumerate(got):
                if i != j:
                    coincidence[c, k] += 1.0 / (mu - 1)
    marginals = coincidence.sum(axis=1)
    n = marginals.sum()
    delta = _ordinal_delta_sq(marginals)

    d_obs = float((coincidence * delta).sum()) / n
    d_exp = float((np.outer(marginals, marginals) * delta).sum()) / (n * (n - 1.0))
    if d_exp == 0.0:
        if d_obs == 0.0:
            return 1.0
        raise StatsError("zero expected disagreement with nonzero observed disagreement")
    return 1.0 - d_obs / d_exp


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-corrected Kendall rank correlation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError("x and y must be 1-d sequences of equal length")
    if len(x) < 2:
        raise StatsError("need at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise StatsError("tau-b undefined for an all-tied vector")
    tau = _scipy_stats.kendalltau(x, y, variant="b").statistic
    return float(tau)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; errors on zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError("x and y must be 1-d sequences of equal length")
    if len(x) < 2:
        raise StatsError("need at least 2 observations")
    if float(np.var(x)) == 0.0 or float(np.var(y)) == 0.0:
        raise StatsError("pearson undefined for zero-variance input")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass(frozen=True)
class MethodRanking:
    """Methods ordered by descending score with average-rank ties."""

    metric: str
    methods: tuple[str, ...]
    scores: tuple[float, ...]
    ranks: tuple[float, ...]

    @classmethod
    def from_scores(cls, metric: str, scores: Mapping[str, float]) -> "MethodRanking":
        if not scores:
            raise StatsError("cannot rank an empty score map")
        items = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        methods = tuple(m for m, _ in items)
        vals = tuple(float(s) for _, s in items)
        ranks: list[float] = [0.0] * len(vals)
        i = 0
        while i < len(vals):
            j = i
            while j + 1 < len(vals) and vals[j + 1] == vals[i]:
                j += 1
            avg = (i + j) / 2.0 + 1.0
            for k in range(i, j + 1):
                ranks[k] = avg
            i = j + 1
        return cls(metric=metric, methods=methods, scores=vals, ranks=tuple(ranks))

    def tie_groups(self) -> list[tuple[str, ...]]:
        groups: dict[float, list[str]] = {}
        for m, r in zip(self.methods, self.ranks):
            groups.setdefault(r, []).append(m)
        return [tuple(groups[r]) for r in sorted(groups)]


def ranking_tau(full: Mapping[str, float], subset: Mapping[str, float]) -> float:
    """tau-b between two score maps over the identical method set."""
    if set(full) != set(subset):
        missing = sorted(set(full).symmetric_difference(subset))
        raise StatsError(f"rankings must cover identical method sets; mismatched: {missing}")
    methods = sorted(full)
    return kendall_tau_b([full[m] for m in methods], [subset[m] for m in methods])


def saturation_analysis(
    reports_by_subset: Mapping[int, Mapping[str, Mapping[str, float]]],
) -> dict[str, list[tuple[int, float]]]:
    """Ranking stability of each metric versus the full-size subset.

    ``reports_by_subset`` maps subset size -> metric -> method -> score.
    Returns metric -> [(size, tau-b vs the largest size)], sizes ascending.
    """
    if not reports_by_subset:
        raise StatsError("no subsets given")
    sizes = sorted(reports_by_subset)
    full = reports_by_subset[sizes[-1]]
    out: dict[str, list[tuple[int, float]]] = {}
    for metric, full_scores in full.items():
        series: list[tuple[int, float]] = []
        for size in sizes:
            subset_scores = reports_by_subset[size].get(metric)
            if subset_scores is None:
                raise StatsError(f"subset {size} missing metric {metric!r}")
            series.append((size, ranking_tau(full_scores, subset_scores)))
        out[metric] = series
    return out
