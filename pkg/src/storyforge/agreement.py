"""Ordinal inter-rater statistics for two raters.

Three chance-corrected views of the same rating table:

- percent agreement: mean pairwise weight, exact-match under identity
  weights;
- Cohen's weighted kappa: chance agreement from the product of the two
  raters' marginal distributions;
- Gwet's AC2: chance agreement built from the pooled category prevalence,
  which keeps the coefficient stable under the skewed rating distributions
  that deflate kappa (the prevalence/bias paradox).

Both kappa and AC2 default to quadratic weights, the usual choice for
ordinal scales. Categories are declared, not inferred from the data, so a
category that never appears still shapes the weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateMarginals, InsufficientData, SchemaError
from .narrative import AnnotationRecord, min_lrc

WEIGHT_SCHEMES = ("identity", "quadratic")

# Column order for inter-criteria correlation.
CORRELATION_COLUMNS = ("logical", "rational", "complete_n", "min_lrc", "narrativity")


def weight_matrix(n_categories: int, scheme: str = "quadratic") -> np.ndarray:
    """Agreement weights over category positions: 1 on the diagonal, fading off it."""
    if scheme not in WEIGHT_SCHEMES:
        raise ValueError(f"unknown weight scheme '{scheme}'")
    if n_categories == 1 or scheme == "identity":
        return np.eye(n_categories)
    idx = np.arange(n_categories)
    return 1.0 - (idx[:, None] - idx[None, :]) ** 2 / (n_categories - 1) ** 2


@dataclass(frozen=True)
class RatingMatrix:
    """Ratings for one criterion: items in rows, the two raters in columns."""

    criterion: str
    categories: tuple[int, ...]
    ratings: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.ratings)
        if raw.dtype.kind == "f" and not np.all(np.isfinite(raw)):
            raise SchemaError("missing ratings are not supported")
        try:
            ratings = raw.astype(int)
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"ratings must be integers: {exc}") from None
        object.__setattr__(self, "ratings", ratings)
        if len(set(self.categories)) != len(self.categories) or not self.categories:
            raise SchemaError("categories must be a non-empty ordered set")
        if ratings.ndim != 2 or ratings.shape[1] != 2:
            raise SchemaError("ratings must be an items x 2 table")
        if ratings.shape[0] < 2:
            raise InsufficientData("need at least 2 rated items")
        valid = set(self.categories)
        bad = set(np.unique(ratings)) - valid
        if bad:
            raise SchemaError(f"ratings outside declared categories: {sorted(bad)}")

    @property
    def n_items(self) -> int:
        return int(self.ratings.shape[0])

    def positions(self) -> np.ndarray:
        """Ratings mapped to 0-based positions in the category order."""
        lookup = {cat: pos for pos, cat in enumerate(self.categories)}
        return np.vectorize(lookup.__getitem__)(self.ratings)


@dataclass(frozen=True)
class AgreementReport:
    criterion: str
    ac2: float
    percent_agreement: float
    weighted_kappa: float
    n_items: int

    def to_payload(self) -> dict[str, Any]:
        return {
            "criterion": self.criterion,
            "ac2": self.ac2,
            "percent_agreement": self.percent_agreement,
            "weighted_kappa": self.weighted_kappa,
            "n_items": self.n_items,
        }


def _observed_agreement(matrix: RatingMatrix, weights: np.ndarray) -> float:
    pos = matrix.positions()
    return float(weights[pos[:, 0], pos[:, 1]].mean())


def _marginals(matrix: RatingMatrix) -> tuple[np.ndarray, np.ndarray]:
    pos = matrix.positions()
    q = len(matrix.categories)
    p1 = np.bincount(pos[:, 0], minlength=q) / matrix.n_items
    p2 = np.bincount(pos[:, 1], minlength=q) / matrix.n_items
    return p1, p2


def weighted_percent_agreement(matrix: RatingMatrix, weights: str = "identity") -> float:
    """Mean pairwise weight per item; exact-match proportion under identity."""
    return _observed_agreement(matrix, weight_matrix(len(matrix.categories), weights))


def cohen_weighted_kappa(matrix: RatingMatrix, weights: str = "quadratic") -> float:
    """(P_o - P_e) / (1 - P_e) with P_e from the raters' marginal product."""
    w = weight_matrix(len(matrix.categories), weights)
    p_o = _observed_agreement(matrix, w)
    p1, p2 = _marginals(matrix)
    p_e = float(p1 @ w @ p2)
    if 1.0 - p_e < 1e-12:
        pos = matrix.positions()
        if p_o == p_e and np.array_equal(pos[:, 0], pos[:, 1]):
            return 1.0
        raise DegenerateMarginals("both raters constant; kappa undefined")
    return (p_o - p_e) / (1.0 - p_e)


def gwet_ac2(matrix: RatingMatrix, weights: str = "quadratic") -> float:
    """(P_a - P_e) / (1 - P_e) with chance agreement from pooled prevalence.

    P_e = T_w / (q (q - 1)) * sum_k pi_k (1 - pi_k), where T_w is the sum of
    all weight-matrix entries and pi_k the mean of the two raters' marginal
    proportions for category k. With identity weights this reduces to AC1.
    """
    q = len(matrix.categories)
    if q < 2:
        raise DegenerateMarginals("AC2 needs at least 2 categories")
    w = weight_matrix(q, weights)
    p_a = _observed_agreement(matrix, w)
    p1, p2 = _marginals(matrix)
    pi = (p1 + p2) / 2.0
    p_e = float(w.sum() / (q * (q - 1)) * np.sum(pi * (1.0 - pi)))
    if 1.0 - p_e < 1e-12:
        pos = matrix.positions()
        if p_a == p_e and np.array_equal(pos[:, 0], pos[:, 1]):
            return 1.0
        raise DegenerateMarginals("chance agreement saturated; AC2 undefined")
    return (p_a - p_e) / (1.0 - p_e)


def compute_agreement_report(
    matrix: RatingMatrix,
    *,
    kappa_weights: str = "quadratic",
    ac2_weights: str = "quadratic",
    percent_weights: str = "identity",
) -> AgreementReport:
    return AgreementReport(
        criterion=matrix.criterion,
        ac2=gwet_ac2(matrix, ac2_weights),
        percent_agreement=weighted_percent_agreement(matrix, percent_weights),
        weighted_kappa=cohen_weighted_kappa(matrix, kappa_weights),
        n_items=matrix.n_items,
    )


@dataclass(frozen=True)
class CriteriaCorrelation:
    """Pairwise rank correlations between annotation criteria.

    Pairs involving a constant column are undefined; they carry NaN in the
    matrix and are listed in ``flagged`` rather than being coerced to 0.
    """

    labels: tuple[str, ...]
    matrix: np.ndarray
    flagged: tuple[tuple[str, str], ...]

    def to_payload(self) -> dict[str, Any]:
        values: list[list[float | None]] = []
        for row in self.matrix:
            values.append([None if np.isnan(v) else float(v) for v in row])
        return {
            "labels": list(self.labels),
            "matrix": values,
            "flagged": [list(pair) for pair in self.flagged],
        }


def correlation_columns(records: Sequence[AnnotationRecord]) -> np.ndarray:
    """Records laid out as columns in CORRELATION_COLUMNS order."""
    rows = [
        (
            r.criteria.logical,
            r.criteria.rational,
            r.criteria.complete_n,
            min_lrc(r.criteria),
            r.narrativity,
        )
        for r in records
    ]
    return np.asarray(rows, dtype=float)


def criteria_correlation(
    records: Sequence[AnnotationRecord], method: str = "spearman"
) -> CriteriaCorrelation:
    """Spearman rank correlation (average-rank ties) between all criteria pairs."""
    if method != "spearman":
        raise ValueError(f"unknown correlation method '{method}'")
    if len(records) < 3:
        raise InsufficientData(f"need at least 3 records, got {len(records)}")
    data = correlation_columns(records)
    k = data.shape[1]
    constant = [bool(np.all(col == col[0])) for col in data.T]
    matrix = np.eye(k)
    flagged: list[tuple[str, str]] = []
    for i in range(k):
        for j in range(i + 1, k):
            if constant[i] or constant[j]:
                matrix[i, j] = matrix[j, i] = np.nan
                flagged.append((CORRELATION_COLUMNS[i], CORRELATION_COLUMNS[j]))
                continue
            rho = stats.spearmanr(data[:, i], data[:, j]).statistic
            matrix[i, j] = matrix[j, i] = float(rho)
    return CriteriaCorrelation(
        labels=CORRELATION_COLUMNS, matrix=matrix, flagged=tuple(flagged)
    )


def rating_matrix_from_records(
    records: Iterable[AnnotationRecord],
    criterion: str,
    annotators: tuple[str, str] | None = None,
) -> RatingMatrix:
    """Align two annotators' records on the (item, candidate) pairs both rated.

    ``criterion`` is one of CORRELATION_COLUMNS; scale is 1..3 for the
    criteria and the derived minimum, 1..5 for narrativity.
    """
    if criterion not in CORRELATION_COLUMNS:
        raise ValueError(f"unknown criterion '{criterion}'")
    by_annotator: dict[str, dict[tuple[str, str], AnnotationRecord]] = {}
    for record in records:
        by_annotator.setdefault(record.annotator_id, {})[
            (record.item_id, record.candidate_tag)
        ] = record
    if annotators is None:
        ids = sorted(by_annotator)
        if len(ids) < 2:
            raise InsufficientData("need records from at least 2 annotators")
        annotators = (ids[0], ids[1])
    first, second = annotators
    if first not in by_annotator or second not in by_annotator:
        raise InsufficientData(f"missing annotator records for {annotators}")
    common = sorted(set(by_annotator[first]) & set(by_annotator[second]))
    if len(common) < 2:
        raise InsufficientData("fewer than 2 items rated by both annotators")

    def value(record: AnnotationRecord) -> int:
        if criterion == "min_lrc":
            return min_lrc(record.criteria)
        if criterion == "narrativity":
            return record.narrativity
        return getattr(record.criteria, criterion)

    rows = [
        (value(by_annotator[first][key]), value(by_annotator[second][key]))
        for key in common
    ]
    categories = (1, 2, 3, 4, 5) if criterion == "narrativity" else (1, 2, 3)
    return RatingMatrix(
        criterion=criterion, categories=categories, ratings=np.asarray(rows)
    )
