"""Text-overlap metrics, pairwise distances, and the diversity filter.

Tokenization is fixed so scores are reproducible: lowercase, split on
Unicode whitespace, strip leading/trailing punctuation from each token,
drop tokens that end up empty. BLEU-4 uses floor smoothing (epsilon on
zero n-gram precisions) and excludes n-gram orders the candidate is too
short to have. ROUGE-L is the LCS F1, maximized over references.

Semantic distances come from a pluggable provider: an HTTP similarity
service for real runs, a deterministic token-overlap F1 for tests. The
distance of a pair is 1 - similarity.
"""

from __future__ import annotations

import math
import time
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import DegenerateSet, EmptyInput, ProviderError

BLEU_SMOOTH_EPSILON = 1e-9
METRICS = ("bleu4", "rougeL")


def tokenize(text: str) -> tuple[str, ...]:
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and unicodedata.category(raw[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return tuple(tokens)


@dataclass(frozen=True)
class SimilarityScore:
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric '{self.metric}'")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value out of [0, 1]: {self.value}")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _prepare(candidate: str, references: Sequence[str]):
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references]
    refs = [r for r in refs if r]
    if not cand or not refs:
        raise EmptyInput("candidate or all references empty after tokenization")
    return cand, refs


def bleu4(candidate: str, references: Sequence[str]) -> SimilarityScore:
    """Sentence BLEU with orders 1..4, brevity penalty, and floor smoothing.

    Orders longer than the candidate are excluded from the geometric mean
    so that an exact copy of a short reference still scores 1.0; orders
    with zero matches are floored at BLEU_SMOOTH_EPSILON.
    """
    cand, refs = _prepare(candidate, references)
    log_sum = 0.0
    orders = 0
    for n in range(1, 5):
        total = len(cand) - n + 1
        if total <= 0:
            continue
        cand_counts = _ngram_counts(cand, n)
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, count in _ngram_counts(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        precision = clipped / total
        if precision == 0.0:
            precision = BLEU_SMOOTH_EPSILON
        log_sum += math.log(precision)
        orders += 1

    # Brevity penalty against the reference length closest to the candidate;
    # ties go to the shorter reference.
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return SimilarityScore("bleu4", min(1.0, bp * math.exp(log_sum / orders)))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(candidate: str, references: Sequence[str]) -> SimilarityScore:
    """LCS-based F1 per reference, maximum over references."""
    cand, refs = _prepare(candidate, references)
    best = 0.0
    for ref in refs:
        lcs = _lcs_length(cand, ref)
        if lcs == 0:
            continue
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        best = max(best, 2.0 * precision * recall / (precision + recall))
    return SimilarityScore("rougeL", best)


_METRIC_FNS = {"bleu4": bleu4, "rougeL": rouge_l}


def nearest_reference_similarity(
    candidate: str, references: Sequence[str], metric: str
) -> SimilarityScore:
    """Best single-reference score: how close the candidate comes to any reference."""
    if metric not in _METRIC_FNS:
        raise ValueError(f"unknown metric '{metric}'")
    fn = _METRIC_FNS[metric]
    scores = []
    for ref in references:
        if tokenize(ref):
            scores.append(fn(candidate, [ref]).value)
    if not scores:
        raise EmptyInput("all references empty after tokenization")
    return SimilarityScore(metric, max(scores))


class DistanceProvider(Protocol):
    """Batch scorer returning a similarity in [0, 1] for each ordered pair.

    Providers must be symmetric: scores(a, b) == scores(b, a).
    """

    provider_id: str

    def similarity_scores(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


def token_overlap_f1(a: str, b: str) -> float:
    """Token-multiset F1; 1.0 for identical texts, symmetric by construction."""
    ca, cb = Counter(tokenize(a)), Counter(tokenize(b))
    total = sum(ca.values()) + sum(cb.values())
    if total == 0:
        return 1.0
    overlap = sum((ca & cb).values())
    return 2.0 * overlap / total


class TokenOverlapProvider:
    """Deterministic local fallback provider (no model, no network)."""

    provider_id = "token-overlap"

    def similarity_scores(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        return [token_overlap_f1(a, b) for a, b in pairs]


class HttpSimilarityProvider:
    """Client for a remote embedding/similarity service.

    Wire format: POST {base_url}/similarity with ``{"pairs": [[a, b], ...]}``
    returning ``{"scores": [s, ...]}`` with each score in [0, 1].
    """

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 30.0,
        retries: int = 2,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.provider_id = f"http:{self.base_url}"
        self._client = client or httpx.Client(timeout=timeout)

    def similarity_scores(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        body = {"pairs": [[a, b] for a, b in pairs]}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self._client.post(f"{self.base_url}/similarity", json=body)
                response.raise_for_status()
                payload = response.json()
                break
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(min(2.0, 0.1 * 2**attempt))
        else:
            raise ProviderError(
                f"similarity service unreachable after {self.retries + 1} attempts: "
                f"{last_error}",
                pair=tuple(pairs[0]) if pairs else None,
            )
        scores = payload.get("scores") if isinstance(payload, dict) else None
        if not isinstance(scores, list) or len(scores) != len(pairs):
            raise ProviderError(
                "malformed response: expected one score per pair",
                pair=tuple(pairs[0]) if pairs else None,
            )
        return [float(s) for s in scores]


@dataclass(frozen=True)
class PairwiseDistances:
    """Symmetric distance matrix over one item's candidates."""

    item_id: str
    labels: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if m.shape != (len(self.labels), len(self.labels)):
            raise ValueError("matrix shape does not match labels")
        if not np.allclose(m, m.T) or not np.allclose(np.diag(m), 0.0):
            raise ValueError("matrix must be symmetric with a zero diagonal")
        if m.size and (m.min() < 0.0 or m.max() > 1.0):
            raise ValueError("distances must lie in [0, 1]")

    def upper_triangle(self) -> np.ndarray:
        i, j = np.triu_indices(len(self.labels), k=1)
        return self.matrix[i, j]


@dataclass(frozen=True)
class DiversityRecord:
    item_id: str
    min_distance: float
    mean_distance: float
    diversity: float

    def to_payload(self) -> dict[str, float | str]:
        return {
            "item_id": self.item_id,
            "min_distance": self.min_distance,
            "mean_distance": self.mean_distance,
            "diversity": self.diversity,
        }


def pairwise_distances(
    texts: Sequence[str],
    provider: DistanceProvider,
    *,
    item_id: str = "",
    labels: Sequence[str] | None = None,
    batch_size: int = 64,
) -> PairwiseDistances:
    """Distance matrix of 1 - similarity over all unordered text pairs."""
    n = len(texts)
    if n < 2:
        raise DegenerateSet(f"need at least 2 texts, got {n}")
    if labels is None:
        labels = tuple(str(i) for i in range(n))
    index_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    matrix = np.zeros((n, n))
    for start in range(0, len(index_pairs), batch_size):
        chunk = index_pairs[start : start + batch_size]
        scores = provider.similarity_scores([(texts[i], texts[j]) for i, j in chunk])
        for (i, j), score in zip(chunk, scores):
            if not 0.0 <= score <= 1.0:
                raise ProviderError(
                    f"similarity {score} out of [0, 1]", pair=(texts[i], texts[j])
                )
            matrix[i, j] = matrix[j, i] = 1.0 - score
    matrix.flags.writeable = False
    return PairwiseDistances(item_id=item_id, labels=tuple(labels), matrix=matrix)


def diversity(distances: PairwiseDistances) -> DiversityRecord:
    """min x mean over the unordered pairs (strict upper triangle)."""
    entries = distances.upper_triangle()
    if entries.size < 1:
        raise DegenerateSet("need at least one pair of candidates")
    lo = float(entries.min())
    mean = float(entries.mean())
    return DiversityRecord(
        item_id=distances.item_id,
        min_distance=lo,
        mean_distance=mean,
        diversity=lo * mean,
    )


def select_top_diverse(records: Sequence[DiversityRecord], k: int) -> list[str]:
    """Ids of the k most diverse records; ties broken by ascending item id."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    ranked = sorted(records, key=lambda r: (-r.diversity, r.item_id))
    return [r.item_id for r in ranked[:k]]
