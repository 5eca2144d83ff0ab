"""Generation-quality metrics and the comparison statistics used in reports."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .chem import canonical_key, valence_check
from .core import MolecularGraph


class EmptyInput(ValueError):
    pass


class BinMismatch(ValueError):
    pass


class NotNormalized(ValueError):
    pass


def generation_metrics(generated: Sequence[MolecularGraph], training_keys: Iterable[str]) -> dict:
    """Validity, uniqueness, novelty and the valid-unique-novel ratio.

    ``available_ratio`` counts each distinct valid novel molecule once and
    divides by the number generated.
    """
    if not generated:
        raise EmptyInput("no generated molecules")
    training_keys = set(training_keys)
    valid_keys = [canonical_key(g) for g in generated if valence_check(g)]
    distinct = set(valid_keys)
    novel = distinct - training_keys
    n_valid = len(valid_keys)
    return {
        "validity": n_valid / len(generated),
        "uniqueness": len(distinct) / n_valid if n_valid else 0.0,
        "novelty": len(novel) / len(distinct) if distinct else 0.0,
        "available_ratio": len(novel) / len(generated),
    }


def histogram(values: Sequence[float], bins: int = 20) -> np.ndarray:
    """Normalised fixed-width histogram on [0, 1]."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyInput("no values")
    counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return counts / counts.sum()


def bhattacharyya(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise BinMismatch(f"{p.shape} vs {q.shape}")
    for h in (p, q):
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise NotNormalized("histogram must be non-negative and sum to 1")
    return float(np.sum(np.sqrt(p * q)))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _exact_rank_sum_pmf(ranks: np.ndarray, k: int) -> tuple[np.ndarray, int]:
    """Distribution of the sum of ``k`` ranks drawn without replacement.

    Works on doubled ranks (midranks are half-integers). Returns counts
    indexed by doubled sum, plus the total number of subsets.
    """
    r2 = np.rint(2 * ranks).astype(np.int64)
    top = int(np.sort(r2)[-k:].sum()) if k else 0
    ways = np.zeros((k + 1, top + 1), dtype=float)
    ways[0, 0] = 1.0
    for r in r2:
        for c in range(k, 0, -1):
            ways[c, r:] += ways[c - 1, : top + 1 - r]
    return ways[k], math.comb(len(ranks), k)


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> dict:
    """U statistic for ``a`` with midrank ties and a two-sided p-value.

    Exact permutation distribution (tie-aware) when the smaller sample has
    fewer than 8 values, otherwise the tie-corrected normal approximation
    with continuity correction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptyInput("both samples must be non-empty")
    na, nb = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u = float(ranks[:na].sum() - na * (na + 1) / 2)
    mu = na * nb / 2

    if min(na, nb) < 8:
        k = min(na, nb)
        counts, total = _exact_rank_sum_pmf(ranks, k)
        # statistic on the smaller sample, mapped to U of that sample
        small_u = u if na <= nb else na * nb - u
        shift = k * (k + 1)  # doubled offset between rank sum and U
        target = int(round(2 * small_u)) + shift
        lo = counts[: target + 1].sum() / total
        hi = counts[target:].sum() / total
        p = min(1.0, 2 * min(lo, hi))
    else:
        n = na + nb
        _, tie_counts = np.unique(pooled, return_counts=True)
        tie_term = np.sum(tie_counts**3 - tie_counts) / (n * (n - 1))
        var = na * nb / 12 * ((n + 1) - tie_term)
        if var <= 0:
            p = 1.0
        else:
            z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
            p = math.erfc(z / math.sqrt(2))
    return {"U": u, "p_two_sided": float(min(1.0, p))}
