"""Ranking utility metrics and the differentiable fairness objective parts.

Exact NDCG@k is used for evaluation and checkpoint selection; a smoothed-rank
approximation of it (differentiable in the scores) drives optimization. Group
utility disparity is the squared gap between group means, and the distance
penalty keeps the number of perturbed entries small.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)


def _ideal_dcg(num_relevant: int, k: int | None) -> float:
    depth = num_relevant if k is None else min(k, num_relevant)
    return sum(1.0 / math.log2(r + 1) for r in range(1, depth + 1))


def ndcg_at_k(ranked, relevant, k: int) -> float:
    """Binary-relevance NDCG of a ranked item list against a relevant set.

    Returns 0 when ``relevant`` is empty.
    """
    if k < 1:
        raise ValueError(f"ndcg_at_k: k must be >= 1, got {k}")
    relevant = set(relevant)
    if not relevant:
        return 0.0
    dcg = 0.0
    for rank, item in enumerate(ranked[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    return dcg / _ideal_dcg(len(relevant), k)


def ndcg_map(lists: dict, relevants: dict, k: int) -> dict:
    """Per-user NDCG@k over users that have at least one relevant item."""
    return {user: ndcg_at_k(lists[user], rel, k)
            for user, rel in relevants.items() if rel and user in lists}


def approx_ndcg(scores, relevance, temperature: float, k: int | None = None) -> T.Node:
    """Differentiable NDCG from logistic-smoothed ranks.

    The rank of item i is approximated by ``1 + sum_{j != i}
    sigmoid((s_j - s_i)/temperature)``; each relevant item contributes
    ``1/log2(1 + rank)``, normalized by the exact ideal DCG. With ``k`` set,
    a soft cutoff ``sigmoid((k + 0.5 - rank)/temperature)`` scales each
    contribution so the value honours the @k semantics while keeping
    gradients. The limit temperature -> 0 recovers the exact metric.
    """
    if temperature <= 0:
        raise ValueError(f"approx_ndcg: temperature must be positive, got {temperature}")
    relevance = np.asarray(relevance, dtype=np.float64)
    rel_idx = np.flatnonzero(relevance)
    if rel_idx.size == 0:
        return T.Node(0.0)
    s = T.as_node(scores)
    diffs = T.cross_differences(T.select_rows(s, rel_idx), s)
    # row sums include the j == i term sigmoid(0) = 0.5, hence the 0.5 offset
    ranks = T.add(T.sum_(T.sigmoid(T.scale(diffs, 1.0 / temperature)), axis=1), T.Node(0.5))
    gains = T.divide(T.Node(np.ones(rel_idx.size)), T.scale(T.log1p(ranks), 1.0 / LOG2))
    if k is not None:
        cutoff = T.sigmoid(T.scale(T.subtract(T.Node(float(k) + 0.5), ranks), 1.0 / temperature))
        gains = T.multiply(gains, cutoff)
    return T.scale(T.sum_(gains), 1.0 / _ideal_dcg(rel_idx.size, k))


def delta_ndcg(per_user_ndcg: dict, disadvantaged_users, advantaged_users) -> float:
    """Disadvantaged-group mean NDCG minus advantaged-group mean NDCG."""
    dis = [per_user_ndcg[u] for u in disadvantaged_users if u in per_user_ndcg]
    adv = [per_user_ndcg[u] for u in advantaged_users if u in per_user_ndcg]
    if not dis or not adv:
        raise ValueError("delta_ndcg: both groups need at least one scored user")
    return float(np.mean(dis) - np.mean(adv))


def fairness_loss(group_utilities) -> T.Node:
    """Mean squared pairwise gap between group utility scalars (zero iff equal)."""
    values = [T.as_node(v) for v in group_utilities]
    if len(values) < 2:
        raise ValueError("fairness_loss: at least two groups required")
    total = None
    npairs = 0
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            gap = T.square(T.subtract(values[i], values[j]))
            total = gap if total is None else T.add(total, gap)
            npairs += 1
    return T.scale(total, 1.0 / npairs)


def dist_loss(weights, beta: float) -> T.Node:
    """Bounded perturbation-size penalty ``beta/2 * s/(1+s)``, s = sum of squares.

    Monotone in each weight and contained in [0, beta/2).
    """
    w = T.as_node(weights)
    s = T.sum_(T.square(w)) if w.value.ndim else T.square(w)
    return T.scale(T.divide(s, T.add(s, T.Node(1.0))), 0.5 * beta)


def relative_difference(before: float, after: float, absolute: bool = False):
    """Percentage change from ``before`` to ``after``.

    ``absolute=True`` compares magnitudes (the disparity variant, where
    -100 means the gap closed completely); otherwise the change is signed.
    Returns None when ``before`` is zero.
    """
    if absolute:
        before, after = abs(before), abs(after)
    if before == 0:
        return None
    return 100.0 * (after - before) / before


@dataclass
class GroupUtility:
    """Per-user utilities with the group designation they induce."""

    per_user_ndcg: dict
    group_means: dict
    disadvantaged: str
    advantaged: str


def designate_groups(per_user_ndcg: dict, partition) -> GroupUtility:
    """Label the group with lower mean utility as disadvantaged.

    Users without a utility value (no ground-truth items) do not count
    toward the means. Ties resolve to the first label in sort order.
    """
    means = {}
    for label in partition.labels:
        vals = [per_user_ndcg[u] for u in partition.members[label] if u in per_user_ndcg]
        if not vals:
            raise ValueError(f"designate_groups: group {label!r} has no scored users")
        means[label] = float(np.mean(vals))
    first, second = partition.labels
    if means[first] == means[second]:
        logger.warning("designate_groups: equal group means (%.6f), designating %r disadvantaged",
                       means[first], first)
        dis, adv = first, second
    elif means[first] < means[second]:
        dis, adv = first, second
    else:
        dis, adv = second, first
    return GroupUtility(per_user_ndcg, means, dis, adv)
