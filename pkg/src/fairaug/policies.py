"""Sampling policies that narrow the candidate edge space.

User-side policies pick which disadvantaged users may receive new edges;
the item-side policy picks which items those edges may point to. Exactly one
of each side combines (user+item); same-side combinations are rejected.

Accepted policy names: ``bm, zn, ld, sp, fr, ip, zn+ip, ld+ip, sp+ip, fr+ip``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import metrics
from .graph import BipartiteGraph, shortest_path_lengths

USER_POLICIES = ("bm", "zn", "ld", "sp", "fr")
ITEM_POLICIES = ("ip",)
POLICY_NAMES = ("bm", "zn", "ld", "sp", "fr", "ip", "zn+ip", "ld+ip", "sp+ip", "fr+ip")


class EmptySelectionError(ValueError):
    """A policy's predicate matched no users, so it cannot be applied."""


@dataclass(frozen=True)
class PolicySpec:
    """One user-side policy, optionally combined with the item-side policy.

    ``bm`` means no user sampling (the item side may still narrow), so the
    combined names never mention it: plain ``ip`` is ``bm`` + ``ip``.
    """

    user_policy: str = "bm"
    item_policy: str = "none"
    psi_u: float = 0.35
    psi_i: float = 0.20

    def __post_init__(self):
        if self.user_policy not in USER_POLICIES:
            raise ValueError(f"unknown user policy {self.user_policy!r}")
        if self.item_policy not in ("none",) + ITEM_POLICIES:
            raise ValueError(f"unknown item policy {self.item_policy!r}")
        if not 0 < self.psi_u <= 1 or not 0 < self.psi_i <= 1:
            raise ValueError("sampling fractions must lie in (0, 1]")

    @property
    def name(self) -> str:
        if self.item_policy == "none":
            return self.user_policy
        return "ip" if self.user_policy == "bm" else f"{self.user_policy}+ip"


def parse_policy(name: str, psi_u: float = 0.35, psi_i: float = 0.20) -> PolicySpec:
    """Map a CLI policy name to its spec; rejects anything but the ten names."""
    canon = name.strip().lower()
    if canon not in POLICY_NAMES:
        if "+" in canon:
            raise ValueError(
                f"unsupported policy combination {name!r}: only one user-side policy "
                f"(zn, ld, sp, fr) may combine with the item-side policy (ip)")
        raise ValueError(f"unknown policy {name!r}; choose one of {', '.join(POLICY_NAMES)}")
    if canon == "ip":
        return PolicySpec("bm", "ip", psi_u, psi_i)
    if canon.endswith("+ip"):
        return PolicySpec(canon[:-3], "ip", psi_u, psi_i)
    return PolicySpec(canon, "none", psi_u, psi_i)


def _quota(psi: float, population: int) -> int:
    # ceil(psi * population) in exact arithmetic: 0.2 * 20 must give 4, not
    # the 5 that float rounding (0.2 * 20 == 4.000000000000001) would yield.
    return math.ceil(Fraction(str(psi)) * population)


def _take(candidates, keys, count: int) -> np.ndarray:
    order = sorted(candidates, key=lambda c: (keys[c], c))
    return np.array(sorted(order[:count]), dtype=np.intp)


def sample_zn(topk_lists: dict, relevants: dict, disadvantaged_users, k: int) -> np.ndarray:
    """Disadvantaged users whose top-k list misses every held-out relevant item.

    Users without held-out relevant items are skipped (their utility is not
    measurable, hence not improvable). Natural size — no quota applies.
    """
    selected = []
    for u in sorted(int(u) for u in disadvantaged_users):
        rel = relevants.get(u)
        if rel and metrics.ndcg_at_k(topk_lists.get(u, []), rel, k) == 0.0:
            selected.append(u)
    if not selected:
        raise EmptySelectionError(
            "zero-utility policy matched no users: every measurable disadvantaged "
            "user already has a relevant item in their top-k list")
    return np.array(selected, dtype=np.intp)


def sample_ld(graph: BipartiteGraph, disadvantaged_users, psi_u: float) -> np.ndarray:
    """The ceil(psi_u * |U_D|) disadvantaged users with fewest train interactions."""
    users = [int(u) for u in disadvantaged_users]
    keys = {u: int(graph.user_degree[u]) for u in users}
    return _take(users, keys, _quota(psi_u, len(users)))


def sample_sp(graph: BipartiteGraph, disadvantaged_users, psi_u: float) -> np.ndarray:
    """Disadvantaged users whose train items are least popular on average."""
    users = [int(u) for u in disadvantaged_users]
    adjacency = graph.adjacency_lists()
    keys = {}
    for u in users:
        item_nodes = adjacency[u]
        if not item_nodes:
            raise ValueError(f"sample_sp: user {u} has no train interactions")
        keys[u] = float(np.mean([graph.item_degree[v - graph.num_users] for v in item_nodes]))
    return _take(users, keys, _quota(psi_u, len(users)))


def sample_fr(graph: BipartiteGraph, disadvantaged_users, advantaged_users,
              psi_u: float) -> np.ndarray:
    """Disadvantaged users with the largest mean hop distance to the advantaged group.

    Unreachable advantaged users count as one hop more than any possible
    path, so isolated-component users sort first.
    """
    users = [int(u) for u in disadvantaged_users]
    advantaged = [int(u) for u in advantaged_users]
    if not advantaged:
        raise ValueError("sample_fr: advantaged group is empty")
    sentinel = float(graph.n + 1)
    keys = {}
    for u in users:
        hops = shortest_path_lengths(graph, u)[advantaged]
        hops = np.where(np.isinf(hops), sentinel, hops)
        keys[u] = -float(np.mean(hops))   # negated: largest distance first
    return _take(users, keys, _quota(psi_u, len(users)))


def sample_ip(graph: BipartiteGraph, disadvantaged_users, advantaged_users,
              psi_i: float) -> np.ndarray:
    """The ceil(psi_i * |I|) items most interacted with by the disadvantaged group.

    Preference is the per-capita count of disadvantaged users with a train
    edge to the item.
    """
    dis = {int(u) for u in disadvantaged_users}
    if not dis:
        raise ValueError("sample_ip: disadvantaged group is empty")
    counts = np.zeros(graph.num_items, dtype=np.int64)
    for u, i in graph.edges:
        if int(u) in dis:
            counts[i] += 1
    items = list(range(graph.num_items))
    keys = {i: -counts[i] / len(dis) for i in items}
    return _take(items, keys, _quota(psi_i, len(items)))


@dataclass
class PolicyContext:
    """Everything a policy may consult: graph, groups, and baseline model outputs."""

    graph: BipartiteGraph
    disadvantaged_users: np.ndarray
    advantaged_users: np.ndarray
    topk_lists: dict = field(default_factory=dict)         # baseline model lists
    perturbation_relevants: dict = field(default_factory=dict)
    k: int = 10


def apply_policy(spec: PolicySpec, context: PolicyContext) -> tuple[np.ndarray, np.ndarray]:
    """Resolve a spec to (candidate users ⊆ U_D, candidate items)."""
    if spec.user_policy == "bm":
        users = np.array(sorted(int(u) for u in context.disadvantaged_users), dtype=np.intp)
    elif spec.user_policy == "zn":
        users = sample_zn(context.topk_lists, context.perturbation_relevants,
                          context.disadvantaged_users, context.k)
    elif spec.user_policy == "ld":
        users = sample_ld(context.graph, context.disadvantaged_users, spec.psi_u)
    elif spec.user_policy == "sp":
        users = sample_sp(context.graph, context.disadvantaged_users, spec.psi_u)
    else:
        users = sample_fr(context.graph, context.disadvantaged_users,
                          context.advantaged_users, spec.psi_u)
    if spec.item_policy == "ip":
        items = sample_ip(context.graph, context.disadvantaged_users,
                          context.advantaged_users, spec.psi_i)
    else:
        items = np.arange(context.graph.num_items, dtype=np.intp)
    return users, items
