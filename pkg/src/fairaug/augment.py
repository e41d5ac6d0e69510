"""Counterfactual edge augmentation.

A real vector over the candidate (user, item) pairs is optimized so that the
frozen recommender, run on the re-normalized graph containing those fractional
edges, equalizes group utility on the held-out perturbation set while keeping
the perturbation small. Forward passes use sigmoid-relaxed weights; after
every gradient step the vector is rounded and the resulting discrete graph is
scored exactly, producing one trace row per epoch. The best rounded
checkpoint — smallest group gap, then fewest edges, then earliest epoch —
supplies the final edge set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import tensor as T
from .dataset import Interaction, SplitDataset
from .graph import (BipartiteGraph, CandidateEdgeSpace, EmptyCandidateSpaceError,
                    NormalizedOperator, normalized_adjacency)
from .lightgcn import ModelParams, propagate_embeddings, ranked_ndcg

logger = logging.getLogger(__name__)


class DegenerateOptimizationError(ValueError):
    """The fairness objective has no measurable signal to optimize."""


class NonFiniteLossError(ArithmeticError):
    """The loss left the realm of finite numbers; carries the epoch index."""

    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class PerturbationVector:
    """Learnable reals over the candidate space; starts fully off.

    The initial value -5 puts every sigmoid weight at ~0.0067 and every
    rounded entry at 0, so the starting graph equals the original one.
    """

    p_hat: np.ndarray

    INITIAL = -5.0

    @classmethod
    def initial(cls, size: int) -> "PerturbationVector":
        return cls(np.full(size, cls.INITIAL, dtype=np.float64))

    def __post_init__(self):
        self.p_hat = np.asarray(self.p_hat, dtype=np.float64)
        if self.p_hat.ndim != 1:
            raise ValueError("PerturbationVector: p_hat must be 1D")
        if not np.isfinite(self.p_hat).all():
            raise ValueError("PerturbationVector: p_hat must be finite")

    @property
    def size(self) -> int:
        return self.p_hat.shape[0]


@dataclass
class AugmentConfig:
    learning_rate: float = 0.1
    max_epochs: int = 100
    beta: float = 0.5
    temperature: float = 0.1
    k: int = 10
    seed: int = 0
    fairness_target: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs <= 0:
            raise ValueError("AugmentConfig: learning rate and epoch budget must be positive")
        if self.temperature <= 0:
            raise ValueError("AugmentConfig: temperature must be positive")
        if self.beta < 0:
            raise ValueError("AugmentConfig: beta must be nonnegative")
        if self.k < 1:
            raise ValueError("AugmentConfig: k must be >= 1")


@dataclass
class TraceRow:
    """One epoch: relaxed loss terms plus the rounded checkpoint's exact metrics."""

    epoch: int
    loss: float
    fairness_loss: float
    dist_loss: float
    abs_delta_ndcg: float
    num_edges: int
    disadvantaged_mean: float
    advantaged_mean: float


@dataclass
class AugmentationResult:
    added_edges: list              # (user, item) pairs of the best checkpoint
    loss_trace: list               # TraceRow per epoch, epoch 0 first
    best_epoch: int
    before: dict                   # epoch-0 exact perturbation-set metrics
    after: dict                    # best-checkpoint exact metrics
    per_user_before: dict = field(default_factory=dict, repr=False)
    per_user_after: dict = field(default_factory=dict, repr=False)


def continuous_weights(p_hat) -> T.Node:
    """Sigmoid relaxation of the perturbation vector, elementwise in (0, 1)."""
    return T.sigmoid(T.as_node(p_hat))


def discretize(p_hat: np.ndarray) -> np.ndarray:
    """Round to {0, 1}: a candidate edge exists iff its weight reaches 0.5."""
    return (np.asarray(p_hat, dtype=np.float64) >= 0.0).astype(np.float64)


def build_augmented(graph: BipartiteGraph, space: CandidateEdgeSpace, weights) -> NormalizedOperator:
    """Normalized operator of the graph plus weighted candidate entries.

    A tape node keeps the whole construction differentiable (degrees include
    the fractional candidate weights); a plain array takes the frozen path.
    """
    if not isinstance(weights, T.Node):
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (space.size,):
            raise ValueError(f"build_augmented: {w.shape} weights for {space.size} candidates")
        return normalized_adjacency(graph, extra=(space.pairs, w))
    if weights.value.shape != (space.size,):
        raise ValueError(f"build_augmented: {weights.value.shape} weights for {space.size} candidates")
    rows = graph.edges[:, 0].astype(np.intp)
    cols = (graph.num_users + graph.edges[:, 1]).astype(np.intp)
    erows = space.pairs[:, 0].astype(np.intp)
    ecols = (graph.num_users + space.pairs[:, 1]).astype(np.intp)
    n = graph.n
    degrees = T.add(T.Node(graph.base_degrees()),
                    T.add(T.index_sum(weights, erows, n), T.index_sum(weights, ecols, n)))
    inv = T.rsqrt(degrees)
    edge_vals = T.multiply(T.select_rows(inv, rows), T.select_rows(inv, cols))
    cand_vals = T.multiply(weights, T.multiply(T.select_rows(inv, erows), T.select_rows(inv, ecols)))
    return NormalizedOperator(np.concatenate([rows, erows]), np.concatenate([cols, ecols]),
                              T.concat(edge_vals, cand_vals), n)


def _measurable(users, relevants: dict) -> list:
    return sorted(int(u) for u in users if relevants.get(int(u)))


def _mean_nodes(nodes: list) -> T.Node:
    total = nodes[0]
    for node in nodes[1:]:
        total = T.add(total, node)
    return T.scale(total, 1.0 / len(nodes))


def make_objective(model: ModelParams, graph: BipartiteGraph, space: CandidateEdgeSpace,
                   groups, relevants: dict, config: AugmentConfig):
    """Build the relaxed loss as a reusable function of the perturbation vector.

    ``groups`` is the (disadvantaged users, advantaged users) pair. The
    returned callable maps a 1D tape node (or array) of length B to the tuple
    (total loss, group-gap term, perturbation-size term); the factoring exists
    so gradient checks can probe exactly what the optimizer sees.

    Per call: relax the vector, rebuild the normalized operator with the
    fractional weights, propagate the frozen embeddings, score each
    measurable perturbation-set user's non-train items with the smoothed
    ranking metric, and penalize the squared gap between group means plus the
    bounded size term.
    """
    if space.size == 0:
        raise EmptyCandidateSpaceError("make_objective: candidate space is empty")
    dis_users, adv_users = groups
    measured_dis = _measurable(dis_users, relevants)
    measured_adv = _measurable(adv_users, relevants)
    if not measured_dis:
        raise DegenerateOptimizationError(
            "no disadvantaged user has perturbation-set ground truth; nothing to optimize")
    if not measured_adv:
        raise DegenerateOptimizationError(
            "no advantaged user has perturbation-set ground truth; the group gap is undefined")

    train_items = {}
    for u, i in graph.edges:
        train_items.setdefault(int(u), []).append(int(i))
    eval_users = measured_dis + measured_adv
    candidate_items = {}
    relevance = {}
    for u in eval_users:
        cand = np.setdiff1d(np.arange(graph.num_items, dtype=np.intp),
                            np.asarray(train_items.get(u, []), dtype=np.intp))
        candidate_items[u] = cand
        relevance[u] = np.isin(cand, sorted(relevants[u])).astype(np.float64)
    user_leaf = T.Node(model.user_embeddings)
    item_leaf = T.Node(model.item_embeddings)
    eval_rows = np.asarray(eval_users, dtype=np.intp)

    def objective(p_hat):
        w = continuous_weights(p_hat)
        operator = build_augmented(graph, space, w)
        users_final, items_final = propagate_embeddings(user_leaf, item_leaf,
                                                        model.num_layers, operator)
        selected = T.matmul(T.select_rows(users_final, eval_rows), T.transpose(items_final))
        utilities = {}
        for r, u in enumerate(eval_users):
            row = T.select_rows(T.flatten(T.select_rows(selected, np.array([r], dtype=np.intp))),
                                candidate_items[u])
            utilities[u] = metrics.approx_ndcg(row, relevance[u], config.temperature, config.k)
        fair = metrics.fairness_loss([_mean_nodes([utilities[u] for u in measured_dis]),
                                      _mean_nodes([utilities[u] for u in measured_adv])])
        dist = metrics.dist_loss(w, config.beta)
        return T.add(fair, dist), fair, dist

    return objective


def _checkpoint(model: ModelParams, graph: BipartiteGraph, space: CandidateEdgeSpace,
                p_hat: np.ndarray, measured_dis: list, measured_adv: list,
                relevants: dict, train_items: dict, k: int):
    """Exact metrics of the rounded vector: (per-user NDCG, means, chosen indices)."""
    p = discretize(p_hat)
    chosen = np.flatnonzero(p)
    operator = normalized_adjacency(graph, extra=(space.pairs, p))
    wanted = {u: relevants[u] for u in measured_dis + measured_adv}
    per_user = ranked_ndcg(model, operator, wanted, train_items, k)
    dis_mean = float(np.mean([per_user[u] for u in measured_dis]))
    adv_mean = float(np.mean([per_user[u] for u in measured_adv]))
    return per_user, dis_mean, adv_mean, chosen


def optimize(model: ModelParams, graph: BipartiteGraph, space: CandidateEdgeSpace,
             groups, relevants: dict, config: AugmentConfig) -> AugmentationResult:
    """Learn the perturbation vector and return the best rounded edge set.

    ``groups`` is the (disadvantaged users, advantaged users) pair; the model
    stays frozen — only the candidate-edge reals receive gradient. Epoch 0
    records the untouched starting point (zero edges, baseline metrics);
    stopping happens at the epoch budget or as soon as a checkpoint's exact
    group gap falls to ``config.fairness_target``.
    """
    objective = make_objective(model, graph, space, groups, relevants, config)
    dis_users, adv_users = groups
    measured_dis = _measurable(dis_users, relevants)
    measured_adv = _measurable(adv_users, relevants)
    train_items = {}
    for u, i in graph.edges:
        train_items.setdefault(int(u), set()).add(int(i))

    vector = PerturbationVector.initial(space.size)
    leaf = T.Node(vector.p_hat)
    optimizer = T.Adam([leaf], lr=config.learning_rate)

    trace: list[TraceRow] = []
    checkpoints = []   # (abs_delta, num_edges, epoch, chosen, per_user, dis, adv)

    def record(epoch: int, loss, fair, dist) -> TraceRow:
        per_user, dis_mean, adv_mean, chosen = _checkpoint(
            model, graph, space, leaf.value, measured_dis, measured_adv,
            relevants, train_items, config.k)
        row = TraceRow(epoch, float(loss.value), float(fair.value), float(dist.value),
                       abs(dis_mean - adv_mean), int(chosen.size), dis_mean, adv_mean)
        trace.append(row)
        checkpoints.append((row.abs_delta_ndcg, row.num_edges, epoch, chosen,
                            per_user, dis_mean, adv_mean))
        logger.debug("epoch %d: loss %.6f fair %.6f dist %.6f |gap| %.6f edges %d",
                     epoch, row.loss, row.fairness_loss, row.dist_loss,
                     row.abs_delta_ndcg, row.num_edges)
        return row

    loss, fair, dist = objective(T.Node(leaf.value))
    row = record(0, loss, fair, dist)
    done = config.fairness_target is not None and row.abs_delta_ndcg <= config.fairness_target
    if not done:
        for epoch in range(1, config.max_epochs + 1):
            loss, fair, dist = objective(leaf)
            if not np.isfinite(loss.value):
                raise NonFiniteLossError(epoch, float(loss.value))
            optimizer.zero_grad()
            T.backward(loss)
            optimizer.step()
            row = record(epoch, loss, fair, dist)
            if config.fairness_target is not None and row.abs_delta_ndcg <= config.fairness_target:
                break

    best = min(checkpoints, key=lambda c: (c[0], c[1], c[2]))
    _, _, best_epoch, chosen, per_user_after, dis_after, adv_after = best
    _, _, _, _, per_user_before, dis_before, adv_before = checkpoints[0]
    added = [space.pair_at(int(j)) for j in chosen]
    dis_set = {int(u) for u in dis_users}
    for u, _ in added:
        if u not in dis_set:
            raise AssertionError(f"augmentation produced an edge on non-candidate user {u}")
    return AugmentationResult(
        added_edges=added,
        loss_trace=trace,
        best_epoch=best_epoch,
        before={"delta_ndcg": dis_before - adv_before,
                "abs_delta_ndcg": abs(dis_before - adv_before),
                "disadvantaged_mean": dis_before, "advantaged_mean": adv_before},
        after={"delta_ndcg": dis_after - adv_after,
               "abs_delta_ndcg": abs(dis_after - adv_after),
               "disadvantaged_mean": dis_after, "advantaged_mean": adv_after,
               "num_edges": len(added)},
        per_user_before=per_user_before,
        per_user_after=per_user_after,
    )


def finalize(result: AugmentationResult, splits: SplitDataset) -> SplitDataset:
    """Move the chosen edges into the train split.

    Each new interaction gets a timestamp one past the user's latest train
    timestamp; matching pairs disappear from validation and test.
    """
    if not result.added_edges:
        return SplitDataset(list(splits.train), list(splits.validation), list(splits.test))
    added = {(int(u), int(i)) for u, i in result.added_edges}
    latest = {}
    for rec in splits.train:
        latest[rec.user_id] = max(latest.get(rec.user_id, rec.timestamp), rec.timestamp)
    train = list(splits.train)
    for u, i in sorted(added):
        if u not in latest:
            raise ValueError(f"finalize: user {u} has no train interactions to anchor a timestamp")
        train.append(Interaction(u, i, latest[u] + 1))
    train.sort()
    validation = [rec for rec in splits.validation if (rec.user_id, rec.item_id) not in added]
    test = [rec for rec in splits.test if (rec.user_id, rec.item_id) not in added]
    return SplitDataset(train, validation, test)


def write_added_edges(path, result: AugmentationResult, user_ids, item_ids) -> None:
    """TSV of chosen edges in dense and original id space."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# user\titem\torig_user\torig_item\n")
        for u, i in result.added_edges:
            fh.write(f"{u}\t{i}\t{user_ids[u]}\t{item_ids[i]}\n")


def write_trace(path, result: AugmentationResult) -> None:
    """TSV of the per-epoch loss terms and rounded-checkpoint metrics."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# epoch\tloss\tfairness_loss\tdist_loss\tabs_delta_ndcg"
                 "\tnum_edges\tdisadvantaged_mean\tadvantaged_mean\n")
        for row in result.loss_trace:
            fh.write(f"{row.epoch}\t{row.loss:.10f}\t{row.fairness_loss:.10f}"
                     f"\t{row.dist_loss:.10f}\t{row.abs_delta_ndcg:.10f}"
                     f"\t{row.num_edges}\t{row.disadvantaged_mean:.10f}"
                     f"\t{row.advantaged_mean:.10f}\n")


def write_summary(path, result: AugmentationResult, extra: dict | None = None) -> None:
    """JSON digest of the run: best epoch, edge count, before/after metrics."""
    payload = {
        "best_epoch": result.best_epoch,
        "num_added_edges": len(result.added_edges),
        "epochs_run": result.loss_trace[-1].epoch if result.loss_trace else 0,
        "before": result.before,
        "after": result.after,
    }
    payload.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
