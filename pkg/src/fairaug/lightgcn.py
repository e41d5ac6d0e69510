"""Linear graph-convolutional recommender.

Embeddings are propagated through the symmetrically normalized interaction
graph — no feature transforms, no nonlinearities — and the final
representation is the uniform mean over all propagation layers (including
layer 0). Scores are plain dot products. Training optimizes the pairwise
BPR objective with seeded uniform negative sampling; the returned parameters
come from the epoch with the highest validation NDCG@k.

Checkpoint format (binary, little-endian, stable across runs):

    bytes 0-3   magic ``b"LGCN"``
    uint32      format version (currently 1)
    uint32      num_users
    uint32      num_items
    uint32      embedding_dim
    uint32      num_layers
    float64[]   user embeddings, row-major (num_users * embedding_dim)
    float64[]   item embeddings, row-major (num_items * embedding_dim)
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import tensor as T
from .graph import BipartiteGraph, NormalizedOperator, normalized_adjacency

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LGCN"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class TrainingError(RuntimeError):
    """Raised when the training inputs cannot support BPR optimization."""


@dataclass
class ModelParams:
    """Frozen model state: base embeddings plus the propagation depth."""

    user_embeddings: np.ndarray   # (num_users, d)
    item_embeddings: np.ndarray   # (num_items, d)
    num_layers: int

    def __post_init__(self):
        self.user_embeddings = np.ascontiguousarray(self.user_embeddings, dtype=np.float64)
        self.item_embeddings = np.ascontiguousarray(self.item_embeddings, dtype=np.float64)
        if self.user_embeddings.ndim != 2 or self.item_embeddings.ndim != 2:
            raise ValueError("ModelParams: embeddings must be 2D")
        if self.user_embeddings.shape[1] != self.item_embeddings.shape[1]:
            raise ValueError("ModelParams: user/item embedding widths differ")
        if not (np.isfinite(self.user_embeddings).all() and np.isfinite(self.item_embeddings).all()):
            raise ValueError("ModelParams: embeddings contain non-finite entries")
        if self.num_layers < 0:
            raise ValueError("ModelParams: num_layers must be >= 0")

    @property
    def num_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.user_embeddings.shape[1]


@dataclass
class TrainConfig:
    embedding_dim: int = 64
    num_layers: int = 2
    learning_rate: float = 1e-3
    epochs: int = 150
    reg: float = 1e-4
    batch_size: int = 1024
    k: int = 10
    seed: int = 0


def propagate_embeddings(user_emb: T.Node, item_emb: T.Node, num_layers: int,
                         operator: NormalizedOperator) -> tuple[T.Node, T.Node]:
    """Mean over layers 0..num_layers of repeated operator application.

    Differentiable in the embeddings and, when ``operator.weights`` is a
    tape node, in the operator weights too.
    """
    num_users = user_emb.value.shape[0]
    stacked = T.vstack(user_emb, item_emb)
    n = stacked.value.shape[0]
    if operator.n != n:
        raise T.ShapeError(f"propagate: operator size {operator.n} != {n} embedding rows")
    weights = operator.weights if isinstance(operator.weights, T.Node) else T.Node(operator.weights)
    total = stacked
    layer = stacked
    for _ in range(num_layers):
        layer = T.spmm_sym(operator.rows, operator.cols, weights, layer, n)
        total = T.add(total, layer)
    final = T.scale(total, 1.0 / (num_layers + 1))
    users = T.select_rows(final, np.arange(num_users, dtype=np.intp))
    items = T.select_rows(final, np.arange(num_users, n, dtype=np.intp))
    return users, items


def propagate(params: ModelParams, operator: NormalizedOperator) -> tuple[T.Node, T.Node]:
    """Propagate frozen parameters; see :func:`propagate_embeddings`."""
    return propagate_embeddings(T.Node(params.user_embeddings), T.Node(params.item_embeddings),
                                params.num_layers, operator)


def predict_scores(user_final, item_final):
    """Dot-product score matrix; tape nodes in, tape node out."""
    if isinstance(user_final, T.Node) or isinstance(item_final, T.Node):
        return T.matmul(T.as_node(user_final), T.transpose(T.as_node(item_final)))
    return user_final @ item_final.T


def topk_row(row: np.ndarray, k: int, exclude=frozenset()) -> list[int]:
    """Indices of the k largest entries, ties by index, exclusions dropped."""
    masked = np.asarray(row, dtype=np.float64).copy()
    exclude = {int(j) for j in exclude}
    if exclude:
        masked[list(exclude)] = -np.inf
    order = np.lexsort((np.arange(masked.size), -masked))
    return [int(j) for j in order[:k] if int(j) not in exclude]


def topk(scores: np.ndarray, k: int, exclude: dict | None = None) -> dict:
    """Per-user ranked lists of the k best items outside the user's train set.

    ``exclude`` maps user id -> set of item ids to suppress (typically the
    train interactions). Users with fewer than k admissible items get a
    shorter list.
    """
    if k < 1:
        raise ValueError(f"topk: k must be >= 1, got {k}")
    exclude = exclude or {}
    return {u: topk_row(scores[u], k, exclude.get(u, frozenset()))
            for u in range(scores.shape[0])}


def _sample_negatives(rng, users: np.ndarray, num_items: int, edge_keys: set) -> np.ndarray:
    neg = rng.integers(0, num_items, size=users.size)
    pending = [t for t in range(users.size) if int(users[t]) * num_items + int(neg[t]) in edge_keys]
    while pending:
        redraw = rng.integers(0, num_items, size=len(pending))
        still = []
        for t, item in zip(pending, redraw):
            if int(users[t]) * num_items + int(item) in edge_keys:
                still.append(t)
            else:
                neg[t] = item
        pending = still
    return neg


def train_bpr(graph: BipartiteGraph, config: TrainConfig,
              validation: dict | None = None) -> ModelParams:
    """Train embeddings with BPR; select the epoch maximizing validation NDCG@k.

    ``validation`` maps user id -> set of held-out relevant items. Without it
    (or when no validation user has relevant items) the final epoch wins.
    Fully deterministic for a fixed config: one seeded generator drives
    initialization, batch shuffling, and negative sampling.
    """
    edges = graph.edges
    if edges.shape[0] == 0:
        raise TrainingError("train_bpr: graph has no interactions to learn from")
    rng = np.random.default_rng(config.seed)
    user_node = T.Node(rng.normal(0.0, 0.1, size=(graph.num_users, config.embedding_dim)))
    item_node = T.Node(rng.normal(0.0, 0.1, size=(graph.num_items, config.embedding_dim)))
    operator = normalized_adjacency(graph)
    optimizer = T.Adam([user_node, item_node], lr=config.learning_rate)
    edge_keys = {int(u) * graph.num_items + int(i) for u, i in edges}
    train_items = {}
    for u, i in edges:
        train_items.setdefault(int(u), set()).add(int(i))
    val_users = {u for u, rel in (validation or {}).items() if rel}

    best = None
    best_ndcg = -np.inf
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(edges.shape[0])
        epoch_loss = 0.0
        for start in range(0, perm.size, config.batch_size):
            batch = perm[start:start + config.batch_size]
            users = edges[batch, 0]
            positives = edges[batch, 1]
            negatives = _sample_negatives(rng, users, graph.num_items, edge_keys)

            users_final, items_final = propagate_embeddings(
                user_node, item_node, config.num_layers, operator)
            u_vec = T.select_rows(users_final, users)
            pos_vec = T.select_rows(items_final, positives)
            neg_vec = T.select_rows(items_final, negatives)
            margin = T.subtract(T.sum_(T.multiply(u_vec, pos_vec), axis=1),
                                T.sum_(T.multiply(u_vec, neg_vec), axis=1))
            bpr = T.scale(T.sum_(T.logsigmoid(margin)), -1.0 / batch.size)
            penalty = T.scale(T.add(T.sum_(T.square(user_node)), T.sum_(T.square(item_node))),
                              config.reg)
            loss = T.add(bpr, penalty)
            optimizer.zero_grad()
            T.backward(loss)
            optimizer.step()
            epoch_loss += float(loss.value) * batch.size

        if val_users:
            params = ModelParams(user_node.value.copy(), item_node.value.copy(), config.num_layers)
            val_ndcg = validation_ndcg(params, operator, validation, train_items, config.k)
            logger.debug("epoch %d: loss %.4f, validation NDCG@%d %.4f",
                         epoch, epoch_loss / perm.size, config.k, val_ndcg)
            if val_ndcg > best_ndcg:
                best_ndcg, best = val_ndcg, params
        else:
            logger.debug("epoch %d: loss %.4f", epoch, epoch_loss / perm.size)

    if best is None:
        best = ModelParams(user_node.value.copy(), item_node.value.copy(), config.num_layers)
    return best


def ranked_ndcg(params: ModelParams, operator: NormalizedOperator,
                relevants: dict, exclude: dict, k: int) -> dict:
    """Exact per-user NDCG@k of the model's excluded-aware top-k lists.

    Only users with at least one relevant item appear in the result.
    """
    users_final, items_final = propagate(params, operator)
    scores = predict_scores(users_final.value, items_final.value)
    return {u: metrics.ndcg_at_k(topk_row(scores[u], k, exclude.get(u, frozenset())), rel, k)
            for u, rel in sorted(relevants.items()) if rel}


def validation_ndcg(params: ModelParams, operator: NormalizedOperator,
                    relevants: dict, train_items: dict, k: int) -> float:
    """Mean NDCG@k over users with held-out relevant items, train items excluded."""
    per_user = ranked_ndcg(params, operator, relevants, train_items, k)
    return float(np.mean(list(per_user.values()))) if per_user else 0.0


def save_checkpoint(params: ModelParams, path) -> None:
    """Write the binary checkpoint format documented in the module docstring."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                              params.num_users, params.num_items,
                              params.embedding_dim, params.num_layers))
        fh.write(params.user_embeddings.astype("<f8").tobytes())
        fh.write(params.item_embeddings.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size or blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    magic, version, num_users, num_items, dim, num_layers = _HEADER.unpack_from(blob)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    expected = _HEADER.size + 8 * dim * (num_users + num_items)
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated checkpoint ({len(blob)} bytes, expected {expected})")
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    user = flat[:num_users * dim].reshape(num_users, dim)
    item = flat[num_users * dim:].reshape(num_items, dim)
    return ModelParams(user, item, num_layers)
