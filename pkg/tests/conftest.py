"""Shared fixtures: a small deterministic dataset and its trained model."""

import numpy as np
import pytest

from fairaug.dataset import Interaction, InteractionDataset, temporal_split
from fairaug.graph import build_graph
from fairaug.lightgcn import TrainConfig, train_bpr


def make_dataset(num_users=12, num_items=15, per_user=6, seed=7, sparse_users=()):
    """Build an in-memory dataset; ``sparse_users`` get half as many rows."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(num_users):
        count = per_user // 2 if u in sparse_users else per_user
        items = rng.choice(num_items, size=count, replace=False)
        for t, i in enumerate(items):
            rows.append(Interaction(u, int(i), t))
    group_of = {u: ("b" if u >= num_users // 2 else "a") for u in range(num_users)}
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        interactions=rows,
        group_of=group_of,
        user_ids=[str(u) for u in range(num_users)],
        item_ids=[str(i) for i in range(num_items)],
    )


@pytest.fixture(scope="session")
def small_dataset():
    return make_dataset(sparse_users=set(range(6, 12)))


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return temporal_split(small_dataset)


@pytest.fixture(scope="session")
def small_graph(small_dataset, small_split):
    return build_graph(small_split.train, small_dataset.num_users,
                       small_dataset.num_items)


@pytest.fixture(scope="session")
def small_model(small_graph):
    config = TrainConfig(embedding_dim=8, num_layers=2, epochs=15,
                         batch_size=32, seed=3)
    return train_bpr(small_graph, config)
