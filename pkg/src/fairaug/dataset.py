"""Interaction-log ingestion, temporal 7:1:2 splitting, demographic grouping.

Input files are UTF-8 TSVs: ``user<TAB>item<TAB>timestamp`` for interactions
and ``user<TAB>group_label`` for attributes, with ``#``-prefixed header lines
allowed. Raw ids are remapped to dense 0-based integers; the original ids are
kept for reporting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """A data file line does not conform to the expected TSV format."""


class MissingAttributeError(ValueError):
    """A user appears in the interaction log but not in the attribute file."""


class UnsupportedAttributeError(ValueError):
    """The attribute column carries more than two distinct labels."""


class UnsupportedGroupingError(ValueError):
    """The dataset does not contain exactly two demographic groups."""


class Interaction(NamedTuple):
    user_id: int
    item_id: int
    timestamp: int


@dataclass
class InteractionDataset:
    """Deduplicated interactions with dense ids and per-user group labels."""

    num_users: int
    num_items: int
    interactions: list[Interaction]
    group_of: dict[int, str]
    user_ids: list          # dense user id -> original id
    item_ids: list          # dense item id -> original id


@dataclass
class SplitDataset:
    """Per-user temporal partition; the validation split doubles as the
    perturbation set that drives the fairness objective."""

    train: list[Interaction]
    validation: list[Interaction]
    test: list[Interaction]


@dataclass
class GroupPartition:
    """The two demographic groups with their member user sets."""

    labels: tuple
    members: dict  # label -> sorted np.ndarray of dense user ids

    def sizes(self) -> dict:
        return {label: len(self.members[label]) for label in self.labels}


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line


def load_interactions(path, attr_path) -> InteractionDataset:
    """Read interaction and attribute TSVs into a dense-id dataset.

    Duplicate (user, item) rows collapse to the latest timestamp. Every user
    seen in the interaction log must carry exactly one binary group label.
    """
    path, attr_path = Path(path), Path(attr_path)
    latest: dict[tuple, int] = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            user, item, ts = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-integer field ({exc})") from None
        key = (user, item)
        if key not in latest or ts > latest[key]:
            latest[key] = ts
    if not latest:
        raise ParseError(f"{path}: no interactions")

    raw_users = sorted({u for u, _ in latest})
    raw_items = sorted({i for _, i in latest})
    user_index = {u: k for k, u in enumerate(raw_users)}
    item_index = {i: k for k, i in enumerate(raw_items)}

    labels: dict[int, str] = {}
    for lineno, line in _data_lines(attr_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{attr_path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
        try:
            user = int(parts[0])
        except ValueError as exc:
            raise ParseError(f"{attr_path}:{lineno}: non-integer user id ({exc})") from None
        label = parts[1].strip()
        if not label:
            raise ParseError(f"{attr_path}:{lineno}: empty group label")
        if user in user_index:
            labels[user] = label

    missing = [u for u in raw_users if u not in labels]
    if missing:
        raise MissingAttributeError(
            f"{len(missing)} users have no group label (first missing: {missing[:5]})")
    distinct = sorted(set(labels.values()))
    if len(distinct) > 2:
        raise UnsupportedAttributeError(
            f"attribute column has {len(distinct)} labels {distinct[:5]}, only binary groups are supported")

    interactions = sorted(
        Interaction(user_index[u], item_index[i], ts) for (u, i), ts in latest.items())
    group_of = {user_index[u]: labels[u] for u in raw_users}
    return InteractionDataset(len(raw_users), len(raw_items), interactions,
                              group_of, raw_users, raw_items)


def temporal_split(ds: InteractionDataset) -> SplitDataset:
    """Split each user's history 7:1:2 by recency (floor boundaries).

    Per user with n interactions sorted by (timestamp, item): the first
    floor(0.7n) go to train, the next floor(0.8n) - floor(0.7n) to
    validation, the rest to test. Users with fewer than 3 interactions are
    dropped with a warning so every retained user keeps a train share.
    """
    by_user: dict[int, list[Interaction]] = {}
    for rec in ds.interactions:
        by_user.setdefault(rec.user_id, []).append(rec)

    train, validation, test = [], [], []
    dropped = []
    for user in sorted(by_user):
        history = sorted(by_user[user], key=lambda r: (r.timestamp, r.item_id))
        n = len(history)
        if n < 3:
            dropped.append(user)
            continue
        t_end = (7 * n) // 10
        v_end = (8 * n) // 10
        train.extend(history[:t_end])
        validation.extend(history[t_end:v_end])
        test.extend(history[v_end:])
    if dropped:
        logger.warning("temporal_split: dropped %d users with < 3 interactions: %s",
                       len(dropped), dropped[:10])
    return SplitDataset(train, validation, test)


def group_partition(ds: InteractionDataset) -> GroupPartition:
    """Partition users into the two demographic groups by label."""
    members: dict[str, list[int]] = {}
    for user, label in ds.group_of.items():
        members.setdefault(label, []).append(user)
    if len(members) != 2:
        raise UnsupportedGroupingError(
            f"expected exactly 2 group labels, found {sorted(members)}")
    labels = tuple(sorted(members))
    return GroupPartition(labels, {lb: np.asarray(sorted(members[lb]), dtype=np.intp)
                                   for lb in labels})


def relevants_by_user(interactions) -> dict[int, set]:
    """Map each user to the set of items it interacted with."""
    rel: dict[int, set] = {}
    for rec in interactions:
        rel.setdefault(rec.user_id, set()).add(rec.item_id)
    return rel


def export_split(split: SplitDataset, ds: InteractionDataset, directory) -> None:
    """Write train/validation/test TSVs using the original ids."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", split.train), ("validation", split.validation),
                       ("test", split.test)):
        with open(directory / f"{name}.tsv", "w", encoding="utf-8") as fh:
            fh.write("# user\titem\ttimestamp\n")
            for rec in part:
                fh.write(f"{ds.user_ids[rec.user_id]}\t{ds.item_ids[rec.item_id]}\t{rec.timestamp}\n")
