"""Seeded generator for a small interaction dataset with a built-in group gap.

Two equal-size user groups interact with items organized in taste clusters.
Group "b" users get only 40% as many interactions as group "a" users, so the
trained recommender serves them visibly worse — the situation the
augmentation pipeline is meant to repair. Used by the test suite and the
README walkthrough; also runnable directly:

    python -m fairaug.synthetic --out data/ --seed 13
"""

from __future__ import annotations

import argparse
import os

import numpy as np

NUM_USERS = 200
NUM_ITEMS = 300
NUM_CLUSTERS = 12               # 6 per group, 25 items each
RICH_INTERACTIONS = 20          # group "a" interactions per user
POOR_INTERACTIONS = 8           # group "b": subsampled to 40% of the above

# Layout of each group-"a" cluster (25 items, positions 0..24 within the
# cluster): positions 0..15 are consumed by everyone, positions 16..19 are
# consumed but always held out for test, and positions 20..24 are never
# consumed at all.  A user's validation items are either two positions from
# the shared head (so they are pinned near the top of the user's ranking by
# the many cluster-mates who train on them) or two from the never-consumed
# tail (so they are pinned at the bottom).
HEAD = 16                       # shared, heavily trained positions
TEST_TAIL = 4                   # consumed but train-degree zero
VAL_POOL = 6                    # head positions eligible as validation picks

# Share of group-"a" users whose held-out items come from the dead tail, so
# their ranking utility is pinned at zero no matter what the recommender
# does.  The remainder hold out head items and score perfectly.  The mix
# sets the size of the group gap the augmentation step has to close.
ZERO_UTILITY_SHARE = 0.55


def generate_biased_dataset(directory, seed: int = 13) -> tuple[str, str]:
    """Write interactions.tsv and attributes.tsv under ``directory``.

    Users 0..99 form group "a" (dense histories), users 100..199 group "b"
    (sparse histories). Every user consumes only their home cluster, and the
    two groups draw home clusters from disjoint halves of the catalogue, so
    edits on one group's side of the graph cannot disturb the other group's
    rankings.

    Group "a" histories are staged so that each user's held-out items are
    either anchor items every cluster-mate trains on (utility locked at the
    top, with score margins far too wide for a handful of added edges to
    disturb) or never-trained tail items (utility locked at zero).  Group
    "b" histories are short uniform draws, which leaves their held-out items
    hovering around the cutoff rank — exactly the users a repair can help.
    Timestamps count interaction order per user. Fully determined by
    ``seed``.
    """
    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    cluster_size = NUM_ITEMS // NUM_CLUSTERS
    half = NUM_CLUSTERS // 2
    rows = []
    for user in range(NUM_USERS):
        group_b = user >= NUM_USERS // 2
        home = (user % half) + (half if group_b else 0)
        base = home * cluster_size
        if group_b:
            items = base + rng.choice(cluster_size, size=POOR_INTERACTIONS, replace=False)
        else:
            head = base + np.arange(HEAD)
            test = base + HEAD + np.arange(TEST_TAIL)
            never = base + HEAD + TEST_TAIL + np.arange(cluster_size - HEAD - TEST_TAIL)
            if rng.random() < ZERO_UTILITY_SHARE:
                held_out = rng.choice(never, size=2, replace=False)
                train = head[:14]
            else:
                pick = 2 * (user % (VAL_POOL // 2))
                held_out = head[pick:pick + 2]
                train = np.delete(head, [pick, pick + 1])
            items = np.concatenate((rng.permutation(train), held_out, test))
        for ts, item in enumerate(items):
            rows.append((user, int(item), ts))

    interactions_path = os.path.join(directory, "interactions.tsv")
    with open(interactions_path, "w", encoding="utf-8") as fh:
        fh.write("# user\titem\ttimestamp\n")
        for user, item, ts in rows:
            fh.write(f"{user}\t{item}\t{ts}\n")

    attributes_path = os.path.join(directory, "attributes.tsv")
    with open(attributes_path, "w", encoding="utf-8") as fh:
        fh.write("# user\tgroup\n")
        for user in range(NUM_USERS):
            fh.write(f"{user}\t{'b' if user >= NUM_USERS // 2 else 'a'}\n")
    return interactions_path, attributes_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=13)
    args = parser.parse_args(argv)
    interactions, attributes = generate_biased_dataset(args.out, seed=args.seed)
    print(f"wrote {interactions} and {attributes}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
