"""Tests for the synthetic biased-dataset generator."""

import numpy as np
import pytest

from fairaug import synthetic as S
from fairaug.dataset import load_interactions, temporal_split


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    directory = tmp_path_factory.mktemp("synthetic")
    interactions, attributes = S.generate_biased_dataset(directory, seed=13)
    return directory, interactions, attributes


def read_rows(path):
    rows = []
    for line in open(path, encoding="utf-8"):
        if line.startswith("#"):
            continue
        user, item, ts = line.split("\t")
        rows.append((int(user), int(item), int(ts)))
    return rows


class TestGenerator:
    def test_same_seed_is_byte_identical(self, generated, tmp_path):
        _, interactions, attributes = generated
        again_i, again_a = S.generate_biased_dataset(tmp_path, seed=13)
        assert open(interactions, "rb").read() == open(again_i, "rb").read()
        assert open(attributes, "rb").read() == open(again_a, "rb").read()

    def test_different_seeds_differ(self, generated, tmp_path):
        _, interactions, _ = generated
        other_i, _ = S.generate_biased_dataset(tmp_path, seed=14)
        assert open(interactions, "rb").read() != open(other_i, "rb").read()

    def test_interaction_budgets_per_group(self, generated):
        _, interactions, _ = generated
        rows = read_rows(interactions)
        counts = np.bincount([u for u, _, _ in rows], minlength=S.NUM_USERS)
        assert (counts[:100] == S.RICH_INTERACTIONS).all()
        assert (counts[100:] == S.POOR_INTERACTIONS).all()

    def test_groups_consume_disjoint_catalogue_halves(self, generated):
        _, interactions, _ = generated
        rows = read_rows(interactions)
        boundary = S.NUM_ITEMS // 2
        for user, item, _ in rows:
            if user < 100:
                assert item < boundary
            else:
                assert item >= boundary

    def test_users_stay_in_their_home_cluster(self, generated):
        _, interactions, _ = generated
        cluster_size = S.NUM_ITEMS // S.NUM_CLUSTERS
        half = S.NUM_CLUSTERS // 2
        for user, item, _ in read_rows(interactions):
            home = (user % half) + (half if user >= 100 else 0)
            assert home * cluster_size <= item < (home + 1) * cluster_size

    def test_timestamps_enumerate_per_user_history(self, generated):
        _, interactions, _ = generated
        seen = {}
        for user, _, ts in read_rows(interactions):
            assert ts == seen.get(user, 0)
            seen[user] = ts + 1

    def test_attribute_labels(self, generated):
        _, _, attributes = generated
        lines = [l.split("\t") for l in open(attributes, encoding="utf-8")
                 if not l.startswith("#")]
        assert len(lines) == S.NUM_USERS
        for user_str, label in lines:
            expected = "b" if int(user_str) >= 100 else "a"
            assert label.strip() == expected


class TestPipelineCompatibility:
    def test_loads_and_splits_cleanly(self, generated):
        _, interactions, attributes = generated
        ds = load_interactions(interactions, attributes)
        assert ds.num_users == S.NUM_USERS
        assert ds.num_items <= S.NUM_ITEMS
        split = temporal_split(ds)
        # 20 interactions split 14/2/4; 8 split 5/1/2.
        assert len(split.train) == 100 * 14 + 100 * 5
        assert len(split.validation) == 100 * 2 + 100 * 1
        assert len(split.test) == 100 * 4 + 100 * 2


class TestCommandLine:
    def test_main_writes_files(self, tmp_path, capsys):
        assert S.main(["--out", str(tmp_path), "--seed", "5"]) == 0
        assert (tmp_path / "interactions.tsv").exists()
        assert (tmp_path / "attributes.tsv").exists()
        assert "wrote" in capsys.readouterr().out
