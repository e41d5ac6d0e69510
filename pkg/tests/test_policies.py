"""Tests for policy parsing, quotas, and the candidate-sampling rules."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairaug import policies as P
from fairaug.graph import build_graph


def six_user_graph():
    """Hand graph: user degrees 1,2,3,1,2,4; item degrees 3,3,2,3,2."""
    edges = [(0, 0),
             (1, 0), (1, 1),
             (2, 0), (2, 1), (2, 2),
             (3, 3),
             (4, 3), (4, 4),
             (5, 1), (5, 2), (5, 3), (5, 4)]
    return build_graph(edges, 6, 5)


DIS = np.array([0, 1, 2, 3])
ADV = np.array([4, 5])


class TestParsePolicy:
    @pytest.mark.parametrize("name", P.POLICY_NAMES)
    def test_all_ten_names_round_trip(self, name):
        assert P.parse_policy(name).name == name

    def test_names_are_case_and_space_insensitive(self):
        assert P.parse_policy("  ZN+IP ").name == "zn+ip"

    def test_plain_ip_means_no_user_sampling(self):
        spec = P.parse_policy("ip")
        assert spec.user_policy == "bm"
        assert spec.item_policy == "ip"

    def test_same_side_combination_rejected(self):
        with pytest.raises(ValueError, match="unsupported policy combination"):
            P.parse_policy("ld+ld")

    def test_two_user_policies_rejected(self):
        with pytest.raises(ValueError, match="unsupported policy combination"):
            P.parse_policy("zn+ld")

    def test_reversed_combination_rejected(self):
        with pytest.raises(ValueError, match="unsupported policy combination"):
            P.parse_policy("ip+zn")

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="unknown policy"):
            P.parse_policy("xx")

    def test_fractions_must_be_in_unit_interval(self):
        with pytest.raises(ValueError, match="sampling fractions"):
            P.parse_policy("ld", psi_u=0.0)
        with pytest.raises(ValueError, match="sampling fractions"):
            P.parse_policy("ip", psi_i=1.2)

    def test_spec_rejects_unknown_sides(self):
        with pytest.raises(ValueError, match="unknown user policy"):
            P.PolicySpec(user_policy="ip")
        with pytest.raises(ValueError, match="unknown item policy"):
            P.PolicySpec(item_policy="zn")


class TestQuota:
    def test_ceil_of_exact_products(self):
        assert P._quota(0.35, 10) == 4
        assert P._quota(0.35, 3) == 2
        assert P._quota(1.0, 7) == 7
        assert P._quota(0.2, 21) == 5

    def test_float_product_artifacts_do_not_inflate(self):
        # 0.2 * 20 == 4.000000000000001 in binary floats; the quota must be 4.
        assert P._quota(0.2, 20) == 4
        assert P._quota(0.1, 30) == 3

    @settings(max_examples=200, deadline=None)
    @given(psi=st.floats(min_value=0.001, max_value=1.0),
           population=st.integers(min_value=1, max_value=500))
    def test_quota_is_positive_and_at_most_population(self, psi, population):
        quota = P._quota(psi, population)
        assert 1 <= quota <= population


class TestSampleZn:
    TOPK = {0: [2, 3], 1: [0, 1], 2: [], 3: [4]}
    RELEVANTS = {0: {4}, 1: {0}, 3: {4}}

    def test_selects_only_zero_utility_measurable_users(self):
        got = P.sample_zn(self.TOPK, self.RELEVANTS, DIS, k=2)
        # User 0 misses its relevant item; user 1 and 3 hit; user 2 has no
        # ground truth and is skipped.
        assert got.tolist() == [0]

    def test_raises_when_every_measurable_user_scores(self):
        with pytest.raises(P.EmptySelectionError, match="zero-utility"):
            P.sample_zn(self.TOPK, {1: {0}, 3: {4}}, DIS, k=2)

    def test_raises_when_nobody_is_measurable(self):
        with pytest.raises(P.EmptySelectionError):
            P.sample_zn(self.TOPK, {}, DIS, k=2)


class TestSampleLd:
    def test_picks_fewest_interactions_ties_by_id(self):
        graph = six_user_graph()
        # Degrees within DIS: u0=1, u1=2, u2=3, u3=1; quota ceil(0.35*4)=2.
        got = P.sample_ld(graph, DIS, psi_u=0.35)
        assert got.tolist() == [0, 3]

    def test_full_fraction_returns_everyone(self):
        graph = six_user_graph()
        assert P.sample_ld(graph, DIS, psi_u=1.0).tolist() == [0, 1, 2, 3]


class TestSampleSp:
    def test_picks_least_popular_consumption(self):
        graph = six_user_graph()
        # Mean item popularity: u0=3, u1=3, u2=8/3, u3=3. Lowest is u2,
        # then the id tie-break inside the 3.0 group gives u0.
        got = P.sample_sp(graph, DIS, psi_u=0.35)
        assert got.tolist() == [0, 2]

    def test_degree_zero_user_is_an_error(self):
        graph = build_graph([(1, 0)], 2, 1)
        with pytest.raises(ValueError, match="no train interactions"):
            P.sample_sp(graph, np.array([0, 1]), psi_u=1.0)


class TestSampleFr:
    def test_unreachable_users_sort_first(self):
        # Two components: users 0,1 with item 0; users 2,3 with items 1,2.
        graph = build_graph([(0, 0), (1, 0), (2, 1), (3, 1), (3, 2)], 4, 3)
        got = P.sample_fr(graph, np.array([0, 1, 2]), np.array([3]), psi_u=0.35)
        # u0 and u1 cannot reach user 3 (sentinel distance 8 = n+1); u2 is
        # two hops away. Quota ceil(0.35*3)=2 takes the two isolated users.
        assert got.tolist() == [0, 1]

    def test_closer_users_enter_last(self):
        graph = build_graph([(0, 0), (1, 0), (2, 1), (3, 1), (3, 2)], 4, 3)
        got = P.sample_fr(graph, np.array([0, 1, 2]), np.array([3]), psi_u=1.0)
        assert got.tolist() == [0, 1, 2]

    def test_empty_advantaged_group_is_an_error(self):
        graph = six_user_graph()
        with pytest.raises(ValueError, match="advantaged group is empty"):
            P.sample_fr(graph, DIS, np.array([], dtype=np.intp), psi_u=0.5)


class TestSampleIp:
    def test_orders_by_disadvantaged_per_capita_count(self):
        graph = six_user_graph()
        # Disadvantaged counts per item: [3, 2, 1, 1, 0].
        assert P.sample_ip(graph, DIS, ADV, psi_i=0.2).tolist() == [0]
        assert P.sample_ip(graph, DIS, ADV, psi_i=0.4).tolist() == [0, 1]
        assert P.sample_ip(graph, DIS, ADV, psi_i=0.8).tolist() == [0, 1, 2, 3]

    def test_empty_disadvantaged_group_is_an_error(self):
        graph = six_user_graph()
        with pytest.raises(ValueError, match="disadvantaged group is empty"):
            P.sample_ip(graph, np.array([], dtype=np.intp), ADV, psi_i=0.2)


class TestApplyPolicy:
    def make_context(self):
        return P.PolicyContext(
            graph=six_user_graph(),
            disadvantaged_users=DIS,
            advantaged_users=ADV,
            topk_lists={0: [2, 3], 1: [0, 1], 2: [4, 0], 3: [4, 0]},
            perturbation_relevants={0: {4}, 1: {0}, 2: {3}, 3: {4}},
            k=2)

    def test_bm_passes_all_disadvantaged_and_all_items(self):
        users, items = P.apply_policy(P.parse_policy("bm"), self.make_context())
        assert users.tolist() == [0, 1, 2, 3]
        assert items.tolist() == [0, 1, 2, 3, 4]

    def test_item_policy_alone_keeps_all_users(self):
        users, items = P.apply_policy(P.parse_policy("ip", psi_i=0.4), self.make_context())
        assert users.tolist() == [0, 1, 2, 3]
        assert items.tolist() == [0, 1]

    def test_user_policy_alone_keeps_all_items(self):
        users, items = P.apply_policy(P.parse_policy("ld"), self.make_context())
        assert users.tolist() == [0, 3]
        assert items.tolist() == [0, 1, 2, 3, 4]

    def test_combined_policy_narrows_both_sides(self):
        users, items = P.apply_policy(P.parse_policy("ld+ip", psi_i=0.4),
                                      self.make_context())
        assert users.tolist() == [0, 3]
        assert items.tolist() == [0, 1]

    def test_zero_utility_selection_through_apply(self):
        users, items = P.apply_policy(P.parse_policy("zn"), self.make_context())
        # Users 0 and 2 miss their relevant items; 1 and 3 already score.
        assert users.tolist() == [0, 2]
        assert items.size == 5

    @pytest.mark.parametrize("name", ["bm", "ld", "sp", "fr", "ld+ip", "sp+ip", "fr+ip"])
    def test_users_are_sorted_unique_disadvantaged(self, name):
        users, _ = P.apply_policy(P.parse_policy(name), self.make_context())
        as_list = users.tolist()
        assert as_list == sorted(set(as_list))
        assert set(as_list) <= set(DIS.tolist())
