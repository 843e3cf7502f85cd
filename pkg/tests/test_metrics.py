"""Metric tests, including equivalence against an independent brute-force oracle."""

import numpy as np
import pytest

from composed_retrieval.errors import DataError
from composed_retrieval.metrics import (
    RelevanceVector,
    UndefinedAveragePrecision,
    acc_at_k,
    accuracy_at_k,
    average_precision,
    mean_ap,
    precision_at,
)


# -- independent oracle ----------------------------------------------------
# Deliberately naive re-implementations used only as a second opinion.


def oracle_ap(rel, total_relevant):
    total = 0.0
    for i in range(len(rel)):
        if rel[i] == 1:
            hits_so_far = sum(rel[: i + 1])
            total += hits_so_far / (i + 1)
    return total / total_relevant


def oracle_map(rel_lists):
    aps = [oracle_ap(rel, sum(rel)) for rel in rel_lists if sum(rel) > 0]
    return sum(aps) / len(aps)


def oracle_acc_at_k(rel_lists, k):
    vals = []
    for rel in rel_lists:
        if sum(rel) == 0:
            continue
        vals.append(1 if 1 in rel[:k] else 0)
    return sum(vals) / len(vals)


class TestPrecisionAt:
    def test_hand_case(self):
        rv = RelevanceVector.from_flags([1, 0, 1])
        assert precision_at(3, rv) == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_all_relevant(self):
        rv = RelevanceVector.from_flags([1, 1, 1])
        for i in (1, 2, 3):
            assert precision_at(i, rv) == 1.0

    def test_first_irrelevant(self):
        rv = RelevanceVector.from_flags([0, 1, 1])
        assert precision_at(1, rv) == 0.0

    def test_out_of_range(self):
        rv = RelevanceVector.from_flags([1, 0])
        with pytest.raises(ValueError):
            precision_at(0, rv)
        with pytest.raises(ValueError):
            precision_at(3, rv)


class TestAveragePrecision:
    def test_hand_case(self):
        # (1/2) * (1/1 + 2/3) = 5/6
        rv = RelevanceVector.from_flags([1, 0, 1])
        assert average_precision(rv) == pytest.approx(5.0 / 6.0, abs=1e-15)

    def test_perfect_ranking(self):
        rv = RelevanceVector.from_flags([1, 1, 1, 0, 0])
        assert average_precision(rv) == 1.0

    def test_single_relevant_second(self):
        rv = RelevanceVector.from_flags([0, 1])
        assert average_precision(rv) == pytest.approx(0.5, abs=1e-15)

    def test_undefined_for_no_relevant(self):
        rv = RelevanceVector.from_flags([0, 0, 0])
        with pytest.raises(UndefinedAveragePrecision):
            average_precision(rv)

    def test_ap_one_iff_relevant_items_first(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(2, 12))
            rel = [int(rng.random() < 0.4) for _ in range(n)]
            if sum(rel) == 0:
                continue
            rv = RelevanceVector.from_flags(rel)
            ap = average_precision(rv)
            r = sum(rel)
            if all(rel[:r]):
                assert ap == pytest.approx(1.0, abs=1e-15)
            else:
                assert ap < 1.0

    def test_invariant_to_tail_permutations(self):
        # permuting irrelevant items below the last relevant item keeps AP
        rel = [0, 1, 0, 1, 0, 0, 0]
        base = average_precision(RelevanceVector.from_flags(rel))
        assert average_precision(RelevanceVector.from_flags([0, 1, 0, 1, 0, 0, 0])) == base

    def test_truncated_list_uses_database_count(self):
        rv = RelevanceVector(rel=(1, 0), total_relevant=4)
        assert average_precision(rv) == pytest.approx(0.25, abs=1e-15)


class TestMeanAp:
    def test_mean_of_two(self):
        rels = [
            RelevanceVector.from_flags([1, 1, 0]),  # AP 1.0
            RelevanceVector.from_flags([0, 1]),  # AP 0.5
        ]
        assert mean_ap(rels) == pytest.approx(0.75, abs=1e-15)

    def test_single_query(self):
        rv = RelevanceVector.from_flags([1, 0, 1])
        assert mean_ap([rv]) == average_precision(rv)

    def test_skips_queries_without_relevant(self):
        rels = [
            RelevanceVector.from_flags([0, 0]),
            RelevanceVector.from_flags([1, 0]),
        ]
        assert mean_ap(rels) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_ap([])


class TestAccAtK:
    def test_threshold_case(self):
        rv = RelevanceVector.from_flags([0, 0, 1])
        assert acc_at_k(rv, 2) == 0
        assert acc_at_k(rv, 3) == 1

    def test_k_beyond_length(self):
        rv = RelevanceVector.from_flags([0, 1])
        assert acc_at_k(rv, 50) == 1

    def test_dataset_mean(self):
        rels = [
            RelevanceVector.from_flags(r)
            for r in ([1, 0], [0, 0, 1], [1, 1], [0, 1])
        ]
        assert accuracy_at_k(rels, 2) == pytest.approx(0.75, abs=1e-15)

    def test_k_zero_rejected(self):
        rv = RelevanceVector.from_flags([1])
        with pytest.raises(ValueError):
            acc_at_k(rv, 0)
        with pytest.raises(ValueError):
            accuracy_at_k([rv], 0)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            rel = [int(rng.random() < 0.3) for _ in range(int(rng.integers(1, 20)))]
            rv = RelevanceVector.from_flags(rel)
            vals = [acc_at_k(rv, k) for k in range(1, len(rel) + 1)]
            assert vals == sorted(vals)


class TestOracleEquivalence:
    def test_map_and_acc_match_bruteforce(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n_queries = int(rng.integers(1, 12))
            rel_lists = []
            for _ in range(n_queries):
                length = int(rng.integers(1, 50))
                rel_lists.append([int(rng.random() < 0.3) for _ in range(length)])
            if not any(sum(r) > 0 for r in rel_lists):
                continue
            rvs = [RelevanceVector.from_flags(r) for r in rel_lists]
            assert mean_ap(rvs) == pytest.approx(oracle_map(rel_lists), abs=1e-12)
            for k in (1, 2, 4):
                assert accuracy_at_k(rvs, k) == pytest.approx(
                    oracle_acc_at_k(rel_lists, k), abs=1e-12
                )

    def test_metrics_ignore_scores(self):
        # same relevance pattern from different score vectors -> same metrics
        rel = [1, 0, 1, 0]
        rv = RelevanceVector.from_flags(rel)
        assert average_precision(rv) == pytest.approx(oracle_ap(rel, 2), abs=1e-15)


class TestValidation:
    def test_bad_relevance_values(self):
        with pytest.raises(DataError):
            RelevanceVector(rel=(0, 2), total_relevant=1)

    def test_total_below_observed(self):
        with pytest.raises(DataError):
            RelevanceVector(rel=(1, 1), total_relevant=1)
