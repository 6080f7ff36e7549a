import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corpusfilter.corpus_io import CorpusManifest, Document
from corpusfilter.errors import ConfigError, DataError
from corpusfilter.scores import ScoreTable
from corpusfilter.selector import (
    filter_corpus,
    mix_replay,
    plan_selection,
    retention_for_budget,
)
from tests.conftest import make_docs


def brute_force_retained(ids, scores, p):
    """Oracle: full sort by (score desc, id asc), take ceil(p*N)."""
    k = math.ceil(p * len(ids))
    order = sorted(zip(ids, scores), key=lambda t: (-t[1], t[0]))
    return {doc_id for doc_id, _ in order[:k]}


def table_of(ids, scores):
    return ScoreTable(ids=list(ids), scores=np.asarray(scores, dtype=np.float64))


class TestPlanSelection:
    def test_top_ten_percent_of_ten(self):
        ids = [f"d{i}" for i in range(10)]
        scores = [0.3, 0.9, 0.1, 0.5, 0.2, 0.8, 0.4, 0.6, 0.7, 0.0]
        plan = plan_selection(table_of(ids, scores), 0.10)
        assert plan.retained == brute_force_retained(ids, scores, 0.10) == {"d1"}

    def test_p_one_retains_all(self):
        ids = ["a", "b", "c"]
        scores = [0.5, 0.1, 0.9]
        plan = plan_selection(table_of(ids, scores), 1.0)
        assert plan.retained == set(ids)
        assert plan.threshold == 0.1

    def test_all_equal_ties_break_by_id(self):
        ids = ["dz", "da", "dm", "db"]
        scores = [0.5, 0.5, 0.5, 0.5]
        plan = plan_selection(table_of(ids, scores), 0.5)
        assert plan.retained == {"da", "db"}

    def test_empty_table_is_error(self):
        with pytest.raises(DataError):
            plan_selection(table_of([], []), 0.5)

    def test_bad_fraction(self):
        t = table_of(["a"], [0.1])
        for p in (0.0, -0.1, 1.1):
            with pytest.raises(ConfigError):
                plan_selection(t, p)

    def test_size_is_ceil(self):
        ids = [f"d{i}" for i in range(7)]
        scores = list(range(7))
        assert len(plan_selection(table_of(ids, scores), 0.5).retained) == 4  # ceil(3.5)
        assert len(plan_selection(table_of(ids, scores), 0.01).retained) == 1

    @given(
        st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
                 min_size=1, max_size=60),
        st.floats(min_value=0.01, max_value=1.0),
    )
    def test_matches_brute_force(self, scores, p):
        ids = [f"d{i:03d}" for i in range(len(scores))]
        plan = plan_selection(table_of(ids, scores), p)
        assert plan.retained == brute_force_retained(ids, scores, p)

    @given(
        st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=60),
        st.floats(min_value=0.01, max_value=1.0),
    )
    def test_matches_brute_force_under_heavy_ties(self, scores, p):
        ids = [f"d{i:03d}" for i in range(len(scores))]
        plan = plan_selection(table_of(ids, scores), p)
        assert plan.retained == brute_force_retained(ids, scores, p)

    @given(
        st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False),
                 min_size=1, max_size=50),
        st.floats(min_value=0.05, max_value=0.95),
        st.floats(min_value=0.05, max_value=0.95),
    )
    def test_monotone_nesting(self, scores, p1, p2):
        lo, hi = sorted((p1, p2))
        ids = [f"d{i:03d}" for i in range(len(scores))]
        t = table_of(ids, scores)
        assert plan_selection(t, lo).retained <= plan_selection(t, hi).retained

    def test_invariant_under_increasing_transform(self):
        ids = [f"d{i}" for i in range(20)]
        scores = np.linspace(-3, 3, 20) ** 3
        t1 = table_of(ids, scores)
        t2 = table_of(ids, np.tanh(scores) * 7 + 2)  # strictly increasing map
        for p in (0.1, 0.33, 0.8):
            assert plan_selection(t1, p).retained == plan_selection(t2, p).retained

    @given(
        st.lists(st.floats(min_value=-50, max_value=50, allow_nan=False),
                 min_size=1, max_size=200),
        st.floats(min_value=0.01, max_value=1.0),
    )
    @settings(max_examples=50)
    def test_refine_equals_sort(self, scores, p):
        ids = [f"d{i:04d}" for i in range(len(scores))]
        t = table_of(ids, scores)
        by_sort = plan_selection(t, p, method="sort")
        by_refine = plan_selection(t, p, method="refine")
        assert by_refine.retained == by_sort.retained
        assert by_refine.threshold == by_sort.threshold

    def test_refine_equals_sort_past_collect_limit(self):
        rng = np.random.Generator(np.random.PCG64(7))
        scores = np.round(rng.random(200_000), 3)  # heavy ties
        ids = [f"d{i:06d}" for i in range(len(scores))]
        t = table_of(ids, scores)
        a = plan_selection(t, 0.1, method="sort")
        b = plan_selection(t, 0.1, method="refine")
        assert a.retained == b.retained and a.threshold == b.threshold

    def test_plan_json_round_trip(self, tmp_path):
        plan = plan_selection(table_of(["a", "b", "c"], [3.0, 2.0, 1.0]), 0.67)
        p = tmp_path / "plan.json"
        plan.save(p)
        back = type(plan).load(p)
        assert back.retained == plan.retained
        assert back.threshold == plan.threshold
        assert back.retention_fraction == plan.retention_fraction


class TestRetentionForBudget:
    def test_low_resource_case(self):
        # 108 total units, budget 70: 64.8% raw, 65% rounded
        r = retention_for_budget(108, 70)
        assert abs(r.fraction - 70 / 108) < 1e-12
        assert r.percent == 65

    def test_budget_above_total(self):
        assert retention_for_budget(50, 70).fraction == 1.0

    def test_exact_division(self):
        r = retention_for_budget(1000, 100)
        assert r.fraction == 0.1
        assert r.percent == 10

    def test_accepts_manifest(self):
        m = CorpusManifest(paths=[], doc_count=10, total_ws_tokens=200, lang="x")
        assert retention_for_budget(m, 100).fraction == 0.5

    def test_zero_budget_is_error(self):
        with pytest.raises(ConfigError):
            retention_for_budget(100, 0)

    def test_empty_corpus_is_error(self):
        with pytest.raises(DataError):
            retention_for_budget(0, 10)


class TestFilterCorpus:
    def test_keeps_plan_ids_in_order(self):
        docs = make_docs(5)
        plan = plan_selection(
            table_of([d.id for d in docs], [0.1, 0.9, 0.2, 0.8, 0.3]), 0.4
        )
        kept, stats = filter_corpus(docs, plan)
        assert [d.id for d in kept] == ["d000001", "d000003"]
        assert stats.retained_docs == 2
        assert stats.input_docs == 5

    def test_p1_is_identity(self):
        docs = make_docs(4)
        plan = plan_selection(table_of([d.id for d in docs], [1, 2, 3, 4]), 1.0)
        kept, stats = filter_corpus(docs, plan)
        assert kept == docs
        assert stats.retained_token_fraction == 1.0

    def test_missing_retained_id_is_error(self):
        docs = make_docs(3)
        plan = plan_selection(table_of(["d000000", "ghost"], [0.9, 1.0]), 1.0)
        with pytest.raises(DataError, match="ghost"):
            filter_corpus(docs, plan)

    def test_token_fraction_tracks_short_docs(self):
        # high scorers are short: retained-token share must undershoot doc share
        docs = [
            Document(f"d{i}", "x", ("w " * (5 if i < 10 else 50)).strip())
            for i in range(100)
        ]
        scores = [1.0 if i < 10 else 0.0 for i in range(100)]
        plan = plan_selection(table_of([d.id for d in docs], scores), 0.10)
        _, stats = filter_corpus(docs, plan)
        assert stats.retained_doc_fraction == pytest.approx(0.10)
        assert stats.retained_token_fraction < 0.10


class TestMixReplay:
    def test_rate_zero_is_identity(self):
        filtered = make_docs(10, prefix="f")
        raw = make_docs(5, prefix="r")
        mixed, stats = mix_replay(filtered, raw, 0.0, seed=1)
        assert mixed == filtered
        assert stats.replay_docs == 0

    def test_five_percent_proportion(self):
        filtered = make_docs(950, prefix="f")
        raw = make_docs(200, prefix="r")
        mixed, stats = mix_replay(filtered, raw, 0.05, seed=3)
        assert stats.output_docs == 1000
        assert stats.replay_docs == 50
        assert len(mixed) == 1000
        assert sum(1 for d in mixed if d.id.startswith("r")) == 50

    def test_deterministic(self):
        filtered = make_docs(100, prefix="f")
        raw = make_docs(60, prefix="r")
        m1, _ = mix_replay(filtered, raw, 0.1, seed=9)
        m2, _ = mix_replay(filtered, raw, 0.1, seed=9)
        assert [d.id for d in m1] == [d.id for d in m2]

    def test_empty_raw_with_positive_rate(self):
        with pytest.raises(DataError):
            mix_replay(make_docs(10), [], 0.05, seed=1)

    def test_collision_reidentified(self):
        filtered = make_docs(20, prefix="s")
        raw = make_docs(20, prefix="s")  # same ids on purpose
        mixed, stats = mix_replay(filtered, raw, 0.2, seed=5)
        assert stats.reidentified == stats.replay_docs > 0
        assert len({d.id for d in mixed}) == len(mixed)

    @given(st.integers(min_value=1, max_value=400),
           st.sampled_from([0.0, 0.05, 0.1, 0.25, 0.5]))
    @settings(max_examples=40)
    def test_fraction_exact(self, n_filtered, rate):
        filtered = make_docs(n_filtered, prefix="f")
        raw = make_docs(max(1, int(n_filtered * 2)), prefix="r")
        try:
            mixed, stats = mix_replay(filtered, raw, rate, seed=2)
        except DataError:
            return  # raw too small for the requested proportion
        m = stats.output_docs
        assert len(mixed) == m
        assert stats.replay_docs == round(rate * m)
        assert stats.filtered_docs <= n_filtered
