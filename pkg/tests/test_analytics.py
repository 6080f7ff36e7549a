import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, strategies as st

from corpusfilter.analytics import (
    LengthStats,
    MetricTable,
    average_rank,
    compare_filters,
    fractional_ranks,
    length_stats,
    report_to_files,
)
from corpusfilter.corpus_io import Document
from corpusfilter.errors import DataError
from tests.ranking_fixtures import (
    DECONT_EXPECTED,
    ENGLISH_EXPECTED,
    decont_table,
    english_table,
)


def docs_with_counts(counts):
    return [Document(f"d{i}", "x", " ".join(["w"] * c)) for i, c in enumerate(counts)]


class TestLengthStats:
    def test_hand_computed(self):
        s = length_stats(docs_with_counts([1, 2, 3]))
        assert s.count == 3
        assert s.mean == pytest.approx(2.0)
        assert s.median == pytest.approx(2.0)
        assert s.std == pytest.approx(math.sqrt(2.0 / 3.0))  # population variance

    def test_single_doc(self):
        s = length_stats(docs_with_counts([7]))
        assert s.std == 0.0
        assert s.mean == 7.0

    def test_even_count_median(self):
        s = length_stats(docs_with_counts([1, 2, 3, 4]))
        assert s.median == pytest.approx(2.5)

    def test_empty_corpus_is_error(self):
        with pytest.raises(DataError):
            length_stats([])

    @given(st.lists(st.integers(min_value=0, max_value=500), min_size=1, max_size=100))
    def test_matches_naive_recompute(self, counts):
        s = length_stats(docs_with_counts(counts))
        n = len(counts)
        mean = sum(counts) / n
        var = sum((c - mean) ** 2 for c in counts) / n
        srt = sorted(counts)
        median = (srt[(n - 1) // 2] + srt[n // 2]) / 2
        assert s.mean == pytest.approx(mean, rel=1e-9)
        assert s.std == pytest.approx(math.sqrt(var), rel=1e-9, abs=1e-12)
        assert s.median == pytest.approx(median, rel=1e-9)
        assert min(counts) <= s.median <= max(counts)


class TestFractionalRanks:
    def test_strict_ordering(self):
        assert fractional_ranks(np.array([0.9, 0.1, 0.5])).tolist() == [1.0, 3.0, 2.0]

    def test_two_way_tie(self):
        assert fractional_ranks(np.array([0.5, 0.5, 0.1])).tolist() == [1.5, 1.5, 3.0]

    @given(st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False),
                    min_size=2, max_size=30))
    def test_matches_scipy_rankdata(self, values):
        ours = fractional_ranks(np.array(values))
        oracle = scipy.stats.rankdata([-v for v in values], method="average")
        assert np.allclose(ours, oracle)


class TestAverageRank:
    def test_english_table_fixture(self):
        ranks = average_rank(english_table())
        for name, expected in ENGLISH_EXPECTED.items():
            assert ranks[name] == pytest.approx(expected, abs=1e-4)
        assert sum(ranks.values()) == pytest.approx(10.0, abs=1e-9)

    def test_decontamination_table_fixture(self):
        ranks = average_rank(decont_table())
        for name, expected in DECONT_EXPECTED.items():
            assert ranks[name] == pytest.approx(expected, abs=1e-4)
        assert sum(ranks.values()) == pytest.approx(10.0, abs=1e-9)

    def test_full_tie_gives_mean_rank(self):
        t = MetricTable(approaches=["a", "b"], tasks=["t1", "t2"],
                        values=np.array([[0.5, 0.5], [0.3, 0.3]]))
        ranks = average_rank(t)
        assert ranks == {"a": 1.5, "b": 1.5}

    def test_dominant_approach_ranks_first(self):
        t = MetricTable(approaches=["best", "mid", "worst"], tasks=["t1", "t2"],
                        values=np.array([[3, 2, 1], [30, 20, 10]]))
        ranks = average_rank(t)
        assert ranks["best"] == 1.0
        assert ranks["worst"] == 3.0

    def test_lower_is_better_direction(self):
        t = MetricTable(approaches=["a", "b"], tasks=["t"],
                        values=np.array([[1.0, 2.0]]), direction="lower")
        assert average_rank(t) == {"a": 1.0, "b": 2.0}

    @given(
        st.integers(min_value=2, max_value=6),
        st.integers(min_value=1, max_value=8),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_rank_sum_conservation(self, n_app, n_task, seed):
        rng = np.random.Generator(np.random.PCG64(seed))
        values = np.round(rng.random((n_task, n_app)), 2)  # rounded to force ties
        t = MetricTable(approaches=[f"a{i}" for i in range(n_app)],
                        tasks=[f"t{i}" for i in range(n_task)], values=values)
        total = sum(average_rank(t).values())
        assert total == pytest.approx(n_app * (n_app + 1) / 2, abs=1e-9)

    def test_invariant_under_monotone_transform(self):
        t = english_table()
        transformed = MetricTable(
            approaches=t.approaches, tasks=t.tasks,
            values=np.exp(t.values * 3.7) + 11.0,
        )
        assert average_rank(t) == average_rank(transformed)

    def test_non_rectangular_rejected(self):
        with pytest.raises(DataError):
            MetricTable(approaches=["a", "b"], tasks=["t"], values=np.array([[1.0]]))

    def test_single_approach_rejected(self):
        t = MetricTable(approaches=["a"], tasks=["t"], values=np.array([[1.0]]))
        with pytest.raises(DataError):
            average_rank(t)


def test_metric_table_csv_round_trip(tmp_path):
    t = english_table()
    p = tmp_path / "table.csv"
    t.to_csv(p)
    back = MetricTable.from_csv(p)
    assert back.approaches == t.approaches
    assert back.tasks == t.tasks
    assert np.array_equal(back.values, t.values)


class TestCompareFilters:
    def test_two_rows(self):
        base = docs_with_counts([10, 20, 30, 40])
        report = compare_filters(base, [("keep-half", base[:2])])
        assert report["baseline"]["docs"] == 4
        assert len(report["runs"]) == 1
        assert report["runs"][0]["retained_doc_fraction"] == 0.5

    def test_short_doc_filter_lowers_mean(self):
        base = docs_with_counts([5, 5, 5, 100, 100, 100])
        short_half = base[:3]
        report = compare_filters(base, [("short", short_half)])
        assert (report["runs"][0]["length_stats"]["mean"]
                < report["baseline"]["length_stats"]["mean"])

    def test_token_vs_doc_fraction_direction(self):
        base = docs_with_counts([5] * 10 + [50] * 90)
        run = [d for d in base[:10]]  # the short ones
        report = compare_filters(base, [("short10", run)])
        r = report["runs"][0]
        assert r["retained_token_fraction"] < r["retained_doc_fraction"]

    def test_empty_runs_is_error(self):
        with pytest.raises(DataError):
            compare_filters(docs_with_counts([1]), [])

    def test_mismatched_corpus_is_error(self):
        base = docs_with_counts([1, 2])
        alien = [Document("alien", "x", "w")]
        with pytest.raises(DataError, match="alien"):
            compare_filters(base, [("bad", alien)])

    def test_report_files(self, tmp_path):
        base = docs_with_counts([10, 20])
        report = compare_filters(base, [("half", base[:1])], metric_table=english_table())
        report_to_files(report, tmp_path / "r.json", tmp_path / "r.csv")
        assert (tmp_path / "r.json").exists()
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + baseline + one run
