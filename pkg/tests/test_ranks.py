import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cocrash.cojump import CoCrashEvent, CrashFrequencyTable, build_frequency_table
from cocrash.errors import ConfigurationError, RangeError, UndefinedCorrelation
from cocrash.ranks import (
    CorrelationCurve,
    RankVector,
    average_ranks,
    correlation_curves,
    rank_assets,
    spearman,
    steady_state,
    steady_states,
)
from oracles import concordance_spearman, pairwise_ranks, textbook_spearman


def table_from_columns(columns, assets=None):
    """Frequency table from per-size count columns (sizes 1..len(columns))."""
    counts = np.array(columns, dtype=np.int64).T
    sizes = np.arange(1, counts.shape[1] + 1)
    marginal = counts.sum(axis=0)
    # pad one placeholder asset so every marginal is a multiple of m
    pad = (-marginal) % sizes
    counts = np.vstack([counts, pad])
    assets = tuple(assets or [f"S{i}" for i in range(counts.shape[0] - 1)]) + ("PAD",)
    return CrashFrequencyTable(assets, counts, counts.sum(axis=0) // sizes)


def test_rank_examples():
    t = table_from_columns([[5, 3, 1]], "ABC")
    assert rank_assets(t, 1).as_dict()["A"] == 1.0
    assert [rank_assets(t, 1).as_dict()[a] for a in "ABC"] == [1.0, 2.0, 3.0]
    t = table_from_columns([[5, 5, 1]], "ABC")
    assert [rank_assets(t, 1).as_dict()[a] for a in "ABC"] == [1.5, 1.5, 3.0]


def test_all_zero_is_one_tie():
    counts = np.zeros((300, 2), dtype=np.int64)
    counts[0, 0] = 1
    t = CrashFrequencyTable([f"S{i}" for i in range(300)], counts, [1, 0])
    rv = rank_assets(t, 2)
    assert np.all(rv.ranks == 150.5)
    assert rv.participating == 0
    with pytest.raises(RangeError):
        rank_assets(t, 3)


def test_rank_vector_sum_invariant():
    with pytest.raises(ConfigurationError):
        RankVector(1, ("A", "B"), [1.0, 1.0], 2)


def test_spearman_examples():
    x = [3.0, 1.0, 2.0, 7.0]
    assert spearman(x, x) == 1.0
    assert spearman(x, [-v for v in x]) == -1.0
    assert spearman([1, 2, 3, 4, 5], [1, 3, 2, 4, 5]) == 0.9
    assert textbook_spearman([1, 2, 3, 4, 5], [1, 3, 2, 4, 5]) == pytest.approx(0.9, abs=1e-15)
    assert concordance_spearman([1, 2, 3, 4, 5], [1, 3, 2, 4, 5]) == pytest.approx(0.9, abs=1e-15)


def test_spearman_errors():
    with pytest.raises(UndefinedCorrelation):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ConfigurationError):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(ConfigurationError):
        spearman([1], [1])


tied_vectors = st.integers(3, 50).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 6), min_size=n, max_size=n),
                        st.lists(st.integers(0, 6), min_size=n, max_size=n))
).filter(lambda ab: len(set(ab[0])) > 1 and len(set(ab[1])) > 1)


@given(tied_vectors)
def test_matches_concordance_oracle(ab):
    a, b = ab
    rho = spearman(a, b)
    assert rho == pytest.approx(concordance_spearman(a, b), abs=1e-12)
    assert rho == spearman(b, a)
    assert -1.0 <= rho <= 1.0


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=40, unique=True))
def test_average_ranks_match_counting(x):
    assert np.array_equal(average_ranks(x), pairwise_ranks(x))


@given(st.integers(3, 40).flatmap(lambda n: st.tuples(st.permutations(range(n)), st.permutations(range(n)))))
def test_tie_free_textbook_formula(ab):
    a, b = ab
    assert spearman(a, b) == pytest.approx(textbook_spearman(a, b), abs=1e-12)


@given(st.lists(st.integers(0, 20), min_size=3, max_size=30))
def test_monotone_transform_keeps_ranks(col):
    base = table_from_columns([col])
    moved = table_from_columns([[v * v * 3 + 7 * v for v in col]])
    assert np.array_equal(rank_assets(base, 1).ranks[:-1], rank_assets(moved, 1).ranks[:-1])


def test_identical_columns_give_unit_curve():
    col = [4, 2, 2, 0, 1, 3]  # total divisible by 1, 2 and 3, so no padding
    t = table_from_columns([col, col, col])
    curves = correlation_curves(t)
    assert curves[0].rho(1) == 1.0 and curves[1].rho(1) == 1.0


def test_curves_against_direct_spearman():
    rng = np.random.default_rng(3)
    cols = rng.integers(0, 5, size=(6, 15))
    cols[3] = 0
    t = table_from_columns(cols)
    curves = correlation_curves(t)
    bases = [c.base_size for c in curves]
    assert bases == t.sizes_with_events()
    for c in curves:
        for tau in c.taus.tolist():
            target = c.base_size + tau
            try:
                expected = concordance_spearman(-t.column(c.base_size), -t.column(target))
            except ZeroDivisionError:
                expected = math.nan
            if target not in bases or math.isnan(expected):
                assert math.isnan(c.rho(tau))
                assert tau in c.gaps
            else:
                assert c.rho(tau) == pytest.approx(expected, abs=1e-12)


def test_two_populations_decorrelate():
    rng = np.random.default_rng(8)
    n = 60
    small = np.zeros(n, int)
    large = np.zeros(n, int)
    small[:20] = rng.integers(5, 40, 20)
    large[30:50] = rng.integers(5, 40, 20)
    small_b = small + (small > 0) * rng.integers(0, 3, n)
    large_b = large + (large > 0) * rng.integers(0, 3, n)
    t = table_from_columns([small, small_b, large, large_b])
    c = {cv.base_size: cv for cv in correlation_curves(t)}
    assert c[1].rho(1) > 0.8 and c[3].rho(1) > 0.8
    assert c[1].rho(2) < 0.2 and c[2].rho(1) < 0.2


def test_curves_need_two_sizes():
    with pytest.raises(ConfigurationError):
        correlation_curves(table_from_columns([[1, 2]]))


def curve(base, rhos):
    return CorrelationCurve(base, np.arange(1, len(rhos) + 1), np.array(rhos, dtype=float))


def test_steady_state_constant():
    s = steady_state([curve(3, [0.1] + [0.7] * 25)], 3)
    assert s.mean_rho == pytest.approx(0.7)
    assert s.n_points == 19 and not s.truncated


def test_steady_state_truncated():
    s = steady_state([curve(1, [0.0, 0.2, 0.4, 0.6, 0.8])], 1)
    assert s.mean_rho == pytest.approx(0.5)
    assert s.n_points == 4 and s.truncated


def test_steady_state_gaps_and_missing():
    s = steady_state([curve(1, [0.0, np.nan, 0.4, np.nan, 0.8])], 1)
    assert s.mean_rho == pytest.approx(0.6) and s.n_points == 2
    assert math.isnan(steady_state([curve(1, [0.5])], 1).mean_rho)
    assert math.isnan(steady_state([], 4).mean_rho)
    assert steady_state([curve(1, [0.0, 1.0, 0.0])], 1, window=(2, 2)).mean_rho == 1.0
    with pytest.raises(ConfigurationError):
        steady_state([], 1, window=(3, 2))
    assert [s.base_size for s in steady_states([curve(1, [0.1]), curve(2, [0.2])])] == [1, 2]
