import math
import random

import pytest

from misalign_bench.stats import (
    CorrelationCell,
    CorrelationError,
    PairedSeries,
    average_ranks,
    correlate_conditions,
    pearson,
    spearman,
)


def series(q, l):
    labels = tuple(f"c{i}" for i in range(len(q)))
    return PairedSeries(labels, tuple(float(x) for x in q), tuple(float(y) for y in l))


def textbook_pearson(q, l):
    """Sum-form oracle: r = (n*Sxy - Sx*Sy) / sqrt((n*Sxx-Sx^2)(n*Syy-Sy^2))."""
    n = len(q)
    sx = sum(q)
    sy = sum(l)
    sxy = sum(x * y for x, y in zip(q, l))
    sxx = sum(x * x for x in q)
    syy = sum(y * y for y in l)
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def textbook_ranks(values):
    ranks = []
    for v in values:
        below = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        ranks.append(below + (equal + 1) / 2)
    return ranks


# -- hand-checked examples ------------------------------------------------------


def test_pearson_hand_value():
    assert pearson(series([1, 2, 3, 4], [2, 1, 4, 3])) == pytest.approx(0.6, abs=1e-15)


def test_pearson_perfect_lines():
    q = [0.1, 0.3, 0.5, 0.9]
    assert pearson(series(q, [2 * x + 1 for x in q])) == 1.0
    assert pearson(series(q, [-x for x in q])) == -1.0
    assert pearson(series(q, [1 - x for x in q])) == -1.0  # exactly, after clamping


def test_spearman_hand_value():
    assert spearman(series([1, 2, 3], [3, 1, 2])) == pytest.approx(-0.5, abs=1e-15)


def test_spearman_monotone_is_one():
    q = [0.2, 0.4, 0.7, 0.95]
    assert spearman(series(q, [math.exp(x) for x in q])) == 1.0


def test_average_ranks_ties():
    assert average_ranks([1, 2, 2, 3]) == [1.0, 2.5, 2.5, 4.0]
    assert average_ranks([5, 5, 5]) == [2.0, 2.0, 2.0]
    assert textbook_ranks([1, 2, 2, 3]) == [1.0, 2.5, 2.5, 4.0]


def test_spearman_equals_pearson_of_ranks():
    rng = random.Random(3)
    for _ in range(20):
        q = [rng.randint(0, 5) for _ in range(12)]
        l = [rng.randint(0, 5) for _ in range(12)]
        if len(set(q)) < 2 or len(set(l)) < 2:
            continue
        s = series(q, l)
        ranked = series(average_ranks(s.q), average_ranks(s.l))
        assert spearman(s) == pearson(ranked)


# -- oracle agreement -----------------------------------------------------------


def test_matches_textbook_oracle_on_random_series_with_ties():
    rng = random.Random(77)
    for _ in range(20):
        q = [round(rng.uniform(0, 1), 1) for _ in range(10)]  # coarse => ties happen
        l = [round(rng.uniform(0, 1), 1) for _ in range(10)]
        if len(set(q)) < 2 or len(set(l)) < 2:
            continue
        s = series(q, l)
        assert pearson(s) == pytest.approx(textbook_pearson(q, l), abs=1e-9)
        assert spearman(s) == pytest.approx(
            textbook_pearson(textbook_ranks(q), textbook_ranks(l)), abs=1e-9
        )


def test_symmetry():
    rng = random.Random(9)
    q = [rng.random() for _ in range(8)]
    l = [rng.random() for _ in range(8)]
    assert pearson(series(q, l)) == pytest.approx(pearson(series(l, q)), abs=1e-15)
    assert spearman(series(q, l)) == pytest.approx(spearman(series(l, q)), abs=1e-15)


def test_pearson_affine_invariance():
    rng = random.Random(10)
    q = [rng.random() for _ in range(10)]
    l = [rng.random() for _ in range(10)]
    base = pearson(series(q, l))
    shifted = pearson(series([3.5 * x + 2 for x in q], [0.25 * y - 7 for y in l]))
    assert shifted == pytest.approx(base, abs=1e-12)


def test_spearman_monotone_invariance():
    rng = random.Random(11)
    q = [rng.randint(0, 20) for _ in range(10)]
    l = [rng.randint(0, 20) for _ in range(10)]
    base = spearman(series(q, l))
    warped = spearman(series([x ** 3 for x in q], [math.exp(0.3 * y) for y in l]))
    assert warped == pytest.approx(base, abs=1e-12)


def test_reported_columns_correlation(reference_columns):
    # frozen oracle values for the published deeplabv3-mIoU x HR/COR/SMR columns
    cond = reference_columns["conditions"]
    miou = reference_columns["miou"]["deeplabv3"]
    clip = reference_columns["clip"]
    s_cor = series(miou, clip["cor"])
    assert pearson(s_cor) == pytest.approx(0.058673453440644896, abs=1e-9)
    assert spearman(s_cor) == pytest.approx(0.14787187435698287, abs=1e-9)
    assert spearman(series(miou, clip["hr"])) == pytest.approx(-0.20489392444707935, abs=1e-9)
    assert len(cond) == 10


# -- errors ----------------------------------------------------------------------


def test_too_few_points():
    with pytest.raises(CorrelationError, match="at least 3"):
        pearson(series([1, 2], [2, 1]))


def test_constant_series_undefined():
    with pytest.raises(CorrelationError, match="undefined correlation"):
        pearson(series([1, 1, 1], [1, 2, 3]))
    with pytest.raises(CorrelationError, match="undefined correlation"):
        spearman(series([1, 2, 3], [4, 4, 4]))


def test_series_validation():
    with pytest.raises(ValueError, match="length mismatch"):
        PairedSeries(("a",), (1.0, 2.0), (1.0,))
    with pytest.raises(ValueError, match="non-finite"):
        PairedSeries(("a", "b"), (1.0, float("nan")), (1.0, 2.0))


# -- condition-table correlation --------------------------------------------------


def make_table(n=10):
    rng = random.Random(5)
    return {
        f"c{i}": {"miou": rng.random(), "hr": rng.random(), "cor": rng.random(),
                  "smr": rng.random()}
        for i in range(n)
    }


def test_correlate_conditions_shape():
    cells, points = correlate_conditions(make_table(10))
    assert len(cells) == 3
    assert len(points) == 30
    assert {(c.q_metric, c.l_metric) for c in cells} == {
        ("miou", "hr"), ("miou", "cor"), ("miou", "smr")
    }
    assert all(c.n == 10 for c in cells)
    assert all(c.defined for c in cells)


def test_correlate_conditions_constant_column_flagged():
    table = make_table(6)
    for row in table.values():
        row["smr"] = 0.5
    cells, _ = correlate_conditions(table)
    by_metric = {c.l_metric: c for c in cells}
    assert by_metric["smr"].pearson is None
    assert by_metric["smr"].spearman is None
    assert by_metric["hr"].defined and by_metric["cor"].defined


def test_correlate_conditions_insufficient_lists_missing():
    table = make_table(4)
    table["c1"]["hr"] = None
    table["c2"]["hr"] = None
    with pytest.raises(CorrelationError, match=r"\(miou, hr\).*c1.*c2"):
        correlate_conditions(table, ("miou",), ("hr",))


def test_correlate_conditions_missing_rows_reduce_n():
    table = make_table(8)
    table["c0"]["cor"] = None
    cells, points = correlate_conditions(table, ("miou",), ("cor",))
    assert cells[0].n == 7
    assert len(points) == 7


def test_correlate_conditions_anticorrelated_construction():
    table = {f"c{i}": {"miou": 0.1 * i, "hr": 1 - 0.1 * i} for i in range(10)}
    cells, _ = correlate_conditions(table, ("miou",), ("hr",))
    assert cells[0].pearson == -1.0
    assert cells[0].spearman == -1.0
