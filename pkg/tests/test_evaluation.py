import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from expertue.errors import (
    EmptyRetainedSet,
    GridMismatch,
    InvalidGrid,
    MaskShapeMismatch,
    MissingScore,
    RMaxNotOnGrid,
    SingleClass,
)
from expertue.evaluation import (
    PIXEL_LEVEL,
    CurvePair,
    RejectionCurve,
    aac,
    auroc_error_detection,
    curve_pair,
    default_grid,
    dice_metric,
    n_discard,
    oracle_curve,
    oracle_scores,
    parse_grid,
    percent_improvement,
    rejection_curve,
)

GRID5 = [0.0, 0.2, 0.4, 0.6, 0.8]
SCORES5 = [0.9, 0.1, 0.2, 0.5, 0.3]
CORRECT5 = np.array([0, 1, 1, 1, 0])


def as_outcomes(correct):
    """Binary predicted/truth arrays that realise a correctness vector."""
    correct = np.asarray(correct, dtype=int)
    return correct.copy(), np.ones_like(correct)


def brute_curve(scores, correct, grid):
    """Reference curve: sort, drop the ceiling count, average what is left."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    out = []
    for r in grid:
        k = math.ceil(Fraction(r).limit_denominator(10**6) * n)
        kept = [correct[i] for i in order[k:]]
        out.append(sum(kept) / len(kept))
    return out


def brute_auroc(scores, correct):
    err = [s for s, c in zip(scores, correct) if not c]
    ok = [s for s, c in zip(scores, correct) if c]
    wins = sum(1.0 if e > o else 0.5 if e == o else 0.0 for e in err for o in ok)
    return wins / (len(err) * len(ok))


def test_five_unit_curve():
    pred, truth = as_outcomes(CORRECT5)
    c = rejection_curve(SCORES5, pred, truth, grid=GRID5)
    np.testing.assert_allclose(c.m, [0.6, 0.75, 2 / 3, 1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(c.m, brute_curve(SCORES5, CORRECT5, GRID5), atol=1e-15)


def test_five_unit_oracle_and_aac():
    pred, truth = as_outcomes(CORRECT5)
    o = oracle_curve(pred, truth, grid=GRID5)
    np.testing.assert_allclose(o.m, [0.6, 0.75, 1.0, 1.0, 1.0], atol=1e-12)
    pair = curve_pair(SCORES5, pred, truth, grid=GRID5)
    diffs = [0, 0, 1 / 3, 0, 0]
    hand = sum(0.2 * (a + b) / 2 for a, b in zip(diffs, diffs[1:]))
    assert aac(pair) == pytest.approx(hand, abs=1e-12)
    assert aac(pair) == pytest.approx(0.0666667, abs=1e-6)


def test_all_correct_curve_is_flat():
    pred, truth = as_outcomes(np.ones(6))
    c = rejection_curve(np.random.default_rng(0).random(6), pred, truth)
    assert np.all(c.m == 1.0)


def test_r_zero_is_plain_metric():
    gen = np.random.default_rng(2)
    correct = gen.random(30) < 0.7
    pred, truth = as_outcomes(correct)
    assert rejection_curve(gen.random(30), pred, truth).m[0] == pytest.approx(correct.mean())


def test_oracle_closed_form_on_dense_grid():
    n, n_err = 100, 20
    correct = np.r_[np.zeros(n_err), np.ones(n - n_err)]
    pred, truth = as_outcomes(correct)
    o = oracle_curve(pred, truth)
    e = n_err / n
    expected = np.minimum(1.0, (1 - e) / (1 - o.r))
    np.testing.assert_allclose(o.m, expected, atol=1e-12)


def test_oracle_all_errors_stays_zero():
    pred, truth = as_outcomes(np.zeros(5))
    assert np.all(oracle_curve(pred, truth).m == 0.0)


def test_default_grid_steps():
    np.testing.assert_allclose(default_grid(5), GRID5)
    g = default_grid(7)
    assert g[-1] == 0.8 and np.all(np.diff(g) > 0) and g[1] == pytest.approx(1 / 7)
    assert len(parse_grid("uniform:5", 100)) == 6
    np.testing.assert_allclose(parse_grid("0,0.5,0.8", 4), [0, 0.5, 0.8])
    with pytest.raises(InvalidGrid):
        parse_grid("0.1,0.5", 4)
    with pytest.raises(InvalidGrid):
        parse_grid("uniform:x", 4)


def test_ceiling_is_robust_to_float_products():
    assert n_discard(0.6, 5) == 3  # 0.6 * 5 = 3.0000000000000004 in binary
    assert n_discard(0.61, 5) == 4
    assert n_discard(0.0, 5) == 0 and n_discard(1.0, 5) == 5


def test_ties_broken_by_input_order():
    pred, truth = as_outcomes([0, 1, 1, 0])
    c = rejection_curve([0.5, 0.5, 0.5, 0.5], pred, truth, grid=[0, 0.25, 0.5])
    np.testing.assert_allclose(c.m, [0.5, 2 / 3, 0.5])


@pytest.mark.parametrize("n", range(2, 8))
def test_oracle_pointwise_maximal_exhaustive(n):
    gen = np.random.default_rng(n)
    correct = (gen.random(n) < 0.5).astype(int)
    correct[0], correct[-1] = 0, 1
    pred, truth = as_outcomes(correct)
    grid = np.arange(n) / n  # every step that keeps at least one unit
    best = oracle_curve(pred, truth, grid=grid).m
    for perm in itertools.permutations(range(n)):
        scores = np.asarray(perm, dtype=float)
        m = rejection_curve(scores, pred, truth, grid=grid).m
        assert np.all(m <= best + 1e-12)
        pair = CurvePair(rejection_curve(scores, pred, truth, grid=grid), oracle_curve(pred, truth, grid=grid))
        assert aac(pair, r_max=grid[-1]) >= 0


@given(st.lists(st.booleans(), min_size=5, max_size=40), st.integers(0, 2**32 - 1))
def test_oracle_aac_is_zero_and_method_aac_nonnegative(correct, seed):
    pred, truth = as_outcomes(np.asarray(correct))
    pair = curve_pair(oracle_scores(pred, truth), pred, truth)
    assert abs(aac(pair)) <= 1e-12
    scores = np.random.default_rng(seed).random(len(correct))
    assert aac(curve_pair(scores, pred, truth)) >= 0


@given(st.lists(st.booleans(), min_size=5, max_size=30), st.integers(0, 2**32 - 1))
def test_curve_matches_brute_force(correct, seed):
    scores = np.random.default_rng(seed).integers(0, 4, len(correct)).astype(float)
    pred, truth = as_outcomes(np.asarray(correct))
    grid = default_grid(len(correct))
    c = rejection_curve(scores, pred, truth, grid=grid)
    np.testing.assert_allclose(c.m, brute_curve(list(scores), [int(x) for x in correct], grid), atol=1e-12)


def test_rectangle_aac():
    r = np.array(GRID5)
    pair = CurvePair(RejectionCurve(r, np.full(5, 0.6)), RejectionCurve(r, np.full(5, 0.9)))
    assert aac(pair) == pytest.approx(0.8 * 0.3, abs=1e-12)


def test_aac_grid_errors():
    a = RejectionCurve(np.array([0.0, 0.5]), np.array([0.5, 0.5]))
    b = RejectionCurve(np.array([0.0, 0.8]), np.array([0.5, 0.5]))
    with pytest.raises(GridMismatch):
        CurvePair(a, b)
    with pytest.raises(RMaxNotOnGrid):
        aac(CurvePair(a, a))


def test_default_grid_on_tiny_sets_discards_everything():
    pred, truth = as_outcomes([1, 0, 1, 1])
    with pytest.raises(EmptyRetainedSet):
        rejection_curve([0.1, 0.2, 0.3, 0.4], pred, truth)


def test_empty_retained_set_and_missing_score():
    pred, truth = as_outcomes([1, 0])
    with pytest.raises(EmptyRetainedSet):
        rejection_curve([0.1, 0.2], pred, truth, grid=[0.0, 0.5, 0.99])
    with pytest.raises(MissingScore):
        rejection_curve([np.nan, 0.2], pred, truth, grid=[0.0, 0.5])


def test_full_rejection_carries_last_value_forward():
    pred, truth = as_outcomes([1, 0, 1])
    c = rejection_curve([0.1, 0.9, 0.2], pred, truth, grid=[0.0, 0.5, 1.0])
    assert c.m[-1] == c.m[-2]


def test_monotone_transform_invariance():
    gen = np.random.default_rng(5)
    scores = gen.random(50)
    correct = gen.random(50) < 0.6
    pred, truth = as_outcomes(correct)
    a = rejection_curve(scores, pred, truth).m
    b = rejection_curve(np.exp(3 * scores) + 7, pred, truth).m
    np.testing.assert_array_equal(a, b)
    assert auroc_error_detection(scores, correct) == auroc_error_detection(np.log(scores + 1), correct)


def test_auroc_worked_example():
    scores = [0.9, 0.3, 0.5, 0.2, 0.1]
    correct = [False, False, True, True, True]
    got = auroc_error_detection(scores, correct)
    assert got == pytest.approx(5 / 6, abs=1e-12)
    assert got == pytest.approx(brute_auroc(scores, correct), abs=1e-15)
    assert got == pytest.approx(roc_auc_score(~np.array(correct), scores), abs=1e-12)


def test_auroc_extremes():
    assert auroc_error_detection([0.9, 0.8, 0.1], [False, False, True]) == 1.0
    assert auroc_error_detection([0.4, 0.4, 0.4], [False, True, True]) == 0.5
    with pytest.raises(SingleClass):
        auroc_error_detection([0.1, 0.2], [True, True])


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auroc_matches_brute_force_and_sklearn(pairs):
    scores, correct = map(list, zip(*pairs))
    if all(correct) or not any(correct):
        return
    got = auroc_error_detection(scores, correct)
    assert got == pytest.approx(brute_auroc(scores, correct), abs=1e-12)
    assert got == pytest.approx(roc_auc_score(~np.array(correct), scores), abs=1e-12)


@given(st.lists(st.booleans(), min_size=2, max_size=30), st.integers(0, 2**32 - 1))
def test_auroc_negation_sums_to_one(correct, seed):
    if all(correct) or not any(correct):
        return
    scores = np.random.default_rng(seed).permutation(len(correct)).astype(float)
    assert auroc_error_detection(scores, correct) + auroc_error_detection(-scores, correct) == pytest.approx(1.0)


def test_dice_examples():
    p = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0])
    g = np.array([1, 1, 1, 0, 1, 1, 1, 0, 0])
    assert dice_metric(p, g) == pytest.approx(0.6, abs=1e-12)
    assert dice_metric(g, g) == 1.0
    assert dice_metric([1, 0], [0, 1]) == 0.0
    assert dice_metric([0, 0], [0, 0]) == 1.0
    assert dice_metric(p, g, retained=np.arange(9) < 3) == 1.0
    with pytest.raises(MaskShapeMismatch):
        dice_metric([1, 0], [1, 0, 0])


def test_multiclass_dice_averages_foreground_classes():
    p = np.array([1, 2, 2, 0])
    g = np.array([1, 2, 0, 0])
    assert dice_metric(p, g, n_classes=3) == pytest.approx((1.0 + 2 / 3) / 2)


def test_pixel_level_per_image_and_pooled():
    # image a: 4 pixels, one wrong and most uncertain; image b: all correct
    groups = np.array(["a"] * 4 + ["b"] * 4)
    truth = np.array([1, 1, 0, 0, 1, 0, 0, 0])
    pred = np.array([0, 1, 0, 0, 1, 0, 0, 0])
    scores = np.array([0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])
    c = rejection_curve(scores, pred, truth, metric="dice", mode=PIXEL_LEVEL, groups=groups, grid=[0, 0.25, 0.8])
    assert c.m[0] == pytest.approx((2 / 3 + 1.0) / 2)
    assert c.m[1] == pytest.approx(1.0)
    pooled = rejection_curve(
        scores, pred, truth, metric="dice", mode=PIXEL_LEVEL, groups=groups, grid=[0, 0.25, 0.8], pooled=True
    )
    assert pooled.m[0] == pytest.approx(2 * 2 / (2 + 3))
    o = oracle_curve(pred, truth, metric="dice", mode=PIXEL_LEVEL, groups=groups, grid=[0, 0.25, 0.8])
    assert np.all(o.m >= c.m - 1e-12)


def test_pixel_level_requires_groups():
    with pytest.raises(MaskShapeMismatch):
        rejection_curve([0.1], [1], [1], mode=PIXEL_LEVEL)


def test_percent_improvement():
    assert percent_improvement(8.0, 10.0) == pytest.approx(-20.0)
