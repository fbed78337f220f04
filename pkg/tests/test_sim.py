import numpy as np
import pytest

from expertue.errors import ParamOutOfRange
from expertue.evaluation import rejection_curve
from expertue.sim import (
    EXPERT_ACCURACY,
    TriageParams,
    monte_carlo_triage,
    triage_accuracy,
    triage_sweep,
)

from conftest import triage_param_sets


def test_default_expert_accuracy():
    assert EXPERT_ACCURACY == 0.956
    assert TriageParams(0.1, 0.9).a_exp == 0.956


def test_two_rounds_example():
    assert triage_accuracy(TriageParams(0.2, 0.95, 0.956, 2)) == pytest.approx(0.8 * 0.95 + 0.2 * 0.956, abs=1e-15)
    assert triage_accuracy(TriageParams(0.2, 0.95, 0.956, 2)) == pytest.approx(0.9512, abs=1e-12)


def test_boundaries_exact():
    p = TriageParams(0.3, 0.9, 0.956, 1)
    assert triage_accuracy(p) == (1 - 0.3) * 0.9
    assert triage_accuracy(TriageParams(0.0, 0.87, 0.5, 4)) == 0.87


def test_monotonicity():
    base = dict(r=0.3, a_cl=0.8)
    by_n = [triage_accuracy(TriageParams(a_exp=0.6, n=n, **base)) for n in range(1, 8)]
    assert np.all(np.diff(by_n) >= 0)
    by_exp = [triage_accuracy(TriageParams(a_exp=a, n=3, **base)) for a in np.linspace(0.05, 1, 12)]
    assert np.all(np.diff(by_exp) >= 0)
    by_r = [triage_accuracy(TriageParams(r, 0.8, 0.9, 1)) for r in np.linspace(0, 1, 11)]
    assert np.all(np.diff(by_r) <= 0)


@pytest.mark.parametrize("a_exp", [0.5, 0.7, 0.956, 1.0])
def test_many_rounds_limit(a_exp):
    p = TriageParams(0.4, 0.85, a_exp, 200)
    assert abs(triage_accuracy(p) - (0.6 * 0.85 + 0.4)) < 1e-10


def test_param_validation():
    for bad in (dict(r=1.5, a_cl=0.5), dict(r=0.5, a_cl=-0.1), dict(r=0.5, a_cl=0.5, a_exp=0.0), dict(r=0.5, a_cl=0.5, n=0)):
        with pytest.raises(ParamOutOfRange):
            TriageParams(**bad)
    with pytest.raises(ParamOutOfRange):
        monte_carlo_triage(TriageParams(0.1, 0.9), 0, 1)


def test_monte_carlo_certain_expert_and_single_round():
    mean, _ = monte_carlo_triage(TriageParams(0.3, 1.0, 1.0, 2), 10000, 3)
    assert mean == 1.0
    mean, se = monte_carlo_triage(TriageParams(0.3, 0.8, 0.956, 1), 100000, 3)
    assert abs(mean - 0.7 * 0.8) < 3 * se


def test_monte_carlo_default_parameters():
    p = TriageParams(0.2, 0.95)
    mean, se = monte_carlo_triage(p, 100000, 11)
    assert abs(mean - triage_accuracy(p)) < 3 * se


@pytest.mark.parametrize("i", range(20))
def test_monte_carlo_agrees_with_closed_form(i):
    p = triage_param_sets()[i]
    mean, se = monte_carlo_triage(p, 100000, 100 + i)
    assert abs(mean - triage_accuracy(p)) <= 3 * se


def test_monte_carlo_is_seed_deterministic():
    p = TriageParams(0.2, 0.9)
    assert monte_carlo_triage(p, 1000, 5) == monte_carlo_triage(p, 1000, 5)


def test_sweep_five_unit_composition():
    scores = [0.9, 0.1, 0.2, 0.5, 0.3]
    correct = [False, True, True, True, False]
    sweep = triage_sweep(scores, correct, a_exp=0.956, n=3, grid=[0, 0.2, 0.4, 0.6, 0.8])
    expected = 0.6 * (2 / 3) + 0.4 * (1 - 0.044**2)
    assert sweep.accuracy[2] == pytest.approx(expected, abs=1e-12)
    assert sweep.accuracy[2] == pytest.approx(0.79923, abs=1e-5)


def test_sweep_single_round_is_retained_share():
    gen = np.random.default_rng(1)
    scores = gen.random(40)
    correct = gen.random(40) < 0.7
    sweep = triage_sweep(scores, correct, n=1)
    curve = rejection_curve(scores, correct.astype(int), np.ones(40, dtype=int))
    np.testing.assert_allclose(sweep.accuracy, (1 - curve.r) * curve.m, atol=1e-15)
    assert sweep.mode == "curve"


def test_sweep_perfect_classifier_non_increasing():
    sweep = triage_sweep(np.linspace(0, 1, 30), np.ones(30, dtype=bool), n=1)
    assert np.all(np.diff(sweep.accuracy) <= 1e-15)


def test_sweep_constant_mode():
    gen = np.random.default_rng(2)
    correct = gen.random(50) < 0.8
    sweep = triage_sweep(gen.random(50), correct, n=2, constant_accuracy=True)
    for r, acc in zip(sweep.r, sweep.accuracy):
        assert acc == pytest.approx(triage_accuracy(TriageParams(float(r), correct.mean(), 0.956, 2)), abs=1e-12)
    assert sweep.mode == "constant"
