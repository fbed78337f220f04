import numpy as np
import pytest
from scipy.stats import spearmanr

from expertue.core import HardLabelSet, UnitRef
from expertue.errors import InvalidShape, ScaleIncompatible
from expertue.labels import CategoricalScale, PercentScale, RatingScale, aggregate_votes, expert_accuracy
from expertue.synth import (
    ExpertSimConfig,
    SynthScenario,
    analytic_reference,
    bayes_accuracy,
    generate_scenario,
    simulate_experts,
    temperature_for_accuracy,
)


def fixed_scenario(p1):
    p1 = np.asarray(p1, dtype=float)
    units = tuple(UnitRef(f"u{i}") for i in range(p1.size))
    true_p = np.stack([1 - p1, p1], axis=1)
    return SynthScenario(units, np.zeros((p1.size, 1)), true_p, HardLabelSet(units, (p1 > 0.5).astype(int)), 0, 1.0)


def true_au(s):
    return analytic_reference(s).mean()


def test_temperature_limits():
    cold = generate_scenario(500, 4, temperature=1e-3, seed=1)
    hot = generate_scenario(500, 4, temperature=1e4, seed=1)
    assert true_au(cold) < 0.01
    assert abs(true_au(hot) - 0.5) < 1e-4  # two classes at 0.25 each
    assert np.allclose(hot.true_p, 0.5, atol=1e-3)


def test_label_frequency_concentrates():
    s = generate_scenario(1000, 4, temperature=2.0, seed=7)
    p = s.true_p[:, 1]
    sigma = np.sqrt((p * (1 - p)).sum()) / p.size
    assert abs(s.hard.labels.mean() - p.mean()) < 3 * sigma


def test_scenario_deterministic_and_shapes():
    a = generate_scenario(50, 3, n_classes=4, temperature=0.5, seed=3)
    b = generate_scenario(50, 3, n_classes=4, temperature=0.5, seed=3)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.hard.labels, b.hard.labels)
    assert a.true_p.shape == (50, 4) and np.allclose(a.true_p.sum(axis=1), 1.0)
    with pytest.raises(InvalidShape):
        generate_scenario(10, 2, temperature=0.0)
    with pytest.raises(InvalidShape):
        generate_scenario(10, 2, n_classes=1)


def test_temperature_for_accuracy_hits_target():
    t = temperature_for_accuracy(0.85, 2000, 8, seed=7)
    assert bayes_accuracy(2000, 8, 2, t, 7) == pytest.approx(0.85, abs=1e-5)


def test_noise_free_expert_votes_nearest_rating():
    panel = simulate_experts(fixed_scenario([0.75] * 4), ExpertSimConfig((0.0, 0.0), RatingScale()), seed=1)
    assert all(v == 3 for row in panel.votes for v in row)


def test_noise_free_panel_recovers_quantised_truth():
    gen = np.random.default_rng(0)
    s = fixed_scenario(gen.random(200))
    scale = RatingScale()
    soft = aggregate_votes(simulate_experts(s, ExpertSimConfig((0.0,) * 3, scale), seed=2))
    quantised = np.array([scale.quantize(q) for q in s.true_p[:, 1]]) / 4
    np.testing.assert_allclose(soft.probs[:, 1], quantised, atol=1e-12)
    assert np.all(np.abs(soft.probs[:, 1] - s.true_p[:, 1]) <= 0.125 + 1e-12)


def test_fine_grid_panel_au_approaches_truth():
    s = generate_scenario(500, 4, temperature=1.0, seed=4)
    scale = RatingScale(min=0, max=100, certain=(0, 100), uncertain=tuple(range(1, 50)) + tuple(range(51, 100)), abstain_band=(50,))
    soft = aggregate_votes(simulate_experts(s, ExpertSimConfig((0.0,), scale), seed=0))
    au = (soft.probs * (1 - soft.probs)).sum(axis=1)
    # |d(2p(1-p))/dp| <= 2 and the grid error is <= 0.005
    assert np.max(np.abs(au - analytic_reference(s))) <= 2 * 0.005 + 1e-12


def test_expert_ranking_follows_noise():
    s = generate_scenario(2000, 4, temperature=1.0, seed=7)
    panel = simulate_experts(s, ExpertSimConfig((0.1, 2.0), RatingScale()), seed=7)
    good, bad = expert_accuracy(panel, s.hard)
    assert good.accuracy > bad.accuracy


def test_abstain_rate():
    s = generate_scenario(4000, 2, seed=1)
    panel = simulate_experts(s, ExpertSimConfig((0.1,), RatingScale(), abstain_rate=(0.3,)), seed=1)
    rate = np.mean([row[0] is None for row in panel.votes])
    assert abs(rate - 0.3) < 3 * np.sqrt(0.3 * 0.7 / 4000)


def test_other_scales_and_incompatibilities():
    s3 = generate_scenario(20, 2, n_classes=3, seed=1)
    with pytest.raises(ScaleIncompatible):
        simulate_experts(s3, ExpertSimConfig((0.1,), RatingScale()), seed=0)
    panel = simulate_experts(s3, ExpertSimConfig((0.1,), PercentScale(("a", "b", "c"))), seed=0)
    assert all(row[0][0] in ("a", "b", "c") for row in panel.votes)
    s2 = generate_scenario(20, 2, seed=1)
    panel = simulate_experts(s2, ExpertSimConfig((0.0,), CategoricalScale.yes_no_maybe()), seed=0)
    assert {row[0] for row in panel.votes} <= {"yes", "no", "maybe"}


def test_analytic_reference_examples():
    np.testing.assert_allclose(analytic_reference(fixed_scenario([0.5, 0.0, 0.8])), [0.5, 0.0, 0.32], atol=1e-15)


def decile_scale():
    return RatingScale(min=0, max=10, certain=(0, 10), uncertain=(1, 2, 3, 4, 6, 7, 8, 9), abstain_band=(5,))


@pytest.mark.parametrize("temperature", [1.0, 2.0])
@pytest.mark.parametrize("sd", [0.15, 0.25])
def test_panel_au_rank_correlates_with_truth(temperature, sd):
    s = generate_scenario(2000, 8, temperature=temperature, seed=7)
    panel = simulate_experts(s, ExpertSimConfig((sd,) * 3, decile_scale()), seed=7)
    soft = aggregate_votes(panel)
    au = (soft.probs * (1 - soft.probs)).sum(axis=1)
    assert spearmanr(au, analytic_reference(s)).statistic >= 0.9


def test_subset_preserves_alignment():
    s = generate_scenario(10, 2, seed=0)
    sub = s.subset([3, 1])
    assert sub.units == (s.units[3], s.units[1])
    np.testing.assert_array_equal(sub.true_p, s.true_p[[3, 1]])
