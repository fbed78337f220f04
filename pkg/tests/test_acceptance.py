"""One test per acceptance criterion; each prints a PASS/FAIL line.

The lines are also collected and shown in the pytest terminal summary under
"acceptance criteria".
"""

import filecmp
import itertools
import os
import time

import numpy as np
import pytest
from sklearn.metrics import cohen_kappa_score, roc_auc_score

from expertue.cli import main
from expertue.decompose import covariance_components, decompose_unit, entropy_mi, per_class_components
from expertue.evaluation import aac, auroc_error_detection, curve_pair, default_grid, oracle_curve, oracle_scores, rejection_curve
from expertue.experiment import PV, SINGLE, SWEEP_METHODS, TV_BASE, TV_CAE, TV_EXPERTS, TV_MIXED
from expertue.labels import cohen_kappa
from expertue.sim import EXPERT_ACCURACY, TriageParams, monte_carlo_triage, triage_accuracy

from conftest import gradient_check, record_criterion, triage_param_sets

CORPUS_SIZE = 10_000


def make_corpus(seed=20240611):
    """Random K x N ensembles, K <= 16 and N <= 8, with sparse and flat Dirichlet rows."""
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(CORPUS_SIZE):
        k = int(gen.integers(1, 17))
        n = int(gen.integers(2, 9))
        conc = float(gen.choice([0.05, 0.3, 1.0, 5.0]))
        out.append(gen.dirichlet(np.full(n, conc), size=k))
    return out


@pytest.fixture(scope="module")
def corpus():
    return make_corpus()


def test_criterion_01_law_of_total_variance(corpus):
    start = time.perf_counter()
    worst = 0.0
    for p in corpus:
        eu, au = per_class_components(p)
        pbar = p.mean(axis=0)
        worst = max(worst, float(np.max(np.abs(eu + au - pbar * (1 - pbar)))))
    elapsed = time.perf_counter() - start
    record_criterion(
        1,
        "per-class EU + AU = pbar(1 - pbar)",
        worst <= 1e-12 and elapsed < 5.0 and len(corpus) >= 10_000,
        f"max gap {worst:.2e}, {len(corpus)} tensors, {elapsed:.2f}s",
    )


def test_criterion_02_multiclass_aggregation(corpus):
    worst = 0.0
    for p in corpus:
        rec = decompose_unit(p)
        eu, au = per_class_components(p)
        cov = covariance_components(p)
        per_class_tu = sum(e + a for e, a in rec.per_class)
        worst = max(
            worst,
            abs(rec.tu - per_class_tu),
            abs(np.trace(cov.eu_matrix) - eu.sum()),
            abs(np.trace(cov.au_matrix) - au.sum()),
        )
    record_criterion(2, "TU = sum_j TU_j and trace identities", worst <= 1e-12, f"max gap {worst:.2e}")


def _brute_aac_five():
    scores = [0.9, 0.1, 0.2, 0.5, 0.3]
    correct = [0, 1, 1, 1, 0]
    order = sorted(range(5), key=lambda i: -scores[i])
    method = [sum(correct[i] for i in order[k:]) / (5 - k) for k in range(5)]
    wrong_first = sorted(range(5), key=lambda i: correct[i])
    oracle = [sum(correct[i] for i in wrong_first[k:]) / (5 - k) for k in range(5)]
    diff = [o - m for o, m in zip(oracle, method)]
    return sum(0.2 * (a + b) / 2 for a, b in zip(diff, diff[1:]))


def test_criterion_03_worked_examples():
    checks = {}
    rec = decompose_unit([[0.8, 0.2], [0.2, 0.8]])
    brute_tu = sum(
        sum((r[j] - (0.8 + 0.2) / 2) ** 2 for r in ([0.8, 0.2], [0.2, 0.8])) / 2
        + sum(r[j] * (1 - r[j]) for r in ([0.8, 0.2], [0.2, 0.8])) / 2
        for j in range(2)
    )
    checks["tu"] = abs(rec.tu - 0.5) <= 1e-9 and abs(brute_tu - 0.5) <= 1e-9

    pair = curve_pair([0.9, 0.1, 0.2, 0.5, 0.3], [0, 1, 1, 1, 0], [1] * 5, grid=[0, 0.2, 0.4, 0.6, 0.8])
    got = aac(pair)
    checks["aac"] = abs(got - 1 / 15) <= 1e-9 and abs(_brute_aac_five() - 1 / 15) <= 1e-9 and abs(got - 0.06667) < 1e-5

    scores = [0.9, 0.3, 0.5, 0.2, 0.1]
    correct = np.array([False, False, True, True, True])
    roc = auroc_error_detection(scores, correct)
    pairs = [(e, c) for e in (0.9, 0.3) for c in (0.5, 0.2, 0.1)]
    brute = sum(e > c for e, c in pairs) / len(pairs)
    checks["auroc"] = abs(roc - 5 / 6) <= 1e-9 and abs(brute - 5 / 6) <= 1e-9 and abs(roc_auc_score(~correct, scores) - 5 / 6) <= 1e-9

    a, b = [1, 1, 0, 0], [1, 0, 0, 0]
    kappa = cohen_kappa(a, b)
    p_o = np.mean(np.equal(a, b))
    p_e = np.mean(a) * np.mean(b) + (1 - np.mean(a)) * (1 - np.mean(b))
    checks["kappa"] = (
        abs(kappa - 0.5) <= 1e-9 and abs((p_o - p_e) / (1 - p_e) - 0.5) <= 1e-9 and abs(cohen_kappa_score(a, b) - 0.5) <= 1e-9
    )
    record_criterion(3, "worked examples (TU, AAC, AUROC, kappa)", all(checks.values()), ", ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in checks.items()))


def test_criterion_04_oracle_aac_and_maximality():
    gen = np.random.default_rng(4)
    worst_aac = 0.0
    for _ in range(500):
        n = int(gen.integers(5, 60))
        correct = (gen.random(n) < gen.random()).astype(int)
        truth = np.ones(n, dtype=int)
        pair = curve_pair(oracle_scores(correct, truth), correct, truth)
        worst_aac = max(worst_aac, abs(aac(pair)))
    # A ranking's curve depends only on the correctness sequence in rejection
    # order, so all 2^n sequences cover every permutation of every pattern.
    violations = 0
    for n in range(2, 8):
        grid = np.arange(n) / n
        truth = np.ones(n, dtype=int)
        scores = np.arange(n, 0, -1, dtype=float)
        for pattern in itertools.product((0, 1), repeat=n):
            correct = np.array(pattern)
            best = oracle_curve(correct, truth, grid=grid).m
            m = rejection_curve(scores, correct, truth, grid=grid).m
            violations += int(np.any(m > best + 1e-12))
            if n <= 5:
                for perm in itertools.permutations(range(n)):
                    m = rejection_curve(np.asarray(perm, dtype=float), correct, truth, grid=grid).m
                    violations += int(np.any(m > best + 1e-12))
    record_criterion(
        4,
        "oracle AAC = 0 and oracle curve pointwise maximal (n <= 7)",
        worst_aac <= 1e-12 and violations == 0,
        f"max |AAC| {worst_aac:.1e}, violations {violations}",
    )


def test_criterion_05_gradient_check():
    errors = [gradient_check(seed) for seed in range(100)]
    record_criterion(5, "cross-entropy gradient vs central differences", max(errors) < 1e-5, f"max rel err {max(errors):.1e} over 100")


def test_criterion_06_table1_direction(synth_run):
    result, elapsed = synth_run
    a = result.aac
    pv = a[PV]
    ok = (
        a[TV_EXPERTS] <= 0.8 * pv
        and a[TV_CAE] <= 0.8 * pv
        and a[TV_BASE] <= a[SINGLE]
        and elapsed < 60.0
        and abs(result.base_accuracy - 0.85) <= 0.01
    )
    detail = (
        f"experts {a[TV_EXPERTS]:.4f}, cae {a[TV_CAE]:.4f}, pv {pv:.4f} (80% = {0.8 * pv:.4f}), "
        f"base {a[TV_BASE]:.4f}, single {a[SINGLE]:.4f}, acc {result.base_accuracy:.4f}, {elapsed:.1f}s"
    )
    record_criterion(6, "synthetic ordering: expert-informed AAC >= 20% below prediction variance", ok, detail)


def test_criterion_07_mixed_between(synth_run):
    a = synth_run[0].aac
    lo, hi = sorted((a[TV_BASE], a[TV_CAE]))
    record_criterion(
        7,
        "AAC(mixed, alpha 0.9) between base and CAE",
        lo <= a[TV_MIXED] <= hi,
        f"cae {a[TV_CAE]:.4f} <= mixed {a[TV_MIXED]:.4f} <= base {a[TV_BASE]:.4f}",
    )


def test_criterion_08_alpha_sweep(synth_run):
    result = synth_run[0]
    sweep = result.alpha_sweep
    cae = sweep[TV_CAE]
    better = cae[0.9] < cae[1.0]
    half = max(abs(sweep[tag][0.5] - result.aac[tag]) for tag in SWEEP_METHODS)
    record_criterion(
        8,
        "alpha sweep: AAC(0.9) < AAC(1.0), AAC(0.5) = unweighted",
        better and half <= 1e-12 and len(cae) == 11,
        f"cae 0.9 -> {cae[0.9]:.4f}, 1.0 -> {cae[1.0]:.4f}; experts 0.9 -> {sweep[TV_EXPERTS][0.9]:.4f}; |0.5 gap| {half:.1e}",
    )


def test_criterion_09_triage():
    worst_z = 0.0
    for i, p in enumerate(triage_param_sets()):
        mean, se = monte_carlo_triage(p, 100_000, 100 + i)
        worst_z = max(worst_z, abs(mean - triage_accuracy(p)) / se if se > 0 else 0.0)
    exact = (
        triage_accuracy(TriageParams(0.3, 0.9, 0.956, 1)) == 0.7 * 0.9
        and triage_accuracy(TriageParams(0.0, 0.87, 0.5, 4)) == 0.87
    )
    default = EXPERT_ACCURACY == 0.956 and TriageParams(0.2, 0.95).a_exp == 0.956
    record_criterion(
        9,
        "triage closed form vs Monte Carlo, boundaries, default a_exp",
        worst_z <= 3.0 and exact and default,
        f"max |z| {worst_z:.2f} over 20 sets of 1e5",
    )


def test_criterion_10_mutual_information(corpus):
    min_mi = np.inf
    zero_when_identical = 0.0
    min_distinct = np.inf
    for p in corpus:
        _, _, mi = entropy_mi(p)
        min_mi = min(min_mi, mi)
        same = np.repeat(p[:1], p.shape[0], axis=0)
        zero_when_identical = max(zero_when_identical, abs(entropy_mi(same)[2]))
        if p.shape[0] > 1 and np.max(np.abs(p - p[0])) > 1e-3:
            min_distinct = min(min_distinct, mi)
    ok = min_mi >= 0.0 and zero_when_identical <= 1e-12 and min_distinct > 1e-12
    record_criterion(
        10,
        "MI >= 0, zero iff members identical",
        ok,
        f"min MI {min_mi:.1e}, identical max {zero_when_identical:.1e}, distinct min {min_distinct:.1e}",
    )


def _tree_files(root):
    out = []
    for dirpath, _, names in os.walk(root):
        out += [os.path.relpath(os.path.join(dirpath, n), root) for n in names]
    return sorted(out)


def test_criterion_11_determinism(tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["experiment-synth", "--out", str(out), "--alpha-sweep", "0,0.5,0.9,1.0"]) == 0
        runs.append(out)
    capsys.readouterr()
    files_a, files_b = _tree_files(runs[0]), _tree_files(runs[1])
    _, mismatch, errors = filecmp.cmpfiles(runs[0], runs[1], files_a, shallow=False)
    record_criterion(
        11,
        "experiment-synth twice with one seed gives byte-identical files",
        files_a == files_b and not mismatch and not errors and len(files_a) > 20,
        f"{len(files_a)} files, {len(mismatch)} differ",
    )
