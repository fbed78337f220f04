import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_tensor(gen: np.random.Generator, k: int, n: int, concentration: float = 1.0) -> np.ndarray:
    """K x N Dirichlet rows."""
    return gen.dirichlet(np.full(n, concentration), size=k)


@pytest.fixture(scope="session")
def synth_run():
    """The default synthetic experiment with the 11-point alpha sweep, run once per session."""
    from expertue.experiment import SynthExperimentConfig, alpha_grid, run_synth_experiment

    start = time.perf_counter()
    result = run_synth_experiment(SynthExperimentConfig(alpha_sweep=alpha_grid("0,0.1,...,1.0")))
    return result, time.perf_counter() - start


def gradient_check(seed: int, eps: float = 1e-6) -> float:
    """Norm-wise relative gap between analytic and central-difference gradients.

    Random small instance: d <= 5, N <= 4, optional hidden layer, random soft
    targets, random unit weights and L2.
    """
    from expertue.models import init_model, loss_and_grad

    gen = np.random.default_rng(seed)
    d = int(gen.integers(1, 6))
    n_classes = int(gen.integers(2, 5))
    hidden = int(gen.choice([0, 0, 3]))
    n = int(gen.integers(3, 12))
    model = init_model(seed, d, n_classes, hidden)
    w = np.array(model.weights) * 10
    h = None if model.hidden is None else np.array(model.hidden) * 10
    x = gen.normal(size=(n, d))
    targets = gen.dirichlet(np.ones(n_classes), size=n)
    unit_w = gen.random(n)
    l2 = float(gen.random())

    _, gw, gh = loss_and_grad(w, h, x, targets, unit_w, l2)
    analytic, numeric = [gw.ravel()], []
    params = [w] if h is None else [w, h]
    if h is not None:
        analytic.append(gh.ravel())
    for p in params:
        num = np.zeros(p.size)
        flat = p.reshape(-1)
        for i in range(p.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_and_grad(w, h, x, targets, unit_w, l2)[0]
            flat[i] = keep - eps
            down = loss_and_grad(w, h, x, targets, unit_w, l2)[0]
            flat[i] = keep
            num[i] = (up - down) / (2 * eps)
        numeric.append(num)
    a = np.concatenate(analytic)
    b = np.concatenate(numeric)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def triage_param_sets(count: int = 20, seed: int = 2024):
    """Seeded random triage configurations covering the valid parameter box."""
    from expertue.sim import TriageParams

    gen = np.random.default_rng(seed)
    return [
        TriageParams(
            r=float(gen.uniform(0, 1)),
            a_cl=float(gen.uniform(0.5, 1)),
            a_exp=float(gen.uniform(0.05, 1)),
            n=int(gen.integers(1, 6)),
        )
        for _ in range(count)
    ]


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Print and store one acceptance result line, then fail the test if needed."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
