import numpy as np
import pytest

from spqn.builders import SPQNBuilder, build_leaf_cmo
from spqn.evaluate import mean_log_likelihood
from spqn.params import ParamVector

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def conditional_pair():
    """P(x0) * P(x1 | x0) where the conditional is a gamma=2 CMO.  N = 2.

    Returns ``(network, params, annotations)``.
    """
    b = SPQNBuilder(2)
    x0 = b.leaf_cmo(0, (0.3, -0.2))
    a_rows = [[b.leaf_cmo(0, (2.0, -1.0))], [b.leaf_cmo(0, (-1.5, 1.0))]]
    b_rows = [[b.leaf_cmo(1, (0.5, 1.0))], [b.leaf_cmo(1, (-0.4, 0.2))]]
    cond = b.cmo(a_rows, b_rows, [0.1, -0.3])
    return b.finish(b.cmo([[]], [[x0, cond]], [0.0]))


def exact_sampling_tvd_bound(table: np.ndarray, count: int, reps: int = 200, seed: int = 12345) -> float:
    """Largest TVD seen across ``reps`` multinomial draws of ``count`` exact samples, plus 5%.

    A sampler whose empirical TVD exceeds this is worse than an exact
    sampler with overwhelming probability.
    """
    rng = np.random.default_rng(seed)
    p = table / table.sum()
    draws = rng.multinomial(count, p, size=reps) / count
    return 1.05 * float(0.5 * np.abs(draws - p).sum(axis=1).max())


def central_difference(network, params: ParamVector, batch, h=1e-4, coords=None) -> np.ndarray:
    coords = range(len(params.logits)) if coords is None else coords
    out = []
    for k in coords:
        plus, minus = params.copy(), params.copy()
        plus.logits[k] += h
        minus.logits[k] -= h
        out.append((mean_log_likelihood(network, plus, batch) - mean_log_likelihood(network, minus, batch)) / (2 * h))
    return np.array(out)


def relative_error(analytic, numeric, floor=1e-6) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@pytest.fixture
def leaf():
    return build_leaf_cmo(0, (np.log(0.3), np.log(0.7)))


@pytest.fixture
def pair():
    return conditional_pair()
