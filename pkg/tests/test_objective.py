import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fair.objective import (DiscreteDistribution, MultiEnvDataset, SingularGramError, cond_expectation,
                            fair_objective, fair_penalty, linear_penalty_argmax, linear_sup_penalty,
                            loss_grad, loss_value, pooled_risk, population_penalty_oracle, spd_solve)
from fair.scm import example1_discretized

from _helpers import random_dataset


def test_loss_examples():
    assert loss_value("squared", 1, 1) == 0
    assert loss_value("squared", 1, 0) == 0.5
    assert loss_value("logistic", 1, 0.5) == pytest.approx(np.log(2), abs=1e-6)
    assert loss_grad("squared", 2, 5) == 3
    assert loss_grad("logistic", 1, 0.5) == pytest.approx(-2)
    assert loss_grad("squared", 0.3, 0.3) == 0
    assert loss_grad("logistic", 0.3, 0.3) == 0


def test_loss_errors():
    with pytest.raises(ValueError):
        loss_value("hinge", 1, 1)
    with pytest.raises(ValueError):
        loss_grad("logistic", 1, 1.0)


@settings(max_examples=50, deadline=None)
@given(y=st.floats(0, 1), v=st.floats(0.01, 0.99), kind=st.sampled_from(["squared", "logistic"]))
def test_loss_grad_matches_finite_differences(y, v, kind):
    h = 1e-6
    num = (loss_value(kind, y, v + h) - loss_value(kind, y, v - h)) / (2 * h)
    ana = loss_grad(kind, y, v)
    assert abs(num - ana) <= 1e-7 * max(abs(ana), 1.0)


def test_pooled_risk_examples():
    const = MultiEnvDataset([(np.zeros((3, 1)), np.full(3, 2.0))])
    assert pooled_risk(lambda X: np.full(len(X), 2.0), const) == 0
    one = MultiEnvDataset([(np.zeros((1, 1)), np.ones(1))])
    assert pooled_risk(0.0, one) == 0.5
    two = MultiEnvDataset([(np.zeros((2, 1)), np.ones(2)), (np.zeros((2, 1)), np.full(2, 3.0))])
    assert pooled_risk(0.0, two) == 2.5


def test_penalty_examples():
    rng = np.random.default_rng(0)
    data = random_dataset(rng, 3, 2, 20)
    g = lambda X: X[:, 0]
    assert fair_penalty(g, [0.0, 0.0], data) == 0
    r = [y - g(X) for X, y in data.environments]
    resid_disc = [lambda X, e=e: data.environments[e][1] - g(X) for e in range(2)]
    assert fair_penalty(g, resid_disc, data) == pytest.approx(np.mean([np.mean(v ** 2) / 2 for v in r]))
    single = MultiEnvDataset([(np.zeros((2, 1)), np.array([2.0, -2.0]))])
    assert fair_penalty(0.0, [1.0], single) == -0.5
    with pytest.raises(ValueError):
        fair_penalty(0.0, [1.0, 1.0], single)


def test_objective_composition():
    two = MultiEnvDataset([(np.zeros((2, 1)), np.ones(2)), (np.zeros((2, 1)), np.full(2, 3.0))])
    assert fair_objective(0.0, [1.0, 1.0], two, gamma=0.0) == 2.5
    assert fair_objective(0.0, [0.0, 0.0], two, gamma=36.0) == 2.5
    # residuals (1,1) and (3,3) with f = 1: penalty mean of (1 - 1/2, 3 - 1/2) = 1.5
    assert fair_objective(0.0, [1.0, 1.0], two, gamma=36.0) == pytest.approx(2.5 + 36 * 1.5)
    single = MultiEnvDataset([(np.zeros((2, 1)), np.array([2.0, -2.0]))])
    assert fair_objective(0.0, [1.0], single, gamma=36.0) == pytest.approx(2.0 - 18.0)
    with pytest.raises(ValueError):
        fair_objective(0.0, [1.0], single, gamma=-1)


def test_sup_penalty_hand_example():
    # constant covariate, residuals (1, 3): sup_c mean(r c - c^2/2) = 2 at c = 2
    data = MultiEnvDataset([(np.ones((2, 1)), np.array([1.0, 3.0]))])
    assert linear_sup_penalty(np.zeros(1), [0], data) == pytest.approx(2.0)
    assert linear_penalty_argmax(np.zeros(1), [0], data)[0][0] == pytest.approx(2.0)


def test_sup_penalty_zero_at_orthogonal_residuals():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    assert linear_sup_penalty(beta, [0, 1, 2], MultiEnvDataset([(X, y)])) == pytest.approx(0, abs=1e-12)


def _ascent_max(beta, S, data, steps=500):
    """Maximise fair_penalty over linear discriminators on X_S by exact-line-search gradient ascent."""
    values = []
    for X, y in data.environments:
        Z = X[:, S]
        n = len(y)
        r = y - X @ beta
        G = Z.T @ Z / n
        c = np.zeros(len(S))
        for _ in range(steps):
            grad = Z.T @ r / n - G @ c
            curv = grad @ G @ grad
            if curv <= 0 or np.linalg.norm(grad) < 1e-15:
                break
            c = c + (grad @ grad) / curv * grad
        f = Z @ c
        values.append(np.mean(r * f - f * f / 2))
    return float(np.mean(values))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5), n=st.integers(20, 200), k=st.integers(1, 3))
def test_sup_penalty_matches_ascent(seed, d, n, k):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, d, k, n)
    S = sorted(rng.choice(d, size=int(rng.integers(1, d + 1)), replace=False).tolist())
    beta = np.zeros(d)
    beta[S] = rng.normal(size=len(S))
    assert linear_sup_penalty(beta, S, data) == pytest.approx(_ascent_max(beta, S, data), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_focused_penalty_ignores_outside_coordinates(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, 4, 2, 30)
    S = [0, 2]
    g = lambda X: X[:, 0] - 0.5 * X[:, 2]
    fs = [lambda X: 0.3 * X[:, 0] + X[:, 2], lambda X: -X[:, 2]]
    base = fair_penalty(g, fs, data)
    shuffled = []
    for X, y in data.environments:
        X = X.copy()
        for j in (1, 3):
            X[:, j] = rng.permutation(X[:, j])
        shuffled.append((X, y))
    assert fair_penalty(g, fs, MultiEnvDataset(shuffled)) == base
    beta = np.array([1.0, 0, -0.5, 0])
    assert linear_sup_penalty(beta, S, data) >= 0


def test_singular_gram():
    X = np.ones((5, 2))
    with pytest.raises(SingularGramError):
        linear_sup_penalty(np.zeros(2), [0, 1], MultiEnvDataset([(X, np.arange(5.0))]))
    with pytest.raises(SingularGramError):
        spd_solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))


def test_dataset_validation():
    with pytest.raises(ValueError):
        MultiEnvDataset([])
    with pytest.raises(ValueError):
        MultiEnvDataset([(np.zeros((2, 2)), np.zeros(3))])
    with pytest.raises(ValueError):
        MultiEnvDataset([(np.zeros((2, 2)), np.zeros(2)), (np.zeros((2, 3)), np.zeros(2))])


def test_population_oracle_examples():
    dist = DiscreteDistribution(np.array([[0.0], [0.0], [1.0], [1.0]]), np.array([-1.0, 1.0, 1.0, 3.0]),
                                np.full(4, 0.25))
    assert population_penalty_oracle(0.0, [dist], [0]) == pytest.approx(1.0)
    m, mass = cond_expectation(dist, [0])
    assert np.allclose(m, [0, 0, 2, 2]) and np.allclose(mass, 0.5)
    g = lambda X: 2 * X[:, 0]
    assert population_penalty_oracle(g, [dist, dist], [0]) == 0


def test_population_oracle_degenerate_slopes():
    s = 2.0
    envs = example1_discretized(s, 1 / s)
    g = lambda X: s / (s * s + 1) * X[:, 1]
    assert population_penalty_oracle(g, envs, [1]) < 1e-3
    generic = example1_discretized(2.0, 0.7)
    assert population_penalty_oracle(g, generic, [1]) > 1e-3
