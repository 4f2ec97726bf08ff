import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fair.estimators import (LinearFit, default_threshold, fair_bf_objective, fit_fair_bf, fit_fair_gb,
                             fit_pooled_ls, fit_pooled_nn, gb_linear_fit, select_variables, semi_oracle_support)
from fair.gumbel import GateState
from fair.objective import MultiEnvDataset
from fair.trainer import Arch, FairConfig

from _helpers import random_dataset


def example1(rng, n, slopes=(1.0, 3.0)):
    envs = []
    for s in slopes:
        x1 = np.sqrt(0.5) * rng.normal(size=n)
        y = x1 + np.sqrt(0.5) * rng.normal(size=n)
        x2 = s * y + rng.normal(size=n)
        envs.append((np.column_stack([x1, x2]), y))
    return MultiEnvDataset(envs)


def env_averaged_ls(data, S):
    rows, rhs = [], []
    for X, y in data.environments:
        w = 1 / np.sqrt(X.shape[0])
        rows.append(w * np.column_stack([np.ones(X.shape[0]), X[:, S]]))
        rhs.append(w * y)
    return np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]


def test_pooled_ls_recovers_noiseless_model():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4))
    data = MultiEnvDataset([(X[:15], X[:15] @ [1, 0, -2, 3] + 0.5), (X[15:], X[15:] @ [1, 0, -2, 3] + 0.5)])
    fit = fit_pooled_ls(data, range(4))
    assert np.allclose(fit.coefficients, [1, 0, -2, 3], atol=1e-10)
    assert fit.intercept == pytest.approx(0.5, abs=1e-10)


def test_pooled_ls_intercept_only_and_support():
    data = random_dataset(np.random.default_rng(1), 3, 2, 20)
    fit = fit_pooled_ls(data, [])
    assert fit.intercept == pytest.approx(np.mean(data.pooled()[1]))
    assert np.all(fit.coefficients == 0)
    fit = fit_pooled_ls(data, [2, 0])
    assert fit.support == [0, 2] and fit.coefficients[1] == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_pooled_ls_matches_lstsq_and_rescaling(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, 4, 3, 25)
    X, y = data.pooled()
    ref = np.linalg.lstsq(np.column_stack([np.ones(len(y)), X]), y, rcond=None)[0]
    fit = fit_pooled_ls(data, range(4))
    assert np.allclose(fit.coefficients, ref[1:], atol=1e-10)
    c = rng.uniform(0.5, 4.0, size=4)
    scaled = MultiEnvDataset([(Xe * c, ye) for Xe, ye in data.environments])
    assert np.allclose(fit_pooled_ls(scaled, range(4)).coefficients * c, fit.coefficients, atol=1e-9)


def test_pooled_ls_matches_explicit_inverse():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(500, 4))
    y = X @ [0.5, -1.0, 2.0, 0.0] + 0.3 + rng.normal(size=500)
    Z = np.column_stack([np.ones(500), X])
    ref = np.linalg.inv(Z.T @ Z) @ Z.T @ y
    fit = fit_pooled_ls(MultiEnvDataset([(X, y)]), range(4))
    assert np.allclose(np.concatenate([[fit.intercept], fit.coefficients]), ref, atol=1e-10)


def test_linear_fit_rejects_offsupport_coefficients():
    with pytest.raises(ValueError):
        LinearFit(np.array([1.0, 2.0]), 0.0, [0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), gamma=st.sampled_from([0.0, 1.0, 36.0, 1000.0]))
def test_brute_force_fit_is_env_averaged_ls_on_its_support(seed, gamma):
    data = random_dataset(np.random.default_rng(seed), 4, 2, 40)
    res = fit_fair_bf(data, gamma)
    ref = env_averaged_ls(data, res.support)
    assert res.fit.intercept == pytest.approx(ref[0], abs=1e-8)
    assert np.allclose(res.fit.coefficients[res.support], ref[1:], atol=1e-8)
    assert res.objective == pytest.approx(fair_bf_objective(data, res.fit, gamma), rel=1e-9, abs=1e-12)


def test_brute_force_single_env_and_zero_gamma_pick_full_support():
    rng = np.random.default_rng(2)
    one = random_dataset(rng, 4, 1, 60)
    assert fit_fair_bf(one, 36.0).support == [0, 1, 2, 3]
    assert fit_fair_bf(random_dataset(rng, 4, 2, 60), 0.0).support == [0, 1, 2, 3]


def test_brute_force_beats_oracle_support_objective():
    data = example1(np.random.default_rng(3), 500)
    res = fit_fair_bf(data, 36.0)
    oracle = fit_pooled_ls(data, [0])
    assert res.objective <= fair_bf_objective(data, oracle, 36.0) + 1e-12


def test_brute_force_example1_selects_cause():
    hits = 0
    for seed in range(10):
        res = fit_fair_bf(example1(np.random.default_rng(seed), 5000), 36.0)
        hits += res.support == [0] and abs(res.fit.coefficients[0] - 1.0) < 0.05
    assert hits >= 9
    pooled = fit_pooled_ls(example1(np.random.default_rng(0), 5000), [0, 1])
    assert abs(pooled.coefficients[0] - 1.0) > 0.2


def test_brute_force_guards():
    with pytest.raises(ValueError):
        fit_fair_bf(random_dataset(np.random.default_rng(0), 21, 2, 30), 1.0)
    with pytest.raises(ValueError):
        fit_fair_bf(random_dataset(np.random.default_rng(0), 2, 2, 30), -1.0)
    X = np.random.default_rng(0).normal(size=(30, 1))
    dup = MultiEnvDataset([(np.hstack([X, X]), X[:, 0])])
    res = fit_fair_bf(dup, 1.0)
    assert (0, 1) in res.skipped and res.support == [0]


def test_select_variables_and_threshold():
    gate = GateState(np.array([-5.0, 0.0, 2.0, 5.0]), 0.5)
    assert select_variables(gate).selected == [3]
    assert select_variables(gate, 0.6).selected == [2, 3]
    assert select_variables(gate, 0.4).selected == [1, 2, 3]
    with pytest.raises(ValueError):
        select_variables(gate, 1.0)
    assert default_threshold(2000, "mlp") == 0.6
    assert default_threshold(5000, "mlp") == 0.9
    assert default_threshold(1000) == 0.9


@settings(max_examples=50, deadline=None)
@given(logits=st.lists(st.floats(-10, 10), min_size=1, max_size=6), t1=st.floats(0.05, 0.95),
       t2=st.floats(0.05, 0.95))
def test_selection_is_monotone_in_threshold(logits, t1, t2):
    gate = GateState(np.array(logits), 0.5)
    lo, hi = sorted([t1, t2])
    assert set(select_variables(gate, hi).selected) <= set(select_variables(gate, lo).selected)


def test_gumbel_fit_and_refit():
    data = example1(np.random.default_rng(4), 1000)
    model = fit_fair_gb(data, FairConfig(total_iters=300, seed=1))
    fit = gb_linear_fit(model)
    assert np.allclose(fit.coefficients, model.coefficients())
    sel = select_variables(model.gate, 0.4)
    refit = fit_pooled_ls(data, sel.selected)
    assert refit.support == sel.selected
    with pytest.raises(ValueError):
        fit_fair_gb(data, FairConfig(total_iters=1), "tree")


def test_pooled_nn():
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, size=(600, 2))
    y = np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=600)
    data = MultiEnvDataset([(X[:300], y[:300]), (X[300:500], y[300:500])])
    val = MultiEnvDataset([(X[500:], y[500:])])
    arch = Arch("mlp", 2, 32, 10.0)
    fit = fit_pooled_nn(data, [0], seed=3, iters=3000, arch=arch, validation=val)
    again = fit_pooled_nn(data, [0], seed=3, iters=3000, arch=arch, validation=val)
    assert np.array_equal(fit.predict(X), again.predict(X))
    assert 0 < fit.best_iter <= 3000
    assert fit.best_val < 0.5 * np.var(y[500:])
    const = fit_pooled_nn(data, [])
    assert np.all(const.predict(X) == np.mean(data.pooled()[1]))


def test_semi_oracle_support():
    assert semi_oracle_support(5, [1, 3]) == [0, 2, 4]
