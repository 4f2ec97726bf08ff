"""Least-squares baselines, brute-force FAIR, Gumbel-trained FAIR, selection and refits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .gumbel import GateState
from .mlp import AdamState, adam_step
from .objective import MultiEnvDataset, SingularGramError, all_subsets, spd_solve
from .trainer import Arch, FairConfig, MlpModel, TrainedModel, train_fair

log = logging.getLogger(__name__)

BF_MAX_DIM = 20
NN_PREDICTOR = Arch("mlp", depth=2, width=128, trunc_bound=20.0)
NN_DISCRIMINATOR = Arch("mlp", depth=2, width=196, trunc_bound=40.0)


@dataclass
class LinearFit:
    coefficients: np.ndarray
    intercept: float
    support: list[int]

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        self.support = sorted(int(j) for j in self.support)
        off = np.ones(self.coefficients.shape[0], dtype=bool)
        off[self.support] = False
        if np.any(self.coefficients[off] != 0.0):
            raise ValueError("coefficients outside the support must be exactly zero")

    def predict(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.coefficients + self.intercept

    __call__ = predict


@dataclass
class SelectionResult:
    selected: list[int]
    gate_probs: np.ndarray


def _design(X, support):
    return np.hstack([np.ones((X.shape[0], 1)), X[:, support]])


def fit_pooled_ls(data: MultiEnvDataset, support) -> LinearFit:
    """Least squares of ``y`` on ``[1, X_support]`` over all stacked samples."""
    support = sorted(int(j) for j in support)
    X, y = data.pooled()
    Z = _design(X, support)
    theta = spd_solve(Z.T @ Z, Z.T @ y, rel_tol=1e-14)
    beta = np.zeros(data.dim)
    beta[support] = theta[1:]
    return LinearFit(beta, float(theta[0]), support)


refit_ls = fit_pooled_ls


# ---------------------------------------------------------------------------
# Brute force


@dataclass
class BruteForceResult:
    fit: LinearFit
    support: list[int]
    objective: float
    skipped: list[tuple[int, ...]] = field(default_factory=list)


def _env_moments(data: MultiEnvDataset):
    """Per environment, ``E_n[w w^T]`` for ``w = (1, x, y)``."""
    out = []
    for X, y in data.environments:
        W = np.hstack([np.ones((X.shape[0], 1)), X, y[:, None]])
        out.append(W.T @ W / X.shape[0])
    return out


def _bf_subproblem(moments, S, gamma, disc_intercept=True):
    """Minimise mean-risk + gamma * closed-form penalty over ``theta = (b0, beta_S)``.

    Returns ``(theta, objective)``. The discriminator design is ``[1, X_S]``
    (``X_S`` alone when ``disc_intercept`` is false).
    """
    zi = [0] + [1 + j for j in S]
    di = zi if disc_intercept else zi[1:]
    yi = moments[0].shape[0] - 1
    A = np.zeros((len(zi), len(zi)))
    b = np.zeros(len(zi))
    pens = []
    for e, Mo in enumerate(moments):
        G = Mo[np.ix_(zi, zi)]
        A += G
        b += Mo[zi, yi]
        if di:
            M = Mo[np.ix_(di, zi)]
            c = Mo[di, yi]
            Gd = Mo[np.ix_(di, di)]
            Ginv_M = spd_solve(Gd, M, env=e)
            Ginv_c = spd_solve(Gd, c, env=e)
            A += gamma * M.T @ Ginv_M
            b += gamma * M.T @ Ginv_c
            pens.append((M, c, Ginv_M, Ginv_c))
    k = len(moments)
    theta = spd_solve(A / k, b / k, rel_tol=1e-14)
    value = 0.0
    for e, Mo in enumerate(moments):
        G = Mo[np.ix_(zi, zi)]
        value += 0.5 * (Mo[yi, yi] - 2 * theta @ Mo[zi, yi] + theta @ G @ theta)
        if di:
            M, c, Ginv_M, Ginv_c = pens[e]
            r = c - M @ theta
            value += gamma * 0.5 * float(r @ (Ginv_c - Ginv_M @ theta))
    return theta, value / k


def fair_bf_objective(data: MultiEnvDataset, fit: LinearFit, gamma: float, disc_intercept=True) -> float:
    """Mean risk plus ``gamma`` times the linear supremum penalty on ``fit.support``."""
    moments = _env_moments(data)
    zi = [0] + [1 + j for j in fit.support]
    di = zi if disc_intercept else zi[1:]
    theta = np.concatenate([[fit.intercept], fit.coefficients[fit.support]])
    yi = moments[0].shape[0] - 1
    value = 0.0
    for e, Mo in enumerate(moments):
        G = Mo[np.ix_(zi, zi)]
        value += 0.5 * (Mo[yi, yi] - 2 * theta @ Mo[zi, yi] + theta @ G @ theta)
        if di:
            r = Mo[di, yi] - Mo[np.ix_(di, zi)] @ theta
            value += gamma * 0.5 * float(r @ spd_solve(Mo[np.ix_(di, di)], r, env=e))
    return value / len(moments)


def fit_fair_bf(data: MultiEnvDataset, gamma: float, max_support_size: int | None = None,
                disc_intercept: bool = True) -> BruteForceResult:
    """Exhaustive FAIR over supports, each solved in closed form.

    Ties go to the lexicographically smallest support. Supports whose Gram
    matrices are singular in some environment are skipped and reported.
    """
    d = data.dim
    if d > BF_MAX_DIM:
        raise ValueError(f"brute force is limited to d <= {BF_MAX_DIM}")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    moments = _env_moments(data)
    best = None
    skipped = []
    for S in all_subsets(d, max_support_size):
        try:
            theta, value = _bf_subproblem(moments, S, gamma, disc_intercept)
        except SingularGramError as err:
            log.info("skipping support %s: %s", S, err)
            skipped.append(S)
            continue
        key = (value, S)
        if best is None or key < best[0]:
            best = (key, theta)
    if best is None:
        raise SingularGramError("every support was singular")
    (value, S), theta = best
    beta = np.zeros(d)
    beta[list(S)] = theta[1:]
    return BruteForceResult(LinearFit(beta, float(theta[0]), list(S)), list(S), float(value), skipped)


# ---------------------------------------------------------------------------
# Gumbel-trained FAIR, selection


def fit_fair_gb(data: MultiEnvDataset, config: FairConfig, arch_kind: str = "linear",
                predictor_arch: Arch | None = None, discriminator_arch: Arch | None = None) -> TrainedModel:
    if arch_kind == "linear":
        predictor_arch = predictor_arch or Arch("linear")
        discriminator_arch = discriminator_arch or Arch("linear")
    elif arch_kind == "mlp":
        predictor_arch = predictor_arch or NN_PREDICTOR
        discriminator_arch = discriminator_arch or NN_DISCRIMINATOR
    else:
        raise ValueError(f"unknown architecture kind {arch_kind!r}")
    return train_fair(config, data, predictor_arch, discriminator_arch)


def gb_linear_fit(model: TrainedModel) -> LinearFit:
    """``coef * sigmoid(w)`` with the trained intercept."""
    beta = model.coefficients()
    return LinearFit(beta, float(model.predictor.bias[0]), np.flatnonzero(beta != 0.0).tolist())


def select_variables(gate: GateState, threshold: float = 0.9) -> SelectionResult:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    probs = expit(gate.logits)
    return SelectionResult(np.flatnonzero(probs > threshold).tolist(), probs)


def default_threshold(n: int, arch_kind: str = "linear") -> float:
    """0.9, or 0.6 for networks trained on at most 2000 samples per environment."""
    return 0.6 if arch_kind == "mlp" and n <= 2000 else 0.9


# ---------------------------------------------------------------------------
# Pooled network regression


@dataclass
class NnFit:
    model: MlpModel | None
    support: list[int]
    constant: float
    best_iter: int
    best_val: float

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.model is None:
            return np.full(X.shape[0], self.constant)
        return self.model.forward(X[:, self.support])[0]

    __call__ = predict


def _val_mse(model, Xv, yv):
    r = model.forward(Xv)[0] - yv
    return float(r @ r) / len(yv)


def fit_pooled_nn(data: MultiEnvDataset, support, seed: int = 0, iters: int = 10_000,
                  batch_size: int = 64, lr: float = 1e-3, arch: Arch = NN_PREDICTOR,
                  validation: MultiEnvDataset | None = None, eval_every: int = 100) -> NnFit:
    """Squared-loss network regression on the pooled data restricted to ``support``.

    With ``validation`` the returned network is the iterate with the smallest
    validation error (checked every ``eval_every`` steps); otherwise the last.
    Streams: ``SeedSequence(seed).spawn(2)`` gives initialisation, minibatch.
    """
    support = sorted(int(j) for j in support)
    X, y = data.pooled()
    if not support:
        return NnFit(None, [], float(np.mean(y)), 0, float("nan"))
    init_ss, batch_ss = np.random.SeedSequence(seed).spawn(2)
    model = arch.build(len(support), np.random.default_rng(init_ss))
    rng = np.random.default_rng(batch_ss)
    Xs = X[:, support]
    opt = AdamState(lr=lr)
    if validation is not None:
        Xv, yv = validation.pooled()
        Xv = Xv[:, support]
        best = (_val_mse(model, Xv, yv), 0, model.flat.copy())
    for t in range(1, iters + 1):
        idx = rng.integers(0, Xs.shape[0], batch_size)
        out, cache = model.forward(Xs[idx])
        grad = model.flat_backward(cache, (out - y[idx]) / batch_size)
        adam_step(opt, [model.flat], [grad])
        if validation is not None and (t % eval_every == 0 or t == iters):
            v = _val_mse(model, Xv, yv)
            if v < best[0]:
                best = (v, t, model.flat.copy())
    if validation is None:
        return NnFit(model, support, 0.0, iters, float("nan"))
    model.flat[:] = best[2]
    return NnFit(model, support, 0.0, best[1], best[0])


def refit_nn(data: MultiEnvDataset, selected, **kwargs) -> NnFit:
    return fit_pooled_nn(data, selected, **kwargs)


def semi_oracle_support(d: int, descendants_of_y) -> list[int]:
    """Covariates that are not descendants of the response."""
    desc = set(descendants_of_y)
    return [j for j in range(d) if j not in desc]
