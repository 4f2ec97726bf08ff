"""Losses, pooled risk, the focused adversarial penalty, and closed forms.

Environment averages are taken within each environment first and then across
environments, so unequal sample sizes are weighted per environment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

SQUARED = "squared"
LOGISTIC = "logistic"
LOSS_KINDS = (SQUARED, LOGISTIC)
_CLIP = 1e-12


class SingularGramError(np.linalg.LinAlgError):
    """A Gram matrix failed the pivot-ratio test."""

    def __init__(self, message: str, env: int | None = None):
        super().__init__(message)
        self.env = env


@dataclass
class MultiEnvDataset:
    """Per-environment design matrices ``X_e`` (n_e x d) and responses ``y_e``."""

    environments: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if not self.environments:
            raise ValueError("dataset needs at least one environment")
        envs = []
        d = None
        for X, y in self.environments:
            X = np.atleast_2d(np.asarray(X, dtype=np.float64))
            y = np.asarray(y, dtype=np.float64).reshape(-1)
            if X.shape[0] != y.shape[0] or X.shape[0] < 1:
                raise ValueError("each environment needs n_e >= 1 rows matching its responses")
            if d is None:
                d = X.shape[1]
            elif X.shape[1] != d:
                raise ValueError("environments disagree on covariate dimension")
            envs.append((X, y))
        self.environments = envs

    @property
    def dim(self) -> int:
        return self.environments[0][0].shape[1]

    @property
    def n_envs(self) -> int:
        return len(self.environments)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.vstack([X for X, _ in self.environments]),
                np.concatenate([y for _, y in self.environments]))


def _check_kind(kind: str):
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")


def _logistic_domain(v):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0.0) or np.any(v >= 1.0):
        raise ValueError("logistic loss needs predictions strictly inside (0, 1)")
    return v


def loss_value(kind: str, y, v):
    _check_kind(kind)
    y = np.asarray(y, dtype=np.float64)
    if kind == SQUARED:
        out = 0.5 * (y - np.asarray(v, dtype=np.float64)) ** 2
    else:
        v = np.clip(_logistic_domain(v), _CLIP, 1.0 - _CLIP)
        out = -np.log1p(-v) - y * np.log(v / (1.0 - v))
    return float(out) if np.ndim(out) == 0 else out


def loss_grad(kind: str, y, v):
    """``d loss / dv = (v - y) psi(v)`` with ``psi = 1`` or ``1 / (v (1 - v))``."""
    _check_kind(kind)
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if kind == SQUARED:
        out = v - y
    else:
        v = _logistic_domain(v)
        out = (v - y) / (v * (1.0 - v))
    return float(out) if np.ndim(out) == 0 else out


def predict_with(predictor, X: np.ndarray) -> np.ndarray:
    """Evaluate a callable (or a constant) on a batch of rows."""
    if callable(predictor):
        return np.broadcast_to(np.asarray(predictor(X), dtype=np.float64), (X.shape[0],))
    return np.full(X.shape[0], float(predictor))


def pooled_risk(predictor, data: MultiEnvDataset, kind: str = SQUARED) -> float:
    per_env = [np.mean(loss_value(kind, y, predict_with(predictor, X))) for X, y in data.environments]
    return float(np.mean(per_env))


def fair_penalty(predictor, discriminators: Sequence, data: MultiEnvDataset) -> float:
    """Mean over environments of ``mean_i[(y - g) f_e - f_e^2 / 2]``."""
    if len(discriminators) != data.n_envs:
        raise ValueError(f"need {data.n_envs} discriminators, got {len(discriminators)}")
    terms = []
    for (X, y), f in zip(data.environments, discriminators):
        r = y - predict_with(predictor, X)
        fx = predict_with(f, X)
        terms.append(np.mean(r * fx - 0.5 * fx * fx))
    return float(np.mean(terms))


def fair_objective(predictor, discriminators, data: MultiEnvDataset, kind: str = SQUARED,
                   gamma: float = 0.0) -> float:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    value = pooled_risk(predictor, data, kind)
    if gamma:
        value += gamma * fair_penalty(predictor, discriminators, data)
    return value


# ---------------------------------------------------------------------------
# Linear closed forms


def spd_solve(A: np.ndarray, b: np.ndarray, rel_tol: float = 1e-10, env: int | None = None):
    """Solve ``A x = b`` for symmetric PSD ``A`` via Cholesky with a pivot-ratio check.

    Raises :class:`SingularGramError` when the smallest pivot falls below
    ``rel_tol`` times the largest.
    """
    A = np.atleast_2d(A)
    if A.shape[0] == 0:
        return np.zeros((0,) + np.shape(b)[1:])
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise SingularGramError("Gram matrix is not positive definite", env) from None
    piv = np.diag(L) ** 2
    if piv.min() < rel_tol * piv.max():
        raise SingularGramError(f"Gram matrix is numerically singular (pivot ratio {piv.min() / piv.max():.3g})", env)
    z = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, z)


def _design(X: np.ndarray, S, intercept: bool, basis: Callable | None = None) -> np.ndarray:
    cols = [X[:, list(S)]]
    if basis is not None:
        cols.append(basis(X[:, list(S)]))
    if intercept:
        cols.insert(0, np.ones((X.shape[0], 1)))
    return np.hstack(cols)


def linear_sup_penalty(beta, S, data: MultiEnvDataset, intercept: float = 0.0,
                       disc_intercept: bool = False, basis: Callable | None = None) -> float:
    """Supremum of :func:`fair_penalty` over linear discriminators on ``X_S``.

    For discriminator features ``Z_S`` (``X_S``, optionally a constant column
    and ``basis(X_S)`` for the augmented-linear variant) the supremum per
    environment is ``r^T G^{-1} r / 2`` with ``r = E_n[(y - g) Z_S]`` and
    ``G = E_n[Z_S Z_S^T]``; the result averages over environments.
    """
    beta = np.asarray(beta, dtype=np.float64)
    S = sorted(S)
    total = 0.0
    for e, (X, y) in enumerate(data.environments):
        Z = _design(X, S, disc_intercept, basis)
        if Z.shape[1] == 0:
            continue
        n = X.shape[0]
        r = Z.T @ (y - X @ beta - intercept) / n
        G = Z.T @ Z / n
        total += 0.5 * float(r @ spd_solve(G, r, env=e))
    return total / data.n_envs


def linear_penalty_argmax(beta, S, data: MultiEnvDataset, intercept: float = 0.0,
                          disc_intercept: bool = False) -> list[np.ndarray]:
    """Maximising discriminator coefficients ``G^{-1} r`` per environment."""
    out = []
    S = sorted(S)
    for e, (X, y) in enumerate(data.environments):
        Z = _design(X, S, disc_intercept)
        n = X.shape[0]
        r = Z.T @ (y - X @ np.asarray(beta) - intercept) / n
        out.append(spd_solve(Z.T @ Z / n, r, env=e))
    return out


# ---------------------------------------------------------------------------
# Exact population quantities on finite-support distributions


@dataclass
class DiscreteDistribution:
    """Joint law of ``(X, Y)`` on finitely many support points.

    ``X`` has one row per atom, ``y`` the response value and ``p`` the atom
    probability. Atoms with equal ``X`` rows form one conditioning cell.
    """

    X: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        if not (self.X.shape[0] == self.y.shape[0] == self.p.shape[0]):
            raise ValueError("atoms, responses and probabilities must align")
        if np.any(self.p < 0):
            raise ValueError("negative probability")


def cell_index(X: np.ndarray, S) -> np.ndarray:
    """Dense integer label of each row's ``X_S`` value (rows with equal ``X_S`` share a label)."""
    code = np.zeros(X.shape[0], dtype=np.int64)
    for j in sorted(S):
        _, col = np.unique(X[:, j], return_inverse=True)
        code = code * (int(col.max()) + 1) + col.reshape(-1)
    return np.unique(code, return_inverse=True)[1].reshape(-1)


def cond_expectation(dist: DiscreteDistribution, S) -> tuple[np.ndarray, np.ndarray]:
    """``E[Y | X_S]`` evaluated at every atom, plus each atom's cell mass.

    Zero-mass cells get expectation 0 and mass 0.
    """
    cell = cell_index(dist.X, S)
    mass = np.bincount(cell, weights=dist.p)
    num = np.bincount(cell, weights=dist.p * dist.y)
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.where(mass > 0, num / np.where(mass > 0, mass, 1.0), 0.0)
    return m[cell], mass[cell]


def population_penalty_oracle(predictor, envs: Sequence[DiscreteDistribution], S) -> float:
    """``1/2 sum_e E_e[(g(X) - E_e[Y | X_S])^2]`` by enumeration.

    ``predictor`` should depend on ``X_S`` only; zero-mass cells contribute 0.
    """
    total = 0.0
    for dist in envs:
        m, mass = cond_expectation(dist, S)
        g = predict_with(predictor, dist.X)
        keep = mass > 0
        total += 0.5 * float(np.sum(dist.p[keep] * (g[keep] - m[keep]) ** 2))
    return total


def all_subsets(d: int, max_size: int | None = None):
    top = d if max_size is None else min(d, max_size)
    for k in range(top + 1):
        yield from itertools.combinations(range(d), k)


def sigmoid(x):
    return expit(x)
