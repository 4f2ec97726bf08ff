"""Gumbel-gated stochastic gradient descent-ascent for the FAIR minimax problem.

Each outer iteration anneals the temperature, runs ``disc_steps`` ascent blocks
on the per-environment discriminators and ``pred_steps`` descent blocks on the
predictor parameters and gate logits. Every block draws fresh gate uniforms
shared by all environments and a fresh with-replacement minibatch per
environment.

Random streams: ``SeedSequence(seed).spawn(4)`` yields, in order, the
initialisation, minibatch, gate-uniform and evaluation streams. The minibatch
stream is spawned once more into one sub-stream per environment. Minibatch
indices and gate uniforms are drawn in chunks of ``_CHUNK`` blocks; draws are
consumed in block order (ascent blocks first, then descent blocks).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .gumbel import AnnealSchedule, GateState, anneal_tau, draw_uniforms
from .mlp import AdamState, MlpParams, adam_step, backward_cached, forward_cached, init_mlp
from .objective import LOGISTIC, SQUARED, MultiEnvDataset, loss_grad, loss_value

log = logging.getLogger(__name__)

OBJECTIVE_BOUND = 1e6
_CHUNK = 1024


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Models


def _flat_views(arrays):
    """Copy ``arrays`` into one contiguous buffer and return it with matching views."""
    flat = np.concatenate([np.ravel(a) for a in arrays]).astype(np.float64)
    views, start = [], 0
    for a in arrays:
        views.append(flat[start:start + a.size].reshape(a.shape))
        start += a.size
    return flat, views


def _flat_grad(grads):
    return np.concatenate([np.ravel(g) for g in grads])


class LinearModel:
    """``x -> coef . x + bias``; both live in one flat parameter vector."""

    kind = "linear"

    def __init__(self, coef: np.ndarray, bias: float = 0.0):
        coef = np.asarray(coef, dtype=np.float64)
        self.flat = np.append(coef, float(bias))
        self.coef = self.flat[:-1]
        self.bias = self.flat[-1:]

    def arrays(self):
        return [self.coef, self.bias]

    def forward(self, Z):
        return Z @ self.coef + self.bias[0], Z

    def backward(self, cache, up, param_grads=True):
        grads = [cache.T @ up, np.array([up.sum()])] if param_grads else None
        return grads, up[:, None] * self.coef

    def flat_backward(self, cache, up):
        g = np.empty_like(self.flat)
        g[:-1] = cache.T @ up
        g[-1] = up.sum()
        return g

    def __call__(self, Z):
        return self.forward(np.atleast_2d(Z))[0]

    def copy(self):
        return LinearModel(self.coef, self.bias[0])


class MlpModel:
    """Truncated ReLU network whose :class:`MlpParams` arrays view one flat buffer."""

    kind = "mlp"

    def __init__(self, params: MlpParams):
        self.flat, views = _flat_views(params.arrays())
        L = len(params.layer_weights)
        self.params = MlpParams(views[:L], views[L:], params.trunc_bound)

    def arrays(self):
        return self.params.arrays()

    def forward(self, Z):
        return forward_cached(self.params, Z)

    def backward(self, cache, up, param_grads=True):
        return backward_cached(self.params, cache, up, param_grads)

    def flat_backward(self, cache, up):
        return _flat_grad(backward_cached(self.params, cache, up)[0])

    def __call__(self, Z):
        return self.forward(np.atleast_2d(Z))[0]

    def copy(self):
        return MlpModel(self.params.copy())


@dataclass(frozen=True)
class Arch:
    """Model family: ``linear`` or ``mlp`` with ``depth`` hidden layers of ``width``."""

    kind: str = "linear"
    depth: int = 2
    width: int = 128
    trunc_bound: float = 20.0
    init_scale: float = 0.0  # linear only: std of the random initial coefficients

    def build(self, d: int, rng: np.random.Generator):
        if self.kind == "linear":
            coef = rng.normal(0.0, self.init_scale, d) if self.init_scale else np.zeros(d)
            return LinearModel(coef)
        if self.kind == "mlp":
            return MlpModel(init_mlp((d,) + (self.width,) * self.depth + (1,), self.trunc_bound, rng))
        raise ValueError(f"unknown architecture kind {self.kind!r}")


# ---------------------------------------------------------------------------
# Config and result


@dataclass
class FairConfig:
    gamma: float = 36.0
    loss: str = SQUARED
    total_iters: int = 50_000
    disc_steps: int = 3
    pred_steps: int = 1
    batch_size: int = 64
    lr: float = 1e-3
    disc_lr: float | None = None
    gate_lr: float | None = None
    tau0: float = 0.5
    tauT: float = 0.05
    gate_init: float = 0.0
    seed: int = 0
    eval_gumbel_samples: int = 100
    record_every: int = 100

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        for name in ("total_iters", "disc_steps", "pred_steps", "batch_size", "eval_gumbel_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.loss not in (SQUARED, LOGISTIC):
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        AnnealSchedule(self.tau0, self.tauT, self.total_iters)

    @property
    def anneal(self) -> AnnealSchedule:
        return AnnealSchedule(self.tau0, self.tauT, self.total_iters)


@dataclass
class TrainedModel:
    predictor: object
    gate: GateState
    discriminators: list
    config: FairConfig
    history: dict = field(default_factory=dict)

    def gate_probs(self) -> np.ndarray:
        return expit(self.gate.logits)

    def coefficients(self) -> np.ndarray:
        """Linear predictors only: ``coef * sigmoid(w)``."""
        if not isinstance(self.predictor, LinearModel):
            raise TypeError("coefficients are defined for linear predictors only")
        return self.predictor.coef * self.gate_probs()

    def predict(self, X, n_samples: int | None = None, rng: np.random.Generator | None = None):
        """Prediction averaged over ``n_samples`` gate draws at the final temperature."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n_samples = n_samples or self.config.eval_gumbel_samples
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence(self.config.seed).spawn(4)[3])
        out = np.zeros(X.shape[0])
        for _ in range(n_samples):
            a = expit((self.gate.logits - logit(draw_uniforms(rng, self.gate.dim))) / self.gate.tau)
            out += _link(self.config.loss, self.predictor.forward(X * a)[0])
        return out / n_samples


# ---------------------------------------------------------------------------
# Block gradients


def _link(kind, raw):
    return expit(raw) if kind == LOGISTIC else raw


def discriminator_block_grads(predictor, disc, gate, Xb, yb, gamma, kind=SQUARED):
    """Gradient of ``gamma/m sum[(y - g) f - f^2/2]`` w.r.t. the discriminator.

    ``gate`` holds the fixed gate values ``a``. Returns ``(value, grad)`` with
    ``grad`` aligned to ``disc.flat``.
    """
    Z = Xb * gate
    v = _link(kind, predictor.forward(Z)[0])
    fo, fc = disc.forward(Z)
    m = Xb.shape[0]
    value = gamma / m * float(np.sum((yb - v) * fo - 0.5 * fo * fo))
    return value, disc.flat_backward(fc, gamma / m * (yb - v - fo))


def predictor_block_grads(predictor, discs, logits, tau, u, batches, gamma, kind=SQUARED):
    """Objective ``sum_e L_e(theta, w)`` and its gradients for one descent block.

    ``batches`` is a list of ``(X_e, y_e)`` minibatches, one per environment;
    ``u`` the shared gate uniforms. The gradient w.r.t. ``w`` flows through the
    gate into both predictor and discriminator inputs. Returns
    ``(objective, theta_grad, w_grad)`` with ``theta_grad`` aligned to
    ``predictor.flat``.
    """
    a = expit((logits - logit(u)) / tau)
    total = 0.0
    g_theta = None
    g_a = np.zeros_like(a)
    for (Xb, yb), disc in zip(batches, discs):
        m = Xb.shape[0]
        Z = Xb * a
        raw, gc = predictor.forward(Z)
        v = _link(kind, raw)
        fo, fc = disc.forward(Z)
        resid = yb - v
        if kind == SQUARED:
            risk, lgrad = 0.5 * float(resid @ resid) / m, -resid
        else:
            risk, lgrad = float(np.mean(loss_value(kind, yb, v))), loss_grad(kind, yb, v)
        total += risk + gamma / m * float(resid @ fo - 0.5 * (fo @ fo))
        dv = (lgrad - gamma * fo) / m
        if kind == LOGISTIC:
            dv = dv * v * (1.0 - v)
        grads, dZ = predictor.backward(gc, dv)
        _, dZf = disc.backward(fc, gamma / m * (resid - fo), param_grads=False)
        g_a += np.einsum("ij,ij->j", dZ + dZf, Xb)
        grads = _flat_grad(grads)
        g_theta = grads if g_theta is None else g_theta + grads
    return total, g_theta, g_a * a * (1.0 - a) / tau


# ---------------------------------------------------------------------------
# Training loop


def train_fair(config: FairConfig, data: MultiEnvDataset, predictor_arch: Arch = Arch(),
               discriminator_arch: Arch | None = None) -> TrainedModel:
    discriminator_arch = discriminator_arch or predictor_arch
    d = data.dim
    init_ss, batch_ss, gate_ss, _ = np.random.SeedSequence(config.seed).spawn(4)
    init_rng = np.random.default_rng(init_ss)
    batch_rng = np.random.default_rng(batch_ss)
    gate_rng = np.random.default_rng(gate_ss)

    predictor = predictor_arch.build(d, init_rng)
    discs = [discriminator_arch.build(d, init_rng) for _ in range(data.n_envs)]
    logits = np.full(d, float(config.gate_init))

    disc_lr = config.disc_lr if config.disc_lr is not None else config.lr
    gate_lr = config.gate_lr if config.gate_lr is not None else config.lr
    theta_opt = AdamState(lr=config.lr)
    gate_opt = AdamState(lr=gate_lr) if gate_lr > 0 else None
    disc_opts = [AdamState(lr=disc_lr) for _ in discs]

    envs = data.environments
    sizes = [X.shape[0] for X, _ in envs]
    m = config.batch_size
    gamma = config.gamma
    kind = config.loss
    schedule = config.anneal
    history = {"iter": [], "objective": [], "gate_probs": [], "tau": []}
    max_abs = 0.0
    tau = schedule.tau0

    n_envs = len(envs)
    env_rngs = [np.random.default_rng(ss) for ss in batch_ss.spawn(n_envs)]
    idx_pool = [None] * n_envs
    u_pool = None
    pos = _CHUNK

    def next_block():
        nonlocal u_pool, pos
        if pos == _CHUNK:
            for e in range(n_envs):
                idx_pool[e] = env_rngs[e].integers(0, sizes[e], (_CHUNK, m))
            u_pool = draw_uniforms(gate_rng, (_CHUNK, d))
            pos = 0
        k = pos
        pos += 1
        batches = []
        for e in range(n_envs):
            X, y = envs[e]
            idx = idx_pool[e][k]
            batches.append((X[idx], y[idx]))
        return u_pool[k], batches

    for t in range(1, config.total_iters + 1):
        tau = anneal_tau(schedule, t)
        for _ in range(config.disc_steps):
            u, batches = next_block()
            if gamma == 0:
                continue
            a = expit((logits - logit(u)) / tau)
            for disc, opt, (Xb, yb) in zip(discs, disc_opts, batches):
                _, grad = discriminator_block_grads(predictor, disc, a, Xb, yb, gamma, kind)
                adam_step(opt, [disc.flat], [-grad])
        for _ in range(config.pred_steps):
            u, batches = next_block()
            obj, g_theta, g_w = predictor_block_grads(predictor, discs, logits, tau, u, batches, gamma, kind)
            if not np.isfinite(obj):
                raise TrainingDiverged(f"non-finite objective at iteration {t}")
            max_abs = max(max_abs, abs(obj))
            adam_step(theta_opt, [predictor.flat], [g_theta])
            if gate_opt is not None:
                adam_step(gate_opt, [logits], [g_w])
        if config.record_every and (t % config.record_every == 0 or t == config.total_iters):
            history["iter"].append(t)
            history["objective"].append(obj)
            history["gate_probs"].append(expit(logits))
            history["tau"].append(tau)
    history["max_abs_objective"] = max_abs
    if max_abs > OBJECTIVE_BOUND:
        log.warning("objective magnitude reached %.3g", max_abs)
    return TrainedModel(predictor, GateState(logits.copy(), tau), discs, config, history)
