"""Truncated fully-connected ReLU networks, exact backprop, and Adam.

A network of depth ``L`` maps ``x -> Tc_B(T_{L+1} o relu o T_L o ... o relu o T_1(x))``
where ``T_l(z) = W_l z + b_l`` and ``Tc_B`` clamps the scalar output to ``[-B, B]``.
Everything runs in float64 and operates on row-batches ``X`` of shape ``(n, d0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def truncate(z, bound: float):
    """Clamp ``z`` to ``[-bound, bound]`` (sign preserved)."""
    if bound <= 0:
        raise ValueError("truncation bound must be positive")
    return np.clip(z, -bound, bound)


@dataclass
class MlpParams:
    layer_weights: list[np.ndarray]
    layer_biases: list[np.ndarray]
    trunc_bound: float

    def __post_init__(self):
        if self.trunc_bound <= 0:
            raise ValueError("trunc_bound must be positive")
        if len(self.layer_weights) != len(self.layer_biases) or not self.layer_weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        prev = self.layer_weights[0].shape[1]
        for W, b in zip(self.layer_weights, self.layer_biases):
            if W.ndim != 2 or W.shape[1] != prev or b.shape != (W.shape[0],):
                raise ValueError("inconsistent layer shapes")
            prev = W.shape[0]
        if prev != 1:
            raise ValueError("output width must be 1")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.layer_weights[0].shape[1],) + tuple(W.shape[0] for W in self.layer_weights)

    @property
    def depth(self) -> int:
        return len(self.layer_weights) - 1

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in optimizer order (shared, not copied)."""
        return [*self.layer_weights, *self.layer_biases]

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.layer_weights],
                         [b.copy() for b in self.layer_biases], self.trunc_bound)


def init_mlp(widths, trunc_bound: float, rng: np.random.Generator) -> MlpParams:
    """He-uniform weights ``U[-sqrt(6/fan_in), sqrt(6/fan_in)]``, zero biases."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or widths[-1] != 1:
        raise ValueError("widths must run from input dim to 1")
    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / fan_in)
        Ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpParams(Ws, bs, float(trunc_bound))


def _as_batch(params: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.widths[0]:
        raise ValueError(f"expected input dimension {params.widths[0]}, got shape {x.shape}")
    return X, single


def forward_cached(params: MlpParams, X: np.ndarray):
    """Batched forward pass returning outputs ``(n,)`` and the activation cache."""
    acts = [X]
    h = X
    last = len(params.layer_weights) - 1
    for l, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        z = h @ W.T + b
        if l < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z[:, 0]
    return np.clip(h, -params.trunc_bound, params.trunc_bound), (acts, h)


def backward_cached(params: MlpParams, cache, upstream, param_grads: bool = True):
    """Reverse-mode pass for ``sum_i upstream_i * out_i``.

    Returns ``(grads, input_grad)`` where ``grads`` is a list aligned with
    :meth:`MlpParams.arrays` (or ``None`` when ``param_grads`` is false).
    ReLU kinks get subgradient 0; the truncation passes gradient for
    ``|z| <= B`` and blocks it beyond.
    """
    acts, pre_out = cache
    B = params.trunc_bound
    delta = np.where(np.abs(pre_out) <= B, upstream, 0.0)[:, None]
    n_layers = len(params.layer_weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        W = params.layer_weights[l]
        h_in = acts[l]
        if param_grads:
            gW[l] = delta.T @ h_in
            gb[l] = delta.sum(axis=0)
        delta = delta @ W
        if l > 0:
            delta = delta * (h_in > 0.0)
    grads = [*gW, *gb] if param_grads else None
    return grads, delta


def mlp_forward(params: MlpParams, x):
    """Network output for a single vector (float) or a batch (array)."""
    X, single = _as_batch(params, x)
    out, _ = forward_cached(params, X)
    return float(out[0]) if single else out


def mlp_backward(params: MlpParams, x, upstream):
    """Gradients of ``upstream * output`` w.r.t. every parameter and the input.

    For a batch, ``upstream`` is per-row and parameter gradients are summed.
    Returns ``(grad_params, input_grad)`` with ``grad_params`` an :class:`MlpParams`.
    """
    X, single = _as_batch(params, x)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (X.shape[0],))
    _, cache = forward_cached(params, X)
    grads, gx = backward_cached(params, cache, up)
    L = len(params.layer_weights)
    record = MlpParams(grads[:L], grads[L:], params.trunc_bound)
    return record, (gx[0] if single else gx)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0 or not self.eps > 0:
            raise ValueError("lr and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One bias-corrected Adam descent step, updating ``params`` in place.

    Moments are lazily zero-initialised on the first call. Returns
    ``(params, state)`` for convenience.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1 ** t)
    root_c2 = np.sqrt(1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v)
        denom /= root_c2
        denom += state.eps
        p -= step * m / denom
    return params, state
