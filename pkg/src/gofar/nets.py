"""Minimal numpy MLP with reverse-mode gradients and Adam.

Networks are affine-ReLU-affine-ReLU-affine (two hidden layers, matching
the 256x2 ReLU architecture used throughout).  Parameters are plain lists
of arrays so training loops stay explicit and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MlpParams:
    weights: list  # [ (h1,in), (h2,h1), (out,h2) ]
    biases: list   # [ (h1,), (h2,), (out,) ]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.weights + self.biases])

    def fingerprint(self) -> int:
        return hash(self.flatten().tobytes())


class ParamAverager:
    """Running mean of the parameter iterates from step `start` onward.

    Averaging the tail of an SGD run flattens the stationary optimizer noise
    without changing what the net converged to."""

    def __init__(self, start: int):
        self.start = start
        self.avg = None
        self.count = 0

    def update(self, step: int, params: MlpParams) -> None:
        if step < self.start:
            return
        if self.avg is None:
            self.avg = params.copy()
        else:
            for aw, w in zip(self.avg.weights, params.weights):
                aw += w
            for ab, b in zip(self.avg.biases, params.biases):
                ab += b
        self.count += 1

    def result(self, fallback: MlpParams) -> MlpParams:
        if self.avg is None:
            return fallback
        for aw in self.avg.weights:
            aw /= self.count
        for ab in self.avg.biases:
            ab /= self.count
        return self.avg


def init_mlp(sizes, rng: np.random.Generator) -> MlpParams:
    """He-initialized MLP; sizes = [in, h1, h2, out]."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """x: (B, in) -> (B, out).  ReLU on all but the last layer."""
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h

def _forward_cache(params: MlpParams, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return h, acts, pre


def mlp_grad(params: MlpParams, x: np.ndarray, upstream: np.ndarray):
    """Reverse accumulation of d(sum upstream*y)/dparams.

    Returns (grads: MlpParams-shaped lists, dx: (B, in)).
    """
    y, acts, pre = _forward_cache(params, x)
    if upstream.shape != y.shape:
        raise ValueError(f"upstream shape {upstream.shape} != output {y.shape}")
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = upstream
    for i in range(n_layers - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (pre[i - 1] > 0)
    return MlpParams(gw, gb), delta @ params.weights[0] if n_layers else None


def input_gradient(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """d(scalar output)/dx per sample; network must have a 1-d output."""
    y, acts, pre = _forward_cache(params, x)
    if y.shape[1] != 1:
        raise ValueError("input_gradient requires a scalar-output network")
    delta = np.ones_like(y)
    for i in range(len(params.weights) - 1, 0, -1):
        delta = (delta @ params.weights[i]) * (pre[i - 1] > 0)
    return delta @ params.weights[0]


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def disc_penalty_grads(params: MlpParams, x: np.ndarray):
    """Gradient w.r.t. parameters of P = mean_b || d sigmoid(f(x_b)) / dx ||^2
    for a scalar-output two-hidden-layer MLP.

    ReLU masks are held fixed (the a.e. derivative).  Returns (P, grads).
    """
    if len(params.weights) != 3:
        raise ValueError("penalty derivation assumes exactly two hidden layers")
    W1, W2, W3 = params.weights
    B = x.shape[0]
    _, acts, pre = _forward_cache(params, x)
    o = acts[-1][:, 0]                      # (B,)
    c = sigmoid(o)
    s = c * (1.0 - c)                       # sigma'(o)
    ds = s * (1.0 - 2.0 * c)                # d sigma'/d o
    m1 = (pre[0] > 0).astype(float)         # (B, h1)
    m2 = (pre[1] > 0).astype(float)         # (B, h2)
    w3 = W3[0]                              # (h2,)

    v2 = m2 * w3[None, :]                   # (B, h2)
    v1 = m1 * (v2 @ W2)                     # (B, h1)
    u = v1 @ W1                             # (B, in)  = d o / d x
    usq = (u * u).sum(axis=1)               # (B,)
    penalty = float(np.mean(s * s * usq))

    # term 1: 2 s ds ||u||^2 * d o / d theta
    coef = (2.0 * s * ds * usq / B)[:, None]
    g1, _ = mlp_grad(params, x, coef)

    # term 2: s^2 * d ||u||^2 / d theta with masks fixed
    sc = (s * s / B)[:, None]
    w1u = u @ W1.T                          # (B, h1) = W1 u
    gW1 = 2.0 * (sc * v1).T @ u             # (h1, in)
    inner = m1 * w1u                        # (B, h1)
    gW2 = 2.0 * (sc * v2).T @ inner         # (h2, h1)
    gw3 = 2.0 * ((sc * m2) * (inner @ W2.T)).sum(axis=0)  # (h2,)

    grads = MlpParams(
        [g1.weights[0] + gW1, g1.weights[1] + gW2, g1.weights[2] + gw3[None, :]],
        [g1.biases[0], g1.biases[1], g1.biases[2]],
    )
    return penalty, grads


class Adam:
    """Adaptive-moment SGD, beta = (0.9, 0.999), eps = 1e-8."""

    def __init__(self, params: MlpParams, lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params.weights + params.biases]
        self.v = [np.zeros_like(p) for p in params.weights + params.biases]

    def step(self, params: MlpParams, grads: MlpParams) -> None:
        self.t += 1
        flat_p = params.weights + params.biases
        flat_g = grads.weights + grads.biases
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(flat_p, flat_g, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
