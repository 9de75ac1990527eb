"""f-divergences and their convex conjugates.

Two instances are supported: chi-squared with f(x) = (x-1)^2 / 2, and KL
with f(x) = x log x.  The chi-squared conjugate follows the convention
f*(y) = (y+1)^2 / 2 with derivative y+1.  That is the conjugate of f over
unrestricted x; restricted to density ratios x >= 0 the exact conjugate is
max(0, y+1)^2 / 2 - 1/2, so the convention carries a constant +1/2 offset
for y >= -1.  The offset shifts the dual objective uniformly and leaves
its argmin and the f-advantage weights unchanged; weight() applies the
max(0, .) clamp needed for nonnegative occupancy ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHI2 = "chi2"
KL = "kl"
_KINDS = (CHI2, KL)


@dataclass(frozen=True)
class FDivergence:
    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown divergence kind {self.kind!r}; expected one of {_KINDS}")


def by_name(name: str) -> FDivergence:
    return FDivergence(name)


def f_value(div: FDivergence, x):
    """The generator f evaluated at a density ratio x >= 0."""
    x = np.asarray(x, dtype=float)
    if (x < 0).any():
        raise ValueError("density ratio must be nonnegative")
    if div.kind == CHI2:
        return 0.5 * (x - 1.0) ** 2
    # x log x with f(0) = 0 by continuity
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out if out.ndim else float(out)


def f_star_value(div: FDivergence, y):
    """Analytic conjugate.  chi2: (y+1)^2/2; KL: pointwise exp(y-1)."""
    y = np.asarray(y, dtype=float)
    if div.kind == CHI2:
        out = 0.5 * (y + 1.0) ** 2
    else:
        out = np.exp(y - 1.0)
    return out if out.ndim else float(out)


def f_star_deriv(div: FDivergence, y):
    """Derivative of the conjugate; the maximizer x* of xy - f(x)."""
    y = np.asarray(y, dtype=float)
    if div.kind == CHI2:
        out = y + 1.0
    else:
        out = np.exp(y - 1.0)
    return out if out.ndim else float(out)


def weight(div: FDivergence, y):
    """f-advantage regression weight: f*'(y) clamped to valid ratios >= 0."""
    y = np.asarray(y, dtype=float)
    if div.kind == CHI2:
        out = np.maximum(0.0, y + 1.0)
    else:
        # KL weights are softmax-normalized by the caller over its batch
        out = np.exp(y - np.max(y))
    return out if out.ndim else float(out)


def divergence(d1, d2, div: FDivergence) -> float:
    """D_f(d1 || d2) = sum_x d2(x) f(d1(x)/d2(x)).

    Requires d2 > 0 wherever d1 > 0; a violation is reported with the
    offending index.
    """
    d1 = np.asarray(d1, dtype=float).ravel()
    d2 = np.asarray(d2, dtype=float).ravel()
    if d1.shape != d2.shape:
        raise ValueError("distributions must share a shape")
    bad = (d2 <= 0) & (d1 > 0)
    if bad.any():
        raise ValueError(f"support violation at index {int(np.flatnonzero(bad)[0])}: "
                         "d2 = 0 where d1 > 0")
    mask = d2 > 0
    ratio = d1[mask] / d2[mask]
    return float(np.sum(d2[mask] * f_value(div, ratio)))


def conjugate_oracle(div: FDivergence, y: float, x_max: float = 100.0,
                     step: float = 1e-4) -> tuple:
    """Brute-force conjugate over x in [0, x_max]: grid max of x*y - f(x).

    Returns (value, argmax).  Test oracle only; independent of the analytic
    conjugates above.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xs = np.arange(0.0, x_max + step, step)
    vals = xs * y - f_value(div, xs)
    i = int(np.argmax(vals))
    return float(vals[i]), float(xs[i])
