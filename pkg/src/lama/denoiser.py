"""Posterior mean and variance of a discrete symbol observed in Gaussian noise.

For an observation ``z`` of symbol ``S`` in Gaussian noise of variance ``tau``
the weights are

* complex field: ``w_a ~ p_a exp(-|z - a|**2 / tau)``
* real field:    ``w_a ~ p_a exp(-(z - a)**2 / (2 tau))``

``F`` is the weighted mean of the points and ``G`` the weighted spread around
``F``.  Everything is vectorized over ``z``; ``tau`` may be a scalar or an
array broadcastable against ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation

TAU_REL_FLOOR = 1e-12


@dataclass
class DenoiserEval:
    mean: np.ndarray
    variance: np.ndarray
    weights: np.ndarray


def _check_tau(tau):
    t = np.asarray(tau, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError(f"tau must be positive, got {tau!r}")
    return t


def log_weights(z, tau, c: Constellation) -> np.ndarray:
    """Unnormalized log-weights, shape ``z.shape + (c.size,)``."""
    tau = _check_tau(tau)
    z = np.asarray(z)
    a = c.points if not c.is_real else c.points.real
    logp = c.log_priors
    diff = z[..., None] - a
    if c.is_real:
        d2 = diff.real ** 2 if np.iscomplexobj(diff) else diff ** 2
        return logp - d2 / (2.0 * tau[..., None])
    d2 = diff.real ** 2 + diff.imag ** 2
    return logp - d2 / tau[..., None]


def _tiny(tau, c: Constellation):
    return np.asarray(tau) < TAU_REL_FLOOR * c.min_sq_distance


def _normalize(lw: np.ndarray) -> np.ndarray:
    m = np.max(lw, axis=-1, keepdims=True)
    w = np.exp(lw - m)
    w /= np.sum(w, axis=-1, keepdims=True)
    return w


def weights(z, tau, c: Constellation) -> np.ndarray:
    """Normalized posterior weights over the constellation points."""
    tau = _check_tau(tau)
    lw = log_weights(z, tau, c)
    w = _normalize(lw)
    tiny = _tiny(tau, c)
    if np.any(tiny):
        onehot = np.eye(c.size)[np.argmax(lw, axis=-1)]
        w = np.where(np.broadcast_to(tiny, lw.shape[:-1])[..., None], onehot, w)
    return w


def evaluate(z, tau, c: Constellation) -> DenoiserEval:
    """Weights, posterior mean ``F`` and posterior variance ``G`` in one pass."""
    w = weights(z, tau, c)
    a = c.points.real if c.is_real else c.points
    mean = w @ a
    dev = a - mean[..., None]
    var = np.sum(w * (dev.real ** 2 + dev.imag ** 2), axis=-1) if not c.is_real \
        else np.sum(w * dev ** 2, axis=-1)
    return DenoiserEval(mean=mean, variance=var, weights=w)


def posterior_mean(z, tau, c: Constellation):
    """``F(z, tau) = sum_a w_a a``."""
    out = evaluate(z, tau, c).mean
    return out if np.ndim(out) else out[()]


def posterior_variance(z, tau, c: Constellation):
    """``G(z, tau) = sum_a w_a |a - F|^2``."""
    out = evaluate(z, tau, c).variance
    return out if np.ndim(out) else out[()]


def hard_decision_index(z, tau, c: Constellation) -> np.ndarray:
    """Index of the maximum-weight point; ties go to the lowest index."""
    return np.argmax(log_weights(z, tau, c), axis=-1)


def hard_decision(z, tau, c: Constellation):
    """Maximum a-posteriori point for each entry of ``z``."""
    pts = c.points.real if c.is_real else c.points
    out = pts[hard_decision_index(z, tau, c)]
    return out if np.ndim(out) else out[()]


def variance_identity_check(z, tau, c: Constellation, step: float = 1e-5) -> float:
    """Residual between ``G`` and the scaled divergence of ``F``.

    Complex field: ``|G - (tau/2)(dRe F/dx + dIm F/dy)|`` with ``z = x + iy``.
    Real field: ``|G - tau dF/dz|``.  Derivatives are central differences.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    z = complex(z) if not c.is_real else float(np.real(z))
    g = float(posterior_variance(z, tau, c))
    if c.is_real:
        d = (posterior_mean(z + step, tau, c) - posterior_mean(z - step, tau, c)) / (2 * step)
        return abs(g - tau * float(d))
    dx = (posterior_mean(z + step, tau, c) - posterior_mean(z - step, tau, c)).real / (2 * step)
    dy = (posterior_mean(z + 1j * step, tau, c) - posterior_mean(z - 1j * step, tau, c)).imag \
        / (2 * step)
    return abs(g - 0.5 * tau * (dx + dy))


__all__ = [
    "DenoiserEval", "log_weights", "weights", "evaluate", "posterior_mean",
    "posterior_variance", "hard_decision", "hard_decision_index", "variance_identity_check",
]
