"""LAMA: approximate message passing detection with a discrete symbol prior.

Each iteration denoises the Gaussian output ``z = shat + H^H r`` with the
posterior mean of the prior, tracks the normalized variance ``tau`` and
updates the residual with its Onsager correction::

    var    = n0post (1 + tau)            (or ||r||^2 / M_R with the estimator)
    shat'  = F(z, var)
    tau'   = beta / n0post * mean(G(z, var))
    r'     = y - H shat' + tau' / (1 + tau) r
    z'     = shat' + H^H r'

With ``t`` counting Gaussian outputs, ``z`` at ``t = 1`` is the matched
filter output (for zero-mean alphabets) and ``max_iters`` is the number of
outputs produced, so ``max_iters - 1`` updates are run.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import denoiser
from .constellation import Constellation

MF_N0POST = 1e9
STOP_RULES = ("fixed_iters", "tau_non_improving")
VARIANCE_MODES = ("analytic_G", "residual_estimator")


class LamaDivergence(ArithmeticError):
    """Non-finite values appeared in the detector state."""

    def __init__(self, t: int, what: str):
        super().__init__(f"LAMA diverged at iteration {t}: non-finite {what}")
        self.iteration = t


@dataclass(frozen=True)
class LamaConfig:
    n0post: float
    max_iters: int = 10
    stop_rule: str = "fixed_iters"
    variance_mode: str = "analytic_G"

    def __post_init__(self):
        if not (self.n0post > 0 and np.isfinite(self.n0post)):
            raise ValueError(f"n0post must be positive and finite, got {self.n0post!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be an integer >= 1")
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"stop_rule must be one of {STOP_RULES}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")


@dataclass
class LamaState:
    shat: np.ndarray
    r: np.ndarray
    tau: float
    z: np.ndarray
    t: int
    sigma2_hat: float

    def denoiser_variance(self, cfg: LamaConfig) -> float:
        if cfg.variance_mode == "residual_estimator":
            return self.sigma2_hat
        return cfg.n0post * (1.0 + self.tau)


@dataclass
class LamaResult:
    states: list
    symbols: np.ndarray
    indices: np.ndarray
    final: LamaState
    stopped_early: bool = False

    def trace_rows(self, c: Constellation, cfg: LamaConfig, s0=None) -> list[dict]:
        rows = []
        for st in self.states:
            row = {"t": st.t, "tau": st.tau, "sigma2_hat": st.sigma2_hat}
            if s0 is not None:
                det = denoiser.hard_decision(st.z, st.denoiser_variance(cfg), c)
                row["ser"] = float(np.mean(det != np.asarray(s0)))
            rows.append(row)
        return rows

    def trace_csv(self, c: Constellation, cfg: LamaConfig, s0=None) -> str:
        rows = self.trace_rows(c, cfg, s0)
        cols = ["t", "tau", "sigma2_hat"] + (["ser"] if s0 is not None else [])
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()


def _dims(y, H):
    H = np.asarray(H)
    y = np.asarray(y)
    if H.ndim != 2 or y.ndim != 1 or H.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: H {H.shape}, y {y.shape}")
    return y, H


def _adjoint(H: np.ndarray) -> np.ndarray:
    return H.conj().T if np.iscomplexobj(H) else H.T


def _check(t, **arrays):
    for name, v in arrays.items():
        if not np.all(np.isfinite(v)):
            raise LamaDivergence(t, name)


def lama_init(y, H, c: Constellation, cfg: LamaConfig) -> LamaState:
    """State at ``t = 1``: prior mean estimate, residual and ``tau = beta Var / n0post``."""
    y, H = _dims(y, H)
    mr, mt = H.shape
    beta = mt / mr
    dtype = float if c.is_real and not np.iscomplexobj(H) and not np.iscomplexobj(y) else complex
    mean = c.mean.real if dtype is float else c.mean
    shat = np.full(mt, mean, dtype=dtype)
    r = (y - H @ shat).astype(dtype)
    tau = beta * c.variance / cfg.n0post
    z = shat + _adjoint(H) @ r
    return LamaState(shat=shat, r=r, tau=float(tau), z=z, t=1,
                     sigma2_hat=float(np.vdot(r, r).real / mr))


def lama_step(state: LamaState, y, H, c: Constellation, cfg: LamaConfig) -> LamaState:
    """One update; returns the state at ``t + 1``."""
    y, H = _dims(y, H)
    mr, mt = H.shape
    beta = mt / mr
    var = state.denoiser_variance(cfg)
    if not (var > 0 and np.isfinite(var)):
        raise LamaDivergence(state.t, "denoiser variance")
    ev = denoiser.evaluate(state.z, var, c)
    shat = ev.mean
    tau = beta / cfg.n0post * float(np.mean(ev.variance))
    r = y - H @ shat + (tau / (1.0 + state.tau)) * state.r
    z = shat + _adjoint(H) @ r
    t = state.t + 1
    _check(t, shat=shat, r=r, z=z, tau=np.array(tau))
    return LamaState(shat=shat, r=r, tau=tau, z=z, t=t,
                     sigma2_hat=float(np.vdot(r, r).real / mr))


def lama_run(y, H, c: Constellation, cfg: LamaConfig) -> LamaResult:
    """Run until the stop rule fires and return the trace and hard decisions.

    ``fixed_iters`` produces ``cfg.max_iters`` Gaussian outputs.
    ``tau_non_improving`` additionally stops at the first ``t`` with
    ``tau(t+1) >= tau(t)``; the decision then uses state ``t``, the last one
    that improved, while the trace keeps ``t + 1`` for diagnostics.
    """
    st = lama_init(y, H, c, cfg)
    _check(1, r=st.r, z=st.z)
    states = [st]
    final = st
    stopped = False
    while len(states) < cfg.max_iters:
        nxt = lama_step(states[-1], y, H, c, cfg)
        states.append(nxt)
        if cfg.stop_rule == "tau_non_improving" and nxt.tau >= states[-2].tau:
            final = states[-2]
            stopped = True
            break
        final = nxt
    var = final.denoiser_variance(cfg)
    idx = denoiser.hard_decision_index(final.z, var, c)
    pts = c.points.real if c.is_real else c.points
    return LamaResult(states=states, symbols=pts[idx], indices=idx, final=final,
                      stopped_early=stopped)


def matched_filter(y, H) -> np.ndarray:
    """``H^H y``."""
    y, H = _dims(y, H)
    return _adjoint(H) @ y


__all__ = [
    "LamaConfig", "LamaState", "LamaResult", "LamaDivergence", "lama_init", "lama_step",
    "lama_run", "matched_filter", "MF_N0POST",
]
