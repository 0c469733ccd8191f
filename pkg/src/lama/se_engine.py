"""Complex state evolution for LAMA and metrics of the decoupled channel.

The state is the pair ``(sigma2, gamma2)``: the true effective noise
variance of the per-stream Gaussian output and the variance the detector
believes it has.  With postulated noise ``n0post`` equal to the true ``n0``
the two coincide and a single recursion remains.

``psi`` is the mean squared error of the posterior mean and ``phi`` the mean
posterior variance, both averaged over the prior and Gaussian noise.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc, logsumexp

from . import denoiser
from .constellation import Constellation, ConstellationError
from .quadrature import DEFAULT_QUAD, QuadratureSpec, gaussian_expectation

_LN2 = np.log(2.0)


# ---------------------------------------------------------------------------
# reductions to 1-D integrals

@lru_cache(maxsize=256)
def _reduction(c: Constellation):
    """``(alphabet, variance scale, output multiplier)`` for the cheapest exact route.

    Product alphabets split into two independent real problems at half the
    variance.  A complex alphabet whose points are all real only sees the
    real part of the noise, again at half the variance.
    """
    if c.is_real:
        return c, 1.0, 1.0
    if c.separable:
        ra = c.real_alphabet
        return ra, 0.5, 2.0
    if np.all(c.points.imag == 0):
        return c.as_field("real"), 0.5, 1.0
    return c, 1.0, 1.0


def _psi_phi_integrand(gamma2: float):
    def fn(Y, a, sub):
        ev = denoiser.evaluate(Y, gamma2, sub)
        err = ev.mean - a
        mse = err.real ** 2 + err.imag ** 2 if np.iscomplexobj(err) else err ** 2
        return np.stack([mse, ev.variance])
    return fn


def psi_phi(sigma2: float, gamma2: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD,
            reduce: bool = True) -> tuple[float, float]:
    """Return ``(psi, phi)`` from one shared set of denoiser evaluations.

    Results are memoized per ``(sigma2, gamma2, c, q)``; threshold and
    fixed-point scans revisit the same matched-diagonal points often.
    """
    return _psi_phi_cached(float(sigma2), float(gamma2), c, q, bool(reduce))


@lru_cache(maxsize=200_000)
def _psi_phi_cached(sigma2: float, gamma2: float, c: Constellation, q: QuadratureSpec,
                    reduce: bool) -> tuple[float, float]:
    if not (sigma2 >= 0) or not np.isfinite(sigma2):
        raise ValueError(f"sigma2 must be finite and >= 0, got {sigma2!r}")
    if not (gamma2 >= 0) or not np.isfinite(gamma2):
        raise ValueError(f"gamma2 must be finite and > 0, got {gamma2!r}")
    if gamma2 == 0:
        if sigma2 == 0:
            return 0.0, 0.0
        raise ValueError("gamma2 must be positive when sigma2 > 0")
    base, scale, mult = _reduction(c) if reduce else (c, 1.0, 1.0)
    vals = gaussian_expectation(base, sigma2 * scale, _psi_phi_integrand(gamma2 * scale), 2,
                                gamma2 * scale, q)
    return float(mult * vals[0]), float(mult * vals[1])


def psi(sigma2: float, gamma2: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD,
        reduce: bool = True) -> float:
    """Mean squared error ``E|F(S + sigma Z, gamma2) - S|^2``."""
    return psi_phi(sigma2, gamma2, c, q, reduce)[0]


def phi(sigma2: float, gamma2: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD,
        reduce: bool = True) -> float:
    """Mean posterior variance ``E[G(S + sigma Z, gamma2)]``."""
    return psi_phi(sigma2, gamma2, c, q, reduce)[1]


def psi_matched(sigma2: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> float:
    return psi(sigma2, sigma2, c, q)


# ---------------------------------------------------------------------------
# recursion

@dataclass
class SEParams:
    beta: float
    n0: float
    constellation: Constellation
    n0post: Optional[float] = None
    quad: QuadratureSpec = DEFAULT_QUAD

    def __post_init__(self):
        if self.n0post is None:
            self.n0post = self.n0
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta!r}")
        if not (self.n0 >= 0 and np.isfinite(self.n0)):
            raise ValueError(f"n0 must be >= 0, got {self.n0!r}")
        if not (self.n0post >= 0 and np.isfinite(self.n0post)):
            raise ValueError(f"n0post must be >= 0, got {self.n0post!r}")

    @property
    def matched(self) -> bool:
        return self.n0post == self.n0

    def as_dict(self) -> dict:
        return {"beta": self.beta, "n0": self.n0, "n0post": self.n0post,
                "constellation": self.constellation.name, "field": self.constellation.field,
                "nodes_per_dim": self.quad.nodes_per_dim, "abs_tol": self.quad.abs_tol,
                "rel_tol": self.quad.rel_tol}


@dataclass(frozen=True)
class SEState:
    sigma2: float
    gamma2: float
    t: int


def _efficiency(sigma2: float, n0: float) -> float:
    if sigma2 == 0:
        return 1.0  # limit of n0/sigma2 as both vanish below the exact-recovery threshold
    return n0 / sigma2


@dataclass
class SETrace:
    params: SEParams
    states: list = field(default_factory=list)
    converged: bool = False

    @property
    def sigma2(self) -> np.ndarray:
        return np.array([s.sigma2 for s in self.states])

    @property
    def gamma2(self) -> np.ndarray:
        return np.array([s.gamma2 for s in self.states])

    @property
    def final(self) -> SEState:
        return self.states[-1]

    def rows(self) -> list[dict]:
        return [{"t": s.t, "sigma2": s.sigma2, "gamma2": s.gamma2} for s in self.states]

    def to_csv(self) -> str:
        return _rows_to_csv(self.rows(), ["t", "sigma2", "gamma2"])

    def to_json(self) -> str:
        return json.dumps({"params": self.params.as_dict(), "converged": self.converged,
                           "trace": self.rows()}, indent=2)


def _rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n",
                       extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def se_init(p: SEParams) -> SEState:
    var = p.constellation.variance
    return SEState(sigma2=p.n0 + p.beta * var, gamma2=p.n0post + p.beta * var, t=1)


def se_step(state: SEState, p: SEParams) -> SEState:
    """One step of the coupled recursion; the matched case reuses sigma2 for gamma2."""
    c, q = p.constellation, p.quad
    if p.matched:
        s2 = p.n0 + p.beta * psi(state.sigma2, state.sigma2, c, q)
        return SEState(sigma2=s2, gamma2=s2, t=state.t + 1)
    ps, ph = psi_phi(state.sigma2, state.gamma2, c, q)
    return SEState(sigma2=p.n0 + p.beta * ps, gamma2=p.n0post + p.beta * ph, t=state.t + 1)


def se_run(p: SEParams, max_iters: int = 100, conv_tol: float = 1e-10) -> SETrace:
    """Iterate from the standard initialization.

    The trace holds at most ``max_iters`` states (``t = 1 .. max_iters``).
    Iteration stops early once the relative change of ``sigma2`` (and of
    ``gamma2`` under mismatch) drops to ``conv_tol``; ``converged`` records
    whether that happened.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    trace = SETrace(params=p, states=[se_init(p)])
    while len(trace.states) < max_iters:
        cur = trace.states[-1]
        nxt = se_step(cur, p)
        trace.states.append(nxt)
        ds = abs(nxt.sigma2 - cur.sigma2) <= conv_tol * cur.sigma2
        dg = p.matched or abs(nxt.gamma2 - cur.gamma2) <= conv_tol * cur.gamma2
        if (ds and dg) or (nxt.sigma2 == 0 and nxt.gamma2 == 0):
            trace.converged = True
            break
    return trace


def sigma2_after(p: SEParams, iters: int) -> float:
    """Effective noise variance of the Gaussian output after ``iters`` iterations."""
    return se_run(p, max_iters=iters, conv_tol=0.0).final.sigma2


# ---------------------------------------------------------------------------
# fixed points

def g_function(sigma2: float, p: SEParams) -> float:
    """``n0 + beta psi(sigma2, sigma2) - sigma2``; zero at fixed points."""
    if not p.matched:
        raise ValueError("g_function is defined for the matched case only")
    if sigma2 == 0:
        return float(p.n0)
    return p.n0 + p.beta * psi(sigma2, sigma2, p.constellation, p.quad) - sigma2


@dataclass
class FixedPointReport:
    roots: list
    n0: float
    beta: float
    grid_warning: bool = False
    residuals: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.roots)

    @property
    def largest(self) -> float:
        return self.roots[-1]

    @property
    def smallest(self) -> float:
        return self.roots[0]

    @property
    def eta(self) -> float:
        return _efficiency(self.largest, self.n0)

    @property
    def xi(self) -> float:
        return self.eta  # matched case: postulated and true variances coincide

    def rows(self) -> list[dict]:
        return [{"index": i, "sigma2": r, "g": g} for i, (r, g) in
                enumerate(zip(self.roots, self.residuals))]

    def to_csv(self) -> str:
        return _rows_to_csv(self.rows(), ["index", "sigma2", "g"])

    def as_dict(self) -> dict:
        return {"beta": self.beta, "n0": self.n0, "count": self.count, "roots": self.roots,
                "largest": self.largest, "smallest": self.smallest, "eta": self.eta,
                "grid_warning": self.grid_warning}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def default_root_bracket(p: SEParams) -> tuple[float, float]:
    """Interval that contains every positive root of ``g``.

    Because ``0 <= psi <= Var``, any root lies in ``[n0, n0 + beta Var]``.
    """
    var = p.constellation.variance
    lo = max(p.n0, 1e-8 * (p.n0 + p.beta))
    return lo, p.n0 + p.beta * var


def _sign_roots(f, grid: np.ndarray, vals: np.ndarray, rtol: float) -> list[float]:
    roots = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0:
            roots.append(float(grid[i]))
        elif a * b < 0:
            roots.append(float(brentq(f, grid[i], grid[i + 1], xtol=1e-300, rtol=rtol,
                                      maxiter=500)))
    if vals[-1] == 0:
        roots.append(float(grid[-1]))
    return roots


def _count_sign_changes(vals: np.ndarray) -> int:
    s = np.sign(vals)
    return int(np.sum(s[:-1] * s[1:] < 0) + np.sum(s == 0))


def fixed_points(p: SEParams, grid: Optional[np.ndarray] = None, n_grid: int = 2000,
                 check_resolution: bool = True, rtol: float = 1e-10) -> FixedPointReport:
    """All roots of ``g`` found by a sign-change scan plus bracketed bisection.

    By default the scan covers :func:`default_root_bracket` on a log grid.
    ``sigma2 = 0`` is reported as an exact root when ``n0 == 0``.  With
    ``check_resolution`` the midpoints are evaluated too and
    ``grid_warning`` is set if the finer grid sees a different number of
    sign changes.
    """
    if not p.matched:
        raise ValueError("fixed_points is defined for the matched case only")
    if grid is None:
        lo, hi = default_root_bracket(p)
        grid = np.geomspace(lo, hi, n_grid)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValueError("grid must be an increasing array of positive values")

    def g(x):
        return g_function(x, p)

    vals = np.array([g(x) for x in grid])
    roots = _sign_roots(g, grid, vals, rtol)
    warn = False
    if check_resolution:
        mids = np.sqrt(grid[:-1] * grid[1:])
        mvals = np.array([g(x) for x in mids])
        fine = np.empty(2 * grid.size - 1)
        fine[0::2], fine[1::2] = vals, mvals
        warn = _count_sign_changes(fine) != _count_sign_changes(vals)
    if p.n0 == 0:
        roots = [0.0] + roots
    roots = sorted(roots)
    res = [g(r) for r in roots]
    return FixedPointReport(roots=roots, n0=p.n0, beta=p.beta, grid_warning=warn,
                            residuals=res)


# ---------------------------------------------------------------------------
# decoupled channel metrics

def _q(x):
    return 0.5 * erfc(np.asarray(x) / np.sqrt(2.0))


def _pam_ser(levels: int, half_dist: float, std: float) -> float:
    return float(2.0 * (1.0 - 1.0 / levels) * _q(half_dist / std))


def _closed_form_ser(sigma2: float, c: Constellation) -> Optional[float]:
    if not c.uniform:
        return None
    if c.is_real:
        if c.family not in ("PAM", "BPSK"):
            return None
        d = np.sqrt(c.min_sq_distance)
        return _pam_ser(c.size, d / 2, np.sqrt(sigma2))
    if c.family == "BPSK":
        d = np.sqrt(c.min_sq_distance)
        return _pam_ser(2, d / 2, np.sqrt(sigma2 / 2))
    if c.family == "QAM" and c.separable:
        ra = c.real_alphabet
        d = np.sqrt(ra.min_sq_distance)
        p = _pam_ser(ra.size, d / 2, np.sqrt(sigma2 / 2))
        return float(1.0 - (1.0 - p) ** 2)
    return None


def awgn_ser(sigma2: float, c: Constellation, method: str = "closed_form",
             n_samples: int = 1_000_000, rng=None, return_stderr: bool = False):
    """Symbol error rate of the MAP decision for ``S + N`` with ``N`` of variance ``sigma2``.

    ``closed_form`` covers BPSK, PAM and square QAM with uniform priors;
    ``monte_carlo`` draws ``n_samples`` symbols with the given generator
    (seed 0 if none).
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if method == "closed_form":
        val = _closed_form_ser(sigma2, c)
        if val is None:
            raise ConstellationError(f"no closed-form SER for {c.name}")
        return (val, 0.0) if return_stderr else val
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    errors = 0
    n_done = 0
    block = 200_000
    while n_done < n_samples:
        n = min(block, n_samples - n_done)
        idx = rng.choice(c.size, size=n, p=c.priors)
        if c.is_real:
            y = c.points.real[idx] + np.sqrt(sigma2) * rng.standard_normal(n)
        else:
            y = c.points[idx] + np.sqrt(sigma2 / 2) * (rng.standard_normal(n)
                                                       + 1j * rng.standard_normal(n))
        errors += int(np.sum(denoiser.hard_decision_index(y, sigma2, c) != idx))
        n_done += n
    ser = errors / n_samples
    if return_stderr:
        return ser, float(np.sqrt(max(ser * (1 - ser), 1e-300) / n_samples))
    return ser


def ser(sigma2: float, c: Constellation, n_samples: int = 1_000_000, rng=None) -> float:
    """Closed form where available, Monte-Carlo otherwise."""
    try:
        return awgn_ser(sigma2, c)
    except ConstellationError:
        return awgn_ser(sigma2, c, "monte_carlo", n_samples=n_samples, rng=rng)


def snr_db_to_n0(snr_db, beta: float, es: float = 1.0):
    """``n0 = beta es / SNR`` with SNR given in dB."""
    return beta * es / 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def n0_to_snr_db(n0, beta: float, es: float = 1.0):
    return 10.0 * np.log10(beta * es / np.asarray(n0, dtype=float))


def awgn_required_sigma2(c: Constellation, target_ser: float) -> float:
    """Noise variance at which the interference-free channel has SER ``target_ser``."""
    if not 0 < target_ser < 1 - 1 / c.size:
        raise ValueError(f"target_ser must lie in (0, {1 - 1 / c.size}), got {target_ser!r}")
    f = lambda u: np.log(max(ser(np.exp(u), c), 1e-300)) - np.log(target_ser)  # noqa: E731
    lo, hi = np.log(c.variance) - 40.0, np.log(c.variance) + 10.0
    return float(np.exp(brentq(f, lo, hi, xtol=1e-13, rtol=1e-13)))


def required_snr_db(beta: float, c: Constellation, iters: int, target_ser: float,
                    snr_range: tuple = (-10.0, 40.0), q: QuadratureSpec = DEFAULT_QUAD
                    ) -> Optional[float]:
    """Smallest SNR (dB) at which ``iters`` outputs of matched SE reach ``target_ser``.

    ``iters = 1`` is the matched filter.  ``sigma2_I`` grows with the noise
    level, so the SER after a fixed number of iterations is monotone in the
    SNR and a bracketing solve applies.  Returns ``None`` when the target is
    not met anywhere in ``snr_range``.
    """
    es = c.es

    def f(snr):
        p = SEParams(beta=beta, n0=float(snr_db_to_n0(snr, beta, es)), constellation=c, quad=q)
        return np.log(max(ser(sigma2_after(p, iters), c), 1e-300)) - np.log(target_ser)

    lo, hi = snr_range
    fhi = f(hi)
    if fhi > 0:
        return None
    if f(lo) <= 0:
        return float(lo)
    return float(brentq(f, lo, hi, xtol=1e-6))


def _rate_integrand(sigma2: float):
    def fn(Y, a, sub):
        lw = denoiser.log_weights(Y, sigma2, sub)
        own = lw[:, int(sub.nearest_index(a))]
        # -log2 of the posterior probability of the transmitted point
        return ((logsumexp(lw, axis=-1) - own) / _LN2)[None]
    return fn


def achievable_rate(sigma2: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Mutual information in bits between the symbol and its Gaussian observation.

    Computed as the prior entropy minus the expected posterior surprise of
    the transmitted point, clamped to ``[0, entropy]``.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    base, scale, mult = _reduction(c)
    s2 = sigma2 * scale
    cond = float(gaussian_expectation(base, s2, _rate_integrand(s2), 1, s2, q)[0])
    rate = mult * (base.entropy - cond)
    return float(min(max(rate, 0.0), c.entropy))


__all__ = [
    "psi", "phi", "psi_phi", "psi_matched", "SEParams", "SEState", "SETrace", "se_init",
    "se_step", "se_run", "sigma2_after", "g_function", "FixedPointReport", "fixed_points",
    "default_root_bracket", "awgn_ser", "ser", "achievable_rate", "snr_db_to_n0",
    "n0_to_snr_db", "awgn_required_sigma2", "required_snr_db",
]
