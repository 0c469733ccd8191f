"""Recovery thresholds and optimality regimes of the matched state evolution.

Everything here works on the matched diagonal ``m(x) = psi(x, x)``:

* exact-recovery threshold ``beta_max = min_x x / m(x)``
* minimum-recovery threshold ``beta_min = min_x 1 / m'(x)``
* critical noise levels: the values of ``x - beta m(x)`` at the stationary
  points ``beta m'(x) = 1``; the smallest is ``n0_min(beta)`` and the
  largest ``n0_max(beta)``.

``beta m(x) + n0 - x`` has several zeros exactly when ``n0`` lies between
the critical levels, which is what :func:`classify_regime` relies on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .constellation import Constellation, ConstellationError, real_part_alphabet
from .quadrature import DEFAULT_QUAD, QuadratureSpec
from .se_engine import SEParams, default_root_bracket, fixed_points, psi

SIGMA2_RANGE = (1e-6, 1e3)
GRID_POINTS = 2000
REL_STEP = 1e-4


class ThresholdError(ValueError):
    """Requested critical level does not exist at this system ratio."""


class MatchedCurve:
    """Matched-diagonal MSE of one constellation on a fixed log grid.

    Grid values use the unverified quadrature (the step rule alone), which
    keeps full scans affordable for two-dimensional alphabets; refined
    optima are re-checked with the caller's specification.
    """

    def __init__(self, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD,
                 lo: float = SIGMA2_RANGE[0], hi: float = SIGMA2_RANGE[1],
                 n: int = GRID_POINTS, rel_step: float = REL_STEP):
        self.c = c
        self.q = q
        self.fast = q.unverified()
        self.scale = c.variance  # thresholds are invariant under point scaling
        self.rel_step = rel_step
        self.grid = np.geomspace(lo, hi, n) * self.scale
        self.values = np.array([self.m(x) for x in self.grid])
        lg = np.log(self.grid)
        # slope on the grid from neighbouring values (used only for bracketing)
        self.slopes = np.gradient(self.values, lg) / self.grid

    def m(self, x: float, verified: bool = False) -> float:
        return psi(x, x, self.c, self.q if verified else self.fast)

    def dm(self, x: float, step: Optional[float] = None, verified: bool = False) -> float:
        """Central-difference derivative of the diagonal with relative step."""
        d = self.rel_step if step is None else step
        return (self.m(x * (1 + d), verified) - self.m(x * (1 - d), verified)) / (2 * d * x)

    def derivative_check(self, x: float) -> float:
        """Relative change of the derivative when the step is halved."""
        a = self.dm(x)
        b = self.dm(x, self.rel_step / 2)
        return abs(a - b) / max(abs(b), 1e-300)

    def _golden(self, f, i: int) -> float:
        lg = np.log(self.grid)
        lo, hi = lg[max(i - 1, 0)], lg[min(i + 1, lg.size - 1)]
        mid = lg[i]
        if not (lo < mid < hi):
            return float(self.grid[i])
        res = minimize_scalar(lambda u: f(np.exp(u)), bracket=(lo, mid, hi), method="golden",
                              tol=1e-10)
        return float(np.exp(res.x))

    def ert_point(self) -> tuple[float, float]:
        """``(beta_max, argmin)`` of ``x / m(x)``."""
        with np.errstate(divide="ignore"):
            ratio = np.where(self.values > 0, self.grid / self.values, np.inf)
        i = int(np.argmin(ratio))
        x = self._golden(lambda v: v / self.m(v), i)
        return x / self.m(x, verified=True), x

    def mrt_point(self) -> tuple[float, float]:
        """``(beta_min, argmax)`` of ``m'(x)``."""
        i = int(np.argmax(self.slopes))
        x = self._golden(lambda v: -self.dm(v), i)
        return 1.0 / self.dm(x, verified=True), x

    def stationary_points(self, beta: float) -> list[float]:
        """Solutions of ``beta m'(x) = 1``.

        When ``beta`` sits at the tangency (the minimum-recovery threshold)
        and no sign change is visible, the maximizer of ``m'`` is returned.
        """
        h = beta * self.slopes - 1.0

        def f(x):
            return beta * self.dm(x) - 1.0

        pts = []
        for i in range(h.size - 1):
            if h[i] == 0:
                pts.append(float(self.grid[i]))
            elif h[i] * h[i + 1] < 0:
                a, b = self.grid[i], self.grid[i + 1]
                fa, fb = f(a), f(b)
                if fa * fb < 0:
                    pts.append(float(brentq(f, a, b, rtol=1e-12, xtol=1e-300)))
                else:
                    pts.append(float(a if abs(fa) < abs(fb) else b))
        if not pts:
            beta_min, x = self.mrt_point()
            if abs(beta - beta_min) <= 1e-6 * beta_min:
                pts.append(x)
        return pts

    def critical_levels(self, beta: float) -> list[tuple[float, float]]:
        """``(x, x - beta m(x))`` at every stationary point."""
        return [(x, x - beta * self.m(x)) for x in self.stationary_points(beta)]


@lru_cache(maxsize=64)
def matched_curve(c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> MatchedCurve:
    return MatchedCurve(c, q)


def ert(c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Exact-recovery threshold ``min_x x / psi(x, x)``."""
    return matched_curve(c, q).ert_point()[0]


def mrt(c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Minimum-recovery threshold ``min_x 1 / psi'(x, x)``."""
    return matched_curve(c, q).mrt_point()[0]


def n0_min(beta: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Smallest critical noise level at ``beta``.

    Raises :class:`ThresholdError` below the minimum-recovery threshold (no
    stationary point) or above the exact-recovery threshold (the level
    would be negative).
    """
    levels = matched_curve(c, q).critical_levels(beta)
    if not levels:
        raise ThresholdError(f"beta={beta!r} is below the minimum-recovery threshold of {c.name}")
    x, v = min(levels, key=lambda t: t[1])
    if v < -1e-6 * x:
        raise ThresholdError(f"beta={beta!r} exceeds the exact-recovery threshold of {c.name}")
    return max(v, 0.0)


def n0_max(beta: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Largest critical noise level at ``beta``; requires ``beta >= mrt``."""
    levels = matched_curve(c, q).critical_levels(beta)
    if not levels:
        raise ThresholdError(f"beta={beta!r} is below the minimum-recovery threshold of {c.name}")
    return max(v for _, v in levels)


@dataclass
class ThresholdReport:
    constellation: str
    beta_min: float
    beta_max: float
    n0_min_at_beta_min: float
    n0_max_at_beta_max: float
    sigma2_beta_min: float
    sigma2_beta_max: float
    sigma2_n0_max: float
    derivative_check: float

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def threshold_report(c: Constellation, q: QuadratureSpec = DEFAULT_QUAD) -> ThresholdReport:
    """All thresholds and critical levels for one alphabet."""
    curve = matched_curve(c, q)
    bmax, xmax = curve.ert_point()
    bmin, xmin = curve.mrt_point()
    n0a = xmin - bmin * curve.m(xmin, verified=True)
    levels = curve.critical_levels(bmax)
    xn, n0b = max(levels, key=lambda t: t[1])
    return ThresholdReport(constellation=c.name, beta_min=bmin, beta_max=bmax,
                           n0_min_at_beta_min=n0a, n0_max_at_beta_max=n0b,
                           sigma2_beta_min=xmin, sigma2_beta_max=xmax, sigma2_n0_max=xn,
                           derivative_check=curve.derivative_check(xmin))


def classify_regime(beta: float, n0: float, c: Constellation, q: QuadratureSpec = DEFAULT_QUAD,
                    report: Optional[ThresholdReport] = None, resolve: bool = True) -> str:
    """Optimality label of the matched detector at ``(beta, n0)``.

    Returns ``'optimal'`` or ``'suboptimal'``; inside the band between the
    critical levels the answer depends on the number of fixed points, which
    is counted unless ``resolve`` is false (then ``'conditional'``).
    """
    if report is None:
        report = threshold_report(c, q)
    if beta < report.beta_min:
        return "optimal"
    if beta <= report.beta_max:
        lo, hi = n0_min(beta, c, q), n0_max(beta, c, q)
        if n0 < lo or n0 > hi:
            return "optimal"
        if not resolve:
            return "conditional"
        return "optimal" if count_fixed_points(beta, n0, c, q) == 1 else "suboptimal"
    return "optimal" if n0 > n0_max(beta, c, q) else "suboptimal"


def count_fixed_points(beta: float, n0: float, c: Constellation,
                       q: QuadratureSpec = DEFAULT_QUAD) -> int:
    """Number of zeros of the fixed-point function, reusing the cached diagonal grid."""
    p = SEParams(beta=beta, n0=n0, constellation=c, quad=q.unverified())
    lo, hi = default_root_bracket(p)
    curve = matched_curve(c, q)
    inner = curve.grid[(curve.grid > lo) & (curve.grid < hi)]
    grid = np.concatenate([[lo], inner, [hi]])
    return fixed_points(p, grid=grid).count


def complex_real_consistency(c: Constellation, q: QuadratureSpec = DEFAULT_QUAD,
                             betas: Optional[list] = None) -> dict:
    """Compare thresholds of a product alphabet with those of its real part.

    The thresholds should agree and every critical level of the complex
    alphabet should be twice that of the real one.
    """
    if not c.separable:
        raise ConstellationError(f"{c.name} is not separable")
    rc = real_part_alphabet(c)
    a, b = threshold_report(c, q), threshold_report(rc, q)
    if betas is None:
        betas = [0.5 * (a.beta_min + a.beta_max)]
    ratios = []
    for beta in betas:
        ratios.append(n0_max(beta, c, q) / n0_max(beta, rc, q))
        ratios.append(n0_min(beta, c, q) / n0_min(beta, rc, q))
    ratios.append(a.n0_min_at_beta_min / b.n0_min_at_beta_min)
    ratios.append(a.n0_max_at_beta_max / b.n0_max_at_beta_max)
    rel_min = abs(a.beta_min - b.beta_min) / b.beta_min
    rel_max = abs(a.beta_max - b.beta_max) / b.beta_max
    worst = max(abs(r - 2.0) for r in ratios)
    return {"complex": a.as_dict(), "real": b.as_dict(), "beta_min_rel_diff": rel_min,
            "beta_max_rel_diff": rel_max, "n0_ratios": ratios, "n0_ratio_worst_dev": worst,
            "consistent": bool(rel_min <= 1e-3 and rel_max <= 1e-3 and worst <= 1e-3)}


__all__ = [
    "MatchedCurve", "matched_curve", "ert", "mrt", "n0_min", "n0_max", "ThresholdReport",
    "ThresholdError", "threshold_report", "classify_regime", "count_fixed_points",
    "complex_real_consistency",
]
