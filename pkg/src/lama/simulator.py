"""Monte-Carlo harness: channels, trials, baselines and SER sweeps.

Every trial draws its own generator from ``(seed, snr index, trial index)``,
so results do not depend on how trials are scheduled across threads.  All
detectors of one trial see the same channel, symbols and noise.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import kurtosis

from . import denoiser
from .constellation import Constellation
from .detector import LamaConfig, LamaDivergence, lama_run, matched_filter
from .se_engine import SEParams, n0_to_snr_db, se_run, snr_db_to_n0

DETECTORS = ("lama", "lama_estimator", "mf", "mmse")
CHANNEL_KINDS = ("iid_gaussian", "large_sparse")


@dataclass
class ChannelRealization:
    H: np.ndarray
    kind: str
    gamma: Optional[float] = None


def _gauss(rng, shape, var: float, real: bool):
    if real:
        return np.sqrt(var) * rng.standard_normal(shape)
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def gen_channel(kind: str, mr: int, mt: int, rng, gamma: Optional[float] = None,
                real: bool = False) -> ChannelRealization:
    """Draw a channel matrix.

    ``iid_gaussian`` has entries of variance ``1 / mr``.  ``large_sparse``
    keeps each entry with probability ``gamma / mt`` and gives the kept
    entries of column ``l`` variance ``1 / Gamma_l``, the number kept in that
    column; columns with no entries are redrawn.
    """
    if int(mr) != mr or int(mt) != mt or mr < 1 or mt < 1:
        raise ValueError(f"invalid dimensions {mr}x{mt}")
    if kind == "iid_gaussian":
        return ChannelRealization(H=_gauss(rng, (mr, mt), 1.0 / mr, real), kind=kind)
    if kind != "large_sparse":
        raise ValueError(f"unknown channel kind {kind!r}")
    if gamma is None or not (0 < gamma <= mt):
        raise ValueError("large_sparse needs 0 < gamma <= mt")
    p = gamma / mt
    H = np.zeros((mr, mt), dtype=float if real else complex)
    for col in range(mt):
        mask = rng.random(mr) < p
        while not mask.any():
            mask = rng.random(mr) < p
        k = int(mask.sum())
        H[mask, col] = _gauss(rng, k, 1.0 / k, real)
    return ChannelRealization(H=H, kind=kind, gamma=gamma)


def mmse_detect(y, H, c: Constellation, n0: float) -> np.ndarray:
    """Unbiased linear MMSE equalizer followed by a nearest-point decision.

    Returns the indices of the decided points.
    """
    if not n0 > 0:
        raise ValueError("n0 must be positive")
    H = np.asarray(H)
    Hh = H.conj().T
    G = Hh @ H + (n0 / c.es) * np.eye(H.shape[1])
    W = np.linalg.solve(G, Hh)
    x = W @ y
    bias = np.real(np.einsum("ij,ji->i", W, H))
    x = x / bias
    return c.nearest_index(x.real if c.is_real else x)


@dataclass
class SimConfig:
    mr: int
    mt: int
    constellation: Constellation
    snr_db_grid: Sequence[float]
    trials: int = 100
    max_iters: int = 10
    seed: int = 0
    detectors: Sequence[str] = ("lama",)
    n0post: Union[str, float] = "matched"
    channel: str = "iid_gaussian"
    gamma: Optional[float] = None
    stop_rule: str = "fixed_iters"
    threads: int = 1
    record_variances: bool = True

    def __post_init__(self):
        if int(self.mr) != self.mr or int(self.mt) != self.mt or self.mr < 1 or self.mt < 1:
            raise ValueError("mr and mt must be positive integers")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be an integer >= 1")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be an integer >= 1")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ValueError("seed must fit in 64 bits")
        self.snr_db_grid = [float(s) for s in self.snr_db_grid]
        if not self.snr_db_grid:
            raise ValueError("snr_db_grid must not be empty")
        self.detectors = tuple(self.detectors)
        bad = [d for d in self.detectors if d not in DETECTORS]
        if bad or not self.detectors:
            raise ValueError(f"unknown detectors {bad}; choose from {DETECTORS}")
        if self.channel not in CHANNEL_KINDS:
            raise ValueError(f"channel must be one of {CHANNEL_KINDS}")
        if self.n0post != "matched":
            self.n0post = float(self.n0post)
            if not self.n0post > 0:
                raise ValueError("n0post must be 'matched' or a positive number")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def beta(self) -> float:
        return self.mt / self.mr

    def n0(self, snr_db: float) -> float:
        return float(snr_db_to_n0(snr_db, self.beta, self.constellation.es))

    def n0post_for(self, n0: float) -> float:
        if self.n0post == "matched":
            # a true noise variance of zero is approached with a tiny positive value
            return n0 if n0 > 0 else 1e-9
        return float(self.n0post)

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "constellation"}
        d["constellation"] = self.constellation.name
        d["field"] = self.constellation.field
        d["detectors"] = list(self.detectors)
        d["snr_db_grid"] = list(self.snr_db_grid)
        return d


@dataclass
class TrialResult:
    errors: dict
    symbols: int
    diverged: dict
    emp_var: dict = field(default_factory=dict)
    sigma2_hat: dict = field(default_factory=dict)
    signal_energy: float = 0.0
    noise_energy: float = 0.0


def trial_rng(seed: int, snr_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(snr_index), int(trial)]))


def draw_symbols(c: Constellation, n: int, rng) -> np.ndarray:
    return rng.choice(c.size, size=n, p=c.priors)


def run_trial(cfg: SimConfig, snr_db: float, rng) -> TrialResult:
    """One channel use for every configured detector with shared randomness."""
    c = cfg.constellation
    real = c.is_real
    n0 = cfg.n0(snr_db)
    H = gen_channel(cfg.channel, cfg.mr, cfg.mt, rng, cfg.gamma, real).H
    idx0 = draw_symbols(c, cfg.mt, rng)
    pts = c.points.real if real else c.points
    s0 = pts[idx0]
    hs = H @ s0
    noise = _gauss(rng, cfg.mr, n0, real) if n0 > 0 else np.zeros(cfg.mr, dtype=hs.dtype)
    y = hs + noise
    res = TrialResult(errors={}, symbols=cfg.mt, diverged={},
                      signal_energy=float(np.vdot(hs, hs).real),
                      noise_energy=float(np.vdot(noise, noise).real))
    for det in cfg.detectors:
        res.diverged[det] = False
        if det in ("lama", "lama_estimator"):
            lc = LamaConfig(n0post=cfg.n0post_for(n0), max_iters=cfg.max_iters,
                            stop_rule=cfg.stop_rule,
                            variance_mode="analytic_G" if det == "lama" else "residual_estimator")
            try:
                out = lama_run(y, H, c, lc)
            except LamaDivergence:
                res.diverged[det] = True
                res.errors[det] = cfg.mt
                continue
            res.errors[det] = int(np.sum(out.indices != idx0))
            if cfg.record_variances:
                res.emp_var[det] = [float(np.mean(np.abs(st.z - s0) ** 2)) for st in out.states]
                res.sigma2_hat[det] = [st.sigma2_hat for st in out.states]
        elif det == "mf":
            z = matched_filter(y, H)
            res.errors[det] = int(np.sum(c.nearest_index(z.real if real else z) != idx0))
        else:
            res.errors[det] = int(np.sum(mmse_detect(y, H, c, max(n0, 1e-300)) != idx0))
    return res


@dataclass
class SweepResult:
    config: dict
    rows: list
    variances: dict

    def ser(self, detector: str, snr_db: float) -> float:
        for r in self.rows:
            if r["detector"] == detector and r["snr_db"] == snr_db:
                return r["ser"]
        raise KeyError((detector, snr_db))

    def row(self, detector: str, snr_db: float) -> dict:
        for r in self.rows:
            if r["detector"] == detector and r["snr_db"] == snr_db:
                return r
        raise KeyError((detector, snr_db))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["detector", "snr_db", "ser", "stderr", "trials"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {"config": self.config, "results": self.rows, "variances": self.variances}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def _run_grid(cfg: SimConfig, snr_idx: int, snr_db: float) -> list:
    def one(t):
        return run_trial(cfg, snr_db, trial_rng(cfg.seed, snr_idx, t))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            return list(ex.map(one, range(cfg.trials)))
    return [one(t) for t in range(cfg.trials)]


def ser_sweep(cfg: SimConfig) -> SweepResult:
    """Aggregate trials over the SNR grid.

    The standard error of each SER is the binomial ``sqrt(p (1 - p) / n)``
    over all ``n = trials * mt`` symbols.  Per-iteration means of the
    empirical output variance ``|z - s0|^2`` and of the residual estimate
    are kept for LAMA detectors.
    """
    rows, variances = [], {}
    for k, snr in enumerate(cfg.snr_db_grid):
        trials = _run_grid(cfg, k, snr)
        n_sym = cfg.trials * cfg.mt
        for det in cfg.detectors:
            err = sum(t.errors[det] for t in trials)
            p = err / n_sym
            rows.append({"detector": det, "snr_db": snr, "ser": p,
                         "stderr": float(np.sqrt(p * (1 - p) / n_sym)), "trials": cfg.trials,
                         "errors": err, "symbols": n_sym,
                         "diverged": sum(t.diverged[det] for t in trials)})
            if det in ("lama", "lama_estimator") and cfg.record_variances:
                ev = _ragged_mean([t.emp_var[det] for t in trials if det in t.emp_var])
                sh = _ragged_mean([t.sigma2_hat[det] for t in trials if det in t.sigma2_hat])
                variances[f"{det}@{snr!r}"] = {"emp_var": ev, "sigma2_hat": sh}
        sig = np.mean([t.signal_energy for t in trials])
        noi = np.mean([t.noise_energy for t in trials])
        variances[f"energy@{snr!r}"] = {"signal": float(sig), "noise": float(noi)}
    return SweepResult(config=cfg.as_dict(), rows=rows, variances=variances)


def _ragged_mean(seqs: list) -> list:
    if not seqs:
        return []
    n = max(len(s) for s in seqs)
    out = []
    for i in range(n):
        vals = [s[i] for s in seqs if len(s) > i]
        out.append(float(np.mean(vals)))
    return out


@dataclass
class DecouplingRow:
    t: int
    emp_var: float
    stderr: float
    se_sigma2: float
    z_score: float
    kurtosis_re: float
    kurtosis_im: float


def decoupling_report(cfg: SimConfig, snr_db: float, snr_index: int = 0) -> list:
    """Compare the per-iteration variance of ``z - s0`` with the state evolution.

    Runs ``cfg.trials`` matched LAMA trials at ``snr_db``; for each ``t``
    reports the mean empirical variance across trials, its standard error,
    the predicted ``sigma2_t`` and the excess kurtosis of the real and
    imaginary parts of ``z - s0`` (zero for Gaussian).
    """
    if cfg.n0post != "matched":
        raise ValueError("decoupling_report needs the matched configuration")
    c = cfg.constellation
    n0 = cfg.n0(snr_db)
    pts = c.points.real if c.is_real else c.points
    per_trial, resid = [], []
    for k in range(cfg.trials):
        rng = trial_rng(cfg.seed, snr_index, k)
        H = gen_channel(cfg.channel, cfg.mr, cfg.mt, rng, cfg.gamma, c.is_real).H
        idx0 = draw_symbols(c, cfg.mt, rng)
        s0 = pts[idx0]
        y = H @ s0 + _gauss(rng, cfg.mr, n0, c.is_real)
        out = lama_run(y, H, c, LamaConfig(n0post=cfg.n0post_for(n0), max_iters=cfg.max_iters))
        err = np.array([st.z - s0 for st in out.states])
        per_trial.append(np.mean(np.abs(err) ** 2, axis=1))
        resid.append(err)
    V = np.array(per_trial)
    E = np.concatenate(resid, axis=1)
    se = se_run(SEParams(beta=cfg.beta, n0=n0, constellation=c), max_iters=cfg.max_iters,
                conv_tol=0.0).sigma2
    rows = []
    for t in range(V.shape[1]):
        m = float(V[:, t].mean())
        sd = float(V[:, t].std(ddof=1) / np.sqrt(V.shape[0])) if V.shape[0] > 1 else np.inf
        rows.append(DecouplingRow(t=t + 1, emp_var=m, stderr=sd, se_sigma2=float(se[t]),
                                  z_score=(m - se[t]) / sd if sd > 0 else np.inf,
                                  kurtosis_re=float(kurtosis(E[t].real)),
                                  kurtosis_im=float(kurtosis(E[t].imag)) if not c.is_real
                                  else float("nan")))
    return rows


__all__ = [
    "DETECTORS", "snr_db_to_n0", "n0_to_snr_db", "ChannelRealization", "gen_channel",
    "mmse_detect", "SimConfig", "TrialResult", "run_trial", "trial_rng", "SweepResult",
    "ser_sweep", "DecouplingRow", "decoupling_report",
]
