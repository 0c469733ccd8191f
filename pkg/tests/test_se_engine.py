import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from lama import denoiser as dn
from lama.constellation import make_standard, real_part_alphabet
from lama.quadrature import QuadratureError, QuadratureSpec
from lama.se_engine import (SEParams, achievable_rate, awgn_required_sigma2, awgn_ser,
                            fixed_points, g_function, n0_to_snr_db, phi, psi, psi_phi,
                            required_snr_db, se_init, se_run, se_step, snr_db_to_n0)

QPSK = make_standard("QPSK")
BPSK_R = make_standard("BPSK", "real")
QAM16 = make_standard("16-QAM")
PSK8 = make_standard("8-PSK")


def gauss_avg(f):
    """E[f(Z)] for standard normal Z by adaptive quadrature."""
    v, _ = integrate.quad(lambda z: f(z) * norm.pdf(z), -12, 12, epsabs=1e-14, epsrel=1e-13,
                          limit=400)
    return v


def antipodal_psi_phi(s, g, amp=1.0):
    """MSE and mean variance for the real pair +-amp, true variance s, postulated g."""
    k = amp / g
    mse = gauss_avg(lambda z: (np.tanh(k * (amp + np.sqrt(s) * z)) - 1.0) ** 2) * amp ** 2
    var = gauss_avg(lambda z: 1.0 - np.tanh(k * (amp + np.sqrt(s) * z)) ** 2) * amp ** 2
    return mse, var


def qpsk_oracle(s2, g2):
    # QPSK = two independent real pairs +-1/sqrt(2), each with half the variance
    m, v = antipodal_psi_phi(s2 / 2, g2 / 2, 1 / np.sqrt(2))
    return 2 * m, 2 * v


def mc_psi_phi(s2, g2, c, n, seed):
    rng = np.random.default_rng(seed)
    sq, var = [], []
    for _ in range(n // 500_000):
        idx = rng.integers(c.size, size=500_000)
        s = c.points[idx]
        y = s + np.sqrt(s2 / 2) * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
        ev = dn.evaluate(y, g2, c)
        sq.append(np.abs(ev.mean - s) ** 2)
        var.append(ev.variance)
    sq, var = np.concatenate(sq), np.concatenate(var)
    se = lambda x: x.std() / np.sqrt(x.size)  # noqa: E731
    return sq.mean(), se(sq), var.mean(), se(var)


@pytest.mark.parametrize("s2,g2", [(0.5, 0.5), (0.3, 0.6)])
def test_qpsk_against_monte_carlo(s2, g2):
    ps, ph = psi_phi(s2, g2, QPSK)
    m, sm, v, sv = mc_psi_phi(s2, g2, QPSK, 10_000_000, seed=5)
    assert abs(ps - m) <= 3 * sm
    assert abs(ph - v) <= 3 * sv


@pytest.mark.parametrize("s2,g2", [(0.5, 0.5), (0.3, 0.6), (0.05, 0.02), (2.0, 0.7), (1e-3, 1e-3)])
def test_qpsk_against_tanh_integral(s2, g2):
    ps, ph = psi_phi(s2, g2, QPSK)
    m, v = qpsk_oracle(s2, g2)
    assert ps == pytest.approx(m, rel=1e-9, abs=1e-14)
    assert ph == pytest.approx(v, rel=1e-9, abs=1e-14)


def test_16qam_2d_against_monte_carlo():
    # exercises the full 2-D quadrature path by disabling the 1-D reduction
    val = psi_phi(0.2, 0.2, QAM16, reduce=False)[0]
    m, sm, _, _ = mc_psi_phi(0.2, 0.2, QAM16, 2_000_000, seed=1)
    assert abs(val - m) <= 3 * sm


def test_psk_against_monte_carlo():
    val = psi(0.1, 0.1, PSK8)
    m, sm, _, _ = mc_psi_phi(0.1, 0.1, PSK8, 2_000_000, seed=2)
    assert abs(val - m) <= 3 * sm


def test_psi_limits():
    assert psi(1e8, 1e8, QPSK) == pytest.approx(1.0, abs=1e-3)
    assert psi(1e-8, 1e-8, QPSK) <= 1e-8
    assert phi(0.4, 1e9, QPSK) == pytest.approx(1.0, abs=1e-6)
    assert psi_phi(0.0, 0.0, QPSK) == (0.0, 0.0)


GRID = np.geomspace(1e-4, 1e3, 50)


@pytest.mark.parametrize("name", ["BPSK", "QPSK", "16-QAM", "64-QAM", "8-PSK", "4-PAM"])
def test_gap_property_and_matched_collapse(name):
    c = make_standard(name)
    q = QuadratureSpec()
    for x in GRID:
        p, f = psi_phi(x, x, c, q)
        assert p <= x * c.variance / (c.variance + x) * (1 + 1e-9) + 1e-15
        assert p < x
        assert abs(p - f) <= 1e-10 * max(p, 1e-3)


@pytest.mark.parametrize("c", [QPSK, QAM16], ids=lambda c: c.name)
def test_separability_reduction(c):
    ra = real_part_alphabet(c)
    rng = np.random.default_rng(0)
    s2s = np.geomspace(0.02, 10, 50)
    # postulated variances within a factor 3 of the true ones
    g2s = s2s * np.exp(rng.uniform(-np.log(3), np.log(3), size=50))
    big = QuadratureSpec(max_nodes=20_000_000)  # the unreduced 2-D path needs fine grids
    for s2, g2 in zip(s2s[::5], g2s[::5]):  # the acceptance suite runs all 50
        full = psi_phi(s2, g2, c, big, reduce=False)
        half = psi_phi(s2 / 2, g2 / 2, ra)
        assert full[0] == pytest.approx(2 * half[0], rel=1e-9, abs=1e-14)
        assert full[1] == pytest.approx(2 * half[1], rel=1e-9, abs=1e-14)


def test_gamma_zero_rejected():
    with pytest.raises(ValueError):
        psi(0.1, 0.0, QPSK)


def test_quadrature_budget_failure_is_explicit():
    q = QuadratureSpec(max_nodes=100)
    with pytest.raises(QuadratureError) as err:
        psi(0.01, 0.01, PSK8, q)
    assert "max_nodes" in str(err.value) or "tolerance" in str(err.value)


def test_se_init_and_tiny_beta():
    p = SEParams(beta=1e-12, n0=0.1, constellation=QPSK, n0post=0.3)
    s = se_init(p)
    assert s.sigma2 == pytest.approx(0.1 + 1e-12) and s.gamma2 == pytest.approx(0.3 + 1e-12)
    nxt = se_step(s, p)
    assert abs(nxt.sigma2 - 0.1) <= 1e-10
    assert abs(nxt.gamma2 - 0.3) <= 1e-10


def test_se_step_against_monte_carlo():
    p = SEParams(beta=0.5, n0=0.1, constellation=QPSK)
    s1 = se_init(p)
    assert s1.sigma2 == pytest.approx(0.6)
    s2 = se_step(s1, p)
    m, sm, _, _ = mc_psi_phi(0.6, 0.6, QPSK, 4_000_000, seed=9)
    assert abs(s2.sigma2 - (0.1 + 0.5 * m)) <= 3 * 0.5 * sm
    assert s2.gamma2 == s2.sigma2


def test_matched_trace_has_equal_columns_and_is_monotone():
    tr = se_run(SEParams(beta=1.2, n0=0.08, constellation=QAM16), max_iters=60)
    np.testing.assert_array_equal(tr.sigma2, tr.gamma2)
    assert np.all(np.diff(tr.sigma2) <= 1e-15)
    assert tr.to_csv().splitlines()[0] == "t,sigma2,gamma2"


def test_mismatch_trace_matches_oracle():
    p = SEParams(beta=0.8, n0=0.1, constellation=QPSK, n0post=0.25)
    tr = se_run(p, max_iters=6, conv_tol=0)
    s, g = 0.1 + 0.8, 0.25 + 0.8
    for st_ in tr.states[1:]:
        m, v = qpsk_oracle(s, g)
        s, g = 0.1 + 0.8 * m, 0.25 + 0.8 * v
        assert st_.sigma2 == pytest.approx(s, rel=1e-9)
        assert st_.gamma2 == pytest.approx(g, rel=1e-9)


def test_geometric_convergence_below_mrt():
    tr = se_run(SEParams(beta=0.5, n0=0.05, constellation=QPSK), max_iters=200, conv_tol=1e-14)
    s = tr.sigma2
    err = s[:-1] - s[-1]
    err = err[err > 1e-11]
    ratios = err[1:] / err[:-1]
    assert tr.converged
    assert np.all(ratios < 1)
    assert ratios.max() < 0.9


def test_noiseless_stall_above_ert():
    tr = se_run(SEParams(beta=2.5, n0=0.0, constellation=QPSK), max_iters=300)
    assert tr.final.sigma2 > 0.1


def test_noiseless_recovery_below_ert():
    tr = se_run(SEParams(beta=1.0, n0=0.0, constellation=QPSK), max_iters=200, conv_tol=0)
    assert tr.sigma2.min() < 1e-10


def test_g_function_composition():
    p = SEParams(beta=1.0, n0=0.1, constellation=QPSK)
    m, _ = qpsk_oracle(0.2, 0.2)
    assert g_function(0.2, p) == pytest.approx(0.1 + m - 0.2, rel=1e-9)
    assert g_function(1e6, p) < -1e5
    with pytest.raises(ValueError):
        g_function(0.2, SEParams(beta=1.0, n0=0.1, constellation=QPSK, n0post=0.2))


def test_fixed_points_counts():
    for n0 in (1e-3, 0.05, 0.3):
        assert fixed_points(SEParams(beta=0.5, n0=n0, constellation=QPSK)).count == 1
    beta = 0.5 * (1.4752327 + 2.0854363)
    rep = fixed_points(SEParams(beta=beta, n0=0.1, constellation=QPSK))
    assert rep.count == 3
    assert rep.roots == sorted(rep.roots)
    p = SEParams(beta=beta, n0=0.1, constellation=QPSK)
    assert all(abs(g_function(r, p)) <= 1e-9 for r in rep.roots)
    assert rep.eta == pytest.approx(0.1 / rep.largest)
    assert rep.smallest < rep.largest


def test_noiseless_root_at_zero():
    rep = fixed_points(SEParams(beta=1.0, n0=0.0, constellation=QPSK))
    assert rep.roots[0] == 0.0


def test_low_noise_slope():
    rep = fixed_points(SEParams(beta=1.0, n0=1e-6, constellation=QPSK))
    assert 1.0 <= rep.largest / 1e-6 <= 1.05


def test_bpsk_tanh_fixed_point():
    p = SEParams(beta=0.6, n0=0.2, constellation=BPSK_R)
    s = se_run(p, max_iters=500, conv_tol=1e-15).final.sigma2
    mse = gauss_avg(lambda z: 1.0 - np.tanh(1.0 / s + z / np.sqrt(s)))
    assert abs(s - (0.2 + 0.6 * mse)) <= 1e-9


def test_awgn_ser_closed_forms():
    assert awgn_ser(1.0, BPSK_R) == pytest.approx(norm.sf(1.0), rel=1e-12)
    for s2 in (0.05, 0.3, 1.0):
        q = norm.sf(1 / np.sqrt(s2))
        assert awgn_ser(s2, QPSK) == pytest.approx(1 - (1 - q) ** 2, rel=1e-12)


def test_awgn_ser_16qam_monte_carlo():
    cf = awgn_ser(0.1, QAM16)
    mc, se = awgn_ser(0.1, QAM16, "monte_carlo", n_samples=1_000_000,
                      rng=np.random.default_rng(4), return_stderr=True)
    assert abs(cf - mc) <= 3 * se


def test_awgn_ser_errors():
    with pytest.raises(ValueError):
        awgn_ser(0.1, PSK8, "closed_form")
    with pytest.raises(ValueError):
        awgn_ser(0.0, QPSK)


def test_rate_limits_and_oracle():
    assert achievable_rate(1e-4, QPSK) == pytest.approx(2.0, abs=1e-9)
    assert achievable_rate(1e8, QPSK) <= 1e-3
    # Monte-Carlo oracle at sigma2 = 1
    rng = np.random.default_rng(8)
    n = 2_000_000
    idx = rng.integers(4, size=n)
    y = QPSK.points[idx] + np.sqrt(0.5) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    w = dn.weights(y, 1.0, QPSK)
    info = 2.0 + np.log2(w[np.arange(n), idx])
    assert abs(achievable_rate(1.0, QPSK) - info.mean()) <= 3 * info.std() / np.sqrt(n)


def test_rate_of_separable_is_twice_real():
    ra = real_part_alphabet(QAM16)
    assert achievable_rate(0.3, QAM16) == pytest.approx(2 * achievable_rate(0.15, ra), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(-20, 40), st.floats(0.05, 4))
def test_snr_conversion_roundtrip(snr, beta):
    n0 = snr_db_to_n0(snr, beta)
    assert n0 == pytest.approx(beta / 10 ** (snr / 10))
    assert n0_to_snr_db(n0, beta) == pytest.approx(snr, abs=1e-9)


def test_required_snr():
    s = awgn_required_sigma2(QPSK, 1e-3)
    assert awgn_ser(s, QPSK) == pytest.approx(1e-3, rel=1e-9)
    assert required_snr_db(0.1, QPSK, 1, 1e-3) is None  # matched filter alone never gets there
    snr = required_snr_db(0.1, QPSK, 3, 1e-3)
    p = SEParams(beta=0.1, n0=float(snr_db_to_n0(snr, 0.1)), constellation=QPSK)
    assert awgn_ser(se_run(p, 3, 0).final.sigma2, QPSK) == pytest.approx(1e-3, rel=1e-4)


def test_params_validation():
    with pytest.raises(ValueError):
        SEParams(beta=0, n0=0.1, constellation=QPSK)
    with pytest.raises(ValueError):
        SEParams(beta=1, n0=-0.1, constellation=QPSK)
    with pytest.raises(ValueError):
        se_run(SEParams(beta=1, n0=0.1, constellation=QPSK), max_iters=0)
