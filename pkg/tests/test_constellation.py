import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lama.constellation import (STANDARD_NAMES, Constellation, ConstellationError,
                                load_constellation, make_standard, moments, product_alphabet,
                                real_part_alphabet, resolve, rotation_order)

R2 = np.sqrt(2.0)


def test_qpsk_points_and_priors():
    c = make_standard("QPSK")
    want = np.array([-1 - 1j, -1 + 1j, 1 - 1j, 1 + 1j]) / R2
    np.testing.assert_allclose(c.points, want, atol=1e-15)
    np.testing.assert_allclose(c.priors, 0.25)
    assert c.field == "complex"


def test_real_bpsk():
    c = make_standard("BPSK", "real")
    np.testing.assert_array_equal(c.points, [-1, 1])
    np.testing.assert_allclose(c.priors, 0.5)
    assert c.is_real


def test_16qam_direct_sums():
    c = make_standard("16-QAM")
    lv = np.array([-3, -1, 1, 3])
    grid = (lv[:, None] + 1j * lv[None, :]).ravel() / np.sqrt(10)
    # same set, by sorted comparison
    key = lambda z: np.lexsort((np.round(z.imag, 12), np.round(z.real, 12)))  # noqa: E731
    np.testing.assert_allclose(c.points, grid[key(grid)], atol=1e-15)
    assert abs(np.sum(c.priors * c.points)) < 1e-15
    assert abs(np.sum(c.priors * np.abs(c.points) ** 2) - 1) < 1e-12


@pytest.mark.parametrize("name", STANDARD_NAMES)
def test_standard_normalization(name):
    c = make_standard(name)
    assert abs(np.sum(c.priors) - 1) <= 1e-12
    assert abs(np.sum(c.priors * c.points)) <= 1e-12
    assert abs(np.sum(c.priors * np.abs(c.points) ** 2) - 1) <= 1e-12
    if c.is_real:
        assert np.all(c.points.imag == 0)


@pytest.mark.parametrize("name", STANDARD_NAMES)
def test_ordering_is_lexicographic(name):
    # coordinates equal to 12 decimals count as ties, broken by the imaginary part
    p = make_standard(name).points
    order = np.lexsort((np.round(p.imag, 12), np.round(p.real, 12)))
    np.testing.assert_array_equal(order, np.arange(p.size))


def test_moments_examples():
    m, v, e = moments(make_standard("QPSK"))
    assert abs(m) < 1e-15 and v == pytest.approx(1.0) and e == pytest.approx(1.0)
    b = Constellation.from_points([-1, 1], [0.9, 0.1], "real")
    m, v, e = moments(b)
    assert m == pytest.approx(-0.8)
    assert v == pytest.approx(0.36)
    assert e == pytest.approx(1.0)
    m, v, e = moments(make_standard("8-PSK"))
    assert abs(m) < 1e-15 and v == pytest.approx(1.0) and e == pytest.approx(1.0)


def test_real_part_of_qpsk_is_scaled_bpsk():
    ra = real_part_alphabet(make_standard("QPSK"))
    np.testing.assert_allclose(ra.points, np.array([-1, 1]) / R2, atol=1e-15)
    np.testing.assert_allclose(ra.priors, 0.5)
    assert ra.es == pytest.approx(0.5)
    bp = make_standard("BPSK", "real").scaled(1 / R2)
    np.testing.assert_allclose(ra.points, bp.points, atol=1e-15)
    np.testing.assert_array_equal(ra.priors, bp.priors)


def test_real_part_of_16qam():
    ra = real_part_alphabet(make_standard("16-QAM"))
    np.testing.assert_allclose(ra.points.real, np.array([-3, -1, 1, 3]) / np.sqrt(10), atol=1e-15)
    np.testing.assert_allclose(ra.priors, 0.25)
    assert ra.es == pytest.approx(0.5)


def test_psk_not_separable():
    with pytest.raises(ConstellationError):
        real_part_alphabet(make_standard("8-PSK"))


@pytest.mark.parametrize("name", ["QPSK", "16-QAM", "64-QAM", "256-QAM", "BPSK"])
def test_separable_reconstruction(name):
    c = make_standard(name)
    if name == "BPSK":
        assert not c.separable
        return
    assert c.separable
    back = product_alphabet(real_part_alphabet(c))
    np.testing.assert_allclose(back.points, c.points, atol=1e-15)
    np.testing.assert_allclose(back.priors, c.priors, atol=1e-16)


def test_nonuniform_product_is_separable():
    ra = Constellation.from_points([-1, 1], [0.3, 0.7], "real")
    c = product_alphabet(ra)
    assert c.separable
    np.testing.assert_allclose(real_part_alphabet(c).priors, [0.3, 0.7])


def test_correlated_priors_not_separable():
    pts = np.array([-1 - 1j, -1 + 1j, 1 - 1j, 1 + 1j])
    c = Constellation.from_points(pts, [0.4, 0.1, 0.1, 0.4])
    assert not c.separable


@pytest.mark.parametrize("bad", [
    dict(name="9-QAM"), dict(name="16-QAM", field="real"), dict(name="4-PAM", field="complex"),
    dict(name="8-PSK", field="real"), dict(name="QPSK", field="real"),
])
def test_make_standard_errors(bad):
    with pytest.raises(ConstellationError):
        make_standard(**bad)


def test_complex_bpsk_is_real_pair():
    c = make_standard("BPSK")
    assert c.field == "complex"
    np.testing.assert_array_equal(c.points, [-1, 1])


def test_from_points_validation():
    with pytest.raises(ConstellationError):
        Constellation.from_points([1, 1])
    with pytest.raises(ConstellationError):
        Constellation.from_points([1, -1], [0.5, 0.6])
    with pytest.raises(ConstellationError):
        Constellation.from_points([1, -1], [1.5, -0.5])
    with pytest.raises(ConstellationError):
        Constellation.from_points([1j, -1], field="real")


def test_arrays_read_only():
    c = make_standard("QPSK")
    with pytest.raises(ValueError):
        c.points[0] = 0


def test_load_file(tmp_path):
    f = tmp_path / "tri.txt"
    f.write_text("# three points\n1 0 0.3333333\n-0.5 0.8660254 0.3333333\n"
                 "-0.5 -0.8660254 0.3333334\n")
    c = load_constellation(f)
    assert c.size == 3
    assert abs(c.priors.sum() - 1) < 1e-15
    assert rotation_order(c) == 3
    assert resolve(str(f)).size == 3


def test_load_file_errors(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("1 0\n")
    with pytest.raises(ConstellationError, match="bad.txt:1"):
        load_constellation(f)
    f.write_text("1 0 0.5\n-1 0 0.4\n")
    with pytest.raises(ConstellationError):
        load_constellation(f)


def test_rotation_orders():
    assert rotation_order(make_standard("8-PSK")) == 8
    assert rotation_order(make_standard("16-QAM")) == 4
    assert rotation_order(make_standard("BPSK")) == 2
    assert rotation_order(make_standard("4-PAM")) == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6, unique=True),
       st.floats(0.1, 5))
def test_scaling_law(vals, s):
    pts = np.round(np.array(vals), 6)
    if np.unique(pts).size != pts.size:
        return
    c = Constellation.from_points(pts, field="real")
    cs = c.scaled(s)
    assert cs.es == pytest.approx(s * s * c.es)
    assert cs.variance == pytest.approx(s * s * c.variance, abs=1e-12)
