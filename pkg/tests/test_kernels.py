import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from predprey.kernels import Kernel, KernelTriple, check_assumptions


def test_gaussian_default_values():
    g = Kernel.gaussian()
    assert g(0.0) == pytest.approx(1 / np.sqrt(np.pi), abs=0, rel=1e-15)
    assert g.d1(0.0) == 0.0
    assert g.d2(0.0) == pytest.approx(-2 / np.sqrt(np.pi), rel=1e-15)
    assert g.antider(0.0) == 0.0
    # total mass of the default kernel is one
    assert g.antider(50.0) - g.antider(-50.0) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("amp,width", [(1.0, 1.0), (0.3, 0.5), (2.0, 3.0)])
def test_gaussian_derivatives_match_finite_differences(amp, width):
    g = Kernel.gaussian(amp, width)
    x = np.linspace(-4, 4, 41)
    h = 1e-5
    assert np.allclose(g.d1(x), (g(x + h) - g(x - h)) / (2 * h), atol=1e-8)
    assert np.allclose(g.d2(x), (g.d1(x + h) - g.d1(x - h)) / (2 * h), atol=1e-8)
    for b in (0.3, 1.7, -2.5):
        ref, _ = quad(g, 0.0, b)
        assert g.antider(b) == pytest.approx(ref, abs=1e-12)


def test_tabulated_reproduces_gaussian():
    g = Kernel.gaussian()
    xs = np.linspace(-6, 6, 601)
    t = Kernel.tabulated(xs, g(xs))
    probe = np.linspace(-5.5, 5.5, 37)
    assert np.allclose(t(probe), g(probe), atol=1e-7)
    assert np.allclose(t.d1(probe), g.d1(probe), atol=1e-5)
    assert np.allclose(t.d2(probe), g.d2(probe), atol=1e-3)
    assert np.allclose(t.antider(probe), g.antider(probe), atol=1e-7)


def test_tabulated_is_zero_outside_table():
    xs = np.linspace(-1, 1, 11)
    t = Kernel.tabulated(xs, 1 - xs**2)
    assert t(3.0) == 0.0 and t.d1(-3.0) == 0.0 and t.d2(3.0) == 0.0
    # antiderivative is constant beyond the table end
    assert t.antider(5.0) == pytest.approx(t.antider(1.0))
    assert t.antider(1.0) == pytest.approx(2 / 3, rel=1e-12)


def test_zero_kernel():
    z = KernelTriple.zero()
    for _, k in z.items():
        assert np.all(k(np.linspace(-3, 3, 7)) == 0)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_argument_rejected(bad):
    with pytest.raises(ValueError):
        Kernel.gaussian()(bad)


def test_tabulated_validation():
    with pytest.raises(ValueError):
        Kernel.tabulated([0, 2, 1, 3], [1, 1, 1, 1])
    with pytest.raises(ValueError):
        Kernel.tabulated([1, 2, 3, 4], [1, 1, 1, 1])
    with pytest.raises(ValueError):
        Kernel.gaussian(width=0.0)


def test_dict_round_trip():
    k = KernelTriple(Kernel.gaussian(0.5, 2.0), Kernel.tabulated([-1, -0.5, 0, 0.5, 1], [0, 0.5, 1, 0.5, 0]), Kernel.gaussian())
    back = KernelTriple.from_dict(k.to_dict())
    x = np.linspace(-1.2, 1.2, 13)
    for (_, a), (_, b) in zip(k.items(), back.items()):
        assert np.array_equal(a(x), b(x))


def test_scaled():
    g = Kernel.gaussian().scaled(2.0)
    assert g(0.3) == pytest.approx(2 * Kernel.gaussian()(0.3), rel=1e-15)


def test_assumptions_gaussian():
    rep = check_assumptions(KernelTriple.gaussian(), 4.0, 801)
    assert rep.ok
    lo, hi = rep.concavity_range
    # Gaussian second derivative changes sign at +-1/sqrt(2)
    assert lo == pytest.approx(-1 / np.sqrt(2), abs=0.01)
    assert hi == pytest.approx(1 / np.sqrt(2), abs=0.01)


def test_assumptions_detect_bad_kernel():
    xs = np.linspace(-2, 2, 21)
    growing = Kernel.tabulated(xs, xs**2)
    rep = check_assumptions(KernelTriple(growing, Kernel.gaussian(), Kernel.gaussian()), 2.0, 101)
    assert not rep.ok
    assert not rep.kernels["s_rho"].nonincreasing_radial
    assert rep.kernels["s_eta"].ok
    asym = Kernel.tabulated(xs, np.exp(-((xs - 0.3) ** 2)))
    assert not check_assumptions(KernelTriple(asym, asym, asym), 2.0, 101).kernels["k"].symmetric


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20), st.floats(0.1, 5), st.floats(0.1, 5))
def test_gaussian_even_and_odd_parts(x, amp, width):
    g = Kernel.gaussian(amp, width)
    assert g(x) == g(-x)
    assert g.d1(x) == -g.d1(-x)
    assert g.antider(x) == -g.antider(-x)
