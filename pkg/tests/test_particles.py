import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predprey.density import Density1D, Grid1D, PseudoInverse, pseudo_inverse
from predprey.kernels import Kernel, KernelTriple
from predprey.particles import (
    OrderingError,
    ParticleState,
    _Forces,
    _pressure_velocity,
    integrate_rk23,
    particle_rhs,
    steady_detect,
)

GAUSS = KernelTriple.gaussian()


def state(xr, xe, alpha=0.5, d=0.3, m_rho=1.0, m_eta=1.0):
    return ParticleState(PseudoInverse(np.asarray(xr, float), m_rho), PseudoInverse(np.asarray(xe, float), m_eta), alpha, d)


def random_state(seed, n=30, m=25, alpha=0.7, d=0.2):
    rng = np.random.default_rng(seed)
    xr = np.cumsum(rng.uniform(0.01, 0.2, n)) - 2.0
    xe = np.cumsum(rng.uniform(0.01, 0.3, m)) - 1.0
    return state(xr, xe, alpha, d, 0.8, 0.8)


def test_ordering_enforced():
    with pytest.raises(OrderingError, match="particles 1 and 2"):
        state([0.0, 1.0, 1.0], [0.0, 1.0])


def test_pressure_hand_case():
    # three particles, h = 1/2, gaps 1 and 0.5: densities 0.5 and 1
    v = _pressure_velocity(np.array([0.0, 1.0, 1.5]), 1.0, 0.4)
    c = 0.4 / (2 * 0.5)
    assert np.allclose(v, [c * (0 - 0.25), c * (0.25 - 1.0), c * (1.0 - 0)])


def test_pressure_spreads_a_cloud():
    x = np.linspace(-1, 1, 11)
    v = _pressure_velocity(x, 1.0, 0.5)
    assert v[0] < 0 and v[-1] > 0
    assert np.allclose(v[1:-1], 0.0)


def test_fast_path_matches_generic():
    s = random_state(4)
    f = _Forces(s, GAUSS)
    assert f.gaussian
    y = s.packed()
    assert np.allclose(f._gaussian(y), f._generic(y), rtol=1e-12, atol=1e-9)


def test_tabulated_kernels_use_generic_path():
    xs = np.linspace(-8, 8, 1601)
    g = Kernel.gaussian()
    tab = Kernel.tabulated(xs, g(xs))
    s = random_state(5)
    v_tab = np.concatenate(particle_rhs(s, KernelTriple(tab, tab, tab)))
    v_gauss = np.concatenate(particle_rhs(s, GAUSS))
    assert not _Forces(s, KernelTriple(tab, tab, tab)).gaussian
    assert np.allclose(v_tab, v_gauss, atol=1e-5)


def test_cross_signs():
    # predators move towards prey on their right; prey move away
    s = state(np.linspace(-0.5, 0.5, 5), np.linspace(1.5, 2.5, 5), alpha=0.5, d=0.0)
    zero = Kernel.zero()
    v_r, v_e = particle_rhs(s, KernelTriple(zero, zero, Kernel.gaussian()))
    assert np.all(v_r > 0) and np.all(v_e > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_joint_centre_velocity_vanishes(seed):
    s = random_state(seed)
    v_r, v_e = particle_rhs(s, GAUSS)
    assert abs(s.alpha * v_r.mean() - v_e.mean()) <= 1e-13 * max(1.0, np.abs(v_r).max(), np.abs(v_e).max())


def test_first_moment_combination_conserved_for_unequal_masses():
    # with masses M_rho != M_eta the invariant is alpha*M_rho*cm_rho - M_eta*cm_eta
    rng = np.random.default_rng(11)
    s = state(np.sort(rng.uniform(-2, 1, 20)), np.sort(rng.uniform(-1, 2, 17)), 0.6, 0.1, 1.0, 0.7)
    v_r, v_e = particle_rhs(s, GAUSS)
    rate = s.alpha * 1.0 * v_r.mean() - 0.7 * v_e.mean()
    assert abs(rate) <= 1e-12 * np.abs(v_r).max()
    assert abs(s.alpha * v_r.mean() - v_e.mean()) > 1e-3


def test_even_state_gives_odd_velocities():
    x = np.array([-1.0, -0.4, 0.0, 0.4, 1.0])
    v_r, v_e = particle_rhs(state(x, 2 * x), GAUSS)
    assert np.allclose(v_r, -v_r[::-1], atol=1e-14) and np.allclose(v_e, -v_e[::-1], atol=1e-14)


def test_integrator_reports_and_conserves():
    g = Grid1D.from_bounds(-4, 4, 80)
    rho = Density1D.from_segments(g, [(-0.7, 0.7, 10 / 14)])
    eta = Density1D.from_segments(g, [(-0.2, 1.0, 1 / 1.2)])
    s = ParticleState(pseudo_inverse(rho, 41), pseudo_inverse(eta, 41), 0.3, 0.4)
    seen = []
    tr = integrate_rk23(s, GAUSS, 2.0, report_dt=0.5, observer=lambda t, st_, dg: seen.append(t))
    assert tr.times == [0.0, 0.5, 1.0, 1.5, 2.0] == seen
    c0 = tr.diagnostics[0]["cm_alpha"]
    for dgn in tr.diagnostics:
        assert dgn["mass_rho"] == s.X_rho.mass == pytest.approx(1.0, abs=1e-14)
        assert abs(dgn["cm_alpha"] - c0) <= 1e-12
    assert np.all(np.diff(tr.final.X_rho.positions) > 0)
    assert tr.position_matrix().shape == (5, 82)


def test_integrator_error_shrinks_with_tolerance():
    s = random_state(7, n=15, m=15, d=0.05)
    ref = integrate_rk23(s, GAUSS, 0.5, rtol=1e-11, atol=1e-13).final.packed()
    errs = [np.max(np.abs(integrate_rk23(s, GAUSS, 0.5, rtol=r, atol=r * 1e-3).final.packed() - ref)) for r in (1e-4, 1e-6, 1e-8)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-6


def test_integrator_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        integrate_rk23(random_state(1), GAUSS, 1.0, rtol=0.0)


def test_steady_detect():
    t = np.arange(0, 20.5, 0.5)
    pos = np.where(t[:, None] < 6.0, (6.0 - t[:, None]) * np.ones((1, 3)), 0.0)
    assert steady_detect(t, pos, 5.0, 1e-4) == 6.0
    pos2 = pos + 1e-3 * t[:, None]
    assert steady_detect(t, pos2, 5.0, 1e-4) is None
    # a larger scale tolerates the slow drift
    assert steady_detect(t, pos2, 5.0, 1e-4, scale=100.0) == 6.0
    assert steady_detect(t[:5], pos[:5], 5.0, 1e-4) is None


def test_zero_field_keeps_positions():
    s = random_state(2)
    tr = integrate_rk23(ParticleState(s.X_rho, s.X_eta, s.alpha, 0.0), KernelTriple.zero(), 3.0, report_dt=1.0)
    assert np.array_equal(tr.final.packed(), s.packed())


def test_far_species_decouple():
    x = np.array([-0.3, -0.1, 0.2, 0.4])
    s = state(x - 40.0, x + 40.0, alpha=0.5, d=0.0)
    v_r, v_e = particle_rhs(s, GAUSS)
    no_cross = KernelTriple(Kernel.gaussian(), Kernel.gaussian(), Kernel.zero())
    w_r, w_e = particle_rhs(s, no_cross)
    assert np.allclose(v_r, w_r, atol=1e-12) and np.allclose(v_e, w_e, atol=1e-12)
    # within one species the forces are equal and opposite
    assert abs(v_r.sum()) <= 1e-15 and abs(v_e.sum()) <= 1e-15


def test_two_particles_keep_their_centre():
    s = ParticleState(PseudoInverse(np.array([-0.7, 0.4])), PseudoInverse(np.array([5.0, 9.0])), 0.5, 0.0)
    k = KernelTriple(Kernel.gaussian(), Kernel.zero(), Kernel.zero())
    v_r, _ = particle_rhs(s, k)
    assert v_r[0] == -v_r[1]
    tr = integrate_rk23(s, k, 4.0, report_dt=1.0)
    gaps = [np.diff(x)[0] for x in tr.rho]
    assert np.all(np.diff(gaps) < 0)
    assert abs(tr.final.X_rho.positions.mean() - (-0.15)) <= 1e-15


def _rk4(f, y, t_final, n_steps):
    h = t_final / n_steps
    for _ in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def test_two_particle_cluster_matches_rk4_reference():
    s = ParticleState(PseudoInverse(np.array([-1.0, 0.5])), PseudoInverse(np.array([4.0, 6.0])), 0.5, 0.0)
    k = KernelTriple(Kernel.gaussian(), Kernel.zero(), Kernel.zero())
    f = _Forces(s, k)
    ref = _rk4(f, s.packed(), 3.0, 20_000)
    got = integrate_rk23(s, k, 3.0, rtol=1e-8, atol=1e-10).final.packed()
    assert np.max(np.abs(got - ref)) <= 1e-6


def test_cm_alpha_drift_at_default_tolerance():
    g = Grid1D.from_bounds(-4, 4, 80)
    rho = Density1D.from_segments(g, [(-0.7, 0.7, 10 / 14)])
    eta = Density1D.from_segments(g, [(0.5, 1.9, 10 / 14)])
    s = ParticleState(pseudo_inverse(rho, 41), pseudo_inverse(eta, 41), 1.0, 0.2)
    tr = integrate_rk23(s, GAUSS, 3.0, report_dt=0.5)
    c = np.array([dg["cm_alpha"] for dg in tr.diagnostics])
    assert np.max(np.abs(c - c[0])) / 3.0 <= 1e-5


def test_mirrored_state_gives_exactly_negated_velocities():
    rng = np.random.default_rng(12)
    xr, xe = np.sort(rng.normal(0, 1, 60)), np.sort(rng.normal(0.5, 2, 45))
    v_r, v_e = particle_rhs(state(xr, xe, 0.3, 0.2, 1.0, 0.7), GAUSS)
    w_r, w_e = particle_rhs(state(-xr[::-1], -xe[::-1], 0.3, 0.2, 1.0, 0.7), GAUSS)
    assert np.array_equal(w_r, -v_r[::-1]) and np.array_equal(w_e, -v_e[::-1])


def test_mirrored_trajectory_is_exact():
    s = random_state(3, n=25, m=20, d=0.2)
    mirror = ParticleState(
        PseudoInverse(-s.X_rho.positions[::-1], s.X_rho.mass),
        PseudoInverse(-s.X_eta.positions[::-1], s.X_eta.mass),
        s.alpha,
        s.d,
    )
    a = integrate_rk23(s, GAUSS, 2.0).final
    b = integrate_rk23(mirror, GAUSS, 2.0).final
    assert np.array_equal(b.X_rho.positions, -a.X_rho.positions[::-1])
    assert np.array_equal(b.X_eta.positions, -a.X_eta.positions[::-1])
