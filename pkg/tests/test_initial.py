import numpy as np
import pytest

import stickycs as scs
from stickycs import initial as I
from stickycs import protocols as P


def test_cdf_single_atom():
    data = scs.initial_data(atoms=[(1.0, 0.0, 0.0)])
    cdf = I.build_cdf(data)
    assert cdf.eval(-0.1) == -0.5
    assert cdf.eval(0.0) == 0.5  # right-continuous: the atom is included
    assert cdf.eval(1.0) == 0.5


def test_cdf_two_atoms():
    data = scs.initial_data(atoms=[(0.5, 0.0, 0.0), (0.5, 1.0, 0.0)])
    cdf = I.build_cdf(data)
    assert cdf.eval(-1e-9) == -0.5
    assert cdf.eval(0.0) == 0.0
    assert cdf.eval(0.5) == 0.0
    assert cdf.eval(1.0) == 0.5


def test_cdf_uniform_block():
    data = scs.initial_data(blocks=[(1.0, 0.0, 1.0, 0.0, 0.0)])
    cdf = I.build_cdf(data)
    for x in (0.0, 0.25, 0.7, 1.0):
        assert cdf.eval(x) == pytest.approx(x - 0.5, abs=1e-15)


def test_inverse_examples():
    uniform = I.quantile_from_data(scs.initial_data(blocks=[(1.0, 0.0, 1.0, 0.0, 0.0)]))
    for m in (-0.49, -0.2, 0.0, 0.31, 0.5):
        assert float(uniform.eval(m)) == pytest.approx(m + 0.5, abs=1e-15)

    atom = I.quantile_from_data(scs.initial_data(atoms=[(1.0, 0.0, 0.0)]))
    assert float(atom.eval(-0.3)) == 0.0
    assert float(atom.eval(0.5)) == 0.0

    two = I.quantile_from_data(
        scs.initial_data(atoms=[(0.5, 0.0, 0.0), (0.5, 1.0, 0.0)]))
    assert float(two.eval(-0.2)) == 0.0
    assert float(two.eval(0.0)) == 0.0  # left-continuous at the jump
    assert float(two.eval(0.2)) == 1.0
    assert float(two.eval(0.5)) == 1.0


def test_roundtrip_random_labels():
    data = scs.initial_data(
        atoms=[(0.25, -1.0, 0.0), (0.25, 2.0, 0.0)],
        blocks=[(0.5, 0.0, 1.0, 0.0, 0.0)])
    x0 = I.quantile_from_data(data)
    x0b = I.generalized_inverse(I.build_cdf(data))
    rng = np.random.default_rng(11)
    ms = rng.uniform(-0.5 + 1e-12, 0.5, size=1000)
    assert np.array_equal(np.asarray(x0.eval(ms)), np.asarray(x0b.eval(ms)))
    # inverse relation: M(X(m)) >= m with equality off the atoms
    cdf = I.build_cdf(data)
    xs = np.asarray(x0.eval(ms))
    assert np.all(np.asarray(cdf.eval(xs)) >= ms - 1e-12)


def test_psi0_examples():
    two = scs.initial_data(atoms=[(0.5, 0.0, 0.0), (0.5, 1.0, 0.0)])
    psi = I.build_psi0(two, P.zero())
    assert psi.at_atom(0) == 0.0 and psi.at_atom(1) == 0.0

    psi1 = I.build_psi0(two, P.constant(1.0))
    assert psi1.at_atom(0) == pytest.approx(-0.5, abs=1e-15)
    assert psi1.at_atom(1) == pytest.approx(0.5, abs=1e-15)

    sym = scs.initial_data(atoms=[(0.5, -1.0, 0.0), (0.5, 1.0, 0.0)])
    conv = I.build_psi0(sym, P.inverse_linear(1.0)).conv(0.0)
    assert float(conv) == pytest.approx(0.0, abs=1e-15)


def test_psi0_undefined_off_support():
    two = scs.initial_data(atoms=[(0.5, 0.0, 0.0), (0.5, 1.0, 0.0)])
    psi = I.build_psi0(two, P.zero())
    with pytest.raises(I.InitialDataError):
        psi.eval(0.25)


def test_flux_constant_integrand():
    data = scs.initial_data(atoms=[(1.0, 0.3, 1.7)])
    x0 = I.quantile_from_data(data)
    flux = I.build_flux(I.build_psi0(data, P.zero()), x0)
    for m in (-0.5, -0.1, 0.5):
        assert float(flux.eval(m)) == pytest.approx(1.7 * (m + 0.5), abs=1e-14)


def test_flux_two_atoms():
    data = scs.initial_data(atoms=[(0.5, 0.0, 0.0), (0.5, 1.0, 0.0)])
    x0 = I.quantile_from_data(data)
    flux = I.build_flux(I.build_psi0(data, P.constant(1.0)), x0)
    assert np.allclose(flux.ms, [-0.5, 0.0, 0.5])
    assert np.allclose(flux.values, [0.0, -0.25, 0.0], atol=1e-15)
    assert not flux.curved.any()


def test_flux_accuracy_on_curved_integrand():
    # uniform block with a velocity ramp: quadratic flux, exact antiderivative
    data = scs.initial_data(blocks=[(1.0, 0.0, 1.0, 0.0, 2.0)])
    x0 = I.quantile_from_data(data)
    flux = I.build_flux(I.build_psi0(data, P.zero()), x0)
    ms = np.linspace(-0.5, 0.5, 1001)
    exact = (ms + 0.5) ** 2  # integral of u = 2x with x = m + 1/2
    assert np.max(np.abs(flux.eval(ms) - exact)) <= 1e-9
    assert flux.curved.all()


def test_discretize_uniform_block():
    data = scs.initial_data(blocks=[(1.0, 0.0, 1.0, 0.0, 0.0)])
    disc = I.discretize(data, P.zero(), 2)
    assert np.array_equal(disc.theta, [-0.5, 0.0, 0.5])
    assert np.array_equal(disc.masses, [0.5, 0.5])
    assert np.allclose(disc.x0, [0.5, 1.0], atol=0)
    assert np.allclose(disc.psi0, 0.0, atol=1e-12)
    assert np.allclose(disc.v0, 0.0, atol=1e-12)


def test_discretize_single_particle():
    data = scs.initial_data(blocks=[(1.0, 0.0, 1.0, 1.0, 1.0)])
    p = P.constant(1.0)
    disc = I.discretize(data, p, 1)
    x0 = I.quantile_from_data(data)
    assert disc.n == 1
    assert disc.x0[0] == float(x0.eval(0.5))
    assert disc.v0[0] == pytest.approx(disc.psi0[0] - p.primitive(0.0), abs=1e-14)


def test_discretize_snap_union():
    data = scs.initial_data(blocks=[(1.0, 0.0, 1.0, 0.0, 0.0)])
    disc = I.discretize(data, P.zero(), 2, snap=[0.1, 0.1])
    assert np.array_equal(disc.theta, [-0.5, 0.0, 0.1, 0.5])
    with pytest.raises(I.InitialDataError):
        I.discretize(data, P.zero(), 2, snap=[0.5])


def test_atomic_discretization_reproduces_atoms():
    rng = np.random.default_rng(5)
    masses = rng.uniform(0.5, 1.5, 7)
    masses /= masses.sum()
    xs = np.cumsum(rng.uniform(0.1, 1.0, 7))
    vs = rng.uniform(-1, 1, 7)
    data = scs.initial_data(atoms=list(zip(masses, xs, vs)))
    p = P.inverse_linear(1.0)
    disc = I.discretize_atomic(data, p)
    assert np.array_equal(disc.x0, xs)
    assert np.allclose(disc.masses, masses, rtol=0, atol=1e-15)
    assert np.allclose(disc.v0, vs, rtol=0, atol=1e-13)
    # the flux of the particle data equals the measure's flux at the grid
    x0 = I.quantile_from_data(data)
    flux = I.build_flux(I.build_psi0(data, p), x0)
    a_n = I.flux_from_slopes(disc.theta, disc.psi0)
    assert np.allclose(a_n.eval(disc.theta), flux.eval(disc.theta), atol=1e-13)


def test_psi_slope_identity():
    data = scs.initial_data(blocks=[(0.6, 0.0, 0.5, 1.0, 0.2), (0.4, 0.7, 1.0, -0.3, 0.4)])
    p = P.inverse_linear(1.0)
    x0 = I.quantile_from_data(data)
    flux = I.build_flux(I.build_psi0(data, p), x0)
    disc = I.discretize(data, p, 37, flux=flux, x0=x0)
    lhs = disc.psi0 * disc.masses
    rhs = np.diff(flux.eval(disc.theta))
    assert np.max(np.abs(lhs - rhs)) <= 1e-14


def test_refinement_halves_l1_error():
    data = scs.initial_data(blocks=[(1.0, 0.0, 1.0, 0.0, 0.0)])
    p = P.zero()
    x0 = I.quantile_from_data(data)
    errs = []
    for n in (8, 16, 32, 64):
        disc = I.discretize(data, p, n, x0=x0)
        xn = I.quantile_from_particles(disc.theta, disc.x0)
        errs.append(I.wasserstein1(xn, x0))
    for a, b in zip(errs, errs[1:]):
        assert b <= a / 2.0 * 4.0  # halving, within the stated factor-4 slack
        assert b < a


def test_wasserstein_examples():
    a = I.quantile_from_particles(np.array([-0.5, 0.5]), np.array([0.0]))
    b = I.quantile_from_particles(np.array([-0.5, 0.5]), np.array([1.0]))
    assert I.wasserstein1(a, a) == 0.0
    assert I.wasserstein1(a, b) == pytest.approx(1.0, abs=1e-15)
    two = I.quantile_from_particles(np.array([-0.5, 0.0, 0.5]), np.array([0.0, 1.0]))
    mid = I.quantile_from_particles(np.array([-0.5, 0.5]), np.array([0.5]))
    assert I.wasserstein1(two, mid) == pytest.approx(0.5, abs=1e-15)


def test_sup_distance():
    two = I.quantile_from_particles(np.array([-0.5, 0.0, 0.5]), np.array([0.0, 1.0]))
    mid = I.quantile_from_particles(np.array([-0.5, 0.5]), np.array([0.5]))
    assert I.sup_distance(two, mid) == pytest.approx(0.5, abs=1e-15)
    assert I.sup_distance(two, two) == 0.0


def test_mass_validation():
    with pytest.raises(I.InitialDataError):
        scs.initial_data(atoms=[(0.5, 0.0, 0.0)])
    with pytest.raises(I.InitialDataError):
        scs.initial_data(atoms=[(-1.0, 0.0, 0.0), (2.0, 1.0, 0.0)])
    with pytest.raises(I.InitialDataError):
        scs.initial_data(atoms=[(0.5, 0.0, 0.0), (0.5, 0.0, 1.0)])  # same spot, new v
    # coincident atoms with equal velocities merge
    d = scs.initial_data(atoms=[(0.5, 0.0, 1.0), (0.5, 0.0, 1.0)])
    assert len(d.atoms) == 1 and d.atoms[0].mass == 1.0
