import numpy as np
import pytest

import stickycs as scs
from stickycs import envelope as E
from stickycs import initial as I
from stickycs import protocols as P
from stickycs.initial import Flux


def make_flux(ms, values, curved=None):
    ms = np.asarray(ms, dtype=float)
    values = np.asarray(values, dtype=float)
    if curved is None:
        curved = np.zeros(len(ms) - 1, dtype=bool)
    return Flux(ms, values, np.asarray(curved, dtype=bool))


def tent_flux():
    return make_flux([-0.5, 0.0, 0.5], [0.0, 1.0, 0.0])


def parabola_flux(n=41):
    ms = np.linspace(-0.5, 0.5, n)
    return make_flux(ms, ms ** 2, curved=np.ones(n - 1, dtype=bool))


def random_flux(rng, n):
    ms = np.sort(rng.uniform(-0.5, 0.5, size=n - 2))
    ms = np.concatenate([[-0.5], ms, [0.5]])
    ms = np.unique(ms)
    vals = rng.normal(size=len(ms))
    vals[0] = 0.0
    return make_flux(ms, vals)


def test_envelope_of_convex_flux_is_identity():
    flux = parabola_flux()
    env = E.lower_convex_envelope(flux)
    assert np.array_equal(env.hull_ms, flux.ms)
    assert np.array_equal(env.hull_values, flux.values)
    assert env.contact.all()


def test_envelope_of_tent_is_chord():
    env = E.lower_convex_envelope(tent_flux())
    assert np.array_equal(env.hull_ms, [-0.5, 0.5])
    assert np.array_equal(env.hull_values, [0.0, 0.0])


def test_envelope_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(60):
        flux = random_flux(rng, int(rng.integers(3, 60)))
        env = E.lower_convex_envelope(flux)
        bm, bv = E.brute_force_envelope(flux)
        assert np.array_equal(env.hull_ms, bm)
        assert np.array_equal(env.hull_values, bv)


def test_envelope_idempotent_dominated_convex():
    rng = np.random.default_rng(43)
    for _ in range(30):
        flux = random_flux(rng, 40)
        env = E.lower_convex_envelope(flux)
        assert np.all(env.values <= flux.values + 1e-12)
        slopes = env.slopes()
        assert np.all(np.diff(slopes) >= -1e-12)
        again = E.lower_convex_envelope(make_flux(env.hull_ms, env.hull_values))
        assert np.array_equal(again.hull_ms, env.hull_ms)
        assert np.array_equal(again.hull_values, env.hull_values)


def test_collinear_contact_pins_endpoints():
    # middle vertex sits on the envelope; the straddling vertices must then
    # be contact points and the envelope linear across
    flux = make_flux([-0.5, -0.25, 0.0, 0.25, 0.5],
                     [0.0, 0.4, 0.25, 0.65, 0.5])
    env = E.lower_convex_envelope(flux)
    assert env.contact[0] and env.contact[2] and env.contact[4]
    regions = E.classify_regions(flux, env)
    assert regions.sigma_minus == ((-0.5, 0.0), (0.0, 0.5))
    assert any("isolated contact" in n for n in regions.notes)
    # the envelope is linear across the whole interval
    assert E.l_interval(0.3, env) == (-0.5, 0.5)


def test_classify_tent():
    flux = tent_flux()
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    assert regions.sigma_minus == ((-0.5, 0.5),)
    assert regions.sigma_zero == ()
    assert regions.sigma_plus == ()
    assert regions.classify(0.2) == "minus"
    assert regions.classify(0.5) == "boundary"


def test_classify_strictly_convex():
    flux = parabola_flux()
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    assert regions.sigma_minus == () and regions.sigma_zero == ()
    assert regions.sigma_plus == ((-0.5, 0.5),)


def test_classify_flat_segment_in_convex_flux():
    # curved on [-1/2, 0] and [1/4, 1/2], genuinely flat on [0, 1/4]
    left = np.linspace(-0.5, 0.0, 21)
    right = np.linspace(0.25, 0.5, 11)
    ms = np.concatenate([left, right])
    vals = np.where(ms <= 0.0, ms ** 2, 0.0)
    vals = np.where(ms >= 0.25, (ms - 0.25) ** 2 + (ms - 0.25), 0.0) + np.where(ms <= 0.0, ms ** 2, 0.0)
    curved = np.ones(len(ms) - 1, dtype=bool)
    curved[20] = False  # the [0, 1/4] cell
    flux = make_flux(ms, vals, curved)
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    assert regions.sigma_minus == ()
    assert regions.sigma_zero == ((0.0, 0.25),)
    assert (-0.5, 0.0) in regions.sigma_plus and (0.25, 0.5) in regions.sigma_plus


def test_l_interval_examples():
    env = E.lower_convex_envelope(tent_flux())
    assert E.l_interval(0.3, env) == (-0.5, 0.5)
    penv = E.lower_convex_envelope(parabola_flux())
    assert E.l_interval(0.2, penv) == (0.2, 0.2)


def test_l_interval_spans_critical_and_supercritical():
    # flat envelope continues under a bump: one linearity interval covers a
    # critical piece and a supercritical component
    flux = make_flux([-0.5, -0.25, 0.0, 0.25, 0.5],
                     [0.0, 0.0, 0.1, 0.0, 0.2])
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    assert regions.sigma_minus == ((-0.25, 0.25),)
    assert (-0.5, -0.25) in regions.sigma_zero
    assert E.l_interval(-0.3, env) == (-0.5, 0.25)
    assert E.l_interval(-0.1, env) == (-0.5, 0.25)


def test_c_interval_examples():
    data = scs.initial_data(atoms=[(0.5, 0.0, 0.0), (0.5, 1.0, 0.0)])
    x0 = I.quantile_from_data(data)
    flux = I.build_flux(I.build_psi0(data, P.constant(1.0)), x0)
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    assert E.c_interval(-0.2, x0, regions) == (-0.5, 0.0)

    tent_data = scs.initial_data(blocks=[(0.5, 0.0, 0.5, 2.5, 2.0),
                                         (0.5, 0.5, 1.0, -2.0, -2.5)])
    tx0 = I.quantile_from_data(tent_data)
    tflux = I.build_flux(I.build_psi0(tent_data, P.constant(1.0)), tx0)
    tenv = E.lower_convex_envelope(tflux)
    tregions = E.classify_regions(tflux, tenv)
    assert E.c_interval(0.3, tx0, tregions) == (-0.5, 0.5)

    conv_data = scs.initial_data(blocks=[(1.0, 0.0, 1.0, 0.0, 2.0)])
    cx0 = I.quantile_from_data(conv_data)
    cflux = I.build_flux(I.build_psi0(conv_data, P.constant(1.0)), cx0)
    cenv = E.lower_convex_envelope(cflux)
    cregions = E.classify_regions(cflux, cenv)
    assert E.c_interval(0.3, cx0, cregions) == (0.3, 0.3)


def test_partition_property():
    rng = np.random.default_rng(9)
    flux = random_flux(rng, 30)
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    boundary = set(regions.boundary_labels)
    for m in rng.uniform(-0.5 + 1e-9, 0.5, size=400):
        kind = regions.classify(float(m))
        assert kind in ("plus", "zero", "minus", "boundary")
        assert (kind == "boundary") == (m in boundary)
    # interval bookkeeping: half-open pieces tile the domain
    pieces = sorted(list(regions.sigma_plus) + list(regions.sigma_zero)
                    + [(a, b) for a, b in regions.sigma_minus])
    assert pieces[0][0] == -0.5 and pieces[-1][1] == 0.5
    for (a0, b0), (a1, b1) in zip(pieces, pieces[1:]):
        assert b0 == a1


def test_l_consistency():
    rng = np.random.default_rng(10)
    for _ in range(10):
        flux = random_flux(rng, 25)
        env = E.lower_convex_envelope(flux)
        regions = E.classify_regions(flux, env)
        for m in rng.uniform(-0.5 + 1e-9, 0.5, size=50):
            m = float(m)
            if regions.classify(m) == "plus" or env.is_subcritical_at(m):
                continue
            lo, hi = E.l_interval(m, env)
            for a, b in list(regions.sigma_zero) + list(regions.sigma_minus):
                if min(hi, b) - max(lo, a) > 1e-12:  # overlaps the run
                    assert lo <= a + 1e-12 and b <= hi + 1e-12


def test_check_a4_tent_and_empty():
    flux = tent_flux()
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    ok, wit = E.check_a4(flux, regions)
    assert ok and wit == []
    penv = E.lower_convex_envelope(parabola_flux())
    pregions = E.classify_regions(parabola_flux(), penv)
    ok, wit = E.check_a4(parabola_flux(), pregions)
    assert ok  # vacuous: no supercritical components


def test_check_a4_concave_kink_witness():
    # near-contact vertex (within the contact tolerance) carrying a strictly
    # concave kink of the flux: local convexity fails at that boundary point
    eps_wiggle = 1e-9
    flux = make_flux(
        [-0.5, -0.25, 0.0, 0.25, 0.5],
        [0.0,
         0.5 + 3.0 * eps_wiggle,
         1.0 + 1.9 * eps_wiggle,
         1.5 + 0.1 * eps_wiggle,
         2.0])
    env = E.lower_convex_envelope(flux)
    regions = E.classify_regions(flux, env)
    assert regions.sigma_minus == ((-0.5, 0.0),)
    ok, wit = E.check_a4(flux, regions)
    assert not ok
    assert any(w[0] == 0.0 for w in wit)


def test_level_set_params_tent():
    flux = tent_flux()
    env = E.lower_convex_envelope(flux)
    lsp = E.level_set_params(flux, env, (-0.5, 0.5), (-0.25, 0.25))
    assert lsp.h0 == pytest.approx(0.5)
    assert lsp.h == pytest.approx(0.5)
    assert lsp.a_h == pytest.approx(-0.25)
    assert lsp.b_h == pytest.approx(0.25)
    assert lsp.c_h == pytest.approx(0.5)
    # grid-scan oracle: f > h strictly between a_h and b_h, f < h outside
    xs = np.linspace(0.0, 1.0, 10001)
    f = np.interp(-0.5 + xs, flux.ms, flux.values) - np.interp(-0.5 + xs, env.hull_ms, env.hull_values)
    ax = (lsp.a_h + 0.5)
    bx = (lsp.b_h + 0.5)
    inside = (xs > ax + 1e-4) & (xs < bx - 1e-4)
    outside = (xs < ax - 1e-4) | (xs > bx + 1e-4)
    assert np.all(f[inside] > lsp.h)
    assert np.all(f[outside] < lsp.h)
    # symmetry: rescaled crossings are mirror images
    assert (ax + bx) == pytest.approx(1.0, abs=1e-12)


def test_level_set_params_coverage_shrinks_h():
    flux = tent_flux()
    env = E.lower_convex_envelope(flux)
    wide = E.level_set_params(flux, env, (-0.5, 0.5), (-0.4, 0.4))
    assert wide.h < 0.5
    assert wide.a_h <= -0.4 and wide.b_h >= 0.4


def test_level_set_params_errors():
    flux = tent_flux()
    env = E.lower_convex_envelope(flux)
    with pytest.raises(E.RegionError):
        E.level_set_params(flux, env, (-0.5, 0.5), (-0.6, 0.0))
    convex = parabola_flux()
    cenv = E.lower_convex_envelope(convex)
    with pytest.raises(E.RegionError):
        E.level_set_params(convex, cenv, (-0.5, 0.5), (-0.25, 0.25))
