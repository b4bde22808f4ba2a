import math

import numpy as np
import pytest

from stickycs import protocols as P


def all_protocols():
    return [
        P.zero(),
        P.constant(1.0),
        P.constant(2.5),
        P.inverse_linear(1.0),
        P.weakly_singular(1.0, 0.5, 1.0),
        P.weakly_singular(0.7, 0.3, 2.0),
        P.smooth_bounded(lambda r: math.exp(-r * r), heavy_tailed=False),
    ]


def test_phi_eval_examples():
    assert P.constant(1.0).phi(3.7) == 1.0
    assert P.weakly_singular(1.0, 0.5, 1.0).phi(0.25) == pytest.approx(2.0, abs=1e-15)
    assert P.zero().phi(0.1) == 0.0
    assert P.weakly_singular(1.0, 0.5, 1.0).phi(0.0) == math.inf


def test_primitive_examples():
    assert P.constant(1.0).primitive(0.5) == pytest.approx(0.5, abs=1e-15)
    # phi = r^(-1/2) on (0,1) integrates to 2 sqrt(x)
    assert P.weakly_singular(1.0, 0.5, 1.0).primitive(0.25) == pytest.approx(1.0, abs=1e-14)
    for p in all_protocols():
        assert p.primitive(0.0) == 0.0


def test_floor_examples():
    assert P.constant(2.0).floor_at(5.0) == 2.0
    assert P.inverse_linear(1.0).floor_at(1.0) == pytest.approx(0.5)
    assert P.zero().floor_at(1.0) == 0.0
    with pytest.raises(P.ProtocolError):
        P.constant(1.0).floor_at(0.0)


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.name + str(p.params))
def test_primitive_odd(p):
    rng = np.random.default_rng(3)
    for x in rng.uniform(-20.0, 20.0, size=100):
        assert abs(p.primitive(x) + p.primitive(-x)) <= 1e-12


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.name + str(p.params))
def test_primitive_monotone(p):
    xs = np.linspace(-30.0, 30.0, 301)
    vals = p.primitive_np(xs)
    assert np.all(np.diff(vals) >= -1e-14)


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.name + str(p.params))
def test_primitive_derivative_matches_phi(p):
    if p.kind == P.KIND_ZERO:
        return
    rng = np.random.default_rng(7)
    xs = rng.uniform(0.05, 8.0, size=100)
    scale = p.phi(0.05)
    # quadrature-backed primitives cannot resolve a decayed tail by differencing
    floor = 1e-4 if (p.kind == P.KIND_CUSTOM and p.prim_fn is None) else 1e-8
    for x in xs:
        h = 1e-6 * max(1.0, abs(x))
        if p.kind == P.KIND_WEAKLY_SINGULAR:
            # keep the stencil away from the kink at R
            big_r = p.params[2]
            if abs(x - big_r) < 10 * h:
                continue
        if p.phi(x) < floor * scale:
            continue
        num = (p.primitive(x + h) - p.primitive(x - h)) / (2 * h)
        assert num == pytest.approx(p.phi(x), rel=1e-6)


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.name + str(p.params))
def test_second_primitive_matches_quadrature(p):
    from scipy.integrate import quad
    kinks = [p.params[2]] if p.kind == P.KIND_WEAKLY_SINGULAR else []
    for x in (0.3, 1.7, -2.4):
        pts = [k for k in kinks if k < abs(x)]
        want, _ = quad(p.primitive, 0.0, abs(x), limit=300,
                       epsabs=1e-12, epsrel=1e-12, points=pts or None)
        assert p.second_primitive(x) == pytest.approx(want, abs=1e-9)
        # even function
        assert p.second_primitive(-x) == pytest.approx(p.second_primitive(x), abs=1e-14)


def test_validation_rejects_bad_kernels():
    with pytest.raises(P.ProtocolError):
        P.smooth_bounded(lambda r: -1.0)
    with pytest.raises(P.ProtocolError):
        P.smooth_bounded(lambda r: r)  # increasing
    with pytest.raises(P.ProtocolError):
        P.weakly_singular(1.0, 1.5, 1.0)
    with pytest.raises(P.ProtocolError):
        P.constant(-2.0)


def test_weakly_singular_lower_bound_sampled():
    p = P.weakly_singular(0.9, 0.4, 1.5)
    r = np.geomspace(1e-6, 1.5 * (1 - 1e-9), 50)
    assert np.all(p.phi_np(r) >= 0.9 * r ** (-0.4) * (1 - 1e-12))


def test_custom_primitive_quadrature_path():
    p = P.smooth_bounded(lambda r: 1.0 / (1.0 + r * r), heavy_tailed=False)
    assert p.primitive(1.0) == pytest.approx(math.atan(1.0), abs=1e-10)


def test_from_config_roundtrip():
    p = P.from_config({"kind": "weakly_singular", "c": 1.0, "beta": 0.5, "r": 1.0})
    assert p.singular and p.heavy_tailed
    with pytest.raises(P.ProtocolError):
        P.from_config({"kind": "nope"})
