import numpy as np
import pytest

import stickycs as scs
from stickycs import analysis as analysis_mod
from stickycs.cli import (build_pipeline, bundled_scenario_path, load_scenario,
                          run_simulations)

# trajectories accumulated across the suite; the conservation criterion
# audits every one of them
TRAJECTORY_REGISTRY: list = []


def register(label, traj):
    TRAJECTORY_REGISTRY.append((label, traj))
    return traj


@pytest.fixture(scope="session")
def bundle_cache():
    cache = {}

    def get(name, ns=None):
        key = (name, ns)
        if key not in cache:
            scn = load_scenario(bundled_scenario_path(name))
            pipe = build_pipeline(scn)
            trajs = run_simulations(pipe, ns=list(ns) if ns else None)
            for n, tr in trajs.items():
                register(f"{name}/N{n}", tr)
            cache[key] = (scn, pipe, trajs)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def two_body(bundle_cache):
    return bundle_cache("two-body-pressureless")


@pytest.fixture(scope="session")
def tent(bundle_cache):
    return bundle_cache("tent-supercritical")


@pytest.fixture(scope="session")
def composite(bundle_cache):
    return bundle_cache("composite-multiregion")


@pytest.fixture(scope="session")
def subcritical(bundle_cache):
    return bundle_cache("subcritical-convex")


@pytest.fixture(scope="session")
def critical_bounded(bundle_cache):
    return bundle_cache("critical-bounded")


@pytest.fixture(scope="session")
def critical_heavy_tail(bundle_cache):
    return bundle_cache("critical-heavy-tail")


@pytest.fixture(scope="session")
def critical_weak_singular(bundle_cache):
    return bundle_cache("critical-weak-singular")


def random_atomic_scenario(rng, n_max=20):
    """Random sticky-particle initial data: distinct positions, bounded
    velocities, masses normalized to one."""
    n = int(rng.integers(2, n_max + 1))
    masses = rng.uniform(0.5, 1.5, size=n)
    masses /= masses.sum()
    gaps = rng.uniform(0.02, 1.0, size=n)
    xs = np.cumsum(gaps)
    vs = rng.uniform(-1.0, 1.0, size=n)
    return scs.initial_data(atoms=list(zip(masses, xs, vs)))


@pytest.fixture(scope="session")
def random_suite():
    """The 200-scenario randomized sticky-dynamics suite (bounded kernels,
    horizon 10) shared by the psi-conservation, barycentric, and
    conservation criteria."""
    rng = np.random.default_rng(20240811)
    kernels = [scs.protocols.constant(1.0), scs.protocols.inverse_linear(1.0)]
    out = []
    times = np.linspace(0.0, 10.0, 11)
    for i in range(200):
        data = random_atomic_scenario(rng)
        p = kernels[i % 2]
        disc = scs.discretize_atomic(data, p)
        traj = scs.simulate(disc, 10.0, sample_times=times)
        register(f"random/{i}", traj)
        out.append((disc, traj, scs.audit(traj)))
    return out
