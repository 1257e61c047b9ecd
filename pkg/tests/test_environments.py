import math

import numpy as np
import pytest

from rwdre.environments import (
    EnvState,
    LayerSpec,
    evolve,
    evolve_pair,
    make_frozen_engine,
    make_glauber_engine,
    make_layered_engine,
    make_resampling_engine,
    snapshots,
    stack_decay_bound,
)
from rwdre.estimators import estimate_env_decay
from rwdre.lattice import Configuration, TorusLattice
from rwdre.rng import stream

LAT = TorusLattice(1, 8)


def zeros(n_layers=1, lat=LAT):
    return Configuration.constant(lat, 0, n_layers)


def ones(n_layers=1, lat=LAT):
    return Configuration.constant(lat, 1, n_layers)


# -- constructors -----------------------------------------------------------------


def test_engine_validation():
    with pytest.raises(ValueError):
        make_resampling_engine(0.0)
    with pytest.raises(ValueError):
        make_glauber_engine(-0.1)
    with pytest.raises(ValueError):
        LayerSpec.power_law(0.0, 10)
    with pytest.raises(ValueError):
        LayerSpec((1.0, -1.0), (0.5, 0.5))


def test_power_law_spec():
    spec = LayerSpec.power_law(3.0, 50)
    assert spec.n_layers == 50
    assert spec.rates[0] == 1.0 and spec.rates[9] == pytest.approx(0.1)
    assert sum(spec.weights) + spec.tail_mass == pytest.approx(1.0, abs=1e-14)
    assert 0 < spec.tail_mass < 1e-5
    assert spec.tail_exponent == -3.0


def test_exact_decay_closed_forms():
    t = np.array([0.0, 0.5, 2.0])
    eng, _ = make_resampling_engine(2.0)
    assert np.allclose(eng.exact_decay(t), np.exp(-2.0 * t))
    eng, _ = make_frozen_engine()
    assert np.allclose(eng.exact_decay(t), 1.0)
    eng, _ = make_glauber_engine(0.0, 1.5)
    assert np.allclose(eng.exact_decay(t), np.exp(-1.5 * t))
    eng, _ = make_glauber_engine(0.3)
    assert eng.exact_decay(t) is None


def test_stack_bound_has_power_law_order():
    # B(2t)/B(t) -> 2^-gamma; the 50-layer truncation holds it to 15% up to t = 20
    spec = LayerSpec.power_law(3.0, 50)
    for t in (10.0, 20.0):
        ratio = stack_decay_bound(spec, 2 * t).bound / stack_decay_bound(spec, t).bound
        assert ratio == pytest.approx(2.0**-3, rel=0.15)
    with pytest.raises(ValueError):
        stack_decay_bound(spec, -1.0)


def test_evolve_edge_cases():
    eng, kernel = make_resampling_engine(1.0)
    eta = zeros()
    out = evolve(eng, eta, 0.0, stream(0))
    assert out == eta and out is not eta
    with pytest.raises(ValueError):
        evolve(eng, eta, -1.0, stream(0))
    with pytest.raises(ValueError):
        evolve_pair(kernel, eta, ones(), -1.0, stream(0))
    with pytest.raises(ValueError):
        EnvState(eng, zeros(2))


def test_frozen_environment_never_changes():
    eng, kernel = make_frozen_engine()
    eta = Configuration.random(LAT, stream(1))
    a, b = evolve_pair(kernel, eta, ones(), 50.0, stream(2))
    assert a == eta and b == ones()


# -- marginal Markov property -----------------------------------------------------


@pytest.mark.parametrize("factory", [lambda: make_resampling_engine(1.0), lambda: make_glauber_engine(0.2)])
def test_coupled_marginals_match_single_chains(factory):
    eng, kernel = factory()
    n, t = 4000, 0.7
    pair = np.array([[a.states[0, 0], b.states[0, 0]] for a, b in
                     (evolve_pair(kernel, zeros(), ones(), t, stream(3, r, "pair")) for r in range(n))])
    solo = np.array([[evolve(eng, zeros(), t, stream(3, r, "a")).states[0, 0],
                      evolve(eng, ones(), t, stream(3, r, "b")).states[0, 0]] for r in range(n)])
    se = np.hypot(pair.std(0, ddof=1), solo.std(0, ddof=1)) / math.sqrt(n)
    assert np.all(np.abs(pair.mean(0) - solo.mean(0)) <= 4 * se)


def test_resampling_marginal_matches_closed_form():
    eng, _ = make_resampling_engine(1.0)
    t, n = 1.0, 20000
    grid = [t]
    occ = np.array([snapshots(eng, zeros(), None, grid, stream(4, r))[0][0, 0, 0] for r in range(n)])
    expected = 0.5 * (1 - math.exp(-t))
    assert abs(occ.mean() - expected) <= 4 * math.sqrt(expected * (1 - expected) / n)


# -- coalescence and monotonicity ---------------------------------------------------


def test_product_coupling_coalesces_for_good():
    eng, kernel = make_layered_engine(LayerSpec.power_law(2.0, 4))
    grid = np.linspace(0.1, 10, 40)
    for r in range(50):
        eta = Configuration.random(LAT, stream(5, r, "a"), 4)
        xi = Configuration.random(LAT, stream(5, r, "b"), 4)
        rec1, rec2 = snapshots(eng, eta, xi, grid, stream(5, r))
        differ = rec1 != rec2
        # a coupled site never separates again
        assert not np.any(differ[1:] & ~differ[:-1])


def test_glauber_coupling_is_monotone():
    eng, kernel = make_glauber_engine(0.4)
    grid = np.linspace(0.2, 5, 25)
    for r in range(50):
        eta = Configuration.random(LAT, stream(6, r))
        rec1, rec2 = snapshots(eng, eta, ones(), grid, stream(6, r, "run"))
        assert np.all(rec1 <= rec2)


def test_glauber_example_decay():
    eng, kernel = make_glauber_engine(0.2)
    curve = estimate_env_decay(kernel, None, [20.0], 2000, "extremal", lattice=LAT, seed=7)
    assert curve.estimate[0] < 0.05


def test_glauber_at_infinite_temperature_is_resampling():
    eng, kernel = make_glauber_engine(0.0)
    curve = estimate_env_decay(kernel, None, [0.5, 1.0, 2.0], 4000, "single-site", lattice=LAT, seed=8)
    assert np.all(np.abs(curve.estimate - np.exp(-curve.grid)) <= 4 * curve.se)


def test_layers_are_independent():
    spec = LayerSpec((1.0, 0.5), (0.6, 0.4))
    eng, kernel = make_layered_engine(spec)
    n, t = 20000, 1.0
    alive = np.empty((n, 2), dtype=bool)
    for r in range(n):
        rec1, rec2 = snapshots(eng, zeros(2), ones(2), [t], stream(9, r))
        alive[r] = rec1[0, :, 0] != rec2[0, :, 0]
    p = np.exp(-np.array(spec.rates) * t)
    assert np.all(np.abs(alive.mean(0) - p) <= 4 * np.sqrt(p * (1 - p) / n))
    both = (alive[:, 0] & alive[:, 1]).mean()
    q = p[0] * p[1]
    assert abs(both - q) <= 4 * math.sqrt(q * (1 - q) / n)


def test_layered_decay_matches_closed_form():
    spec = LayerSpec.power_law(3.0, 6)
    eng, kernel = make_layered_engine(spec)
    curve = estimate_env_decay(kernel, None, [0.5, 2.0, 5.0], 4000, "extremal", lattice=LAT, seed=10)
    exact = eng.exact_decay(curve.grid)
    assert np.all(np.abs(curve.estimate - exact) <= 4 * curve.se)
    assert np.all(curve.estimate <= stack_decay_bound(spec, curve.grid).bound + 3 * curve.se)
