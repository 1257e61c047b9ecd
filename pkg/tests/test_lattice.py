import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwdre.lattice import (
    Configuration,
    LocalFunction,
    RateFunction,
    SiteMetric,
    TorusLattice,
    WindowBudgetError,
    lipschitz_constants,
    rate_distance,
    rate_norms,
    shift,
    site_distance,
    triple_norm,
)

def biased():
    return RateFunction({+1: LocalFunction.from_callable([0], lambda b: 1 + b[0]), -1: 1.0})


# -- torus and shifts --------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(2, 5), st.data())
def test_shift_is_a_group_action(d, L, data):
    lat = TorusLattice(d, L)
    x = data.draw(st.lists(st.integers(-7, 7), min_size=d, max_size=d))
    y = data.draw(st.lists(st.integers(-7, 7), min_size=d, max_size=d))
    seed = data.draw(st.integers(0, 2**32 - 1))
    eta = Configuration.random(lat, np.random.default_rng(seed))
    assert shift(shift(eta, x), y) == shift(eta, np.add(x, y))
    assert shift(eta, [0] * d) == eta
    assert shift(shift(eta, x), np.negative(x)) == eta


def test_shift_convention():
    lat = TorusLattice(1, 5)
    eta = Configuration.constant(lat).with_site(1, 1)
    # (theta_x eta)(y) = eta(y - x)
    assert shift(eta, 2).at(3)[0] == 1
    assert shift(eta, 2).at(1)[0] == 0


def test_index_coords_roundtrip():
    lat = TorusLattice(2, 4)
    idx = np.arange(lat.n_sites)
    assert np.array_equal(lat.index(lat.coords(idx)), idx)
    assert lat.index([5, -1]) == lat.index([1, 3])
    assert TorusLattice(1, 4).index(-1) == 3


def test_bad_lattice_and_configuration():
    with pytest.raises(ValueError):
        TorusLattice(0, 3)
    lat = TorusLattice(1, 3)
    with pytest.raises(ValueError):
        Configuration(lat, np.array([0, 2, 0]))
    with pytest.raises(ValueError):
        Configuration(lat, np.zeros(4))


# -- site metric ---------------------------------------------------------------


def test_site_distance_discrete():
    assert site_distance(0, 1) == 1.0
    assert site_distance(1, 1) == 0.0


def test_site_distance_stack():
    m = SiteMetric("weighted", (0.5, 0.3, 0.2))
    assert site_distance([1, 0, 1], [0, 0, 0], m) == pytest.approx(0.7)


def test_site_distance_kind_mismatch():
    with pytest.raises(TypeError):
        site_distance([0, 1], [0, 1, 1], SiteMetric("weighted", (0.5, 0.3, 0.2)))
    with pytest.raises(TypeError):
        site_distance([0, 1], [0, 1], SiteMetric())


def test_metric_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        SiteMetric("weighted", (0.5, 0.3))
    SiteMetric("weighted", (0.5, 0.3), tail_mass=0.2)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_stack_distance_triangle_inequality(data):
    n = data.draw(st.integers(1, 5))
    raw = sorted(data.draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n, unique=True)),
                 reverse=True)
    w = tuple(v / sum(raw) for v in raw)
    m = SiteMetric("weighted", w, tail_mass=max(0.0, 1.0 - sum(w)))
    a, b, c = (data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)) for _ in range(3))
    assert site_distance(a, c, m) <= site_distance(a, b, m) + site_distance(b, c, m) + 1e-12
    assert site_distance(a, b, m) == site_distance(b, a, m)
    assert (site_distance(a, b, m) == 0) == (a == b)


# -- local functions and triple norm ----------------------------------------------


def test_triple_norm_examples():
    assert triple_norm(LocalFunction.site(0)) == 1.0
    f = LocalFunction.from_callable([0, 1], lambda b: b[0] * b[1])
    assert triple_norm(f) == 2.0
    f = LocalFunction.from_callable([0, 1, 2], lambda b: b[0] + 0.5 * b[1] - 2 * b[2])
    assert lipschitz_constants(f) == {(0,): 1.0, (1,): 0.5, (2,): 2.0}
    assert triple_norm(LocalFunction.constant(3.0)) == 0.0


def test_triple_norm_weighted_stack():
    m = SiteMetric("weighted", (0.6, 0.4))
    f = LocalFunction.from_callable([((0,), 0), ((0,), 1)], lambda b: b[0] + b[1])
    # flipping layer 1 changes f by 1 at distance 0.4
    assert triple_norm(f, m) == pytest.approx(2.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.integers(0, 2**32 - 1))
def test_lipschitz_bound_holds_for_random_pairs(table, seed):
    f = LocalFunction((((0,), 0), ((1,), 0), ((2,), 0)), np.array(table))
    delta = lipschitz_constants(f)
    rng = np.random.default_rng(seed)
    lat = TorusLattice(1, 5)
    a = Configuration.random(lat, rng)
    b = Configuration.random(lat, rng)
    bound = sum(delta.get((x,), 0.0) * site_distance(a.at(x), b.at(x)) for x in range(3))
    assert abs(f(a) - f(b)) <= bound + 1e-9


def test_declared_lipschitz_constants_validated():
    with pytest.raises(ValueError, match="below the exact"):
        LocalFunction((((0,), 0),), np.array([0.0, 2.0]), declared={(0,): 1.0})
    LocalFunction((((0,), 0),), np.array([0.0, 2.0]), declared={(0,): 2.0})


def test_window_budget_enforced():
    with pytest.raises(WindowBudgetError):
        LocalFunction.from_callable(list(range(25)), lambda b: 0.0)


def test_shifted_function():
    lat = TorusLattice(1, 6)
    eta = Configuration.constant(lat).with_site(2, 1)
    f = LocalFunction.site(0)
    assert f.shifted(-2)(eta) == 1.0
    assert f(eta, at=2) == 1.0


# -- rate norms ------------------------------------------------------------------


def test_rate_norms_biased_example():
    n = rate_norms(biased())
    assert n.lam == {(-1,): 1.0, (1,): 2.0}
    assert n.norm1 == 3.0
    assert n.second_moment == 3.0
    assert n.norm2 == pytest.approx(math.sqrt(3.0))
    assert n.triple == 1.0
    assert n.site_weights == {(0,): 1.0}
    assert n.spread_rate == 3.0
    assert n.gamma_plus[0] == 2.0 and n.gamma_minus[0] == -1.0


def test_rate_norms_two_dimensional():
    a = RateFunction.constant({(1, 0): 1.0, (-1, 0): 1.0, (0, 1): 0.5, (0, -1): 0.5})
    n = a.norms()
    assert n.norm1 == 3.0
    assert n.triple == 0.0
    assert a.environment_independent
    assert np.allclose(n.gamma_plus, [1.0, 0.5])
    assert n.spread_rate == 2.0


def test_rate_distance():
    a = biased()
    b = RateFunction({+1: LocalFunction.from_callable([0], lambda b: 1.1 + b[0]), -1: 1.0})
    assert rate_distance(a, b) == pytest.approx(0.1)
    c = RateFunction({+1: LocalFunction.from_callable([0], lambda b: 1 + b[0]), -1: 1.0, 2: 0.25})
    assert rate_distance(a, c) == pytest.approx(0.25)
    assert rate_distance(a, a) == 0.0


def test_rate_function_rejects_bad_input():
    with pytest.raises(ValueError):
        RateFunction({0: 1.0})
    with pytest.raises(ValueError):
        RateFunction({1: -1.0})
    with pytest.raises(ValueError):
        RateFunction({1: 1.0, (1, 0): 1.0})


def test_rate_evaluation_and_drift():
    a = biased()
    lat = TorusLattice(1, 3)
    eta = Configuration.constant(lat).with_site(0, 1)
    assert a(eta, 1) == 2.0
    assert a(eta, 1, at=1) == 1.0
    assert np.allclose(a.drift_table(), [[0.0, 1.0]])
