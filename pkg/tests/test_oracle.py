import math

import numpy as np
import pytest
from scipy import linalg, sparse

from rwdre.environments import LayerSpec, make_frozen_engine, make_glauber_engine, make_layered_engine, make_resampling_engine
from rwdre.lattice import Configuration, LocalFunction, RateFunction, TorusLattice, shift
from rwdre.oracle import (
    GeneratorMatrix,
    ReducibleGeneratorError,
    StateIndex,
    build_env_generator,
    build_ep_generator,
    exact_ep_semigroup,
    exact_speed,
    export_matrix_market,
    function_vector,
    moment_ode_diffusion,
    stationary_distribution,
    walker_generators,
)

# frozen from the brute-force construction below (dense generator, linear solve,
# corrector formula for D); the moment ODE is checked against them
V_BIASED_L3 = 0.4450017001020062
D_BIASED_L3 = 2.5675082


def biased(eps=1.0):
    return RateFunction({+1: LocalFunction.from_callable([0], lambda b: 1 + eps * b[0]), -1: 1.0})


# -- brute force ----------------------------------------------------------------------------


def brute_env(engine, lat):
    """Dense environment generator built configuration by configuration."""
    index = StateIndex(lat, engine.n_layers)
    n = index.size
    G = np.zeros((n, n))
    for i in range(n):
        eta = index.decode(i)
        for layer in range(engine.n_layers):
            for x in range(lat.n_sites):
                flipped = eta.copy()
                flipped.states[layer, x] ^= 1
                if engine.kind == "product":
                    rate = engine.layer_rates[layer] / 2
                else:
                    s = 2 * eta.states[0].astype(int) - 1
                    h = s[(x + 1) % lat.L] + s[(x - 1) % lat.L]
                    p_up = math.exp(engine.beta * h) / (math.exp(engine.beta * h) + math.exp(-engine.beta * h))
                    rate = engine.rate * (1 - p_up if eta.states[0, x] else p_up)
                j = index.encode(flipped)
                G[i, j] += rate
                G[i, i] -= rate
    return G


def brute_walker(alpha, lat, n_layers=1):
    """Dense walker part and per-state drift, from the environment seen by the walker."""
    index = StateIndex(lat, n_layers)
    n = index.size
    A = {z: np.zeros((n, n)) for z in alpha.rates}
    for i in range(n):
        eta = index.decode(i)
        for z in alpha.rates:
            j = index.encode(shift(eta, tuple(-v for v in z)))
            A[z][i, j] += alpha(eta, z)
    return A


def brute_solution(engine, alpha, lat):
    """Stationary law, speed and corrector-formula D of the environment process."""
    Genv = brute_env(engine, lat)
    A = brute_walker(alpha, lat, engine.n_layers)
    G = Genv.copy()
    for Az in A.values():
        G += Az - np.diag(Az.sum(axis=1))
    n = len(G)
    M = np.vstack([G.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(M, rhs, rcond=None)[0]
    b = sum(z[0] * Az.sum(axis=1) for z, Az in A.items())
    v = float(pi @ b)
    # corrector: G g = -(b - v), pi g = 0
    K = np.vstack([G, pi])
    g = np.linalg.lstsq(K, np.concatenate([-(b - v), [0.0]]), rcond=None)[0]
    dg = g[None, :] - g[:, None]
    D = float(pi @ (Genv * dg**2).sum(axis=1))  # diagonal terms vanish: dg[i, i] = 0
    for z, Az in A.items():
        D += float(pi @ (Az * (z[0] + dg) ** 2).sum(axis=1))
    return G, pi, v, D


# -- generators -----------------------------------------------------------------------------------


def test_two_state_generator():
    eng, _ = make_resampling_engine(1.0)
    G = build_env_generator(eng, TorusLattice(1, 1))
    assert np.allclose(G.toarray(), [[-0.5, 0.5], [0.5, -0.5]])


@pytest.mark.parametrize("factory", [
    lambda: make_resampling_engine(1.3),
    lambda: make_glauber_engine(0.4, 0.7),
    lambda: make_layered_engine(LayerSpec((1.0, 0.25), (0.6, 0.4))),
])
def test_env_generator_matches_brute_force(factory):
    eng, _ = factory()
    lat = TorusLattice(1, 3)
    assert np.allclose(build_env_generator(eng, lat).toarray(), brute_env(eng, lat), atol=1e-14)


def test_ep_generator_matches_brute_force():
    eng, _ = make_glauber_engine(0.3)
    lat = TorusLattice(1, 4)
    G = build_ep_generator(build_env_generator(eng, lat), biased()).toarray()
    Gb, *_ = brute_solution(eng, biased(), lat)
    assert np.allclose(G, Gb, atol=1e-14)


def test_spot_check_fifty_entries():
    eng, _ = make_glauber_engine(0.5)
    lat = TorusLattice(1, 6)
    alpha = RateFunction({+1: LocalFunction.from_callable([0, 1], lambda b: 1 + b[0] + 0.5 * b[1]),
                          -1: LocalFunction.from_callable([-1], lambda b: 0.5 + b[0])})
    G = build_ep_generator(build_env_generator(eng, lat), alpha).matrix.tocsr()
    idx = StateIndex(lat)
    rng = np.random.default_rng(11)
    checked = 0
    for i in rng.integers(0, idx.size, 50):
        eta = idx.decode(int(i))
        row = G.getrow(int(i)).toarray().ravel()
        # walker moves that are not single flips can be checked in isolation
        j = idx.encode(shift(eta, -1))
        expected = alpha(eta, 1)
        if j == idx.encode(shift(eta, 1)):
            expected += alpha(eta, -1)
        if j != i and bin(j ^ int(i)).count("1") > 1:
            assert row[j] == pytest.approx(expected, abs=1e-14)
            checked += 1
        assert abs(row.sum()) < 1e-12
    assert checked >= 40


def test_generator_validation():
    idx = StateIndex(TorusLattice(1, 1))
    with pytest.raises(ValueError):
        GeneratorMatrix(sparse.csr_matrix(np.array([[-1.0, 1.0], [1.0, -0.5]])), idx)
    with pytest.raises(ValueError):
        GeneratorMatrix(sparse.csr_matrix(np.array([[1.0, -1.0], [0.0, 0.0]])), idx)
    with pytest.raises(ValueError):
        StateIndex(TorusLattice(1, 30))


def test_glauber_beta_zero_equals_resampling():
    lat = TorusLattice(1, 4)
    a = build_env_generator(make_glauber_engine(0.0, 1.0)[0], lat).toarray()
    b = build_env_generator(make_resampling_engine(1.0)[0], lat).toarray()
    assert np.allclose(a, b)


def test_env_generator_commutes_with_shifts():
    eng, _ = make_glauber_engine(0.6)
    lat = TorusLattice(1, 5)
    G = build_env_generator(eng, lat)
    P = sparse.csr_matrix((np.ones(G.size), (np.arange(G.size), G.index.shift_permutation(2))))
    assert abs(P @ G.matrix - G.matrix @ P).max() < 1e-14


def test_state_index_roundtrip():
    idx = StateIndex(TorusLattice(2, 2), n_layers=2)
    for i in (0, 5, 255):
        assert idx.encode(idx.decode(i)) == i
    with pytest.raises(IndexError):
        idx.decode(256)


# -- stationary law, speed, diffusion ------------------------------------------------------------------


def test_product_stationary_law_is_uniform():
    eng, _ = make_resampling_engine(1.0)
    pi = stationary_distribution(build_env_generator(eng, TorusLattice(1, 4)))
    assert np.allclose(pi.pi, 1 / 16)
    assert pi.residual < 1e-12


def test_stationarity_and_brute_force_speed():
    eng, _ = make_resampling_engine(1.0)
    lat = TorusLattice(1, 3)
    G = build_ep_generator(build_env_generator(eng, lat), biased())
    pi = stationary_distribution(G)
    assert np.abs(pi.pi @ G.toarray()).max() < 1e-12
    assert pi.pi.min() > 0 and pi.pi.sum() == pytest.approx(1.0)
    _, pib, vb, Db = brute_solution(eng, biased(), lat)
    assert np.allclose(pi.pi, pib, atol=1e-12)
    assert exact_speed(pi, biased())[0] == pytest.approx(vb, abs=1e-12)
    assert vb == pytest.approx(V_BIASED_L3, abs=1e-12)
    assert Db == pytest.approx(D_BIASED_L3, abs=1e-6)


def test_single_site_torus_speed():
    # on one site the environment process is the environment: v = E(1 + eta) - 1
    eng, _ = make_resampling_engine(1.0)
    pi = stationary_distribution(build_ep_generator(build_env_generator(eng, TorusLattice(1, 1)), biased()))
    assert exact_speed(pi, biased())[0] == pytest.approx(0.5)


def test_moment_ode_diffusion_matches_corrector():
    eng, _ = make_resampling_engine(1.0)
    lat = TorusLattice(1, 3)
    G = build_ep_generator(build_env_generator(eng, lat), biased())
    res = moment_ode_diffusion(G, biased(), np.linspace(0, 50, 201))
    assert res.D[0, 0] == pytest.approx(D_BIASED_L3, rel=1e-4)
    assert res.v[0] == pytest.approx(V_BIASED_L3, abs=1e-8)


def test_moment_ode_environment_independent():
    eng, _ = make_resampling_engine(1.0)
    lat = TorusLattice(1, 3)
    alpha = RateFunction.constant({1: 2.0, -1: 1.0})
    res = moment_ode_diffusion(build_ep_generator(build_env_generator(eng, lat), alpha), alpha,
                               np.linspace(0, 20, 81))
    assert res.D[0, 0] == pytest.approx(3.0, rel=1e-6)
    assert res.v[0] == pytest.approx(1.0, rel=1e-8)


def test_reducible_generator_is_refused():
    eng, _ = make_frozen_engine()
    with pytest.raises((ReducibleGeneratorError, ValueError)):
        stationary_distribution(build_env_generator(eng, TorusLattice(1, 2)))


# -- semigroup ------------------------------------------------------------------------------------------------


def test_semigroup_against_dense_expm():
    eng, _ = make_glauber_engine(0.3)
    lat = TorusLattice(1, 3)
    G = build_ep_generator(build_env_generator(eng, lat), biased())
    f = LocalFunction.site(0)
    fv = function_vector(G.index, f)
    for t in (0.3, 1.0, 4.0):
        dense = linalg.expm(G.toarray() * t) @ fv
        assert np.allclose(exact_ep_semigroup(G, f, None, t), dense, atol=1e-10)


def test_semigroup_difference_examples_and_tail():
    eng, _ = make_resampling_engine(1.0)
    lat = TorusLattice(1, 3)
    G = build_ep_generator(build_env_generator(eng, lat), biased())
    f = LocalFunction.site(0)
    eta, xi = Configuration.constant(lat, 0), Configuration.constant(lat, 1)
    t = np.array([0.5, 1.0, 2.0, 4.0])
    diff = exact_ep_semigroup(G, f, eta, t) - exact_ep_semigroup(G, f, xi, t)
    assert np.allclose(diff, [-0.6047754, -0.3650172, -0.1337451, -0.0180871], atol=1e-6)
    assert abs(exact_ep_semigroup(G, f, eta, 50.0) - exact_ep_semigroup(G, f, xi, 50.0)) < 1e-4
    assert exact_ep_semigroup(G, f, eta, 0.0) == 0.0


def test_semigroup_conserves_constants():
    eng, _ = make_glauber_engine(0.8)
    G = build_ep_generator(build_env_generator(eng, TorusLattice(1, 4)), biased())
    out = exact_ep_semigroup(G, np.ones(G.size), None, 3.0)
    assert np.allclose(out, 1.0, atol=1e-12)


def test_semigroup_is_deterministic():
    eng, _ = make_resampling_engine(1.0)
    G = build_ep_generator(build_env_generator(eng, TorusLattice(1, 3)), biased())
    t = np.linspace(0.1, 30, 40)
    a = exact_ep_semigroup(G, LocalFunction.site(0), None, t)
    b = exact_ep_semigroup(G, LocalFunction.site(0), None, t)
    assert np.array_equal(a, b)


def test_walker_generator_shapes():
    idx = StateIndex(TorusLattice(1, 3))
    A = walker_generators(idx, biased())
    assert set(A) == {(1,), (-1,)}
    assert np.allclose(A[(-1,)].sum(axis=1), 1.0)


def test_matrix_market_export(tmp_path):
    from scipy.io import mmread

    eng, _ = make_resampling_engine(1.0)
    G = build_ep_generator(build_env_generator(eng, TorusLattice(1, 3)), biased())
    path = export_matrix_market(G, tmp_path / "g.mtx")
    assert np.allclose(mmread(str(path)).toarray(), G.toarray())
