import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from sticky_hydro.ctmc import (
    GeneratorMatrix,
    ResourceLimitError,
    build_pair_stirring_generator,
    build_reservoir_walk_generator,
    build_sticky_generator,
    exact_two_point,
    hitting_split_distributions,
    liggett_inequality_check,
    pair_from_index,
    pair_index,
    semigroup_apply,
    sigma_states,
    transition_matrix,
    transition_probabilities,
)
from sticky_hydro.kernels import hitting_split_continuum
from sticky_hydro.lattice import InitialData, LatticeSpec, inner_product, reservoir_count, sticky_measure


def test_sticky_generator_rows_small():
    Q = build_sticky_generator(LatticeSpec(2)).dense()
    np.testing.assert_allclose(Q[0], [-0.25, 0.25, 0, 0])
    np.testing.assert_allclose(Q[1], [0.5, -1.0, 0.5, 0])
    np.testing.assert_allclose(Q[3], [0, 0, 0.25, -0.25])


@pytest.mark.parametrize("N", range(2, 11))
def test_generators_rows_sum_to_zero(N):
    for gen in (build_sticky_generator(N), build_reservoir_walk_generator(N)):
        Q = gen.dense()
        assert np.abs(Q.sum(axis=1)).max() < 1e-15
        off = Q - np.diag(np.diag(Q))
        assert off.min() >= 0


def test_pair_generator_rows_sum_to_zero():
    for N in (2, 3, 4):
        Q = build_pair_stirring_generator(N).dense()
        assert np.abs(Q.sum(axis=1)).max() < 1e-14


def test_generator_validation():
    with pytest.raises(ValueError, match="sum to zero"):
        GeneratorMatrix((0, 1), np.array([[-1.0, 0.5], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="nonnegative"):
        GeneratorMatrix((0, 1), np.array([[1.0, -1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="shape"):
        GeneratorMatrix((0, 1, 2), np.zeros((2, 2)))


def test_reservoir_walk_rows():
    N = 2
    gen = build_reservoir_walk_generator(LatticeSpec(N))
    Q = gen.dense()
    z = gen.index(("-", 0))
    row = Q[z].copy()
    row[z] = 0
    assert np.count_nonzero(row) == 1
    assert row[gen.index(1)] == pytest.approx(0.25)
    assert -Q[gen.index(1), gen.index(1)] == pytest.approx(1.0)
    assert sigma_states(2) == [("-", 0), ("-", 1), 1, 2, ("+", 0), ("+", 1)]


@pytest.mark.parametrize("N", [2, 3, 6, 10])
def test_lumping_reproduces_sticky_walk(N):
    Y = build_reservoir_walk_generator(N)
    X = build_sticky_generator(N)
    blocks = np.zeros((3 * N, N + 2))
    blocks[:N, 0] = 1
    blocks[N : 2 * N, 1 : N + 1] = np.eye(N)
    blocks[2 * N :, N + 1] = 1
    # rate from each state into each block equals the sticky rate of its block
    np.testing.assert_allclose(Y.dense() @ blocks, blocks @ X.dense(), atol=1e-15)
    for t in (0.3, 5.0):
        lumped = transition_matrix(Y, t) @ blocks
        np.testing.assert_allclose(lumped, blocks @ transition_matrix(X, t), atol=1e-10)


def test_pair_index_roundtrip():
    n = 7
    k = np.arange(n * (n - 1))
    i, j = pair_from_index(k, n)
    assert np.all(i != j)
    np.testing.assert_array_equal(pair_index(i, j, n), k)


def test_pair_swap_on_channel_bond():
    N = 2
    gen = build_pair_stirring_generator(LatticeSpec(N))
    Q = gen.dense()
    assert Q[gen.index((1, 2)), gen.index((2, 1))] == pytest.approx(0.5)
    # a walker on a reservoir site moves only along its own bond
    assert Q[gen.index((("-", 0), 2)), gen.index((1, 2))] == pytest.approx(0.25)


def test_pair_marginal_is_single_walk():
    N = 3
    n = 3 * N
    pair = expm(build_pair_stirring_generator(N).dense() * 0.3)
    single = expm(build_reservoir_walk_generator(N).dense() * 0.3)
    I, J = pair_from_index(np.arange(n * (n - 1)), n)
    worst = 0.0
    for k in range(n * (n - 1)):
        marg = np.bincount(I, weights=pair[k], minlength=n)
        worst = max(worst, np.abs(marg - single[I[k]]).max())
    assert worst < 1e-10


def test_transition_probabilities_identity_at_zero():
    gen = build_sticky_generator(5)
    np.testing.assert_array_equal(transition_probabilities(gen, 0.0, 3), np.eye(7)[3])
    with pytest.raises(ValueError):
        transition_probabilities(gen, -1.0, 3)


@pytest.mark.parametrize("N, t", [(3, 0.5), (6, 7.0), (12, 40.0)])
def test_uniformization_against_expm(N, t):
    gen = build_sticky_generator(N)
    np.testing.assert_allclose(transition_matrix(gen, t), expm(gen.dense() * t), atol=1e-12, rtol=0)


@pytest.mark.parametrize("N", [3, 8])
def test_ergodic_limit(N):
    gen = build_sticky_generator(N)
    p = transition_probabilities(gen, 50.0 * N**2, 1)
    assert 0.5 * np.abs(p - sticky_measure(N)).sum() < 1e-3


def test_transition_symmetry():
    N = 4
    P = transition_matrix(build_sticky_generator(N), 2.5)
    inner = slice(1, N + 1)
    np.testing.assert_allclose(P[inner, inner], P[inner, inner].T, atol=1e-13)
    np.testing.assert_allclose(N * P[0, 1:-1], P[1:-1, 0], atol=1e-13)
    assert P[0, -1] == pytest.approx(P[-1, 0], abs=1e-14)


@given(st.integers(2, 15), st.floats(0.0, 200.0), st.data())
def test_uniformization_gives_probability_vectors(N, t, data):
    x = data.draw(st.integers(0, N + 1))
    p = transition_probabilities(build_sticky_generator(N), t, x)
    assert p.min() >= -1e-12
    assert abs(p.sum() - 1) < 1e-12


@given(st.integers(2, 20), st.sampled_from([0.1, 1.0, 10.0]), st.integers(0, 2**32 - 1))
def test_semigroup_self_adjoint(N, t, seed):
    rng = np.random.default_rng(seed)
    phi, psi = rng.random((2, N + 2))
    gen = build_sticky_generator(N)
    a = inner_product(phi, semigroup_apply(gen, t, psi, side="right"))
    b = inner_product(psi, semigroup_apply(gen, t, phi, side="right"))
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_semigroup_side_validation():
    with pytest.raises(ValueError):
        semigroup_apply(build_sticky_generator(3), 1.0, np.ones(5), side="middle")


def test_hitting_split_symmetric_start():
    N = 9
    hs = hitting_split_distributions(N, 5, np.linspace(0, 500, 26))
    np.testing.assert_allclose(hs.F, hs.G, atol=1e-13)


def test_hitting_split_limit_is_gamblers_ruin():
    hs = hitting_split_distributions(9, 3, [1e5])
    assert hs.F[-1] == pytest.approx(0.7, abs=1e-10)
    assert hs.F[-1] + hs.G[-1] == pytest.approx(1.0, abs=1e-10)


def test_hitting_split_against_expm():
    N = 6
    t = np.array([0.0, 1.0, 4.0, 20.0])
    hs = hitting_split_distributions(N, 2, t)
    Q = build_sticky_generator(N).dense()
    Q[0] = Q[-1] = 0
    for k, tk in enumerate(t):
        p = expm(Q * tk)[2]
        assert hs.F[k] == pytest.approx(p[0], abs=1e-12)
        assert hs.G[k] == pytest.approx(p[-1], abs=1e-12)


@given(st.integers(2, 30), st.data())
def test_hitting_split_monotone(N, data):
    x = data.draw(st.integers(1, N))
    hs = hitting_split_distributions(N, x, np.linspace(0, 3.0 * N**2, 12))
    assert np.all(np.diff(hs.F) >= 0) and np.all(np.diff(hs.G) >= 0)
    assert np.all(hs.F + hs.G <= 1 + 1e-12)


def test_hitting_split_degenerate_on_boundary():
    t = [0.0, 1.0]
    hs = hitting_split_distributions(5, 0, t)
    np.testing.assert_array_equal(hs.F, [1, 1])
    np.testing.assert_array_equal(hs.G, [0, 0])
    hs = hitting_split_distributions(5, 6, t)
    np.testing.assert_array_equal(hs.G, [1, 1])


def test_hitting_split_continuum_limit():
    N = 200
    x = N // 2
    hs = hitting_split_distributions(N, x, [0.1 * N**2])
    F, _ = hitting_split_continuum(x / N, 0.1)
    assert abs(hs.F[0] - F) < 5e-3


def test_liggett_trivial_sets():
    N = 3
    full = tuple(sigma_states(N))
    rep = liggett_inequality_check(N, 1.0, pairs=[(1, 2)], subsets=[full])
    assert rep.worst_left == pytest.approx(1.0, abs=1e-12)
    assert rep.worst_right == pytest.approx(1.0, abs=1e-12)
    rep = liggett_inequality_check(N, 1.0, pairs=[(1, 2)], subsets=[()])
    assert rep.worst_left == 0.0 and rep.worst_right == 0.0


def test_liggett_example():
    N = 4
    A = [("+", k) for k in range(N)] + [N]
    rep = liggett_inequality_check(N, 1.0, pairs=[(1, 2)], subsets=[A])
    assert rep.worst_left <= rep.worst_right + 1e-12
    assert rep.holds


def test_liggett_resource_limit():
    with pytest.raises(ResourceLimitError):
        liggett_inequality_check(7, 1.0)


def _configuration_oracle(N, initial, t, pairs):
    """Brute-force stirring dynamics on all 2^(3N) configurations of Sigma_N."""
    n = 3 * N
    configs = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    code = configs @ (1 << np.arange(n)[::-1])
    lookup = np.empty(2**n, dtype=np.int64)
    lookup[code] = np.arange(configs.shape[0])
    site = lambda x: N + x - 1  # noqa: E731
    bonds = [(site(x), site(x + 1), 0.5) for x in range(1, N)]
    bonds += [(k, site(1), 1 / (2 * N)) for k in range(N)]
    bonds += [(site(N), 2 * N + k, 1 / (2 * N)) for k in range(N)]
    Q = np.zeros((configs.shape[0],) * 2)
    for a, b, rate in bonds:
        swapped = configs.copy()
        swapped[:, [a, b]] = swapped[:, [b, a]]
        target = lookup[swapped @ (1 << np.arange(n)[::-1])]
        Q[np.arange(configs.shape[0]), target] += rate
    Q -= np.diag(Q.sum(axis=1))
    p = initial(np.arange(1, N + 1) / N)
    n0 = (reservoir_count(initial.v0_minus, N), reservoir_count(initial.v0_plus, N))
    ch = configs[:, N : 2 * N]
    law = np.prod(np.where(ch == 1, p, 1 - p), axis=1)
    law *= configs[:, :N].sum(1) == n0[0]
    law *= configs[:, 2 * N :].sum(1) == n0[1]
    law /= law.sum()
    law_t = law @ expm(Q * t)
    out = []
    for x1, x2 in pairs:
        e1, e2 = configs[:, site(x1)], configs[:, site(x2)]
        out.append(law_t @ (e1 * e2) - (law_t @ e1) * (law_t @ e2))
    return np.array(out)


def test_exact_two_point_against_configuration_space():
    N = 3
    datum = InitialData.from_table([0.0, 1.0], [0.2, 0.9], v0_minus=0.4, v0_plus=0.7)
    pairs = ((1, 2), (1, 3), (2, 3))
    tau = 0.3
    ex = exact_two_point(N, datum, tau, pairs)
    oracle = _configuration_oracle(N, datum, tau * N**2, pairs)
    np.testing.assert_allclose(ex.covariance, oracle, atol=1e-12)
    assert np.all(ex.covariance < 0)


def test_exact_two_point_frozen_datum():
    ex = exact_two_point(6, InitialData.constant(1.0), 0.25, ((1, 3), (2, 5)))
    np.testing.assert_allclose(ex.covariance, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        exact_two_point(6, InitialData.constant(1.0), 0.25, ((2, 2),))
