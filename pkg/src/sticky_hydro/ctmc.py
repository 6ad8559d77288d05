"""Exact finite-state CTMC machinery.

Generators for the sticky walk on ``{0..N+1}``, the reservoir walk ``Y`` on
``Sigma_N = S_- u {1..N} u S_+`` and the stirring pair process on ordered
pairs of distinct sites of ``Sigma_N``; transition probabilities by
uniformization; split hitting laws; exact Liggett-inequality checks and the
exact two-point function of the stirring process with reservoirs.

Indexing of ``Sigma_N`` (size 3N): ``0..N-1`` are the left reservoir sites,
``N..2N-1`` the channel sites 1..N, ``2N..3N-1`` the right reservoir sites.
"""

from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from ._validation import check_time_grid
from .lattice import LatticeSpec, reservoir_count

POISSON_TAIL = 1e-14
DENSE_LIMIT = 1500
LIGGETT_MAX_N = 6


class ResourceLimitError(RuntimeError):
    """Requested exact computation exceeds the supported state-space size."""


@dataclass(frozen=True)
class GeneratorMatrix:
    """Rate matrix of a finite CTMC; ``rates`` is dense or scipy sparse (CSR)."""

    states: tuple
    rates: Any

    def __post_init__(self):
        n = len(self.states)
        if self.rates.shape != (n, n):
            raise ValueError(f"rates shape {self.rates.shape} does not match {n} states")
        Q = self.rates
        diag = Q.diagonal()
        row_sums = np.asarray(Q.sum(axis=1)).ravel()
        scale = max(1.0, float(np.abs(diag).max(initial=0.0)))
        if np.abs(row_sums).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("generator rows must sum to zero")
        off = Q - sp.diags(diag) if sp.issparse(Q) else Q - np.diag(diag)
        if (off.min() if sp.issparse(off) else off.min(initial=0.0)) < 0:
            raise ValueError("off-diagonal rates must be nonnegative")

    @property
    def n_states(self):
        return len(self.states)

    @property
    def is_sparse(self):
        return sp.issparse(self.rates)

    @property
    def uniformization_rate(self):
        return float(np.abs(self.rates.diagonal()).max(initial=0.0))

    def index(self, state):
        try:
            return self._index_map[state]
        except AttributeError:
            object.__setattr__(self, "_index_map", {s: i for i, s in enumerate(self.states)})
            return self._index_map[state]

    def dense(self):
        return self.rates.toarray() if self.is_sparse else np.array(self.rates)

    def jump_kernel(self):
        """``(P, lam)`` with ``P = I + Q / lam`` and ``lam`` the largest exit rate."""
        lam = self.uniformization_rate
        if lam == 0.0:
            lam = 1.0
        n = self.n_states
        if self.is_sparse:
            P = (sp.identity(n, format="csr") + self.rates / lam).tocsr()
        else:
            P = np.eye(n) + self.rates / lam
        return P, lam


def _from_triplets(states, rows, cols, vals, sparse=None):
    n = len(states)
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    Q.sum_duplicates()
    Q = (Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())).tocsr()
    if sparse is None:
        sparse = n > DENSE_LIMIT
    return GeneratorMatrix(tuple(states), Q if sparse else Q.toarray())


def _spec(spec):
    return spec if isinstance(spec, LatticeSpec) else LatticeSpec(int(spec))


def build_sticky_generator(spec, sparse=None):
    """Sticky walk on {0..N+1}: rate 1/2 per direction inside, 1/(2N) off the boundary."""
    N = _spec(spec).N
    rows, cols, vals = [], [], []
    for x in range(1, N + 1):
        rows += [x, x]
        cols += [x - 1, x + 1]
        vals += [0.5, 0.5]
    rows += [0, N + 1]
    cols += [1, N]
    vals += [1.0 / (2 * N), 1.0 / (2 * N)]
    return _from_triplets(range(N + 2), rows, cols, vals, sparse)


def sigma_states(N):
    """Labels of Sigma_N in index order: ('-', k), channel sites x, ('+', k)."""
    return [("-", k) for k in range(N)] + list(range(1, N + 1)) + [("+", k) for k in range(N)]


def _reservoir_bonds(N):
    """Bonds of Sigma_N as ``(a, b, rate)`` in index coordinates."""
    site = lambda x: N + x - 1  # noqa: E731
    bonds = [(site(x), site(x + 1), 0.5) for x in range(1, N)]
    bonds += [(k, site(1), 1.0 / (2 * N)) for k in range(N)]
    bonds += [(site(N), 2 * N + k, 1.0 / (2 * N)) for k in range(N)]
    return bonds


def build_reservoir_walk_generator(spec, sparse=None):
    """Single walker on Sigma_N with the mean-field reservoir bonds."""
    N = _spec(spec).N
    rows, cols, vals = [], [], []
    for a, b, rate in _reservoir_bonds(N):
        rows += [a, b]
        cols += [b, a]
        vals += [rate, rate]
    return _from_triplets(sigma_states(N), rows, cols, vals, sparse)


def pair_index(i, j, n):
    """Index of the ordered pair (i, j), i != j, among n single-site states."""
    i = np.asarray(i)
    j = np.asarray(j)
    return i * (n - 1) + np.where(j < i, j, j - 1)


def pair_from_index(k, n):
    k = np.asarray(k)
    i = k // (n - 1)
    r = k % (n - 1)
    return i, np.where(r < i, r, r + 1)


def build_pair_stirring_generator(spec, sparse=None):
    """Two stirring walkers on Sigma_N; each bond swap moves whichever walker sits on it."""
    N = _spec(spec).N
    n = 3 * N
    labels = sigma_states(N)
    n_pairs = n * (n - 1)
    I, J = pair_from_index(np.arange(n_pairs), n)
    states = [(labels[a], labels[b]) for a, b in zip(I.tolist(), J.tolist())]
    rows, cols, vals = [], [], []
    others = np.arange(n)
    for a, b, rate in _reservoir_bonds(N):
        o = others[(others != a) & (others != b)]
        i = np.concatenate([np.full(o.size, a), np.full(o.size, b), o, o, [a, b]])
        j = np.concatenate([o, o, np.full(o.size, a), np.full(o.size, b), [b, a]])
        swap = lambda v: np.where(v == a, b, np.where(v == b, a, v))  # noqa: E731
        rows.append(pair_index(i, j, n))
        cols.append(pair_index(swap(i), swap(j), n))
        vals.append(np.full(i.size, rate))
    return _from_triplets(
        states, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), sparse
    )


def _poisson_window(mu, tol=POISSON_TAIL):
    if mu <= 0:
        return 0, np.ones(1)
    lo = int(poisson.ppf(tol / 2, mu))
    hi = int(poisson.isf(tol / 2, mu)) + 1
    k = np.arange(lo, hi + 1)
    return lo, poisson.pmf(k, mu)


def semigroup_apply(gen, t, v, *, side="left"):
    """Apply ``exp(Q t)`` by uniformization.

    ``side="left"`` returns ``v @ exp(Qt)`` (evolving distributions);
    ``side="right"`` returns ``exp(Qt) @ v`` (evolving observables).  ``v``
    may be a vector or a matrix of stacked vectors.
    """
    t = float(t)
    if t < 0:
        raise ValueError("t must be >= 0")
    v = np.asarray(v, dtype=float)
    if t == 0:
        return v.copy()
    P, lam = gen.jump_kernel()
    if side == "left":
        op = P.T.tocsr() if sp.issparse(P) else P.T
    elif side == "right":
        op = P
    else:
        raise ValueError("side must be 'left' or 'right'")
    lo, w = _poisson_window(lam * t)
    acc = np.zeros_like(v)
    cur = v
    for k in range(lo + w.size):
        if k >= lo:
            acc += w[k - lo] * cur
        if k < lo + w.size - 1:
            cur = op @ cur
    return acc


def transition_probabilities(gen, t, x):
    """Row ``x`` of ``exp(Q t)``; ``x`` is a state label."""
    e = np.zeros(gen.n_states)
    e[gen.index(x)] = 1.0
    return semigroup_apply(gen, t, e, side="left")


def transition_matrix(gen, t):
    return semigroup_apply(gen, t, np.eye(gen.n_states), side="right")


@dataclass(frozen=True)
class HittingSplit:
    t_grid: np.ndarray
    F: np.ndarray
    G: np.ndarray


def absorbed_sticky_generator(spec):
    """Sticky generator with 0 and N+1 made absorbing."""
    gen = build_sticky_generator(spec)
    Q = gen.dense()
    Q[0] = 0.0
    Q[-1] = 0.0
    return GeneratorMatrix(gen.states, sp.csr_matrix(Q) if Q.shape[0] > 200 else Q)


def hitting_split_distributions(spec, x, t_grid):
    """Split hitting laws of the sticky walk started at ``x``.

    ``F(t) = P_x(tau_0 <= t, tau_0 < tau_{N+1})`` and
    ``G(t) = P_x(tau_{N+1} <= t, tau_{N+1} < tau_0)``, computed exactly from
    the absorbed generator.  Starting on the boundary gives a degenerate split.
    """
    spec = _spec(spec)
    N = spec.N
    t_grid = check_time_grid(t_grid, name="t_grid")
    if x not in range(N + 2):
        raise ValueError(f"x must be a site of 0..{N + 1}")
    if x in (0, N + 1):
        one, zero = np.ones_like(t_grid), np.zeros_like(t_grid)
        return HittingSplit(t_grid, one if x == 0 else zero, zero if x == 0 else one)
    gen = absorbed_sticky_generator(spec)
    p = np.zeros(N + 2)
    p[x] = 1.0
    F = np.empty_like(t_grid)
    G = np.empty_like(t_grid)
    prev = 0.0
    for k, t in enumerate(t_grid):
        p = semigroup_apply(gen, t - prev, p)
        prev = t
        F[k], G[k] = p[0], p[-1]
    # uniformization roundoff must not break monotonicity
    return HittingSplit(t_grid, np.maximum.accumulate(F), np.maximum.accumulate(G))


@dataclass(frozen=True)
class LiggettReport:
    t: float
    n_checks: int
    max_violation: float
    worst_pair: tuple
    worst_subset: tuple
    worst_left: float
    worst_right: float

    @property
    def holds(self):
        return self.max_violation <= 1e-10


def interval_subsets(n):
    """All nonempty index intervals of ``range(n)`` as boolean masks."""
    masks = []
    for i in range(n):
        for j in range(i, n):
            m = np.zeros(n, dtype=bool)
            m[i : j + 1] = True
            masks.append(m)
    return masks


def liggett_inequality_check(spec, t, pairs=None, subsets=None, *, n_random=100, seed=0):
    """Compare stirring pairs with independent walkers on sets ``A x A``.

    For every start pair and subset ``A`` of Sigma_N computes
    ``P((X1, X2) in A x A)`` for the stirring pair and ``P((Y1, Y2) in A x A)``
    for independent reservoir walks and reports the largest excess of the
    former over the latter.  Default subsets: every interval of Sigma_N, the
    empty and the full set, and ``n_random`` seeded uniform subsets.
    """
    spec = _spec(spec)
    N = spec.N
    if N > LIGGETT_MAX_N:
        raise ResourceLimitError(f"exact pair semigroup limited to N <= {LIGGETT_MAX_N}")
    n = 3 * N
    pair_gen = build_pair_stirring_generator(spec, sparse=False)
    Pt_pair = transition_matrix(pair_gen, t)
    Pt_single = transition_matrix(build_reservoir_walk_generator(spec, sparse=False), t)

    if pairs is None:
        I, J = pair_from_index(np.arange(n * (n - 1)), n)
    else:
        idx = np.array([[_sigma_index(N, a), _sigma_index(N, b)] for a, b in pairs])
        I, J = idx[:, 0], idx[:, 1]
    rows = pair_index(I, J, n)

    if subsets is None:
        rng = np.random.default_rng(seed)
        masks = [np.zeros(n, dtype=bool), np.ones(n, dtype=bool)] + interval_subsets(n)
        masks += [rng.random(n) < 0.5 for _ in range(n_random)]
    else:
        masks = [_subset_mask(N, A) for A in subsets]

    all_i, all_j = pair_from_index(np.arange(n * (n - 1)), n)
    worst = (-np.inf, None, None, 0.0, 0.0)
    for mask in masks:
        inside = mask[all_i] & mask[all_j]
        left = Pt_pair[rows][:, inside].sum(axis=1)
        in_A = Pt_single[:, mask].sum(axis=1)
        right = in_A[I] * in_A[J]
        gap = left - right
        k = int(np.argmax(gap))
        if gap[k] > worst[0]:
            worst = (float(gap[k]), (int(I[k]), int(J[k])), tuple(np.flatnonzero(mask)),
                     float(left[k]), float(right[k]))
    labels = sigma_states(N)
    return LiggettReport(
        t=float(t),
        n_checks=len(masks) * rows.size,
        max_violation=worst[0],
        worst_pair=(labels[worst[1][0]], labels[worst[1][1]]),
        worst_subset=tuple(labels[i] for i in worst[2]),
        worst_left=worst[3],
        worst_right=worst[4],
    )


def _sigma_index(N, label):
    if isinstance(label, tuple):
        side, k = label
        if not 0 <= k < N or side not in ("-", "+"):
            raise ValueError(f"bad reservoir label {label!r}")
        return k if side == "-" else 2 * N + k
    if not 1 <= label <= N:
        raise ValueError(f"channel site must be in 1..{N}, got {label!r}")
    return N + label - 1


def _subset_mask(N, A):
    mask = np.zeros(3 * N, dtype=bool)
    for label in A:
        mask[_sigma_index(N, label)] = True
    return mask


def initial_pair_moments(spec, initial):
    """First and second moments at time 0 of the stirring process with reservoirs.

    Channel bits are independent Bernoulli(u0(x/N)); each reservoir holds
    exactly ``round(N v0)`` particles at a uniformly random subset of its sites.
    Returns ``(m, f)``: ``m`` indexed by Sigma_N, ``f`` by ordered pairs.
    """
    N = _spec(spec).N
    n = 3 * N
    n_minus = reservoir_count(initial.v0_minus, N)
    n_plus = reservoir_count(initial.v0_plus, N)
    m = np.empty(n)
    m[:N] = n_minus / N
    m[N : 2 * N] = initial(np.arange(1, N + 1) / N)
    m[2 * N :] = n_plus / N
    I, J = pair_from_index(np.arange(n * (n - 1)), n)
    f = m[I] * m[J]
    same_left = (I < N) & (J < N)
    same_right = (I >= 2 * N) & (J >= 2 * N)
    f[same_left] = n_minus * (n_minus - 1) / (N * (N - 1))
    f[same_right] = n_plus * (n_plus - 1) / (N * (N - 1))
    return m, f


@dataclass(frozen=True)
class ExactTwoPoint:
    pairs: tuple
    second_moment: np.ndarray
    means: np.ndarray
    covariance: np.ndarray


def exact_two_point(spec, initial, tau, pairs):
    """Exact covariance of occupations at channel sites via pair duality.

    ``E[eta(x1) eta(x2)](t) = E_(x1,x2)[f(X1(t), X2(t))]`` for the stirring pair
    and ``E[eta(x)](t) = E_x[m(Y(t))]`` for one reservoir walk, at
    microscopic time ``t = N^2 tau``.
    """
    spec = _spec(spec)
    N = spec.N
    n = 3 * N
    t = float(spec.to_micro(tau))
    m, f = initial_pair_moments(spec, initial)
    for x1, x2 in pairs:
        if x1 == x2:
            raise ValueError("pair sites must be distinct")
    g = semigroup_apply(build_pair_stirring_generator(spec), t, f, side="right")
    mt = semigroup_apply(build_reservoir_walk_generator(spec), t, m, side="right")
    i = np.array([_sigma_index(N, a) for a, _ in pairs])
    j = np.array([_sigma_index(N, b) for _, b in pairs])
    second = g[pair_index(i, j, n)]
    means = np.stack([mt[i], mt[j]], axis=1)
    return ExactTwoPoint(tuple(pairs), second, means, second - means[:, 0] * means[:, 1])
