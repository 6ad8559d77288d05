"""Lattice geometry, density profiles and the sticky reversible measure.

Profiles live on the extended lattice ``{0, 1, ..., N+1}``: slots 1..N are the
channel, slot 0 holds the left reservoir density ``n_-/M`` and slot N+1 the
right reservoir density ``n_+/M``.  Reservoirs have size ``M = N`` and the
lattice spacing is ``eps = 1/N``.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from ._validation import check_lattice_size, check_profile, check_unit_interval


@dataclass(frozen=True)
class LatticeSpec:
    """Channel of N sites coupled to two reservoirs of M = N sites each."""

    N: int

    def __post_init__(self):
        check_lattice_size(self.N)

    @property
    def M(self):
        return self.N

    @property
    def eps(self):
        return Fraction(1, self.N)

    @property
    def n_slots(self):
        return self.N + 2

    def to_micro(self, tau):
        """Macroscopic time -> microscopic time (t = N^2 tau)."""
        return np.asarray(tau, dtype=float) * self.N**2

    def to_macro(self, t):
        return np.asarray(t, dtype=float) / self.N**2


def _vectorize(func):
    def wrapped(r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(func(r), dtype=float)
        if out.shape != r.shape:
            out = np.broadcast_to(out, r.shape).copy()
        return out

    return wrapped


@dataclass(frozen=True)
class InitialData:
    """Initial channel profile ``u0`` and reservoir densities ``v0_minus``, ``v0_plus``.

    ``u0`` must accept numpy arrays.  ``breakpoints`` lists interior points
    where ``u0`` is discontinuous or kinked; quadratures split there.
    """

    u0: Callable[[np.ndarray], np.ndarray]
    v0_minus: float
    v0_plus: float
    name: str = "custom"
    breakpoints: tuple = field(default=())
    smooth: bool = True

    def __post_init__(self):
        check_unit_interval(self.v0_minus, "v0_minus")
        check_unit_interval(self.v0_plus, "v0_plus")
        probe = np.asarray(self.u0(np.linspace(0.0, 1.0, 101)), dtype=float)
        if np.any(probe < -1e-12) or np.any(probe > 1 + 1e-12):
            raise ValueError("u0 must take values in [0, 1]")

    def __call__(self, r):
        return self.u0(np.asarray(r, dtype=float))

    def lattice_profile(self, N):
        """Profile with rho(x, 0) = u0(x/N) and reservoir slots v0_-, v0_+."""
        N = check_lattice_size(N)
        x = np.arange(1, N + 1)
        prof = np.empty(N + 2)
        prof[1:-1] = np.clip(self(x / N), 0.0, 1.0)
        prof[0] = self.v0_minus
        prof[-1] = self.v0_plus
        return prof

    @property
    def is_constant(self):
        vals = self(np.linspace(0.0, 1.0, 257))
        c = vals[0]
        return bool(np.all(vals == c) and self.v0_minus == c and self.v0_plus == c)

    @classmethod
    def constant(cls, c):
        c = check_unit_interval(c, "c")
        return cls(_vectorize(lambda r: np.full_like(r, c)), c, c, name=f"constant:{c:g}")

    @classmethod
    def linear(cls):
        """u0(r) = r with empty left and full right reservoirs."""
        return cls(_vectorize(lambda r: np.clip(r, 0.0, 1.0)), 0.0, 1.0, name="linear")

    @classmethod
    def step(cls):
        return cls(
            _vectorize(lambda r: (r > 0.5).astype(float)),
            0.0,
            1.0,
            name="step",
            breakpoints=(0.5,),
            smooth=False,
        )

    @classmethod
    def sine(cls):
        return cls(
            _vectorize(lambda r: np.clip(np.sin(np.pi * r), 0.0, 1.0)), 0.0, 0.0, name="sine"
        )

    @classmethod
    def from_table(cls, r, u, v0_minus=None, v0_plus=None):
        """Piecewise-linear datum through the points ``(r, u)``."""
        r = np.asarray(r, dtype=float)
        u = np.asarray(u, dtype=float)
        if r.ndim != 1 or r.shape != u.shape or r.size < 2:
            raise ValueError("table needs matching 1-d r and u columns with >= 2 rows")
        if np.any(np.diff(r) <= 0):
            raise ValueError("table r column must be strictly increasing")
        v0_minus = float(u[0]) if v0_minus is None else v0_minus
        v0_plus = float(u[-1]) if v0_plus is None else v0_plus
        inner = tuple(float(p) for p in r if 0.0 < p < 1.0)
        return cls(
            _vectorize(lambda s: np.interp(s, r, u)),
            v0_minus,
            v0_plus,
            name="table",
            breakpoints=inner,
            smooth=False,
        )


def reservoir_count(v0, M):
    """Initial reservoir occupation ``round(M v0)`` with halves rounded up."""
    return int(np.floor(M * v0 + 0.5))


def inner_product(f, g):
    """Weighted product sum_{x=1}^N f g + N (f(0)g(0) + f(N+1)g(N+1))."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.ndim != 1 or f.shape != g.shape:
        raise ValueError(f"dimension mismatch: {f.shape} vs {g.shape}")
    if f.shape[0] < 4:
        raise ValueError("profiles need at least 4 entries (N >= 2)")
    N = f.shape[0] - 2
    return float(f[1:-1] @ g[1:-1] + N * (f[0] * g[0] + f[-1] * g[-1]))


def total_mass(profile):
    """Conserved mass functional: channel sum plus N times the reservoir densities."""
    p = check_profile(profile, bounded=False)
    N = p.shape[0] - 2
    return float(p[1:-1].sum() + N * (p[0] + p[-1]))


def sticky_weights(N):
    """Unnormalized reversible weights: 1 on the channel, N at the two boundary slots."""
    N = check_lattice_size(N)
    w = np.ones(N + 2)
    w[0] = w[-1] = N
    return w


def sticky_measure(spec):
    """Normalized reversible measure of the sticky walk on {0, ..., N+1}."""
    N = spec.N if isinstance(spec, LatticeSpec) else check_lattice_size(spec)
    return sticky_weights(N) / (3.0 * N)
