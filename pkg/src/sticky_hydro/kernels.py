"""Period-2 image sums of the Gaussian heat kernel and their time integrals.

``theta(r, t) = sum_n (2 pi t)^{-1/2} exp(-(r + 2n)^2 / (2t))`` is the kernel
of ``u_t = u_rr / 2`` on [0, 1].  Every function here is a truncated
symmetric image sum over ``|n| <= n_max(t)``; the truncation is chosen so the
Gaussian tail of the first omitted image is below ``tail_tol``.

Time integrals are evaluated in closed form image by image:

* ``A_c(t) = int_0^t g_c``            (``g_c`` one Gaussian image at offset c)
* ``B_c(t) = int_0^t A_c``
* ``P(tau_c <= s) = erfc(|c| / sqrt(2 s))`` and ``E_c(t) = int_0^t erfc(...)``

which gives exact kernel moments for the Volterra solver and exact
boundary terms for the representation of u.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from ._validation import check_positive

DEFAULT_TAIL_TOL = 1e-14
_SQRT_2_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ThetaParams:
    tail_tol: float = DEFAULT_TAIL_TOL
    n_max_cap: int = 64

    def __post_init__(self):
        check_positive(self.tail_tol, "tail_tol")
        if self.tail_tol >= 1:
            raise ValueError("tail_tol must be < 1")
        if int(self.n_max_cap) < 1:
            raise ValueError("n_max_cap must be >= 1")

    def n_max(self, t):
        """Number of images on each side needed at time ``t``."""
        t = float(np.max(t))
        n = math.ceil(math.sqrt(max(t, 0.0) * math.log(1.0 / self.tail_tol) / 2.0)) + 2
        return min(n, int(self.n_max_cap))


_DEFAULT = ThetaParams()


def _offsets(r, t, params, *, allow_zero_time=False):
    params = _DEFAULT if params is None else params
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if allow_zero_time:
        if np.any(t < 0):
            raise ValueError("time must be >= 0")
    elif np.any(t <= 0):
        raise ValueError("theta kernel requires t > 0")
    r, t = np.broadcast_arrays(r, t)
    n_max = params.n_max(t) if t.size else 0
    n = np.arange(-n_max, n_max + 1, dtype=float)
    return r[..., None] + 2.0 * n, t[..., None]


def theta(r, t, params=None):
    c, t = _offsets(r, t, params)
    g = np.exp(-(c * c) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return g.sum(axis=-1)


def theta_dr(r, t, params=None):
    """Derivative of ``theta`` in its space argument (termwise)."""
    c, t = _offsets(r, t, params)
    g = np.exp(-(c * c) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return (-(c / t) * g).sum(axis=-1)


def _antiderivative_terms(c, t):
    a = np.abs(c)
    positive = t > 0
    safe_t = np.where(positive, t, 1.0)
    st = np.sqrt(np.where(positive, t, 0.0))
    gauss = np.where(positive, np.exp(-(a * a) / (2.0 * safe_t)), 0.0)
    # at t = 0 an image at offset 0 is already hit, any other image is not
    z = np.where(positive, a / np.sqrt(2.0 * safe_t), np.where(a > 0, np.inf, 0.0))
    return a, st, gauss, erfc(z)


def theta_time_integral(r, t, params=None):
    """``int_0^t theta(r, s) ds`` (zero at t = 0)."""
    c, t = _offsets(r, t, params, allow_zero_time=True)
    a, st, gauss, tail = _antiderivative_terms(c, t)
    terms = _SQRT_2_PI * st * gauss - a * tail
    return terms.sum(axis=-1)


def theta_time_integral2(r, t, params=None):
    """``int_0^t int_0^s theta(r, q) dq ds``."""
    c, t = _offsets(r, t, params, allow_zero_time=True)
    a, st, gauss, tail = _antiderivative_terms(c, t)
    terms = _SQRT_2_PI * st * gauss * (2.0 * t + a * a) / 3.0 - a * tail * (t + a * a / 3.0)
    return terms.sum(axis=-1)


def _split_signs(c):
    # the image at offset 0 (r = 0 exactly) counts as already absorbed at 0
    return np.where(c >= 0, 1.0, -1.0)


def hitting_split_continuum(r, s, params=None):
    """Brownian split hitting laws on [0, 1] started at ``r``.

    Returns ``(F, G)`` with ``F = P_r(tau_0 <= s, tau_0 < tau_1)`` and
    ``G = P_r(tau_1 <= s, tau_1 < tau_0)``.  ``F`` is the time integral of
    ``-theta_dr(r, .)`` and ``G`` the same quantity seen from ``1 - r``.
    """
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError("r must lie in [0, 1]")
    s = np.asarray(s, dtype=float)
    return _split_cdf(r, s, params), _split_cdf(1.0 - r, s, params)


def _split_cdf(r, s, params):
    c, s = _offsets(r, s, params, allow_zero_time=True)
    _, _, _, tail = _antiderivative_terms(c, s)
    return (_split_signs(c) * tail).sum(axis=-1)


def hitting_split_integral(r, t, params=None):
    """``int_0^t F_r(s) ds`` for the left split law of :func:`hitting_split_continuum`."""
    c, t = _offsets(r, t, params, allow_zero_time=True)
    a, st, gauss, tail = _antiderivative_terms(c, t)
    terms = (t + a * a) * tail - a * _SQRT_2_PI * st * gauss
    return (_split_signs(c) * terms).sum(axis=-1)
