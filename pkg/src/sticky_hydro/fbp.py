"""Free-boundary heat equation with dynamic boundary values.

Unknowns are ``u`` on ``(0, 1) x (0, T]`` and boundary values ``v_-, v_+``::

    u_t = u_rr / 2,   u(0, t) = v_-(t),   u(1, t) = v_+(t),
    v_-' = u_r(0, t) / 2,   v_+' = -u_r(1, t) / 2.

Writing ``u`` through the absorbed heat kernel plus boundary terms reduces the
problem to a 2x2 Volterra system of the second kind for ``v = (v_-, v_+)``::

    v(t) = f(t) + int_0^t K(t - s) v(s) ds,
    K = [[-theta(0, .), theta(1, .)], [theta(1, .), -theta(0, .)]],

with ``f_-(t) = v0_- + int_0^1 u0(r) F_r(t) dr`` and ``f_+`` the mirror image,
``F_r`` the split hitting law of Brownian motion on [0, 1].  Its derivative is
the Volterra system for ``V = v'`` with kernels ``K_-`` and ``K_+``.

The primary solver collocates a continuous piecewise-linear ``v`` at the grid
nodes; every kernel moment is an exact image sum.  A second solver uses
piecewise-constant ``v`` and windowed Picard iteration as an independent check.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConvergenceError, check_positive, check_time_grid
from .kernels import (
    DEFAULT_TAIL_TOL,
    ThetaParams,
    hitting_split_continuum,
    hitting_split_integral,
    theta,
    theta_dr,
    theta_time_integral,
    theta_time_integral2,
)
from .lattice import InitialData

QUAD_EPSABS = 1e-13
PICARD_MAX_ITER = 200
PICARD_TOL = 1e-13
CONTRACTION_BOUND = 1.0 / (2.0 * math.sqrt(2.0))


def _quad(func, points, epsabs=QUAD_EPSABS):
    pts = sorted({float(p) for p in points if 0.0 < p < 1.0})
    val, err = quad_vec(func, 0.0, 1.0, epsabs=epsabs, epsrel=0.0, norm="max", points=pts or None, limit=2000)
    if not np.all(np.isfinite(val)) or err > max(100 * epsabs, 1e-9):
        raise ConvergenceError(f"quadrature did not converge (error estimate {err:.2e})")
    return val


def f_prime(initial, t, params=None):
    """Forcing of the derivative system: ``(f_-'(t), f_+'(t))``.

    ``f_-'(t) = -int_0^1 u0(r) theta_r(r, t) dr`` and
    ``f_+'(t) = -int_0^1 u0(r) theta_r(1 - r, t) dr``.
    """
    t = check_time_grid(t, name="t", strictly_positive=True, increasing=False)
    u0 = initial.u0

    def integrand(r):
        u = float(u0(np.array(r)))
        return -u * np.concatenate([theta_dr(r, t, params), theta_dr(1.0 - r, t, params)])

    out = _quad(integrand, initial.breakpoints, epsabs=1e-10)
    return out[: t.size], out[t.size :]


def forcing(initial, t, params=None):
    """``(f_-(t), f_+(t))``, the integrated forcing, for ``t >= 0``."""
    t = check_time_grid(t, name="t", increasing=False)
    u0 = initial.u0

    def integrand(r):
        F, G = hitting_split_continuum(r, t, params)
        return float(u0(np.array(r))) * np.concatenate([F, G])

    out = _quad(integrand, initial.breakpoints)
    return initial.v0_minus + out[: t.size], initial.v0_plus + out[t.size :]


def _pair(a_same, a_cross):
    """Apply ``[[-same, cross], [cross, -same]]`` to stacked (minus, plus) columns."""

    def apply(x):
        x = np.asarray(x)
        return np.stack([-a_same * x[..., 0] + a_cross * x[..., 1],
                         a_cross * x[..., 0] - a_same * x[..., 1]], axis=-1)

    return apply


@dataclass(frozen=True)
class VolterraSolution:
    """Boundary values on the grid ``t_k = k h``, k = 1..n.

    ``V_minus``, ``V_plus`` are nodal derivatives; ``slopes[k-1]`` holds the
    exact derivative of the piecewise-linear ``v`` on cell ``(t_{k-1}, t_k)``.
    """

    t_grid: np.ndarray
    V_minus: np.ndarray
    V_plus: np.ndarray
    v_minus: np.ndarray
    v_plus: np.ndarray
    h: float
    v0: tuple
    slopes: np.ndarray = field(repr=False)
    residual: float = 0.0
    residual_tol: float = np.inf
    method: str = "collocation"

    @property
    def flagged(self):
        return not self.residual <= self.residual_tol

    @property
    def T(self):
        return float(self.t_grid[-1])

    def values(self, t):
        """Piecewise-linear ``(v_-(t), v_+(t))`` with ``v(0) = v0``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T * (1 + 1e-12)):
            raise ValueError(f"t must lie in [0, {self.T}]")
        grid = np.concatenate([[0.0], self.t_grid])
        return (np.interp(t, grid, np.concatenate([[self.v0[0]], self.v_minus])),
                np.interp(t, grid, np.concatenate([[self.v0[1]], self.v_plus])))

    def derivatives(self, t):
        t = np.asarray(t, dtype=float)
        return (np.interp(t, self.t_grid, self.V_minus), np.interp(t, self.t_grid, self.V_plus))

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t,v_minus,v_plus\n")
            for row in zip(self.t_grid.tolist(), self.v_minus.tolist(), self.v_plus.tolist()):
                fh.write("{!r},{!r},{!r}\n".format(*row))


def _uniform_grid(t_grid=None, h=None, T=None):
    if t_grid is not None:
        t_grid = check_time_grid(t_grid, name="t_grid", strictly_positive=True)
        h = t_grid[0]
        n = t_grid.size
        if n > 1 and np.abs(np.diff(t_grid) - h).max() > 1e-9 * max(1.0, t_grid[-1]):
            raise ValueError("t_grid must be uniform with t_1 = h")
        return h, n
    h = check_positive(h, "h")
    T = check_positive(T, "T")
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-9 * T:
        raise ValueError("T must be a multiple of h")
    return h, n


class _KernelMoments:
    def __init__(self, h, n, params):
        m = np.arange(n + 2) * h
        self.A0 = theta_time_integral(0.0, m, params)
        self.A1 = theta_time_integral(1.0, m, params)
        self.B0 = theta_time_integral2(0.0, m, params)
        self.B1 = theta_time_integral2(1.0, m, params)


def _midpoint_operator(h, n, v0, slopes, params):
    """``int_0^s K(s - q) v(q) dq`` at the cell midpoints for piecewise-linear v.

    The lags ``(m + 1/2) h`` form a Toeplitz structure, so the sum over cells
    is a convolution of the slopes with differences of the second moments.
    """
    mids = (np.arange(n) + 0.5) * h
    a0 = theta_time_integral(0.0, mids, params)
    a1 = theta_time_integral(1.0, mids, params)
    out = _pair(a0, a1)(np.broadcast_to(v0, (n, 2)))
    b0 = np.diff(theta_time_integral2(0.0, mids, params), prepend=0.0)
    b1 = np.diff(theta_time_integral2(1.0, mids, params), prepend=0.0)
    out[:, 0] += -fftconvolve(slopes[:, 0], b0)[:n] + fftconvolve(slopes[:, 1], b1)[:n]
    out[:, 1] += fftconvolve(slopes[:, 0], b1)[:n] - fftconvolve(slopes[:, 1], b0)[:n]
    return out


def solve_volterra(initial, t_grid=None, params=None, *, h=None, T=None, residual_tol=None):
    """Piecewise-linear collocation for ``v`` on a uniform grid starting at ``h``.

    Parameters
    ----------
    initial : InitialData
    t_grid : array_like, optional
        Uniform grid ``h, 2h, ..., nh``.  Alternatively pass ``h`` and ``T``.
    residual_tol : float, optional
        Threshold for the midpoint residual of the integrated equations above
        which the result is flagged; defaults to ``10 h``.
    """
    params = ThetaParams() if params is None else params
    h, n = _uniform_grid(t_grid, h, T)
    v0 = np.array([initial.v0_minus, initial.v0_plus])
    grid = np.arange(1, n + 1) * h
    mids = grid - 0.5 * h
    f_m, f_p = forcing(initial, np.concatenate([grid, mids]), params)
    f = np.stack([f_m, f_p], axis=1)
    f_nodes, f_mids = f[:n], f[n:]

    mom = _KernelMoments(h, n, params)
    # W_m = (B((m+1)h) - B(mh)) / h, the weight of increment d_{j-m} at node t_j
    w_same = np.diff(mom.B0) / h
    w_cross = np.diff(mom.B1) / h
    rhs0 = f_nodes - v0 + _pair(mom.A0[1 : n + 1], mom.A1[1 : n + 1])(np.broadcast_to(v0, (n, 2)))
    a, b = 1.0 + w_same[0], -w_cross[0]
    det = a * a - b * b
    d = np.zeros((n, 2))
    for j in range(n):
        rhs = rhs0[j].copy()
        if j:
            # history: sum_{k<j} (I - W_{j-k}) d_k
            ws = w_same[j:0:-1]
            wc = w_cross[j:0:-1]
            hist = d[:j]
            rhs[0] -= hist[:, 0].sum() + (ws * hist[:, 0]).sum() - (wc * hist[:, 1]).sum()
            rhs[1] -= hist[:, 1].sum() + (ws * hist[:, 1]).sum() - (wc * hist[:, 0]).sum()
        d[j, 0] = (a * rhs[0] - b * rhs[1]) / det
        d[j, 1] = (a * rhs[1] - b * rhs[0]) / det

    slopes = d / h
    v = v0 + np.cumsum(d, axis=0)
    v_mid = v - 0.5 * d
    resid = np.abs(v_mid - f_mids - _midpoint_operator(h, n, v0, slopes, params)).max()
    return VolterraSolution(
        t_grid=grid,
        V_minus=_nodal(slopes[:, 0]),
        V_plus=_nodal(slopes[:, 1]),
        v_minus=v[:, 0],
        v_plus=v[:, 1],
        h=h,
        v0=tuple(v0.tolist()),
        slopes=slopes,
        residual=float(resid),
        residual_tol=10 * h if residual_tol is None else float(residual_tol),
    )


def _nodal(cell):
    out = np.empty_like(cell)
    if cell.size == 1:
        out[:] = cell
        return out
    out[:-1] = 0.5 * (cell[:-1] + cell[1:])
    out[-1] = 1.5 * cell[-1] - 0.5 * cell[-2]
    return out


def solve_picard(initial, t_grid=None, params=None, *, h=None, T=None):
    """Windowed Picard iteration on the integrated equations.

    ``v`` is piecewise constant with its right-endpoint value on every cell.
    Windows are short enough that the kernel's L1 mass stays below
    ``1/(2 sqrt 2)``; each window iterates to ``PICARD_TOL`` in sup norm and
    switches to damping 0.5 if successive corrections stop shrinking.
    """
    params = ThetaParams() if params is None else params
    h, n = _uniform_grid(t_grid, h, T)
    grid = np.arange(1, n + 1) * h
    f_m, f_p = forcing(initial, grid, params)
    f = np.stack([f_m, f_p], axis=1)
    nodes = np.arange(n + 1) * h
    # cell weights: int over cell k of K(t_j - s) ds = A((j-k+1)h) - A((j-k)h)
    k_same = -np.diff(theta_time_integral(0.0, nodes, params))
    k_cross = np.diff(theta_time_integral(1.0, nodes, params))

    total = np.abs(k_same).cumsum() + np.abs(k_cross).cumsum()
    width = max(1, int(np.searchsorted(total, CONTRACTION_BOUND)))
    v = np.tile(f[:1], (n, 1))
    start = 0
    while start < n:
        stop = min(n, start + width)
        v[start:stop] = v[start - 1] if start else f[0]
        damping = 1.0
        prev = np.inf
        for it in range(PICARD_MAX_ITER):
            conv_m = fftconvolve(v[:stop, 0], k_same[:stop])[:stop] + fftconvolve(v[:stop, 1], k_cross[:stop])[:stop]
            conv_p = fftconvolve(v[:stop, 0], k_cross[:stop])[:stop] + fftconvolve(v[:stop, 1], k_same[:stop])[:stop]
            new = f[start:stop] + np.stack([conv_m[start:stop], conv_p[start:stop]], axis=1)
            change = np.abs(new - v[start:stop]).max()
            if change >= prev and damping == 1.0:
                damping = 0.5
            v[start:stop] += damping * (new - v[start:stop])
            prev = change
            if change <= PICARD_TOL:
                break
        else:
            raise ConvergenceError(
                f"Picard iteration did not converge on [{start * h:.4g}, {stop * h:.4g}] "
                f"after {PICARD_MAX_ITER} iterations (last change {change:.2e})"
            )
        start = stop
    v0 = (initial.v0_minus, initial.v0_plus)
    slopes = np.diff(np.vstack([v0, v]), axis=0) / h
    return VolterraSolution(
        t_grid=grid,
        V_minus=_nodal(slopes[:, 0]),
        V_plus=_nodal(slopes[:, 1]),
        v_minus=v[:, 0].copy(),
        v_plus=v[:, 1].copy(),
        h=h,
        v0=v0,
        slopes=slopes,
        method="picard",
    )


def absorbed_initial_term(initial, r, t, params=None):
    """``int_0^1 u0(q) [theta(r - q, t) - theta(r + q, t)] dq`` for an array of r."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    u0 = initial.u0

    def integrand(q):
        return float(u0(np.array(q))) * (theta(r - q, t, params) - theta(r + q, t, params))

    pts = list(initial.breakpoints) + [p for p in r.tolist() if 0 < p < 1]
    return _quad(integrand, pts, epsabs=1e-12)


def evaluate_u(r, t, vol, initial, params=None):
    """``u(r, t)`` from the boundary values of ``vol``.

    ``u = I0 + int_0^t F_r(t - s) dv_-(s) + int_0^t G_r(t - s) dv_+(s)`` where
    ``I0`` is the absorbed evolution of ``u0`` and ``dv`` includes the initial
    jump ``v0``.  For piecewise-linear ``v`` the boundary integrals are exact.
    Points with ``r <= 0`` or ``r >= 1`` return ``v_-(t)`` or ``v_+(t)``.
    """
    t = float(t)
    if not t > 0:
        raise ValueError("t must be > 0")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    vm, vp = vol.values(t)
    out = np.empty_like(r)
    left, right = r <= 0.0, r >= 1.0
    out[left], out[right] = vm, vp
    inside = ~(left | right)
    if not inside.any():
        return out
    ri = r[inside]
    F, G = hitting_split_continuum(ri, t, params)
    val = absorbed_initial_term(initial, ri, t, params) + vol.v0[0] * F + vol.v0[1] * G
    n_cells = min(vol.slopes.shape[0], int(math.ceil(t / vol.h - 1e-9)))
    if n_cells:
        nodes = np.arange(n_cells + 1) * vol.h
        lag = np.clip(t - nodes, 0.0, None)[None, :]
        eF = hitting_split_integral(ri[:, None], lag, params)
        eG = hitting_split_integral(1.0 - ri[:, None], lag, params)
        val += (eF[:, :-1] - eF[:, 1:]) @ vol.slopes[:n_cells, 0]
        val += (eG[:, :-1] - eG[:, 1:]) @ vol.slopes[:n_cells, 1]
    out[inside] = val
    return out


@dataclass(frozen=True)
class FBPSolution:
    initial: InitialData
    volterra: VolterraSolution
    params: ThetaParams
    picard: VolterraSolution = None
    agreement: float = np.nan
    agreement_tol: float = np.inf

    @property
    def agreed(self):
        return self.picard is None or self.agreement <= self.agreement_tol

    @property
    def flagged(self):
        return self.volterra.flagged or not self.agreed

    def u(self, r, t):
        """``u`` on the tensor grid ``r x t``, shape ``(len(t), len(r))`` (scalars squeezed)."""
        r_arr = np.atleast_1d(np.asarray(r, dtype=float))
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([evaluate_u(r_arr, tk, self.volterra, self.initial, self.params) for tk in t_arr])
        if np.ndim(r) == 0 and np.ndim(t) == 0:
            return float(out[0, 0])
        if np.ndim(t) == 0:
            return out[0]
        if np.ndim(r) == 0:
            return out[:, 0]
        return out

    @property
    def u_eval(self):
        return self.u

    def boundary_values(self, t):
        return self.volterra.values(t)

    def mass(self, t, n_nodes=200):
        """``int_0^1 u(r, t) dr + v_-(t) + v_+(t)`` by Gauss-Legendre in r."""
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        r = 0.5 * (x + 1.0)
        vm, vp = self.volterra.values(t)
        return 0.5 * w @ self.u(r, t) + vm + vp

    def u_to_csv(self, path, r, t):
        vals = np.atleast_2d(self.u(np.atleast_1d(r), np.atleast_1d(t)))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("r,t,u\n")
            for k, tk in enumerate(np.atleast_1d(t).tolist()):
                fh.writelines(f"{ri!r},{tk!r},{v!r}\n" for ri, v in zip(np.atleast_1d(r).tolist(), vals[k].tolist()))


def solve_fbp(initial, t_grid=None, params=None, *, h=None, T=None, cross_check=True):
    """Collocation solve plus the Picard cross-check.

    The two discretizations must agree within ``10 h`` in sup norm over the
    grid; otherwise the solution is flagged.
    """
    params = ThetaParams() if params is None else params
    vol = solve_volterra(initial, t_grid, params, h=h, T=T)
    if not cross_check:
        return FBPSolution(initial, vol, params)
    pic = solve_picard(initial, vol.t_grid, params)
    gap = max(np.abs(vol.v_minus - pic.v_minus).max(), np.abs(vol.v_plus - pic.v_plus).max())
    return FBPSolution(initial, vol, params, pic, float(gap), 10 * vol.h)


def flux_identity_residual(sol, t_grid, dr=1e-3):
    """Largest mismatch between ``v_+-'`` and the one-sided boundary fluxes of ``u``.

    Compares ``V_-(t)`` with ``(u(dr, t) - v_-(t)) / (2 dr)`` and ``V_+(t)`` with
    ``-(v_+(t) - u(1 - dr, t)) / (2 dr)``.
    """
    t_grid = check_time_grid(t_grid, name="t_grid", strictly_positive=True, increasing=False)
    vol = sol.volterra
    if t_grid.max() > vol.T:
        raise ValueError("t_grid exceeds the solved range")
    Vm, Vp = vol.derivatives(t_grid)
    worst = 0.0
    for k, t in enumerate(t_grid):
        vm, vp = vol.values(t)
        u_in = evaluate_u(np.array([dr, 1.0 - dr]), t, vol, sol.initial, sol.params)
        worst = max(worst, abs(Vm[k] - (u_in[0] - vm) / (2 * dr)), abs(Vp[k] + (vp - u_in[1]) / (2 * dr)))
    return float(worst)


def step_halving_order(initial, t, h, params=None, levels=3):
    """Empirical order from successive differences at ``t`` under step halving."""
    sols = []
    for i in range(levels):
        hi = h / 2**i
        sol = solve_volterra(initial, params=params, h=hi, T=t)
        sols.append(np.array([sol.v_minus[-1], sol.v_plus[-1]]))
    diffs = [np.abs(a - b).max() for a, b in zip(sols[:-1], sols[1:])]
    orders = [math.log2(a / b) for a, b in zip(diffs[:-1], diffs[1:])]
    return min(orders), diffs


class FreeBoundarySolver(BaseEstimator):
    """Estimator wrapper around :func:`solve_fbp`.

    ``fit`` takes an :class:`InitialData`; ``predict`` maps rows ``(r, t)`` to
    ``u(r, t)``.

    Parameters
    ----------
    h : float
        Time step.
    T : float
        Horizon, a multiple of ``h``.
    tail_tol, n_max_cap
        Image-sum truncation.
    cross_check : bool
        Also run the Picard solver and record the agreement.
    """

    def __init__(self, h=1e-3, T=1.0, tail_tol=DEFAULT_TAIL_TOL, n_max_cap=64, cross_check=True):
        self.h = h
        self.T = T
        self.tail_tol = tail_tol
        self.n_max_cap = n_max_cap
        self.cross_check = cross_check

    def fit(self, X, y=None):
        if not isinstance(X, InitialData):
            raise TypeError("fit expects an InitialData instance")
        params = ThetaParams(self.tail_tol, self.n_max_cap)
        self.solution_ = solve_fbp(X, params=params, h=self.h, T=self.T, cross_check=self.cross_check)
        self.volterra_ = self.solution_.volterra
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have shape (n_points, 2) with columns (r, t)")
        out = np.empty(X.shape[0])
        for t in np.unique(X[:, 1]):
            sel = X[:, 1] == t
            out[sel] = self.solution_.u(X[sel, 0], t)
        return out

    def boundary_values(self, t):
        check_is_fitted(self, "solution_")
        return self.solution_.boundary_values(t)
