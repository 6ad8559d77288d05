"""First-moment equations of the exclusion process with mean-field reservoirs.

The mean profile solves ``d rho / dt = L rho`` where ``L`` is the sticky walk
generator acting on functions of ``{0..N+1}``.  ``L`` is self-adjoint for the
weights ``w = (N, 1, ..., 1, N)``, so ``W^{1/2} L W^{-1/2}`` is a symmetric
tridiagonal matrix and the flow is evaluated exactly from its eigensystem.
An adaptive BDF integration is available as an independent route.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse import diags
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConvergenceError, check_lattice_size, check_profile, check_time_grid
from .lattice import InitialData, LatticeSpec, sticky_weights, total_mass

METHODS = ("spectral", "ivp")


@dataclass(frozen=True)
class MeanTrajectory:
    """Mean profiles at microscopic times ``t_grid`` (rows of ``profiles``)."""

    N: int
    t_grid: np.ndarray
    profiles: np.ndarray

    @property
    def tau_grid(self):
        return self.t_grid / self.N**2

    def masses(self):
        return np.array([total_mass(p) for p in self.profiles])

    def to_csv(self, path):
        K, S = self.profiles.shape
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t,site,value\n")
            for k in range(K):
                t = float(self.t_grid[k])
                fh.writelines(f"{t!r},{x},{v!r}\n" for x, v in enumerate(self.profiles[k].tolist()))


def _symmetric_bands(N):
    d = np.full(N + 2, -1.0)
    d[0] = d[-1] = -1.0 / (2 * N)
    e = np.full(N + 1, 0.5)
    e[0] = e[-1] = 1.0 / (2.0 * np.sqrt(N))
    return d, e


def sticky_operator(N):
    """Sparse generator of the sticky walk acting on functions of 0..N+1."""
    N = check_lattice_size(N)
    lower = np.full(N + 1, 0.5)
    upper = np.full(N + 1, 0.5)
    upper[0] = lower[-1] = 1.0 / (2 * N)
    main = np.full(N + 2, -1.0)
    main[0] = main[-1] = -1.0 / (2 * N)
    return diags([lower, main, upper], [-1, 0, 1], format="csr")


class _SpectralFlow:
    def __init__(self, N):
        d, e = _symmetric_bands(N)
        lam, V = eigh_tridiagonal(d, e)
        # L is a generator: its spectrum is <= 0, the top eigenvalue is exactly 0
        self.lam = np.minimum(lam, 0.0)
        self.V = V
        self.sw = np.sqrt(sticky_weights(N))

    def __call__(self, rho0, t_grid):
        c = self.V.T @ (self.sw * rho0)
        decay = np.exp(np.outer(t_grid, self.lam))
        return (decay * c) @ self.V.T / self.sw


def _evolve_ivp(rho0, t_grid, N, tol):
    A = sticky_operator(N)
    res = solve_ivp(
        lambda _, y: A @ y,
        (0.0, float(t_grid[-1])),
        rho0,
        method="BDF",
        t_eval=t_grid,
        rtol=tol,
        atol=tol,
        jac=A,
    )
    if not res.success:
        raise ConvergenceError(f"mean ODE integration failed: {res.message}")
    return res.y.T


def evolve_mean_ode(initial, tau_grid, *, N=None, method="spectral", tol=1e-10):
    """Mean profile at macroscopic times ``tau_grid`` (microscopic ``t = N^2 tau``).

    Parameters
    ----------
    initial : array_like or InitialData
        Profile on 0..N+1, or a datum discretized with ``N``.
    tau_grid : array_like
        Nondecreasing macroscopic times >= 0.
    method : {"spectral", "ivp"}
        Exact eigen-expansion or adaptive BDF at tolerance ``tol``.
    """
    if isinstance(initial, InitialData):
        if N is None:
            raise ValueError("N is required when passing InitialData")
        rho0 = initial.lattice_profile(N)
    else:
        rho0 = check_profile(initial, N)
        N = rho0.shape[0] - 2
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    spec = LatticeSpec(N)
    t_grid = spec.to_micro(check_time_grid(tau_grid, name="tau_grid"))
    if method == "spectral":
        profiles = _SpectralFlow(N)(rho0, t_grid)
    else:
        profiles = _evolve_ivp(rho0, t_grid, N, tol)
    return MeanTrajectory(N, t_grid, profiles)


def conservation_drift(traj):
    """Largest relative change of the mass functional along the trajectory."""
    if traj.profiles.shape[0] == 0:
        raise ValueError("empty trajectory")
    m = traj.masses()
    if m[0] == 0:
        return 0.0
    return float(np.abs(m - m[0]).max() / abs(m[0]))


def boundary_modulus(traj, side="minus"):
    """Empirical Holder-1/2 constant of a boundary density.

    ``sup |rho(b, t) - rho(b, s)| / (eps |t - s|^{1/2})`` over distinct grid
    times, with ``b = 0`` for ``side="minus"`` and ``b = N+1`` otherwise.
    """
    col = 0 if side == "minus" else -1
    t = np.asarray(traj.t_grid, dtype=float)
    y = traj.profiles[:, col]
    i, j = np.triu_indices(t.size, k=1)
    dt = np.abs(t[j] - t[i])
    keep = dt > 0
    if not keep.any():
        raise ValueError("need at least two distinct times")
    ratio = np.abs(y[j] - y[i])[keep] / (np.sqrt(dt[keep]) / traj.N)
    return float(ratio.max())


class MeanFieldODE(BaseEstimator):
    """Estimator wrapper: ``fit`` takes the initial profile, ``predict`` the times.

    Parameters
    ----------
    N : int
        Channel size.
    method : {"spectral", "ivp"}
    tol : float
        Integrator tolerance for ``method="ivp"``.
    """

    def __init__(self, N=50, method="spectral", tol=1e-10):
        self.N = N
        self.method = method
        self.tol = tol

    def fit(self, X, y=None):
        N = check_lattice_size(self.N)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if isinstance(X, InitialData):
            self.initial_profile_ = X.lattice_profile(N)
        else:
            self.initial_profile_ = check_profile(X, N)
        self.mass_ = total_mass(self.initial_profile_)
        return self

    def predict(self, X):
        """Profiles at macroscopic times ``X``, shape ``(len(X), N + 2)``."""
        return self.trajectory(X).profiles

    def trajectory(self, X):
        check_is_fitted(self, "initial_profile_")
        return evolve_mean_ode(self.initial_profile_, X, method=self.method, tol=self.tol)
