"""Monte Carlo simulation of the exclusion processes and of the sticky walk.

Two particle processes share one event loop:

* ``omega``: channel bits plus reservoir particle counts ``n_-, n_+``;
* ``omega_star``: channel bits plus bit vectors over the two reservoirs
  (stirring on Sigma_N), whose reservoir counts follow the ``omega`` law.

Events are uniformized at total rate ``(N - 1)/2 + 1``: a single uniform picks
either a channel bond (rate 1/2 each) or a reservoir site of one of the two
boundary bond groups (rate 1/(2N) each).  Each replica owns an independent
Philox stream keyed by ``(seed, process, replica)``, so results do not depend
on how replicas are spread over workers.
"""

import gzip
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from ._validation import check_lattice_size, check_time_grid
from .lattice import InitialData, LatticeSpec, reservoir_count

WORKERS_ENV = "STICKY_HYDRO_WORKERS"
PROCESS_KINDS = ("omega", "omega_star")
_STREAM_TAG = {"omega": 1, "omega_star": 2, "sticky_walk": 3}


def worker_count():
    """Worker processes from ``STICKY_HYDRO_WORKERS``, default all available CPUs."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw.strip() == "":
        try:
            return max(1, len(os.sched_getaffinity(0)))
        except AttributeError:  # pragma: no cover
            return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def replica_rng(seed, kind, replica):
    ss = np.random.SeedSequence(int(seed), spawn_key=(_STREAM_TAG[kind], int(replica)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimConfig:
    spec: LatticeSpec
    horizon: float
    initial: InitialData
    replicas: int
    seed: int
    process_kind: str = "omega_star"
    sample_times: tuple = ()

    def __post_init__(self):
        if not isinstance(self.spec, LatticeSpec):
            object.__setattr__(self, "spec", LatticeSpec(check_lattice_size(self.spec)))
        if self.process_kind not in PROCESS_KINDS:
            raise ValueError(f"process_kind must be one of {PROCESS_KINDS}")
        if int(self.replicas) < 1:
            raise ValueError("replicas must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        times = self.sample_times if len(self.sample_times) else (self.horizon,)
        times = check_time_grid(times, name="sample_times")
        if times[-1] > self.horizon * (1 + 1e-12):
            raise ValueError("sample_times must lie in [0, horizon]")
        object.__setattr__(self, "sample_times", tuple(float(s) for s in times))

    @property
    def micro_times(self):
        return self.spec.to_micro(np.array(self.sample_times))


@dataclass
class TrajectorySamples:
    """Occupations at the sample times.

    ``eta[r, k, x-1]`` is the bit at channel site x, ``reservoir[r, k]`` the
    pair ``(n_-, n_+)`` and ``total[r, k]`` the particle number of replica r at
    the k-th sample time.
    """

    config: SimConfig
    eta: np.ndarray
    reservoir: np.ndarray
    total: np.ndarray = field(repr=False)

    @property
    def n_replicas(self):
        return self.eta.shape[0]

    @property
    def tau(self):
        return np.array(self.config.sample_times)

    def profiles(self):
        """Per-replica profiles on 0..N+1, reservoir slots as densities n/M."""
        R, K, N = self.eta.shape
        out = np.empty((R, K, N + 2))
        out[:, :, 1:-1] = self.eta
        out[:, :, 0] = self.reservoir[:, :, 0] / N
        out[:, :, -1] = self.reservoir[:, :, 1] / N
        return out

    def to_csv(self, path, compress=None):
        """Write rows ``replica,tau,site,value``; gzip when the name ends in .gz."""
        path = os.fspath(path)
        compress = path.endswith(".gz") if compress is None else compress
        prof = self.profiles()
        R, K, S = prof.shape
        opener = gzip.open if compress else open
        with opener(path, "wt", encoding="utf-8", newline="") as fh:
            fh.write("replica,tau,site,value\n")
            sites = np.arange(S)
            for r in range(R):
                for k, tau in enumerate(self.tau):
                    fh.writelines(
                        f"{r},{tau!r},{x},{v!r}\n" for x, v in zip(sites, prof[r, k].tolist())
                    )


# Sigma_N layout in the state vector: [0, N) left reservoir, [N, 2N) channel, [2N, 3N) right.


@numba.njit(cache=True)
def _run_star(state, N, n_events, rng, out_eta, out_res, out_total):
    half_bonds = 0.5 * (N - 1)
    rate = half_bonds + 1.0
    for k in range(n_events.shape[0]):
        for _ in range(n_events[k]):
            u = rng.random() * rate
            if u < half_bonds:
                a = N + int(2.0 * u)
                b = a + 1
            else:
                w = 2.0 * (u - half_bonds)
                if w < 1.0:
                    a = int(w * N)
                    b = N
                else:
                    a = 2 * N - 1
                    b = 2 * N + int((w - 1.0) * N)
            tmp = state[a]
            state[a] = state[b]
            state[b] = tmp
        nm = 0
        np_ = 0
        for z in range(N):
            nm += state[z]
            np_ += state[2 * N + z]
        tot = nm + np_
        for x in range(N):
            out_eta[k, x] = state[N + x]
            tot += state[N + x]
        out_res[k, 0] = nm
        out_res[k, 1] = np_
        out_total[k] = tot


@numba.njit(cache=True)
def _run_counts(eta, counts, N, n_events, rng, out_eta, out_res, out_total):
    half_bonds = 0.5 * (N - 1)
    rate = half_bonds + 1.0
    for k in range(n_events.shape[0]):
        for _ in range(n_events[k]):
            u = rng.random() * rate
            if u < half_bonds:
                a = int(2.0 * u)
                tmp = eta[a]
                eta[a] = eta[a + 1]
                eta[a + 1] = tmp
            else:
                w = 2.0 * (u - half_bonds)
                side = 0 if w < 1.0 else 1
                site = 0 if side == 0 else N - 1
                # the chosen reservoir site is occupied iff its rank is below the count
                occupied = int((w - side) * N) < counts[side]
                if occupied and eta[site] == 0:
                    eta[site] = 1
                    counts[side] -= 1
                elif not occupied and eta[site] == 1:
                    eta[site] = 0
                    counts[side] += 1
        tot = counts[0] + counts[1]
        for x in range(N):
            out_eta[k, x] = eta[x]
            tot += eta[x]
        out_res[k, 0] = counts[0]
        out_res[k, 1] = counts[1]
        out_total[k] = tot


def _block_inputs(config):
    """Plain arrays for the workers; the datum itself need not be picklable."""
    N = config.spec.N
    p = np.clip(config.initial(np.arange(1, N + 1) / N), 0.0, 1.0)
    n0 = (reservoir_count(config.initial.v0_minus, N), reservoir_count(config.initial.v0_plus, N))
    return N, config.micro_times, p, n0, int(config.seed), config.process_kind


def _simulate_block(inputs, start, stop):
    N, micro, p, n0, seed, kind = inputs
    dt = np.diff(np.concatenate([[0.0], micro]))
    rate = 0.5 * (N - 1) + 1.0
    R, K = stop - start, micro.size
    eta = np.empty((R, K, N), dtype=np.uint8)
    res = np.empty((R, K, 2), dtype=np.int64)
    tot = np.empty((R, K), dtype=np.int64)
    for i, r in enumerate(range(start, stop)):
        rng = replica_rng(seed, kind, r)
        channel = (rng.random(N) < p).astype(np.uint8)
        n_events = rng.poisson(rate * dt).astype(np.int64)
        if kind == "omega_star":
            state = np.zeros(3 * N, dtype=np.uint8)
            state[rng.choice(N, n0[0], replace=False)] = 1
            state[2 * N + rng.choice(N, n0[1], replace=False)] = 1
            state[N : 2 * N] = channel
            _run_star(state, N, n_events, rng, eta[i], res[i], tot[i])
        else:
            counts = np.array(n0, dtype=np.int64)
            _run_counts(channel, counts, N, n_events, rng, eta[i], res[i], tot[i])
    return eta, res, tot


def _blocks(replicas, workers):
    n_blocks = min(replicas, max(1, 4 * workers))
    edges = np.linspace(0, replicas, n_blocks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _simulate(config, workers=None):
    workers = worker_count() if workers is None else int(workers)
    blocks = _blocks(int(config.replicas), workers)
    inputs = _block_inputs(config)
    if workers == 1 or len(blocks) == 1:
        parts = [_simulate_block(inputs, a, b) for a, b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_simulate_block, inputs, a, b) for a, b in blocks]
            parts = [f.result() for f in futures]
    eta, res, tot = (np.concatenate(x) for x in zip(*parts))
    return TrajectorySamples(config, eta, res, tot)


def simulate_omega(config, workers=None):
    """Channel bits with counting reservoirs, sampled at ``config.sample_times``."""
    if config.process_kind != "omega":
        raise ValueError("simulate_omega requires process_kind='omega'")
    return _simulate(config, workers)


def simulate_omega_star(config, workers=None):
    """Stirring on Sigma_N with labelled reservoir sites."""
    if config.process_kind != "omega_star":
        raise ValueError("simulate_omega_star requires process_kind='omega_star'")
    return _simulate(config, workers)


@dataclass(frozen=True)
class StickyWalkPath:
    """Piecewise-constant path: ``positions[i]`` holds on ``[jump_times[i], jump_times[i+1])``.

    ``jump_times[0] = 0`` and the last sojourn is censored at ``horizon``.
    """

    jump_times: np.ndarray
    positions: np.ndarray
    horizon: float
    N: int

    def durations(self):
        return np.diff(np.append(self.jump_times, self.horizon))

    @property
    def sojourns_at_boundary(self):
        """Completed boundary sojourns as ``(site, duration)`` pairs."""
        d = self.durations()[:-1]
        pos = self.positions[:-1]
        at = (pos == 0) | (pos == self.N + 1)
        return list(zip(pos[at].tolist(), d[at].tolist()))

    def interior_sojourns(self):
        d = self.durations()[:-1]
        pos = self.positions[:-1]
        return d[(pos > 0) & (pos <= self.N)]

    def position_at(self, t):
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="right") - 1
        return self.positions[idx]

    def occupation(self):
        """Fraction of ``[0, horizon]`` spent at each site of 0..N+1."""
        occ = np.bincount(self.positions, weights=self.durations(), minlength=self.N + 2)
        return occ / self.horizon


@numba.njit(cache=True)
def _reflected_walk(N, x0, horizon, stretch, rng, max_jumps):
    times = np.empty(max_jumps + 1)
    pos = np.empty(max_jumps + 1, dtype=np.int64)
    t = 0.0
    x = x0
    n = 0
    while True:
        times[n] = t
        pos[n] = x
        boundary = x == 0 or x == N + 1
        hold = rng.standard_exponential()
        if boundary:
            hold *= stretch
        t += hold
        if t >= horizon or n == max_jumps:
            break
        n += 1
        if x == 0:
            x = 1
        elif x == N + 1:
            x = N
        elif rng.random() < 0.5:
            x -= 1
        else:
            x += 1
    return times[: n + 1], pos[: n + 1], n == max_jumps and t < horizon


def simulate_sticky_walk(spec, x0, horizon_micro, seed, *, replica=0, max_jumps=None):
    """Sticky walk via the time change of the reflected walk.

    The reflected walk leaves every site at rate 1 (from 0 and N+1 always
    inward).  Each sojourn at 0 or N+1 is then stretched by the factor 2N,
    turning the boundary holding law Exp(1) into Exp(1/(2N)).
    """
    N = spec.N if isinstance(spec, LatticeSpec) else check_lattice_size(spec)
    if int(x0) != x0 or not 0 <= x0 <= N + 1:
        raise ValueError(f"x0 must be a site of 0..{N + 1}")
    if not horizon_micro > 0:
        raise ValueError("horizon_micro must be > 0")
    if max_jumps is None:
        # every sojourn has mean >= 1, so this bound is exceeded with negligible probability
        max_jumps = int(1.2 * horizon_micro + 50.0 * math.sqrt(horizon_micro) + 1000)
    rng = replica_rng(seed, "sticky_walk", replica)
    times, pos, truncated = _reflected_walk(N, int(x0), float(horizon_micro), 2.0 * N, rng, max_jumps)
    if truncated:
        raise RuntimeError("max_jumps reached before the horizon")
    return StickyWalkPath(times.copy(), pos.copy(), float(horizon_micro), N)


@numba.njit(cache=True)
def _endpoints(N, x0, t, stretch, rng, n_paths):
    out = np.empty(n_paths, dtype=np.int64)
    for i in range(n_paths):
        s = 0.0
        x = x0
        while True:
            hold = rng.standard_exponential()
            if x == 0 or x == N + 1:
                hold *= stretch
            s += hold
            if s >= t:
                break
            if x == 0:
                x = 1
            elif x == N + 1:
                x = N
            elif rng.random() < 0.5:
                x -= 1
            else:
                x += 1
        out[i] = x
    return out


def sample_sticky_positions(spec, x0, t, n_paths, seed, *, replica=0):
    """Positions at time ``t`` of ``n_paths`` independent sticky walks from ``x0``."""
    N = spec.N if isinstance(spec, LatticeSpec) else check_lattice_size(spec)
    if not 0 <= x0 <= N + 1:
        raise ValueError(f"x0 must be a site of 0..{N + 1}")
    if t < 0:
        raise ValueError("t must be >= 0")
    rng = replica_rng(seed, "sticky_walk", replica)
    return _endpoints(N, int(x0), float(t), 2.0 * N, rng, int(n_paths))


@dataclass(frozen=True)
class DensityEstimate:
    tau: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


def estimate_density(samples):
    """Replica mean and standard error of the profile on 0..N+1 at every sample time."""
    if samples.n_replicas < 2:
        raise ValueError("need at least 2 replicas")
    prof = samples.profiles()
    return DensityEstimate(
        samples.tau, prof.mean(axis=0), prof.std(axis=0, ddof=1) / math.sqrt(prof.shape[0])
    )


@dataclass(frozen=True)
class TwoPointEstimate:
    tau: np.ndarray
    pairs: tuple
    covariance: np.ndarray
    stderr: np.ndarray

    def max_abs(self, k=-1):
        """Largest |covariance| over pairs at sample index ``k`` and its stderr."""
        i = int(np.argmax(np.abs(self.covariance[k])))
        return float(abs(self.covariance[k, i])), float(self.stderr[k, i])


def jackknife_covariance(x, y):
    """Sample covariance (ddof=1) of paired draws along axis 0 with delete-one jackknife stderr."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 replicas")
    sx, sy, sxy = x.sum(0), y.sum(0), (x * y).sum(0)
    cov = (sxy - sx * sy / n) / (n - 1)
    if n < 3:
        return cov, np.full_like(cov, np.nan)
    m = n - 1
    loo = ((sxy - x * y) - (sx - x) * (sy - y) / m) / (m - 1)
    dev = loo - loo.mean(0)
    se = np.sqrt((n - 1) / n * (dev * dev).sum(0))
    return cov, se


def _channel_column(N, site):
    if int(site) != site or not 1 <= site <= N:
        raise ValueError(f"pair sites must be channel sites 1..{N}, got {site!r}")
    return int(site) - 1


def estimate_two_point(samples, pairs):
    """Covariance ``E[eta(x1) eta(x2)] - E[eta(x1)] E[eta(x2)]`` for each channel pair."""
    if samples.n_replicas < 2:
        raise ValueError("need at least 2 replicas")
    pairs = tuple((int(a), int(b)) for a, b in pairs)
    if not pairs:
        raise ValueError("no pairs requested")
    N = samples.eta.shape[2]
    cols = []
    for a, b in pairs:
        if a == b:
            raise ValueError(f"coincident pair ({a}, {b})")
        cols.append((_channel_column(N, a), _channel_column(N, b)))
    i, j = np.array(cols).T
    cov, se = jackknife_covariance(samples.eta[:, :, i], samples.eta[:, :, j])
    return TwoPointEstimate(samples.tau, pairs, cov, se)
