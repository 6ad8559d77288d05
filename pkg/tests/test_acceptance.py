"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from sticky_hydro.ctmc import (
    build_sticky_generator,
    liggett_inequality_check,
    semigroup_apply,
    transition_matrix,
    transition_probabilities,
)
from sticky_hydro.fbp import flux_identity_residual, solve_fbp, step_halving_order
from sticky_hydro.harness.config import parse_config_text
from sticky_hydro.harness.experiments import (
    E400_THRESHOLD,
    MIN_CHAOS_REPLICAS,
    heat_relation_residual,
    run_chaos_decay,
    run_hydro_convergence,
)
from sticky_hydro.kernels import theta
from sticky_hydro.lattice import InitialData, LatticeSpec, inner_product, sticky_measure
from sticky_hydro.mean_ode import conservation_drift, evolve_mean_ode
from sticky_hydro.particles import (
    SimConfig,
    sample_sticky_positions,
    simulate_omega,
    simulate_omega_star,
    simulate_sticky_walk,
)

LINEAR = InitialData.linear()


def test_duality(record_criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for N in (4, 10, 20):
        gen = build_sticky_generator(N)
        for _ in range(3):
            rho0 = rng.random(N + 2)
            taus = np.array([0.1, 1.0, 10.0])
            traj = evolve_mean_ode(rho0, taus)
            for k, tau in enumerate(taus):
                dual = transition_matrix(gen, tau * N**2) @ rho0
                worst = max(worst, float(np.abs(traj.profiles[k] - dual).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10
    record_criterion(1, "duality", ok, f"max diff {worst:.2e} <= 1e-8, {elapsed:.2f}s < 10s")
    assert ok


def test_conservation(record_criterion):
    rng = np.random.default_rng(2)
    drift = 0.0
    for N in (2, 5, 20, 100, 400):
        for method in ("spectral", "ivp"):
            rho0 = rng.random(N + 2)
            taus = np.linspace(0.0, 1.0, 21)
            drift = max(drift, conservation_drift(evolve_mean_ode(rho0, taus, method=method)))
        for datum in (LINEAR, InitialData.step(), InitialData.sine()):
            drift = max(drift, conservation_drift(evolve_mean_ode(datum, np.linspace(0, 2.0, 41), N=N)))
    pathwise = True
    taus = tuple(np.linspace(0.02, 0.5, 25))
    for N in (6, 25):
        for kind, sim in (("omega", simulate_omega), ("omega_star", simulate_omega_star)):
            datum = InitialData.from_table([0, 1], [0.2, 0.8], v0_minus=0.4, v0_plus=0.6)
            out = sim(SimConfig(LatticeSpec(N), 0.5, datum, 500, 7, kind, taus))
            pathwise &= bool(np.all(out.total == out.total[:, :1]))
    ok = drift < 1e-9 and pathwise
    record_criterion(2, "conservation of mass", ok, f"max relative drift {drift:.2e} < 1e-9, pathwise={pathwise}")
    assert ok


def test_self_adjointness_and_detailed_balance(record_criterion):
    rng = np.random.default_rng(3)
    worst_sa = 0.0
    worst_db = 0.0
    for N in range(2, 21):
        gen = build_sticky_generator(N)
        Q = gen.dense()
        mu = sticky_measure(N)
        worst_db = max(worst_db, float(np.abs(mu[:, None] * Q - (mu[:, None] * Q).T).max()))
        for t in (0.1, 1.0, 10.0):
            phi, psi = rng.random((2, N + 2))
            for apply in (
                lambda v: semigroup_apply(gen, t, v, side="right"),
                lambda v: evolve_mean_ode(v, [t / N**2]).profiles[0],
            ):
                a = inner_product(phi, apply(psi))
                b = inner_product(psi, apply(phi))
                worst_sa = max(worst_sa, abs(a - b))
    ok = worst_sa <= 1e-10 and worst_db <= 1e-10
    record_criterion(3, "self-adjointness and detailed balance", ok,
                     f"|<phi,P psi>-<psi,P phi>| {worst_sa:.2e}, balance {worst_db:.2e} <= 1e-10")
    assert ok


def _boundary_sojourns(N, count, seed):
    horizon = 1.5 * count * 3 * N
    vals = np.array([d for _, d in simulate_sticky_walk(N, 0, horizon, seed).sojourns_at_boundary])
    assert vals.size >= count
    return vals[:count]


def test_sticky_walk_construction(record_criterion):
    details = []
    ok = True
    for N in (6, 10):
        b = _boundary_sojourns(N, 10_000, seed=100 + N)
        z = abs(b.mean() - 2 * N) / (b.std(ddof=1) / math.sqrt(b.size))
        path = simulate_sticky_walk(N, N // 2, 40_000.0, seed=200 + N)
        inner = path.interior_sojourns()[:10_000]
        p = stats.kstest(inner, "expon").pvalue
        ok &= z <= 3 and p > 0.01 and inner.size == 10_000
        details.append(f"N={N}: boundary z={z:.2f}, interior KS p={p:.3f}")
    N, n = 6, 10_000
    gen = build_sticky_generator(N)
    zmax = 0.0
    for x0 in range(N + 2):
        prob = transition_probabilities(gen, 1.0, x0)
        freq = np.bincount(sample_sticky_positions(N, x0, 1.0, n, seed=300, replica=x0), minlength=N + 2) / n
        se = np.sqrt(prob * (1 - prob) / n)
        mask = se > 0
        zmax = max(zmax, float((np.abs(freq - prob)[mask] / se[mask]).max()))
        ok &= bool(np.all(freq[~mask] == prob[~mask].round()))
    ok &= zmax <= 4
    details.append(f"N=6 transitions max z={zmax:.2f}")
    record_criterion(4, "sticky-walk construction", ok, "; ".join(details))
    assert ok


def test_theta_identities(record_criterion):
    r = np.linspace(-1.5, 1.5, 61)
    ts = (0.01, 0.1, 1.0, 10.0)
    sym = max(
        max(np.abs(theta(r, t) - theta(-r, t)).max(),
            np.abs(theta(r, t) - theta(2 - r, t)).max(),
            np.abs(theta(r, t) - theta(r + 2, t)).max())
        for t in ts
    )
    half = max(abs(quad(theta, 0, 1, args=(t,), epsabs=1e-13, epsrel=1e-13, limit=200)[0] - 0.5) for t in ts)
    heat = max(heat_relation_residual(r0, t0) for r0, t0 in [(0.4, 0.3), (0.1, 0.05), (0.7, 1.0), (0.0, 0.2)])
    ok = sym <= 1e-12 and half <= 1e-10 and heat <= 1e-5
    record_criterion(5, "theta identities", ok,
                     f"symmetry {sym:.1e} <= 1e-12, half-mass {half:.1e} <= 1e-10, heat {heat:.1e} <= 1e-5")
    assert ok


def test_stationarity_and_uniqueness_shadow(record_criterion):
    h = 1e-3
    dev = 0.0
    for c in (0.0, 0.3, 1.0):
        sol = solve_fbp(InitialData.constant(c), h=1e-2, T=1.0)
        dev = max(dev, np.abs(sol.volterra.v_minus - c).max(), np.abs(sol.volterra.v_plus - c).max(),
                  np.abs(sol.picard.v_minus - c).max(), np.abs(sol.picard.v_plus - c).max(),
                  np.abs(sol.u(np.linspace(0, 1, 11), [0.1, 0.5, 1.0]) - c).max())
    sol = solve_fbp(LINEAR, h=h, T=1.0)
    gap = sol.agreement
    order, _ = step_halving_order(LINEAR, 0.5, 1e-2, levels=3)
    ok = dev <= 1e-10 and gap <= 10 * h and order >= 0.9
    record_criterion(6, "FBP stationarity and uniqueness shadow", ok,
                     f"constants {dev:.1e} <= 1e-10, Picard gap {gap:.2e} <= {10 * h:g}, order {order:.2f} >= 0.9")
    assert ok


def test_flux_identity(record_criterion):
    residuals = []
    for h in (2e-3, 1e-3, 5e-4):
        sol = solve_fbp(LINEAR, h=h, T=0.25, cross_check=False)
        residuals.append(flux_identity_residual(sol, [0.25], dr=h))
    at_1e3 = residuals[1]
    ok = at_1e3 < 5e-3 and all(b < a for a, b in zip(residuals, residuals[1:]))
    record_criterion(7, "boundary flux identity", ok,
                     "residuals " + ", ".join(f"{r:.2e}" for r in residuals) + " (h=2e-3,1e-3,5e-4); < 5e-3 at h=1e-3")
    assert ok


def test_hydrodynamic_limit(record_criterion):
    start = time.perf_counter()
    cfg = parse_config_text("experiment = hydro-convergence\nN_list = 50,100,200,400\ntau_list = 0.1,0.5\nT = 0.5")
    rep = run_hydro_convergence(cfg)
    e = rep.metric("e_N")
    em, ep = rep.metric("err_minus"), rep.metric("err_plus")
    Ns = cfg.N_list
    dec = lambda m, tau: all(m[(b, tau)][0] < m[(a, tau)][0] for a, b in zip(Ns, Ns[1:]))  # noqa: E731
    e_dec = all(dec(e, tau) for tau in cfg.tau_list)
    b_dec = all(dec(m, tau) for m in (em, ep) for tau in cfg.tau_list)
    e400 = max(e[(400, tau)][0] for tau in cfg.tau_list)
    consistent = {c.name: c.passed for c in rep.checks}["fbp_consistent"]
    ok = e_dec and b_dec and e400 <= E400_THRESHOLD and consistent
    elapsed = time.perf_counter() - start
    series = ", ".join(f"{e[(N, 0.1)][0]:.2e}" for N in Ns)
    record_criterion(8, "hydrodynamic limit", ok,
                     f"e_N(tau=0.1) {series}; boundaries decreasing={b_dec}; e_400 {e400:.2e} <= {E400_THRESHOLD:g}; "
                     f"{elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_propagation_of_chaos(record_criterion):
    start = time.perf_counter()
    cfg = parse_config_text("experiment = chaos-decay\nN_list = 25,50,100\ntau_list = 0.25\nT = 0.25\nexact_N = 8")
    rep = run_chaos_decay(cfg)
    elapsed = time.perf_counter() - start
    checks = {c.name: c for c in rep.checks}
    cov = rep.metric("max_abs_cov")
    first, last = cov[(25, 0.25)], cov[(100, 0.25)]
    ok = (
        checks["exact_branch_agreement"].passed
        and last[0] < first[0]
        and cfg.replicas >= MIN_CHAOS_REPLICAS
        and checks["particles_conserved"].passed
        and elapsed < 600
    )
    record_criterion(9, "propagation of chaos", ok,
                     f"N=8 max z {checks['exact_branch_agreement'].value:.2f} <= 4; "
                     f"max|cov| N=25 {first[0]:.2e}+-{first[1]:.1e} -> N=100 {last[0]:.2e}+-{last[1]:.1e}; "
                     f"{cfg.replicas} replicas; {elapsed:.0f}s < 600s")
    assert ok


def test_liggett_inequality(record_criterion):
    worst = -np.inf
    checks = 0
    for N in (2, 3, 4, 5):
        for t in (0.1, 1.0, 5.0):
            rep = liggett_inequality_check(N, t, n_random=100, seed=N)
            worst = max(worst, rep.max_violation)
            checks += rep.n_checks
    ok = worst <= 1e-10
    record_criterion(10, "Liggett inequality", ok, f"max (left - right) {worst:.2e} <= 1e-10 over {checks} comparisons")
    assert ok


def test_long_time_equilibrium(record_criterion):
    level = 0.5
    sol = solve_fbp(LINEAR, h=1e-3, T=10.0, cross_check=False)
    vm, vp = sol.boundary_values(10.0)
    u = sol.u(np.linspace(0.0, 1.0, 21), 10.0)
    dev_fbp = max(abs(vm - level), abs(vp - level), float(np.abs(u - level).max()))
    ode = evolve_mean_ode(LINEAR, [10.0], N=200).profiles[0]
    dev_ode = float(np.abs(ode - level).max())
    ok = dev_fbp <= 5e-3 and dev_ode <= 5e-3
    record_criterion(11, "long-time equilibrium", ok, f"FBP {dev_fbp:.2e}, mean ODE N=200 {dev_ode:.2e} <= 5e-3")
    assert ok
