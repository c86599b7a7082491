from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from anderson_dephase.dephasing import coupling_matrix, power_law_profile, profile_from_exponent
from anderson_dephase.evolution import (
    FULL_LINDBLAD,
    RATE_EQUATION,
    DensityMatrix,
    MasterEquationEngine,
    PopulationVector,
    PositivityError,
    RateEquationEngine,
    RatePropagator,
    StepBudgetExceeded,
    Trajectory,
    decay_time,
    evolve_tracked,
    integrate_master,
    lindblad_rhs,
    log_time_grid,
    rate_matrix_propagator,
    select_engine,
    site_populations,
)
from anderson_dephase.lattice import (
    LatticeHamiltonian,
    ModelConfig,
    OccupationProfile,
    build_hamiltonian,
    clean_chain_modes,
    diagonalize,
    ground_state,
    sample_disorder,
)
from anderson_dephase.peaks import SidePeakTracker
from oracles import dense_hamiltonian, distance_matrix, evolve_dense, liouvillian


def _chain(n, seed=0, index=0):
    cfg = ModelConfig(n_sites=n, master_seed=seed)
    h = build_hamiltonian(sample_disorder(cfg, index), cfg)
    return h, diagonalize(h)


def _random_rho(n, rng):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


# ---- right-hand side -------------------------------------------------------

@given(st.integers(2, 7), st.integers(0, 3), st.floats(0, 3), st.integers(0, 100))
def test_rhs_matches_dense_liouvillian(n, q, gamma, seed):
    rng = np.random.default_rng(seed)
    h, _ = _chain(n, seed)
    rho = _random_rho(n, rng)
    ref = (liouvillian(dense_hamiltonian(h.diagonal, 1.0), distance_matrix(n, q), gamma) @ rho.reshape(-1)).reshape(n, n)
    out = lindblad_rhs(rho, h, profile_from_exponent(q), gamma)
    assert np.max(np.abs(out - ref)) < 1e-12
    assert np.array_equal(out, out.conj().T)
    assert abs(np.trace(out)) < 1e-13


def test_rhs_eigenprojector_is_stationary_without_dephasing():
    h, spec = _chain(9, 2)
    rho = DensityMatrix.pure(spec.eigenvectors[:, 4])
    assert np.max(np.abs(lindblad_rhs(rho, h, power_law_profile(1), 0.0))) < 1e-14


def test_rhs_pure_dephasing_of_single_coherence():
    h = LatticeHamiltonian(np.zeros(5), 0.0)
    rho = np.zeros((5, 5), dtype=complex)
    rho[1, 4] = 0.3j
    rho[4, 1] = -0.3j
    d = lindblad_rhs(rho, h, power_law_profile(2), 0.7)
    assert d[1, 4] == pytest.approx(-0.7 * 9 * 0.3j)


def test_rhs_dimension_check():
    with pytest.raises(ValueError):
        lindblad_rhs(np.eye(3), LatticeHamiltonian(np.zeros(4), 1.0), power_law_profile(1), 0.1)


# ---- full engine -----------------------------------------------------------

def test_two_site_rabi_oscillation():
    h = LatticeHamiltonian(np.zeros(2), 1.0)
    times = np.linspace(0.25, 6.0, 24)
    traj = integrate_master(np.diag([1.0, 0.0]), h, power_law_profile(1), 0.0, times, step=0.01)
    err = max(abs(p.populations[0] - math.cos(t) ** 2) for t, p in zip(traj.sample_times, traj.profiles))
    assert err < 1e-8
    assert traj.engine == FULL_LINDBLAD


def test_two_site_coherence_decay_without_hopping():
    h = LatticeHamiltonian(np.zeros(2), 0.0)
    rho0 = np.array([[0.5, 0.25 - 0.1j], [0.25 + 0.1j, 0.5]])
    eng = MasterEquationEngine(h, power_law_profile(1), 0.8, rho0)
    for t in (0.5, 1.0, 4.0):
        eng.advance_to(t)
        assert abs(eng.density_matrix().entries[0, 1] - (0.25 - 0.1j) * math.exp(-0.8 * t)) < 1e-8


@pytest.mark.parametrize("scheme", ["rk4", "lawson", "auto"])
@pytest.mark.parametrize("gamma", [0.0, 0.05, 0.8])
def test_engine_matches_dense_propagator(scheme, gamma):
    n = 7
    h, _ = _chain(n, 4)
    rng = np.random.default_rng(1)
    rho0 = _random_rho(n, rng)
    eng = MasterEquationEngine(h, power_law_profile(1), gamma, rho0, scheme=scheme)
    hd = dense_hamiltonian(h.diagonal, 1.0)
    f = distance_matrix(n, 1)
    for t in (0.37, 2.0, 5.5):
        eng.advance_to(t)
        ref = evolve_dense(rho0, hd, f, gamma, t)
        assert np.max(np.abs(eng.density_matrix().entries - ref)) < 1e-6


def test_scheme_selection_and_step_rule():
    h, spec = _chain(16, 1)
    rho = DensityMatrix.pure(spec.eigenvectors[:, 0])
    weak = MasterEquationEngine(h, power_law_profile(1), 1e-3, rho)
    assert weak.scheme == "rk4" and weak.step == pytest.approx(0.05)
    classical = MasterEquationEngine(h, power_law_profile(1), 0.5, rho, scheme="rk4", richardson_steps=0)
    assert classical.step == pytest.approx(0.05 / (0.5 * 15))
    strong = MasterEquationEngine(h, power_law_profile(1), 0.5, rho)
    assert strong.scheme == "lawson" and strong.step == pytest.approx(0.05)


def test_occupied_support_sets_effective_rate():
    h = LatticeHamiltonian(np.zeros(20), 1.0)
    rho = np.zeros((20, 20), dtype=complex)
    rho[3, 3] = rho[5, 5] = 0.5
    eng = MasterEquationEngine(h, power_law_profile(2), 0.1, rho, richardson_steps=0)
    assert eng.gamma_eff == pytest.approx(0.1 * 4)


def test_richardson_check_halves_oversized_step():
    h = LatticeHamiltonian(np.zeros(6), 1.0)
    rho = np.zeros((6, 6), dtype=complex)
    rho[2, 2] = 1.0
    eng = MasterEquationEngine(h, power_law_profile(1), 0.0, rho, step=0.4)
    assert eng.step_halvings >= 1 and eng.step < 0.4


def test_trace_and_hermiticity_preserved():
    h, spec = _chain(24, 3)
    eng = MasterEquationEngine(h, power_law_profile(1), 0.02, DensityMatrix.pure(spec.eigenvectors[:, 0]))
    eng.advance_to(300.0)
    rho = eng.density_matrix()
    assert eng.max_trace_drift < 1e-12 and eng.renormalizations == 0
    assert rho.hermiticity_error() == 0.0
    rho.validate()


def test_checkpoint_restore_is_bitwise():
    h, spec = _chain(12, 5)
    eng = MasterEquationEngine(h, power_law_profile(1), 0.1, DensityMatrix.pure(spec.eigenvectors[:, 0]))
    eng.advance_to(3.0)
    cp = eng.checkpoint()
    a = eng.advance_to(7.3).populations.copy()
    eng.restore(cp)
    b = eng.advance_to(7.3).populations
    assert np.array_equal(a, b)
    assert eng.time == 7.3


def test_partial_steps_hit_target_times():
    h = LatticeHamiltonian(np.zeros(2), 1.0)
    eng = MasterEquationEngine(h, power_law_profile(1), 0.0, np.diag([1.0, 0.0]), step=0.01)
    p = eng.advance_to(0.123456).populations
    assert p[0] == pytest.approx(math.cos(0.123456) ** 2, abs=1e-10)


def test_backwards_target_rejected():
    h = LatticeHamiltonian(np.zeros(2), 1.0)
    eng = MasterEquationEngine(h, power_law_profile(1), 0.0, np.diag([1.0, 0.0]))
    eng.advance_to(1.0)
    with pytest.raises(ValueError):
        eng.advance_to(0.5)


def test_step_budget():
    h = LatticeHamiltonian(np.zeros(3), 1.0)
    eng = MasterEquationEngine(h, power_law_profile(1), 0.0, np.diag([1.0, 0, 0]), step=0.05, richardson_steps=0, max_steps=100)
    assert eng.max_time() == pytest.approx(5.0)
    with pytest.raises(StepBudgetExceeded):
        eng.advance_to(10.0)


def test_positivity_violation_detected():
    h, spec = _chain(8, 0)
    eng = MasterEquationEngine(
        h, power_law_profile(1), 5.0, np.diag(np.full(8, 1 / 8)) + 0.01 * (np.ones((8, 8)) - np.eye(8)),
        scheme="rk4", step=0.3, richardson_steps=0,
    )
    with pytest.raises(PositivityError):
        for t in np.arange(1, 40):
            eng.advance_to(float(t))
            eng.check_positivity()


def test_zero_dephasing_keeps_eigenbasis_mixture_constant():
    h, spec = _chain(10, 6)
    p = np.linspace(1, 2, 10)
    rho0 = DensityMatrix.from_populations(p / p.sum(), spec)
    traj = integrate_master(rho0, h, power_law_profile(1), 0.0, [1.0, 10.0, 50.0])
    for prof in traj.profiles:
        assert np.allclose(prof.populations, rho0.site_profile().populations, atol=1e-10)


def test_steady_state_small_chain():
    h, spec = _chain(6, 2)
    eng = MasterEquationEngine(h, power_law_profile(1), 0.1, DensityMatrix.pure(spec.eigenvectors[:, 0]))
    p = eng.advance_to(4000.0).populations
    assert np.max(np.abs(p - 1 / 6)) < 1e-6


# ---- rate equation ---------------------------------------------------------

def test_two_site_rate_closed_form():
    spec = diagonalize(LatticeHamiltonian(np.zeros(2), 1.0))
    eta = coupling_matrix(spec, power_law_profile(1))
    for gamma, t in ((0.3, 0.0), (0.3, 1.7), (2.0, 5.0)):
        p = rate_matrix_propagator(np.array([1.0, 0.0]), eta, gamma, t).populations
        e = math.exp(-gamma * t)
        assert np.allclose(p, [0.5 + e / 2, 0.5 - e / 2], atol=1e-14)


def test_two_site_decay_inverts_closed_form():
    spec = diagonalize(LatticeHamiltonian(np.zeros(2), 1.0))
    prop = RatePropagator(coupling_matrix(spec, power_law_profile(1)))
    gamma, target = 0.2, 0.8
    t_star = -math.log(2 * target - 1) / gamma
    assert prop([1.0, 0.0], gamma, t_star).populations[0] == pytest.approx(target, abs=1e-14)


def test_site_populations_three_site_sinusoids():
    spec = diagonalize(LatticeHamiltonian(np.zeros(3), 1.0))
    modes = clean_chain_modes(3).mode_shapes
    prof = site_populations(np.array([0.5, 0.5, 0.0]), spec).populations
    expected = 0.5 * modes[:, 0] ** 2 + 0.5 * modes[:, 1] ** 2
    assert np.allclose(prof, expected, atol=1e-14)
    assert np.allclose(expected, [3 / 8, 1 / 4, 3 / 8])


def test_site_populations_unit_and_uniform():
    _, spec = _chain(11, 1)
    e = np.zeros(11)
    e[4] = 1
    assert np.allclose(site_populations(e, spec).populations, spec.eigenvectors[:, 4] ** 2)
    assert np.allclose(site_populations(np.full(11, 1 / 11), spec).populations, 1 / 11, atol=1e-14)


def _rate_setup(n, seed, q=1):
    _, spec = _chain(n, seed)
    return spec, coupling_matrix(spec, profile_from_exponent(q))


def test_rate_long_time_uniform():
    spec, eta = _rate_setup(20, 3)
    p = rate_matrix_propagator(np.eye(20)[0], eta, 1.0, 1e6)
    assert np.allclose(p.populations, 1 / 20, atol=1e-12)


@given(st.integers(2, 24), st.integers(0, 200), st.floats(1e-9, 1.0), st.floats(1e-3, 1e3))
@settings(max_examples=40)
def test_rate_solution_depends_only_on_gamma_t(n, seed, gamma, scale):
    _, eta = _rate_setup(n, seed)
    prop = RatePropagator(eta)
    p0 = np.eye(n)[0]
    t = 0.3 / gamma
    a = prop(p0, gamma, t).populations
    b = prop(p0, gamma * scale, t / scale).populations
    assert np.allclose(a, b, rtol=0, atol=1e-12)


# q = 3, 4 give positive off-diagonal rates for some pairs, so only q <= 2
# is guaranteed to keep populations nonnegative and relax monotonically.
@given(st.integers(2, 24), st.integers(0, 200), st.integers(0, 2))
@settings(max_examples=40)
def test_rate_monotone_approach_to_uniform(n, seed, q):
    spec, eta = _rate_setup(n, seed, q)
    prop = RatePropagator(eta)
    times = np.concatenate([[0.0], np.logspace(-4, 3, 40)])
    dist = [np.sum((site_populations(prop(np.eye(n)[0], 1.0, t), spec).populations - 1 / n) ** 2) for t in times]
    assert np.all(np.diff(dist) <= 1e-13)
    pops = [prop(np.eye(n)[0], 1.0, t).populations for t in times]
    assert np.allclose([p.sum() for p in pops], 1.0, atol=1e-12)
    assert min(p.min() for p in pops) >= -1e-12


def test_high_exponents_can_produce_negative_rates():
    _, eta = _rate_setup(3, 3, 3)
    off = eta.eta[~np.eye(3, dtype=bool)]
    assert off.max() > 0


def test_rate_matches_matrix_exponential():
    spec, eta = _rate_setup(15, 8, 2)
    p0 = np.linspace(0, 1, 15)
    p0 /= p0.sum()
    ref = scipy.linalg.expm(-0.01 * eta.eta * 37.0) @ p0
    assert np.allclose(rate_matrix_propagator(p0, eta, 0.01, 37.0).populations, ref, atol=1e-13)


def test_population_vector_bounds():
    PopulationVector(np.array([-5e-11, 1.0]))
    with pytest.raises(ValueError):
        PopulationVector(np.array([-1e-9, 1.0]))


def test_full_and_rate_engines_agree_for_weak_dephasing():
    n, gamma = 10, 2e-5
    h, spec = _chain(n, 9)
    eta = coupling_matrix(spec, power_law_profile(1))
    full = MasterEquationEngine(h, power_law_profile(1), gamma, DensityMatrix.pure(spec.eigenvectors[:, 0]))
    rate = RateEquationEngine(spec, eta, gamma, np.eye(n)[0])
    t = 0.2 / gamma
    full.advance_to(t)
    pf = full.density_matrix().eigenbasis_populations(spec).populations
    pr = rate.populations_at(t).populations
    assert np.max(np.abs(pf - pr)) / np.max(pr) < 2e-3


# ---- engine selection, trajectories and decay times ------------------------

def test_select_engine():
    assert select_engine(1e-9) == RATE_EQUATION
    assert select_engine(3e-3) == FULL_LINDBLAD
    assert select_engine(1e-6) == FULL_LINDBLAD
    assert select_engine(3e-3, override="rate") == RATE_EQUATION
    assert select_engine(1e-9, override="full") == FULL_LINDBLAD
    assert select_engine(1e-5, gamma_switch=2e-5) == RATE_EQUATION
    with pytest.raises(ValueError):
        select_engine(1.0, override="bogus")


def test_trajectory_validation():
    prof = OccupationProfile(np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [prof, prof], RATE_EQUATION)
    assert len(Trajectory([0.0, 1.0], [prof, prof], RATE_EQUATION)) == 2


def test_log_time_grid():
    g = log_time_grid(0.1, 1000.0, 64)
    assert g[0] == 0.1 and g[-1] == pytest.approx(1000.0)
    assert len(g) == 4 * 64 + 1
    assert np.all(np.diff(g) > 0)


def _rate_engine(n=64, seed=3, gamma=1e-3, q=1):
    cfg = ModelConfig(n_sites=n, master_seed=seed)
    for index in range(500):
        h = build_hamiltonian(sample_disorder(cfg, index), cfg)
        spec = diagonalize(h)
        if np.argmax(spec.eigenvectors[:, 0] ** 2) in range(n // 4, 3 * n // 4):
            break
    eta = coupling_matrix(spec, profile_from_exponent(q))
    return RateEquationEngine(spec, eta, gamma, np.eye(n)[0]), ground_state(spec), spec, eta


def test_decay_time_without_dephasing_not_reached():
    eng, gs, _, _ = _rate_engine(gamma=0.0)
    assert decay_time(eng, gs, 0.5) is None


def test_decay_time_matches_brute_force_scan():
    eng, gs, spec, eta = _rate_engine(gamma=1e-3)
    t_star = decay_time(eng, gs, 0.5)
    assert t_star is not None
    # dense independent scan of the tracked height with expm
    tracker = SidePeakTracker(int(np.argmax(gs.populations)))
    h0 = tracker.update(gs, 0.0)
    ts = np.linspace(0.0, t_star * 1.01, 4001)[1:]
    crossing = None
    for t in ts:
        p = scipy.linalg.expm(-1e-3 * eta.eta * t)[:, 0]
        prof = OccupationProfile(np.maximum(spec.densities() @ p, 0), t)
        if tracker.main_height(prof) <= 0.5 * h0:
            crossing = t
            break
        tracker.update(prof, t)
    assert crossing is not None
    assert t_star == pytest.approx(crossing, rel=2e-3)


def test_evolve_tracked_structure():
    eng, gs, _, _ = _rate_engine(gamma=1e-2)
    res = evolve_tracked(eng, gs)
    times = res.trajectory.sample_times
    assert times[0] == 0.0 and np.all(np.diff(times) > 0)
    found = [t for t in res.decay_times.values() if t is not None]
    assert found == sorted(found)
    for f, t in res.decay_times.items():
        if t is not None:
            assert t in set(times.tolist())
            k = int(np.searchsorted(times, t))
            assert np.array_equal(res.trajectory.profiles[k].populations, res.snapshots[f].populations)
    assert res.horizon_reached
    assert res.report.delta >= 0
    for prof in res.trajectory.profiles:
        assert prof.total() == pytest.approx(1.0, abs=1e-9)


def test_evolve_tracked_full_engine_diagnostics():
    cfg = ModelConfig(n_sites=24, master_seed=1)
    h = build_hamiltonian(sample_disorder(cfg, 0), cfg)
    spec = diagonalize(h)
    eng = MasterEquationEngine(h, power_law_profile(1), 0.05, DensityMatrix.pure(spec.eigenvectors[:, 0]))
    res = evolve_tracked(eng, ground_state(spec))
    d = res.diagnostics
    assert d["engine"] == FULL_LINDBLAD and d["max_trace_drift"] < 1e-12
    assert d["min_eigenvalue"] > -1e-8


def test_decay_time_rejects_bad_fraction():
    eng, gs, _, _ = _rate_engine(gamma=1e-3)
    with pytest.raises(ValueError):
        decay_time(eng, gs, 1.5)
