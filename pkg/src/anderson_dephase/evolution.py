"""Time evolution: full master equation in the site basis, rate equation in
the eigenbasis, and location of peak-decay times.

Times are measured in units of 1/T (inverse tunneling amplitude).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dephasing import DephasingProfile, RateMatrix
from .lattice import LatticeHamiltonian, OccupationProfile, SpectralDecomposition
from .peaks import NOISE_FLOOR, SidePeakTracker

__all__ = [
    "DensityMatrix",
    "PopulationVector",
    "Trajectory",
    "PositivityError",
    "StepBudgetExceeded",
    "lindblad_rhs",
    "MasterEquationEngine",
    "RateEquationEngine",
    "RatePropagator",
    "integrate_master",
    "rate_matrix_propagator",
    "site_populations",
    "select_engine",
    "EvolutionResult",
    "evolve_tracked",
    "decay_time",
    "log_time_grid",
    "FULL_LINDBLAD",
    "RATE_EQUATION",
    "DEFAULT_GAMMA_SWITCH",
    "DEFAULT_STEP_BUDGET",
]

log = logging.getLogger(__name__)

FULL_LINDBLAD = "full_lindblad"
RATE_EQUATION = "rate_equation"
DEFAULT_GAMMA_SWITCH = 1e-6
DEFAULT_STEP_BUDGET = 20_000_000
DEFAULT_TIME_CAP = 1e10


class PositivityError(RuntimeError):
    """Density matrix acquired an eigenvalue below the allowed tolerance."""


class StepBudgetExceeded(RuntimeError):
    """Target time needs more integrator steps than the configured budget."""


@dataclass
class DensityMatrix:
    entries: np.ndarray
    time: float = 0.0

    @classmethod
    def pure(cls, psi, time: float = 0.0) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), time)

    @classmethod
    def from_populations(cls, p, spec: SpectralDecomposition, time: float = 0.0) -> "DensityMatrix":
        """Incoherent mixture sum_i p_i |psi_i><psi_i|."""
        v = spec.eigenvectors
        return cls(((v * np.asarray(getattr(p, "populations", p))) @ v.T).astype(complex), time)

    @property
    def n_sites(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))[0])

    def validate(self, hermitian_tol=1e-12, trace_tol=1e-9, eig_tol=1e-8):
        if self.hermiticity_error() > hermitian_tol:
            raise ValueError(f"density matrix not Hermitian: {self.hermiticity_error():.2e}")
        if abs(self.trace() - 1) > trace_tol:
            raise ValueError(f"trace {self.trace()} differs from 1")
        if self.min_eigenvalue() < -eig_tol:
            raise ValueError(f"negative eigenvalue {self.min_eigenvalue():.2e}")

    def site_profile(self) -> OccupationProfile:
        return OccupationProfile(np.real(np.diag(self.entries)).copy(), self.time)

    def eigenbasis_populations(self, spec: SpectralDecomposition) -> "PopulationVector":
        v = spec.eigenvectors
        p = np.real(np.einsum("xi,xy,yi->i", v, self.entries, v))
        return PopulationVector(p, self.time)


@dataclass
class PopulationVector:
    """Eigenstate populations p_i = <psi_i|rho|psi_i>."""

    populations: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if np.any(p < -1e-10):
            raise ValueError(f"population below -1e-10: {p.min():.3e}")
        self.populations = p


@dataclass
class Trajectory:
    sample_times: np.ndarray
    profiles: list
    engine: str

    def __post_init__(self):
        self.sample_times = np.asarray(self.sample_times, dtype=float)
        if len(self.sample_times) != len(self.profiles):
            raise ValueError("one profile per sample time required")
        if np.any(np.diff(self.sample_times) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.profiles)


def lindblad_rhs(rho, h: LatticeHamiltonian, profile: DephasingProfile, gamma: float) -> np.ndarray:
    """d rho/dt = -i[H, rho] - gamma f(x,y) rho_yx, returned exactly Hermitian."""
    r = np.asarray(getattr(rho, "entries", rho), dtype=complex)
    n = r.shape[0]
    if h.n_sites != n:
        raise ValueError(f"density matrix is {n}x{n}, Hamiltonian has {h.n_sites} sites")
    eps = np.asarray(h.diagonal, dtype=float)
    t = h.off_diagonal
    comm = (eps[:, None] - eps[None, :]) * r
    comm[1:, :] += t * r[:-1, :]
    comm[:-1, :] += t * r[1:, :]
    comm[:, 1:] -= t * r[:, :-1]
    comm[:, :-1] -= t * r[:, 1:]
    idx = np.arange(n)
    f = profile.distance_table(n)[np.abs(idx[:, None] - idx[None, :])]
    d = -1j * comm - gamma * f * r
    return 0.5 * (d + d.conj().T)


def _pack(rho: np.ndarray):
    n = rho.shape[0]
    a = np.zeros((n + 2, n + 2))
    b = np.zeros((n + 2, n + 2))
    a[1:-1, 1:-1] = np.triu(rho.real)
    b[1:-1, 1:-1] = np.triu(rho.imag, 1)
    return a, b


def _unpack(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    re = np.triu(a[1:-1, 1:-1])
    im = np.triu(b[1:-1, 1:-1], 1)
    return (re + np.triu(re, 1).T) + 1j * (im - im.T)


class MasterEquationEngine:
    """Fixed-step fourth-order Runge-Kutta integration of the full master equation.

    ``scheme`` is ``"rk4"`` (classical, step min(c/T, c/gamma_eff)),
    ``"lawson"`` (integrating factor: onsite phases and dephasing applied
    exactly, step c/T) or ``"auto"`` (classical unless gamma_eff > T).
    gamma_eff is gamma times the largest f over the initially occupied sites.
    """

    engine_name = FULL_LINDBLAD

    def __init__(
        self,
        hamiltonian: LatticeHamiltonian,
        profile: DephasingProfile,
        gamma: float,
        rho0,
        *,
        scheme: str = "auto",
        step: float | None = None,
        step_factor: float = 0.05,
        richardson_steps: int = 100,
        richardson_tol: float = 1e-8,
        max_steps: int = DEFAULT_STEP_BUDGET,
        renormalize_tol: float = 1e-9,
        positivity_tol: float = 1e-6,
        support_tol: float = 1e-14,
    ):
        r = np.asarray(getattr(rho0, "entries", rho0), dtype=complex)
        n = hamiltonian.n_sites
        if r.shape != (n, n):
            raise ValueError(f"initial state is {r.shape}, expected {(n, n)}")
        self.n_sites = n
        self.hamiltonian = hamiltonian
        self.profile = profile
        self.gamma = float(gamma)
        self.tunneling = float(hamiltonian.off_diagonal)
        self.eps = np.ascontiguousarray(hamiltonian.diagonal, dtype=float)
        self.table = profile.distance_table(n)
        self.dec = np.ascontiguousarray(self.gamma * self.table)
        self.max_steps = int(max_steps)
        self.renormalize_tol = renormalize_tol
        self.positivity_tol = positivity_tol

        occupied = np.flatnonzero(np.real(np.diag(r)) > support_tol)
        span = int(occupied[-1] - occupied[0]) if occupied.size else 0
        self.gamma_eff = self.gamma * float(np.max(self.table[: span + 1]))
        t_abs = abs(self.tunneling) if self.tunneling else 1.0
        if scheme == "auto":
            scheme = "rk4" if self.gamma_eff <= t_abs else "lawson"
        if scheme not in ("rk4", "lawson"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.scheme = scheme
        if step is None:
            step = step_factor / t_abs
            if scheme == "rk4" and self.gamma_eff > 0:
                step = min(step, step_factor / self.gamma_eff)
        self.step = float(step)
        self._factors: dict[float, tuple] = {}

        self._a0, self._b0 = _pack(r)
        self.a, self.b = self._a0.copy(), self._b0.copy()
        self.time = float(getattr(rho0, "time", 0.0))
        self.steps_taken = 0
        self.max_trace_drift = 0.0
        self.renormalizations = 0
        self.step_halvings = 0
        if richardson_steps > 0:
            self._richardson_check(richardson_steps, richardson_tol)

    def _lawson_factors(self, h: float):
        if h not in self._factors:
            n = self.n_sites
            idx = np.arange(n)
            gen = -self.dec[np.abs(idx[:, None] - idx[None, :])] + 1j * (self.eps[None, :] - self.eps[:, None])
            out = []
            for dt in (h, 0.5 * h):
                e = np.exp(gen * dt)
                er = np.zeros((n + 2, n + 2))
                ei = np.zeros((n + 2, n + 2))
                er[1:-1, 1:-1] = e.real
                ei[1:-1, 1:-1] = e.imag
                out += [er, ei]
            if len(self._factors) > 4:
                self._factors.clear()
            self._factors[h] = tuple(out)
        return self._factors[h]

    def _advance(self, a, b, h: float, nsteps: int):
        if nsteps <= 0:
            return
        if self.scheme == "rk4":
            kernels.rk4_advance(a, b, self.eps, self.dec, self.tunneling, h, int(nsteps))
        else:
            er, ei, hr, hi = self._lawson_factors(h)
            kernels.lawson_advance(a, b, er, ei, hr, hi, self.tunneling, h, int(nsteps))

    def _richardson_check(self, nsteps: int, tol: float):
        n = self.n_sites
        for _ in range(30):
            h = self.step
            a, b = self._a0.copy(), self._b0.copy()
            ok = True
            for _ in range(nsteps):
                a1, b1 = a.copy(), b.copy()
                self._advance(a1, b1, h, 1)
                a2, b2 = a.copy(), b.copy()
                self._advance(a2, b2, 0.5 * h, 2)
                diff = _unpack(a1 - a2, b1 - b2)
                if math.sqrt(n) * np.linalg.norm(diff) > tol:
                    if np.sum(np.abs(np.linalg.eigvalsh(diff))) > tol:
                        ok = False
                        break
                a, b = a1, b1
            if ok:
                return
            self.step = 0.5 * h
            self.step_halvings += 1
            log.info("step-doubling check failed at h=%g, halving", h)
        raise RuntimeError("step-doubling check failed after 30 halvings")

    def max_time(self) -> float:
        """Latest time reachable within the step budget."""
        return self.time + (self.max_steps - self.steps_taken) * self.step

    def _renormalize(self):
        tr = float(np.trace(self.a[1:-1, 1:-1]))
        drift = abs(tr - 1.0)
        self.max_trace_drift = max(self.max_trace_drift, drift)
        if drift > self.renormalize_tol:
            self.a /= tr
            self.b /= tr
            self.renormalizations += 1
            log.info("trace drift %.3e at t=%g, renormalized", drift, self.time)

    def advance_to(self, t: float) -> OccupationProfile:
        remaining = t - self.time
        if remaining < -1e-12 * max(1.0, abs(t)):
            raise ValueError(f"cannot integrate backwards from {self.time} to {t}")
        nfull = int(math.floor(max(remaining, 0.0) / self.step * (1 + 1e-12)))
        rest = remaining - nfull * self.step
        extra = 1 if rest > 1e-12 * max(1.0, abs(t)) else 0
        if self.steps_taken + nfull + extra > self.max_steps:
            raise StepBudgetExceeded(
                f"t={t:g} needs {self.steps_taken + nfull + extra} steps, budget is {self.max_steps}"
            )
        chunk = 1 << 16
        done = 0
        while done < nfull:
            k = min(chunk, nfull - done)
            self._advance(self.a, self.b, self.step, k)
            done += k
            self.steps_taken += k
            self.time += k * self.step
            self._renormalize()
        if extra:
            self._advance(self.a, self.b, rest, 1)
            self.steps_taken += 1
            self._renormalize()
        self.time = float(t)
        return self.profile_now()

    def profile_now(self) -> OccupationProfile:
        p = np.diag(self.a)[1:-1].copy()
        if p.min() < -self.positivity_tol:
            raise PositivityError(f"population {p.min():.3e} at t={self.time:g}; step too large")
        return OccupationProfile(np.maximum(p, 0.0), self.time)

    def density_matrix(self) -> DensityMatrix:
        return DensityMatrix(_unpack(self.a, self.b), self.time)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(_unpack(self.a, self.b))[0])

    def check_positivity(self) -> float:
        lam = self.min_eigenvalue()
        if lam < -self.positivity_tol:
            raise PositivityError(f"eigenvalue {lam:.3e} at t={self.time:g}; step too large")
        return lam

    def checkpoint(self):
        return (self.time, self.a.copy(), self.b.copy(), self.steps_taken)

    def restore(self, cp):
        self.time, a, b, self.steps_taken = cp
        self.a, self.b = a.copy(), b.copy()


class RatePropagator:
    """exp(-gamma eta t) applied through one symmetric eigendecomposition of eta."""

    def __init__(self, eta: RateMatrix | np.ndarray):
        m = np.asarray(getattr(eta, "eta", eta), dtype=float)
        rates, modes = np.linalg.eigh(m)
        self.rates = np.maximum(rates, 0.0)
        self.modes = modes

    def __call__(self, p0, gamma: float, t: float, clamp: float = 1e-10) -> PopulationVector:
        p0 = np.asarray(getattr(p0, "populations", p0), dtype=float)
        c = self.modes.T @ p0
        p = self.modes @ (np.exp(-gamma * t * self.rates) * c)
        low = p.min()
        if low < -clamp:
            log.warning("rate-equation population %.3e below -%g at gamma*t=%g", low, clamp, gamma * t)
        return PopulationVector(np.maximum(p, 0.0), t)


def rate_matrix_propagator(p0, eta: RateMatrix, gamma: float, t: float) -> PopulationVector:
    """p(t) = exp(-gamma eta t) p0. Build a RatePropagator to reuse the decomposition."""
    return RatePropagator(eta)(p0, gamma, t)


def site_populations(p, spec: SpectralDecomposition) -> OccupationProfile:
    """P(x) = sum_i p_i |psi_i(x)|^2."""
    pops = np.asarray(getattr(p, "populations", p), dtype=float)
    return OccupationProfile(spec.densities() @ pops, float(getattr(p, "time", 0.0)))


class RateEquationEngine:
    """Exact solution of the eigenbasis rate equation; any t costs O(N^2)."""

    engine_name = RATE_EQUATION

    def __init__(self, spec: SpectralDecomposition, eta: RateMatrix, gamma: float, p0):
        self.spec = spec
        self.gamma = float(gamma)
        self.propagator = RatePropagator(eta)
        self.p0 = np.asarray(getattr(p0, "populations", p0), dtype=float)
        self._densities = spec.densities()
        self.time = 0.0

    def populations_at(self, t: float) -> PopulationVector:
        return self.propagator(self.p0, self.gamma, t)

    def advance_to(self, t: float) -> OccupationProfile:
        self.time = float(t)
        return self.profile_now()

    def profile_now(self) -> OccupationProfile:
        p = self.populations_at(self.time).populations
        return OccupationProfile(np.maximum(self._densities @ p, 0.0), self.time)

    def max_time(self) -> float:
        return math.inf

    def checkpoint(self):
        return self.time

    def restore(self, cp):
        self.time = cp


def integrate_master(rho0, hamiltonian: LatticeHamiltonian, profile: DephasingProfile, gamma: float, targets, **options) -> Trajectory:
    """Profiles of the full master-equation solution at increasing ``targets``."""
    targets = np.asarray(targets, dtype=float)
    if np.any(np.diff(targets) <= 0):
        raise ValueError("targets must be strictly increasing")
    engine = MasterEquationEngine(hamiltonian, profile, gamma, rho0, **options)
    profiles = [engine.advance_to(t) for t in targets]
    return Trajectory(targets, profiles, FULL_LINDBLAD)


def select_engine(gamma: float, gamma_switch: float = DEFAULT_GAMMA_SWITCH, override: str | None = None, tunneling: float = 1.0) -> str:
    """Rate equation below gamma_switch * T, full master equation otherwise."""
    if override not in (None, "auto"):
        aliases = {"rate": RATE_EQUATION, "full": FULL_LINDBLAD, RATE_EQUATION: RATE_EQUATION, FULL_LINDBLAD: FULL_LINDBLAD}
        if override not in aliases:
            raise ValueError(f"unknown engine {override!r}")
        return aliases[override]
    return RATE_EQUATION if gamma < gamma_switch * tunneling else FULL_LINDBLAD


def log_time_grid(t_min: float, t_max: float, per_decade: int = 64) -> np.ndarray:
    """t_min * 10**(k/per_decade) up to and including t_max."""
    k_max = math.ceil(per_decade * math.log10(t_max / t_min) - 1e-9)
    grid = t_min * 10.0 ** (np.arange(k_max + 1) / per_decade)
    grid[-1] = min(grid[-1], t_max)
    return grid


@dataclass
class EvolutionResult:
    trajectory: Trajectory
    report: object
    decay_times: dict
    snapshots: dict
    initial_height: float
    main_site: int
    horizon_time: float
    horizon_reached: bool
    diagnostics: dict = field(default_factory=dict)


def evolve_tracked(
    engine,
    initial: OccupationProfile,
    *,
    fractions=(0.5, 0.25, 0.125),
    horizon_fraction: float = 1 / 16,
    t_min: float = 0.1,
    per_decade: int = 64,
    t_cap: float = DEFAULT_TIME_CAP,
    window: int = 5,
    floor: float = NOISE_FLOOR,
    rel_tol: float = 1e-3,
    stop_after_fractions: bool = False,
    reference_gamma: float | None = None,
) -> EvolutionResult:
    """Sample the engine on a log-time grid while tracking peaks.

    Decay times are the first times the tracked main-peak height falls to
    ``fraction`` of its initial value, bracketed by the grid and refined by
    bisection to ``rel_tol``. Sampling stops once the main peak's excess over
    the uniform level 1/N has dropped to ``horizon_fraction`` of its initial
    excess, or at ``t_cap`` (also limited by the engine's step budget).
    """
    p0 = np.asarray(initial.populations, dtype=float)
    n = len(p0)
    main_site = int(np.argmax(p0))
    tracker = SidePeakTracker(main_site, window, floor)
    h0 = tracker.update(initial, 0.0)
    uniform = 1.0 / n
    excess0 = h0 - uniform
    fractions = sorted(set(float(f) for f in fractions), reverse=True)
    decay_times = {f: None for f in fractions}
    snapshots = {}
    times, profiles = [0.0], [initial]

    cap = min(t_cap, engine.max_time())
    grid = log_time_grid(t_min, cap, per_decade) if cap > t_min else np.array([cap])
    cp_prev = engine.checkpoint()
    t_prev = 0.0
    reached = False
    min_eig = None
    is_full = engine.engine_name == FULL_LINDBLAD

    for t_k in grid:
        prof = engine.advance_to(float(t_k))
        cp_k = engine.checkpoint()
        h_k = tracker.main_height(prof)
        found = []
        for f in fractions:
            if decay_times[f] is None and h_k <= f * h0:
                t_star, snap, cp_star = _bisect_decay(engine, tracker, cp_prev, t_prev, float(t_k), cp_k, prof, f * h0, rel_tol)
                decay_times[f] = t_star
                snapshots[f] = snap
                found.append((t_star, snap))
                if is_full:
                    engine.restore(cp_star)
                    lam = engine.check_positivity()
                    min_eig = lam if min_eig is None else min(min_eig, lam)
        engine.restore(cp_k)
        for t_star, snap in sorted(found, key=lambda item: item[0]):
            if t_star < t_k and t_star > times[-1]:
                tracker.update(snap, t_star)
                times.append(t_star)
                profiles.append(snap)
        height = tracker.update(prof, float(t_k))
        times.append(float(t_k))
        profiles.append(prof)
        cp_prev, t_prev = cp_k, float(t_k)
        if excess0 > 0 and height - uniform <= horizon_fraction * excess0:
            reached = True
            break
        if stop_after_fractions and all(v is not None for v in decay_times.values()):
            break

    diagnostics = {"engine": engine.engine_name, "samples": len(times)}
    if is_full:
        lam = engine.check_positivity()
        min_eig = lam if min_eig is None else min(min_eig, lam)
        diagnostics.update(
            scheme=engine.scheme,
            step=engine.step,
            steps=engine.steps_taken,
            max_trace_drift=engine.max_trace_drift,
            renormalizations=engine.renormalizations,
            min_eigenvalue=min_eig,
        )
    traj = Trajectory(np.array(times), profiles, engine.engine_name)
    return EvolutionResult(
        trajectory=traj,
        report=tracker.report(reference_gamma),
        decay_times=decay_times,
        snapshots=snapshots,
        initial_height=h0,
        main_site=main_site,
        horizon_time=times[-1],
        horizon_reached=reached,
        diagnostics=diagnostics,
    )


def _bisect_decay(engine, tracker, cp_lo, lo, hi, cp_hi, hi_profile, target, rel_tol):
    while hi - lo > rel_tol * hi:
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
        engine.restore(cp_lo)
        prof = engine.advance_to(mid)
        if tracker.main_height(prof) <= target:
            hi, hi_profile, cp_hi = mid, prof, engine.checkpoint()
        else:
            lo, cp_lo = mid, engine.checkpoint()
    return hi, hi_profile, cp_hi


def decay_time(engine, initial: OccupationProfile, fraction: float, **options) -> float | None:
    """First time the tracked main peak falls to ``fraction`` of its initial
    height; ``None`` when not reached within the horizon."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    res = evolve_tracked(engine, initial, fractions=(fraction,), stop_after_fractions=True, **options)
    return res.decay_times[float(fraction)]
