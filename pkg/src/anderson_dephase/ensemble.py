"""Seeded disorder ensembles: centre-of-mass filter, gamma sweeps, sub-ensemble
split and order-independent aggregation."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dephasing import coupling_matrix, profile_from_exponent
from .evolution import (
    DEFAULT_GAMMA_SWITCH,
    DEFAULT_STEP_BUDGET,
    DEFAULT_TIME_CAP,
    RATE_EQUATION,
    DensityMatrix,
    MasterEquationEngine,
    RateEquationEngine,
    evolve_tracked,
    log_time_grid,
    select_engine,
)
from .lattice import (
    EigensolverError,
    ModelConfig,
    build_hamiltonian,
    center_of_mass,
    diagonalize,
    ground_state,
    ground_state_profile,
    sample_disorder,
)

__all__ = [
    "EnsembleSpec",
    "RealizationRecord",
    "EnsembleAggregate",
    "accept_realization",
    "select_realizations",
    "run_realization",
    "profiles_at",
    "run_ensemble",
    "ensemble_mean_snapshots",
    "split_subensembles",
    "default_gamma_grid",
    "default_com_window",
    "resolve_threads",
]

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.5, 0.25, 0.125)


def default_gamma_grid(points: int = 30, lo: float = 1e-9, hi: float = 1.0) -> tuple:
    return tuple(float(g) for g in np.logspace(math.log10(lo), math.log10(hi), points))


def default_com_window(n_sites: int) -> tuple:
    """Half a site either side of the chain midpoint N/2 (site labels 1..N)."""
    return (n_sites / 2 - 0.5, n_sites / 2 + 0.5)


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("ANDERSON_DEPHASE_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return int(threads)


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything needed to reproduce an ensemble run.

    ``mean_mode`` picks how mean profiles are formed: ``"per_realization"``
    averages each realization's own decay snapshots, ``"ensemble_mean"``
    averages all realizations at the common time where the mean peak decays.
    """

    model: ModelConfig
    realization_count: int = 1
    com_window: tuple | None = None
    gamma_grid: tuple = (1e-9,)
    engine_override: str | None = None
    output_dir: str | None = None
    snapshot_fractions: tuple = DEFAULT_FRACTIONS
    gamma_switch: float = DEFAULT_GAMMA_SWITCH
    reference_gamma: float | None = None
    mean_mode: str = "per_realization"
    window: int = 5
    floor: float = 1e-12
    per_decade: int = 64
    horizon_fraction: float = 1 / 16
    time_cap: float = DEFAULT_TIME_CAP
    step_budget: int = DEFAULT_STEP_BUDGET
    scheme: str = "auto"
    max_attempts: int | None = None
    first_index: int = 0

    def __post_init__(self):
        if self.realization_count < 1:
            raise ValueError("realization_count must be >= 1")
        grid = tuple(float(g) for g in self.gamma_grid)
        if not grid or any(g < 0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("gamma_grid must be non-empty, nonnegative and strictly ascending")
        object.__setattr__(self, "gamma_grid", grid)
        if self.com_window is None:
            object.__setattr__(self, "com_window", default_com_window(self.model.n_sites))
        lo, hi = self.com_window
        if lo > hi:
            raise ValueError("com_window must satisfy lo <= hi")
        object.__setattr__(self, "com_window", (float(lo), float(hi)))
        if any(not 0 < f < 1 for f in self.snapshot_fractions):
            raise ValueError("snapshot fractions must lie in (0, 1)")
        object.__setattr__(self, "snapshot_fractions", tuple(sorted((float(f) for f in self.snapshot_fractions), reverse=True)))
        if self.mean_mode not in ("per_realization", "ensemble_mean"):
            raise ValueError(f"unknown mean_mode {self.mean_mode!r}")
        if self.engine_override not in (None, "auto", "full", "rate"):
            raise ValueError(f"unknown engine override {self.engine_override!r}")

    @property
    def ref_gamma(self) -> float:
        return self.gamma_grid[0] if self.reference_gamma is None else float(self.reference_gamma)

    @property
    def attempt_limit(self) -> int:
        if self.max_attempts is not None:
            return int(self.max_attempts)
        return 2000 * self.realization_count + 10000


@dataclass
class RealizationRecord:
    realization_index: int
    seed: int
    gamma: float
    engine: str = ""
    delta: float = 0.0
    decay_times: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)
    initial_height: float = float("nan")
    horizon_time: float = float("nan")
    horizon_reached: bool = False
    sample_count: int = 0
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class EnsembleAggregate:
    spec: EnsembleSpec
    records: list
    mean_profiles: dict
    mean_profile_counts: dict
    mean_decay_times: dict
    low_indices: list
    high_indices: list
    sweep_rows: list
    accepted: int
    rejected: int
    failed: int
    attempted: int
    rejected_indices: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def shortfall(self) -> int:
        return max(self.spec.realization_count - self.accepted, 0)

    def deltas(self, gamma: float) -> dict:
        return {r.realization_index: r.delta for r in self.records if r.ok and r.gamma == gamma}


def accept_realization(disorder, config: ModelConfig, window) -> bool:
    """Centre-of-mass filter on the ground state."""
    lo, hi = window
    com = center_of_mass(ground_state_profile(build_hamiltonian(disorder, config)))
    return lo <= com <= hi


def select_realizations(spec: EnsembleSpec):
    """Rejection sampling over consecutive realization indices.

    Returns (accepted indices, rejected indices, [(index, error)] for failures).
    """
    accepted, rejected, failed = [], [], []
    index = spec.first_index
    for _ in range(spec.attempt_limit):
        if len(accepted) >= spec.realization_count:
            break
        try:
            ok = accept_realization(sample_disorder(spec.model, index), spec.model, spec.com_window)
        except EigensolverError as exc:
            failed.append((index, f"EigensolverError: {exc}"))
        else:
            (accepted if ok else rejected).append(index)
        index += 1
    log.info("realizations: %d accepted, %d rejected, %d failed", len(accepted), len(rejected), len(failed))
    return accepted, rejected, failed


@lru_cache(maxsize=4)
def _setup(model: ModelConfig, index: int):
    disorder = sample_disorder(model, index)
    h = build_hamiltonian(disorder, model)
    spec = diagonalize(h)
    profile = profile_from_exponent(model.profile_exponent)
    return h, spec, profile


@lru_cache(maxsize=4)
def _rate_matrix(model: ModelConfig, index: int):
    _, spec, profile = _setup(model, index)
    return coupling_matrix(spec, profile)


def _engine(spec: EnsembleSpec, index: int, gamma: float):
    model = spec.model
    h, eig, profile = _setup(model, index)
    kind = select_engine(gamma, spec.gamma_switch, spec.engine_override, model.tunneling)
    if kind == RATE_EQUATION:
        p0 = np.zeros(model.n_sites)
        p0[0] = 1.0
        engine = RateEquationEngine(eig, _rate_matrix(model, index), gamma, p0)
    else:
        engine = MasterEquationEngine(
            h, profile, gamma, DensityMatrix.pure(eig.eigenvectors[:, 0]),
            scheme=spec.scheme, max_steps=spec.step_budget,
        )
    return engine, ground_state(eig)


def run_realization(spec: EnsembleSpec, realization_index: int, gamma: float) -> RealizationRecord:
    """Disorder -> Hamiltonian -> spectrum -> engine -> tracked trajectory.

    Exceptions from the pipeline are caught and stored in ``error``.
    """
    rec = RealizationRecord(int(realization_index), int(spec.model.master_seed), float(gamma))
    try:
        engine, initial = _engine(spec, realization_index, gamma)
        t_unit = 1.0 / spec.model.tunneling
        res = evolve_tracked(
            engine,
            initial,
            fractions=spec.snapshot_fractions,
            horizon_fraction=spec.horizon_fraction,
            t_min=0.1 * t_unit,
            per_decade=spec.per_decade,
            t_cap=spec.time_cap * t_unit,
            window=spec.window,
            floor=spec.floor,
            reference_gamma=gamma,
        )
    except Exception as exc:  # recorded, excluded from aggregates
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.engine = engine.engine_name
    rec.delta = float(res.report.delta)
    rec.decay_times = dict(res.decay_times)
    rec.snapshots = {f: np.asarray(p.populations) for f, p in res.snapshots.items()}
    rec.initial_height = float(res.initial_height)
    rec.horizon_time = float(res.horizon_time)
    rec.horizon_reached = bool(res.horizon_reached)
    rec.sample_count = len(res.trajectory)
    rec.diagnostics = dict(res.diagnostics)
    return rec


def profiles_at(spec: EnsembleSpec, realization_index: int, gamma: float, times) -> np.ndarray:
    """Occupation profiles of one realization at increasing ``times``."""
    engine, initial = _engine(spec, realization_index, gamma)
    out = []
    for t in times:
        out.append(initial.populations if t == 0 else engine.advance_to(float(t)).populations)
    return np.array(out)


def _call(args):
    fn, a = args[0], args[1:]
    return fn(*a)


def _map(tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [_call(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_call, tasks, chunksize=1))


def _fsum_mean(rows) -> np.ndarray:
    stack = np.asarray(rows, dtype=float)
    return np.array([math.fsum(col) for col in stack.T]) / len(stack)


def _stderr(values) -> float:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float("nan")
    mean = math.fsum(v) / len(v)
    return math.sqrt(math.fsum((v - mean) ** 2) / (len(v) - 1) / len(v))


def split_subensembles(deltas: dict, reference_gamma: float | None = None):
    """Split realization indices by their reference-rate growth.

    ``deltas`` maps realization index -> delta at the reference rate. The
    lower half (ties broken by index, median element included when the count
    is odd) is returned first.
    """
    if not deltas:
        raise ValueError(f"no delta values at reference rate {reference_gamma}")
    if any(v is None or not np.isfinite(v) for v in deltas.values()):
        raise ValueError(f"missing delta at reference rate {reference_gamma}")
    order = sorted(deltas, key=lambda i: (deltas[i], i))
    n_low = (len(order) + 1) // 2
    return order[:n_low], order[n_low:]


def ensemble_mean_snapshots(
    spec: EnsembleSpec,
    indices,
    gamma: float,
    records=None,
    fractions=None,
    threads: int | None = None,
    extensions: int = 3,
):
    """Times and profiles where the peak of the ensemble-mean profile falls to each fraction.

    The peak height of a mean profile is its maximum within ``spec.window``
    sites of the argmax of the initial mean. Crossings are bracketed on the
    shared log-time grid and refined on 32 even points inside the bracket.
    The grid ends at twice the latest per-realization crossing taken from
    ``records`` (their horizon when not reached), or at gamma*t = 1 without
    records, and is stretched 4x up to ``extensions`` times when a crossing
    is still missing. The engine's own time limit caps the grid.
    Returns ({fraction: time or None}, {fraction: profile or None}).
    """
    threads = resolve_threads(threads)
    indices = list(indices)
    fractions = sorted(spec.snapshot_fractions if fractions is None else fractions, reverse=True)
    n = spec.model.n_sites
    t_unit = 1.0 / spec.model.tunneling
    t_cap = spec.time_cap * t_unit
    if not indices:
        return {f: None for f in fractions}, {f: None for f in fractions}

    mean0 = _fsum_mean([_setup_profile(spec, i) for i in indices])
    x0 = int(np.argmax(mean0))
    lo_site, hi_site = max(x0 - spec.window, 0), min(x0 + spec.window, n - 1) + 1

    def height(profile):
        return float(np.max(profile[lo_site:hi_site]))

    h0 = height(mean0)
    ends = []
    for r in records or []:
        t = r.decay_times.get(fractions[-1])
        ends.append(t if t is not None else r.horizon_time)
    ends = [e for e in ends if e is not None and np.isfinite(e) and e > 0]
    t_cap = min(t_cap, _engine(spec, indices[0], gamma)[0].max_time())
    if ends:
        t_end = 2.0 * max(ends)
    else:
        t_end = 1.0 / gamma if gamma > 0 else t_cap
    t_end = min(max(t_end, 1.0 * t_unit), t_cap)

    for attempt in range(extensions + 1):
        grid = log_time_grid(0.1 * t_unit, t_end, spec.per_decade)
        stacks = _map([(profiles_at, spec, i, gamma, grid) for i in indices], threads)
        heights = [height(_fsum_mean([s[k] for s in stacks])) for k in range(len(grid))]
        if heights[-1] <= fractions[-1] * h0 or t_end >= t_cap or attempt == extensions:
            break
        t_end = min(4.0 * t_end, t_cap)

    times, profiles = {}, {}
    for f in fractions:
        target = f * h0
        k = next((k for k, hk in enumerate(heights) if hk <= target), None)
        if k is None:
            times[f], profiles[f] = None, None
            continue
        lo = grid[k - 1] if k > 0 else 0.0
        fine = np.linspace(lo, grid[k], 33)[1:]
        fstacks = _map([(profiles_at, spec, i, gamma, fine) for i in indices], threads)
        fmeans = [_fsum_mean([s[j] for s in fstacks]) for j in range(len(fine))]
        j = next(j for j, m in enumerate(fmeans) if height(m) <= target)
        times[f], profiles[f] = float(fine[j]), fmeans[j]
    return times, profiles


def _setup_profile(spec: EnsembleSpec, index: int) -> np.ndarray:
    return ground_state(_setup(spec.model, index)[1]).populations


def run_ensemble(spec: EnsembleSpec, threads: int | None = None) -> EnsembleAggregate:
    """Accepted realizations x gamma grid, aggregated deterministically."""
    threads = resolve_threads(threads)
    accepted, rejected, sel_failed = select_realizations(spec)
    if not accepted:
        raise RuntimeError(
            f"no accepted realizations after {len(accepted) + len(rejected) + len(sel_failed)} attempts"
        )
    if len(accepted) < spec.realization_count:
        log.warning("only %d of %d requested realizations accepted", len(accepted), spec.realization_count)
    tasks = [(run_realization, spec, i, g) for i in accepted for g in spec.gamma_grid]
    records = sorted(_map(tasks, threads), key=lambda r: (r.realization_index, r.gamma))

    failures = list(sel_failed)
    bad = sorted({r.realization_index for r in records if not r.ok})
    for r in records:
        if not r.ok:
            failures.append((r.realization_index, r.error))
    good = [i for i in accepted if i not in set(bad)]
    ok_records = [r for r in records if r.realization_index in set(good)]

    by_gamma = {g: [r for r in ok_records if r.gamma == g] for g in spec.gamma_grid}
    mean_profiles, counts, mean_times = {}, {}, {}
    for g, recs in by_gamma.items():
        if spec.mean_mode == "per_realization":
            for f in spec.snapshot_fractions:
                snaps = [r.snapshots[f] for r in recs if f in r.snapshots]
                counts[(g, f)] = len(snaps)
                mean_profiles[(g, f)] = _fsum_mean(snaps) if snaps else None
        else:
            times, profs = ensemble_mean_snapshots(spec, [r.realization_index for r in recs], g, recs, threads=threads)
            for f in spec.snapshot_fractions:
                mean_times[(g, f)] = times.get(f)
                mean_profiles[(g, f)] = profs.get(f)
                counts[(g, f)] = len(recs) if profs.get(f) is not None else 0

    low, high, rows = [], [], []
    if good:
        ref = spec.ref_gamma
        if ref not in by_gamma:
            raise ValueError(f"reference rate {ref} is not in the gamma grid")
        low, high = split_subensembles({r.realization_index: r.delta for r in by_gamma[ref]}, ref)
        for g, recs in by_gamma.items():
            d = {r.realization_index: r.delta for r in recs}
            dl = [d[i] for i in low]
            dh = [d[i] for i in high]
            rows.append(
                {
                    "gamma": g,
                    "mean_delta_low": math.fsum(dl) / len(dl) if dl else float("nan"),
                    "mean_delta_high": math.fsum(dh) / len(dh) if dh else float("nan"),
                    "stderr_low": _stderr(dl),
                    "stderr_high": _stderr(dh),
                    "n": len(dl) + len(dh),
                }
            )

    n_failed = len(sel_failed) + len(bad)
    return EnsembleAggregate(
        spec=spec,
        records=records,
        mean_profiles=mean_profiles,
        mean_profile_counts=counts,
        mean_decay_times=mean_times,
        low_indices=list(low),
        high_indices=list(high),
        sweep_rows=rows,
        accepted=len(good),
        rejected=len(rejected),
        failed=n_failed,
        attempted=len(accepted) + len(rejected) + len(sel_failed),
        rejected_indices=rejected,
        failures=failures,
    )
