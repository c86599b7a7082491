"""Disordered tight-binding chain: disorder sampling, Hamiltonian, spectrum.

Sites are stored 0-based. Wherever a formula needs the physical site label
(sinusoidal modes, centre of mass) the label ``x = index + 1`` is used; that
conversion lives only in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "ModelConfig",
    "DisorderRealization",
    "LatticeHamiltonian",
    "SpectralDecomposition",
    "CleanChainModes",
    "OccupationProfile",
    "EigensolverError",
    "realization_rng",
    "sample_disorder",
    "build_hamiltonian",
    "diagonalize",
    "ground_state",
    "ground_state_profile",
    "center_of_mass",
    "clean_chain_modes",
    "site_labels",
]


class EigensolverError(RuntimeError):
    """Raised when the tridiagonal eigensolver does not converge."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class ModelConfig:
    """Physical parameters of one dephasing Anderson chain.

    ``profile_exponent`` selects f(x, y) = |x - y|**q; ``q = 0`` means the
    uniform profile (f = 1 off the diagonal).
    """

    n_sites: int = 500
    tunneling: float = 1.0
    disorder_amplitude: float | None = None
    profile_exponent: int = 1
    dephasing_rate: float = 0.0
    master_seed: int = 0

    def __post_init__(self):
        if self.disorder_amplitude is None:
            object.__setattr__(self, "disorder_amplitude", self.tunneling / 10)
        if int(self.n_sites) != self.n_sites or self.n_sites < 2:
            raise ValueError(f"n_sites must be an integer >= 2, got {self.n_sites}")
        if not self.tunneling > 0:
            raise ValueError(f"tunneling must be positive, got {self.tunneling}")
        if not self.disorder_amplitude >= 0:
            raise ValueError(f"disorder_amplitude must be >= 0, got {self.disorder_amplitude}")
        if int(self.profile_exponent) != self.profile_exponent or self.profile_exponent < 0:
            raise ValueError(f"profile_exponent must be a nonnegative integer, got {self.profile_exponent}")
        if not self.dephasing_rate >= 0:
            raise ValueError(f"dephasing_rate must be >= 0, got {self.dephasing_rate}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")

    def replace(self, **changes) -> "ModelConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class DisorderRealization:
    onsite_energies: np.ndarray
    seed: int
    realization_index: int = 0

    @property
    def n_sites(self) -> int:
        return len(self.onsite_energies)


@dataclass(frozen=True)
class LatticeHamiltonian:
    """Real symmetric tridiagonal chain with open boundaries.

    ``diagonal`` holds the onsite energies, ``off_diagonal`` the uniform
    nearest-neighbour tunneling amplitude.
    """

    diagonal: np.ndarray
    off_diagonal: float

    @property
    def n_sites(self) -> int:
        return len(self.diagonal)

    def to_dense(self) -> np.ndarray:
        n = self.n_sites
        h = np.diag(np.asarray(self.diagonal, dtype=float))
        idx = np.arange(n - 1)
        h[idx, idx + 1] = self.off_diagonal
        h[idx + 1, idx] = self.off_diagonal
        return h

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal[:, None] * v if v.ndim == 2 else self.diagonal * v
        out = np.array(out, dtype=np.result_type(v, float))
        out[:-1] += self.off_diagonal * v[1:]
        out[1:] += self.off_diagonal * v[:-1]
        return out

    def norm(self) -> float:
        """Upper bound on the spectral norm (Gershgorin)."""
        return float(np.max(np.abs(self.diagonal)) + 2 * abs(self.off_diagonal))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs in ascending energy order; ``eigenvectors[:, i]`` is psi_i."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n_sites(self) -> int:
        return len(self.eigenvalues)

    def densities(self) -> np.ndarray:
        """|psi_i(x)|^2 as an (N, N) array, columns indexed by eigenstate."""
        return self.eigenvectors**2


@dataclass(frozen=True)
class CleanChainModes:
    wave_numbers: np.ndarray
    mode_shapes: np.ndarray
    energies: np.ndarray
    shifted: bool = True


@dataclass(frozen=True)
class OccupationProfile:
    """Site occupation probabilities P(x) at a given time."""

    populations: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if np.any(p < -1e-12):
            raise ValueError(f"occupation below -1e-12: min {p.min():.3e}")
        object.__setattr__(self, "populations", np.maximum(p, 0.0))

    @property
    def n_sites(self) -> int:
        return len(self.populations)

    def total(self) -> float:
        return float(np.sum(self.populations))


def site_labels(n_sites: int) -> np.ndarray:
    """Physical site labels 1..N used in formulas."""
    return np.arange(1, n_sites + 1, dtype=float)


def realization_rng(master_seed: int, realization_index: int) -> np.random.Generator:
    """Counter-based generator keyed by (master seed, realization index).

    Streams for different indices are statistically independent and do not
    depend on the order in which realizations are drawn.
    """
    if realization_index < 0:
        raise ValueError(f"realization_index must be >= 0, got {realization_index}")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(realization_index),))
    return np.random.Generator(np.random.Philox(seq))


def sample_disorder(config: ModelConfig, realization_index: int) -> DisorderRealization:
    rng = realization_rng(config.master_seed, realization_index)
    w = config.disorder_amplitude
    if w == 0:
        eps = np.zeros(config.n_sites)
    else:
        eps = rng.uniform(-w, w, size=config.n_sites)
    return DisorderRealization(eps, seed=int(config.master_seed), realization_index=int(realization_index))


def build_hamiltonian(disorder: DisorderRealization, config: ModelConfig) -> LatticeHamiltonian:
    eps = np.asarray(disorder.onsite_energies, dtype=float)
    if eps.ndim != 1 or len(eps) != config.n_sites:
        raise ValueError(f"disorder has {eps.size} onsite energies, config expects {config.n_sites}")
    return LatticeHamiltonian(eps.copy(), float(config.tunneling))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude component of each eigenvector made positive
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def diagonalize(h: LatticeHamiltonian) -> SpectralDecomposition:
    """Full spectrum of the chain via LAPACK's symmetric tridiagonal solver."""
    n = h.n_sites
    d = np.asarray(h.diagonal, dtype=float)
    e = np.full(n - 1, float(h.off_diagonal))
    try:
        evals, evecs = scipy.linalg.eigh_tridiagonal(d, e, lapack_driver="stemr")
    except np.linalg.LinAlgError as exc:
        index = _failed_index(exc)
        raise EigensolverError(f"tridiagonal eigensolver failed: {exc}", index) from exc
    return SpectralDecomposition(evals, _fix_signs(evecs))


def _failed_index(exc: Exception) -> int | None:
    digits = "".join(ch if ch.isdigit() else " " for ch in str(exc)).split()
    return int(digits[-1]) if digits else None


def ground_state(spec: SpectralDecomposition) -> OccupationProfile:
    i0 = int(np.argmin(spec.eigenvalues))
    psi = spec.eigenvectors[:, i0]
    return OccupationProfile(psi**2 / np.dot(psi, psi), time=0.0)


def ground_state_profile(h: LatticeHamiltonian) -> OccupationProfile:
    """Ground-state occupation without computing the full spectrum."""
    d = np.asarray(h.diagonal, dtype=float)
    e = np.full(h.n_sites - 1, float(h.off_diagonal))
    try:
        _, vec = scipy.linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"ground-state solve failed: {exc}", 0) from exc
    psi = vec[:, 0]
    return OccupationProfile(psi**2 / np.dot(psi, psi), time=0.0)


def center_of_mass(p: OccupationProfile) -> float:
    pop = np.asarray(p.populations, dtype=float)
    return float(np.dot(site_labels(len(pop)), pop) / np.sum(pop))


def clean_chain_modes(n_sites: int, tunneling: float = 1.0, shifted: bool = True) -> CleanChainModes:
    """Analytic eigenmodes of the disorder-free chain.

    With ``shifted=True`` the wave numbers are k_i = i*pi/(N+1) + pi, which
    lists the energies 2*T*cos(k_i) in ascending order. ``shifted=False``
    drops the +pi; modes then differ only by the alternating sign (-1)**x.
    """
    if n_sites < 2:
        raise ValueError("n_sites must be >= 2")
    i = np.arange(1, n_sites + 1, dtype=float)
    k = i * np.pi / (n_sites + 1)
    if shifted:
        k = k + np.pi
    x = site_labels(n_sites)
    shapes = np.sqrt(2.0 / (n_sites + 1)) * np.sin(np.outer(x, k))
    return CleanChainModes(k, shapes, 2.0 * tunneling * np.cos(k), shifted=shifted)
