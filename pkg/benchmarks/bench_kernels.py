"""Compare the compiled kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--sites 32,128] [--repeat 5]``.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from anderson_dephase import kernels
from anderson_dephase.dephasing import binomial_weights, power_law_profile
from anderson_dephase.evolution import MasterEquationEngine, _pack
from anderson_dephase.lattice import ModelConfig, build_hamiltonian, diagonalize, sample_disorder


def _cases(n):
    cfg = ModelConfig(n_sites=n, master_seed=1)
    h = build_hamiltonian(sample_disorder(cfg, 0), cfg)
    spec = diagonalize(h)
    rho = np.outer(spec.eigenvectors[:, 0], spec.eigenvectors[:, 0]).astype(complex)
    dec = 1e-3 * power_law_profile(1).distance_table(n)
    eng = MasterEquationEngine(h, power_law_profile(1), 1.0, rho, scheme="lawson", richardson_steps=0)
    factors = eng._lawson_factors(eng.step)
    vt = np.ascontiguousarray(spec.eigenvectors.T)
    profile = np.abs(np.sin(np.arange(n) * 0.37)) * np.exp(-np.arange(n) / n)
    steps = max(20, 200_000 // (n * n))

    def rk4(impl):
        a, b = _pack(rho)
        impl.rk4_advance(a, b, h.diagonal, dec, 1.0, 0.05, steps)

    def lawson(impl):
        a, b = _pack(rho)
        impl.lawson_advance(a, b, *factors, 1.0, 0.05, steps)

    return {
        f"rk4 x{steps}": rk4,
        f"lawson x{steps}": lawson,
        "eta q=1": lambda impl: impl.coupling_matrix_prefix(vt, binomial_weights(1)),
        "eta q=4": lambda impl: impl.coupling_matrix_prefix(vt, binomial_weights(4)),
        "prominence": lambda impl: impl.peak_prominences(profile, 1e-12),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sites", default="32,128")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        print("compiled extension not available; only the fallback is timed")
    impls = [("compiled", kernels.compiled), ("fallback", kernels.fallback)]
    print(f"{'N':>5} {'kernel':<16} {'compiled [s]':>13} {'fallback [s]':>13} {'speedup':>8}")
    for n in (int(v) for v in args.sites.split(",")):
        for name, fn in _cases(n).items():
            times = {}
            for label, impl in impls:
                if impl is None:
                    continue
                times[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
            c, f = times.get("compiled"), times["fallback"]
            speed = f"{f / c:8.1f}" if c else "       -"
            c_txt = f"{c:13.5f}" if c else f"{'-':>13}"
            print(f"{n:>5} {name:<16} {c_txt} {f:13.5f} {speed}")


if __name__ == "__main__":
    main()
