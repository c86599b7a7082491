"""Command-line interface: evolve, ensemble, sweep, peaks.

Settings come from defaults, then an optional INI file (``--config``), then
command-line flags. Keys in the file are the long flag names with dashes
replaced by underscores; section names are free-form.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import EnsembleSpec, default_gamma_grid, resolve_threads, run_ensemble, run_realization
from .lattice import ModelConfig, OccupationProfile
from .peaks import peak_records

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


DEFAULTS = {
    "seed": 0,
    "sites": 500,
    "tunneling": 1.0,
    "disorder": None,
    "gamma": 1e-9,
    "q": 1,
    "engine": "auto",
    "out": ".",
    "threads": None,
    "format": "csv",
    "realizations": 1,
    "gammas": None,
    "gamma_points": 30,
    "com_window": None,
    "reference_gamma": None,
    "mean_mode": "per_realization",
    "gamma_switch": 1e-6,
    "window": 5,
    "fractions": "0.5,0.25,0.125",
    "per_decade": 64,
    "time_cap": 1e10,
    "step_budget": 20_000_000,
    "scheme": "auto",
    "first_index": 0,
    "index": None,
    "floor": 1e-12,
}

# keys that do not change results and are left out of the config hash
_RUNTIME_ONLY = {"threads", "out", "format", "config"}


def _float_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="INI file with settings (flags override it)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--sites", type=int, help="number of lattice sites N")
    p.add_argument("--tunneling", type=float, help="hopping amplitude T")
    p.add_argument("--disorder", type=float, help="disorder amplitude W (default T/10)")
    p.add_argument("--gamma", type=float, help="dephasing rate in units of T")
    p.add_argument("--q", type=int, help="profile exponent; 0 selects uniform dephasing")
    p.add_argument("--engine", choices=["auto", "full", "rate"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker processes (env ANDERSON_DEPHASE_THREADS)")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--realizations", type=int, help="accepted realizations to collect")
    p.add_argument("--gammas", help="comma-separated rate grid")
    p.add_argument("--gamma-points", type=int, help="log-spaced points from 1e-9 to 1 when --gammas is absent")
    p.add_argument("--com-window", help="lo,hi centre-of-mass window in site labels 1..N")
    p.add_argument("--reference-gamma", type=float, help="rate used for the sub-ensemble split")
    p.add_argument("--mean-mode", choices=["per_realization", "ensemble_mean"])
    p.add_argument("--gamma-switch", type=float, help="rate equation below this rate (units of T)")
    p.add_argument("--window", type=int, help="peak matching window in sites")
    p.add_argument("--fractions", help="comma-separated decay fractions")
    p.add_argument("--per-decade", type=int, help="log-time samples per decade")
    p.add_argument("--time-cap", type=float, help="largest evolution time in units of 1/T")
    p.add_argument("--step-budget", type=int, help="integrator step budget per realization")
    p.add_argument("--scheme", choices=["auto", "rk4", "lawson"])
    p.add_argument("--first-index", type=int, help="first realization index tried")
    p.add_argument("--index", type=int, help="realization index for evolve (default: first accepted)")
    p.add_argument("--floor", type=float, help="peak height noise floor")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="anderson-dephase", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("evolve", parents=[common], help="one realization at one rate")
    sub.add_parser("ensemble", parents=[common], help="mean profiles over accepted realizations")
    sub.add_parser("sweep", parents=[common], help="sub-ensemble growth statistics over a rate grid")
    pk = sub.add_parser("peaks", parents=[common], help="peaks and prominences of a stored profile")
    pk.add_argument("profile", help="CSV file with a P column (optionally site)")
    return parser


def _read_config(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            out[key] = value
    return out


def _coerce(key, value):
    if value is None or value == "":
        return None
    kind = type(DEFAULTS[key]) if DEFAULTS[key] is not None else None
    try:
        if key in ("disorder", "reference_gamma"):
            return float(value)
        if key in ("threads", "index"):
            return int(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    given = vars(args)
    if given.get("config"):
        settings.update(_read_config(given["config"]))
    for key, value in given.items():
        if key in DEFAULTS:
            settings[key] = value
    settings = {k: _coerce(k, v) for k, v in settings.items()}
    if settings["engine"] not in ("auto", "full", "rate"):
        raise ConfigError(f"engine must be auto, full or rate, got {settings['engine']!r}")
    if settings["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {settings['format']!r}")
    return settings


def _model(s) -> ModelConfig:
    return ModelConfig(
        n_sites=s["sites"],
        tunneling=s["tunneling"],
        disorder_amplitude=s["disorder"],
        profile_exponent=s["q"],
        dephasing_rate=s["gamma"],
        master_seed=s["seed"],
    )


def _spec(s, gamma_grid, realizations) -> EnsembleSpec:
    window = tuple(_float_list(s["com_window"])) if s["com_window"] else None
    if window is not None and len(window) != 2:
        raise ConfigError("com_window needs two values lo,hi")
    return EnsembleSpec(
        model=_model(s),
        realization_count=realizations,
        com_window=window,
        gamma_grid=tuple(gamma_grid),
        engine_override=None if s["engine"] == "auto" else s["engine"],
        output_dir=s["out"],
        snapshot_fractions=tuple(_float_list(s["fractions"])),
        gamma_switch=s["gamma_switch"],
        reference_gamma=s["reference_gamma"],
        mean_mode=s["mean_mode"],
        window=s["window"],
        floor=s["floor"],
        per_decade=s["per_decade"],
        time_cap=s["time_cap"],
        step_budget=s["step_budget"],
        scheme=s["scheme"],
        first_index=s["first_index"],
    )


def config_hash(settings: dict) -> str:
    keep = {k: settings[k] for k in sorted(settings) if k not in _RUNTIME_ONLY}
    return hashlib.sha256(json.dumps(keep, sort_keys=True, default=str).encode()).hexdigest()[:16]


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _num(v):
    if v is None:
        return "not_reached"
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _jnum(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


class _Writer:
    def __init__(self, settings, command):
        self.settings = settings
        self.command = command
        self.out = Path(settings["out"])
        self.format = settings["format"]
        self.hash = config_hash(settings)
        self.describe = git_describe()
        self.written = []

    def _config(self):
        return {k: self.settings[k] for k in sorted(self.settings) if k not in _RUNTIME_ONLY}

    def table(self, name, columns, rows, meta=None):
        self.out.mkdir(parents=True, exist_ok=True)
        if self.format == "json":
            path = self.out / f"{name}.json"
            doc = {
                "config": self._config(),
                "git_describe": self.describe,
                "results": {
                    "command": self.command,
                    "version": __version__,
                    "config_hash": self.hash,
                    "meta": {k: _jnum(v) for k, v in (meta or {}).items()},
                    "columns": list(columns),
                    "rows": [[_jnum(v) for v in row] for row in rows],
                },
            }
            text = json.dumps(doc, indent=1, sort_keys=False, default=_jnum) + "\n"
        else:
            path = self.out / f"{name}.csv"
            buf = io.StringIO()
            buf.write(f"# anderson-dephase {__version__} ({self.describe})\n")
            buf.write(f"# command: {self.command}\n")
            buf.write(f"# config_hash: {self.hash}\n")
            buf.write(f"# config: {json.dumps(self._config(), sort_keys=True, default=str)}\n")
            for k, v in (meta or {}).items():
                buf.write(f"# {k}: {_num(v) if not isinstance(v, str) else v}\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_num(v) if not isinstance(v, str) else v for v in row])
            text = buf.getvalue()
        path.write_text(text)
        self.written.append(str(path))
        return path


def _frac_label(f: float) -> str:
    return repr(float(f))


def cmd_evolve(s, spec, writer):
    gamma = spec.gamma_grid[0]
    if s["index"] is None:
        from .ensemble import select_realizations

        accepted, rejected, failed = select_realizations(spec)
        if not accepted:
            raise RuntimeError(f"no realization passed the centre-of-mass filter ({len(rejected)} rejected)")
        index = accepted[0]
    else:
        index = s["index"]
    rec = run_realization(spec, index, gamma)
    if not rec.ok:
        raise RuntimeError(f"realization {index} failed: {rec.error}")
    from .ensemble import _setup
    from .lattice import ground_state

    initial = ground_state(_setup(spec.model, index)[1]).populations
    # unreached fractions keep their column, filled with the missing marker
    fracs = spec.snapshot_fractions
    snaps = [rec.snapshots.get(f) for f in fracs]
    columns = ["site", "P_initial"] + [f"P_{_frac_label(f)}" for f in fracs]
    rows = [
        [x + 1, initial[x]] + [None if p is None else p[x] for p in snaps] for x in range(spec.model.n_sites)
    ]
    meta = {
        "realization_index": index,
        "gamma": gamma,
        "engine": rec.engine,
        "delta": rec.delta,
        "horizon_time": rec.horizon_time,
        "horizon_reached": str(rec.horizon_reached),
    }
    for f in spec.snapshot_fractions:
        meta[f"decay_time_{_frac_label(f)}"] = rec.decay_times.get(f)
    writer.table("trajectory", columns, rows, meta)
    return 0


def _realization_rows(agg):
    fr = agg.spec.snapshot_fractions
    columns = ["realization_index", "gamma", "engine", "delta"] + [f"decay_time_{_frac_label(f)}" for f in fr] + [
        "horizon_time",
        "horizon_reached",
        "error",
    ]
    rows = []
    for r in agg.records:
        rows.append(
            [r.realization_index, r.gamma, r.engine, r.delta]
            + [r.decay_times.get(f) for f in fr]
            + [r.horizon_time, str(r.horizon_reached), r.error or ""]
        )
    return columns, rows


def _counts(agg):
    return {
        "attempted": agg.attempted,
        "accepted": agg.accepted,
        "rejected": agg.rejected,
        "failed": agg.failed,
        "requested": agg.spec.realization_count,
    }


def _grid(s):
    if s["gammas"]:
        return sorted(_float_list(s["gammas"]))
    return list(default_gamma_grid(s["gamma_points"]))


def cmd_ensemble(s, spec, writer, threads):
    agg = run_ensemble(spec, threads)
    rows = []
    for (g, f), prof in sorted(agg.mean_profiles.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
        if prof is None:
            continue
        for x, p in enumerate(prof):
            rows.append([g, f, x + 1, p])
    meta = dict(_counts(agg), mean_mode=spec.mean_mode)
    for (g, f), t in sorted(agg.mean_decay_times.items()):
        meta[f"ensemble_decay_time_{g!r}_{_frac_label(f)}"] = t
    writer.table("profile", ["gamma", "fraction", "site", "P"], rows, meta)
    writer.table("realizations", *_realization_rows(agg), _counts(agg))
    return 0 if agg.accepted else 2


def cmd_sweep(s, spec, writer, threads):
    agg = run_ensemble(spec, threads)
    cols = ["gamma", "mean_delta_low", "mean_delta_high", "stderr_low", "stderr_high", "n"]
    rows = [[r[c] for c in cols] for r in agg.sweep_rows]
    meta = dict(_counts(agg), reference_gamma=spec.ref_gamma)
    writer.table("sweep", cols, rows, meta)
    writer.table("realizations", *_realization_rows(agg), _counts(agg))
    return 0 if agg.accepted else 2


def read_profile(path) -> np.ndarray:
    """Profile values from a CSV: the ``P`` column, else the rightmost numeric column."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path} holds no data")
    rows = list(csv.reader(lines))
    header = [h.strip() for h in rows[0]]
    try:
        [float(h) for h in header]
        data = rows
        header = []
    except ValueError:
        data = rows[1:]
    if "P" in header:
        return np.array([float(r[header.index("P")]) for r in data])
    for col in range(len(rows[0]) - 1, -1, -1):
        try:
            return np.array([float(r[col]) for r in data])
        except ValueError:
            continue
    raise ValueError(f"{path} has no numeric column")


def load_profile(path) -> np.ndarray:
    try:
        values = read_profile(path)
        OccupationProfile(values)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read profile {path}: {exc}") from exc
    return values


def cmd_peaks(s, values, writer, path):
    recs = peak_records(values, s["floor"])
    cols = ["site", "height", "left_prominence", "right_prominence", "prominence"]
    rows = [[r.site + 1, r.height, r.left_prominence, r.right_prominence, r.prominence] for r in recs]
    writer.table("peaks", cols, rows, {"source": str(path), "peak_count": len(rows)})
    return 0


def _fail(kind, exc, code):
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def cli_main(argv=None) -> int:
    """Run the CLI; returns 0 on success, 1 for invalid configuration, 2 for
    runtime failures."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        s = resolve_settings(args)
        threads = resolve_threads(s["threads"])
        if args.command == "peaks":
            values = load_profile(args.profile)
        elif args.command == "evolve":
            spec = _spec(s, [s["gamma"]], 1)
        elif args.command == "ensemble":
            spec = _spec(s, sorted(_float_list(s["gammas"])) if s["gammas"] else [s["gamma"]], s["realizations"])
        else:
            spec = _spec(s, _grid(s), s["realizations"])
    except (ConfigError, ValueError, TypeError) as exc:
        return _fail("invalid_config", exc, 1)
    try:
        writer = _Writer(s, args.command)
        if args.command == "peaks":
            code = cmd_peaks(s, values, writer, args.profile)
        elif args.command == "evolve":
            code = cmd_evolve(s, spec, writer)
        elif args.command == "ensemble":
            code = cmd_ensemble(s, spec, writer, threads)
        else:
            code = cmd_sweep(s, spec, writer, threads)
    except Exception as exc:
        return _fail("runtime_failure", exc, 2)
    for path in writer.written:
        print(path)
    return code


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
