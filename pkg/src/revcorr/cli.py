"""Command-line front end.

Every subcommand resolves its settings as: built-in defaults, then the JSON
config file (``--config`` or ``$REVCORR_CONFIG``), then command-line flags.
The resolved settings are embedded in every artifact written, so an artifact's
``config`` block can be fed back through ``--config`` to reproduce it.

Exit codes: 0 success, 1 validation error, 2 runtime or fit failure. Errors
are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import run_bench
from .correlator import CorrelationEstimate, ZeroVarianceError, cross_correlate, reverse_correlate
from .fitting import FitInitializationError, fit_damped_cosine, fit_double_lorentzian
from .pipeline import DEFAULT_ANALYZER_ENTRIES, compare_paths, field_scan
from .spectral import PowerSpectrum, periodogram, wiener_khinchin
from .synth import EchoParams, SpinNoiseParams, echo_expectation, echo_scan, generate_spin_noise, generate_two_channel
from .trace import NoiseTrace, load_trace, remove_mean, save_trace, segment

CONFIG_ENV = "REVCORR_CONFIG"


class RunFailure(RuntimeError):
    """A command ran but could not produce a valid result (exit code 2)."""


DEFAULTS = {
    "simulate": {
        "output": "trace.rvc",
        "nu_l": 2e6,
        "tau_s": 1e-6,
        "dt": 5e-9,
        "samples": 10_010_000,
        "spin_rms": 1.0,
        "shot_rms": 3.0,
        "shot_rms_b": None,
        "two_channel": False,
        "seed": 0,
        "dtype": "f64",
    },
    "correlate": {
        "input": None,
        "output": "correlation",
        "segment_entries": 1001,
        "stride": None,
        "normalization": "per_index",
        "mean": "global",
        "two_channel": False,
        "channel": 0,
        "threads": 1,
    },
    "spectrum": {
        "input": None,
        "output": "spectrum",
        "method": None,
        "window": "none",
        "exclude_zero_lag": True,
        "segment_entries": DEFAULT_ANALYZER_ENTRIES,
        "mean": "global",
        "channel": 0,
    },
    "fit": {
        "input": None,
        "output": "fit.json",
        "exclude_lag_below": None,
        "fix_nu_l": None,
        "weighting": "none",
    },
    "compare": {
        "input": None,
        "output": "compare.json",
        "segment_entries": 1001,
        "analyzer_entries": DEFAULT_ANALYZER_ENTRIES,
        "normalization": "per_index",
        "mean": "global",
        "threshold": 3.0,
        "scan_nu_l": None,
        "tau_s": 1e-6,
        "dt": 5e-9,
        "samples": 10_010_000,
        "spin_rms": 1.0,
        "shot_rms": 3.0,
        "seed": 0,
    },
    "echo": {
        "output": "echo.csv",
        "T": 1e-6,
        "sigma_inhom": 4e6,
        "nu_center": 0.0,
        "T2": math.inf,
        "T1": math.inf,
        "ensemble_size": 64,
        "realizations": 2000,
        "points": 41,
        "no_flip": False,
        "seed": 0,
    },
    "bench": {
        "input": None,
        "output": None,
        "segment_entries": 1001,
        "segments": 10_000,
        "methods": "reversal,periodogram",
        "repetitions": 5,
        "warmup": 2,
        "threads": 1,
        "seed": 0,
    },
}


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=_json_default, allow_nan=True)


def _provenance(config: dict) -> dict:
    return {"tool": "revcorr", "version": __version__, "config": config}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(_dumps(payload) + "\n")


def _write_csv(path: Path, header: str, columns, config: dict) -> None:
    meta = json.dumps(_provenance(config), sort_keys=True, default=_json_default)
    with open(path, "w") as fh:
        fh.write(f"# {meta}\n")
        fh.write(header + "\n")
        for row in zip(*columns):
            fh.write(",".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(v) for v in row) + "\n")


def _load_config_file(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValueError(f"config file {path} not found")
    data = json.loads(p.read_text())
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return data


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    config = dict(DEFAULTS[command])
    file_cfg = _load_config_file(getattr(args, "config", None))
    for key, value in file_cfg.items():
        if key in config:
            config[key] = value
    for key in config:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    for key in ("T2", "T1"):
        if key in config and isinstance(config[key], str):
            config[key] = float(config[key])
    config["command"] = command
    if "input" in config and config["input"] is not None and not Path(config["input"]).exists():
        raise ValueError(f"input {config['input']} does not exist")
    return config


# --- subcommands --------------------------------------------------------------


def cmd_simulate(cfg: dict) -> None:
    params = SpinNoiseParams(cfg["nu_l"], cfg["tau_s"], cfg["spin_rms"], cfg["shot_rms"], cfg["dt"], int(cfg["seed"]))
    n = int(cfg["samples"])
    if cfg["two_channel"]:
        trace = generate_two_channel(params, n, cfg["shot_rms_b"])
    else:
        trace = generate_spin_noise(params, n)
    out = Path(cfg["output"])
    fmt = "csv" if out.suffix.lower() == ".csv" else "binary"
    save_trace(trace, out, fmt, dtype=cfg["dtype"])
    truth = {
        "nu_L": params.nu_L,
        "tau_s": params.tau_s,
        "spin_rms": params.spin_rms,
        "shot_rms": params.shot_rms,
        "shot_rms_b": cfg["shot_rms_b"] if cfg["shot_rms_b"] is not None else params.shot_rms,
        "dt": params.dt,
        "seed": params.seed,
        "spin_fraction": params.spin_fraction,
    }
    _write_json(out.with_name(out.name + ".json"), {**_provenance(cfg), "ground_truth": truth})


def _load_trace(cfg) -> NoiseTrace:
    return load_trace(cfg["input"])


def cmd_correlate(cfg: dict) -> None:
    trace = _load_trace(cfg)
    grid = remove_mean(segment(trace, int(cfg["segment_entries"]), cfg["stride"]), cfg["mean"])
    threads = int(cfg["threads"])
    if cfg["two_channel"]:
        if trace.n_channels != 2:
            raise ValueError("--two-channel needs a two-channel trace")
        est = cross_correlate(grid.channel(0), grid.channel(1), cfg["normalization"], shards=threads, threads=threads)
    else:
        est = reverse_correlate(grid.channel(int(cfg["channel"])), cfg["normalization"], shards=threads, threads=threads)
    stem = Path(cfg["output"])
    _write_csv(
        stem.with_suffix(".csv"),
        "lag_s,value,num_segments",
        (est.lags, est.values, [est.segments_accumulated] * est.lags.size),
        cfg,
    )
    _write_json(stem.with_suffix(".json"), {**_provenance(cfg), "correlation": est.to_dict()})


def _read_artifact(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (UnicodeDecodeError, json.JSONDecodeError):
        return {}


def cmd_spectrum(cfg: dict) -> None:
    artifact = _read_artifact(cfg["input"])
    method = cfg["method"] or ("wiener_khinchin" if "correlation" in artifact else "periodogram")
    if method == "wiener_khinchin":
        if "correlation" not in artifact:
            raise ValueError("wiener_khinchin needs a correlation JSON artifact as input")
        corr = CorrelationEstimate.from_dict(artifact["correlation"])
        window = cfg["window"] if cfg["window"] != "hann" else "hann_lag"
        spec = wiener_khinchin(corr, window, bool(cfg["exclude_zero_lag"]))
    elif method == "periodogram":
        trace = load_trace(cfg["input"])
        if trace.n_channels > 1:
            trace = trace.channel(int(cfg["channel"]))
        entries = min(int(cfg["segment_entries"]), len(trace))
        grid = remove_mean(segment(trace, entries, require_odd=False), cfg["mean"])
        spec = periodogram(grid, cfg["window"])
    else:
        raise ValueError(f"unknown spectrum method {method!r}")
    stem = Path(cfg["output"])
    _write_csv(stem.with_suffix(".csv"), "freq_hz,power", (spec.freqs, spec.values), cfg)
    _write_json(stem.with_suffix(".json"), {**_provenance(cfg), "spectrum": spec.to_dict()})


def cmd_fit(cfg: dict) -> None:
    artifact = _read_artifact(cfg["input"])
    if "correlation" in artifact:
        corr = CorrelationEstimate.from_dict(artifact["correlation"])
        fit = fit_damped_cosine(
            corr, cfg["exclude_lag_below"], fix_nu_L=cfg["fix_nu_l"], weighted=cfg["weighting"] != "none"
        )
    elif "spectrum" in artifact:
        spec = PowerSpectrum.from_dict(artifact["spectrum"])
        fit = fit_double_lorentzian(spec, fix_nu_L=cfg["fix_nu_l"], weighting=cfg["weighting"])
    else:
        raise ValueError("input is neither a correlation nor a spectrum artifact")
    _write_json(Path(cfg["output"]), {**_provenance(cfg), "fit": fit.to_dict()})
    if not fit.converged:
        raise RunFailure("fit did not converge; best-so-far parameters written")


def cmd_compare(cfg: dict) -> None:
    kw = dict(
        segment_entries=int(cfg["segment_entries"]),
        normalization=cfg["normalization"],
        mean=cfg["mean"],
        analyzer_entries=int(cfg["analyzer_entries"]),
        threshold=float(cfg["threshold"]),
    )
    if cfg["scan_nu_l"]:
        nus = cfg["scan_nu_l"]
        nus = [float(v) for v in (nus.split(",") if isinstance(nus, str) else nus)]
        base = SpinNoiseParams(nus[0], cfg["tau_s"], cfg["spin_rms"], cfg["shot_rms"], cfg["dt"], int(cfg["seed"]))
        for nu in nus:
            SpinNoiseParams(nu, cfg["tau_s"], cfg["spin_rms"], cfg["shot_rms"], cfg["dt"])
        report = field_scan(base, nus, int(cfg["samples"]), **kw)
        _write_json(Path(cfg["output"]), {**_provenance(cfg), "scan": report})
        print(_dumps({k: report[k] for k in ("programmed_nu_L", "fitted_nu_L", "slope", "intercept")}))
        return
    if cfg["input"] is None:
        raise ValueError("compare needs an input trace or --scan-nu-l")
    cmp = compare_paths(load_trace(cfg["input"]), **kw)
    report = cmp.to_dict()
    _write_json(Path(cfg["output"]), {**_provenance(cfg), "comparison": report})
    print(_dumps(report))
    if not cmp.ok:
        raise RunFailure(f"fit failure: lag path: {cmp.lag_error}; frequency path: {cmp.freq_error}")


def cmd_echo(cfg: dict) -> None:
    params = EchoParams(
        T=cfg["T"],
        sigma_inhom=cfg["sigma_inhom"],
        nu_center=cfg["nu_center"],
        T2=cfg["T2"],
        T1=cfg["T1"],
        ensemble_size=int(cfg["ensemble_size"]),
        realizations=int(cfg["realizations"]),
        seed=int(cfg["seed"]),
    )
    points = int(cfg["points"])
    grid = params.T * np.arange(1, points + 1) / (points + 1)
    flip = not cfg["no_flip"]
    scan = echo_scan(params, grid, flip=flip)
    expected = echo_expectation(params, scan.t0, flip=flip)
    _write_csv(Path(cfg["output"]), "t0_s,C,stderr,expected", (scan.t0, scan.C, scan.stderr, expected), cfg)


def cmd_bench(cfg: dict) -> None:
    L = int(cfg["segment_entries"])
    if cfg["input"]:
        trace = load_trace(cfg["input"])
        if trace.n_channels > 1:
            trace = trace.channel(0)
    else:
        rng = np.random.default_rng(int(cfg["seed"]))
        trace = NoiseTrace(rng.standard_normal(L * int(cfg["segments"])), 5e-9, "white")
    grid = segment(trace, L)
    methods = cfg["methods"].split(",") if isinstance(cfg["methods"], str) else list(cfg["methods"])
    reports = run_bench(grid, methods, int(cfg["repetitions"]), int(cfg["warmup"]), int(cfg["threads"]))
    lines = [r.to_json() for r in reports]
    if cfg["output"]:
        Path(cfg["output"]).write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)


COMMANDS = {
    "simulate": cmd_simulate,
    "correlate": cmd_correlate,
    "spectrum": cmd_spectrum,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "echo": cmd_echo,
    "bench": cmd_bench,
}


def _flag(p, name, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **kw)


def _bool_flag(p, name, help):
    p.add_argument("--" + name.replace("_", "-"), dest=name, action="store_const", const=True, default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revcorr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"revcorr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", default=None, help=f"JSON config file (default: ${CONFIG_ENV})")
        p.add_argument("-o", "--output", dest="output", default=None, help="output path")
        return p

    p = add("simulate", "generate a synthetic spin-noise trace")
    _flag(p, "nu_l", type=float, help="Larmor frequency, Hz")
    _flag(p, "tau_s", type=float, help="spin relaxation time, s")
    _flag(p, "dt", type=float, help="sample period, s")
    _flag(p, "samples", type=int, help="samples per channel")
    _flag(p, "spin_rms", type=float, help="RMS of the spin-noise component")
    _flag(p, "shot_rms", type=float, help="RMS of white noise (channel A)")
    _flag(p, "shot_rms_b", type=float, help="RMS of white noise on channel B")
    _bool_flag(p, "two_channel", "write two channels sharing the spin signal")
    _flag(p, "seed", type=int, help="random seed")
    _flag(p, "dtype", choices=["f64", "f32", "i16"], help="on-disk sample type")

    p = add("correlate", "time-reversal correlation of a trace")
    p.add_argument("input", nargs="?", default=None)
    _flag(p, "segment_entries", type=int, help="entries per segment, N+1 (odd)")
    _flag(p, "stride", type=int, help="entries between segment starts")
    _flag(p, "normalization", choices=["per_index", "global_variance", "unnormalized"])
    _flag(p, "mean", choices=["global", "per_segment", "none"], help="mean removal")
    _bool_flag(p, "two_channel", "cross-correlate channel 0 with reversed channel 1")
    _flag(p, "channel", type=int, help="channel for single-channel correlation")
    _flag(p, "threads", type=int, help="worker threads (1 = bit-reproducible)")

    p = add("spectrum", "power spectrum from a correlation artifact or a trace")
    p.add_argument("input", nargs="?", default=None)
    _flag(p, "method", choices=["wiener_khinchin", "periodogram"])
    _flag(p, "window", choices=["none", "hann", "hann_lag"])
    p.add_argument("--keep-zero-lag", dest="exclude_zero_lag", action="store_const", const=False, default=None)
    _flag(p, "segment_entries", type=int, help="periodogram segment length")
    _flag(p, "mean", choices=["global", "per_segment", "none"])
    _flag(p, "channel", type=int)

    p = add("fit", "fit a correlation (damped cosine) or spectrum (Lorentzian pair) artifact")
    p.add_argument("input", nargs="?", default=None)
    _flag(p, "exclude_lag_below", type=float, help="ignore |lag| below this, s")
    _flag(p, "fix_nu_l", type=float, help="hold the Larmor frequency fixed")
    _flag(p, "weighting", choices=["none", "model", "stderr"])

    p = add("compare", "fit one trace through both the lag and the frequency path")
    p.add_argument("input", nargs="?", default=None)
    _flag(p, "segment_entries", type=int)
    _flag(p, "analyzer_entries", type=int, help="periodogram segment length")
    _flag(p, "normalization", choices=["per_index", "global_variance", "unnormalized"])
    _flag(p, "mean", choices=["global", "per_segment", "none"])
    _flag(p, "threshold", type=float, help="agreement threshold in combined sigma")
    _flag(p, "scan_nu_l", help="comma-separated Larmor frequencies to simulate and scan")
    for name in ("tau_s", "dt", "spin_rms", "shot_rms"):
        _flag(p, name, type=float)
    _flag(p, "samples", type=int)
    _flag(p, "seed", type=int)

    p = add("echo", "pi-pulse echo scan of an inhomogeneous spin ensemble")
    for name in ("T", "sigma_inhom", "nu_center", "T2", "T1"):
        _flag(p, name, type=float)
    for name in ("ensemble_size", "realizations", "points", "seed"):
        _flag(p, name, type=int)
    _bool_flag(p, "no_flip", "control run without the sign flip")

    p = add("bench", "time the reversal correlator against the periodogram")
    p.add_argument("input", nargs="?", default=None)
    for name in ("segment_entries", "segments", "repetitions", "warmup", "threads", "seed"):
        _flag(p, name, type=int)
    _flag(p, "methods", help="comma-separated: reversal,periodogram")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        COMMANDS[args.command](cfg)
    except (FitInitializationError, ZeroVarianceError, RunFailure) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 2}), file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 1}), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 2}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
