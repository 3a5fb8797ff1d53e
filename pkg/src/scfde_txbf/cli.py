"""Batch front-end: YAML experiment spec in, CSV/JSON results out.

Precedence for every setting is command-line flag, then spec file, then the
built-in defaults (N_c=64, L=K=16, M=N_t=N_r=2, σ_t=2, σs²=1, P_T=M·N_c).

Outputs (numbers written with 12 significant digits):

``ber.csv``
    ``snr_db,criterion,ber,ber_stderr,bits``
``abr.csv``
    ``snr_db,criterion,abr_bits_per_symbol``
``solver_trace.json``
    ``{"<criterion>@<snr>": {"<channel>": [{iteration, lambda, gap, objective, step}, ...]}}``
``manifest.json``
    normalised spec, seed, package/library versions and the kernel backend.

On failure an ``error.json`` report is written (when possible), the same
JSON is printed to stderr and the exit status is non-zero: 2 for invalid
specs, 3 when solver exclusions exceed the budget, 4 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__, _accel
from .channel import PowerDelayProfile, SystemConfig
from .errors import ConfigError
from .optimizer import SolverConfig
from .simulator import EPA, design_name, monte_carlo_sweep, parse_design

EXIT_OK, EXIT_SPEC, EXIT_BUDGET, EXIT_IO = 0, 2, 3, 4

DEFAULT_CRITERIA = ("EPA", "AMSE", "GMSE", "maxMSE", "ASINR", "GSINR", "HSINR", "ABER")
DEFAULT_SNRS = (4.0, 8.0, 12.0)

_SYSTEM_KEYS = ("n_tx", "n_rx", "n_streams", "block_len", "cir_len", "cp_len",
                "sigma_s2", "power_budget")
_SOLVER_KEYS = tuple(f.name for f in fields(SolverConfig))
_TOP_KEYS = ("system", "pdp", "solver", "criteria", "snrs_db", "n_channels",
             "blocks_per_channel", "seed", "output_dir", "exclusion_budget")


@dataclass(frozen=True)
class ExperimentSpec:
    system: SystemConfig = field(default_factory=SystemConfig)
    pdp: PowerDelayProfile = field(default_factory=PowerDelayProfile)
    solver: SolverConfig = field(default_factory=SolverConfig)
    criteria: tuple = DEFAULT_CRITERIA
    snrs_db: tuple = DEFAULT_SNRS
    n_channels: int = 200
    blocks_per_channel: int = 100
    seed: int = 0
    output_dir: str = "results"
    exclusion_budget: float = 0.01

    def designs(self):
        return [parse_design(c) for c in self.criteria]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _as_int(v, name, problems):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        problems.append(f"{name}: expected an integer (got {v!r})")
        return None
    return int(v)


def _as_float(v, name, problems):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append(f"{name}: expected a number (got {v!r})")
        return None
    return float(v)


def _section(raw, name, allowed, problems):
    sec = raw.get(name, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        problems.append(f"{name}: expected a mapping (got {type(sec).__name__})")
        return {}
    for key in sec:
        if key not in allowed:
            problems.append(f"{name}.{key}: unknown field")
    return sec


def _list(v, name, problems):
    if isinstance(v, str):
        v = [s for s in (t.strip() for t in v.split(",")) if s]
    if not isinstance(v, (list, tuple)) or not v:
        problems.append(f"{name}: expected a non-empty list")
        return None
    return list(v)


def spec_from_dict(raw: Optional[dict]) -> ExperimentSpec:
    """Validate a plain mapping and fill in defaults.

    Raises
    ------
    ConfigError
        With one entry in ``.fields`` per problem found.
    """
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("spec: top level must be a mapping")
    problems = [f"{k}: unknown field" for k in raw if k not in _TOP_KEYS]

    sys_raw = _section(raw, "system", _SYSTEM_KEYS, problems)
    sys_kw = {}
    for key in _SYSTEM_KEYS:
        if key in sys_raw:
            conv = _as_float if key in ("sigma_s2", "power_budget") else _as_int
            val = conv(sys_raw[key], f"system.{key}", problems)
            if val is not None:
                sys_kw[key] = val
    pdp_raw = _section(raw, "pdp", ("decay",), problems)
    decay = _as_float(pdp_raw.get("decay", 2.0), "pdp.decay", problems)
    sol_raw = _section(raw, "solver", _SOLVER_KEYS, problems)
    sol_kw = {}
    for key, val in sol_raw.items():
        if key == "step_rule":
            sol_kw[key] = str(val)
        elif key in ("max_outer_iters", "max_inner_iters"):
            sol_kw[key] = _as_int(val, f"solver.{key}", problems)
        elif key in _SOLVER_KEYS:
            sol_kw[key] = _as_float(val, f"solver.{key}", problems)

    criteria = _list(raw.get("criteria", list(DEFAULT_CRITERIA)), "criteria", problems)
    names = []
    for c in criteria or []:
        try:
            names.append(design_name(parse_design(c)))
        except ConfigError as exc:
            problems.append(f"criteria: {exc}")
    snrs = _list(raw.get("snrs_db", list(DEFAULT_SNRS)), "snrs_db", problems)
    snr_vals = []
    for s in snrs or []:
        try:
            v = float(s)
        except (TypeError, ValueError):
            problems.append(f"snrs_db: not a number: {s!r}")
            continue
        if not math.isfinite(v):
            problems.append(f"snrs_db: not finite: {s!r}")
        snr_vals.append(v)

    counts = {}
    for key, default in (("n_channels", 200), ("blocks_per_channel", 100), ("seed", 0)):
        v = _as_int(raw.get(key, default), key, problems)
        if v is not None and (v < 0 or (v < 1 and key != "seed")):
            problems.append(f"{key}: must be {'>= 0' if key == 'seed' else '>= 1'} (got {v})")
        counts[key] = v
    budget = _as_float(raw.get("exclusion_budget", 0.01), "exclusion_budget", problems)
    if budget is not None and not 0 <= budget <= 1:
        problems.append(f"exclusion_budget: must lie in [0, 1] (got {budget})")
    out_dir = raw.get("output_dir", "results")
    if not isinstance(out_dir, str) or not out_dir:
        problems.append("output_dir: expected a non-empty path string")

    # dimension-dependent defaults, then invariant checks
    sysc = None
    merged = dict(asdict(SystemConfig()))
    merged.update(sys_kw)
    if "power_budget" not in sys_kw:
        merged["power_budget"] = float(merged["n_streams"] * merged["block_len"])
    probe = object.__new__(SystemConfig)
    for k, v in merged.items():
        object.__setattr__(probe, k, v)
    problems.extend(f"system.{p}" for p in probe.problems())
    if not problems:
        sysc = SystemConfig(**merged)
    pdp = None
    if decay is not None:
        try:
            pdp = PowerDelayProfile(decay=decay, length=merged["cir_len"])
        except ConfigError as exc:
            problems.append(f"pdp.{exc}")
    solver = None
    if None not in sol_kw.values():
        try:
            solver = SolverConfig(**sol_kw)
        except ConfigError as exc:
            problems.append(f"solver.{exc}")
    if problems:
        raise ConfigError("invalid experiment spec: " + "; ".join(problems), fields=problems)
    return ExperimentSpec(system=sysc, pdp=pdp, solver=solver, criteria=tuple(names),
                          snrs_db=tuple(snr_vals), n_channels=counts["n_channels"],
                          blocks_per_channel=counts["blocks_per_channel"],
                          seed=counts["seed"], output_dir=out_dir,
                          exclusion_budget=budget)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    """Normalised plain-data form; ``spec_from_dict(spec_to_dict(s)) == s``."""
    system = {k: getattr(spec.system, k) for k in _SYSTEM_KEYS}
    return {
        "system": system,
        "pdp": {"decay": spec.pdp.decay},
        "solver": asdict(spec.solver),
        "criteria": list(spec.criteria),
        "snrs_db": list(spec.snrs_db),
        "n_channels": spec.n_channels,
        "blocks_per_channel": spec.blocks_per_channel,
        "seed": spec.seed,
        "output_dir": spec.output_dir,
        "exclusion_budget": spec.exclusion_budget,
    }


def parse_spec_text(text: str, source: str = "<string>") -> ExperimentSpec:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        msg = f"{where}: parse error: {problem}"
        raise ConfigError(msg, fields=[msg]) from exc
    return spec_from_dict(raw)


def parse_spec(path) -> ExperimentSpec:
    """Read and validate a YAML experiment spec; an empty file gives the defaults."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read spec ({exc.strerror})") from exc
    return parse_spec_text(text, str(p))


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return format(float(x), ".12g")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def manifest(spec: ExperimentSpec) -> dict:
    import scipy
    return {
        "package": "scfde_txbf",
        "version": __version__,
        "seed": spec.seed,
        "spec": spec_to_dict(spec),
        "kernel_backend": _accel.backend_name(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _error_report(kind: str, message: str, details=None) -> dict:
    return {"status": "error", "kind": kind, "message": message, "details": details or []}


def _fail(report: dict, out_dir: Optional[Path], code: int) -> int:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            _write(out_dir / "error.json", text + "\n")
        except OSError:
            pass
    print(text, file=sys.stderr)
    return code


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> int:
    """Run the sweep described by ``spec`` and write its output files.

    Returns the process exit status.
    """
    out = Path(spec.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _fail(_error_report("io", f"cannot create {out}: {exc.strerror}"), None, EXIT_IO)

    report = monte_carlo_sweep(spec.system, spec.pdp, spec.designs(), spec.snrs_db,
                               spec.n_channels, spec.blocks_per_channel, spec.seed,
                               spec.solver, threads=threads, keep_traces=True)
    ber = ["snr_db,criterion,ber,ber_stderr,bits"]
    abr = ["snr_db,criterion,abr_bits_per_symbol"]
    for r in report.records:
        ber.append(f"{_num(r.snr_db)},{r.criterion},{_num(r.ber)},{_num(r.ber_stderr)},"
                   f"{r.bits_counted}")
        abr.append(f"{_num(r.snr_db)},{r.criterion},{_num(r.abr_bits_per_symbol)}")
    try:
        _write(out / "ber.csv", "\n".join(ber) + "\n")
        _write(out / "abr.csv", "\n".join(abr) + "\n")
        _write(out / "solver_trace.json",
               json.dumps(_jsonable(report.traces), sort_keys=True) + "\n")
        _write(out / "manifest.json", json.dumps(manifest(spec), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        return _fail(_error_report("io", f"writing results to {out}: {exc.strerror}"),
                     None, EXIT_IO)

    over = [r for r in report.records
            if r.excluded > spec.exclusion_budget * spec.n_channels]
    if over:
        details = {"cells": [{"snr_db": r.snr_db, "criterion": r.criterion,
                              "excluded": r.excluded} for r in over],
                   "exclusions": _jsonable(report.exclusions)}
        return _fail(_error_report(
            "solver", f"channel exclusions exceed budget {spec.exclusion_budget:g}", details),
            out, EXIT_BUDGET)
    stale = out / "error.json"
    if stale.exists():
        stale.unlink()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="scfde-txbf",
        description="Transmit-beamforming BER/ABR sweeps for MIMO SC-FDE links.")
    ap.add_argument("--spec", help="YAML experiment spec (omitted fields take defaults)")
    ap.add_argument("--snr", help="comma-separated SNR points in dB")
    ap.add_argument("--criteria", help="comma-separated criteria, e.g. EPA,AMSE,maxMSE")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--channels", type=int, help="channel realisations per SNR point")
    ap.add_argument("--blocks", type=int, help="data blocks per channel")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    return ap


def resolve_spec(args) -> ExperimentSpec:
    """Apply flag overrides on top of the file (or defaults)."""
    if args.spec:
        p = Path(args.spec)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{p}: cannot read spec ({exc.strerror})") from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError:
            return parse_spec_text(text, str(p))  # raises with the location
        raw = {} if raw is None else raw
    else:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("spec: top level must be a mapping")
    raw = dict(raw)
    overrides = {"snrs_db": args.snr, "criteria": args.criteria, "seed": args.seed,
                 "output_dir": args.out, "n_channels": args.channels,
                 "blocks_per_channel": args.blocks}
    for key, val in overrides.items():
        if val is not None:
            raw[key] = val
    return spec_from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail(_error_report("spec", "--threads must be >= 1", ["threads: must be >= 1"]),
                     None, EXIT_SPEC)
    try:
        spec = resolve_spec(args)
    except ConfigError as exc:
        out = Path(args.out) if args.out else None
        return _fail(_error_report("spec", str(exc), exc.fields), out, EXIT_SPEC)
    return run_experiment(spec, threads=args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
