"""``arw`` command line: run specs, result files and manifests.

A run spec is a flat text file of ``key = value`` lines whose values are
JSON literals (numbers, strings, booleans, lists).  ``#`` starts a comment
line.  Result files depend only on the spec and the package version;
timestamps live in ``manifest.json`` alone.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import __version__, rng
from .core import BoundaryMode, Configuration, InstructionOracle, Region, stabilize
from .dynamics import EnvironmentSampler, omega_star_trials, trial_seeds
from .errors import ARWError, DomainError, InvalidDensities, ParseError, UnknownKey
from .estimators import (
    SweepSpec,
    estimate_rho_c,
    fixation_probability,
    lower_bound,
    sweep,
    tail_probability,
)
from .parallel import THREADS_ENV, default_threads
from .procedure import ProcedureParams, choose_parameters, run_inductive
from .verify import SUITES, run_suites

log = logging.getLogger("arwlab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
FORMATS = ("csv", "json-lines")
SUFFIX = {"csv": ".csv", "json-lines": ".jsonl"}
_KEY = re.compile(r"[a-z][a-z0-9_]*$")


# --------------------------------------------------------------------------
# value checks


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def positive_real(key, v):
    if not _num(v) or not v > 0:
        raise DomainError(f"{key} must be a positive real, got {v!r}")


def unit_real(key, v):
    if not _num(v) or not 0 < v < 1:
        raise DomainError(f"{key} must satisfy ρ ∈ (0,1), got {v!r}")


def gamma_real(key, v):
    if not _num(v) or not 0 < v <= 1:
        raise DomainError(f"{key} must lie in (0,1], got {v!r}")


def int_at_least(lo: int):
    def check(key, v):
        if not _int(v) or v < lo:
            raise DomainError(f"{key} must be an integer >= {lo}, got {v!r}")
    return check


def seed_value(key, v):
    if not _int(v) or not 0 <= v < 2 ** 64:
        raise DomainError(f"{key} must be an integer in [0, 2**64), got {v!r}")


def boolean(key, v):
    if not isinstance(v, bool):
        raise DomainError(f"{key} must be true or false, got {v!r}")


def string(key, v):
    if not isinstance(v, str):
        raise DomainError(f"{key} must be a string, got {v!r}")


def choice(*options):
    def check(key, v):
        if v not in options:
            raise DomainError(f"{key} must be one of {', '.join(options)}, got {v!r}")
    return check


def list_of(inner, allow_scalar: bool = False):
    def check(key, v):
        if allow_scalar and not isinstance(v, list):
            inner(key, v)
            return
        if not isinstance(v, list) or not v:
            raise DomainError(f"{key} must be a nonempty list, got {v!r}")
        for x in v:
            inner(key, x)
    return check


def configuration_text(key, v):
    string(key, v)
    try:
        Configuration.from_text(v)
    except ValueError as exc:
        raise DomainError(f"{key}: {exc}") from exc


def region_pair(key, v):
    if not (isinstance(v, list) and len(v) == 2 and all(_int(x) for x in v) and v[0] <= v[1]):
        raise DomainError(f"{key} must be [lo, hi] with lo <= hi, got {v!r}")


def suite_names(key, v):
    list_of(choice(*SUITES))(key, v)


COMMON = {"seed": seed_value, "output": string, "format": choice(*FORMATS),
          "version": string, "command": string}

SCHEMA: dict[str, dict[str, Callable]] = {
    "simulate": {"lambda": positive_real, "rho": unit_real, "trials": int_at_least(1),
                 "step_budget": int_at_least(1)},
    "stabilize": {"config": configuration_text, "lambda": positive_real,
                  "mode": choice("kill", "freeze"), "target": region_pair,
                  "policy": string, "budget": int_at_least(1)},
    "procedure": {"lambda": positive_real, "rho": unit_real, "rho_c_ref": unit_real,
                  "k": int_at_least(2), "delta": positive_real, "gamma": gamma_real,
                  "strict": boolean, "max_stage": int_at_least(1), "budget": int_at_least(1),
                  "runs": int_at_least(1), "policy": string},
    "fixation": {"lambda": positive_real, "rho": unit_real, "trials": int_at_least(1),
                 "step_budget": int_at_least(1)},
    "rhoc": {"lambda": list_of(positive_real, True), "n": int_at_least(1),
             "trials": int_at_least(1)},
    "tail": {"lambda": positive_real, "n": list_of(int_at_least(1), True),
             "delta": positive_real, "rho_c_ref": unit_real, "trials": int_at_least(1)},
    "sweep": {"lambda": list_of(positive_real), "rho": list_of(unit_real),
              "trials": int_at_least(1), "step_budget": int_at_least(1)},
    "verify": {"suites": suite_names, "quick": boolean},
}

REQUIRED = {
    "simulate": ("lambda", "rho", "trials", "step_budget"),
    "stabilize": ("config", "lambda"),
    "procedure": ("lambda", "rho", "rho_c_ref"),
    "fixation": ("lambda", "rho", "trials", "step_budget"),
    "rhoc": ("lambda", "n", "trials"),
    "tail": ("lambda", "n", "delta", "rho_c_ref", "trials"),
    "sweep": ("lambda", "rho", "trials", "step_budget"),
    "verify": (),
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "stabilize": {"mode": "kill", "policy": "leftmost-unstable", "budget": 10 ** 12},
    "procedure": {"k": 10, "strict": False, "max_stage": 2, "budget": 10 ** 9, "runs": 1,
                  "policy": "lifo"},
    "verify": {"quick": True},
}


# --------------------------------------------------------------------------
# run specs


@dataclass(frozen=True)
class RunSpec:
    command: str
    parameters: dict = field(default_factory=dict)
    version: str = __version__

    def get(self, key: str):
        if key in self.parameters:
            return self.parameters[key]
        return DEFAULTS.get(self.command, {}).get(key)

    @property
    def seed(self) -> int:
        return self.parameters.get("seed", 0)

    def to_text(self) -> str:
        lines = [f"command = {json.dumps(self.command)}",
                 f"version = {json.dumps(self.version)}"]
        for key in sorted(self.parameters):
            lines.append(f"{key} = {json.dumps(self.parameters[key], ensure_ascii=False)}")
        return "\n".join(lines) + "\n"


def serialize_run_spec(spec: RunSpec) -> str:
    return spec.to_text()


def parse_run_spec(text: str, command: str | None = None) -> RunSpec:
    """Parse and validate a run spec; ``command`` comes from the CLI if given."""
    raw: dict[str, tuple[Any, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ParseError(f"expected 'key = value', got {s!r}", lineno)
        key, _, value = (part.strip() for part in s.partition("="))
        if not _KEY.match(key):
            raise ParseError(f"malformed key {key!r}", lineno)
        if key in raw:
            raise ParseError(f"duplicate key {key!r} (first on line {raw[key][1]})", lineno)
        try:
            raw[key] = (json.loads(value), lineno)
        except json.JSONDecodeError as exc:
            raise ParseError(f"value of {key!r} is not a JSON literal: {exc.msg}", lineno) from exc

    file_cmd = raw.pop("command", (None, 0))
    cmd = command or file_cmd[0]
    if cmd is None:
        raise ParseError("no command given")
    if file_cmd[0] is not None and command is not None and file_cmd[0] != command:
        raise ParseError(f"spec is for {file_cmd[0]!r}, not {command!r}", file_cmd[1])
    if cmd not in SCHEMA:
        raise ParseError(f"unknown command {cmd!r}", file_cmd[1] or None)
    version = raw.pop("version", (__version__, 0))[0]
    string("version", version)

    allowed = {**COMMON, **SCHEMA[cmd]}
    params: dict[str, Any] = {}
    for key, (value, lineno) in raw.items():
        if key not in allowed:
            raise UnknownKey(f"unknown key {key!r} for command {cmd!r}", lineno)
        try:
            allowed[key](key, value)
        except DomainError as exc:
            raise DomainError(f"line {lineno}: {exc}") from exc
        params[key] = value
    missing = [k for k in REQUIRED[cmd] if k not in params]
    if missing:
        raise ParseError(f"missing required key(s): {', '.join(missing)}")
    spec = RunSpec(cmd, params, version)
    _cross_check(spec)
    return spec


def _cross_check(spec: RunSpec) -> None:
    if spec.command == "procedure":
        _procedure_params(spec)
    if spec.command == "stabilize":
        conf = Configuration.from_text(spec.get("config"))
        t = spec.get("target")
        if t is not None and not conf.region.contains_region(Region(*t)):
            raise DomainError("target must lie inside the configuration window")


def _procedure_params(spec: RunSpec) -> ProcedureParams:
    rho, rc = spec.get("rho"), spec.get("rho_c_ref")
    if rho <= rc:
        raise InvalidDensities(f"rho={rho} must exceed rho_c_ref={rc}")
    strict = spec.get("strict")
    # strict mode derives k unless the spec pins it
    k = spec.parameters.get("k") if strict else spec.get("k")
    return choose_parameters(rho, rc, strict=strict, k=k, delta=spec.get("delta"),
                             gamma=spec.get("gamma"))


# --------------------------------------------------------------------------
# result files


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if not math.isfinite(v) else "%.12g" % v
    return str(v)


def _json_value(v):
    if isinstance(v, float):
        return float("%.12g" % v) if math.isfinite(v) else None
    return v


def render(records: list[dict], fmt: str, fields: list[str] | None = None) -> str:
    """Records as CSV (header row, minimal RFC quoting) or JSON lines."""
    if fmt not in FORMATS:
        raise DomainError(f"format must be one of {FORMATS}")
    fields = list(fields or (records[0].keys() if records else []))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in records:
            w.writerow([_cell(r.get(k)) for k in fields])
        return buf.getvalue()
    return "".join(
        json.dumps({k: _json_value(r.get(k)) for k in fields}, ensure_ascii=False,
                   separators=(",", ":")) + "\n"
        for r in records)


def emit_results(records: list[dict], path: Path, fmt: str,
                 fields: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render(records, fmt, fields))
    return path


# --------------------------------------------------------------------------
# commands


@dataclass
class Outcome:
    records: list[dict]
    fields: list[str]
    summary: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    failed: bool = False


def _simulate(spec: RunSpec, threads: int) -> Outcome:
    lam, rho = spec.get("lambda"), spec.get("rho")
    trials, budget, seed = spec.get("trials"), spec.get("step_budget"), spec.seed
    batch = omega_star_trials(lam, rho, trials, budget, seed, threads)
    recs = []
    for i in range(trials):
        e, o, t = trial_seeds(seed, i)
        recs.append({"trial": i, "env_seed": e, "oracle_seed": o, "trial_seed": t,
                     "outcome": "fixated" if batch.fixated[i] else "budget_exhausted",
                     "steps": int(batch.steps[i]), "clock": float(batch.clock[i])})
    fields = ["trial", "env_seed", "oracle_seed", "trial_seed", "outcome", "steps", "clock"]
    return Outcome(recs, fields, {"fixated": int(batch.fixated.sum()), "trials": trials},
                   {"trial_seed_rule": "derive_seed(seed, trial, lane) for lane 0,1,2"})


def _stabilize(spec: RunSpec, threads: int) -> Outcome:
    conf = Configuration.from_text(spec.get("config"))
    target = Region(*spec.get("target")) if spec.get("target") else conf.region
    mode = BoundaryMode.KILL if spec.get("mode") == "kill" else BoundaryMode.FREEZE
    oracle = InstructionOracle(spec.seed, spec.get("lambda"))
    try:
        res = stabilize(conf, oracle, target, mode, policy=spec.get("policy"),
                        budget=spec.get("budget"))
    except ValueError as exc:
        raise DomainError(str(exc)) from exc
    rec = {"initial": conf.to_text(), "final": res.final.to_text(),
           "odometer": " ".join(str(c) for c in res.odometer.counts),
           "odometer_sum": str(res.odometer.total), "frozen_left": res.frozen_left,
           "frozen_right": res.frozen_right, "exhausted": res.exhausted}
    return Outcome([rec], list(rec), {"topplings": res.topplings_total})


STAGE_FIELDS = ["run", "env_seed", "oracle_seed", "n", "odometer_sum", "d1", "d2", "d3", "d4",
                "f1", "f2", "f3", "good", "plentiful", "exhausted", "mass", "sleeping",
                "frozen_left", "frozen_right", "z_left", "z_right", "pos_left", "pos_right"]


def _procedure(spec: RunSpec, threads: int) -> Outcome:
    params = _procedure_params(spec)
    lam = spec.get("lambda")
    recs, seeds = [], []
    for run in range(spec.get("runs")):
        es, os_ = rng.derive_seed(spec.seed, run, 0), rng.derive_seed(spec.seed, run, 1)
        seeds.append([es, os_])
        reports = run_inductive(EnvironmentSampler(es, params.rho), params,
                                InstructionOracle(os_, lam), spec.get("max_stage"),
                                spec.get("budget"), policy=spec.get("policy"))
        for rep in reports:
            recs.append({"run": run, "env_seed": es, "oracle_seed": os_, **rep.to_record()})
    summary = {"params": params.to_record(), "stages": len(recs),
               "bad_flags": sum(1 for r in recs if r["d1"] or r["d2"] or r["d3"] or r["d4"])}
    return Outcome(recs, STAGE_FIELDS, summary, {"runs": seeds})


ESTIMATE_FIELDS = ["lambda", "rho", "trials", "fixated", "censored", "immediate", "point",
                   "ci_lo", "ci_hi", "bracket_lo", "bracket_hi", "lower_bound", "seed"]


def _fixation(spec: RunSpec, threads: int) -> Outcome:
    lam = spec.get("lambda")
    est = fixation_probability(lam, spec.get("rho"), spec.get("trials"),
                               spec.get("step_budget"), spec.seed, threads)
    lo, hi = est.bracket
    rec = {"lambda": lam, "rho": spec.get("rho"), "trials": est.trials,
           "fixated": est.successes, "censored": est.censored, "immediate": est.immediate,
           "point": est.point, "ci_lo": est.ci_lo, "ci_hi": est.ci_hi, "bracket_lo": lo,
           "bracket_hi": hi, "lower_bound": lower_bound(lam), "seed": est.seed}
    return Outcome([rec], ESTIMATE_FIELDS, {"point": est.point})


def _as_list(v) -> list:
    return v if isinstance(v, list) else [v]


def _rhoc(spec: RunSpec, threads: int) -> Outcome:
    recs = []
    for i, lam in enumerate(_as_list(spec.get("lambda"))):
        seed = rng.derive_seed(spec.seed, i)
        est = estimate_rho_c(lam, spec.get("n"), spec.get("trials"), seed, threads)
        recs.append({"lambda": lam, "n": spec.get("n"), "trials": est.trials,
                     "censored": est.censored, "point": est.point, "ci_lo": est.ci_lo,
                     "ci_hi": est.ci_hi, "std": est.std, "seed": seed})
    fields = ["lambda", "n", "trials", "censored", "point", "ci_lo", "ci_hi", "std", "seed"]
    return Outcome(recs, fields, {"cells": len(recs)},
                   {"cells": [r["seed"] for r in recs]})


def _tail(spec: RunSpec, threads: int) -> Outcome:
    recs = []
    for i, n in enumerate(_as_list(spec.get("n"))):
        seed = rng.derive_seed(spec.seed, i)
        est = tail_probability(spec.get("lambda"), n, spec.get("delta"),
                               spec.get("rho_c_ref"), spec.get("trials"), seed, threads)
        recs.append({"lambda": spec.get("lambda"), "n": n, "delta": spec.get("delta"),
                     "rho_c_ref": spec.get("rho_c_ref"), "trials": est.trials,
                     "exceed": est.successes, "censored": est.censored, "point": est.point,
                     "ci_lo": est.ci_lo, "ci_hi": est.ci_hi, "seed": seed})
    fields = ["lambda", "n", "delta", "rho_c_ref", "trials", "exceed", "censored", "point",
              "ci_lo", "ci_hi", "seed"]
    return Outcome(recs, fields, {"cells": len(recs)}, {"cells": [r["seed"] for r in recs]})


SWEEP_FIELDS = ["lambda", "rho", "trials", "fixated", "censored", "point", "ci_lo", "ci_hi",
                "seed", "error"]


def _sweep(spec: RunSpec, threads: int) -> Outcome:
    sw = SweepSpec(spec.get("lambda"), spec.get("rho"), spec.get("trials"),
                   spec.get("step_budget"), spec.seed)
    cells = sweep(sw, threads)
    recs = [c.to_record() for c in cells]
    errors = [r["error"] for r in recs if r.get("error")]
    return Outcome(recs, SWEEP_FIELDS, {"cells": len(recs), "errors": errors},
                   {"cells": [[c.i, c.j, c.seed] for c in cells]}, failed=bool(errors))


VERIFY_FIELDS = ["suite", "cases", "passed", "failed", "ok", "first_failure"]


def _verify(spec: RunSpec, threads: int) -> Outcome:
    results = run_suites(spec.get("suites"), quick=spec.get("quick"),
                         seed=spec.parameters.get("seed"), threads=threads)
    recs = [r.to_record() for r in results]
    for r in results:
        log.info("verify %-13s %d/%d passed", r.name, r.passed, r.cases)
    return Outcome(recs, VERIFY_FIELDS, {r.name: f"{r.passed}/{r.cases}" for r in results},
                   failed=not all(r.ok for r in results))


COMMANDS: dict[str, Callable[[RunSpec, int], Outcome]] = {
    "simulate": _simulate, "stabilize": _stabilize, "procedure": _procedure,
    "fixation": _fixation, "rhoc": _rhoc, "tail": _tail, "sweep": _sweep, "verify": _verify,
}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    spec: RunSpec
    started: str
    finished: str = ""
    seeds: dict = field(default_factory=dict)
    results: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    exit_code: int = EXIT_OK

    def to_json(self) -> str:
        doc = {"artifact_version": __version__, "command": self.spec.command,
               "spec": self.spec.parameters, "spec_text": self.spec.to_text(),
               "started": self.started, "finished": self.finished, "seeds": self.seeds,
               "results": self.results, "summary": self.summary, "errors": self.errors,
               "exit_code": self.exit_code}
        return json.dumps(doc, indent=2, ensure_ascii=False, default=str) + "\n"


def execute(spec: RunSpec, out_dir: str | Path | None = None, fmt: str | None = None,
            threads: int | None = None) -> RunManifest:
    """Run ``spec``, write its result file and ``manifest.json``."""
    out = Path(out_dir or spec.parameters.get("output") or ".")
    fmt = fmt or spec.parameters.get("format") or "csv"
    threads = threads or default_threads()
    man = RunManifest(spec, started=_now(), seeds={"base_seed": spec.seed})
    try:
        res = COMMANDS[spec.command](spec, threads)
        path = emit_results(res.records, out / f"{spec.command}{SUFFIX[fmt]}", fmt, res.fields)
        man.results.append(path.name)
        man.summary = res.summary
        man.seeds.update(res.seeds)
        if res.failed:
            man.exit_code = EXIT_VERIFY if spec.command == "verify" else EXIT_RUNTIME
            man.errors.extend(res.summary.get("errors", []) or ["verification failed"])
    except (DomainError, InvalidDensities) as exc:
        man.errors.append(f"{type(exc).__name__}: {exc}")
        man.exit_code = EXIT_INVALID
    except Exception as exc:  # recorded in the manifest, reported by exit code
        log.debug("run failed", exc_info=True)
        man.errors.append(f"{type(exc).__name__}: {exc}")
        man.exit_code = EXIT_RUNTIME
    man.finished = _now()
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(man.to_json(), encoding="utf-8")
    return man


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arw", description="Activated random walk experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--spec", type=Path, help="run spec file (optional for verify)")
    p.add_argument("--out", type=Path, help="output directory (default: spec 'output' or .)")
    p.add_argument("--format", choices=FORMATS, help="result format (default csv)")
    p.add_argument("--threads", type=int,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_INVALID
    try:
        if args.spec is None:
            if args.command != "verify":
                raise ParseError("--spec is required")
            text = ""
        else:
            text = args.spec.read_text(encoding="utf-8")
        spec = parse_run_spec(text, args.command)
    except OSError as exc:
        log.error("cannot read spec: %s", exc)
        return EXIT_INVALID
    except (ARWError, ValueError) as exc:
        log.error("invalid spec: %s", exc)
        return EXIT_INVALID
    man = execute(spec, args.out, args.format, args.threads)
    status = "ok" if man.exit_code == EXIT_OK else "; ".join(man.errors)
    print(f"arw {spec.command}: {status} -> {', '.join(man.results) or 'no results'}")
    return man.exit_code


if __name__ == "__main__":
    sys.exit(main())
