"""Config-driven experiment runner and state/report inspector.

Configs are strict JSON: exactly one experiment block, unknown keys rejected,
every numeric field range-checked, and every error names the offending key
path.  Exit codes are fixed for scriptability:

    0  success
    2  config error (syntax, unknown key, range violation)
    3  numerical failure (solver divergence, non-finite values, calibration)
    4  I/O error

Each run writes its artifacts next to a run-manifest JSON (config echo, seed,
package versions, wall time, status), sufficient to re-run it exactly.
Serial runs are byte-reproducible given (config, seed); the sweep and
ensemble cell pools honor the WFELAB_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import admissibility, ensembles, toymodel
from .dynamics import IntegrationError
from .observables import macro_estimate, make_report, report_header, report_row
from .states import (
    StateError,
    build_cat_state,
    build_initial_toy,
    build_momentum_cat,
    build_mqp_state,
    load_state,
    state_to_dict,
)

SQRT_HALF = 1.0 / math.sqrt(2.0)

EXPERIMENTS = ("toy", "sweep", "ensemble", "operators", "estimate", "state")


class ConfigError(ValueError):
    """Invalid configuration; carries the list of per-key error messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# schema machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    kind: type
    default: object = None
    required: bool = False
    minimum: float | None = None
    maximum: float | None = None
    choices: tuple | None = None
    nullable: bool = False
    element: "Field | None" = None


def _check_value(value, field: Field, path: str, errors: list):
    if value is None:
        if field.nullable:
            return None
        errors.append(f"{path}: must not be null")
        return None
    if field.kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if field.kind is int and isinstance(value, bool):
        errors.append(f"{path}: expected integer, got boolean")
        return None
    if not isinstance(value, field.kind):
        errors.append(f"{path}: expected {field.kind.__name__}, got {type(value).__name__}")
        return None
    if field.kind is list:
        if not value:
            errors.append(f"{path}: list must not be empty")
            return None
        return [
            _check_value(v, field.element, f"{path}[{i}]", errors)
            for i, v in enumerate(value)
        ]
    if field.minimum is not None and value < field.minimum:
        errors.append(f"{path}: value {value!r} below minimum {field.minimum}")
    if field.maximum is not None and value > field.maximum:
        errors.append(f"{path}: value {value!r} above maximum {field.maximum}")
    if field.choices is not None and value not in field.choices:
        errors.append(f"{path}: value {value!r} not one of {list(field.choices)}")
    return value


def _check_block(block, schema: dict, path: str, errors: list) -> dict:
    if not isinstance(block, dict):
        errors.append(f"{path}: expected an object")
        return {}
    out = {}
    for key in block:
        if key not in schema:
            errors.append(f"{path}.{key}: unknown key")
    for key, field in schema.items():
        if key in block:
            out[key] = _check_value(block[key], field, f"{path}.{key}", errors)
        elif field.required:
            errors.append(f"{path}.{key}: missing required key")
        else:
            out[key] = field.default
    return out


_METHODS = ("implicit_midpoint", "extended_phase_space", "rk4_reference")

_TOY_SCHEMA = {
    "n_spins": Field(int, 10, minimum=2, maximum=24),
    "mass": Field(float, 1.0, minimum=1e-9),
    "delta_v": Field(float, 4.0, minimum=1e-12),
    "alpha_c": Field(float, None, nullable=True),
    "w": Field(float, 2.0, minimum=0.0),
    "center": Field(float, 0.5, minimum=0.0),
    "alpha": Field(float, SQRT_HALF, minimum=-1.0, maximum=1.0),
    "beta": Field(float, SQRT_HALF, minimum=-1.0, maximum=1.0),
    "gamma": Field(float, 0.0),
    "rho": Field(float, 0.0, minimum=0.0),
    "include_qubit_in_wfe": Field(bool, True),
    "t_final": Field(float, 13.2, minimum=1e-9),
    "dt": Field(float, None, minimum=1e-12, nullable=True),
    "record_every": Field(int, 10, minimum=1),
    "method": Field(str, "implicit_midpoint", choices=_METHODS),
    "representation": Field(str, "symmetric", choices=("symmetric", "full")),
    "snapshot_every": Field(int, 0, minimum=0),
    "split": Field(float, None, minimum=0.0, nullable=True),
    "cat_threshold": Field(float, 0.25, minimum=0.0, maximum=1.0),
    "side_threshold": Field(float, 0.7, minimum=0.0, maximum=1.0),
}

_SWEEP_SCHEMA = {
    "n_list": Field(list, None, required=True, element=Field(int, minimum=2, maximum=24)),
    "w_list": Field(list, None, required=True, element=Field(float, minimum=0.0)),
    "delta_v": Field(float, 4.0, minimum=1e-12),
    "trials": Field(int, 5, minimum=1),
    "t_final": Field(float, 10.0, minimum=1e-9),
    "dt": Field(float, None, minimum=1e-12, nullable=True),
    "record_every": Field(int, 20, minimum=1),
    "mass": Field(float, 1.0, minimum=1e-9),
    "alpha": Field(float, SQRT_HALF, minimum=-1.0, maximum=1.0),
    "beta": Field(float, SQRT_HALF, minimum=-1.0, maximum=1.0),
    "center": Field(float, 0.5, minimum=0.0),
    "alpha_c": Field(float, None, nullable=True),
    "rho": Field(float, 1e-3, minimum=0.0),
    "include_qubit_in_wfe": Field(bool, True),
}

_ENSEMBLE_SCHEMA = {
    "n_list": Field(list, None, required=True, element=Field(int, minimum=1)),
    "beta_grid": Field(list, None, required=True, element=Field(float, minimum=0.0)),
    "omega_list": Field(list, [0.0], element=Field(float, minimum=0.0)),
    "n_samples": Field(int, 20000, minimum=100),
    "sampler": Field(str, "auto", choices=("auto", "importance", "metropolis")),
    "eps": Field(float, 0.5, minimum=0.0, maximum=1.0),
    "fallback_ess": Field(float, 100.0, minimum=1.0),
}

_OPERATORS_SCHEMA = {
    "grid_points": Field(int, 32, minimum=8, maximum=64),
    "box_half_width": Field(float, 9.0, minimum=0.5),
    "candidates": Field(
        list,
        list(admissibility.CANDIDATES),
        element=Field(str, choices=admissibility.CANDIDATES),
    ),
    "n_states": Field(int, 2, minimum=1, maximum=3),
    "calibration_floor": Field(float, 1e-4, minimum=0.0),
}

_ESTIMATE_SCHEMA = {
    "w": Field(float, None, required=True, minimum=0.0),
    "n": Field(float, None, required=True, minimum=1e-300),
    "r": Field(float, None, required=True, minimum=0.0),
    "mode": Field(str, "cat", choices=("cat", "product")),
}

_STATE_SCHEMA = {
    "builder": Field(
        str, None, required=True,
        choices=("cat_spin", "mqp_spin", "cat_grid", "mqp_grid",
                 "momentum_cat", "initial_toy"),
    ),
    "n_spins": Field(int, 10, minimum=1, maximum=24),
    "n_particles": Field(int, 1, minimum=1, maximum=2),
    "grid_points": Field(int, 256, minimum=4, maximum=4096),
    "box_half_width": Field(float, 20.0, minimum=1e-9),
    "separation": Field(float, 8.0, minimum=0.0),
    "bump_width": Field(float, 1.0, minimum=1e-9),
    "bump_shape": Field(str, "gaussian", choices=("gaussian", "box")),
    "q_width": Field(float, 0.5, minimum=1e-9),
    "p0": Field(float, 3.0),
    "alpha": Field(float, SQRT_HALF, minimum=-1.0, maximum=1.0),
    "beta": Field(float, SQRT_HALF, minimum=-1.0, maximum=1.0),
    "gamma": Field(float, 0.0),
    "center": Field(float, 0.5, minimum=0.0),
    "rho": Field(float, 0.0, minimum=0.0),
}

_SCHEMAS = {
    "toy": _TOY_SCHEMA,
    "sweep": _SWEEP_SCHEMA,
    "ensemble": _ENSEMBLE_SCHEMA,
    "operators": _OPERATORS_SCHEMA,
    "estimate": _ESTIMATE_SCHEMA,
    "state": _STATE_SCHEMA,
}

_TOP_SCHEMA = {
    "experiment": Field(str, None, required=True, choices=EXPERIMENTS),
    "seed": Field(int, 0, minimum=0, maximum=2**64 - 1),
    "output": Field(str, "."),
    "format": Field(str, "csv", choices=("csv", "json")),
}


def validate_config(text: str) -> dict:
    """Parse and range-check a config document; raises ConfigError with the
    full list of offending key paths."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: JSON syntax error: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be an object"])
    errors: list = []
    experiment = raw.get("experiment")
    top = {k: v for k, v in raw.items() if k in _TOP_SCHEMA}
    config = _check_block(top, _TOP_SCHEMA, "config", errors)
    block_keys = [k for k in raw if k not in _TOP_SCHEMA]
    if experiment in _SCHEMAS:
        for key in block_keys:
            if key != experiment:
                errors.append(f"config.{key}: unknown key")
        block = raw.get(experiment)
        if block is None:
            errors.append(f"config.{experiment}: missing experiment block")
            config[experiment] = {}
        else:
            config[experiment] = _check_block(block, _SCHEMAS[experiment],
                                              f"config.{experiment}", errors)
    else:
        for key in block_keys:
            errors.append(f"config.{key}: unknown key")
    if errors:
        raise ConfigError(errors)
    return config


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply --set key=value pairs (dotted paths, JSON-literal values)."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([f"--set {item!r}: expected key=value"])
        key, _, value = item.partition("=")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([f"--set {key!r}: {part} is not an object"])
        node[parts[-1]] = parsed
    return raw


# ---------------------------------------------------------------------------
# deterministic table writing
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_table(path, header, rows, fmt="csv"):
    if fmt == "json":
        payload = [dict(zip(header, row)) for row in rows]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def _toy_params(block: dict, **extra) -> toymodel.ToyParams:
    keys = ("n_spins", "mass", "delta_v", "alpha_c", "w", "center",
            "alpha", "beta", "gamma", "rho", "include_qubit_in_wfe")
    chosen = {k: block[k] for k in keys if k in block}
    chosen.update(extra)
    if "split" in block and block["split"] is not None:
        chosen["split"] = block["split"]
    for k in ("cat_threshold", "side_threshold"):
        if k in block:
            chosen[k] = block[k]
    return toymodel.ToyParams(**chosen)


def _run_toy(config, out_dir, fmt):
    block = config["toy"]
    params = _toy_params(block)
    record = toymodel.run_measurement(
        params,
        t_final=block["t_final"],
        dt=block["dt"],
        seed=config["seed"],
        method=block["method"],
        record_every=block["record_every"],
        representation=block["representation"],
        snapshot_every=block["snapshot_every"],
    )
    header = report_header(record.reports[0])
    rows = [report_row(t, r) for t, r in zip(record.times, record.reports)]
    table = os.path.join(out_dir, f"trajectory.{fmt}")
    write_table(table, header, rows, fmt)
    outputs = [table]
    for i, (t, state) in enumerate(record.snapshots):
        path = os.path.join(out_dir, f"snapshot_{i:04d}.json")
        doc = state_to_dict(state)
        doc["t"] = t
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh)
        outputs.append(path)
    extra = {
        "classification": record.info["classification"],
        "p_left": record.info["p_left"],
        "p_right": record.info["p_right"],
        "max_residual": record.max_residual,
        "max_iterations_used": record.max_iterations_used,
    }
    return outputs, extra


def _run_sweep(config, out_dir, fmt):
    block = config["sweep"]
    base = _toy_params(block, n_spins=block["n_list"][0], w=0.0,
                       delta_v=block["delta_v"])
    n_jobs = max(int(os.environ.get("WFELAB_THREADS", "1")), 1)
    result = toymodel.cat_sweep(
        block["n_list"], block["w_list"],
        delta_v=block["delta_v"], trials=block["trials"], seed=config["seed"],
        t_final=block["t_final"], dt=block["dt"], base=base,
        record_every=block["record_every"], n_jobs=n_jobs,
    )
    header = ["N", "w", "trials", "cat_fraction", "left_fraction",
              "right_fraction", "undecided_fraction", "mean_E_wfe_max"]
    rows = [[r[k] for k in header] for r in result.rows]
    cells = os.path.join(out_dir, f"sweep_cells.{fmt}")
    write_table(cells, header, rows, fmt)
    summary = os.path.join(out_dir, f"sweep_summary.{fmt}")
    write_table(summary, ["w", "N_c"],
                [[w, nc] for w, nc in result.n_critical], fmt)
    return [cells, summary], {"n_critical_slope": result.slope}


def _run_ensemble(config, out_dir, fmt):
    block = config["ensemble"]
    rows = ensembles.magnetization_curve(
        block["n_list"], block["beta_grid"], block["omega_list"],
        n_samples=block["n_samples"], seed=config["seed"],
        eps=block["eps"], sampler=block["sampler"],
        fallback_ess=block["fallback_ess"],
    )
    header = ["N", "beta", "omega", "sampler", "n_samples", "m2",
              "std_error", "ess", "weight_frac_above_eps"]
    table = os.path.join(out_dir, f"ensemble.{fmt}")
    write_table(table, header, [[r[k] for k in header] for r in rows], fmt)
    return [table], {}


def _run_operators(config, out_dir, fmt):
    block = config["operators"]
    reports = admissibility.run_admissibility(
        grid_points=block["grid_points"],
        box_half_width=block["box_half_width"],
        candidates=tuple(block["candidates"]),
        n_states=block["n_states"],
        calibration_floor=block["calibration_floor"],
    )
    path = os.path.join(out_dir, "constraints.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([r.to_json_dict() for r in reports], fh, indent=1)
        fh.write("\n")
    return [path], {"verdicts": {r.candidate: r.verdict for r in reports}}


def _run_estimate(config, out_dir, fmt):
    block = config["estimate"]
    energy = macro_estimate(block["w"], block["n"], block["r"], block["mode"])
    table = os.path.join(out_dir, f"estimate.{fmt}")
    write_table(table, ["w", "n", "r", "mode", "energy_joules"],
                [[block["w"], block["n"], block["r"], block["mode"], energy]], fmt)
    return [table], {"energy_joules": energy}


def build_state_from_block(block: dict, seed: int):
    builder = block["builder"]
    if builder == "cat_spin":
        return build_cat_state("spin", n_spins=block["n_spins"],
                               alpha=block["alpha"], beta=block["beta"],
                               gamma=block["gamma"])
    if builder == "mqp_spin":
        return build_mqp_state("spin", n_spins=block["n_spins"],
                               alpha=block["alpha"], beta=block["beta"],
                               gamma=block["gamma"])
    if builder == "cat_grid":
        return build_cat_state(
            "grid", n_particles=block["n_particles"],
            grid_points=block["grid_points"],
            box_half_width=block["box_half_width"],
            separation=block["separation"], bump_width=block["bump_width"],
            bump_shape=block["bump_shape"], alpha=block["alpha"],
            beta=block["beta"], gamma=block["gamma"],
        )
    if builder == "mqp_grid":
        return build_mqp_state(
            "grid", n_particles=block["n_particles"],
            grid_points=block["grid_points"],
            box_half_width=block["box_half_width"],
            separation=block["separation"], bump_width=block["bump_width"],
            bump_shape=block["bump_shape"],
        )
    if builder == "momentum_cat":
        return build_momentum_cat(
            block["grid_points"], block["box_half_width"], block["q_width"],
            block["p0"], alpha=block["alpha"], beta=block["beta"],
            gamma=block["gamma"],
        )
    if builder == "initial_toy":
        rng = np.random.default_rng(seed) if block["rho"] > 0 else None
        return build_initial_toy(
            block["n_spins"], alpha=block["alpha"], beta=block["beta"],
            center=block["center"], gamma=block["gamma"], rho=block["rho"],
            rng=rng,
        )
    raise ConfigError([f"config.state.builder: unknown builder {builder!r}"])


def _run_state(config, out_dir, fmt):
    state = build_state_from_block(config["state"], config["seed"])
    path = os.path.join(out_dir, "state.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(state_to_dict(state), fh)
        fh.write("\n")
    return [path], {"norm": math.sqrt(state.norm2())}


_RUNNERS = {
    "toy": _run_toy,
    "sweep": _run_sweep,
    "ensemble": _run_ensemble,
    "operators": _run_operators,
    "estimate": _run_estimate,
    "state": _run_state,
}


def run(config: dict, out_dir: str | None = None) -> int:
    """Execute a validated config; artifacts plus a run manifest on disk."""
    out_dir = out_dir or config["output"]
    started = time.time()
    manifest = {
        "config": config,
        "seed": config["seed"],
        "versions": {
            "wfelab": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "status": "ok",
        "outputs": [],
    }
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 4
    code = 0
    try:
        outputs, extra = _RUNNERS[config["experiment"]](config, out_dir, config["format"])
        manifest["outputs"] = outputs
        manifest.update(extra)
    except (IntegrationError, admissibility.CalibrationError, FloatingPointError) as exc:
        manifest["status"] = "numerical_failure"
        manifest["error"] = str(exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = 3
    except StateError as exc:
        manifest["status"] = "numerical_failure"
        manifest["error"] = str(exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = 3
    except OSError as exc:
        manifest["status"] = "io_failure"
        manifest["error"] = str(exc)
        print(f"I/O error: {exc}", file=sys.stderr)
        code = 4
    manifest["wall_time_s"] = time.time() - started
    try:
        with open(os.path.join(out_dir, "run_manifest.json"), "w",
                  encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=1, default=str)
            fh.write("\n")
    except OSError as exc:
        print(f"I/O error writing manifest: {exc}", file=sys.stderr)
        return 4
    return code


# ---------------------------------------------------------------------------
# inspection
# ---------------------------------------------------------------------------

def inspect_state(path: str) -> dict:
    state = load_state(path)
    report = make_report(state)
    summary = {
        "type": type(state).__name__,
        "norm": report.norm,
        "dispersion": report.dispersion,
    }
    if hasattr(state, "n_spins"):
        summary["n_spins"] = state.n_spins
        summary["magnetization"] = report.m
        if report.p_left is not None:
            summary["p_left"] = report.p_left
            summary["p_right"] = report.p_right
    else:
        summary.update(
            n_particles=state.n_particles,
            dims_per_particle=state.dims_per_particle,
            grid_points=state.grid_points,
            box_half_width=state.box_half_width,
            spin_levels=state.spin_levels,
            com=list(report.com),
            momentum=list(report.momentum),
        )
    return summary


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _load_config(path, overrides):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        raise SystemExit(4)
    except json.JSONDecodeError as exc:
        print(f"config: JSON syntax error: {exc}", file=sys.stderr)
        raise SystemExit(2)
    try:
        raw = apply_overrides(raw, overrides)
        return validate_config(json.dumps(raw))
    except ConfigError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        raise SystemExit(2)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wfelab",
        description="Experiment runner for penalized-dispersion wavefunction dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="validate and execute a config")
    p_run.add_argument("config")
    p_run.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE")
    p_run.add_argument("-o", "--output", help="override the output directory")

    p_val = sub.add_parser("validate", help="validate a config and exit")
    p_val.add_argument("config")
    p_val.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE")

    p_state = sub.add_parser("state", help="build or inspect serialized states")
    state_sub = p_state.add_subparsers(dest="state_command", required=True)
    p_build = state_sub.add_parser("build", help="build a named state from a config")
    p_build.add_argument("config")
    p_build.add_argument("-o", "--output", help="output state file (default state.json)")
    p_build.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE")
    p_inspect = state_sub.add_parser("inspect", help="summarize a serialized state")
    p_inspect.add_argument("state_file")

    args = parser.parse_args(argv)

    if args.command == "validate":
        config = _load_config(args.config, args.overrides)
        print(f"ok: valid {config['experiment']} experiment")
        return 0
    if args.command == "run":
        config = _load_config(args.config, args.overrides)
        return run(config, out_dir=args.output)
    if args.command == "state":
        if args.state_command == "inspect":
            try:
                summary = inspect_state(args.state_file)
            except OSError as exc:
                print(f"I/O error: {exc}", file=sys.stderr)
                return 4
            except (StateError, ValueError, KeyError) as exc:
                print(f"error: not a readable state file: {exc}", file=sys.stderr)
                return 2
            print(json.dumps(summary, indent=1))
            return 0
        config = _load_config(args.config, args.overrides)
        if config["experiment"] != "state":
            print("error: state build needs a config with experiment = \"state\"",
                  file=sys.stderr)
            return 2
        try:
            state = build_state_from_block(config["state"], config["seed"])
        except StateError as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 3
        out = args.output or "state.json"
        try:
            with open(out, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(state_to_dict(state), fh)
                fh.write("\n")
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return 4
        print(f"wrote {out}")
        return 0
    parser.error("unknown command")
    return 2


if __name__ == "__main__":
    sys.exit(main())
