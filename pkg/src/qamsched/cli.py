"""Experiment harness: spec ingestion, solver/search orchestration, data export.

A single JSON spec describes the channel, the system, the solver and the
stochastic-search settings. Subcommands:

  solve     build the model, run one solver, write policy/value tables plus
            solve and structure reports
  compare   solve with all three algorithms across a range of channel-state
            counts, assert they agree, record per-iteration Q-evaluation counts
  dspsa     run the threshold search (honoring an optional schedule of
            parameter switches), write the trace and final thresholds
  check     run every structural checker on the solved instance

Exit codes: 0 success, 1 spec error, 2 property failure, 3 solver
non-convergence. Every output embeds the fully resolved spec and the library
version; rerunning an embedded spec with the same seed reproduces the file
byte for byte (no timestamps, canonical key order, shortest-roundtrip floats).
"""

import argparse
import copy
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .channel import ChannelParams, build_fsmc
from .mdp import ArrivalDist, SystemConfig, SystemModel, make_poisson_arrivals
from .solvers import (
    SolverConvergenceError,
    evaluate_policy,
    mpi_lnatural,
    mpi_submodular,
    value_iteration,
)
from .structure import build_structure_report, weight_condition_margins, policy_to_thresholds
from .dspsa import DspsaConfig, dspsa_run, exact_objective, initial_state

SOLVER_FUNCS = {
    "dp": value_iteration,
    "mpi_sub": mpi_submodular,
    "mpi_lnat": mpi_lnatural,
}

# Externally reported per-iteration Q-evaluation counts for the 16-queue-state,
# 6-action configuration over 2..10 channel states. Recorded in compare output
# for side-by-side reading; never asserted (the counting convention behind them
# is not fully specified).
REFERENCE_Q_PER_ITERATION = {
    "dp": [352.0, 528.0, 704.0, 880.0, 1056.0, 1232.0, 1408.0, 1584.0, 1760.0],
    "mpi_sub": [195.356568364611, 286.449591280654, 376.574175824176,
                467.627071823204, 557.759002770083, 647.930555555556,
                731.91643454039, 820.005571030641, 907.156424581006],
    "mpi_lnat": [64.0, 96.0, 128.0, 160.0, 192.0, 224.0, 256.0, 288.0, 320.0],
}
REFERENCE_NUM_STATES = list(range(2, 11))

SPEC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["channel", "system"],
    "properties": {
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "required": ["average_snr_db", "doppler_hz", "epoch_seconds", "num_states"],
            "properties": {
                "average_snr_db": {"type": "number"},
                "doppler_hz": {"type": "number", "minimum": 0},
                "epoch_seconds": {"type": "number", "exclusiveMinimum": 0},
                "num_states": {"type": "integer", "minimum": 1},
            },
        },
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["queue_size", "max_action", "weight", "ber_constraint",
                         "discount", "arrivals"],
            "properties": {
                "queue_size": {"type": "integer", "minimum": 1},
                "max_action": {"type": "integer", "minimum": 0},
                "weight": {"type": "number", "exclusiveMinimum": 0},
                "ber_constraint": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.2},
                "discount": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "packet_bits": {"type": ["integer", "null"], "minimum": 1},
                "poisson_truncation": {"enum": ["renormalize", "lump_tail"]},
                "arrivals": {
                    "oneOf": [
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["kind", "rate"],
                            "properties": {
                                "kind": {"const": "poisson"},
                                "rate": {"type": "number", "minimum": 0},
                            },
                        },
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["kind", "pmf"],
                            "properties": {
                                "kind": {"const": "explicit"},
                                "pmf": {"type": "array", "items": {"type": "number", "minimum": 0}},
                            },
                        },
                    ]
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "algorithm": {"enum": sorted(SOLVER_FUNCS)},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "dspsa": {
            "type": "object",
            "additionalProperties": False,
            "required": ["iterations"],
            "properties": {
                "iterations": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "A": {"type": "number", "exclusiveMinimum": 0},
                "B": {"type": "number", "exclusiveMinimum": 0},
                "alpha1": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "alpha2": {"type": "number", "minimum": 0},
                "R": {"type": "number", "exclusiveMinimum": 0},
                "sim_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "sim_patience": {"type": "integer", "minimum": 1},
                "common_random_numbers": {"type": "boolean"},
                "trace_every": {"type": "integer", "minimum": 1},
                "schedule": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["at_iteration"],
                        "properties": {
                            "at_iteration": {"type": "integer", "minimum": 2},
                            "system": {"type": "object"},
                            "channel": {"type": "object"},
                        },
                    },
                },
            },
        },
        "overrides": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "transition_matrix": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
    },
}

SOLVER_DEFAULTS = {"algorithm": "dp", "epsilon": 1e-4}
DSPSA_DEFAULTS = {
    "seed": 0, "A": 0.015, "B": 100.0, "alpha1": 0.602, "alpha2": 0.1, "R": 10.0,
    "sim_tolerance": 1e-4, "sim_patience": 10, "common_random_numbers": True,
    "trace_every": 1, "schedule": [],
}


class SpecError(ValueError):
    """Spec file failed to parse or validate."""


def load_spec(path) -> dict:
    """Parse, schema-validate and default-fill an experiment spec."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"{path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return resolve_spec(raw, str(path))


def resolve_spec(raw: dict, source: str = "<spec>") -> dict:
    validator = jsonschema.Draft202012Validator(SPEC_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors[:10]:
            loc = "/" + "/".join(str(p) for p in err.absolute_path)
            lines.append(f"{source}: {loc or '/'}: {err.message}")
        raise SpecError("\n".join(lines))
    spec = copy.deepcopy(raw)
    spec.setdefault("solver", {})
    for key, val in SOLVER_DEFAULTS.items():
        spec["solver"].setdefault(key, val)
    if "dspsa" in spec:
        for key, val in DSPSA_DEFAULTS.items():
            spec["dspsa"].setdefault(key, val)
    spec["system"].setdefault("poisson_truncation", "renormalize")
    spec["system"].setdefault("packet_bits", None)
    spec.setdefault("overrides", {})
    return spec


def model_from_spec(spec: dict) -> SystemModel:
    """Instantiate the model; dB-to-linear conversion happens here only."""
    ch = spec["channel"]
    params = ChannelParams(
        average_snr=10.0 ** (ch["average_snr_db"] / 10.0),
        doppler_hz=ch["doppler_hz"],
        epoch_seconds=ch["epoch_seconds"],
        num_states=ch["num_states"],
    )
    channel = build_fsmc(params)
    override = spec.get("overrides", {}).get("transition_matrix")
    if override is not None:
        channel = channel.with_transition(np.array(override, dtype=float))
    sy = spec["system"]
    arr = sy["arrivals"]
    if arr["kind"] == "poisson":
        arrivals = make_poisson_arrivals(arr["rate"], sy["queue_size"], sy["poisson_truncation"])
    else:
        arrivals = ArrivalDist(pmf=np.array(arr["pmf"], dtype=float))
    config = SystemConfig(
        queue_size=sy["queue_size"],
        max_action=sy["max_action"],
        weight=sy["weight"],
        ber_constraint=sy["ber_constraint"],
        discount=sy["discount"],
        arrivals=arrivals,
        channel=channel,
        packet_bits=sy["packet_bits"],
    )
    return SystemModel(config, poisson_truncation=sy["poisson_truncation"])


# ---------------------------------------------------------------------------
# Deterministic writers


def _sanitize(obj):
    """Make values JSON-safe and deterministic (non-finite floats -> None)."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _format_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_json(path: Path, payload: dict, meta: dict) -> None:
    doc = {"version": __version__, **meta, **payload}
    path.write_text(json.dumps(_sanitize(doc), indent=2, sort_keys=True) + "\n")


def write_table(path: Path, columns: list, rows: list, meta: dict, fmt: str) -> None:
    if fmt == "json":
        write_json(path, {"columns": columns, "rows": _sanitize(rows)}, meta)
        return
    lines = [f"# qamsched {__version__}"]
    for key in sorted(meta):
        lines.append(f"# {key}: {json.dumps(_sanitize(meta[key]), sort_keys=True)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_format_cell(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def table_path(out: Path, stem: str, fmt: str) -> Path:
    return out / f"{stem}.{'json' if fmt == 'json' else 'csv'}"


def grid_rows(table: np.ndarray):
    """Rows (b, value per channel state) for a (B, H) table."""
    return [[b] + [table[b, j] for j in range(table.shape[1])] for b in range(table.shape[0])]


def grid_columns(num_channel_states: int):
    return ["b"] + [f"h={h}" for h in range(1, num_channel_states + 1)]


# ---------------------------------------------------------------------------
# Commands


def cmd_solve(spec: dict, out: Path, fmt: str) -> int:
    model = model_from_spec(spec)
    algorithm = spec["solver"]["algorithm"]
    values, policy, report = SOLVER_FUNCS[algorithm](model, epsilon=spec["solver"]["epsilon"])
    structure = build_structure_report(model, policy, values)
    meta = {"resolved_spec": spec, "command": "solve"}
    cols = grid_columns(model.shape[1])
    write_table(table_path(out, "policy", fmt), cols, grid_rows(policy), meta, fmt)
    write_table(table_path(out, "value", fmt), cols, grid_rows(values), meta, fmt)
    write_json(out / "solve_report.json", {"report": report.to_dict(), "model": model.summary()}, meta)
    write_json(out / "structure_report.json", {"structure": structure.to_dict()}, meta)
    print(f"solve[{algorithm}]: {report.iterations} iterations, "
          f"{report.q_evals_total} Q evaluations")
    for name, flag in [("monotone_b", structure.monotone_in_b),
                       ("bounded_marginal", structure.bounded_marginal),
                       ("monotone_h", structure.monotone_in_h),
                       ("dominance", structure.dominance_ok)]:
        print(f"  {name}: {'pass' if flag else 'FAIL'}")
    return 0


def cmd_compare(spec: dict, out: Path, fmt: str, h_min: int, h_max: int) -> int:
    rows = []
    mismatch = False
    for K in range(h_min, h_max + 1):
        sub_spec = copy.deepcopy(spec)
        sub_spec["channel"]["num_states"] = K
        model = model_from_spec(sub_spec)
        results = {}
        for name, func in SOLVER_FUNCS.items():
            results[name] = func(model, epsilon=spec["solver"]["epsilon"])
        _, pol_dp, rep_dp = results["dp"]
        same = all(np.array_equal(pol_dp, results[name][1]) for name in ("mpi_sub", "mpi_lnat"))
        if not same:
            mismatch = True
        B, H, A = model.shape
        row = [K, rep_dp.iterations, int(same)]
        for name in ("dp", "mpi_sub", "mpi_lnat"):
            avg = results[name][2].q_evals_per_iteration_avg
            row.extend([avg, avg / (B * H)])
        idx = REFERENCE_NUM_STATES.index(K) if K in REFERENCE_NUM_STATES else None
        for name in ("dp", "mpi_sub", "mpi_lnat"):
            row.append(REFERENCE_Q_PER_ITERATION[name][idx] if idx is not None else None)
        rows.append(row)
        print(f"K={K}: policies {'agree' if same else 'DISAGREE'}; q/iter "
              f"dp={row[3]:.1f} mpi_sub={row[5]:.1f} mpi_lnat={row[7]:.1f}")
    columns = ["num_states", "iterations", "policies_agree",
               "q_per_iter_dp", "per_state_dp",
               "q_per_iter_mpi_sub", "per_state_mpi_sub",
               "q_per_iter_mpi_lnat", "per_state_mpi_lnat",
               "reference_dp", "reference_mpi_sub", "reference_mpi_lnat"]
    meta = {"resolved_spec": spec, "command": "compare", "h_range": [h_min, h_max]}
    write_table(table_path(out, "compare", fmt), columns, rows, meta, fmt)
    if mismatch:
        print("compare: solver policies disagree", file=sys.stderr)
        return 2
    return 0


def _apply_schedule_overrides(spec: dict, entry: dict) -> dict:
    new = copy.deepcopy(spec)
    for section in ("system", "channel"):
        for key, val in entry.get(section, {}).items():
            new[section][key] = val
    # Re-validate so a bad override is a spec error, not a downstream crash.
    return resolve_spec(new, f"<schedule at_iteration={entry['at_iteration']}>")


def cmd_dspsa(spec: dict, out: Path, fmt: str, seed_override=None) -> int:
    if "dspsa" not in spec:
        raise SpecError("spec has no 'dspsa' section")
    dcfg = dict(spec["dspsa"])
    if seed_override is not None:
        dcfg["seed"] = seed_override
        spec = copy.deepcopy(spec)
        spec["dspsa"]["seed"] = seed_override
    total = dcfg["iterations"]
    switches = sorted(dcfg["schedule"], key=lambda e: e["at_iteration"])
    if any(e["at_iteration"] > total for e in switches):
        raise SpecError("schedule switch beyond the final iteration")

    # Split the run into segments at the switch points; the search state and
    # the global iteration index carry across segments.
    boundaries = [1] + [e["at_iteration"] for e in switches] + [total + 1]
    segment_specs = [spec]
    for entry in switches:
        segment_specs.append(_apply_schedule_overrides(segment_specs[-1], entry))

    state = None
    regimes = []
    final_thresholds = None
    last_model = None
    for i, seg_spec in enumerate(segment_specs):
        n_iters = boundaries[i + 1] - boundaries[i]
        model = model_from_spec(seg_spec)
        if state is None:
            state = initial_state(model)
        v_opt, pol_opt, _ = value_iteration(model, epsilon=spec["solver"]["epsilon"])
        reference = policy_to_thresholds(pol_opt, model.config.max_action)
        config = DspsaConfig(
            iterations=n_iters,
            seed=dcfg["seed"],
            A=dcfg["A"], B=dcfg["B"], R=dcfg["R"],
            alpha1=dcfg["alpha1"], alpha2=dcfg["alpha2"],
            sim_tolerance=dcfg["sim_tolerance"], sim_patience=dcfg["sim_patience"],
            common_random_numbers=dcfg["common_random_numbers"],
            trace_every=dcfg["trace_every"],
        )
        final_thresholds, state = dspsa_run(model, config, reference=reference, state=state)
        last_model = model
        regimes.append({
            "first_iteration": boundaries[i],
            "last_iteration": boundaries[i + 1] - 1,
            "dp_optimum_total": float(v_opt.sum()),
            "reference_thresholds": reference.tolist(),
            "weight": seg_spec["system"]["weight"],
        })

    j_final = exact_objective(last_model, final_thresholds)
    meta = {"resolved_spec": spec, "command": "dspsa", "seed": dcfg["seed"]}
    columns = ["n", "step_size", "penalty", "j_rounded", "normalized_error",
               "max_lambda", "clamp_flag"]
    rows = list(zip(state.trace["n"], state.trace["step_size"], state.trace["penalty"],
                    state.trace["j_rounded"], state.trace["normalized_error"],
                    state.trace["max_lambda"], state.trace["clamped"]))
    write_table(table_path(out, "dspsa_trace", fmt), columns, [list(r) for r in rows], meta, fmt)
    write_json(out / "dspsa_result.json", {
        "final_thresholds": final_thresholds.tolist(),
        "final_objective": j_final,
        "num_simulations": state.num_simulations,
        "clamp_fraction": state.clamp_fraction,
        "diverged": state.diverged,
        "regimes": regimes,
    }, meta)
    last = regimes[-1]
    gap = (j_final - last["dp_optimum_total"]) / last["dp_optimum_total"] if last["dp_optimum_total"] else math.nan
    print(f"dspsa: {total} iterations, final J {j_final:.6g} "
          f"(optimal {last['dp_optimum_total']:.6g}, gap {100 * gap:.2f}%)")
    return 0


def _witness_rows(violations: dict) -> list:
    rows = []
    for check, witnesses in sorted(violations.items()):
        for wit in witnesses:
            parts = ";".join(str(x) for x in wit)
            rows.append([check, parts])
    return rows


def cmd_check(spec: dict, out: Path, fmt: str) -> int:
    model = model_from_spec(spec)
    algorithm = spec["solver"]["algorithm"]
    values, policy, _ = SOLVER_FUNCS[algorithm](model, epsilon=spec["solver"]["epsilon"])
    structure = build_structure_report(model, policy, values)
    margins = weight_condition_margins(model.config)
    meta = {"resolved_spec": spec, "command": "check"}
    write_json(out / "structure_report.json", {"structure": structure.to_dict()}, meta)
    write_table(table_path(out, "witnesses", fmt), ["check", "witness"],
                _witness_rows(structure.violations), meta, fmt)
    checks = [
        ("monotone_b (unconditional)", structure.monotone_in_b),
        ("bounded_marginal (unconditional)", structure.bounded_marginal),
        ("monotone_h", structure.monotone_in_h),
        ("dominance", structure.dominance_ok),
        ("weight_bound (closed-form margin >= 0)", margins["weight_bound_ok"]),
        ("mixed_difference (raw margin >= 0)", margins["mixed_difference_ok"]),
        ("q_submodular", structure.q_submodular_ok),
        ("q_lnatural", structure.q_lnatural_ok),
    ]
    for name, flag in checks:
        print(f"  {name}: {'pass' if flag else 'FAIL'}")
    unconditional_ok = structure.monotone_in_b and structure.bounded_marginal
    return 0 if unconditional_ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qamsched",
                                     description="Transmission-scheduling MDP experiment harness")
    parser.add_argument("--version", action="version", version=f"qamsched {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "compare", "dspsa", "check"):
        p = sub.add_parser(name)
        p.add_argument("--spec", required=True, help="experiment spec (JSON)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the spec's seed")
        p.add_argument("--format", choices=["csv", "json"], default="csv",
                       help="tabular output format")
        if name == "compare":
            p.add_argument("--h-min", type=int, default=2)
            p.add_argument("--h-max", type=int, default=10)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args.spec)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(spec, out, args.format)
        if args.command == "compare":
            return cmd_compare(spec, out, args.format, args.h_min, args.h_max)
        if args.command == "dspsa":
            return cmd_dspsa(spec, out, args.format, seed_override=args.seed)
        return cmd_check(spec, out, args.format)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, jsonschema.ValidationError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 1
    except SolverConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
