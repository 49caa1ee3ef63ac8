"""Command-line interface for batch planning work.

Subcommands: fit-env, identify, plan, simulate, pareto, serve.  Domain
failures exit 1 with a structured JSON message on stderr; usage errors
exit 2 via argparse.  Outputs are byte-stable for identical inputs.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .envfield import error_stats, fit_env_model, parse_samples
from .errors import FerryPlanError
from .identify import identify_from_telemetry, parse_telemetry
from .model import FerryParams, State
from .scenarios import Scenario, planning_spec_from_file
from .service import DEFAULT_SOLVER_CONFIG, PlannerService, api_serve
from .solver import solve
from .transcription import OcpSpec, build_nlp, extract_plan, initial_guess, shrink


def _fail(kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return 1


def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, indent=1)
    if path == "-":
        sys.stdout.write(text + "\n")
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def cmd_fit_env(args) -> int:
    try:
        with open(args.csv, encoding="utf-8") as fh:
            samples = parse_samples(fh)
        env = fit_env_model(samples)
    except OSError as exc:
        return _fail("io", str(exc))
    except FerryPlanError as exc:
        return _fail(type(exc).__name__, str(exc))
    payload = {"schema_version": 1, **env.to_dict()}
    if args.stats:
        payload["stats"] = {
            "sample_count": len(samples),
            "wind": error_stats(env.wind, samples, "wind").to_dict(),
            "current": error_stats(env.current, samples, "current").to_dict(),
        }
    _write_json(args.output, payload)
    return 0


def cmd_identify(args) -> int:
    try:
        with open(args.telemetry, encoding="utf-8") as fh:
            samples = parse_telemetry(fh)
        params = identify_from_telemetry(samples)
    except OSError as exc:
        return _fail("io", str(exc))
    except FerryPlanError as exc:
        return _fail(type(exc).__name__, str(exc))
    _write_json(args.output, {"schema_version": 1, **params.to_dict()})
    return 0


def _load_weight_file(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_plan(args) -> int:
    try:
        spec = planning_spec_from_file(args.scenario)
        if args.weights:
            q_path, r_path = args.weights
            from .scenarios import parse_weight
            from .transcription import DEFAULT_Q, DEFAULT_R
            spec = OcpSpec(
                t_now=spec.t_now, T_end=spec.T_end, x_hat=spec.x_hat,
                x_dock=spec.x_dock, env=spec.env, params=spec.params,
                constraints=spec.constraints, N_nodes=spec.N_nodes,
                Q=parse_weight(_load_weight_file(q_path), DEFAULT_Q),
                R=parse_weight(_load_weight_file(r_path), DEFAULT_R),
                power_epsilon=spec.power_epsilon,
            )
        nlp = build_nlp(spec)
        solution = solve(nlp, initial_guess(spec), DEFAULT_SOLVER_CONFIG)
        if solution.status != "converged":
            return _fail("plan-failed",
                         f"solver finished with status {solution.status}")
        plan = extract_plan(spec, solution.z, solution.diagnostics())
    except OSError as exc:
        return _fail("io", str(exc))
    except (FerryPlanError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc))
    _write_json(args.output, plan.to_dict())
    return 0


def cmd_simulate(args) -> int:
    """Replay a scripted deviation sequence through shrink/replan."""
    try:
        spec = planning_spec_from_file(args.scenario)
        with open(args.updates, encoding="utf-8") as fh:
            updates = json.load(fh)
        nlp = build_nlp(spec)
        solution = solve(nlp, initial_guess(spec), DEFAULT_SOLVER_CONFIG)
        if solution.status != "converged":
            return _fail("plan-failed", f"initial solve: {solution.status}")
        plan = extract_plan(spec, solution.z, solution.diagnostics())
        plans = [plan.to_dict()]
        for k, update in enumerate(updates):
            t_new = float(update["t"])
            x_new = State(*[float(v) for v in update["state"]])
            spec, warm = shrink(spec, t_new, x_new, plan)
            nlp = build_nlp(spec)
            solution = solve(nlp, warm, DEFAULT_SOLVER_CONFIG)
            if solution.status != "converged":
                return _fail("plan-failed",
                             f"replan {k} at t={t_new}: {solution.status}")
            plan = extract_plan(spec, solution.z, solution.diagnostics())
            plans.append(plan.to_dict())
    except OSError as exc:
        return _fail("io", str(exc))
    except (FerryPlanError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc))
    _write_json(args.output, {
        "schema_version": 1,
        "updates": updates,
        "plans": plans,
    })
    return 0


def cmd_pareto(args) -> int:
    try:
        durations = [float(v) for v in args.durations.split(",") if v]
        scalings = [float(v) for v in args.scalings.split(",") if v]
        with open(args.scenario, encoding="utf-8") as fh:
            scenario = Scenario.from_dict(json.load(fh))
        service = PlannerService()
        service.add_scenario(scenario)
        result = service.pareto_sweep(scenario.id, durations, scalings)
    except OSError as exc:
        return _fail("io", str(exc))
    except (FerryPlanError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc))
    if args.output == "-":
        sys.stdout.write(result.to_csv())
    else:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(result.to_csv())
    return 0


def cmd_serve(args) -> int:
    api_serve(port=args.port, data_dir=args.data, api_token=args.token,
              host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ferryplan",
        description="Energy-optimal ferry trajectory planning and decision support",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-env", help="fit wind/current models from sample CSV")
    p.add_argument("csv")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--stats", action="store_true",
                   help="include residual statistics in the output")
    p.set_defaults(func=cmd_fit_env)

    p = sub.add_parser("identify", help="identify damping and power coefficients")
    p.add_argument("telemetry")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("plan", help="solve one dock-to-dock planning problem")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--weights", nargs=2, metavar=("Q.json", "R.json"),
                   help="override the regularization weight matrices")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate",
                       help="replay a scripted deviation sequence through replanning")
    p.add_argument("scenario")
    p.add_argument("--updates", required=True)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pareto", help="energy/duration sweep over disturbance scalings")
    p.add_argument("scenario")
    p.add_argument("--durations", required=True, help="comma-separated seconds")
    p.add_argument("--scalings", required=True, help="comma-separated fractions")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("serve", help="run the planning service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data", default=None, help="persistence directory")
    p.add_argument("--token", default=None, help="static API token")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
