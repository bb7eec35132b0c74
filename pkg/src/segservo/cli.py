"""Command line front end.

Exit codes: 0 on success, 2 for configuration or usage problems, 3 when
an operation runs but ends in a declared failure (no convergence, lost
object, failed grasp, replay mismatch), 1 for unexpected internal
errors.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import experiments
from .errors import (
    ConfigError,
    GraspFailedError,
    NonConvergenceError,
    ObjectLostError,
    ReplayMismatchError,
    SegServoError,
)
from .scenario import (
    KIND_APPROACH,
    KIND_GRASP,
    KIND_LEARN,
    KIND_SERVO_STEP,
    KIND_TRIALS,
    Scenario,
    load_scenario,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_FAILURE = 3

_FAILURES = (
    NonConvergenceError,
    ObjectLostError,
    GraspFailedError,
    ReplayMismatchError,
)


def _add_common(parser: argparse.ArgumentParser, jacobian_help: str) -> None:
    parser.add_argument(
        "--config", required=True, type=Path, help="scenario TOML file"
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="override the scenario noise seed"
    )
    parser.add_argument(
        "--out", type=Path, default=None, help="output directory"
    )
    parser.add_argument(
        "--jacobian", type=Path, default=None, help=jacobian_help
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segservo",
        description=(
            "Segmentation-driven visual servoing, depth estimation, and "
            "grasping experiments in a simulated world"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a pseudo-jacobian from scratch")
    _add_common(p, "warm-start estimate instead of the seed value")

    p = sub.add_parser("servo-step", help="servo from fixed placements")
    _add_common(p, "estimate to servo with")

    p = sub.add_parser(
        "approach-depth", help="estimate object height by approaching it"
    )
    _add_common(p, "estimate used for centering")
    p.add_argument(
        "--replay",
        type=Path,
        default=None,
        help="re-run the estimator over a logged observations CSV "
        "(no simulation; --config may be omitted)",
    )
    # --config is optional in replay mode; enforced manually
    for action in p._actions:
        if action.dest == "config":
            action.required = False

    p = sub.add_parser("grasp", help="run the full grasp pipeline once")
    _add_common(p, "estimate used for survey-height centering")

    p = sub.add_parser("trials", help="run an item/height trial suite")
    _add_common(p, "estimate used for centering")

    p = sub.add_parser(
        "replay", help="verify a logged trajectory reproduces bit-exactly"
    )
    _add_common(p, "(unused)")
    p.add_argument(
        "--trajectory", required=True, type=Path, help="trajectory/steps CSV to verify"
    )

    return parser


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    out = scenario
    if args.seed is not None and out.noise is not None:
        out = replace(out, noise=replace(out.noise, seed=args.seed))
    if args.jacobian is not None:
        path = args.jacobian
        if out.kind == KIND_SERVO_STEP and out.servo_step is not None:
            out = replace(out, servo_step=replace(out.servo_step, jacobian=path))
        elif out.kind == KIND_APPROACH and out.approach is not None:
            out = replace(out, approach=replace(out.approach, jacobian=path))
        elif out.kind == KIND_GRASP and out.grasp is not None:
            out = replace(out, grasp=replace(out.grasp, jacobian=path))
        elif out.kind == KIND_TRIALS and out.trials is not None:
            out = replace(out, trials=replace(out.trials, jacobian=path))
        # learn: warm start is intentionally not supported through the
        # file; a fresh run always starts from the seed estimate
    return out


_KIND_FOR_COMMAND = {
    "learn": KIND_LEARN,
    "servo-step": KIND_SERVO_STEP,
    "approach-depth": KIND_APPROACH,
    "grasp": KIND_GRASP,
    "trials": KIND_TRIALS,
    "replay": None,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "approach-depth" and args.replay is not None:
            out_dir = experiments.resolve_out_dir(args.out, None)
            experiments.replay_depth_csv(args.replay, out_dir)
            return EXIT_OK

        if args.config is None:
            raise ConfigError("--config is required")
        scenario = load_scenario(args.config)
        expected = _KIND_FOR_COMMAND[args.command]
        if expected is not None and scenario.kind != expected:
            raise ConfigError(
                f"scenario kind {scenario.kind!r} does not match "
                f"command {args.command!r}"
            )
        scenario = _apply_overrides(scenario, args)
        out_dir = experiments.resolve_out_dir(args.out, scenario.out)

        if args.command == "learn":
            experiments.run_learn(scenario, out_dir)
        elif args.command == "servo-step":
            experiments.run_servo_step(scenario, out_dir)
        elif args.command == "approach-depth":
            experiments.run_approach_depth(scenario, out_dir)
        elif args.command == "grasp":
            experiments.run_grasp(scenario, out_dir)
        elif args.command == "trials":
            experiments.run_trials(scenario, out_dir)
        elif args.command == "replay":
            experiments.run_replay(scenario, args.trajectory, out_dir)
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _FAILURES as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except SegServoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception:  # noqa: BLE001 - last-resort diagnostics
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
