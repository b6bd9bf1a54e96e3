"""Command-line entry point.

Subcommands: collect, train, eval, propcheck, trace, serve. Exit codes:
0 on success, 2 on a property-suite failure, 3 on a missing artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .control import Controller, ControllerKind, ErrorKind
from .environment import CASES, ContactParams, EpisodeConfig
from .errors import ExpertFailureRateError, MissingPolicyError
from .experiments import (
    COMBOS,
    ExperimentConfig,
    cmd_collect,
    cmd_eval,
    cmd_propcheck,
    cmd_trace,
    cmd_train,
)
from .policy import TrainConfig

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 2
EXIT_MISSING_ARTIFACT = 3


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _episode_config(doc: dict) -> EpisodeConfig:
    contact = ContactParams(**doc.get("contact", {}))
    fields = {k: v for k, v in doc.get("episode", {}).items()}
    return EpisodeConfig(contact=contact, **fields)


def _combo(controller: str, error: str) -> ControllerKind:
    return ControllerKind(Controller(controller), ErrorKind(error))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gicsim",
        description="geometric impedance control: simulation and experiments")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with episode/contact overrides")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", type=Path, default=Path("."))
    sub = parser.add_subparsers(dest="command", required=True)

    p_collect = sub.add_parser("collect", help="record expert demonstrations")
    p_collect.add_argument("--episodes", type=int, default=250)
    p_collect.add_argument("--case", default="default", choices=CASES)
    p_collect.add_argument("--noise", type=float, default=0.05)
    p_collect.add_argument("--out", default="demos")

    p_train = sub.add_parser("train", help="behavior-clone a gain policy")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--error", required=True, choices=["gcev", "cev"])
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--epochs", type=int, default=60)
    p_train.add_argument("--batch-size", type=int, default=256)

    p_eval = sub.add_parser("eval", help="run the transfer matrix")
    p_eval.add_argument("--policy-gcev")
    p_eval.add_argument("--policy-cev")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--cases", nargs="+", default=list(CASES), choices=CASES)
    p_eval.add_argument("--combos", nargs="+",
                        default=[c.label for c in COMBOS],
                        choices=[c.label for c in COMBOS])
    p_eval.add_argument("--workers", type=int, default=0)
    p_eval.add_argument("--out", default="transfer_matrix.csv")

    p_prop = sub.add_parser("propcheck", help="audit the geometric properties")
    p_prop.add_argument("--samples", type=int, default=10_000)
    p_prop.add_argument("--tolerance", type=float, default=1e-9)
    p_prop.add_argument("--dynamics-samples", type=int, default=200)
    p_prop.add_argument("--out", default="propcheck.json")

    p_trace = sub.add_parser("trace", help="emit one episode's per-step CSV")
    p_trace.add_argument("--policy", required=True)
    p_trace.add_argument("--controller", default="gic", choices=["gic", "cic", "gac"])
    p_trace.add_argument("--error", default="gcev", choices=["gcev", "cev"])
    p_trace.add_argument("--case", default="default", choices=CASES)
    p_trace.add_argument("--out", default="trace.csv")

    p_serve = sub.add_parser("serve", help="run the teleop WebSocket service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--case", default="default", choices=CASES)
    p_serve.add_argument("--realtime", action="store_true")

    args = parser.parse_args(argv)
    doc = _load_config(args.config)
    episode = _episode_config(doc)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "collect":
            data_g, data_c = cmd_collect(
                args.episodes, args.case, args.noise,
                args.out_dir / args.out, seed=args.seed, episode=episode)
            print(f"wrote {len(data_g)} gcev and {len(data_c)} cev records "
                  f"under {args.out_dir / args.out}_*.jsonl")
        elif args.command == "train":
            cfg = TrainConfig(batch_size=args.batch_size,
                              max_epochs=args.epochs, seed=args.seed)
            cmd_train(args.dataset, ErrorKind(args.error), cfg,
                      args.out_dir / args.out)
            print(f"policy written to {args.out_dir / args.out}")
        elif args.command == "eval":
            paths = {}
            if args.policy_gcev:
                paths[ErrorKind.GCEV] = args.policy_gcev
            if args.policy_cev:
                paths[ErrorKind.CEV] = args.policy_cev
            combos = tuple(c for c in COMBOS if c.label in args.combos)
            config = ExperimentConfig(
                cases=tuple(args.cases), combos=combos,
                episodes_per_cell=args.episodes, master_seed=args.seed,
                workers=args.workers, episode=episode)
            table = cmd_eval(paths, config, csv_path=args.out_dir / args.out)
            print(table.format_text(tuple(args.cases)))
            print(f"per-episode rows in {args.out_dir / args.out}")
        elif args.command == "propcheck":
            report = cmd_propcheck(args.samples, args.tolerance,
                                   args.dynamics_samples, seed=args.seed,
                                   out_path=args.out_dir / args.out)
            failed = [k for k, v in report.items() if not v["passed"]]
            for name, entry in report.items():
                flag = "PASS" if entry["passed"] else "FAIL"
                print(f"{flag} {name}: max residual {entry['max_residual']:.3e} "
                      f"(tol {entry['tolerance']:.1e}, n={entry['samples']})")
            if failed:
                return EXIT_PROPERTY_FAILURE
        elif args.command == "trace":
            combo = _combo(args.controller, args.error)
            steps = cmd_trace(args.policy, combo, args.case, args.seed,
                              args.out_dir / args.out, episode=episode)
            print(f"{steps} steps written to {args.out_dir / args.out}")
        elif args.command == "serve":
            import asyncio

            from .dynamics import reference_arm
            from .environment import make_scene
            from .teleop import TeleopConfig, serve

            cfg = TeleopConfig(case=args.case, seed=args.seed,
                               realtime=args.realtime,
                               contact=episode.contact)
            print(f"teleop session on ws://{args.host}:{args.port}/session")
            asyncio.run(serve(reference_arm(), make_scene(args.case),
                              args.host, args.port, cfg))
    except MissingPolicyError as err:
        print(f"missing artifact: {err}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except ExpertFailureRateError as err:
        print(f"collection failed: {err}", file=sys.stderr)
        return EXIT_PROPERTY_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
