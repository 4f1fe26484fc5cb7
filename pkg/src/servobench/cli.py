"""Command line: run one session, replay a batch manifest, score masks,
or serve the HTTP API.

Settings resolve in precedence order: explicit flags, then SERVOBENCH_*
environment variables, then a JSON config file (--config), then built-in
defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .controller import ControllerConfig
from .harness import SessionConfig, SessionOutcome, run_batch, run_session
from .metrics import corpus_csv, corpus_summary_json, evaluate_pair, score_corpus
from .probmap import read_map
from .providers import DEFAULT_CORRUPTION, CorruptionConfig
from .service import ServoService

ENV_PREFIX = "SERVOBENCH_"

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}

# name -> (type, default); controller settings feed ControllerConfig,
# the rest feed SessionConfig / provider construction
SETTINGS = {
    "provider": (str, "oracle"),
    "seed": (int, 0),
    "max_steps": (int, 500),
    "probe_delta": (float, 0.02),
    "perception_hold_frames": (int, 10),
    "grasp_radius": (float, 0.03),
    "broyden_lambda": (float, 0.05),
    "epsilon": (float, 1e-9),
    "alpha": (float, 0.1),
    "mu": (float, 1e-3),
    "max_joint_step": (float, 0.1),
    "convergence_tau": (float, 3.0),
    "convergence_patience": (int, 3),
    "divergence_window": (int, 10),
    "rate": (float, 1.0),
    "blur_sigma": (float, DEFAULT_CORRUPTION.blur_sigma),
    "noise_sigma": (float, DEFAULT_CORRUPTION.noise_sigma),
    "checkerboard_amplitude": (float, DEFAULT_CORRUPTION.checkerboard_amplitude),
    "checkerboard_period": (int, DEFAULT_CORRUPTION.checkerboard_period),
    "score_weighted": (bool, False),
    "projected_extreme_endpoints": (bool, False),
    "stack_line_terms": (bool, False),
}


class SettingsError(ValueError):
    pass


def _coerce(name: str, value, kind) -> object:
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in _BOOL_TRUE:
            return True
        if text in _BOOL_FALSE:
            return False
        raise SettingsError(f"setting {name}: cannot read {value!r} as a boolean")
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise SettingsError(f"setting {name}: {exc}") from exc


def resolve_settings(flags: dict, config_path=None) -> dict:
    merged = {name: default for name, (_, default) in SETTINGS.items()}
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SettingsError(f"config file {config_path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise SettingsError(f"config file {config_path}: must be a JSON object")
        unknown = set(doc) - set(SETTINGS)
        if unknown:
            raise SettingsError(f"config file {config_path}: unknown settings {sorted(unknown)}")
        for name, value in doc.items():
            merged[name] = _coerce(name, value, SETTINGS[name][0])
    for name, (kind, _) in SETTINGS.items():
        env_value = os.environ.get(ENV_PREFIX + name.upper())
        if env_value is not None:
            merged[name] = _coerce(name, env_value, kind)
    for name, value in flags.items():
        if name in SETTINGS and value is not None:
            merged[name] = _coerce(name, value, SETTINGS[name][0])
    return merged


def session_config_from(settings: dict) -> SessionConfig:
    controller = ControllerConfig(
        broyden_lambda=settings["broyden_lambda"],
        epsilon=settings["epsilon"],
        alpha=settings["alpha"],
        mu=settings["mu"],
        max_joint_step=settings["max_joint_step"],
        convergence_tau=settings["convergence_tau"],
        convergence_patience=settings["convergence_patience"],
        divergence_window=settings["divergence_window"],
        rate=settings["rate"],
    )
    corruption = CorruptionConfig(
        blur_sigma=settings["blur_sigma"],
        noise_sigma=settings["noise_sigma"],
        checkerboard_amplitude=settings["checkerboard_amplitude"],
        checkerboard_period=settings["checkerboard_period"],
        seed=settings["seed"],
    )
    return SessionConfig(
        controller=controller,
        probe_delta=settings["probe_delta"],
        max_steps=settings["max_steps"],
        perception_hold_frames=settings["perception_hold_frames"],
        grasp_radius=settings["grasp_radius"],
        seed=settings["seed"],
        corruption=corruption,
        score_weighted=settings["score_weighted"],
        projected_extreme_endpoints=settings["projected_extreme_endpoints"],
        stack_line_terms=settings["stack_line_terms"],
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="servobench",
        description="prompt-driven uncalibrated visual servoing benchmark",
    )
    parser.add_argument("--config", help="JSON settings file", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one servo session")
    run_p.add_argument("--scene", required=True)
    run_p.add_argument("--prompt", required=True)
    run_p.add_argument(
        "--constraint",
        required=True,
        help="comma-separated kinds, e.g. p2p or p2l,par",
    )
    run_p.add_argument("--provider", default=None, help="oracle | corrupt | remote:HOST:PORT")
    run_p.add_argument("--max-steps", type=int, default=None, dest="max_steps")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--trace", default=None, help="write the step trace as JSONL")

    batch_p = sub.add_parser("batch", help="run a task manifest")
    batch_p.add_argument("--manifest", required=True)
    batch_p.add_argument("--out", required=True, help="CSV report path (JSON written alongside)")
    batch_p.add_argument("--provider", default=None)
    batch_p.add_argument("--seed", type=int, default=None)

    eval_p = sub.add_parser("eval-mask", help="score prediction maps against ground truth")
    eval_p.add_argument("--pred", required=True, help="map file, or directory of maps")
    eval_p.add_argument("--gt", required=True, help="map file, or directory of maps")
    eval_p.add_argument("--csv", action="store_true", help="emit CSV instead of JSON")

    serve_p = sub.add_parser("serve", help="serve the HTTP API for the operator console")
    serve_p.add_argument("--bind", default="127.0.0.1:8080", help="HOST:PORT")
    serve_p.add_argument("--scene", required=True)
    serve_p.add_argument("--static", default=None, help="serve an operator console build from /console/")
    serve_p.add_argument("--provider", default=None)
    serve_p.add_argument("--seed", type=int, default=None)

    return parser


def _cmd_run(args, settings) -> int:
    cfg = session_config_from(settings)
    kinds = [k.strip() for k in args.constraint.split(",") if k.strip()]
    result = run_session(args.scene, args.prompt, kinds, settings["provider"], cfg)
    if args.trace:
        Path(args.trace).write_text(result.trace_jsonl())
    print(json.dumps(result.to_dict()))
    return 0 if result.outcome is SessionOutcome.CONVERGED else 1


def _cmd_batch(args, settings) -> int:
    cfg = session_config_from(settings)
    report = run_batch(args.manifest, settings["provider"], cfg)
    out_csv = Path(args.out)
    out_csv.write_text(report.to_csv())
    out_json = out_csv.with_suffix(".json")
    out_json.write_text(report.to_json())
    print(report.to_csv(), end="")
    return 0


def _cmd_eval_mask(args) -> int:
    pred, gt = Path(args.pred), Path(args.gt)
    if pred.is_dir() != gt.is_dir():
        print("eval-mask: --pred and --gt must both be files or both directories", file=sys.stderr)
        return 2
    if pred.is_dir():
        rows, means = score_corpus(pred, gt)
        print(corpus_csv(rows) if args.csv else corpus_summary_json(means), end="")
        return 0
    report = evaluate_pair(read_map(pred), read_map(gt))
    if args.csv:
        row = report.as_dict()
        print("name,mae,s_measure,weighted_f,max_f")
        print(
            f"{pred.stem},{row['mae']:.6f},{row['s_measure']:.6f},"
            f"{row['weighted_f']:.6f},{row['max_f']:.6f}"
        )
    else:
        print(json.dumps(report.as_dict()))
    return 0


def _cmd_serve(args, settings) -> int:
    host, _, port_text = args.bind.rpartition(":")
    if not host or not port_text.isdigit():
        print(f"serve: --bind must be HOST:PORT, got {args.bind!r}", file=sys.stderr)
        return 2
    service = ServoService(
        args.scene,
        cfg=session_config_from(settings),
        host=host,
        port=int(port_text),
        static_dir=args.static,
    )
    print(f"serving on http://{host}:{service.port}", flush=True)
    try:
        service.server.serve_forever()
    except KeyboardInterrupt:
        service.shutdown()
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    flags = {
        name: getattr(args, name)
        for name in SETTINGS
        if hasattr(args, name)
    }
    try:
        settings = resolve_settings(flags, args.config)
        if args.command == "run":
            return _cmd_run(args, settings)
        if args.command == "batch":
            return _cmd_batch(args, settings)
        if args.command == "eval-mask":
            return _cmd_eval_mask(args)
        if args.command == "serve":
            return _cmd_serve(args, settings)
    except (SettingsError, ValueError, OSError) as exc:
        # bad flag values, unknown kinds, unreadable scenes or maps
        print(f"servobench: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
