"""The `hsm` command line: run, validate, export-dot, list-demos.

Exit codes for `run`: 0 succeeded, 2 aborted, 3 canceled, 4 any other
outcome, 1 errors. `validate` exits 0 when clean, 5 when issues were found,
1 when the document does not parse. Diagnostics go to stderr; the outcome
line, issue lines, and DOT text go to stdout (or --out).
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from .blackboard import Blackboard
from .core import CancelToken, StateMachine
from .definition import build, export_dot, lint, parse
from .demos import demo_text, list_demos
from .errors import BindFailure, DefinitionError, HsmError
from .monitor import Registry, serve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORTED = 2
EXIT_CANCELED = 3
EXIT_OTHER = 4
EXIT_ISSUES = 5

_OUTCOME_EXITS = {"succeeded": EXIT_OK, "aborted": EXIT_ABORTED, "canceled": EXIT_CANCELED}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except HsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--log-level", choices=["error", "warn", "warning", "info", "debug"],
        default="warning", help="log verbosity (stderr)",
    )

    parser = argparse.ArgumentParser(prog="hsm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="build and execute a machine")
    _add_source_flags(run)
    run.add_argument("--serve", metavar="HOST:PORT", help="publish monitor snapshots while running")
    run.add_argument("--rate-hz", type=float, default=4.0, help="monitor publish rate")
    run.add_argument("--static-dir", help="viewer assets served at / by the monitor server")
    run.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", dest="seed",
        help="seed a blackboard entry (VALUE parsed as JSON, else kept as a string)",
    )
    run.set_defaults(func=cmd_run)

    validate = sub.add_parser("validate", parents=[common], help="lint a definition document")
    validate.add_argument("path", help="definition file to check")
    validate.set_defaults(func=cmd_validate)

    export = sub.add_parser("export-dot", parents=[common], help="emit a Graphviz diagram")
    _add_source_flags(export)
    export.add_argument("--out", help="write DOT here instead of stdout")
    export.set_defaults(func=cmd_export_dot)

    demos = sub.add_parser("list-demos", parents=[common], help="list bundled demo machines")
    demos.set_defaults(func=cmd_list_demos)
    return parser


def _add_source_flags(sub: argparse.ArgumentParser) -> None:
    source = sub.add_mutually_exclusive_group(required=True)
    source.add_argument("--demo", choices=list_demos(), help="a bundled demo definition")
    source.add_argument("--definition", metavar="PATH", help="a definition document file")


def _load_source(args) -> str:
    if args.demo:
        return demo_text(args.demo)
    path = Path(args.definition)
    try:
        return path.read_text("utf-8")
    except OSError as exc:
        raise HsmError(f"cannot read definition {path}: {exc}") from None


def _parse_seed(pairs: list[str]) -> Blackboard:
    blackboard = Blackboard()
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise HsmError(f"--set needs KEY=VALUE, got {pair!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        blackboard.set(key, value)
    return blackboard


def _register_tree(registry: Registry, machine: StateMachine) -> None:
    """Register a machine and every nested machine under their own names."""
    try:
        registry.register(machine.name, machine)
    except HsmError:
        logger.warning("duplicate machine name %r not registered twice", machine.name)
    for child in machine.states.values():
        if isinstance(child, StateMachine):
            _register_tree(registry, child)


def cmd_run(args) -> int:
    try:
        machine = build(parse(_load_source(args)))
    except DefinitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    blackboard = _parse_seed(args.seed)
    token = CancelToken()

    server = None
    if args.serve:
        registry = Registry()
        _register_tree(registry, machine)
        try:
            server = serve(registry, args.serve, args.rate_hz, static_dir=args.static_dir)
        except BindFailure as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR

    def on_interrupt(signum, frame):
        if token.is_set():
            raise KeyboardInterrupt  # second interrupt: give up cooperatively waiting
        logger.warning("interrupt received, canceling")
        token.cancel()

    previous = signal.signal(signal.SIGINT, on_interrupt)
    try:
        outcome = machine.execute(blackboard, token)
    finally:
        signal.signal(signal.SIGINT, previous)
        if server is not None:
            server.publish_now()
            server.shutdown()

    print(outcome)
    return _OUTCOME_EXITS.get(outcome, EXIT_OTHER)


def cmd_validate(args) -> int:
    path = Path(args.path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        definition = parse(text)
    except DefinitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    issues = lint(definition)
    for issue in sorted(issues):
        print(f"{issue.code} {issue.location}: {issue.message}")
    return EXIT_ISSUES if issues else EXIT_OK


def cmd_export_dot(args) -> int:
    try:
        dot = export_dot(parse(_load_source(args)))
    except DefinitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.out:
        try:
            Path(args.out).write_text(dot, "utf-8")
        except OSError as exc:
            print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
            return EXIT_ERROR
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def cmd_list_demos(args) -> int:
    for name in list_demos():
        print(name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
