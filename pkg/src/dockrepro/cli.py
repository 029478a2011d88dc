"""Command-line entry point: ``dockrepro lint|fix|diff|verify|aggregate``.

Exit codes: 0 clean, 1 findings at or above the policy threshold, 2
operational error, 3 images equal up to metadata, 4 real differences.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import List, Optional

from . import __version__
from .differ import build_report, render_text
from .dockerfile import parse_dockerfile
from .errors import BuilderContractViolation, DockreproError, MalformedRecord, ParseError
from .lint import apply_fixes, builtin_catalog, lint, load_pin_map, select_rules
from .oci import load_image
from .protocol import CommandBuilder, Verdict, git_commit_epoch, run_protocol
from .report import aggregate, load_records, render_summary

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2
EXIT_SEMANTIC = 3
EXIT_DIFFERENT = 4

POLICIES = ("report-only", "fail-on-error", "fail-on-warning")
_THRESHOLD = {"report-only": set(), "fail-on-error": {"error"}, "fail-on-warning": {"error", "warning"}}


def _err(msg: str) -> None:
    print(f"dockrepro: {msg}", file=sys.stderr)


def _out(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _read_dockerfile(path: str):
    text = Path(path).read_text(encoding="utf-8")
    return parse_dockerfile(text)


def _rules(spec: Optional[str]):
    ids = spec.split(",") if spec else None
    return select_rules(builtin_catalog(), ids)


def cmd_lint(args) -> int:
    try:
        catalog = _rules(args.rules)
        pins = load_pin_map(args.pin_map) if args.pin_map else None
    except (ValueError, OSError, DockreproError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    failed = False
    over = False
    for path in args.paths:
        try:
            doc = _read_dockerfile(path)
        except (OSError, UnicodeDecodeError, ParseError) as exc:
            _err(f"{path}: {exc}")
            failed = True
            continue
        findings = lint(doc, catalog, pins)
        for f in findings:
            if args.format == "json":
                sys.stdout.write(f.to_json(path) + "\n")
            else:
                start, end = f.line_span
                span = f"{start}" if start == end else f"{start}-{end}"
                fix = " (fixable)" if f.fixable else ""
                _out(args, f"{path}:{span}: {f.rule_id} [{f.severity}] {f.message}{fix}")
            if f.severity in _THRESHOLD[args.exit_policy]:
                over = True
    if failed:
        return EXIT_ERROR
    return EXIT_FINDINGS if over else EXIT_OK


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        if path.exists():
            os.chmod(tmp, path.stat().st_mode & 0o7777)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_fix(args) -> int:
    try:
        catalog = _rules(args.rules)
        pins = load_pin_map(args.pin_map) if args.pin_map else None
        doc = _read_dockerfile(args.path)
    except (ValueError, OSError, UnicodeDecodeError, DockreproError) as exc:
        _err(f"{args.path}: {exc}")
        return EXIT_ERROR
    result = apply_fixes(doc, lint(doc, catalog, pins))
    target = Path(args.path) if args.in_place else (Path(args.output) if args.output else None)
    try:
        if target is None:
            sys.stdout.write(result.text)
        else:
            _atomic_write(target, result.text)
    except OSError as exc:
        _err(f"cannot write output: {exc}")
        return EXIT_ERROR
    # keep stdout clean when it carries the document
    report = sys.stderr if target is None else sys.stdout
    if args.format == "json":
        print(json.dumps({
            "applied": len(result.applied),
            "applied_rules": [f.rule_id for f in result.applied],
            "unfixed": [f.to_record(args.path) for f in result.remainder],
        }, sort_keys=True), file=report)
    elif not args.quiet:
        n = len(result.applied)
        print(f"{n} fix{'' if n == 1 else 'es'} applied", file=report)
        for f in result.remainder:
            print(f"{args.path}:{f.line_span[0]}: {f.rule_id} not fixed: {f.message}", file=report)
    return EXIT_OK


def cmd_diff(args) -> int:
    try:
        a = load_image(args.image_a)
        b = load_image(args.image_b)
        report = build_report(a, b)
    except (OSError, DockreproError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    if args.format == "json":
        sys.stdout.write(report.to_json() + "\n")
    else:
        _out(args, render_text(report, semantic_only=args.semantic_only))
    if report.bitwise_equal:
        return EXIT_OK
    return EXIT_SEMANTIC if report.semantic_equal else EXIT_DIFFERENT


def _epoch(value: str, context: str) -> int:
    if value == "auto":
        found = git_commit_epoch(context)
        return 0 if found is None else found
    return int(value)


def cmd_verify(args) -> int:
    try:
        epoch = _epoch(args.epoch, args.context_dir)
    except ValueError:
        _err(f"--epoch must be an integer or 'auto', got {args.epoch!r}")
        return EXIT_ERROR
    if not Path(args.context_dir).is_dir():
        _err(f"{args.context_dir}: not a directory")
        return EXIT_ERROR
    try:
        trace = run_protocol(
            CommandBuilder(args.builder), args.context_dir, epoch,
            dockerfile=args.dockerfile, workdir=args.workdir, timeout=args.timeout,
        )
    except BuilderContractViolation as exc:
        _err(str(exc))
        if exc.log_excerpt:
            print(exc.log_excerpt, file=sys.stderr)
        return EXIT_ERROR
    except (OSError, DockreproError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    if args.report:
        try:
            Path(args.report).write_text(trace.to_json() + "\n", encoding="utf-8")
        except OSError as exc:
            _err(f"cannot write report: {exc}")
            return EXIT_ERROR
    if args.format == "json":
        sys.stdout.write(trace.to_json() + "\n")
    else:
        _out(args, trace.verdict.value)
        _out(args, f"  dockerfile: {trace.dockerfile}")
        _out(args, f"  builds: {trace.build_count}; {trace.reason}")
    if trace.verdict is Verdict.NotBuildable:
        for _, outcome in trace.builds:
            if not outcome.ok and outcome.log_excerpt:
                print(outcome.log_excerpt, file=sys.stderr)
                break
        return EXIT_ERROR
    if trace.verdict is Verdict.NonReproducible:
        return EXIT_DIFFERENT
    return EXIT_OK


def cmd_aggregate(args) -> int:
    try:
        records = load_records(args.records_path)
    except MalformedRecord as exc:
        _err(f"{args.records_path}: {exc}")
        return EXIT_ERROR
    except (OSError, UnicodeDecodeError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    summary = aggregate(records, classified_total=args.classified_total)
    data = render_summary(summary, args.format).decode()
    if args.format == "json":
        sys.stdout.write(data)
    else:
        _out(args, data)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dockrepro", description="Dockerfile reproducibility toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--format", choices=("text", "json"), default="text")
    parser.add_argument("--quiet", "-q", action="store_true", help="suppress human-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--format", choices=("text", "json"), default=argparse.SUPPRESS)
        p.add_argument("--quiet", "-q", action="store_true", default=argparse.SUPPRESS)
        p.set_defaults(func=func)
        return p

    p = add("lint", cmd_lint, "report reproducibility anti-patterns")
    p.add_argument("paths", nargs="+")
    p.add_argument("--rules", help="comma-separated rule ids (default: all)")
    p.add_argument("--exit-policy", choices=POLICIES, default="fail-on-error")
    p.add_argument("--pin-map", help="file of 'repository:tag sha256:<hex>' lines")

    p = add("fix", cmd_fix, "rewrite a Dockerfile with the available fixes")
    p.add_argument("path")
    dest = p.add_mutually_exclusive_group()
    dest.add_argument("--in-place", action="store_true")
    dest.add_argument("--output", "-o")
    p.add_argument("--pin-map")
    p.add_argument("--rules")

    p = add("diff", cmd_diff, "compare two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--semantic-only", action="store_true", help="hide metadata-only differences")

    p = add("verify", cmd_verify, "rebuild and classify a repository checkout")
    p.add_argument("context_dir")
    p.add_argument("--builder", required=True, help="adapter command")
    p.add_argument("--epoch", default="auto", help="SOURCE_DATE_EPOCH for hardened builds, or 'auto'")
    p.add_argument("--report", help="write the trace JSON here")
    p.add_argument("--dockerfile", help="skip discovery and use this repo-relative path")
    p.add_argument("--workdir", help="keep built images here instead of a temporary directory")
    p.add_argument("--timeout", type=float, default=1800)

    p = add("aggregate", cmd_aggregate, "summarize JSON-lines corpus records")
    p.add_argument("records_path")
    p.add_argument("--classified-total", type=int, help="override the classified-report denominator")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
