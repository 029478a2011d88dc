"""Reproducibility lint rules for Dockerfiles, and their automatic fixes.

Every rule that inspects RUN instructions works on one RUN chain at a time:
cleanup in a later RUN does not help, because the earlier layer has already
been snapshotted.
"""

from __future__ import annotations

import json
import logging
import posixpath
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

from .dockerfile import (
    DockerfileDoc,
    FromArgs,
    Instruction,
    KeyValueArgs,
    RunArgs,
    parse_dockerfile,
)
from .errors import PinMapError
from .shell import ShellCommand, Token
from .taxonomy import Ecosystem, RootCauseCategory

log = logging.getLogger(__name__)

SEVERITIES = ("error", "warning", "info")
FIX_KINDS = (
    "append-to-segment-chain",
    "add-flag-to-command",
    "insert-instructions-after",
    "replace-image-ref",
)

_DIGEST_RE = re.compile(r"^sha256:[0-9a-f]{64}$")


@dataclass(frozen=True)
class FixAction:
    kind: str
    payload: Tuple[str, ...]
    target: int  # index into doc.instructions
    segment: Optional[int] = None  # None: every matching command in the chain
    anchor: Tuple[str, ...] = ()  # (command, subcommand) a flag goes after

    def __post_init__(self) -> None:
        if self.kind not in FIX_KINDS:
            raise ValueError(f"unknown fix kind {self.kind!r}")


@dataclass(frozen=True)
class Finding:
    rule_id: str
    line_span: Tuple[int, int]
    message: str
    category: RootCauseCategory
    severity: str
    fix: Optional[FixAction] = None
    ecosystem: Ecosystem = Ecosystem.none

    @property
    def fixable(self) -> bool:
        return self.fix is not None

    def to_record(self, file: str = "-") -> dict:
        return {
            "rule_id": self.rule_id,
            "category": self.category.name,
            "severity": self.severity,
            "file": file,
            "line_start": self.line_span[0],
            "line_end": self.line_span[1],
            "message": self.message,
            "fixable": self.fixable,
        }

    def to_json(self, file: str = "-") -> str:
        return json.dumps(self.to_record(file), sort_keys=True)


@dataclass(frozen=True)
class Rule:
    id: str
    name: str
    category: RootCauseCategory
    title: str
    severity: str
    fixable: bool
    check: Callable[["LintContext", "Rule"], Iterable[Finding]] = field(repr=False, compare=False)
    ecosystem: Ecosystem = Ecosystem.none

    def finding(self, ins: Instruction, message: str, fix: Optional[FixAction] = None) -> Finding:
        return Finding(self.id, ins.line_span, message, self.category, self.severity, fix, self.ecosystem)


# Command views over shell chains

@dataclass(frozen=True)
class Command:
    """One simple command inside a RUN chain, with wrappers like sudo removed."""

    name: str
    args: Tuple[str, ...]
    tokens: Tuple[Token, ...]  # tokens for args, aligned
    segment: int

    def options(self) -> Set[str]:
        return {a.split("=", 1)[0] for a in self.args if a.startswith("-")}

    def has_flag(self, *flags: str) -> bool:
        return any(a == f or a.startswith(f + "=") for a in self.args for f in flags)

    def option_value(self, flag: str) -> Optional[str]:
        for i, a in enumerate(self.args):
            if a == flag and i + 1 < len(self.args):
                return self.args[i + 1]
            if a.startswith(flag + "="):
                return a.split("=", 1)[1]
        return None

    def positionals(self, takes_value: Iterable[str] = ()) -> List[Tuple[int, str]]:
        out = []
        skip = False
        with_value = set(takes_value)
        for i, a in enumerate(self.args):
            if skip:
                skip = False
                continue
            if _REDIRECT_RE.match(a):
                skip = _REDIRECT_RE.match(a).end() == len(a)
                continue
            if a.startswith("-"):
                if a in with_value:
                    skip = True
                continue
            out.append((i, a))
        return out

    def subcommand(self, takes_value: Iterable[str] = ()) -> Tuple[Optional[str], int]:
        pos = self.positionals(takes_value)
        if not pos:
            return None, -1
        return pos[0][1], pos[0][0]


_REDIRECT_RE = re.compile(r"^(\d*|&)(>>?|<)&?")
_WRAPPERS = {"sudo", "env", "nohup", "time", "exec", "command"}
_ASSIGN_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*=")
_PIP_RE = re.compile(r"^pip[0-9.]*$")
_PYTHON_RE = re.compile(r"^python[0-9.]*$")


def commands_of(shell: ShellCommand) -> List[Command]:
    out: List[Command] = []
    for seg_index, seg in enumerate(shell.segments):
        for stage in seg.pipeline():
            toks = list(stage)
            while toks and (toks[0].value in _WRAPPERS or _ASSIGN_RE.match(toks[0].value)
                            or (toks[0].value.startswith("-") and len(toks) > 1)):
                toks.pop(0)
            if not toks:
                continue
            name = posixpath.basename(toks[0].value)
            rest = toks[1:]
            if _PYTHON_RE.match(name):
                vals = [t.value for t in rest]
                if "-m" in vals and vals.index("-m") + 1 < len(vals) and _PIP_RE.match(vals[vals.index("-m") + 1]):
                    rest = rest[vals.index("-m") + 2:]
                    name = "pip"
            elif _PIP_RE.match(name):
                name = "pip"
            out.append(Command(name, tuple(t.value for t in rest), tuple(rest), seg_index))
    return out


_APT_VALUE_OPTS = ("-o", "-t", "-c", "--target-release", "--option", "--config-file")
_PIP_VALUE_OPTS = (
    "-r", "--requirement", "-c", "--constraint", "-e", "--editable", "-i", "--index-url",
    "--extra-index-url", "-f", "--find-links", "-t", "--target", "--prefix", "--root",
    "--cache-dir", "--trusted-host", "--platform", "--python-version", "--src",
    "--upgrade-strategy", "--progress-bar", "--implementation", "--abi", "--only-binary",
    "--no-binary", "--log", "--proxy", "--retries", "--timeout",
)
_NPM_VALUE_OPTS = ("--cache", "--prefix", "--registry", "--omit", "--include", "--tag", "-w", "--workspace")


def _is_apt(cmd: Command) -> bool:
    return cmd.name in ("apt-get", "apt")


def apt_sub(cmd: Command) -> Optional[str]:
    return cmd.subcommand(_APT_VALUE_OPTS)[0] if _is_apt(cmd) else None


def is_apt_install(cmd: Command) -> bool:
    return apt_sub(cmd) == "install"


def is_system_install(cmd: Command) -> bool:
    if is_apt_install(cmd):
        return True
    sub = cmd.subcommand()[0]
    if cmd.name == "apk":
        return sub == "add"
    if cmd.name in ("yum", "dnf", "microdnf", "zypper"):
        return sub in ("install", "in")
    return False


def is_pip_install(cmd: Command) -> bool:
    return cmd.name == "pip" and cmd.subcommand(_PIP_VALUE_OPTS)[0] == "install"


def is_npm_install(cmd: Command) -> bool:
    return cmd.name == "npm" and cmd.subcommand(_NPM_VALUE_OPTS)[0] in ("install", "i", "ci", "add")


def is_go_build(cmd: Command) -> bool:
    return cmd.name == "go" and cmd.subcommand()[0] == "build"


def is_blanket_upgrade(cmd: Command) -> bool:
    sub = cmd.subcommand(_APT_VALUE_OPTS)[0]
    if _is_apt(cmd):
        return sub in ("upgrade", "dist-upgrade", "full-upgrade")
    if cmd.name == "apk":
        return sub == "upgrade"
    if cmd.name in ("yum", "dnf", "microdnf"):
        return sub in ("upgrade", "update") and len(cmd.positionals()) == 1
    return False


def removed_paths(cmds: Sequence[Command]) -> List[str]:
    out = []
    for c in cmds:
        if c.name == "rm":
            out.extend(a for a in c.args if not a.startswith("-"))
    return out


def removes(cmds: Sequence[Command], prefix: str) -> bool:
    prefix = prefix.rstrip("/")
    return any(p == prefix or p.startswith(prefix + "/") or p.startswith(prefix + "*")
               for p in removed_paths(cmds))


# Lint context

@dataclass(frozen=True)
class RunView:
    index: int
    instruction: Instruction
    run: RunArgs
    commands: Tuple[Command, ...]
    stage_index: Optional[int]  # instruction index of the owning FROM
    stage_image: Optional[str]
    env_before: Mapping[str, Optional[str]]  # ARG/ENV names visible in this stage so far
    sde_declared: bool  # SOURCE_DATE_EPOCH declared earlier in the document

    @property
    def editable(self) -> bool:
        return not (self.run.exec_form or self.run.heredoc)


@dataclass
class LintContext:
    doc: DockerfileDoc
    pin_map: Mapping[str, str] = field(default_factory=dict)
    runs: List[RunView] = field(default_factory=list)

    def __post_init__(self) -> None:
        stage_index: Optional[int] = None
        stage_image: Optional[str] = None
        env: Dict[str, Optional[str]] = {}
        sde = False
        for i, ins in enumerate(self.doc.instructions):
            if ins.kind == "FROM":
                stage_index = i
                args = ins.parsed
                stage_image = args.image.repository if isinstance(args, FromArgs) and args.image else None
                env = {}
            elif ins.kind in ("ARG", "ENV") and isinstance(ins.parsed, KeyValueArgs):
                for k, v in ins.parsed.pairs:
                    env[k] = v
                    if k == "SOURCE_DATE_EPOCH":
                        sde = True
            elif ins.kind == "RUN" and isinstance(ins.parsed, RunArgs):
                run = ins.parsed
                if run.shell is None:
                    if run.error:
                        log.warning("line %d: RUN skipped by lint rules (%s)", ins.line_span[0], run.error)
                    continue
                self.runs.append(
                    RunView(i, ins, run, tuple(commands_of(run.shell)), stage_index, stage_image, dict(env), sde)
                )

    def stage_aliases_before(self, index: int) -> Set[str]:
        out = set()
        for i, ins in enumerate(self.doc.instructions[:index]):
            if ins.kind == "FROM" and isinstance(ins.parsed, FromArgs) and ins.parsed.alias:
                out.add(ins.parsed.alias.lower())
        return out


# Rule checks

def _fmt(items: Iterable[str]) -> str:
    return ", ".join(items)


def _append(view: RunView, command: str) -> Optional[FixAction]:
    if not view.editable:
        return None
    return FixAction("append-to-segment-chain", (command,), view.index)


def _add_flag(view: RunView, cmd: Command, anchor: Tuple[str, str], flag: str) -> Optional[FixAction]:
    """Flag fix for every matching command in the chain (segment left unset)."""
    if not view.editable:
        return None
    return FixAction("add-flag-to-command", (flag,), view.index, None, anchor)


def check_unpinned_base(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for i, ins in enumerate(ctx.doc.instructions):
        if ins.kind != "FROM" or not isinstance(ins.parsed, FromArgs):
            continue
        ref = ins.parsed.image
        if ref is None or ref.digest or "$" in ins.parsed.ref_text or ref.repository == "scratch":
            continue
        if ins.parsed.ref_text.lower() in ctx.stage_aliases_before(i):
            continue
        fix = None
        digest = ctx.pin_map.get(ref.pin_key)
        if digest:
            fix = FixAction("replace-image-ref", (f"{ins.parsed.ref_text}@{digest}",), i)
        yield rule.finding(ins, f"base image {ins.parsed.ref_text} is not pinned by digest", fix)


def _unpinned_packages(cmd: Command) -> List[str]:
    if is_pip_install(cmd):
        if cmd.has_flag("-r", "--requirement"):
            return []
        out = []
        for _, arg in cmd.positionals(_PIP_VALUE_OPTS)[1:]:
            if arg.startswith((".", "/", "~")) or "://" in arg or arg.endswith((".whl", ".tar.gz", ".zip")):
                continue
            if "==" not in arg and " @ " not in arg:
                out.append(arg)
        return out
    if is_npm_install(cmd):
        out = []
        for _, arg in cmd.positionals(_NPM_VALUE_OPTS)[1:]:
            if arg.startswith((".", "/", "~")) or "://" in arg or ":" in arg:
                continue
            name = arg[1:] if arg.startswith("@") else arg
            if "@" not in name or name.endswith("@"):
                out.append(arg)
        return out
    if is_apt_install(cmd):
        return [a for _, a in cmd.positionals(_APT_VALUE_OPTS)[1:] if "=" not in a and not a.endswith(".deb")]
    return []


def check_unpinned_packages(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        loose: List[str] = []
        for cmd in view.commands:
            loose.extend(p for p in _unpinned_packages(cmd) if p not in loose)
        if loose:
            yield rule.finding(view.instruction, f"package versions not pinned: {_fmt(loose)}")


def check_install_recommends(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        for cmd in view.commands:
            if not is_apt_install(cmd):
                continue
            if cmd.has_flag("--no-install-recommends") or any(
                "Install-Recommends=false" in a or "Install-Recommends=0" in a for a in cmd.args
            ):
                continue
            fix = _add_flag(view, cmd, (cmd.name, "install"), "--no-install-recommends")
            yield rule.finding(view.instruction, f"{cmd.name} install without --no-install-recommends", fix)
            break


def check_apt_lists(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        if any(is_apt_install(c) for c in view.commands) and not removes(view.commands, "/var/lib/apt/lists"):
            yield rule.finding(
                view.instruction,
                "apt package lists are not removed in the same RUN",
                _append(view, "rm -rf /var/lib/apt/lists/*"),
            )


def check_pip_cache(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        env = view.env_before.get("PIP_NO_CACHE_DIR")
        if env is not None and env.lower() not in ("", "0", "false", "no"):
            continue
        for cmd in view.commands:
            if is_pip_install(cmd) and not cmd.has_flag("--no-cache-dir"):
                fix = _add_flag(view, cmd, ("pip", "install"), "--no-cache-dir")
                yield rule.finding(view.instruction, "pip install without --no-cache-dir", fix)
                break


def _npm_cache_handled(cmds: Sequence[Command]) -> bool:
    for c in cmds:
        if c.name == "npm" and "cache" in c.args and "clean" in c.args:
            return True
    for c in cmds:
        if is_npm_install(c):
            cache_dir = c.option_value("--cache")
            if cache_dir and removes(cmds, cache_dir):
                return True
    return removes(cmds, "~/.npm") or removes(cmds, "/root/.npm")


def check_npm_cache(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        if any(is_npm_install(c) for c in view.commands) and not _npm_cache_handled(view.commands):
            yield rule.finding(
                view.instruction,
                "npm cache persists in the layer",
                _append(view, "npm cache clean --force"),
            )


def check_source_date_epoch(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    # fires once, at the first layer-producing step with no SOURCE_DATE_EPOCH in sight
    seen = False
    stage: Optional[Tuple[int, Instruction]] = None
    for i, ins in enumerate(ctx.doc.instructions):
        if ins.kind == "FROM":
            stage = (i, ins)
        elif ins.kind in ("ARG", "ENV") and isinstance(ins.parsed, KeyValueArgs):
            seen = seen or "SOURCE_DATE_EPOCH" in ins.parsed.names
        elif ins.kind in ("RUN", "COPY", "ADD") and not seen:
            anchor = stage[1] if stage else ins
            fix = None
            if stage is not None:
                fix = FixAction(
                    "insert-instructions-after",
                    ("ARG SOURCE_DATE_EPOCH", "ENV SOURCE_DATE_EPOCH=$SOURCE_DATE_EPOCH"),
                    stage[0],
                )
            yield rule.finding(anchor, "SOURCE_DATE_EPOCH is never declared (ARG/ENV)", fix)
            return


def check_machine_id(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        if not any(is_system_install(c) for c in view.commands):
            continue
        handled = removes(view.commands, "/etc/machine-id") or any(
            c.name == "truncate" and "/etc/machine-id" in c.args for c in view.commands
        )
        if not handled:
            yield rule.finding(
                view.instruction,
                "/etc/machine-id may be generated by package installs and baked into the layer",
                _append(view, "truncate -s 0 /etc/machine-id"),
            )


def check_docs(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        if not any(is_apt_install(c) for c in view.commands):
            continue
        missing = [p for p in ("/usr/share/man", "/usr/share/doc") if not removes(view.commands, p)]
        if missing:
            yield rule.finding(
                view.instruction,
                f"documentation retained: {_fmt(missing)} not removed",
                _append(view, "rm -rf " + " ".join(missing)),
            )


def check_logs(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        if any(is_system_install(c) for c in view.commands) and not removes(view.commands, "/var/log"):
            yield rule.finding(
                view.instruction,
                "package manager logs under /var/log are kept in the layer",
                _append(view, "rm -rf /var/log/*"),
            )


def _is_python_image(repository: Optional[str]) -> bool:
    if not repository:
        return False
    return posixpath.basename(repository).startswith("python")


def check_bytecode(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        if not _is_python_image(view.stage_image) or view.stage_index is None:
            continue
        pips = [c for c in view.commands if is_pip_install(c)]
        if not pips:
            continue
        if "PYTHONDONTWRITEBYTECODE" in view.env_before or view.sde_declared:
            continue
        if any(c.has_flag("--no-compile") for c in pips):
            continue
        if any("__pycache__" in a or a.endswith("*.pyc") for c in view.commands for a in c.args):
            continue
        fix = FixAction("insert-instructions-after", ("ENV PYTHONDONTWRITEBYTECODE=1",), view.stage_index)
        yield rule.finding(view.instruction, "pip install writes timestamped .pyc bytecode", fix)


def check_go_trimpath(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        for cmd in view.commands:
            if is_go_build(cmd) and not cmd.has_flag("-trimpath", "--trimpath"):
                yield rule.finding(view.instruction, "go build without -trimpath", _add_flag(view, cmd, ("go", "build"), "-trimpath"))
                break


def check_upgrade(ctx: LintContext, rule: Rule) -> Iterator[Finding]:
    for view in ctx.runs:
        for cmd in view.commands:
            if is_blanket_upgrade(cmd):
                yield rule.finding(view.instruction, f"blanket '{cmd.name} {cmd.subcommand(_APT_VALUE_OPTS)[0]}' floats package versions")
                break


_C = RootCauseCategory
_E = Ecosystem

_CATALOG: Tuple[Rule, ...] = (
    Rule("DR001", "unpinned-base-image", _C.PackageManagerState, "Base image not pinned by digest", "error", True, check_unpinned_base),
    Rule("DR002", "unpinned-package-version", _C.PackageManagerState, "Package installed without a version pin", "info", False, check_unpinned_packages),
    Rule("DR003", "missing-no-install-recommends", _C.PackageManagerState, "apt-get install without --no-install-recommends", "warning", True, check_install_recommends, _E.apt),
    Rule("DR004", "apt-cache-not-cleaned", _C.CachesDatabases, "apt lists not removed in the installing RUN", "error", True, check_apt_lists, _E.apt),
    Rule("DR005", "pip-cache-retained", _C.CachesDatabases, "pip install without --no-cache-dir", "error", True, check_pip_cache, _E.pip_python),
    Rule("DR006", "npm-cache-retained", _C.CachesDatabases, "npm cache left in the layer", "error", True, check_npm_cache, _E.npm_node),
    Rule("DR007", "missing-source-date-epoch", _C.TimestampsMetadata, "SOURCE_DATE_EPOCH not declared", "warning", True, check_source_date_epoch),
    Rule("DR008", "machine-id-baked", _C.RandomNondeterministic, "/etc/machine-id baked into the image", "warning", True, check_machine_id),
    Rule("DR009", "docs-manpages-retained", _C.CachesDatabases, "Man pages and docs not removed", "warning", True, check_docs, _E.apt),
    Rule("DR010", "logs-retained", _C.SystemLogs, "Package logs left under /var/log", "warning", True, check_logs, _E.apt),
    Rule("DR011", "python-bytecode-nondeterminism", _C.CompiledArtifacts, "Timestamped Python bytecode", "warning", True, check_bytecode, _E.pip_python),
    Rule("DR012", "go-build-untrimmed", _C.CompiledArtifacts, "go build without -trimpath", "warning", True, check_go_trimpath, _E.go),
    Rule("DR013", "apt-get-upgrade-used", _C.PackageManagerState, "Blanket package upgrade", "info", False, check_upgrade, _E.apt),
)


def builtin_catalog() -> List[Rule]:
    return list(_CATALOG)


def select_rules(catalog: Sequence[Rule], ids: Optional[Iterable[str]]) -> List[Rule]:
    if not ids:
        return list(catalog)
    wanted = {i.strip().upper() for i in ids if i.strip()}
    unknown = wanted - {r.id for r in catalog}
    if unknown:
        raise ValueError(f"unknown rule ids: {', '.join(sorted(unknown))}")
    return [r for r in catalog if r.id in wanted]


def lint(doc: DockerfileDoc, catalog: Optional[Sequence[Rule]] = None,
         pin_map: Optional[Mapping[str, str]] = None) -> List[Finding]:
    """Run ``catalog`` (all built-in rules by default) over ``doc``.

    ``pin_map`` maps ``repository:tag`` to a digest and only affects whether
    DR001 findings carry a fix.
    """
    if catalog is None:
        catalog = _CATALOG
    ctx = LintContext(doc, pin_map or {})
    findings: List[Finding] = []
    for rule in catalog:
        findings.extend(rule.check(ctx, rule))
    findings.sort(key=lambda f: (f.line_span[0], f.rule_id))
    return findings


def load_pin_map(path: Path) -> Dict[str, str]:
    return parse_pin_map(Path(path).read_text(encoding="utf-8"))


def parse_pin_map(text: str) -> Dict[str, str]:
    pins: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or not _DIGEST_RE.match(parts[1]):
            raise PinMapError(f"pin map line {lineno}: expected 'repository:tag sha256:<64 hex>'")
        ref = parts[0]
        if ref.rfind(":") <= ref.rfind("/"):
            ref += ":latest"
        pins[ref] = parts[1]
    return pins


# Fix application

@dataclass(frozen=True)
class FixResult:
    doc: DockerfileDoc
    applied: Tuple[Finding, ...]
    remainder: Tuple[Finding, ...]  # findings with no FixAction
    conflicts: Tuple[Tuple[str, str], ...] = ()  # rule ids that edited the same instruction

    @property
    def text(self) -> str:
        return self.doc.original_text


def _first_instruction(raw: str, escape: str = "\\") -> Instruction:
    for ins in parse_dockerfile(raw, escape).instructions:
        if ins.kind != "COMMENT":
            return ins
    raise ValueError("no instruction in fragment")


def _apply_add_flag(raw: str, action: FixAction, escape: str) -> str:
    ins = _first_instruction(raw, escape)
    run = ins.parsed
    if not isinstance(run, RunArgs) or run.shell is None:
        return raw
    flag = action.payload[0]
    name, sub = action.anchor
    positions = []
    for cmd in commands_of(run.shell):
        if action.segment is not None and cmd.segment != action.segment:
            continue
        if cmd.name != name or cmd.has_flag(flag):
            continue
        for tok in cmd.tokens:
            if tok.value == sub:
                positions.append(ins.raw_pos(run.command_offset + tok.end))
                break
    # insert right to left so earlier offsets stay valid
    for pos in sorted(positions, reverse=True):
        raw = raw[:pos] + " " + flag + raw[pos:]
    return raw


def _apply_append(raw: str, action: FixAction, newline: str, escape: str) -> str:
    ins = _first_instruction(raw, escape)
    run = ins.parsed
    if not isinstance(run, RunArgs) or run.shell is None:
        return raw
    command = action.payload[0]
    segs = run.shell.segments
    if any(" ".join(s.argv) == command for s in segs):
        return raw
    nonempty = [k for k, s in enumerate(segs) if s.tokens]
    if not nonempty:
        return raw
    last = segs[nonempty[-1]]
    if last.connector_after != "none":
        # chain ends in a dangling connector, e.g. "cmd ;"
        at = last.end + len(last.connector_raw)
        joiner = " "
    else:
        at = last.tokens[-1].end
        joiner = " && "
    pos = ins.raw_pos(run.command_offset + at)
    multiline = ins.line_span[1] > ins.line_span[0]
    if multiline and joiner == " && ":
        text = f" && {escape}{newline}    {command}"
    else:
        text = joiner + command
    return raw[:pos] + text + raw[pos:]


def _apply_replace_ref(raw: str, action: FixAction, escape: str) -> str:
    ins = _first_instruction(raw, escape)
    args = ins.parsed
    if not isinstance(args, FromArgs) or not args.ref_text:
        return raw
    if args.image is not None and args.image.digest:
        return raw
    start = ins.raw_pos(args.ref_offset)
    end = ins.raw_pos(args.ref_offset + len(args.ref_text))
    return raw[:start] + action.payload[0] + raw[end:]


def apply_fixes(doc: DockerfileDoc, findings: Iterable[Finding]) -> FixResult:
    """Apply the FixAction of every finding to ``doc``.

    Findings without a fix are handed back in ``remainder``. Several fixes on
    one instruction are applied in line/rule order, each re-anchoring on the
    text left by the previous one. Every fix checks whether its change is
    already present, which makes application idempotent.
    """
    instructions = doc.instructions
    texts = [ins.raw_text for ins in instructions]
    inserts: Dict[int, List[str]] = {}
    applied: List[Finding] = []
    remainder: List[Finding] = []
    touched: Dict[int, List[str]] = {}
    newline = doc.newline

    ordered = sorted(findings, key=lambda f: (f.fix.target if f.fix else -1, f.line_span[0], f.rule_id))
    for f in ordered:
        action = f.fix
        if action is None:
            remainder.append(f)
            continue
        if not 0 <= action.target < len(instructions):
            raise ValueError(f"{f.rule_id}: fix targets instruction {action.target}, outside the document")
        before = texts[action.target]
        if action.kind == "add-flag-to-command":
            texts[action.target] = _apply_add_flag(before, action, doc.escape)
        elif action.kind == "append-to-segment-chain":
            texts[action.target] = _apply_append(before, action, newline, doc.escape)
        elif action.kind == "replace-image-ref":
            texts[action.target] = _apply_replace_ref(before, action, doc.escape)
        elif action.kind == "insert-instructions-after":
            pending = inserts.setdefault(action.target, [])
            following = [ins.raw_text.rstrip("\r\n") for ins in instructions[action.target + 1:]
                         if ins.kind != "COMMENT"][: len(action.payload)]
            present = following[: len(action.payload)] == list(action.payload)
            for line in action.payload:
                if not present and line not in pending:
                    pending.append(line)
        touched.setdefault(action.target, []).append(f.rule_id)
        applied.append(f)

    conflicts = []
    for rule_ids in touched.values():
        for a, b in zip(rule_ids, rule_ids[1:]):
            conflicts.append((a, b))

    out: List[str] = []
    k = 0
    for el in doc.elements:
        if isinstance(el, Instruction):
            text = texts[k]
            extra = inserts.get(k)
            if extra:
                if not text.endswith("\n"):
                    text += newline
                text += "".join(line + newline for line in extra)
            out.append(text)
            k += 1
        else:
            out.append(el.raw_text)
    new_text = "".join(out)
    new_doc = doc if new_text == doc.original_text else parse_dockerfile(new_text)
    return FixResult(new_doc, tuple(applied), tuple(remainder), tuple(conflicts))


def fix_document(doc: DockerfileDoc, catalog: Optional[Sequence[Rule]] = None,
                 pin_map: Optional[Mapping[str, str]] = None) -> FixResult:
    return apply_fixes(doc, lint(doc, catalog, pin_map))
