"""Rebuild-and-classify state machine.

A repository is built twice from a clean state. Equal image digests mean
the Dockerfile is bitwise reproducible. Otherwise it is built twice more
with a pinned SOURCE_DATE_EPOCH and timestamp rewriting; equal digests then
mean the remaining drift came from the build infrastructure. Whatever still
differs is diffed file by file to tell metadata-only drift from real drift.
"""

from __future__ import annotations

import calendar
import enum
import json
import os
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path, PurePosixPath
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .differ import DiffReport, build_report
from .errors import BuilderContractViolation, MalformedTimestamp, NoCandidates
from .oci import Digest, load_image

DEFAULT_TIMEOUT = 1800
SKIP_DIRS = {".git", "node_modules", ".venv", "__pycache__"}


class Verdict(enum.Enum):
    NotBuildable = "NotBuildable"
    BitwiseReproducible = "BitwiseReproducible"
    InfraReproducible = "InfraReproducible"
    SemanticallyReproducible = "SemanticallyReproducible"
    NonReproducible = "NonReproducible"

    @property
    def strength(self) -> int:
        return _STRENGTH[self]

    @property
    def buildable(self) -> bool:
        return self is not Verdict.NotBuildable

    def __lt__(self, other: "Verdict") -> bool:
        if not isinstance(other, Verdict):
            return NotImplemented
        return self.strength < other.strength


_STRENGTH = {
    Verdict.NotBuildable: 0,
    Verdict.NonReproducible: 1,
    Verdict.SemanticallyReproducible: 2,
    Verdict.InfraReproducible: 3,
    Verdict.BitwiseReproducible: 4,
}


@dataclass(frozen=True)
class BuildSpec:
    context_dir: str
    dockerfile_path: str
    hardened: bool = False
    source_date_epoch: Optional[int] = None
    disable_cache: bool = True
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.hardened and self.source_date_epoch is None:
            raise ValueError("a hardened build needs source_date_epoch")
        if not self.disable_cache:
            raise ValueError("builds always run with the cache disabled")

    def to_dict(self) -> dict:
        return {
            "context_dir": self.context_dir,
            "dockerfile_path": self.dockerfile_path,
            "hardened": self.hardened,
            "source_date_epoch": self.source_date_epoch,
            "disable_cache": self.disable_cache,
            "timeout": self.timeout,
        }


@dataclass(frozen=True)
class BuildOutcome:
    status: str  # success | build-error | timeout
    image_digest: Optional[Digest] = None
    image_path: Optional[str] = None
    log_excerpt: str = ""
    pull_policy: Optional[str] = None

    def __post_init__(self) -> None:
        if self.status not in ("success", "build-error", "timeout"):
            raise ValueError(f"unknown build status {self.status!r}")
        if (self.status == "success") != (self.image_digest is not None):
            raise ValueError("image_digest must be present exactly when the build succeeded")

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "image_digest": None if self.image_digest is None else str(self.image_digest),
            "image_path": self.image_path,
            "log_excerpt": self.log_excerpt,
            "pull_policy": self.pull_policy,
        }


@dataclass
class ProtocolTrace:
    dockerfile: str
    candidates: List[str]
    epoch: int
    builds: List[Tuple[BuildSpec, BuildOutcome]] = field(default_factory=list)
    digest_pairs: List[Tuple[Digest, Digest]] = field(default_factory=list)
    diff_report: Optional[DiffReport] = None
    verdict: Verdict = Verdict.NotBuildable
    reason: str = ""

    @property
    def build_count(self) -> int:
        return len(self.builds)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "reason": self.reason,
            "selection": {"dockerfile": self.dockerfile, "candidates": list(self.candidates)},
            "epoch": self.epoch,
            "builds": [{"spec": s.to_dict(), "outcome": o.to_dict()} for s, o in self.builds],
            "digest_pairs": [[str(a), str(b)] for a, b in self.digest_pairs],
            "diff_report": None if self.diff_report is None else self.diff_report.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# Selection and epoch

def _priority(path: str) -> int:
    parts = PurePosixPath(path).parts
    if len(parts) == 1:
        return 0
    if parts[0] == "docker":
        return 1
    return 2


def select_dockerfile(candidates: Iterable[str]) -> str:
    """Root-level Dockerfile, then anything under docker/, then the rest;
    ties go to the lexicographically smallest path."""
    paths = [PurePosixPath(c.replace("\\", "/")).as_posix() for c in candidates]
    paths = [p for p in paths if "Dockerfile" in PurePosixPath(p).name]
    if not paths:
        raise NoCandidates("no Dockerfile candidates")
    return min(paths, key=lambda p: (_priority(p), p))


def discover_dockerfiles(context: Union[str, Path]) -> List[str]:
    """Repo-relative paths of every file whose name contains ``Dockerfile``."""
    root = Path(context)
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d not in SKIP_DIRS)
        for name in filenames:
            if "Dockerfile" in name:
                found.append((Path(dirpath) / name).relative_to(root).as_posix())
    return sorted(found)


_ZONE_RE = re.compile(r"([+-])(\d{2})(\d{2})$")


def derive_epoch(timestamp: str) -> int:
    """Seconds since the epoch for an ISO-8601 timestamp that carries a zone."""
    text = timestamp.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    text = _ZONE_RE.sub(r"\1\2:\3", text)
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise MalformedTimestamp(f"not an ISO-8601 timestamp: {timestamp!r}") from exc
    if dt.tzinfo is None or "T" not in text.upper():
        raise MalformedTimestamp(f"timestamp lacks a date, time or zone: {timestamp!r}")
    return calendar.timegm(dt.utctimetuple())


def git_commit_epoch(context: Union[str, Path]) -> Optional[int]:
    """Epoch of the latest commit in ``context``, or None outside a git checkout."""
    try:
        res = subprocess.run(
            ["git", "-C", str(context), "log", "-1", "--format=%cI"],
            capture_output=True, text=True, timeout=30,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if res.returncode != 0 or not res.stdout.strip():
        return None
    try:
        return derive_epoch(res.stdout.strip())
    except MalformedTimestamp:
        return None


# Builders

class Builder:
    """Adapter interface: build ``spec`` and export the image to ``output``."""

    def build(self, spec: BuildSpec, output: str) -> BuildOutcome:  # pragma: no cover - interface
        raise NotImplementedError


_DIGEST_LINE = re.compile(r"^digest:\s*(sha256:[0-9a-f]{64})\s*$")
_PULL_LINE = re.compile(r"^pull-policy:\s*(\S+)\s*$")


def _excerpt(text: str, lines: int = 20) -> str:
    return "\n".join(text.rstrip().splitlines()[-lines:])


@dataclass
class CommandBuilder(Builder):
    """Runs an external adapter: ``<cmd> <context> <dockerfile> <output>``.

    The adapter sees HARDENED=0|1 and, when hardened, SOURCE_DATE_EPOCH. On
    success it must print ``digest: sha256:<hex>`` as its last line.
    """

    command: Union[str, Sequence[str]]

    def argv(self) -> List[str]:
        return shlex.split(self.command) if isinstance(self.command, str) else list(self.command)

    def build(self, spec: BuildSpec, output: str) -> BuildOutcome:
        env = dict(os.environ)
        env["HARDENED"] = "1" if spec.hardened else "0"
        env["NO_CACHE"] = "1"
        env.pop("SOURCE_DATE_EPOCH", None)
        if spec.hardened:
            env["SOURCE_DATE_EPOCH"] = str(spec.source_date_epoch)
        cmd = self.argv() + [spec.context_dir, spec.dockerfile_path, output]
        try:
            res = subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=spec.timeout)
        except subprocess.TimeoutExpired as exc:
            out = exc.stdout.decode(errors="replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
            return BuildOutcome("timeout", log_excerpt=_excerpt(out + f"\ntimed out after {spec.timeout}s"))
        except OSError as exc:
            return BuildOutcome("build-error", log_excerpt=f"cannot run builder: {exc}")
        log = _excerpt((res.stdout or "") + (res.stderr or ""))
        if res.returncode != 0:
            return BuildOutcome("build-error", log_excerpt=log)
        lines = [ln for ln in (res.stdout or "").splitlines() if ln.strip()]
        m = _DIGEST_LINE.match(lines[-1].strip()) if lines else None
        if not m:
            raise BuilderContractViolation("builder exited 0 without a final 'digest: sha256:<hex>' line", log)
        if not os.path.exists(output):
            raise BuilderContractViolation(f"builder reported success but wrote nothing at {output}", log)
        pull = next((p.group(1) for p in map(_PULL_LINE.match, lines) if p), None)
        return BuildOutcome("success", Digest.parse(m.group(1)), output, log, pull)


# State machine

def run_protocol(
    builder: Builder,
    context: Union[str, Path],
    epoch: int,
    dockerfile: Optional[str] = None,
    workdir: Optional[Union[str, Path]] = None,
    timeout: float = DEFAULT_TIMEOUT,
    loader=load_image,
) -> ProtocolTrace:
    """Classify one repository checkout; builds run strictly one after another."""
    context = str(context)
    candidates = discover_dockerfiles(context) if dockerfile is None else [dockerfile]
    chosen = select_dockerfile(candidates)
    if workdir is None:
        with tempfile.TemporaryDirectory(prefix="dockrepro-") as tmp:
            return _run(builder, context, epoch, chosen, candidates, Path(tmp), timeout, loader)
    Path(workdir).mkdir(parents=True, exist_ok=True)
    return _run(builder, context, epoch, chosen, candidates, Path(workdir), timeout, loader)


def _pair(builder, trace, spec, workdir, label) -> List[BuildOutcome]:
    outcomes = []
    for i in (1, 2):
        outcome = builder.build(spec, str(workdir / f"{label}-{i}"))
        trace.builds.append((spec, outcome))
        outcomes.append(outcome)
    return outcomes


def _run(builder, context, epoch, chosen, candidates, workdir, timeout, loader) -> ProtocolTrace:
    trace = ProtocolTrace(chosen, list(candidates), epoch)
    dockerfile = os.path.join(context, chosen)

    clean = BuildSpec(context, dockerfile, hardened=False, timeout=timeout)
    c1, c2 = _pair(builder, trace, clean, workdir, "clean")
    if not (c1.ok and c2.ok):
        failed = c1 if not c1.ok else c2
        trace.verdict = Verdict.NotBuildable
        trace.reason = f"clean build {'1' if failed is c1 else '2'}: {failed.status}"
        return trace
    trace.digest_pairs.append((c1.image_digest, c2.image_digest))
    if c1.image_digest == c2.image_digest:
        trace.verdict = Verdict.BitwiseReproducible
        trace.reason = "clean builds produced identical digests"
        return trace

    hardened = BuildSpec(context, dockerfile, hardened=True, source_date_epoch=epoch, timeout=timeout)
    h1, h2 = _pair(builder, trace, hardened, workdir, "hardened")
    if h1.ok and h2.ok:
        trace.digest_pairs.append((h1.image_digest, h2.image_digest))
        if h1.image_digest == h2.image_digest:
            trace.verdict = Verdict.InfraReproducible
            trace.reason = "hardened builds produced identical digests"
            return trace
        left, right = h1, h2
        trace.reason = "hardened builds differ"
    else:
        # hardening broke the build; fall back to comparing the clean images
        left, right = c1, c2
        trace.reason = "hardened build failed; compared clean builds"

    report = build_report(loader(left.image_path), loader(right.image_path))
    trace.diff_report = report
    trace.verdict = Verdict.SemanticallyReproducible if report.semantic_equal else Verdict.NonReproducible
    trace.reason += "; " + ("only metadata differs" if report.semantic_equal else "file contents differ")
    return trace


# Aggregation

@dataclass(frozen=True)
class VerdictCounts:
    counts: Dict[Verdict, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def not_buildable(self) -> int:
        return self.counts[Verdict.NotBuildable]

    @property
    def buildable(self) -> int:
        return self.total - self.not_buildable

    def __getitem__(self, verdict: Verdict) -> int:
        return self.counts[verdict]

    def to_dict(self) -> dict:
        out = {v.value: n for v, n in self.counts.items()}
        out.update(total=self.total, buildable=self.buildable)
        return out


def aggregate_verdicts(traces: Iterable[Union[ProtocolTrace, Verdict]]) -> VerdictCounts:
    counts = {v: 0 for v in Verdict}
    for t in traces:
        counts[t.verdict if isinstance(t, ProtocolTrace) else Verdict(t)] += 1
    return VerdictCounts(counts)


__all__ = [
    "Verdict", "BuildSpec", "BuildOutcome", "ProtocolTrace", "Builder", "CommandBuilder",
    "select_dockerfile", "discover_dockerfiles", "derive_epoch", "git_commit_epoch",
    "run_protocol", "aggregate_verdicts", "VerdictCounts", "DEFAULT_TIMEOUT",
]
