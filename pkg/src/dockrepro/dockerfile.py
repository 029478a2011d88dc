"""Lossless Dockerfile parser.

``parse_dockerfile`` keeps every byte of the source on some element of the
document (instructions, comment lines, blank lines), so ``render_dockerfile``
is an exact inverse for anything that parses. Continuation lines are folded
into a *logical* line for rule matching; each instruction keeps a map from
logical offsets back to raw offsets so edits can be spliced into the original
text without disturbing its formatting.
"""

from __future__ import annotations

import bisect
import re
import shlex
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

from .errors import (
    DanglingContinuation,
    EmptyFile,
    MalformedDigest,
    UnterminatedQuote,
)
from .shell import ShellCommand, segment_shell

KINDS = frozenset(
    {
        "FROM", "RUN", "COPY", "ADD", "ENV", "ARG", "WORKDIR", "CMD", "ENTRYPOINT",
        "EXPOSE", "LABEL", "USER", "VOLUME", "SHELL", "HEALTHCHECK", "STOPSIGNAL",
        "ONBUILD", "MAINTAINER", "COMMENT", "UNKNOWN",
    }
)

_DIGEST_RE = re.compile(r"^sha256:[0-9a-f]{64}$")
_DIRECTIVE_RE = re.compile(r"^#\s*([a-zA-Z][a-zA-Z0-9]*)\s*=\s*(.*?)\s*$")
_HEREDOC_RE = re.compile(r"<<(-?)\s*([\"']?)([A-Za-z_][A-Za-z0-9_]*)\2")
_WORD_RE = re.compile(r"\S+")


# Image references

@dataclass(frozen=True)
class ImageRef:
    repository: str
    tag: Optional[str] = None
    digest: Optional[str] = None
    tag_defaulted: bool = False

    @property
    def identity(self) -> str:
        """Digest when present (it wins over the tag), else ``repo:tag``."""
        if self.digest:
            return f"{self.repository}@{self.digest}"
        return f"{self.repository}:{self.tag}"

    @property
    def pin_key(self) -> str:
        return f"{self.repository}:{self.tag or 'latest'}"

    def __str__(self) -> str:
        text = self.repository
        if self.tag and not self.tag_defaulted:
            text += f":{self.tag}"
        if self.digest:
            text += f"@{self.digest}"
        return text


def parse_image_ref(ref: str) -> ImageRef:
    if not ref or any(c.isspace() for c in ref):
        raise ValueError(f"image reference must be non-empty without whitespace: {ref!r}")
    name, digest = ref, None
    if "@" in ref:
        name, digest = ref.split("@", 1)
        if not _DIGEST_RE.match(digest):
            raise MalformedDigest(f"digest must be 'sha256:' followed by 64 hex chars, got {digest!r}")
    tag = None
    slash = name.rfind("/")
    colon = name.rfind(":")
    if colon > slash:
        name, tag = name[:colon], name[colon + 1:]
    if tag is None and digest is None:
        return ImageRef(name, "latest", None, tag_defaulted=True)
    return ImageRef(name, tag, digest)


# Kind-specific payloads

@dataclass(frozen=True)
class FromArgs:
    image: Optional[ImageRef]
    ref_text: str
    ref_offset: int  # logical offset of ref_text within the instruction
    alias: Optional[str] = None
    flags: Tuple[str, ...] = ()
    error: Optional[str] = None


@dataclass(frozen=True)
class RunArgs:
    command: str
    command_offset: int
    flags: Tuple[str, ...] = ()
    exec_form: bool = False
    heredoc: bool = False
    shell: Optional[ShellCommand] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class KeyValueArgs:
    """ARG / ENV / LABEL payloads as ordered (key, value) pairs."""

    pairs: Tuple[Tuple[str, Optional[str]], ...]

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(k for k, _ in self.pairs)

    @property
    def name(self) -> Optional[str]:
        return self.pairs[0][0] if self.pairs else None

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.pairs:
            if k == key:
                return v
        return default


Payload = Union[FromArgs, RunArgs, KeyValueArgs, None]


# Document model

@dataclass(frozen=True)
class Instruction:
    kind: str
    raw_text: str
    line_span: Tuple[int, int]
    keyword: str = ""
    logical: str = ""
    value_offset: int = 0
    parsed: Payload = None
    # (logical_start, raw_start, length) runs; used to splice edits into raw_text
    pieces: Tuple[Tuple[int, int, int], ...] = field(default=(), repr=False, compare=False)

    @property
    def value(self) -> str:
        return self.logical[self.value_offset:]

    def raw_pos(self, logical_pos: int) -> int:
        """Map an offset in ``logical`` to an offset in ``raw_text``."""
        if not self.pieces:
            return logical_pos
        starts = [p[0] for p in self.pieces]
        k = bisect.bisect_right(starts, logical_pos) - 1
        # a position on a piece boundary belongs to the earlier piece's end
        while k > 0 and logical_pos == self.pieces[k][0] and self.pieces[k - 1][2] + self.pieces[k - 1][0] == logical_pos:
            k -= 1
        lstart, rstart, length = self.pieces[max(k, 0)]
        return rstart + min(logical_pos - lstart, length)


@dataclass(frozen=True)
class BlankLine:
    raw_text: str
    line: int


Element = Union[Instruction, BlankLine]


@dataclass(frozen=True)
class DockerfileDoc:
    elements: Tuple[Element, ...]
    original_text: str
    escape: str = "\\"

    @property
    def instructions(self) -> Tuple[Instruction, ...]:
        return tuple(e for e in self.elements if isinstance(e, Instruction))

    @property
    def trailing_comments(self) -> List[str]:
        """Raw comment lines after the last non-comment instruction."""
        out: List[str] = []
        for ins in reversed(self.instructions):
            if ins.kind != "COMMENT":
                break
            out.append(ins.raw_text)
        return out[::-1]

    @property
    def newline(self) -> str:
        m = re.search(r"\r?\n", self.original_text)
        return m.group(0) if m else "\n"

    def stages(self) -> List[Tuple[int, Instruction]]:
        """(instruction index, FROM instruction) per build stage."""
        return [(i, ins) for i, ins in enumerate(self.instructions) if ins.kind == "FROM"]


def render_dockerfile(doc: DockerfileDoc) -> str:
    return "".join(e.raw_text for e in doc.elements)


def _split_lines(text: str) -> List[str]:
    parts = text.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


def _body(line: str) -> str:
    if line.endswith("\r\n"):
        return line[:-2]
    if line.endswith("\n"):
        return line[:-1]
    return line


def _is_comment(body: str) -> bool:
    return body.lstrip(" \t﻿").startswith("#")


def _continues(body: str, escape: str) -> Tuple[bool, int]:
    """Whether ``body`` ends with the escape char; returns the cut position."""
    stripped = body.rstrip(" \t")
    if stripped.endswith(escape):
        return True, len(stripped) - 1
    return False, len(body)


def parse_dockerfile(text: str, escape: str = "\\") -> DockerfileDoc:
    """Parse Dockerfile source. ``escape`` is the initial line-continuation
    character; an ``# escape=`` parser directive overrides it."""
    lines = _split_lines(text)
    elements: List[Element] = []
    in_directives = True
    i = 0
    n = len(lines)

    while i < n:
        line = lines[i]
        body = _body(line)
        lineno = i + 1
        if not body.strip(" \t\r﻿"):
            in_directives = False
            elements.append(BlankLine(line, lineno))
            i += 1
            continue
        if _is_comment(body):
            if in_directives:
                m = _DIRECTIVE_RE.match(body.lstrip(" \t﻿"))
                if m and m.group(1).lower() == "escape" and m.group(2) in ("\\", "`"):
                    escape = m.group(2)
                elif not m:
                    in_directives = False
            elements.append(Instruction("COMMENT", line, (lineno, lineno), logical=body))
            i += 1
            continue
        in_directives = False
        ins, i = _read_instruction(lines, i, escape)
        elements.append(ins)

    doc = DockerfileDoc(tuple(elements), text, escape)
    if not any(ins.kind != "COMMENT" for ins in doc.instructions):
        raise EmptyFile("no instructions found", line=max(n, 1))
    return doc


def _read_instruction(lines: Sequence[str], i: int, escape: str) -> Tuple[Instruction, int]:
    start = i
    raw_offset = 0
    pieces: List[Tuple[int, int, int]] = []
    logical_parts: List[str] = []
    logical_len = 0

    def take(body: str, cut: int, at_raw: int) -> None:
        nonlocal logical_len
        chunk = body[:cut]
        pieces.append((logical_len, at_raw, len(chunk)))
        logical_parts.append(chunk)
        logical_len += len(chunk)

    body = _body(lines[i])
    cont, cut = _continues(body, escape)
    take(body, cut, 0)
    raw_offset += len(lines[i])
    i += 1
    while cont:
        if i >= len(lines):
            raise DanglingContinuation("file ends inside a line continuation", line=start + 1)
        body = _body(lines[i])
        if not body.strip(" \t\r") or _is_comment(body):
            raw_offset += len(lines[i])
            i += 1
            continue
        cont, cut = _continues(body, escape)
        take(body, cut, raw_offset)
        raw_offset += len(lines[i])
        i += 1

    logical = "".join(logical_parts)
    lead = len(logical) - len(logical.lstrip(" \t﻿"))
    m = _WORD_RE.match(logical, lead)
    keyword = m.group(0) if m else ""
    kind = keyword.upper() if keyword.upper() in KINDS - {"COMMENT", "UNKNOWN"} else "UNKNOWN"
    value_offset = m.end() if m else len(logical)
    while value_offset < len(logical) and logical[value_offset] in " \t":
        value_offset += 1

    heredoc = False
    if kind in ("RUN", "COPY", "ADD"):
        for hd in _HEREDOC_RE.finditer(logical, value_offset):
            heredoc = True
            strip_tabs, word = hd.group(1) == "-", hd.group(3)
            while True:
                if i >= len(lines):
                    raise DanglingContinuation(f"heredoc '{word}' is never terminated", line=start + 1)
                hbody = _body(lines[i])
                i += 1
                if (hbody.lstrip("\t") if strip_tabs else hbody) == word:
                    break

    raw_text = "".join(lines[start:i])
    parsed = _parse_payload(kind, logical, value_offset, heredoc)
    ins = Instruction(
        kind=kind,
        raw_text=raw_text,
        line_span=(start + 1, i),
        keyword=keyword,
        logical=logical,
        value_offset=value_offset,
        parsed=parsed,
        pieces=tuple(pieces),
    )
    return ins, i


def _leading_flags(logical: str, offset: int) -> Tuple[Tuple[str, ...], int]:
    flags = []
    pos = offset
    for m in _WORD_RE.finditer(logical, offset):
        if not m.group(0).startswith("--"):
            return tuple(flags), m.start()
        flags.append(m.group(0))
        pos = m.end()
    return tuple(flags), len(logical) if flags else pos


def _parse_payload(kind: str, logical: str, offset: int, heredoc: bool) -> Payload:
    if kind == "FROM":
        flags, pos = _leading_flags(logical, offset)
        words = [(m.group(0), m.start()) for m in _WORD_RE.finditer(logical, pos)]
        if not words:
            return FromArgs(None, "", pos, flags=flags, error="FROM without an image")
        ref_text, ref_offset = words[0]
        alias = words[2][0] if len(words) >= 3 and words[1][0].upper() == "AS" else None
        try:
            image: Optional[ImageRef] = parse_image_ref(ref_text)
            error = None
        except (MalformedDigest, ValueError) as exc:
            image, error = None, str(exc)
        return FromArgs(image, ref_text, ref_offset, alias, flags, error)

    if kind == "RUN":
        flags, pos = _leading_flags(logical, offset)
        command = logical[pos:]
        if heredoc:
            return RunArgs(command, pos, flags, heredoc=True)
        try:
            shell = segment_shell(command)
        except UnterminatedQuote as exc:
            return RunArgs(command, pos, flags, error=str(exc))
        return RunArgs(command, pos, flags, exec_form=shell.exec_form, shell=shell)

    if kind in ("ARG", "ENV", "LABEL"):
        return KeyValueArgs(tuple(_key_values(kind, logical[offset:])))

    return None


def _key_values(kind: str, value: str) -> List[Tuple[str, Optional[str]]]:
    try:
        words = shlex.split(value, posix=True)
    except ValueError:
        words = value.split()
    if not words:
        return []
    if kind == "ENV" and "=" not in words[0]:
        # legacy form: ENV KEY value with spaces
        key, _, rest = value.strip().partition(" ")
        return [(key, rest.strip())]
    pairs: List[Tuple[str, Optional[str]]] = []
    for w in words:
        if "=" in w:
            k, v = w.split("=", 1)
            pairs.append((k, v))
        else:
            pairs.append((w, None))
    return pairs
