"""Quote-aware splitting of shell-form RUN payloads into command chains.

This is deliberately not a shell grammar. It knows enough to split a payload
on ``&&``, ``||`` and ``;`` outside of quotes and command substitutions, and
to tokenize each piece on unquoted whitespace, which is all the lint rules
need.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from .errors import UnterminatedQuote

CONNECTORS = {"&&": "and", "||": "or", ";": "seq"}


@dataclass(frozen=True)
class Token:
    value: str  # quotes and escapes removed
    raw: str
    start: int  # offsets into the payload
    end: int


@dataclass(frozen=True)
class SimpleCommand:
    tokens: Tuple[Token, ...]
    connector_after: str  # and | or | seq | none
    raw: str
    connector_raw: str
    start: int
    end: int

    @property
    def argv(self) -> Tuple[str, ...]:
        return tuple(t.value for t in self.tokens)

    def pipeline(self) -> List[Tuple[Token, ...]]:
        """Tokens grouped by unquoted ``|``."""
        stages: List[List[Token]] = [[]]
        for tok in self.tokens:
            if tok.raw == "|":
                stages.append([])
            else:
                stages[-1].append(tok)
        return [tuple(s) for s in stages if s]


@dataclass(frozen=True)
class ShellCommand:
    segments: Tuple[SimpleCommand, ...]
    payload: str
    exec_form: bool = False
    comment_start: Optional[int] = None

    def render(self) -> str:
        return "".join(s.raw + s.connector_raw for s in self.segments)

    def __iter__(self) -> Iterator[SimpleCommand]:
        return iter(self.segments)


def _exec_form(payload: str) -> Optional[ShellCommand]:
    stripped = payload.strip()
    if not stripped.startswith("["):
        return None
    try:
        argv = json.loads(stripped)
    except ValueError:
        return None
    if not isinstance(argv, list) or not all(isinstance(a, str) for a in argv):
        return None
    start = payload.index("[")
    tokens = tuple(Token(a, a, start, start + len(stripped)) for a in argv)
    seg = SimpleCommand(tokens, "none", payload, "", 0, len(payload))
    return ShellCommand((seg,), payload, exec_form=True)


@dataclass
class _Scanner:
    payload: str
    segments: List[SimpleCommand] = field(default_factory=list)
    tokens: List[Token] = field(default_factory=list)
    seg_start: int = 0
    tok_start: Optional[int] = None
    tok_chars: List[str] = field(default_factory=list)

    def add(self, pos: int, text: str) -> None:
        if self.tok_start is None:
            self.tok_start = pos
        self.tok_chars.append(text)

    def close_token(self, pos: int) -> None:
        if self.tok_start is not None:
            raw = self.payload[self.tok_start:pos]
            self.tokens.append(Token("".join(self.tok_chars), raw, self.tok_start, pos))
        self.tok_start = None
        self.tok_chars = []

    def close_segment(self, pos: int, connector: str, connector_end: int) -> None:
        self.close_token(pos)
        self.segments.append(
            SimpleCommand(
                tuple(self.tokens),
                CONNECTORS.get(connector, "none"),
                self.payload[self.seg_start:pos],
                self.payload[pos:connector_end],
                self.seg_start,
                pos,
            )
        )
        self.tokens = []
        self.seg_start = connector_end


def segment_shell(payload: str) -> ShellCommand:
    """Split a RUN payload into its ``&&`` / ``||`` / ``;`` chain.

    Exec-form (JSON array) payloads come back as one opaque segment. Raises
    UnterminatedQuote with a 1-based column when a quote never closes.
    """
    exec_cmd = _exec_form(payload)
    if exec_cmd is not None:
        return exec_cmd

    sc = _Scanner(payload)
    n = len(payload)
    i = 0
    comment_start = None
    while i < n:
        ch = payload[i]
        two = payload[i:i + 2]
        if two in ("&&", "||"):
            sc.close_segment(i, two, i + 2)
            i += 2
        elif ch == ";":
            sc.close_segment(i, ";", i + 1)
            i += 1
        elif ch == "|":
            sc.close_token(i)
            sc.tokens.append(Token("|", "|", i, i + 1))
            i += 1
        elif ch in " \t\r\n":
            sc.close_token(i)
            i += 1
        elif ch == "#" and sc.tok_start is None:
            comment_start = i
            break
        elif ch == "\\":
            if i + 1 < n:
                sc.add(i, payload[i + 1])
                i += 2
            else:
                sc.add(i, ch)
                i += 1
        elif ch in "'\"":
            i = _read_quoted(sc, i)
        elif two == "$(" or ch == "`":
            i = _read_substitution(sc, i)
        else:
            sc.add(i, ch)
            i += 1

    end = comment_start if comment_start is not None else n
    sc.close_token(end)
    sc.segments.append(
        SimpleCommand(tuple(sc.tokens), "none", payload[sc.seg_start:], "", sc.seg_start, n)
    )
    return ShellCommand(tuple(sc.segments), payload, comment_start=comment_start)


def _read_quoted(sc: _Scanner, i: int) -> int:
    payload = sc.payload
    quote = payload[i]
    start = i
    if sc.tok_start is None:
        sc.tok_start = i
    i += 1
    while i < len(payload):
        ch = payload[i]
        if ch == quote:
            return i + 1
        if quote == '"' and ch == "\\" and i + 1 < len(payload) and payload[i + 1] in '"\\$`':
            sc.tok_chars.append(payload[i + 1])
            i += 2
            continue
        sc.tok_chars.append(ch)
        i += 1
    raise UnterminatedQuote(f"unterminated {quote} quote", column=start + 1)


def _read_substitution(sc: _Scanner, i: int) -> int:
    """Consume ``$( ... )`` or a backtick span verbatim into the current token."""
    payload = sc.payload
    start = i
    if payload[i] == "`":
        close = payload.find("`", i + 1)
        if close < 0:
            raise UnterminatedQuote("unterminated ` quote", column=start + 1)
        sc.add(i, payload[i:close + 1])
        return close + 1
    depth = 0
    quote = None
    j = i
    while j < len(payload):
        ch = payload[j]
        if quote:
            if ch == "\\" and quote == '"':
                j += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif payload.startswith("$(", j):
            depth += 1
            j += 2
            continue
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                sc.add(i, payload[i:j + 1])
                return j + 1
        j += 1
    raise UnterminatedQuote("unterminated $( substitution", column=start + 1)
