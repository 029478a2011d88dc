"""Exception hierarchy shared by every dockrepro module."""

from __future__ import annotations

from typing import Optional


class DockreproError(Exception):
    """Base class for all errors raised by this package."""


# Dockerfile parsing

class ParseError(DockreproError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(f"{where}{message}")


class DanglingContinuation(ParseError):
    pass


class EmptyFile(ParseError):
    pass


class UnterminatedQuote(ParseError):
    pass


class MalformedDigest(ParseError):
    pass


# Fixing

class UnfixableFinding(DockreproError):
    pass


class ConflictingFixes(DockreproError):
    pass


class PinMapError(DockreproError):
    pass


# Image loading

class ImageError(DockreproError):
    pass


class MissingBlob(ImageError):
    pass


class DigestMismatch(ImageError):
    pass


class UnsupportedMediaType(ImageError):
    pass


class CorruptArchive(ImageError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class DecompressFailure(ImageError):
    pass


# Protocol

class NoCandidates(DockreproError):
    pass


class MalformedTimestamp(DockreproError):
    pass


class BuilderContractViolation(DockreproError):
    def __init__(self, message: str, log_excerpt: str = ""):
        self.log_excerpt = log_excerpt
        super().__init__(message)


class MalformedRecord(DockreproError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")
