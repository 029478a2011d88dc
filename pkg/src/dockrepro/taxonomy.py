"""Root-cause categories for residual differences between two builds."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class RootCauseCategory(enum.Enum):
    TimestampsMetadata = "Timestamps & metadata"
    FormattingFileOrdering = "Formatting / file ordering"
    SystemLogs = "System logs"
    CachesDatabases = "Caches & databases"
    CompiledArtifacts = "Compiled artifacts"
    ApplicationSpecific = "Application-specific files"
    RandomNondeterministic = "Random / non-deterministic data"
    PackageManagerState = "Package-manager state"

    @property
    def label(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "RootCauseCategory":
        """Accept either the identifier (``SystemLogs``) or the table label."""
        for member in cls:
            if text == member.name or text == member.value:
                return member
        raise ValueError(f"unknown root-cause category: {text!r}")


class Ecosystem(enum.Enum):
    apt = "apt"
    pip_python = "pip-python"
    npm_node = "npm-node"
    maven_java = "maven-java"
    go = "go"
    none = "none"


# Table order; also the row order of rendered summaries.
CATEGORY_ORDER = tuple(RootCauseCategory)


@dataclass(frozen=True)
class Classification:
    category: RootCauseCategory
    ecosystem: Ecosystem = Ecosystem.none
