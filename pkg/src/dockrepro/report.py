"""Corpus-level summaries: build outcomes and root-cause prevalence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from math import floor
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Union

from .errors import MalformedRecord
from .protocol import ProtocolTrace, Verdict
from .taxonomy import CATEGORY_ORDER, RootCauseCategory

C = RootCauseCategory
METADATA_ONLY_CATEGORIES = frozenset({C.TimestampsMetadata, C.FormattingFileOrdering})


def percent(count: int, denominator: int, exact: bool = False) -> str:
    """``count/denominator`` as a percentage rounded half-up to one decimal.

    By default the rounding applies to the double-precision quotient
    ``count * 100 / denominator``, the way spreadsheet and plotting tools
    compute it; 1123/2000 is then 56.1 rather than 56.2 because 56.15 is
    stored just below the tie. ``exact=True`` rounds the exact rational.
    """
    if denominator <= 0:
        return "n/a"
    if exact:
        tenths = floor(Fraction(count * 1000, denominator) + Fraction(1, 2))
        return f"{tenths // 10}.{tenths % 10}"
    value = Decimal(count * 100 / denominator)
    return str(value.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class CorpusRecord:
    repo_id: str
    verdict: Verdict
    categories: FrozenSet[RootCauseCategory] = frozenset()

    def __post_init__(self) -> None:
        cats = frozenset(self.categories)
        object.__setattr__(self, "categories", cats)
        if not cats or self.verdict is Verdict.NonReproducible:
            return
        if self.verdict is Verdict.SemanticallyReproducible and cats <= METADATA_ONLY_CATEGORIES:
            return
        raise ValueError(f"{self.repo_id}: {self.verdict.value} records cannot carry categories "
                         + ", ".join(sorted(c.name for c in cats)))

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusRecord":
        return cls(
            str(data["repo_id"]),
            Verdict(data["verdict"]),
            frozenset(RootCauseCategory.parse(c) for c in data.get("categories") or []),
        )

    @classmethod
    def from_trace(cls, repo_id: str, trace: ProtocolTrace) -> "CorpusRecord":
        cats: FrozenSet[RootCauseCategory] = frozenset()
        if trace.diff_report is not None:
            cats = frozenset(c for c, n in trace.diff_report.category_histogram.items() if n)
        return cls(repo_id, trace.verdict, cats)

    def to_dict(self) -> dict:
        return {
            "repo_id": self.repo_id,
            "verdict": self.verdict.value,
            "categories": [c.name for c in CATEGORY_ORDER if c in self.categories],
        }


@dataclass(frozen=True)
class CategoryRow:
    count: int
    percent: str  # of classified reports
    percent_of_non_reproducible: str


_OUTCOMES = (
    ("total", "Total sampled repos"),
    ("buildable", "Buildable (any Dockerfile)"),
    ("not_buildable", "Not buildable"),
    ("bitwise", "As-is bitwise reproducible"),
    ("infra_fixed", "Fixed by infra changes"),
    ("semantic", "Semantically reproducible"),
    ("non_reproducible", "Non-reproducible"),
)

_VERDICT_FIELD = {
    Verdict.NotBuildable: "not_buildable",
    Verdict.BitwiseReproducible: "bitwise",
    Verdict.InfraReproducible: "infra_fixed",
    Verdict.SemanticallyReproducible: "semantic",
    Verdict.NonReproducible: "non_reproducible",
}


@dataclass(frozen=True)
class CorpusSummary:
    not_buildable: int = 0
    bitwise: int = 0
    infra_fixed: int = 0
    semantic: int = 0
    non_reproducible: int = 0
    category_counts: Dict[RootCauseCategory, int] = field(default_factory=dict)
    classified_total: int = 0

    @property
    def buildable(self) -> int:
        return self.bitwise + self.infra_fixed + self.semantic + self.non_reproducible

    @property
    def total(self) -> int:
        return self.buildable + self.not_buildable

    def count(self, name: str) -> int:
        return getattr(self, name)

    def outcome_percent(self, name: str) -> str:
        """Top rows are relative to all repos, verdict rows to buildable ones."""
        if name in ("total", "buildable", "not_buildable"):
            return percent(self.count(name), self.total)
        return percent(self.count(name), self.buildable)

    @property
    def category_table(self) -> Dict[RootCauseCategory, CategoryRow]:
        return {
            c: CategoryRow(
                self.category_counts.get(c, 0),
                percent(self.category_counts.get(c, 0), self.classified_total),
                percent(self.category_counts.get(c, 0), self.non_reproducible),
            )
            for c in CATEGORY_ORDER
        }

    def __add__(self, other: "CorpusSummary") -> "CorpusSummary":
        return CorpusSummary(
            self.not_buildable + other.not_buildable,
            self.bitwise + other.bitwise,
            self.infra_fixed + other.infra_fixed,
            self.semantic + other.semantic,
            self.non_reproducible + other.non_reproducible,
            {c: self.category_counts.get(c, 0) + other.category_counts.get(c, 0) for c in CATEGORY_ORDER},
            self.classified_total + other.classified_total,
        )

    def to_dict(self) -> dict:
        return {
            "outcomes": {
                name: {"count": self.count(name), "percent": self.outcome_percent(name)}
                for name, _ in _OUTCOMES
            },
            "categories": {
                c.name: {
                    "label": c.label,
                    "count": row.count,
                    "percent": row.percent,
                    "percent_of_non_reproducible": row.percent_of_non_reproducible,
                }
                for c, row in self.category_table.items()
            },
            "denominators": {
                "outcomes_top": self.total,
                "outcomes_bottom": self.buildable,
                "classified_total": self.classified_total,
                "non_reproducible": self.non_reproducible,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSummary":
        out = data["outcomes"]
        return cls(
            out["not_buildable"]["count"],
            out["bitwise"]["count"],
            out["infra_fixed"]["count"],
            out["semantic"]["count"],
            out["non_reproducible"]["count"],
            {RootCauseCategory[name]: row["count"] for name, row in data["categories"].items()},
            data["denominators"]["classified_total"],
        )


def aggregate(records: Iterable[CorpusRecord], classified_total: Optional[int] = None) -> CorpusSummary:
    """Fold records into a summary.

    A category counts once per record that shows it. ``classified_total``
    defaults to the number of records with any category; pass it explicitly
    when the classified-report count comes from elsewhere.
    """
    verdicts = {name: 0 for name in _VERDICT_FIELD.values()}
    cats = {c: 0 for c in CATEGORY_ORDER}
    classified = 0
    for r in records:
        verdicts[_VERDICT_FIELD[r.verdict]] += 1
        for c in r.categories:
            cats[c] += 1
        if r.categories:
            classified += 1
    return CorpusSummary(
        **verdicts,
        category_counts=cats,
        classified_total=classified if classified_total is None else classified_total,
    )


def render_summary(summary: CorpusSummary, format: str = "text") -> bytes:
    if format == "json":
        return (json.dumps(summary.to_dict(), indent=2) + "\n").encode()
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    lines = [f"{'Outcome':<30}{'Count':>8}{'%':>8}"]
    for i, (name, label) in enumerate(_OUTCOMES):
        if i == 3:
            lines.append("-" * 46)
        lines.append(f"{label:<30}{summary.count(name):>8}{summary.outcome_percent(name):>8}")
    lines.append("")
    lines.append(f"{'Root-cause category':<34}{'Count':>8}{'%':>8}{'% non-repro':>13}")
    for c, row in summary.category_table.items():
        lines.append(f"{c.label:<34}{row.count:>8}{row.percent:>8}{row.percent_of_non_reproducible:>13}")
    lines.append(f"{'Classified reports':<34}{summary.classified_total:>8}")
    return ("\n".join(lines) + "\n").encode()


def parse_records(lines: Iterable[str]) -> List[CorpusRecord]:
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            if not isinstance(data, dict):
                raise ValueError("record is not a JSON object")
            out.append(CorpusRecord.from_dict(data))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedRecord(str(exc), n) from exc
    return out


def load_records(path: Union[str, Path]) -> List[CorpusRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh)


__all__ = [
    "CorpusRecord", "CorpusSummary", "CategoryRow", "aggregate", "render_summary",
    "parse_records", "load_records", "percent",
]
