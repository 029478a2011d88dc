"""Compare two images layer by layer and file by file.

Layers are paired by position. Files are compared twice: per mismatched
layer pair, and across a flattened whole-image view (whiteouts applied,
later layers win). Semantic equality is decided on the flattened view.
"""

from __future__ import annotations

import json
import posixpath
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .oci import BlobRef, Digest, FileEntry, Image, Manifest, list_layer_entries
from .taxonomy import CATEGORY_ORDER, Classification, Ecosystem, RootCauseCategory

C = RootCauseCategory

KINDS = ("content", "metadata-only", "added", "removed", "type-changed", "ordering")
# kinds that do not break semantic equality
NEUTRAL_KINDS = frozenset({"metadata-only", "ordering"})
METADATA_FIELDS = ("mtime", "mode", "uid", "gid")
ORDERING_PATH = "(archive order)"


@dataclass(frozen=True)
class LayerDiff:
    index: int
    digest_a: Optional[Digest]
    digest_b: Optional[Digest]
    size_a: Optional[int]
    size_b: Optional[int]

    @property
    def match(self) -> bool:
        return self.digest_a is not None and self.digest_a == self.digest_b

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "digest_a": None if self.digest_a is None else str(self.digest_a),
            "digest_b": None if self.digest_b is None else str(self.digest_b),
            "size_a": self.size_a,
            "size_b": self.size_b,
            "match": self.match,
        }


@dataclass(frozen=True)
class FileDiff:
    path: str
    kind: str
    detail: Mapping[str, Tuple] = field(default_factory=dict)
    category: RootCauseCategory = C.ApplicationSpecific
    ecosystem: Ecosystem = Ecosystem.none

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "kind": self.kind,
            "category": self.category.name,
            "ecosystem": self.ecosystem.value,
            "detail": {k: list(v) for k, v in self.detail.items()},
        }


def _manifest(x: Union[Image, Manifest]) -> Manifest:
    return x.manifest if isinstance(x, Image) else x


def diff_manifests(a: Union[Image, Manifest], b: Union[Image, Manifest]) -> List[LayerDiff]:
    """One LayerDiff per position; the shorter side is ``None`` past its end."""
    la, lb = _manifest(a).layers, _manifest(b).layers
    out = []
    for i in range(max(len(la), len(lb))):
        da = la[i] if i < len(la) else None
        db = lb[i] if i < len(lb) else None
        out.append(LayerDiff(
            i,
            da.digest if da else None,
            db.digest if db else None,
            da.size if da else None,
            db.size if db else None,
        ))
    return out


# Classification

_SO_RE = re.compile(r"\.(so(\.\d+)*|a)$")
_TMP_RE = re.compile(r"(^|/)tmp/(.+)$")
_RANDOMISH_RE = re.compile(r"^(tmp[\w-]{5,}|(?=[a-z0-9_-]*\d)(?=[a-z0-9_-]*[a-z])[a-z0-9_-]{8,})(\.\w+)?$", re.I)


def _is_random_tmp(path: str) -> bool:
    m = _TMP_RE.search(path)
    if not m:
        return False
    return any(_RANDOMISH_RE.match(part) for part in m.group(2).split("/"))


def classify_path(path: str, kind: str = "content") -> Classification:
    """Root cause for a differing path; the first matching rule wins."""
    p = path.lstrip("/")
    base = posixpath.basename(p)
    if p.startswith("var/log/"):
        eco = Ecosystem.apt if p.startswith(("var/log/apt/", "var/log/dpkg")) else Ecosystem.none
        return Classification(C.SystemLogs, eco)
    if ".npm/_cacache/" in p or "node_modules/.cache" in p:
        return Classification(C.CachesDatabases, Ecosystem.npm_node)
    if ".cache/pip" in p:
        return Classification(C.CachesDatabases, Ecosystem.pip_python)
    if ".cache/go-build" in p:
        return Classification(C.CachesDatabases, Ecosystem.go)
    if "ldconfig/aux-cache" in p or "fontconfig/" in p or p.startswith("var/cache/") or "/var/cache/" in p:
        eco = Ecosystem.apt if p.startswith(("var/cache/apt/", "var/cache/debconf/")) else Ecosystem.none
        return Classification(C.CachesDatabases, eco)
    if p.endswith(".pyc") or "__pycache__/" in p:
        return Classification(C.CompiledArtifacts, Ecosystem.pip_python)
    if p.endswith(".class") or p.startswith(".m2/") or "/.m2/" in p:
        return Classification(C.CompiledArtifacts, Ecosystem.maven_java)
    in_bin = p.startswith("bin/") or "/bin/" in p
    if _SO_RE.search(base) or (in_bin and kind == "content"):
        return Classification(C.CompiledArtifacts)
    if p == "etc/machine-id" or p.startswith("etc/ssh/ssh_host_") or _is_random_tmp(p):
        return Classification(C.RandomNondeterministic)
    if p.startswith(("var/lib/dpkg/", "var/lib/apt/")):
        return Classification(C.PackageManagerState, Ecosystem.apt)
    if p.startswith("var/lib/rpm/"):
        return Classification(C.PackageManagerState)
    if kind == "metadata-only":
        return Classification(C.TimestampsMetadata)
    return Classification(C.ApplicationSpecific)


# File-level comparison

def _live(entries: Iterable[FileEntry]) -> "Dict[str, FileEntry]":
    out: Dict[str, FileEntry] = {}
    for e in entries:
        if not e.shadowed:
            out.pop(e.path, None)
            out[e.path] = e
    return out


def _identity(e: FileEntry):
    """What counts as content for an entry; never metadata."""
    if e.entry_type == "file":
        return e.content_digest
    if e.entry_type == "symlink":
        return e.link_target
    if e.entry_type == "hardlink":
        return e.link_target if e.unresolved else e.content_digest
    return None


def _fmt(v):
    return str(v) if isinstance(v, Digest) else v


def _make(path: str, kind: str, detail: Dict[str, Tuple]) -> FileDiff:
    if kind == "metadata-only":
        cls = Classification(C.TimestampsMetadata)
    else:
        cls = classify_path(path, kind)
    return FileDiff(path, kind, detail, cls.category, cls.ecosystem)


def compare_entries(a: FileEntry, b: FileEntry) -> Optional[FileDiff]:
    """Diff of two entries at the same path, or ``None`` when equal."""
    if a.entry_type != b.entry_type:
        return _make(a.path, "type-changed", {"entry_type": (a.entry_type, b.entry_type)})
    ia, ib = _identity(a), _identity(b)
    detail: Dict[str, Tuple] = {}
    if ia != ib:
        detail["content"] = (_fmt(ia), _fmt(ib))
        if a.size != b.size:
            detail["size"] = (a.size, b.size)
    for name in METADATA_FIELDS:
        va, vb = getattr(a, name), getattr(b, name)
        if va != vb:
            detail[name] = (va, vb)
    if ia != ib:
        return _make(a.path, "content", detail)
    if detail:
        return _make(a.path, "metadata-only", detail)
    return None


def diff_layer_files(entries_a: Sequence[FileEntry], entries_b: Sequence[FileEntry]) -> List[FileDiff]:
    """Per-path differences between two entry lists, sorted by path.

    Shadowed entries are ignored. When both sides hold the same set of paths
    in a different archive order, one extra ``ordering`` diff is appended.
    """
    la, lb = _live(entries_a), _live(entries_b)
    out: List[FileDiff] = []
    for path in sorted(la.keys() | lb.keys()):
        ea, eb = la.get(path), lb.get(path)
        if eb is None:
            out.append(_make(path, "removed", {"content": (_fmt(_identity(ea)), None)}))
        elif ea is None:
            out.append(_make(path, "added", {"content": (None, _fmt(_identity(eb)))}))
        else:
            d = compare_entries(ea, eb)
            if d is not None:
                out.append(d)
    if la.keys() == lb.keys() and list(la) != list(lb):
        out.append(FileDiff(ORDERING_PATH, "ordering", {}, C.FormattingFileOrdering, Ecosystem.none))
    return out


def flatten(layers: Iterable[Sequence[FileEntry]]) -> List[FileEntry]:
    """Whole-image view: whiteouts remove lower-layer paths, later layers win."""
    state: Dict[str, FileEntry] = {}
    for entries in layers:
        live = [e for e in entries if not e.shadowed]
        for e in live:
            if not e.whiteout:
                continue
            parent, base = posixpath.split(e.path)
            if base == ".wh..wh..opq":
                prefix = parent + "/" if parent else ""
                doomed = [p for p in state if p.startswith(prefix) and p != parent]
            else:
                target = posixpath.join(parent, base[4:])
                doomed = [p for p in state if p == target or p.startswith(target + "/")]
            for p in doomed:
                del state[p]
        for e in live:
            if e.whiteout:
                continue
            state.pop(e.path, None)
            state[e.path] = e
    return list(state.values())


# Whole-image report

@dataclass
class DiffReport:
    layer_diffs: List[LayerDiff]
    file_diffs: List[FileDiff]
    semantic_equal: bool
    category_histogram: Dict[RootCauseCategory, int]
    config_equal: bool
    bitwise_equal: bool = False
    config_size_a: Optional[int] = None
    config_size_b: Optional[int] = None
    layer_file_diffs: Dict[int, List[FileDiff]] = field(default_factory=dict)

    @property
    def mismatched_layers(self) -> List[int]:
        """1-based positions of layers whose digests differ."""
        return [d.index + 1 for d in self.layer_diffs if not d.match]

    def to_dict(self) -> dict:
        return {
            "bitwise_equal": self.bitwise_equal,
            "semantic_equal": self.semantic_equal,
            "config_equal": self.config_equal,
            "config_size_a": self.config_size_a,
            "config_size_b": self.config_size_b,
            "layer_diffs": [d.to_dict() for d in self.layer_diffs],
            "file_diffs": [d.to_dict() for d in self.file_diffs],
            "layer_file_diffs": {str(i): [d.to_dict() for d in ds] for i, ds in sorted(self.layer_file_diffs.items())},
            "histogram": {c.name: self.category_histogram.get(c, 0) for c in CATEGORY_ORDER},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def histogram(file_diffs: Iterable[FileDiff]) -> Dict[RootCauseCategory, int]:
    counts = Counter(
        C.TimestampsMetadata if d.kind == "metadata-only" else d.category for d in file_diffs
    )
    return {c: counts.get(c, 0) for c in CATEGORY_ORDER}


def is_semantic_equal(file_diffs: Iterable[FileDiff]) -> bool:
    return all(d.kind in NEUTRAL_KINDS for d in file_diffs)


class _EntryCache:
    """Walk each distinct layer blob once, however many times it is referenced."""

    def __init__(self):
        self._cache: Dict[Digest, List[FileEntry]] = {}

    def get(self, blob: BlobRef) -> List[FileEntry]:
        key = blob.descriptor.digest
        if key not in self._cache:
            self._cache[key] = list_layer_entries(blob)
        return self._cache[key]


def build_report(a: Image, b: Image) -> DiffReport:
    layer_diffs = diff_manifests(a, b)
    bitwise = a.digest == b.digest
    file_diffs: List[FileDiff] = []
    per_layer: Dict[int, List[FileDiff]] = {}
    if not bitwise:
        cache = _EntryCache()
        for d in layer_diffs:
            if d.match or d.digest_a is None or d.digest_b is None:
                continue
            per_layer[d.index] = diff_layer_files(cache.get(a.layer_blobs[d.index]), cache.get(b.layer_blobs[d.index]))
        flat_a = flatten(cache.get(x) for x in a.layer_blobs)
        flat_b = flatten(cache.get(x) for x in b.layer_blobs)
        file_diffs = diff_layer_files(flat_a, flat_b)
    return DiffReport(
        layer_diffs=layer_diffs,
        file_diffs=file_diffs,
        semantic_equal=is_semantic_equal(file_diffs),
        category_histogram=histogram(file_diffs),
        config_equal=a.config_bytes == b.config_bytes,
        bitwise_equal=bitwise,
        config_size_a=a.manifest.config.size,
        config_size_b=b.manifest.config.size,
        layer_file_diffs=per_layer,
    )


def report_from_manifests(a: Manifest, b: Manifest) -> DiffReport:
    """Manifest-only report for when blobs are not at hand (no file diffs)."""
    layer_diffs = diff_manifests(a, b)
    return DiffReport(
        layer_diffs=layer_diffs,
        file_diffs=[],
        semantic_equal=all(d.match for d in layer_diffs),
        category_histogram=histogram([]),
        config_equal=a.config.digest == b.config.digest,
        bitwise_equal=a.to_dict() == b.to_dict(),
        config_size_a=a.config.size,
        config_size_b=b.config.size,
    )


# Text rendering


def _short(v) -> str:
    if v is None:
        return "-"
    s = str(v)
    if s.startswith("sha256:"):
        return s[7:15] + "..."
    return s


def render_text(report: DiffReport, semantic_only: bool = False) -> str:
    lines = []
    if report.bitwise_equal:
        lines.append("images are bitwise identical")
        return "\n".join(lines) + "\n"
    mismatched = report.mismatched_layers
    lines.append(f"layers: {len(mismatched)} of {len(report.layer_diffs)} differ"
                 + (f" ({', '.join(map(str, mismatched))})" if mismatched else ""))
    lines.append(f"{'LAYER':<6}{'INPUT-0':<12}{'SIZE-0':>12}  {'INPUT-1':<12}{'SIZE-1':>12}  MATCH")
    for d in report.layer_diffs:
        lines.append(
            f"{d.index + 1:<6}{_short(d.digest_a):<12}{'-' if d.size_a is None else d.size_a:>12}  "
            f"{_short(d.digest_b):<12}{'-' if d.size_b is None else d.size_b:>12}  {'yes' if d.match else 'no'}"
        )
    lines.append(f"config: {'equal' if report.config_equal else 'differs'} "
                 f"({report.config_size_a} vs {report.config_size_b} bytes)")
    lines.append("")
    diffs = [d for d in report.file_diffs if not (semantic_only and d.kind in NEUTRAL_KINDS)]
    width = max([len(d.path) for d in diffs] + [4]) + 2
    lines.append(f"{'TYPE':<8}{'NAME':<{width}}{'INPUT-0':<13}{'INPUT-1':<13}CATEGORY")
    for d in diffs:
        pair = d.detail.get("content") or d.detail.get("entry_type") or next(iter(d.detail.values()), (None, None))
        kind = "Order" if d.kind == "ordering" else ("Meta" if d.kind == "metadata-only" else "File")
        lines.append(f"{kind:<8}{d.path:<{width}}{_short(pair[0]):<13}{_short(pair[1]):<13}{d.category.name}")
    lines.append("")
    lines.append("semantic: " + ("equal (metadata-only differences)" if report.semantic_equal else "differs"))
    return "\n".join(lines) + "\n"


__all__ = [
    "LayerDiff", "FileDiff", "DiffReport", "diff_manifests", "diff_layer_files", "classify_path",
    "flatten", "build_report", "report_from_manifests", "histogram", "render_text", "compare_entries",
]
