"""Static and dynamic checks for reproducible container builds."""

__version__ = "0.1.0"

from .dockerfile import DockerfileDoc, parse_dockerfile, render_dockerfile
from .differ import DiffReport, build_report, classify_path, diff_layer_files, diff_manifests
from .lint import apply_fixes, builtin_catalog, lint
from .oci import Digest, Image, compute_digest, list_layer_entries, load_image
from .protocol import Verdict, aggregate_verdicts, derive_epoch, run_protocol, select_dockerfile
from .report import CorpusRecord, CorpusSummary, aggregate, render_summary
from .taxonomy import Ecosystem, RootCauseCategory

__all__ = [
    "DockerfileDoc", "parse_dockerfile", "render_dockerfile",
    "DiffReport", "build_report", "classify_path", "diff_layer_files", "diff_manifests",
    "apply_fixes", "builtin_catalog", "lint",
    "Digest", "Image", "compute_digest", "list_layer_entries", "load_image",
    "Verdict", "aggregate_verdicts", "derive_epoch", "run_protocol", "select_dockerfile",
    "CorpusRecord", "CorpusSummary", "aggregate", "render_summary",
    "Ecosystem", "RootCauseCategory",
]
