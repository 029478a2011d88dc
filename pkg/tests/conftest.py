import gzip
import hashlib
from pathlib import Path

import pytest

from dockrepro.testing import (
    Layer,
    TarEntry,
    gzip_bytes,
    image_entries,
    pad_json,
    sized_random_layer,
    tar_bytes,
    write_oci_layout,
)

FIXTURES = Path(__file__).parent / "fixtures"
DOCKERFILES = FIXTURES / "dockerfiles"

GOLANG_SIZES_A = [3802452, 291165, 60151314, 124, 32]
GOLANG_SIZES_B = [3802452, 291156, 60151314, 126, 32]
GOLANG_CONFIG_SIZES = (2165, 2171)


def read_dockerfile(name: str) -> str:
    return (DOCKERFILES / name).read_text()


@pytest.fixture
def dockerfile_text():
    return read_dockerfile


@pytest.fixture
def make_image(tmp_path):
    """Write an OCI layout from {path: bytes} dicts, one per layer."""
    counter = {"n": 0}

    def _make(*layers, mtime=0, compression="gzip", name=None, **kw):
        counter["n"] += 1
        dest = tmp_path / (name or f"img{counter['n']}")
        built = []
        for layer in layers:
            if isinstance(layer, Layer):
                built.append(layer)
            elif isinstance(layer, dict):
                built.append(Layer.of(image_entries(layer, mtime=mtime), compression))
            else:
                built.append(Layer.of(layer, compression))
        write_oci_layout(dest, built, **kw)
        return dest

    return _make


def _golang_config(layers, size, extra):
    diff_ids = ["sha256:" + hashlib.sha256(gzip.decompress(l.blob)).hexdigest() for l in layers]
    config = {
        "architecture": "amd64",
        "os": "linux",
        "config": {"Env": ["PATH=/usr/local/go/bin:/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin",
                           "GOLANG_VERSION=1.25.5", "GOTOOLCHAIN=local", "GOPATH=/go"],
                   "WorkingDir": "/go"},
        "rootfs": {"type": "layers", "diff_ids": diff_ids},
    }
    config.update(extra)
    return pad_json(config, size)


@pytest.fixture(scope="session")
def golang_pair(tmp_path_factory):
    """On-disk image pair shaped like the golang alpine comparison.

    Layer and config sizes match the recorded manifests; layers 2 and 4 differ
    (layer 2 in file content, layer 4 in directory mtime only).
    """
    root = tmp_path_factory.mktemp("golang")
    base = Layer(sized_random_layer(3802452, "lib/apk/db/installed", seed=1))
    sdk = Layer(sized_random_layer(60151314, "usr/local/go/pkg/tool.bin", seed=3))
    empty = Layer(gzip_bytes(b"\0" * 1024, size=32, level=9))
    env_a = Layer(sized_random_layer(291165, "usr/local/go/env.sh", seed=2))
    env_b = Layer(sized_random_layer(291156, "usr/local/go/env.sh", seed=22))
    wd_a = Layer(gzip_bytes(tar_bytes([TarEntry("go", kind="dir", mtime=1764697598, mode=0o777)]), size=124, level=9))
    wd_b = Layer(gzip_bytes(tar_bytes([TarEntry("go", kind="dir", mtime=1764697000, mode=0o777)]), size=126, level=9))
    layers_a = [base, env_a, sdk, wd_a, empty]
    layers_b = [base, env_b, sdk, wd_b, empty]
    cfg_a = _golang_config(layers_a, 2165, {"created": "2025-12-01T10:00:00Z"})
    cfg_b = _golang_config(layers_b, 2171, {"created": "2025-12-02T17:46:38.000Z"})
    write_oci_layout(root / "local", layers_a, cfg_a)
    write_oci_layout(root / "upstream", layers_b, cfg_b, annotations={
        "org.opencontainers.image.created": "2025-12-02T17:46:38Z",
        "org.opencontainers.image.source": "https://github.com/docker-library/golang",
    })
    return root / "local", root / "upstream"


@pytest.fixture
def golang_manifests():
    from dockrepro.oci import Manifest

    a = Manifest.from_json((FIXTURES / "golang" / "local-manifest.json").read_text())
    b = Manifest.from_json((FIXTURES / "golang" / "upstream-manifest.json").read_text())
    return a, b


# Acceptance reporting: one pass/fail line per criterion at the end of the run.

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    marker = _ACCEPTANCE_MARKS.get(report.nodeid)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(report.nodeid)
        if prev is None or prev[1] == "PASS":
            if hasattr(report, "wasxfail"):
                state = "XFAIL (expected)" if report.skipped else "XPASS"
            else:
                state = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
            _ACCEPTANCE[report.nodeid] = (marker, state)


_ACCEPTANCE_MARKS = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _ACCEPTANCE_MARKS[item.nodeid] = m.args


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    grouped = {}
    for (n, title), state in _ACCEPTANCE.values():
        grouped.setdefault((str(n), title), []).append(state)
    terminalreporter.section("acceptance criteria")
    for (n, title), states in sorted(grouped.items(), key=lambda kv: (len(kv[0][0]), kv[0])):
        worst = next((s for s in ("FAIL", "XPASS", "SKIP") if s in states), states[0])
        terminalreporter.write_line(f"criterion {n}: {worst:<16} {title} ({len(states)} test{'s' * (len(states) > 1)})")
