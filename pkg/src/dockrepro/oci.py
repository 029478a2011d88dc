"""Loading container images from disk with mandatory digest verification.

Two on-disk formats are understood:

* an OCI image layout directory (``oci-layout``, ``index.json``, ``blobs/sha256/``),
  or a tar archive of one, as written by ``buildx --output type=oci``;
* a ``docker save`` tarball with a top-level ``manifest.json``.

Blobs are never held in memory as a whole except the config; layers are
hashed and walked as streams.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import posixpath
import tarfile
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Callable, Dict, IO, Iterable, List, Mapping, Optional, Tuple, Union

from .errors import (
    CorruptArchive,
    DecompressFailure,
    DigestMismatch,
    ImageError,
    MissingBlob,
    UnsupportedMediaType,
)

CHUNK = 1 << 20
EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

MT_OCI_MANIFEST = "application/vnd.oci.image.manifest.v1+json"
MT_OCI_INDEX = "application/vnd.oci.image.index.v1+json"
MT_OCI_CONFIG = "application/vnd.oci.image.config.v1+json"
MT_DOCKER_MANIFEST = "application/vnd.docker.distribution.manifest.v2+json"
MT_DOCKER_LIST = "application/vnd.docker.distribution.manifest.list.v2+json"
MT_DOCKER_CONFIG = "application/vnd.docker.container.image.v1+json"

LAYER_MEDIA_TYPES: Dict[str, str] = {
    "application/vnd.oci.image.layer.v1.tar": "tar",
    "application/vnd.oci.image.layer.v1.tar+gzip": "gzip",
    "application/vnd.oci.image.layer.v1.tar+zstd": "zstd",
    "application/vnd.oci.image.layer.nondistributable.v1.tar": "tar",
    "application/vnd.oci.image.layer.nondistributable.v1.tar+gzip": "gzip",
    "application/vnd.oci.image.layer.nondistributable.v1.tar+zstd": "zstd",
    "application/vnd.docker.image.rootfs.diff.tar": "tar",
    "application/vnd.docker.image.rootfs.diff.tar.gzip": "gzip",
    "application/vnd.docker.image.rootfs.foreign.diff.tar.gzip": "gzip",
}


@dataclass(frozen=True, order=True)
class Digest:
    hex: str
    algorithm: str = "sha256"

    def __post_init__(self) -> None:
        if self.algorithm != "sha256":
            raise UnsupportedMediaType(f"unsupported digest algorithm {self.algorithm!r}")
        if len(self.hex) != 64 or any(c not in "0123456789abcdef" for c in self.hex):
            raise ValueError(f"sha256 digest must be 64 lowercase hex chars, got {self.hex!r}")

    @classmethod
    def parse(cls, text: str) -> "Digest":
        algorithm, sep, hexpart = text.partition(":")
        if not sep:
            raise ValueError(f"digest lacks an algorithm prefix: {text!r}")
        return cls(hexpart, algorithm)

    @property
    def short(self) -> str:
        return self.hex[:8]

    def __str__(self) -> str:
        return f"{self.algorithm}:{self.hex}"


def compute_digest(data: Union[bytes, bytearray, memoryview, BinaryIO]) -> Digest:
    """SHA-256 of a byte string, or of a binary stream read in chunks."""
    h = hashlib.sha256()
    if isinstance(data, (bytes, bytearray, memoryview)):
        h.update(data)
    else:
        for chunk in iter(lambda: data.read(CHUNK), b""):
            h.update(chunk)
    return Digest(h.hexdigest())


def _hash_stream(stream: IO[bytes]) -> Tuple[Digest, int]:
    h = hashlib.sha256()
    size = 0
    for chunk in iter(lambda: stream.read(CHUNK), b""):
        h.update(chunk)
        size += len(chunk)
    return Digest(h.hexdigest()), size


@dataclass(frozen=True)
class Descriptor:
    digest: Digest
    size: int
    media_type: str = ""
    annotations: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"mediaType": self.media_type, "digest": str(self.digest), "size": self.size}
        if self.annotations:
            out["annotations"] = dict(self.annotations)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Descriptor":
        try:
            digest = Digest.parse(data["digest"])
            size = int(data["size"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ImageError(f"malformed descriptor {data!r}: {exc}") from exc
        if size < 0:
            raise ImageError(f"negative size in descriptor {data!r}")
        return cls(digest, size, data.get("mediaType", ""), dict(data.get("annotations") or {}))


@dataclass(frozen=True)
class Manifest:
    config: Descriptor
    layers: Tuple[Descriptor, ...]
    annotations: Mapping[str, str] = field(default_factory=dict)
    media_type: str = MT_OCI_MANIFEST

    @classmethod
    def from_dict(cls, data: Mapping) -> "Manifest":
        if "config" not in data or "layers" not in data:
            raise ImageError("manifest lacks config or layers")
        return cls(
            Descriptor.from_dict(data["config"]),
            tuple(Descriptor.from_dict(d) for d in data["layers"]),
            dict(data.get("annotations") or {}),
            data.get("mediaType", MT_OCI_MANIFEST),
        )

    @classmethod
    def from_json(cls, text: Union[str, bytes]) -> "Manifest":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        out = {
            "schemaVersion": 2,
            "mediaType": self.media_type,
            "config": self.config.to_dict(),
            "layers": [d.to_dict() for d in self.layers],
        }
        if self.annotations:
            out["annotations"] = dict(self.annotations)
        return out


@dataclass(frozen=True)
class BlobRef:
    """Re-openable handle on one blob; each ``open()`` returns a fresh stream."""

    opener: Callable[[], IO[bytes]] = field(repr=False, compare=False)
    descriptor: Descriptor
    location: str = ""

    def open(self) -> IO[bytes]:
        return self.opener()

    @property
    def media_type(self) -> str:
        return self.descriptor.media_type


@dataclass(frozen=True)
class Image:
    manifest: Manifest
    config_bytes: bytes
    layer_blobs: Tuple[BlobRef, ...]
    manifest_bytes: bytes
    source: str = ""

    @property
    def digest(self) -> Digest:
        """Manifest digest: the identity compared between rebuilds."""
        return compute_digest(self.manifest_bytes)

    @property
    def config(self) -> dict:
        return json.loads(self.config_bytes)


@dataclass(frozen=True)
class FileEntry:
    path: str
    entry_type: str  # file | dir | symlink | hardlink | other
    size: int = 0
    mode: int = 0
    uid: int = 0
    gid: int = 0
    mtime: int = 0
    link_target: Optional[str] = None
    content_digest: Optional[Digest] = None
    whiteout: bool = False
    shadowed: bool = False
    unresolved: bool = False  # hardlink whose target was not seen earlier


# Loading

def _verify(descriptor: Descriptor, opener: Callable[[], IO[bytes]], what: str) -> None:
    with opener() as fh:
        digest, size = _hash_stream(fh)
    if digest != descriptor.digest:
        raise DigestMismatch(f"{what}: content hashes to {digest}, descriptor says {descriptor.digest}")
    if size != descriptor.size:
        raise DigestMismatch(f"{what}: blob is {size} bytes, descriptor says {descriptor.size}")


def _check_layer_type(descriptor: Descriptor) -> None:
    if descriptor.media_type not in LAYER_MEDIA_TYPES:
        raise UnsupportedMediaType(f"layer {descriptor.digest}: unsupported media type {descriptor.media_type!r}")


class _Store:
    """Read access to named members of a layout directory or a tar archive."""

    def __init__(self, path: Path):
        self.path = path
        self.is_dir = path.is_dir()
        self._members: Dict[str, tarfile.TarInfo] = {}
        if not self.is_dir:
            try:
                with tarfile.open(path, "r:*") as tf:
                    for m in tf.getmembers():
                        name = posixpath.normpath(m.name.lstrip("/"))
                        if m.isfile():
                            self._members[name] = m
            except (tarfile.TarError, OSError, EOFError, zlib.error) as exc:
                raise CorruptArchive(f"{path}: not a readable tar archive: {exc}") from exc

    def exists(self, name: str) -> bool:
        if self.is_dir:
            return (self.path / name).is_file()
        return posixpath.normpath(name) in self._members

    def opener(self, name: str) -> Callable[[], IO[bytes]]:
        if not self.exists(name):
            raise MissingBlob(f"{self.path}: missing {name}")
        if self.is_dir:
            target = self.path / name
            return lambda: open(target, "rb")
        member = self._members[posixpath.normpath(name)]
        path = self.path

        def _open() -> IO[bytes]:
            tf = tarfile.open(path, "r:*")
            fh = tf.extractfile(member)
            assert fh is not None
            return _Closing(fh, tf)

        return _open

    def read(self, name: str) -> bytes:
        with self.opener(name)() as fh:
            return fh.read()


class _Closing(io.RawIOBase):
    """Stream wrapper that also closes the owning tar archive."""

    def __init__(self, inner: IO[bytes], owner: tarfile.TarFile):
        self._inner = inner
        self._owner = owner

    def readable(self) -> bool:
        return True

    def read(self, n: int = -1) -> bytes:
        return self._inner.read(n)

    def readinto(self, b) -> int:
        data = self._inner.read(len(b))
        b[: len(data)] = data
        return len(data)

    def close(self) -> None:
        if not self.closed:
            self._inner.close()
            self._owner.close()
        super().close()


def detect_format(path: Union[str, Path]) -> str:
    path = Path(path)
    if path.is_dir():
        return "oci-layout"
    store = _Store(path)
    if store.exists("index.json") and store.exists("oci-layout"):
        return "oci-layout"
    if store.exists("manifest.json"):
        return "save-tarball"
    raise ImageError(f"{path}: neither an OCI layout nor a docker save tarball")


def load_image(path: Union[str, Path], format: Optional[str] = None) -> Image:
    """Load and fully verify an image; ``format`` is detected when omitted."""
    path = Path(path)
    if not path.exists():
        raise MissingBlob(f"{path}: no such image")
    fmt = format or detect_format(path)
    store = _Store(path)
    if fmt == "oci-layout":
        return _load_oci(store)
    if fmt == "save-tarball":
        return _load_save(store)
    raise ValueError(f"unknown image format {fmt!r}")


def _blob_name(d: Descriptor) -> str:
    return f"blobs/{d.digest.algorithm}/{d.digest.hex}"


def _load_oci(store: _Store) -> Image:
    if not store.exists("oci-layout"):
        raise MissingBlob(f"{store.path}: missing oci-layout marker")
    if not store.exists("index.json"):
        raise MissingBlob(f"{store.path}: missing index.json")
    index = json.loads(store.read("index.json"))
    manifests = index.get("manifests") or []
    if not manifests:
        raise ImageError(f"{store.path}: index.json lists no manifests")
    desc = Descriptor.from_dict(manifests[0])
    # follow nested indexes down to the first image manifest
    for _ in range(8):
        name = _blob_name(desc)
        _verify(desc, store.opener(name), f"manifest {desc.digest}")
        raw = store.read(name)
        data = json.loads(raw)
        mt = data.get("mediaType") or desc.media_type
        if mt in (MT_OCI_INDEX, MT_DOCKER_LIST) or ("manifests" in data and "layers" not in data):
            desc = Descriptor.from_dict(data["manifests"][0])
            continue
        break
    else:
        raise ImageError(f"{store.path}: index nesting too deep")
    manifest = Manifest.from_dict(data)
    config_opener = store.opener(_blob_name(manifest.config))
    _verify(manifest.config, config_opener, "config")
    config_bytes = store.read(_blob_name(manifest.config))
    blobs = []
    for i, layer in enumerate(manifest.layers):
        _check_layer_type(layer)
        opener = store.opener(_blob_name(layer))
        _verify(layer, opener, f"layer {i + 1}")
        blobs.append(BlobRef(opener, layer, _blob_name(layer)))
    return Image(manifest, config_bytes, tuple(blobs), raw, str(store.path))


def _name_digest(name: str) -> Optional[Digest]:
    """``blobs/sha256/<hex>`` and ``<hex>.json`` names embed the expected digest."""
    base = posixpath.basename(name)
    if base.endswith(".json"):
        base = base[:-5]
    try:
        return Digest(base)
    except ValueError:
        return None


def _sniff_layer_type(opener: Callable[[], IO[bytes]]) -> str:
    with opener() as fh:
        head = fh.read(4)
    if head[:2] == b"\x1f\x8b":
        return "application/vnd.docker.image.rootfs.diff.tar.gzip"
    if head == b"\x28\xb5\x2f\xfd":
        return "application/vnd.oci.image.layer.v1.tar+zstd"
    return "application/vnd.docker.image.rootfs.diff.tar"


def _load_save(store: _Store) -> Image:
    entries = json.loads(store.read("manifest.json"))
    if not isinstance(entries, list) or not entries:
        raise ImageError(f"{store.path}: manifest.json is empty")
    entry = entries[0]
    config_name = entry["Config"]
    config_opener = store.opener(config_name)
    config_digest, config_size = _hash_stream(config_opener())
    expected = _name_digest(config_name)
    if expected is not None and expected != config_digest:
        raise DigestMismatch(f"config {config_name}: content hashes to {config_digest}")
    config_bytes = store.read(config_name)
    config = json.loads(config_bytes)
    diff_ids = [Digest.parse(d) for d in (config.get("rootfs") or {}).get("diff_ids", [])]

    layers: List[Descriptor] = []
    blobs: List[BlobRef] = []
    for i, name in enumerate(entry.get("Layers") or []):
        opener = store.opener(name)
        digest, size = _hash_stream(opener())
        named = _name_digest(name)
        if named is not None and named != digest:
            raise DigestMismatch(f"layer {i + 1} ({name}): content hashes to {digest}")
        media_type = _sniff_layer_type(opener)
        if LAYER_MEDIA_TYPES[media_type] == "tar" and i < len(diff_ids) and diff_ids[i] != digest:
            raise DigestMismatch(f"layer {i + 1} ({name}): content hashes to {digest}, config diff_id is {diff_ids[i]}")
        desc = Descriptor(digest, size, media_type)
        layers.append(desc)
        blobs.append(BlobRef(opener, desc, name))
    manifest = Manifest(
        Descriptor(config_digest, config_size, MT_DOCKER_CONFIG),
        tuple(layers),
        media_type=MT_DOCKER_MANIFEST,
    )
    raw = json.dumps(manifest.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return Image(manifest, config_bytes, tuple(blobs), raw, str(store.path))


# Layer walking

class _CountingReader(io.RawIOBase):
    def __init__(self, inner: IO[bytes]):
        self._inner = inner
        self.count = 0

    def readable(self) -> bool:
        return True

    def readinto(self, b) -> int:
        data = self._inner.read(len(b))
        n = len(data)
        b[:n] = data
        self.count += n
        return n


def _decompressed(raw: IO[bytes], media_type: str) -> IO[bytes]:
    kind = LAYER_MEDIA_TYPES.get(media_type)
    if kind is None:
        raise UnsupportedMediaType(f"unsupported layer media type {media_type!r}")
    if kind == "tar":
        return raw
    if kind == "gzip":
        return gzip.GzipFile(fileobj=raw, mode="rb")
    try:
        import zstandard
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise DecompressFailure("zstd layers need the 'zstandard' package") from exc
    return zstandard.ZstdDecompressor().stream_reader(raw)


def normalize_path(name: str) -> str:
    parts = []
    for part in name.replace("\\", "/").split("/"):
        if part in ("", "."):
            continue
        if part == "..":
            if parts:
                parts.pop()
            continue
        parts.append(part)
    return "/".join(parts)


def _entry_type(info: tarfile.TarInfo) -> str:
    if info.isreg():
        return "file"
    if info.isdir():
        return "dir"
    if info.issym():
        return "symlink"
    if info.islnk():
        return "hardlink"
    return "other"


def iter_layer_entries(layer: Union[BlobRef, IO[bytes]], media_type: Optional[str] = None) -> Iterable[FileEntry]:
    """Stream the entries of one layer archive without shadow resolution."""
    if isinstance(layer, BlobRef):
        media_type = media_type or layer.media_type
        raw = layer.open()
    else:
        raw = layer
    media_type = media_type or "application/vnd.oci.image.layer.v1.tar"
    counter = _CountingReader(raw)
    digests: Dict[str, Digest] = {}
    try:
        stream = io.BufferedReader(_decompressed(io.BufferedReader(counter), media_type))
        try:
            if not stream.peek(1):
                return
            tf = tarfile.open(fileobj=stream, mode="r|")
        except tarfile.ReadError as exc:
            raise CorruptArchive(f"not a tar stream: {exc}", counter.count) from exc
        with tf:
            for info in tf:
                path = normalize_path(info.name)
                etype = _entry_type(info)
                base = posixpath.basename(path)
                whiteout = base.startswith(".wh.")
                digest = None
                target = None
                unresolved = False
                if etype == "file":
                    fh = tf.extractfile(info)
                    assert fh is not None
                    digest, _ = _hash_stream(fh)
                    digests[path] = digest
                elif etype == "symlink":
                    target = info.linkname
                elif etype == "hardlink":
                    target = normalize_path(info.linkname)
                    digest = digests.get(target)
                    unresolved = digest is None
                if whiteout:
                    etype = "other"
                yield FileEntry(
                    path=path,
                    entry_type=etype,
                    size=info.size if etype == "file" else 0,
                    mode=info.mode & 0o7777,
                    uid=info.uid,
                    gid=info.gid,
                    mtime=int(info.mtime),
                    link_target=target,
                    content_digest=digest,
                    whiteout=whiteout,
                    unresolved=unresolved,
                )
    except tarfile.ReadError as exc:
        raise CorruptArchive(f"truncated or invalid tar: {exc}", counter.count) from exc
    except (OSError, EOFError, zlib.error) as exc:
        if isinstance(exc, gzip.BadGzipFile) or isinstance(exc, (EOFError, zlib.error)) or "zstd" in str(exc).lower():
            raise DecompressFailure(f"cannot decompress layer: {exc}") from exc
        raise CorruptArchive(f"cannot read layer: {exc}", counter.count) from exc
    except Exception as exc:
        if type(exc).__module__.startswith("zstandard"):
            raise DecompressFailure(f"cannot decompress layer: {exc}") from exc
        raise
    finally:
        raw.close()


def list_layer_entries(layer: Union[BlobRef, IO[bytes]], media_type: Optional[str] = None) -> List[FileEntry]:
    """Entries of one layer in archive order.

    A path that occurs twice keeps its last occurrence; earlier ones stay in
    the list with ``shadowed=True``.
    """
    entries = list(iter_layer_entries(layer, media_type))
    last: Dict[str, int] = {}
    for i, e in enumerate(entries):
        last[e.path] = i
    return [e if last[e.path] == i else replace(e, shadowed=True) for i, e in enumerate(entries)]


