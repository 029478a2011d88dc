"""Helpers for writing small synthetic images to disk.

Used by the test-suite and by the simulated builder adapter; nothing in the
analysis path imports this module.
"""

from __future__ import annotations

import io
import json
import shutil
import struct
import tarfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Union

from .oci import (
    MT_OCI_CONFIG,
    MT_OCI_INDEX,
    MT_OCI_MANIFEST,
    Descriptor,
    Digest,
    Manifest,
    compute_digest,
)

GZIP_LAYER = "application/vnd.oci.image.layer.v1.tar+gzip"
TAR_LAYER = "application/vnd.oci.image.layer.v1.tar"
ZSTD_LAYER = "application/vnd.oci.image.layer.v1.tar+zstd"


@dataclass
class TarEntry:
    path: str
    data: bytes = b""
    kind: str = "file"  # file | dir | symlink | hardlink | fifo
    mode: Optional[int] = None
    uid: int = 0
    gid: int = 0
    mtime: int = 0
    linkname: str = ""
    pax: Mapping[str, str] = field(default_factory=dict)


def tar_bytes(entries: Iterable[TarEntry], format: int = tarfile.PAX_FORMAT) -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=format) as tf:
        for e in entries:
            info = tarfile.TarInfo(e.path)
            info.uid, info.gid, info.mtime = e.uid, e.gid, e.mtime
            info.uname = info.gname = ""
            if e.pax:
                info.pax_headers = dict(e.pax)
            data = None
            if e.kind == "file":
                info.type = tarfile.REGTYPE
                info.size = len(e.data)
                info.mode = 0o644 if e.mode is None else e.mode
                data = io.BytesIO(e.data)
            elif e.kind == "dir":
                info.type = tarfile.DIRTYPE
                info.mode = 0o755 if e.mode is None else e.mode
            elif e.kind == "symlink":
                info.type = tarfile.SYMTYPE
                info.linkname = e.linkname
                info.mode = 0o777 if e.mode is None else e.mode
            elif e.kind == "hardlink":
                info.type = tarfile.LNKTYPE
                info.linkname = e.linkname
                info.mode = 0o644 if e.mode is None else e.mode
            elif e.kind == "fifo":
                info.type = tarfile.FIFOTYPE
                info.mode = 0o644 if e.mode is None else e.mode
            else:
                raise ValueError(f"unknown tar entry kind {e.kind!r}")
            tf.addfile(info, data)
    return buf.getvalue()


def gzip_bytes(data: bytes, size: Optional[int] = None, level: int = 6) -> bytes:
    """Deterministic gzip (mtime 0). With ``size``, pad the header's FEXTRA
    field so the member is exactly ``size`` bytes long."""
    comp = zlib.compressobj(level, zlib.DEFLATED, -15)
    body = comp.compress(data) + comp.flush()
    trailer = struct.pack("<II", zlib.crc32(data) & 0xFFFFFFFF, len(data) & 0xFFFFFFFF)
    plain = b"\x1f\x8b\x08\x00" + b"\x00\x00\x00\x00" + b"\x00\xff" + body + trailer
    if size is None or len(plain) == size:
        return plain
    extra_len = size - (10 + 2 + len(body) + len(trailer))
    if not 0 <= extra_len <= 0xFFFF:
        raise ValueError(f"cannot pad gzip member of {size - extra_len} bytes to {size}")
    header = b"\x1f\x8b\x08\x04" + b"\x00\x00\x00\x00" + b"\x00\xff" + struct.pack("<H", extra_len)
    return header + b"\x00" * extra_len + body + trailer


def zstd_bytes(data: bytes) -> bytes:
    import zstandard

    return zstandard.ZstdCompressor().compress(data)


def layer_blob(entries: Iterable[TarEntry], compression: str = "gzip", size: Optional[int] = None) -> bytes:
    raw = tar_bytes(entries)
    if compression == "gzip":
        return gzip_bytes(raw, size)
    if compression == "zstd":
        return zstd_bytes(raw)
    if compression == "tar":
        return raw
    raise ValueError(f"unknown compression {compression!r}")


def sized_random_layer(size: int, path: str, seed: int = 0) -> bytes:
    """Gzip layer holding one file of incompressible bytes, exactly ``size`` bytes long."""
    import random

    rng = random.Random(seed)
    n = max(size - 40000, 0)
    for _ in range(8):
        raw = tar_bytes([TarEntry(path, rng.randbytes(n) if n else b"")])
        rng = random.Random(seed)
        comp = zlib.compressobj(0, zlib.DEFLATED, -15)
        body_len = len(comp.compress(raw) + comp.flush())
        gap = size - (20 + body_len)
        if 0 <= gap <= 0xFFFF:
            return gzip_bytes(raw, size, level=0)
        n = max(n + gap - 30000, 0)
    raise ValueError(f"could not hit a layer size of {size}")


_MEDIA = {"gzip": GZIP_LAYER, "tar": TAR_LAYER, "zstd": ZSTD_LAYER}


@dataclass
class Layer:
    blob: bytes
    media_type: str = GZIP_LAYER

    @classmethod
    def of(cls, entries: Iterable[TarEntry], compression: str = "gzip", size: Optional[int] = None) -> "Layer":
        return cls(layer_blob(entries, compression, size), _MEDIA[compression])


def default_config(layers: Sequence[Layer], extra: Optional[Mapping] = None) -> bytes:
    import gzip as _gzip

    diff_ids = []
    for layer in layers:
        raw = layer.blob
        if layer.media_type == GZIP_LAYER:
            raw = _gzip.decompress(raw)
        elif layer.media_type == ZSTD_LAYER:
            import zstandard

            raw = zstandard.ZstdDecompressor().stream_reader(io.BytesIO(raw)).read()
        diff_ids.append(str(compute_digest(raw)))
    config = {
        "architecture": "amd64",
        "os": "linux",
        "config": {},
        "rootfs": {"type": "layers", "diff_ids": diff_ids},
    }
    if extra:
        config.update(extra)
    return json.dumps(config, sort_keys=True).encode()


def pad_json(data: Mapping, size: int) -> bytes:
    """Serialize ``data`` and pad with trailing spaces to exactly ``size`` bytes."""
    raw = json.dumps(data, sort_keys=True).encode()
    if len(raw) > size:
        raise ValueError(f"JSON is already {len(raw)} bytes, cannot pad to {size}")
    return raw + b" " * (size - len(raw))


def _write_blob(root: Path, blob: bytes) -> Descriptor:
    digest = compute_digest(blob)
    path = root / "blobs" / "sha256" / digest.hex
    path.parent.mkdir(parents=True, exist_ok=True)
    if not path.exists():
        path.write_bytes(blob)
    return Descriptor(digest, len(blob))


def write_oci_layout(
    dest: Union[str, Path],
    layers: Sequence[Layer],
    config: Optional[bytes] = None,
    annotations: Optional[Mapping[str, str]] = None,
    nested_index: bool = False,
) -> Digest:
    """Write an OCI image layout directory; returns the manifest digest."""
    root = Path(dest)
    root.mkdir(parents=True, exist_ok=True)
    (root / "oci-layout").write_text('{"imageLayoutVersion": "1.0.0"}')
    config = default_config(layers) if config is None else config
    cdesc = _write_blob(root, config)
    ldescs = []
    for layer in layers:
        d = _write_blob(root, layer.blob)
        ldescs.append(Descriptor(d.digest, d.size, layer.media_type))
    manifest = Manifest(Descriptor(cdesc.digest, cdesc.size, MT_OCI_CONFIG), tuple(ldescs), dict(annotations or {}))
    mbytes = json.dumps(manifest.to_dict(), sort_keys=True).encode()
    mdesc = _write_blob(root, mbytes)
    top = {"mediaType": MT_OCI_MANIFEST, "digest": str(mdesc.digest), "size": mdesc.size}
    if nested_index:
        inner = json.dumps({"schemaVersion": 2, "mediaType": MT_OCI_INDEX, "manifests": [top]}).encode()
        idesc = _write_blob(root, inner)
        top = {"mediaType": MT_OCI_INDEX, "digest": str(idesc.digest), "size": idesc.size}
    (root / "index.json").write_text(json.dumps({"schemaVersion": 2, "manifests": [top]}))
    return mdesc.digest


def write_save_tarball(dest: Union[str, Path], layers: Sequence[Layer], config: Optional[bytes] = None,
                       repo_tag: str = "fixture:latest") -> Path:
    """Write a legacy ``docker save`` tarball (uncompressed layers recommended)."""
    config = default_config(layers) if config is None else config
    cdigest = compute_digest(config)
    members = {f"{cdigest.hex}.json": config}
    names = []
    for i, layer in enumerate(layers):
        name = f"{compute_digest(layer.blob).hex}/layer.tar"
        members[name] = layer.blob
        names.append(name)
    manifest = [{"Config": f"{cdigest.hex}.json", "RepoTags": [repo_tag], "Layers": names}]
    members["manifest.json"] = json.dumps(manifest).encode()
    dest = Path(dest)
    with tarfile.open(dest, "w") as tf:
        for name, data in members.items():
            info = tarfile.TarInfo(name)
            info.size = len(data)
            tf.addfile(info, io.BytesIO(data))
    return dest


def tar_directory(src: Union[str, Path], dest: Union[str, Path]) -> Path:
    """Pack an OCI layout directory into a tar archive (``type=oci`` style)."""
    src, dest = Path(src), Path(dest)
    with tarfile.open(dest, "w") as tf:
        for path in sorted(src.rglob("*")):
            tf.add(path, arcname=path.relative_to(src).as_posix(), recursive=False)
    return dest


def copy_image(src: Union[str, Path], dest: Union[str, Path]) -> None:
    src, dest = Path(src), Path(dest)
    if src.is_dir():
        shutil.copytree(src, dest, dirs_exist_ok=True)
    else:
        shutil.copyfile(src, dest)


def golang_manifest(layer_hex: Sequence[str], config_hex: str, config_size: int,
                    layer_sizes: Sequence[int], annotations: Optional[Mapping[str, str]] = None) -> Manifest:
    """Manifest from (possibly abbreviated) hex digests; prefixes are zero-padded."""
    def pad(h: str) -> Digest:
        return Digest(h.ljust(64, "0"))

    return Manifest(
        Descriptor(pad(config_hex), config_size, MT_OCI_CONFIG),
        tuple(Descriptor(pad(h), s, GZIP_LAYER) for h, s in zip(layer_hex, layer_sizes)),
        dict(annotations or {}),
    )


def image_entries(files: Mapping[str, bytes], mtime: int = 0) -> List[TarEntry]:
    """Tar entries for ``{path: content}``, with parent directories first."""
    out: List[TarEntry] = []
    dirs = set()
    for path in sorted(files):
        parts = path.split("/")[:-1]
        for i in range(1, len(parts) + 1):
            d = "/".join(parts[:i])
            if d not in dirs:
                dirs.add(d)
                out.append(TarEntry(d, kind="dir", mtime=mtime))
        out.append(TarEntry(path, files[path], mtime=mtime))
    return out


__all__ = [
    "TarEntry", "Layer", "tar_bytes", "gzip_bytes", "layer_blob", "default_config", "pad_json",
    "write_oci_layout", "write_save_tarball", "tar_directory", "copy_image", "golang_manifest",
    "image_entries", "sized_random_layer", "zstd_bytes", "GZIP_LAYER", "TAR_LAYER", "ZSTD_LAYER",
]
