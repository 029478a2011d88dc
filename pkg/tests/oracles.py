"""Independent reference implementations the tests compare against.

None of these share code with the package under test.
"""

import struct
import subprocess
from datetime import datetime, timezone

# SHA-256, straight from FIPS 180-4

_K = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
]
_H0 = [0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19]
_M = 0xFFFFFFFF


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & _M


def sha256_hex(data: bytes) -> str:
    msg = bytes(data) + b"\x80"
    msg += b"\x00" * ((56 - len(msg) % 64) % 64)
    msg += struct.pack(">Q", len(data) * 8)
    h = list(_H0)
    for off in range(0, len(msg), 64):
        w = list(struct.unpack(">16I", msg[off:off + 64]))
        for i in range(16, 64):
            s0 = _rotr(w[i - 15], 7) ^ _rotr(w[i - 15], 18) ^ (w[i - 15] >> 3)
            s1 = _rotr(w[i - 2], 17) ^ _rotr(w[i - 2], 19) ^ (w[i - 2] >> 10)
            w.append((w[i - 16] + s0 + w[i - 7] + s1) & _M)
        a, b, c, d, e, f, g, hh = h
        for i in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g)) + _K[i] + w[i]) & _M
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & _M
            a, b, c, d, e, f, g, hh = (t1 + t2) & _M, a, b, c, (d + t1) & _M, e, f, g
        h = [(x + y) & _M for x, y in zip(h, [a, b, c, d, e, f, g, hh])]
    return "".join(f"{x:08x}" for x in h)


def sha256sum_file(path) -> str:
    """Digest from the coreutils binary."""
    out = subprocess.run(["sha256sum", str(path)], check=True, capture_output=True, text=True).stdout
    return out.split()[0]


# Archive listing via the system tar binary

_TYPES = {"-": "file", "d": "dir", "l": "symlink", "h": "hardlink"}


def tar_listing(path):
    """(path, entry_type, size, mtime, mode) per member, as GNU tar reports it."""
    out = subprocess.run(
        ["tar", "--list", "--verbose", "--numeric-owner", "--full-time", "--utc", "-f", str(path)],
        check=True, capture_output=True, text=True, env={"TZ": "UTC", "LC_ALL": "C"},
    ).stdout
    rows = []
    for line in out.splitlines():
        perms, _owner, size, date, time, name = line.split(None, 5)
        etype = "hardlink" if " link to " in name else _TYPES.get(perms[0], "other")
        name = name.split(" -> ")[0].split(" link to ")[0].rstrip("/")
        mode = 0
        for i, ch in enumerate(perms[1:10]):
            if ch not in "-ST":
                mode |= 1 << (8 - i)
        for pos, bit in ((3, 0o4000), (6, 0o2000), (9, 0o1000)):
            if perms[pos] in "sStT":
                mode |= bit
        stamp = datetime.strptime(f"{date} {time}", "%Y-%m-%d %H:%M:%S").replace(tzinfo=timezone.utc)
        rows.append((name, etype, int(size) if etype == "file" else 0, int(stamp.timestamp()), mode))
    return rows


# File-level diff by exhaustive pairing

def brute_force_diff(entries_a, entries_b):
    """{(path, kind)} plus an ordering flag, by comparing every pair of entries.

    Each entry is a dict with path, type, content, mtime, mode, uid, gid; the
    last entry for a path wins.
    """
    def live(entries):
        out = []
        for i, e in enumerate(entries):
            if all(e["path"] != later["path"] for later in entries[i + 1:]):
                out.append(e)
        return out

    la, lb = live(entries_a), live(entries_b)
    result = set()
    for ea in la:
        match = None
        for eb in lb:
            if eb["path"] == ea["path"]:
                match = eb
        if match is None:
            result.add((ea["path"], "removed"))
        elif ea["type"] != match["type"]:
            result.add((ea["path"], "type-changed"))
        elif ea["content"] != match["content"]:
            result.add((ea["path"], "content"))
        elif any(ea[k] != match[k] for k in ("mtime", "mode", "uid", "gid")):
            result.add((ea["path"], "metadata-only"))
    for eb in lb:
        if not any(ea["path"] == eb["path"] for ea in la):
            result.add((eb["path"], "added"))
    paths_a = [e["path"] for e in la]
    paths_b = [e["path"] for e in lb]
    reordered = sorted(paths_a) == sorted(paths_b) and paths_a != paths_b
    return result, reordered


def half_up_percent(count: int, denom: int) -> str:
    """Integer-only half-up rounding of count/denom*100 to one decimal."""
    tenths = (count * 2000 + denom) // (2 * denom)
    return f"{tenths // 10}.{tenths % 10}"
