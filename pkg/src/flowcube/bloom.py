"""Per-level Bloom filters over summarized node ids.

A filter answers "was (level, cell) summarized?" with no false negatives,
so streaming edge filtration can never drop a real edge; a small
false-positive surplus is tolerated and reconciled at pack time.

File format (one filter per level): magic ``BLM1``, u32 level, u64 m,
u32 k, u64 n, then ``ceil(m/8)`` bytes of bit array, LSB-first within
each byte, bytes in little-endian (ascending bit index) order.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from typing import Iterable, Iterator

_MAGIC = b"BLM1"
_HEADER = struct.Struct("<4sIQIQ")
_LN2 = math.log(2.0)


def node_key(level: int, cell: int) -> bytes:
    return b"%d:%d" % (level, cell)


def _hash_pair(key: bytes) -> tuple[int, int]:
    # Two independent 64-bit halves of one 128-bit digest drive the
    # double-hashing family h_i = h1 + i*h2 (mod m).
    digest = hashlib.blake2b(key, digest_size=16).digest()
    return (
        int.from_bytes(digest[:8], "little"),
        int.from_bytes(digest[8:], "little"),
    )


class BloomFilter:
    __slots__ = ("m", "k", "n_inserted", "target_p", "_bits")

    def __init__(self, m: int, k: int, target_p: float | None = None):
        if m <= 0 or k <= 0:
            raise ValueError("m and k must be positive")
        self.m = m
        self.k = k
        self.n_inserted = 0
        self.target_p = target_p
        self._bits = bytearray((m + 7) // 8)

    @classmethod
    def sized_for(cls, n: int, p: float) -> "BloomFilter":
        """Optimal (m, k) for n keys at false-positive rate p."""
        if not 0.0 < p < 1.0:
            raise ValueError(f"target fp rate must be in (0, 1), got {p}")
        if n < 0:
            raise ValueError("n must be non-negative")
        if n == 0:
            # Degenerate always-false filter: no bit is ever set.
            return cls(8, 1, target_p=p)
        m = math.ceil(-n * math.log(p) / (_LN2 * _LN2))
        k = max(1, round((m / n) * _LN2))
        return cls(m, k, target_p=p)

    def insert(self, key: bytes) -> None:
        h1, h2 = _hash_pair(key)
        bits = self._bits
        for i in range(self.k):
            idx = (h1 + i * h2) % self.m
            bits[idx >> 3] |= 1 << (idx & 7)
        self.n_inserted += 1

    def member(self, key: bytes) -> bool:
        h1, h2 = _hash_pair(key)
        bits = self._bits
        for i in range(self.k):
            idx = (h1 + i * h2) % self.m
            if not bits[idx >> 3] & (1 << (idx & 7)):
                return False
        return True

    __contains__ = member

    def to_bytes(self, level: int) -> bytes:
        header = _HEADER.pack(_MAGIC, level, self.m, self.k, self.n_inserted)
        return header + bytes(self._bits)

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple[int, "BloomFilter"]:
        if len(blob) < _HEADER.size:
            raise ValueError("truncated bloom filter blob")
        magic, level, m, k, n = _HEADER.unpack_from(blob)
        if magic != _MAGIC:
            raise ValueError(f"bad bloom filter magic {magic!r}")
        payload = blob[_HEADER.size:]
        expected = (m + 7) // 8
        if len(payload) != expected:
            raise ValueError(f"bloom bit array length {len(payload)}, expected {expected}")
        filt = cls(m, k)
        filt._bits = bytearray(payload)
        filt.n_inserted = n
        return level, filt


def bloom_build(keys: Iterable[tuple[int, int]], p: float = 0.01) -> dict[int, BloomFilter]:
    """One filter per level, sized for the exact per-level key count."""
    per_level: dict[int, list[int]] = {}
    for level, cell in keys:
        per_level.setdefault(level, []).append(cell)
    filters = {}
    for level, cells in per_level.items():
        filt = BloomFilter.sized_for(len(cells), p)
        for cell in cells:
            filt.insert(node_key(level, cell))
        filters[level] = filt
    return filters


def _filter_path(directory: str | os.PathLike, level: int) -> str:
    return os.path.join(directory, f"level-{level:02d}.bloom")


def save_filters(filters: dict[int, BloomFilter], directory: str | os.PathLike) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for level in sorted(filters):
        path = _filter_path(directory, level)
        tmp = path + ".inprogress"
        with open(tmp, "wb") as fh:
            fh.write(filters[level].to_bytes(level))
        os.replace(tmp, path)
        paths.append(path)
    return paths


def load_filters(directory: str | os.PathLike) -> dict[int, BloomFilter]:
    filters: dict[int, BloomFilter] = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".bloom"):
            continue
        with open(os.path.join(directory, name), "rb") as fh:
            level, filt = BloomFilter.from_bytes(fh.read())
        filters[level] = filt
    return filters


def serialize_filters(filters: dict[int, BloomFilter]) -> dict[int, bytes]:
    return {level: filt.to_bytes(level) for level, filt in filters.items()}


def deserialize_filters(blobs: dict[int, bytes]) -> dict[int, BloomFilter]:
    out = {}
    for blob in blobs.values():
        level, filt = BloomFilter.from_bytes(blob)
        out[level] = filt
    return out


def iter_filter_probes(filt: BloomFilter, keys: Iterable[bytes]) -> Iterator[bool]:
    for key in keys:
        yield filt.member(key)
