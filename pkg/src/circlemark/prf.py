"""Deterministic keyed randomness.

Both the watermarker and the detector must derive identical generator
matrices, per-step keys, and permutations from shared seeds, so all
randomness here comes from a pinned algorithm rather than a platform RNG:

* block ``i`` of a stream is ``BLAKE2b(domain || be64(i), key=key, digest_size=64)``,
* the block sequence is read as consecutive big-endian 64-bit words,
* bounded integers use rejection sampling (no modulo bias),
* permutations use a Fisher-Yates shuffle driven by those integers.

Everything is stdlib ``hashlib``, so the byte stream is identical on any
platform for the same ``(key, domain)``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_WORD = 8
_BLOCK_WORDS = 8  # blake2b digest_size in 64-bit words
_U64 = 1 << 64


def derive_key(seed: int, label: bytes) -> bytes:
    """Expand a 64-bit public seed into a 32-byte stream key for a labeled domain."""
    if not 0 <= seed < _U64:
        raise ValueError("seed must fit in 64 bits")
    return hashlib.blake2b(label + seed.to_bytes(8, "big"), digest_size=32).digest()


class PrfStream:
    """Counter-mode stream of unbiased integers keyed by (key, domain)."""

    def __init__(self, key: bytes, domain: bytes):
        if len(key) > 64:
            raise ValueError("blake2b keys are at most 64 bytes")
        self._key = key
        self._domain = domain
        self._counter = 0
        self._buf: list[int] = []

    def _refill(self, blocks: int = 1) -> None:
        words = []
        for _ in range(blocks):
            h = hashlib.blake2b(
                self._domain + self._counter.to_bytes(8, "big"),
                key=self._key,
                digest_size=_BLOCK_WORDS * _WORD,
            )
            d = h.digest()
            words.extend(
                int.from_bytes(d[j : j + _WORD], "big") for j in range(0, len(d), _WORD)
            )
            self._counter += 1
        # consumed from the front; extend at the back keeps stream order
        self._buf.extend(words)

    def next_u64(self) -> int:
        if not self._buf:
            self._refill()
        return self._buf.pop(0)

    def uniform(self, bound: int) -> int:
        """Uniform integer on [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        if bound == 1:
            return 0
        limit = (_U64 // bound) * bound  # == 2**64 when bound divides it: accept all
        while True:
            u = self.next_u64()
            if limit == _U64 or u < limit:
                return u % bound

    def shuffle(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of [0:n-1], unbiased."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.uniform(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def uniform_array(self, bound: int, size: int) -> np.ndarray:
        """Vectorized batch of uniform integers on [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        if bound == 1:
            return np.zeros(size, dtype=np.int64)
        limit = (_U64 // bound) * bound
        out = np.empty(size, dtype=np.uint64)
        filled = 0
        while filled < size:
            need = size - filled
            blocks = max(1, (need + _BLOCK_WORDS - 1) // _BLOCK_WORDS)
            raw = self._block_batch(blocks)
            accepted = raw if limit == _U64 else raw[raw < np.uint64(limit)]
            take = min(need, accepted.size)
            out[filled : filled + take] = accepted[:take]
            filled += take
        return (out % np.uint64(bound)).astype(np.int64)

    def _block_batch(self, blocks: int) -> np.ndarray:
        chunks = []
        for _ in range(blocks):
            h = hashlib.blake2b(
                self._domain + self._counter.to_bytes(8, "big"),
                key=self._key,
                digest_size=_BLOCK_WORDS * _WORD,
            )
            chunks.append(h.digest())
            self._counter += 1
        return np.frombuffer(b"".join(chunks), dtype=">u8").astype(np.uint64)
