"""Random linear codes over the integers mod p.

A k-bit message selects a subset of the rows of a public generator matrix
G, and the codeword is their column-wise sum mod p. Entries of G are drawn
uniformly from [0:p-1] out of a keyed PRF stream, so watermarker and
detector reconstruct the identical matrix from the public ``code_seed``.

Entries are drawn column by column: the matrix for a shorter codeword
length is exactly a column prefix of the matrix for a longer one, which
lets a decoder score length-n' prefixes of a length-n generation without
a second code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .prf import PrfStream, derive_key

_GEN_LABEL = b"circlemark/generator/v1"

MAX_MESSAGE_BITS = 24  # exhaustive decoding enumerates 2^k candidates


@dataclass(frozen=True)
class CodeParams:
    """Public code description: k message bits -> n symbols over Z_p."""

    k: int
    n: int
    p: int
    code_seed: int

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.k > MAX_MESSAGE_BITS:
            raise ParameterError(f"k must be <= {MAX_MESSAGE_BITS} (exhaustive decoder cap)")
        if self.n < 1:
            raise ParameterError("n must be >= 1")
        if self.p < 2:
            raise ParameterError("p must be >= 2")

    def to_json_dict(self) -> dict:
        return {"k": self.k, "n": self.n, "p": self.p, "code_seed": self.code_seed}

    @classmethod
    def from_json_dict(cls, d: dict) -> "CodeParams":
        return cls(k=int(d["k"]), n=int(d["n"]), p=int(d["p"]), code_seed=int(d["code_seed"]))


@dataclass(frozen=True)
class GeneratorMatrix:
    entries: np.ndarray  # (k, n), values in [0:p-1]
    params: CodeParams

    def __post_init__(self):
        self.entries.setflags(write=False)


@dataclass(frozen=True)
class Message:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int64)
        if bits.ndim != 1 or bits.size < 1:
            raise ParameterError("message must be a non-empty bit vector")
        if not np.isin(bits, (0, 1)).all():
            raise ParameterError("message bits must be 0/1")
        object.__setattr__(self, "bits", bits)
        self.bits.setflags(write=False)

    def __len__(self) -> int:
        return int(self.bits.size)

    def as_int(self) -> int:
        """Bit i is the coefficient of 2^i (bit 0 is the least significant)."""
        return int((self.bits.astype(np.int64) << np.arange(len(self))).sum())

    @classmethod
    def from_int(cls, value: int, k: int) -> "Message":
        if not 0 <= value < (1 << k):
            raise ParameterError("message value out of range for k bits")
        return cls(np.array([(value >> i) & 1 for i in range(k)], dtype=np.int64))


@dataclass(frozen=True)
class Codeword:
    symbols: np.ndarray  # (n,), values in [0:p-1]

    def __post_init__(self):
        self.symbols.setflags(write=False)

    def __len__(self) -> int:
        return int(self.symbols.size)


def make_generator(params: CodeParams) -> GeneratorMatrix:
    """Draw the k x n generator matrix from the PRF stream keyed by code_seed.

    Entries come out of the stream in column-major order, so for fixed
    (k, p, code_seed) the matrix for n' < n is the first n' columns of the
    matrix for n.
    """
    stream = PrfStream(
        derive_key(params.code_seed, _GEN_LABEL),
        domain=b"k=%d;p=%d" % (params.k, params.p),
    )
    flat = stream.uniform_array(params.p, params.k * params.n)
    entries = flat.reshape(params.n, params.k).T.copy()
    return GeneratorMatrix(entries=entries, params=params)


def encode(m: Message, G: GeneratorMatrix) -> Codeword:
    """Codeword symbols: sum of the rows of G selected by the message bits, mod p."""
    if len(m) != G.params.k:
        raise ParameterError(f"message has {len(m)} bits, code expects {G.params.k}")
    symbols = (m.bits @ G.entries) % G.params.p
    return Codeword(symbols=symbols.astype(np.int64))


def encode_all_messages(G: np.ndarray, p: int, dtype=np.uint8) -> np.ndarray:
    """Codewords of every message in {0,1}^k, ordered by message integer value.

    Row m (m read with bit i = coefficient of 2^i) is encode(m, G). Built by
    doubling: messages [2^i : 2^{i+1}) are messages [0 : 2^i) with row i added.
    """
    k, n = G.shape
    if p > np.iinfo(dtype).max // 2:
        dtype = np.int64
    out = np.zeros((1 << k, n), dtype=dtype)
    g = G.astype(dtype)
    for i in range(k):
        half = 1 << i
        out[half : 2 * half] = (out[:half] + g[i]) % dtype(p)
    return out
