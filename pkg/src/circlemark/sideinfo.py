"""Shared per-step randomness derived from a secret master key.

Each generation step t gets a key value v_t uniform on [0:r-1] and a fresh
permutation of the token vocabulary. Both are re-derivable by the detector
from the same 256-bit master key and stream id, so nothing about them is
transmitted. Draws are keyed by the step index, not by generated text; a
context-hash mode (window of previous token ids folded into the domain) is
available behind a flag for experimentation but is not part of the
verified configuration.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .prf import PrfStream

KEY_ENV_VAR = "CIRCLEMARK_KEY"
_KEY_BYTES = 32


@dataclass(frozen=True)
class MasterKey:
    key: bytes  # 256-bit secret
    stream_id: int = 0  # distinguishes generation sessions under one key

    def __post_init__(self):
        if len(self.key) != _KEY_BYTES:
            raise ParameterError(f"master key must be {_KEY_BYTES} bytes")
        if not 0 <= self.stream_id < (1 << 64):
            raise ParameterError("stream_id must fit in 64 bits")

    @classmethod
    def from_hex(cls, hex_key: str, stream_id: int = 0) -> "MasterKey":
        return cls(key=bytes.fromhex(hex_key), stream_id=stream_id)

    @classmethod
    def from_env(cls, stream_id: int = 0, var: str = KEY_ENV_VAR) -> "MasterKey":
        raw = os.environ.get(var)
        if raw is None:
            raise ParameterError(f"environment variable {var} is not set")
        return cls.from_hex(raw.strip(), stream_id=stream_id)

    @classmethod
    def from_seed(cls, seed: int, stream_id: int = 0) -> "MasterKey":
        """Expand an integer seed into a full-width key (experiments only)."""
        key = hashlib.blake2b(
            b"circlemark/master-from-seed/v1" + int(seed).to_bytes(16, "big", signed=False),
            digest_size=_KEY_BYTES,
        ).digest()
        return cls(key=key, stream_id=stream_id)


@dataclass(frozen=True)
class StepSecret:
    v: int
    perm: np.ndarray  # permutation of [0:N-1]
    t: int

    def __post_init__(self):
        self.perm.setflags(write=False)


def _domain(mk: MasterKey, t: int, tag: bytes, context: bytes = b"") -> bytes:
    return (
        b"step/v1;"
        + mk.stream_id.to_bytes(8, "big")
        + t.to_bytes(8, "big")
        + tag
        + context
    )


def derive_step(
    mk: MasterKey, t: int, N: int, r: int, context: tuple[int, ...] | None = None
) -> StepSecret:
    """Key value and vocabulary permutation for step t (t >= 1).

    With ``context`` set (token ids of a trailing window), the draw is keyed
    by the window contents instead of being a pure function of t.
    """
    if t < 1:
        raise ParameterError("step index t starts at 1")
    ctx = b""
    if context is not None:
        ctx = b"ctx" + b"".join(int(x).to_bytes(4, "big") for x in context)
    v_stream = PrfStream(mk.key, _domain(mk, t, b"V", ctx))
    v = v_stream.uniform(r)
    p_stream = PrfStream(mk.key, _domain(mk, t, b"P", ctx))
    perm = p_stream.shuffle(N)
    return StepSecret(v=v, perm=perm, t=t)


def derive_steps(mk: MasterKey, n: int, N: int, r: int) -> list[StepSecret]:
    return [derive_step(mk, t, N, r) for t in range(1, n + 1)]


def sampling_seed_for_stream(mk: MasterKey) -> int:
    """Deterministic sampling seed for a generation session.

    The sampler's randomness is a separate stream from the side info; deriving
    it from (key, stream_id) keeps stdio-driven generations reproducible
    without shipping an extra seed across the wire.
    """
    h = hashlib.blake2b(
        b"sampling/v1" + mk.stream_id.to_bytes(8, "big"), key=mk.key, digest_size=8
    )
    return int.from_bytes(h.digest(), "big")
