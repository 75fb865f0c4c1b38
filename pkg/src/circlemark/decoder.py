"""Minimum-distance message recovery.

The detector re-derives each step's shared secret, strips it from the
emitted token's angle to get a noisy estimate of the codeword-symbol
angle, and scores every candidate message by the summed (optionally
warped) arc distance between its codeword angles and those estimates. The
candidate with the smallest total wins; ties break to the numerically
smallest message. With the exact-coupling geometry and the
f(d) = -log(1 - d/d_max) warp, this summed-distance rule is exactly
maximum-likelihood decoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circle import CircleParams, TWO_PI, angular_distance, wrap
from .errors import CapabilityError, DecodeFailureError, ParameterError
from .modcode import (
    MAX_MESSAGE_BITS,
    CodeParams,
    GeneratorMatrix,
    Message,
    encode_all_messages,
    make_generator,
)
from .sideinfo import MasterKey, StepSecret, derive_step


@dataclass(frozen=True)
class DistanceFn:
    """Non-decreasing warp applied to each per-step arc distance."""

    kind: str  # "identity" or "log_ml"
    d_max: float | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "log_ml"):
            raise ParameterError(f"unknown distance kind {self.kind!r}")
        if self.kind == "log_ml" and not (self.d_max and self.d_max > 0):
            raise ParameterError("log_ml distance needs d_max > 0")

    def apply(self, d: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.asarray(d, dtype=np.float64)
        x = 1.0 - np.asarray(d, dtype=np.float64) / self.d_max
        out = np.full_like(x, np.inf)
        pos = x > 0
        out[pos] = -np.log(x[pos])
        return out


def identity_distance() -> DistanceFn:
    return DistanceFn(kind="identity")


def log_ml_distance(N: int) -> DistanceFn:
    """Likelihood-matched warp for the exact-coupling mode; d_max = pi - pi/(2N)."""
    return DistanceFn(kind="log_ml", d_max=math.pi - math.pi / (2 * N))


@dataclass(frozen=True)
class DecodeResult:
    message: Message
    score: float
    margin: float
    per_symbol_distances: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "message_bits": [int(b) for b in self.message.bits],
            "message_int": self.message.as_int(),
            "score": self.score,
            "margin": self.margin,
        }


def recover_symbol_angle(token: int, secret: StepSecret, params: CircleParams) -> float:
    """Angle estimate of the embedded symbol: token angle minus the key angle."""
    if not 0 <= token < params.N:
        raise ParameterError(f"token {token} out of range [0, {params.N})")
    return float(
        wrap(TWO_PI * int(secret.perm[token]) / params.N - TWO_PI * secret.v / params.r)
    )


def recover_symbol_angles(tokens: np.ndarray, secrets, params: CircleParams) -> np.ndarray:
    perm_pos = np.array(
        [int(secrets[t].perm[tok]) for t, tok in enumerate(tokens)], dtype=np.float64
    )
    vs = np.array([s.v for s in secrets], dtype=np.float64)
    return wrap(TWO_PI * perm_pos / params.N - TWO_PI * vs / params.r)


def candidate_symbol_angles(symbols: np.ndarray, params: CircleParams) -> np.ndarray:
    return wrap(TWO_PI * np.asarray(symbols, dtype=np.float64) / params.p + params.phi)


def score_message(
    m: Message,
    tokens: np.ndarray,
    secrets,
    G: GeneratorMatrix,
    f: DistanceFn,
    params: CircleParams,
) -> float:
    """Total warped distance D for one candidate message over a (prefix) trace."""
    n = len(tokens)
    if n == 0:
        return 0.0
    if len(secrets) < n or G.entries.shape[1] < n:
        raise ParameterError("secrets/generator shorter than the token sequence")
    symbols = (m.bits @ G.entries[:, :n]) % G.params.p
    chat = recover_symbol_angles(np.asarray(tokens), secrets, params)
    cang = candidate_symbol_angles(symbols, params)
    return float(f.apply(angular_distance(chat, cang)).sum())


def _distance_table(chat: np.ndarray, f: DistanceFn, params: CircleParams) -> np.ndarray:
    """f(d(chat_t, angle of symbol s)) for every step t and symbol s: shape (n, p)."""
    sang = candidate_symbol_angles(np.arange(params.p), params)
    return f.apply(angular_distance(chat[:, None], sang[None, :]))


_GROUP_INDEX_CAP = 1 << 16  # group positions while p^g stays a gatherable table


def _group_width(p: int) -> int:
    g = 1
    while p ** (g + 1) <= _GROUP_INDEX_CAP:
        g += 1
    return g


@lru_cache(maxsize=8)
def _grouped_codewords(params: CodeParams, n: int) -> tuple[tuple[int, int, np.ndarray], ...]:
    """Codeword symbols for all 2^k messages, folded g positions at a time.

    Scoring all messages gathers from a per-group lookup table of size p^g, so
    fewer, wider gathers replace n per-position ones. Returns tuples of
    (start position, group length, (2^k,) combined-index column) per group.
    """
    G = make_generator(params)
    cw = encode_all_messages(np.asarray(G.entries[:, :n]), params.p)
    p, g = params.p, _group_width(params.p)
    groups = []
    for start in range(0, n, g):
        width = min(g, n - start)
        idx = cw[:, start].astype(np.int64)
        for j in range(1, width):
            idx = idx * p + cw[:, start + j]
        dtype = np.uint16 if p**width <= _GROUP_INDEX_CAP else np.int64
        groups.append((start, width, np.ascontiguousarray(idx.astype(dtype))))
    return tuple(groups)


def _group_table(ftab: np.ndarray, start: int, width: int) -> np.ndarray:
    """Summed distance lookup over a position group: entry [s_0,...,s_{w-1}] flattened."""
    table = ftab[start]
    for j in range(1, width):
        table = (table[:, None] + ftab[start + j][None, :]).ravel()
    return table


def decode_with_secrets(
    tokens: np.ndarray,
    secrets,
    code: CodeParams,
    f: DistanceFn,
    params: CircleParams,
) -> DecodeResult:
    """Exhaustive minimum-distance decode given explicit per-step secrets."""
    if code.k > MAX_MESSAGE_BITS:
        raise CapabilityError(f"exhaustive decoding capped at k <= {MAX_MESSAGE_BITS}")
    tokens = np.asarray(tokens, dtype=np.int64)
    n = int(tokens.size)
    n_msgs = 1 << code.k
    if n == 0:
        scores = np.zeros(n_msgs)
        chat = np.empty(0)
    else:
        chat = recover_symbol_angles(tokens, secrets, params)
        ftab = _distance_table(chat, f, params)
        scores = np.zeros(n_msgs)
        for start, width, idx in _grouped_codewords(code, n):
            scores += _group_table(ftab, start, width)[idx]
    best = int(np.argmin(scores))  # first minimum = smallest message value
    best_score = float(scores[best])
    if math.isinf(best_score):
        raise DecodeFailureError("every candidate message scored +inf")
    if n_msgs > 1:
        two = np.partition(scores, 1)[:2]
        margin = float(two[1] - two[0])
    else:
        margin = 0.0
    message = Message.from_int(best, code.k)
    if n:
        symbols = (message.bits @ make_generator(code).entries[:, :n]) % code.p
        dists = angular_distance(chat, candidate_symbol_angles(symbols, params))
    else:
        dists = np.empty(0)
    return DecodeResult(
        message=message, score=best_score, margin=margin, per_symbol_distances=dists
    )


def decode(
    tokens: np.ndarray, mk: MasterKey, cfg, f: DistanceFn | None = None
) -> DecodeResult:
    """Re-derive secrets from the master key and decode a (prefix of a) trace."""
    f = f or identity_distance()
    tokens = np.asarray(tokens, dtype=np.int64)
    secrets = [
        derive_step(mk, t, cfg.circle.N, cfg.circle.r) for t in range(1, tokens.size + 1)
    ]
    return decode_with_secrets(tokens, secrets, cfg.code, f, cfg.circle)


def bit_accuracy(m_true: Message, m_hat: Message) -> float:
    """Fraction of positions where the decoded bits match the embedded ones."""
    if len(m_true) != len(m_hat):
        raise ParameterError("messages must have equal length")
    return float((m_true.bits == m_hat.bits).mean())
