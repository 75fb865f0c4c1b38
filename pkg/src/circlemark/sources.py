"""Synthetic and replayed token-distribution streams.

These stand in for the language model: each source yields one probability
vector over the vocabulary per step. Synthetic kinds are i.i.d. across
steps and deterministic per (spec, t); the replay kind plays back a
recorded stream (e.g. captured from a live model through the bridge).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, StreamError
from .transport import TokenDistribution

KINDS = ("p2_uniform", "dirichlet", "topk_shaped", "replay")


@dataclass(frozen=True)
class SourceSpec:
    kind: str
    N: int
    alpha: float = 0.3
    top_k: int | None = None
    temperature: float = 1.0
    replay_path: str | None = None
    source_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown source kind {self.kind!r}")
        if self.N < 2:
            raise ParameterError("N must be >= 2")
        if self.alpha <= 0:
            raise ParameterError("alpha must be positive")
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")
        if self.top_k is not None and not 1 <= self.top_k <= self.N:
            raise ParameterError("top_k must be in [1, N]")
        if self.kind == "replay" and not self.replay_path:
            raise ParameterError("replay source needs replay_path")
        if self.source_seed < 0:
            raise ParameterError("source_seed must be nonnegative")


def pair_from_index(N: int, idx) -> tuple[np.ndarray, np.ndarray]:
    """Unrank pair index into (i, j), i < j, ordered (0,1),(0,2),...,(1,2),..."""
    idx = np.asarray(idx, dtype=np.int64)
    counts = np.arange(N - 1, 0, -1, dtype=np.int64)
    cum = np.cumsum(counts)
    i = np.searchsorted(cum, idx, side="right")
    base = np.where(i > 0, cum[np.maximum(i - 1, 0)], 0)
    j = i + 1 + (idx - base)
    return i, j


def shape_logits(
    logits: np.ndarray, temperature: float = 1.0, top_k: int | None = None
) -> np.ndarray:
    """softmax(logits / temperature) truncated to the top_k largest and renormalized."""
    logits = np.asarray(logits, dtype=np.float64) / temperature
    logits = logits - logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return truncate_top_k(probs, top_k)


def truncate_top_k(probs: np.ndarray, top_k: int | None) -> np.ndarray:
    if top_k is None or top_k >= probs.size:
        return probs
    keep = np.argsort(probs, kind="stable")[-top_k:]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


class DistributionSource:
    """One instance drives one generated sequence."""

    iid = True

    def __init__(self, spec: SourceSpec):
        self.spec = spec

    def next_distribution(self, t: int, history=None) -> TokenDistribution:
        raise NotImplementedError


class P2UniformSource(DistributionSource):
    """Uniform-on-two-tokens distributions with the pair uniform over all C(N,2)."""

    def next_distribution(self, t, history=None):
        rng = _step_rng(self.spec.source_seed, t)
        n_pairs = self.spec.N * (self.spec.N - 1) // 2
        i, j = pair_from_index(self.spec.N, int(rng.integers(n_pairs)))
        return TokenDistribution.two_point(self.spec.N, int(i), int(j))


class DirichletSource(DistributionSource):
    def next_distribution(self, t, history=None):
        rng = _step_rng(self.spec.source_seed, t)
        probs = rng.dirichlet(np.full(self.spec.N, self.spec.alpha))
        probs /= probs.sum()
        return TokenDistribution.from_probs(probs)


class TopKSource(DistributionSource):
    """Dirichlet draw passed through temperature and top-k shaping."""

    def next_distribution(self, t, history=None):
        rng = _step_rng(self.spec.source_seed, t)
        probs = rng.dirichlet(np.full(self.spec.N, self.spec.alpha))
        if self.spec.temperature != 1.0:
            probs = np.power(probs, 1.0 / self.spec.temperature)
        probs /= probs.sum()
        probs = truncate_top_k(probs, self.spec.top_k)
        return TokenDistribution.from_probs(probs / probs.sum())


class ReplaySource(DistributionSource):
    """Plays back newline-delimited JSON records of per-step distributions.

    Record forms: {"t": int, "probs": [...]} with nonnegative weights, or
    {"t": int, "logits": [...], "temperature": float, "top_k": int} which is
    shaped on read. Records must arrive in step order.
    """

    iid = False

    def __init__(self, spec: SourceSpec):
        super().__init__(spec)
        self._lines = iter(Path(spec.replay_path).read_text().splitlines())

    def next_distribution(self, t, history=None):
        for line in self._lines:
            line = line.strip()
            if line:
                break
        else:
            raise StreamError(f"replay stream exhausted before step {t}")
        record = json.loads(line)
        if int(record["t"]) != t:
            raise StreamError(f"replay record t={record['t']} does not match step {t}")
        if "probs" in record:
            probs = np.asarray(record["probs"], dtype=np.float64)
            if probs.size != self.spec.N:
                raise StreamError(f"replay probs length {probs.size} != N={self.spec.N}")
            if probs.min() < 0:
                raise StreamError("replay probs must be nonnegative")
            probs = probs / probs.sum()
        else:
            probs = shape_logits(
                record["logits"],
                temperature=float(record.get("temperature", 1.0)),
                top_k=record.get("top_k"),
            )
        return TokenDistribution.from_probs(probs)


_SOURCE_CLASSES = {
    "p2_uniform": P2UniformSource,
    "dirichlet": DirichletSource,
    "topk_shaped": TopKSource,
    "replay": ReplaySource,
}


def make_source(spec: SourceSpec) -> DistributionSource:
    return _SOURCE_CLASSES[spec.kind](spec)


def _step_rng(source_seed: int, t: int) -> np.random.Generator:
    # keyed per step so draws are identical regardless of how many steps ran before
    return np.random.default_rng(np.random.SeedSequence([int(source_seed), int(t)]))
