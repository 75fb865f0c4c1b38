"""Angles on the unit circle for tokens, code symbols, and keys.

Token i (after the per-step permutation) sits at 2*pi*perm(i)/N, code
symbol c at 2*pi*c/p, and key v at 2*pi*v/r. The channel input combines
symbol and key angles plus a fixed offset phi. Distance is arc length,
i.e. the wrap-around metric on [0, 2*pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CircleParams:
    """Grid sizes: N tokens, p code symbols, r key values, offset phi (radians)."""

    N: int
    p: int
    r: int
    phi: float = 0.0

    def __post_init__(self):
        if self.N < 2:
            raise ParameterError("N must be >= 2")
        if self.p < 2:
            raise ParameterError("p must be >= 2")
        if self.r < 1:
            raise ParameterError("r must be >= 1")


def wrap(theta):
    """Reduce an angle (scalar or array) to [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


def token_angle(i: int, perm: np.ndarray, params: CircleParams) -> float:
    if not 0 <= i < params.N:
        raise ParameterError(f"token index {i} out of range [0, {params.N})")
    return float(wrap(TWO_PI * int(perm[i]) / params.N))


def token_angles(tokens: np.ndarray, perm: np.ndarray, params: CircleParams) -> np.ndarray:
    """Vectorized token_angle for an index array."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= params.N):
        raise ParameterError("token index out of range")
    return wrap(TWO_PI * perm[tokens].astype(np.float64) / params.N)


def channel_input(c: int, v: int, params: CircleParams) -> float:
    """Angle encoding code symbol c offset by key v: 2*pi*c/p + 2*pi*v/r + phi, wrapped."""
    if not 0 <= c < params.p:
        raise ParameterError(f"symbol {c} out of range [0, {params.p})")
    if not 0 <= v < params.r:
        raise ParameterError(f"key {v} out of range [0, {params.r})")
    return float(wrap(TWO_PI * c / params.p + TWO_PI * v / params.r + params.phi))


def key_grid(c: int, params: CircleParams) -> np.ndarray:
    """channel_input(c, v) for all v in [0:r-1] at once."""
    if not 0 <= c < params.p:
        raise ParameterError(f"symbol {c} out of range [0, {params.p})")
    v = np.arange(params.r, dtype=np.float64)
    return wrap(TWO_PI * c / params.p + TWO_PI * v / params.r + params.phi)


def angular_distance(a, b):
    """Arc-length distance min(|a-b|, 2*pi-|a-b|), in [0, pi]. Accepts arrays."""
    diff = np.abs(np.mod(a, TWO_PI) - np.mod(b, TWO_PI))
    return np.minimum(diff, TWO_PI - diff)


def theorem2_phi(N: int) -> float:
    """Offset pi/(2N) used in the exact-coupling mode (p = r = N)."""
    return math.pi / (2 * N)


def theorem2_rank(delta: int, N: int) -> int:
    """Closeness rank of a token delta grid slots ahead of the key-aligned slot.

    In the exact-coupling geometry (p = r = N, phi = pi/(2N)) the channel angle
    sits a quarter slot past grid position u, so token distances take the
    values pi*(2a-1)/(2N) for ranks a = 1..N with no ties. For
    delta = (slot - u) mod N the rank is 1 for delta=0, then alternates
    +1, -1, +2, -2, ... around the circle.
    """
    if not 0 <= delta < N:
        raise ParameterError("delta must be reduced mod N")
    if delta == 0:
        return 1
    if delta <= N // 2:
        return 2 * delta
    return 2 * (N - delta) + 1
