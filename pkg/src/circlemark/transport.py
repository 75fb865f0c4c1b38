"""Coupling token distributions to channel angles by optimal transport.

Given the model's next-token distribution Q and the r possible channel
angles for a code symbol, we want the joint distribution over
(token, angle) that minimizes expected arc distance subject to the token
marginal being exactly Q and the angle marginal being exactly uniform.
The angle marginal matches the uniform shared key, so sampling a token
from the plan's conditional at the realized key leaves the average token
distribution untouched.

Plans are solved with entropic-regularized Sinkhorn iterations and then
projected onto the exact marginals by mass-redistribution rounding, so
the unchanged-marginal identity holds to machine precision rather than to
solver tolerance. Two-point distributions admit a deterministic
closed-form plan (each angle column sends its mass to the nearer of the
two tokens), which is also used as an oracle for the iterative path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circle import CircleParams, angular_distance, key_grid, token_angles
from .errors import ParameterError, SolverError, TieError

_SUM_TOL = 1e-12
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class TokenDistribution:
    """Probability vector over the full vocabulary plus its support indices."""

    probs: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        self.probs.setflags(write=False)
        self.support.setflags(write=False)

    @classmethod
    def from_probs(cls, probs) -> "TokenDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1:
            raise ParameterError("probs must be a 1-D vector")
        if probs.min() < 0:
            raise ParameterError("probs must be nonnegative")
        total = probs.sum()
        if abs(total - 1.0) > _SUM_TOL:
            raise ParameterError(f"probs must sum to 1 (got {total!r})")
        return cls(probs=probs, support=np.flatnonzero(probs))

    @classmethod
    def two_point(cls, N: int, i: int, j: int) -> "TokenDistribution":
        if i == j:
            raise ParameterError("two-point support needs distinct tokens")
        probs = np.zeros(N)
        probs[i] = 0.5
        probs[j] = 0.5
        return cls.from_probs(probs)

    @classmethod
    def point_mass(cls, N: int, i: int) -> "TokenDistribution":
        probs = np.zeros(N)
        probs[i] = 1.0
        return cls.from_probs(probs)

    @property
    def n_vocab(self) -> int:
        return int(self.probs.size)

    def support_entropy(self) -> float:
        """Shannon entropy in bits over the support."""
        p = self.probs[self.support]
        return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class CostMatrix:
    costs: np.ndarray  # (N_eff, r) arc distances
    row_tokens: np.ndarray  # token id per row

    def __post_init__(self):
        self.costs.setflags(write=False)
        self.row_tokens.setflags(write=False)


@dataclass(frozen=True)
class TransportPlan:
    joint: np.ndarray  # (N_eff, r), rows sum to Q on support, columns to 1/r
    row_tokens: np.ndarray
    n_vocab: int

    def __post_init__(self):
        self.joint.setflags(write=False)
        self.row_tokens.setflags(write=False)

    @property
    def r(self) -> int:
        return int(self.joint.shape[1])


@dataclass(frozen=True)
class SolverConfig:
    """Sinkhorn knobs. epsilon=None scales regularization to 0.05 * mean cost.

    max_iters is sized so that skewed low-entropy marginals still reach the
    1e-8 residual; iterations are cheap at these shapes.
    """

    epsilon: float | None = None
    max_iters: int = 10_000
    tolerance: float = 1e-8

    def resolve_epsilon(self, costs: np.ndarray) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        mean = float(costs.mean())
        return 0.05 * mean if mean > 0 else 0.05


def build_cost(
    Q: TokenDistribution, c: int, perm: np.ndarray, params: CircleParams
) -> CostMatrix:
    """Arc distances from each supported token's angle to each key angle for symbol c."""
    if Q.support.size < 1:
        raise ParameterError("distribution has empty support")
    tok = token_angles(Q.support, perm, params)
    grid = key_grid(c, params)
    costs = angular_distance(tok[:, None], grid[None, :])
    return CostMatrix(costs=costs, row_tokens=Q.support.copy())


def round_to_marginals(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project an approximately-feasible nonnegative plan onto exact marginals.

    Scales rows then columns down to never exceed the targets, then spreads
    the leftover mass as a rank-one correction. Row sums land on ``a`` exactly
    (up to float addition), column sums on ``b``.
    """
    row = P.sum(axis=1)
    P = P * np.minimum(1.0, np.divide(a, row, out=np.ones_like(a), where=row > 0))[:, None]
    col = P.sum(axis=0)
    P = P * np.minimum(1.0, np.divide(b, col, out=np.ones_like(b), where=col > 0))[None, :]
    err_a = np.maximum(a - P.sum(axis=1), 0.0)
    err_b = np.maximum(b - P.sum(axis=0), 0.0)
    total_b = err_b.sum()
    if total_b > 0:
        P = P + np.outer(err_a, err_b) / total_b
    return P


def _sinkhorn_log(
    a: np.ndarray, b: np.ndarray, costs: np.ndarray, eps: float, cfg: SolverConfig
) -> np.ndarray:
    """Log-domain Sinkhorn; returns the (pre-rounding) plan or raises SolverError.

    After every column update the column marginal is exact, so convergence is
    judged by the row-marginal residual, which falls out of the row update's
    logsumexp for free.
    """
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    row_res = np.inf
    for _ in range(cfg.max_iters):
        S = _logsumexp((g[None, :] - costs) / eps, axis=1)
        row_res = np.abs(np.exp(f / eps + S) - a).max()
        if row_res <= cfg.tolerance:
            return np.exp((f[:, None] + g[None, :] - costs) / eps)
        f = eps * (log_a - S)
        g = eps * (log_b - _logsumexp((f[:, None] - costs) / eps, axis=0))
    raise SolverError(
        f"Sinkhorn did not reach tolerance {cfg.tolerance} in {cfg.max_iters} iterations "
        f"(row residual {row_res:.3e})",
        row_residual=float(row_res),
        col_residual=0.0,
    )


def _logsumexp(M: np.ndarray, axis: int) -> np.ndarray:
    mx = M.max(axis=axis, keepdims=True)
    out = np.log(np.exp(M - mx).sum(axis=axis)) + mx.squeeze(axis)
    return out


def solve_plan(Q: TokenDistribution, C: CostMatrix, cfg: SolverConfig | None = None) -> TransportPlan:
    """Entropic Sinkhorn solve followed by exact-marginal rounding."""
    cfg = cfg or SolverConfig()
    a = Q.probs[Q.support]
    r = C.costs.shape[1]
    b = np.full(r, 1.0 / r)
    if a.size == 1:
        joint = np.full((1, r), 1.0 / r)
        return TransportPlan(joint=joint, row_tokens=C.row_tokens.copy(), n_vocab=Q.n_vocab)
    eps = cfg.resolve_epsilon(C.costs)
    P = _sinkhorn_log(a, b, C.costs, eps, cfg)
    P = round_to_marginals(P, a, b)
    return TransportPlan(joint=P, row_tokens=C.row_tokens.copy(), n_vocab=Q.n_vocab)


def solve_plan_batch(
    A: np.ndarray, costs: np.ndarray, cfg: SolverConfig | None = None
) -> np.ndarray:
    """Solve a batch of independent instances with shared shapes.

    A is (B, N_eff) of row marginals, costs is (B, N_eff, r); column marginal
    is uniform. Runs the scaling iterations in the standard domain across the
    batch, retiring instances as they converge; any instance that underflows
    or stalls falls back to the single-instance log-domain solver. Returns
    the rounded (B, N_eff, r) plans.
    """
    cfg = cfg or SolverConfig()
    B, n_eff, r = costs.shape
    b = np.full(r, 1.0 / r)
    eps = cfg.resolve_epsilon(costs)
    plans = np.empty_like(costs)
    solved = np.zeros(B, dtype=bool)
    idx = np.arange(B)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        K = np.exp(-costs / eps)
        Kt = np.ascontiguousarray(K.transpose(0, 2, 1))
        A_act, K_act, Kt_act = A, K, Kt
        u = np.ones((B, n_eff))
        v = np.full((B, r), 1.0 / r)
        Kv = np.matmul(K_act, v[:, :, None])[:, :, 0]
        for it in range(1, cfg.max_iters + 1):
            u = A_act / Kv
            Ku = np.matmul(Kt_act, u[:, :, None])[:, :, 0]
            v = b[None, :] / Ku
            Kv = np.matmul(K_act, v[:, :, None])[:, :, 0]
            if it % 5 == 0 or it == cfg.max_iters:
                # column marginal is exact after the v update; rows judge convergence
                row_res = np.abs(u * Kv - A_act).max(axis=1)
                done = np.isfinite(row_res) & (row_res <= cfg.tolerance)
                if done.any():
                    sel = np.flatnonzero(done)
                    plans[idx[sel]] = u[sel, :, None] * K_act[sel] * v[sel, None, :]
                    solved[idx[sel]] = True
                    keep = ~done
                    if not keep.any():
                        break
                    idx = idx[keep]
                    A_act, K_act, Kt_act = A_act[keep], K_act[keep], Kt_act[keep]
                    u, v, Kv = u[keep], v[keep], Kv[keep]
    for i in np.flatnonzero(~solved):
        plans[i] = _sinkhorn_log(A[i], b, costs[i], eps, cfg)
    bad = ~np.isfinite(plans).all(axis=(1, 2))
    for i in np.flatnonzero(bad):
        plans[i] = _sinkhorn_log(A[i], b, costs[i], eps, cfg)
    return round_to_marginals_batch(plans, A, b)


def round_to_marginals_batch(P: np.ndarray, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized round_to_marginals over a (B, N_eff, r) stack."""
    row = P.sum(axis=2)
    scale = np.minimum(1.0, np.divide(A, row, out=np.ones_like(A), where=row > 0))
    P = P * scale[:, :, None]
    col = P.sum(axis=1)
    target = np.broadcast_to(b, col.shape)
    scale = np.minimum(1.0, np.divide(target, col, out=np.ones_like(col), where=col > 0))
    P = P * scale[:, None, :]
    err_a = np.maximum(A - P.sum(axis=2), 0.0)
    err_b = np.maximum(target - P.sum(axis=1), 0.0)
    total_b = err_b.sum(axis=1)
    safe = np.where(total_b > 0, total_b, 1.0)
    P = P + np.where(
        (total_b > 0)[:, None, None],
        err_a[:, :, None] * err_b[:, None, :] / safe[:, None, None],
        0.0,
    )
    return P


def solve_plan_twopoint(
    Q: TokenDistribution, c: int, perm: np.ndarray, params: CircleParams
) -> TransportPlan:
    """Deterministic plan for a uniform two-token distribution.

    Every key angle sends its full 1/r of mass to whichever of the two tokens
    is strictly nearer in arc distance. With the quarter-slot offset
    phi = pi/(2N) and p = r = N no angle is ever equidistant; any other
    geometry may produce a tie, which is an error here.
    """
    if Q.support.size != 2 or not np.allclose(Q.probs[Q.support], 0.5, atol=_SUM_TOL):
        raise ParameterError("two-point solver needs a uniform two-token distribution")
    i, j = (int(x) for x in Q.support)
    tok = token_angles(Q.support, perm, params)
    grid = key_grid(c, params)
    d = angular_distance(tok[:, None], grid[None, :])
    gap = d[0] - d[1]
    ties = np.abs(gap) <= _TIE_TOL
    if ties.any():
        z_idx = int(np.flatnonzero(ties)[0])
        raise TieError(
            f"tokens {i} and {j} are equidistant from channel angle index {z_idx} "
            f"(angle {grid[z_idx]:.6f} rad)"
        )
    r = grid.size
    joint = np.zeros((2, r))
    winners = (gap > 0).astype(np.int64)  # row 1 wins where token i is farther
    joint[winners, np.arange(r)] = 1.0 / r
    return TransportPlan(joint=joint, row_tokens=Q.support.copy(), n_vocab=Q.n_vocab)


def conditional(plan: TransportPlan, z_index: int) -> TokenDistribution:
    """Token distribution given the realized key column: r * joint[:, z]."""
    if not 0 <= z_index < plan.r:
        raise ParameterError(f"z index {z_index} out of range [0, {plan.r})")
    probs = np.zeros(plan.n_vocab)
    probs[plan.row_tokens] = plan.r * plan.joint[:, z_index]
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise SolverError(f"conditional mass {total!r} deviates from 1 beyond tolerance")
    return TokenDistribution(probs=probs / total, support=np.flatnonzero(probs))


def mixture_over_keys(plan: TransportPlan) -> np.ndarray:
    """Average of the conditionals over a uniform key: the plan's row sums.

    Equals the original token distribution exactly when the plan was rounded.
    """
    probs = np.zeros(plan.n_vocab)
    probs[plan.row_tokens] = plan.joint.sum(axis=1)
    return probs


def transport_cost(plan: TransportPlan, C: CostMatrix) -> float:
    return float((plan.joint * C.costs).sum())
