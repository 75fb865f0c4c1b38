"""Per-token watermark embedding.

For step t with codeword symbol c and shared secret (v, perm): compute the
channel angle z, solve (or shortcut) the transport plan coupling the
model's distribution to the key grid, and sample the emitted token from
the plan's conditional at column v. The sampler's RNG is a separate
stream from the shared side info: the detector re-derives the side info
but never needs the sampling randomness.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .circle import CircleParams, theorem2_phi
from .errors import ParameterError, StreamError
from .modcode import CodeParams, Codeword, Message, encode, make_generator
from .sideinfo import MasterKey, StepSecret, derive_step
from .transport import (
    SolverConfig,
    TokenDistribution,
    build_cost,
    conditional,
    solve_plan,
    solve_plan_batch,
    solve_plan_twopoint,
)

TRACE_SCHEMA = "circlemark-trace/1"


@dataclass(frozen=True)
class EmbedConfig:
    code: CodeParams
    circle: CircleParams
    solver: SolverConfig = field(default_factory=SolverConfig)
    theorem2_mode: bool = False
    sampling_seed: int = 0

    def __post_init__(self):
        if self.circle.p != self.code.p:
            raise ParameterError("circle.p must equal code.p")
        if self.theorem2_mode:
            N = self.circle.N
            if not (self.circle.p == self.circle.r == N):
                raise ParameterError("theorem2_mode requires p = r = N")
            if not math.isclose(self.circle.phi, theorem2_phi(N), rel_tol=0, abs_tol=1e-15):
                raise ParameterError("theorem2_mode requires phi = pi/(2N)")


def theorem2_config(
    N: int, k: int, n: int, code_seed: int = 0, sampling_seed: int = 0
) -> EmbedConfig:
    """Exact-coupling configuration: p = r = N, quarter-slot offset."""
    return EmbedConfig(
        code=CodeParams(k=k, n=n, p=N, code_seed=code_seed),
        circle=CircleParams(N=N, p=N, r=N, phi=theorem2_phi(N)),
        theorem2_mode=True,
        sampling_seed=sampling_seed,
    )


@dataclass(frozen=True)
class WatermarkTrace:
    tokens: np.ndarray
    z_indices: np.ndarray  # key value v_t used at each step
    codeword: Codeword
    per_step_support_entropy: np.ndarray
    config: EmbedConfig
    stream_id: int

    def __post_init__(self):
        self.tokens.setflags(write=False)
        self.z_indices.setflags(write=False)
        self.per_step_support_entropy.setflags(write=False)

    def __len__(self) -> int:
        return int(self.tokens.size)

    def to_json_dict(self) -> dict:
        code, circ = self.config.code, self.config.circle
        return {
            "schema": TRACE_SCHEMA,
            "tokens": [int(x) for x in self.tokens],
            "n": len(self),
            "k": code.k,
            "p": code.p,
            "r": circ.r,
            "N": circ.N,
            "phi": circ.phi,
            "code_seed": code.code_seed,
            "stream_id": self.stream_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def config_from_trace_dict(d: dict, theorem2_mode: bool = False) -> EmbedConfig:
    code = CodeParams(k=int(d["k"]), n=int(d["n"]), p=int(d["p"]), code_seed=int(d["code_seed"]))
    circ = CircleParams(N=int(d["N"]), p=int(d["p"]), r=int(d["r"]), phi=float(d["phi"]))
    return EmbedConfig(code=code, circle=circ, theorem2_mode=theorem2_mode)


def _sample_from(probs: np.ndarray, support: np.ndarray, u: float) -> int:
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return int(support[min(idx, support.size - 1)])


def _is_twopoint_uniform(Q: TokenDistribution) -> bool:
    return Q.support.size == 2 and bool(
        np.allclose(Q.probs[Q.support], 0.5, rtol=0, atol=1e-12)
    )


def embed_step(
    Q: TokenDistribution,
    c: int,
    secret: StepSecret,
    cfg: EmbedConfig,
    rng: np.random.Generator,
) -> tuple[int, dict]:
    """Sample one watermarked token; returns (token, diagnostics)."""
    u = float(rng.random())  # one draw per step keeps replays aligned
    diag = {"support_entropy": Q.support_entropy()}
    if Q.support.size == 1:
        return int(Q.support[0]), diag
    if cfg.theorem2_mode and _is_twopoint_uniform(Q):
        plan = solve_plan_twopoint(Q, c, secret.perm, cfg.circle)
    else:
        cost = build_cost(Q, c, secret.perm, cfg.circle)
        plan = solve_plan(Q, cost, cfg.solver)
    cond = conditional(plan, secret.v)
    token = _sample_from(cond.probs[cond.support], cond.support, u)
    return token, diag


def embed_sequence(
    m: Message, source, mk: MasterKey, cfg: EmbedConfig
) -> WatermarkTrace:
    """Embed message m over cfg.code.n tokens drawn from the source.

    Autoregressive sources receive the sampled history; i.i.d. sources are
    batched through the vectorized transport solver, which changes nothing
    about the output (the sampler consumes randomness in step order either
    way).
    """
    G = make_generator(cfg.code)
    cw = encode(m, G)
    n = cfg.code.n
    rng = np.random.default_rng(cfg.sampling_seed)
    secrets = [derive_step(mk, t, cfg.circle.N, cfg.circle.r) for t in range(1, n + 1)]
    if getattr(source, "iid", False):
        tokens, entropies = _embed_iid(source, cw, secrets, cfg, rng)
    else:
        tokens = np.empty(n, dtype=np.int64)
        entropies = np.empty(n)
        history: list[int] = []
        for t in range(1, n + 1):
            Q = source.next_distribution(t, history)
            if Q is None:
                raise StreamError(f"source yielded nothing at step {t}")
            token, diag = embed_step(Q, int(cw.symbols[t - 1]), secrets[t - 1], cfg, rng)
            tokens[t - 1] = token
            entropies[t - 1] = diag["support_entropy"]
            history.append(token)
    return WatermarkTrace(
        tokens=tokens,
        z_indices=np.array([s.v for s in secrets], dtype=np.int64),
        codeword=cw,
        per_step_support_entropy=entropies,
        config=cfg,
        stream_id=mk.stream_id,
    )


def _embed_iid(source, cw: Codeword, secrets, cfg: EmbedConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    n = len(cw)
    Qs = [source.next_distribution(t) for t in range(1, n + 1)]
    us = rng.random(n)
    plans: dict[int, object] = {}
    general: list[int] = []
    for t0, Q in enumerate(Qs):
        if Q.support.size == 1:
            continue
        if cfg.theorem2_mode and _is_twopoint_uniform(Q):
            plans[t0] = solve_plan_twopoint(Q, int(cw.symbols[t0]), secrets[t0].perm, cfg.circle)
        else:
            general.append(t0)
    # batch the iterative solves, grouped by support size so shapes stack
    by_size: dict[int, list[int]] = {}
    for t0 in general:
        by_size.setdefault(Qs[t0].support.size, []).append(t0)
    for size, idxs in by_size.items():
        A = np.stack([Qs[t0].probs[Qs[t0].support] for t0 in idxs])
        costs = np.stack(
            [
                build_cost(Qs[t0], int(cw.symbols[t0]), secrets[t0].perm, cfg.circle).costs
                for t0 in idxs
            ]
        )
        joints = solve_plan_batch(A, costs, cfg.solver)
        for row, t0 in enumerate(idxs):
            plans[t0] = _PlanView(joints[row], Qs[t0].support, Qs[t0].n_vocab)
    tokens = np.empty(n, dtype=np.int64)
    entropies = np.empty(n)
    for t0, Q in enumerate(Qs):
        entropies[t0] = Q.support_entropy()
        if Q.support.size == 1:
            tokens[t0] = int(Q.support[0])
            continue
        plan = plans[t0]
        cond = conditional(plan, secrets[t0].v)
        tokens[t0] = _sample_from(cond.probs[cond.support], cond.support, float(us[t0]))
    return tokens, entropies


class _PlanView:
    """Duck-typed TransportPlan over a batch-solver row."""

    def __init__(self, joint: np.ndarray, row_tokens: np.ndarray, n_vocab: int):
        self.joint = joint
        self.row_tokens = row_tokens
        self.n_vocab = n_vocab

    @property
    def r(self) -> int:
        return int(self.joint.shape[1])
