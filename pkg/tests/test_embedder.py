"""Embedding pipeline: forced tokens, exact-coupling rule, unchanged marginals."""

import dataclasses
import json
import math

import numpy as np
import pytest
from scipy import stats

from circlemark.circle import CircleParams, angular_distance, channel_input, token_angles
from circlemark.embedder import (
    EmbedConfig,
    config_from_trace_dict,
    embed_sequence,
    embed_step,
    theorem2_config,
)
from circlemark.errors import ParameterError
from circlemark.modcode import CodeParams, Message
from circlemark.sideinfo import MasterKey, StepSecret, derive_step
from circlemark.sources import SourceSpec, make_source
from circlemark.transport import (
    SolverConfig,
    TokenDistribution,
    build_cost,
    conditional,
    mixture_over_keys,
    solve_plan,
)

MK = MasterKey.from_seed(77)


def general_config(N=16, p=8, r=32, k=3, n=32, phi=0.0, seed=5):
    return EmbedConfig(
        code=CodeParams(k=k, n=n, p=p, code_seed=seed),
        circle=CircleParams(N=N, p=p, r=r, phi=phi),
        sampling_seed=11,
    )


def test_config_validation():
    with pytest.raises(ParameterError):
        EmbedConfig(
            code=CodeParams(k=2, n=4, p=8, code_seed=0),
            circle=CircleParams(N=4, p=4, r=4),
        )
    with pytest.raises(ParameterError):
        EmbedConfig(
            code=CodeParams(k=2, n=4, p=4, code_seed=0),
            circle=CircleParams(N=4, p=4, r=8),
            theorem2_mode=True,
        )
    cfg = theorem2_config(N=8, k=2, n=16)
    assert cfg.circle.phi == pytest.approx(math.pi / 16)


def test_point_mass_returns_forced_token():
    cfg = general_config()
    rng = np.random.default_rng(0)
    Q = TokenDistribution.point_mass(16, 9)
    for c in range(4):
        secret = derive_step(MK, c + 1, 16, 32)
        token, diag = embed_step(Q, c, secret, cfg, rng)
        assert token == 9
        assert diag["support_entropy"] == 0.0


def test_theorem2_twopoint_matches_argmin_rule():
    N = 8
    cfg = theorem2_config(N=N, k=2, n=4)
    rng = np.random.default_rng(1)
    for t in range(1, 60):
        secret = derive_step(MK, t, N, N)
        i, j = (int(x) for x in rng.choice(N, 2, replace=False))
        Q = TokenDistribution.two_point(N, i, j)
        c = int(rng.integers(N))
        token, _ = embed_step(Q, c, secret, cfg, rng)
        z = channel_input(c, secret.v, cfg.circle)
        angles = token_angles(np.array([i, j]), secret.perm, cfg.circle)
        d = angular_distance(angles, z)
        assert token == (i if d[0] < d[1] else j)


def test_empirical_marginal_close_to_q():
    # resample v (and the plan column with it) many times: token frequencies ~ Q
    cfg = general_config(N=8, p=4, r=16)
    rng = np.random.default_rng(2)
    probs = np.array([0.4, 0.3, 0.15, 0.1, 0.05, 0.0, 0.0, 0.0])
    Q = TokenDistribution.from_probs(probs)
    secret = derive_step(MK, 1, 8, 16)
    plan = solve_plan(Q, build_cost(Q, 2, secret.perm, cfg.circle), cfg.solver)
    counts = np.zeros(8)
    draws = 100_000
    vs = rng.integers(0, 16, draws)
    for v in vs:
        cond = conditional(plan, int(v))
        u = rng.random()
        cum = np.cumsum(cond.probs)
        counts[np.searchsorted(cum, u * cum[-1], side="right").clip(0, 7)] += 1
    tv = 0.5 * np.abs(counts / draws - probs).sum()
    assert tv <= 0.02


def test_analytic_distortion_free_every_step():
    cfg = general_config(N=12, p=8, r=24)
    rng = np.random.default_rng(3)
    for t in range(1, 15):
        probs = rng.dirichlet(np.full(12, 0.3))
        Q = TokenDistribution.from_probs(probs / probs.sum())
        secret = derive_step(MK, t, 12, 24)
        c = int(rng.integers(8))
        plan = solve_plan(Q, build_cost(Q, c, secret.perm, cfg.circle), cfg.solver)
        assert np.abs(mixture_over_keys(plan) - Q.probs).max() <= 1e-9


def test_mixture_identical_across_symbols():
    cfg = general_config(N=10, p=8, r=16)
    rng = np.random.default_rng(4)
    probs = rng.dirichlet(np.full(10, 0.4))
    Q = TokenDistribution.from_probs(probs / probs.sum())
    secret = derive_step(MK, 1, 10, 16)
    mixtures = []
    for c in range(8):
        plan = solve_plan(Q, build_cost(Q, c, secret.perm, cfg.circle), cfg.solver)
        mixtures.append(mixture_over_keys(plan))
    spread = max(np.abs(m - mixtures[0]).max() for m in mixtures)
    assert spread <= 1e-9


def test_sampling_matches_conditional_chi_square():
    cfg = general_config(N=6, p=4, r=8)
    rng = np.random.default_rng(5)
    probs = np.array([0.3, 0.25, 0.2, 0.15, 0.1, 0.0])
    Q = TokenDistribution.from_probs(probs)
    secret = derive_step(MK, 2, 6, 8)
    c, v = 1, secret.v
    plan = solve_plan(Q, build_cost(Q, c, secret.perm, cfg.circle), cfg.solver)
    cond = conditional(plan, v)
    counts = np.zeros(6, dtype=np.int64)
    for _ in range(100_000):
        token, _ = embed_step(Q, c, secret, cfg, rng)
        counts[token] += 1
    expected = cond.probs * counts.sum()
    keep = expected > 5
    _, p_value = stats.chisquare(counts[keep], expected[keep] * counts[keep].sum() / expected[keep].sum())
    assert p_value > 0.01


def test_embed_sequence_deterministic():
    cfg = general_config(n=24)
    src_spec = SourceSpec(kind="dirichlet", N=16, alpha=0.3, source_seed=8)
    m = Message(np.array([1, 0, 1]))
    t1 = embed_sequence(m, make_source(src_spec), MK, cfg)
    t2 = embed_sequence(m, make_source(src_spec), MK, cfg)
    assert np.array_equal(t1.tokens, t2.tokens)
    assert np.array_equal(t1.z_indices, t2.z_indices)


def test_embed_sequence_single_step_point_mass(tmp_path):
    cfg = general_config(N=4, p=4, r=4, k=1, n=1)
    path = tmp_path / "replay.jsonl"
    path.write_text(json.dumps({"t": 1, "probs": [0, 0, 1.0, 0]}) + "\n")
    src = make_source(SourceSpec(kind="replay", N=4, replay_path=str(path)))
    trace = embed_sequence(Message(np.array([1])), src, MK, cfg)
    assert trace.tokens.tolist() == [2]


def test_trace_json_round_trip():
    cfg = general_config(n=10)
    src = make_source(SourceSpec(kind="p2_uniform", N=16, source_seed=4))
    trace = embed_sequence(Message(np.array([0, 1, 1])), src, MK, cfg)
    payload = json.loads(trace.to_json())
    assert payload["n"] == 10
    assert payload["k"] == 3
    assert "master" not in json.dumps(payload).lower()
    rebuilt = config_from_trace_dict(payload)
    assert rebuilt.code == dataclasses.replace(cfg.code, n=10)
    assert rebuilt.circle == cfg.circle


def test_iid_batch_path_equals_sequential_path():
    # the iid fast path must sample identical tokens to stepwise embedding
    cfg = theorem2_config(N=8, k=2, n=40, code_seed=3, sampling_seed=21)
    spec = SourceSpec(kind="p2_uniform", N=8, source_seed=11)
    fast = embed_sequence(Message(np.array([1, 1])), make_source(spec), MK, cfg)

    class SequentialWrapper:
        iid = False

        def __init__(self):
            self.inner = make_source(spec)

        def next_distribution(self, t, history=None):
            return self.inner.next_distribution(t)

    slow = embed_sequence(Message(np.array([1, 1])), SequentialWrapper(), MK, cfg)
    assert np.array_equal(fast.tokens, slow.tokens)
