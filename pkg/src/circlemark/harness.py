"""Monte-Carlo experiment engine and CSV reporting.

Each trial draws a fresh message and master key from the experiment seed,
embeds once at the longest requested length, and decodes every prefix in
the length grid. Trials are independent and keyed by index, so they can
run in a process pool and still aggregate deterministically; identical
specs produce byte-identical CSV files (timings are reported in memory
but never written to the CSV).
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .capacity import capacity_closed_form
from .circle import theorem2_rank
from .decoder import DistanceFn, bit_accuracy, decode, identity_distance, log_ml_distance
from .embedder import EmbedConfig, embed_sequence, theorem2_config
from .errors import (
    DecodeFailureError,
    ParameterError,
    SolverError,
    StreamError,
    TieError,
)
from .modcode import Message
from .sideinfo import MasterKey, derive_step
from .sources import SourceSpec, make_source
from .transport import (
    TokenDistribution,
    build_cost,
    mixture_over_keys,
    solve_plan,
    solve_plan_batch,
)

CSV_SCHEMA_VERSION = "1"
CSV_COLUMNS = ("n", "k", "p", "r", "metric", "value", "sem", "trials", "seed", "schema_version")

_TRIAL_ERRORS = (SolverError, TieError, DecodeFailureError, StreamError)


@dataclass(frozen=True)
class ExperimentSpec:
    embed: EmbedConfig
    source: SourceSpec
    distance: DistanceFn = field(default_factory=identity_distance)
    trials: int = 100
    n_grid: tuple[int, ...] = (64,)
    master_seed: int = 0
    output_path: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        grid = tuple(self.n_grid)
        if list(grid) != sorted(grid):
            raise ParameterError("n_grid must be sorted ascending")
        if grid and max(grid) > self.embed.code.n:
            raise ParameterError("max(n_grid) must be <= code.n")
        object.__setattr__(self, "n_grid", grid)


@dataclass(frozen=True)
class ResultRow:
    n: int
    k: int
    p: int
    r: int
    message_accuracy: float
    bit_accuracy: float
    sem_message: float
    sem_bit: float
    mean_margin: float
    wall_time: float


@dataclass(frozen=True)
class ExperimentResult:
    rows: list[ResultRow]
    trials_included: int
    excluded_trials: int

    def __iter__(self):
        return iter(self.rows)


def _sem(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def _trial_key(master_seed: int, trial: int, salt: int) -> int:
    return (int(master_seed) << 34) + (int(trial) << 4) + salt


def _trial_config(spec: ExperimentSpec, trial: int) -> tuple[Message, MasterKey, EmbedConfig, SourceSpec]:
    rng = np.random.default_rng(np.random.SeedSequence([spec.master_seed, trial, 0xA1]))
    m = Message(rng.integers(0, 2, spec.embed.code.k))
    mk = MasterKey.from_seed(_trial_key(spec.master_seed, trial, 1), stream_id=trial)
    n_embed = max(spec.n_grid)
    cfg = replace(
        spec.embed,
        code=replace(spec.embed.code, n=n_embed),
        sampling_seed=_trial_key(spec.master_seed, trial, 2),
    )
    src = replace(spec.source, source_seed=_trial_key(spec.master_seed, trial, 3))
    return m, mk, cfg, src


def _accuracy_trial(args) -> tuple[int, dict | None, float]:
    spec, trial = args
    m, mk, cfg, src_spec = _trial_config(spec, trial)
    start = time.perf_counter()
    try:
        trace = embed_sequence(m, make_source(src_spec), mk, cfg)
        per_n = {}
        for n in spec.n_grid:
            result = decode(trace.tokens[:n], mk, cfg, spec.distance)
            per_n[n] = (
                1.0 if result.message.as_int() == m.as_int() else 0.0,
                bit_accuracy(m, result.message),
                result.margin if math.isfinite(result.margin) else math.nan,
            )
        return trial, per_n, time.perf_counter() - start
    except _TRIAL_ERRORS:
        return trial, None, time.perf_counter() - start


def _run_trials(spec: ExperimentSpec, worker_fn) -> tuple[dict, int, float]:
    args = [(spec, trial) for trial in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            raw = list(pool.map(worker_fn, args, chunksize=8))
    else:
        raw = [worker_fn(a) for a in args]
    raw.sort(key=lambda item: item[0])
    results = {trial: per_n for trial, per_n, _ in raw if per_n is not None}
    excluded = spec.trials - len(results)
    total_time = sum(elapsed for _, _, elapsed in raw)
    return results, excluded, total_time


def run_accuracy_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Message/bit accuracy at every prefix length in the grid."""
    results, excluded, total_time = _run_trials(spec, _accuracy_trial)
    if not results:
        raise ParameterError("every trial failed; nothing to aggregate")
    if excluded:
        print(f"accuracy experiment: excluded {excluded} failed trial(s)")
    rows = []
    n_tokens_embedded = max(spec.n_grid) * len(results)
    for n in spec.n_grid:
        exact = np.array([results[t][n][0] for t in sorted(results)])
        bits = np.array([results[t][n][1] for t in sorted(results)])
        margins = np.array([results[t][n][2] for t in sorted(results)])
        finite = margins[np.isfinite(margins)]
        rows.append(
            ResultRow(
                n=n,
                k=spec.embed.code.k,
                p=spec.embed.code.p,
                r=spec.embed.circle.r,
                message_accuracy=float(exact.mean()),
                bit_accuracy=float(bits.mean()),
                sem_message=_sem(exact),
                sem_bit=_sem(bits),
                mean_margin=float(finite.mean()) if finite.size else math.nan,
                wall_time=total_time / n_tokens_embedded,
            )
        )
    if spec.output_path:
        write_result_csv(spec.output_path, rows, trials=len(results), seed=spec.master_seed)
    return ExperimentResult(rows=rows, trials_included=len(results), excluded_trials=excluded)


def write_result_csv(path: str, rows: list[ResultRow], trials: int, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            for metric, value, sem in (
                ("message_accuracy", row.message_accuracy, row.sem_message),
                ("bit_accuracy", row.bit_accuracy, row.sem_bit),
                ("mean_margin", row.mean_margin, ""),
            ):
                writer.writerow(
                    [row.n, row.k, row.p, row.r, metric, repr(float(value)),
                     repr(float(sem)) if sem != "" else "",
                     trials, seed, CSV_SCHEMA_VERSION]
                )


def run_distortion_test(
    cfg: EmbedConfig,
    source,
    samples: int = 100_000,
    master_seed: int = 0,
    empirical_symbols: tuple[int, ...] = (0,),
) -> dict:
    """Check that averaging over the shared key leaves the token distribution unchanged.

    Analytic: for every code symbol, the solved plan's key-mixture must equal
    the source distribution (this is exact after rounding; the max deviation
    and its spread across symbols are reported). Empirical: tokens sampled
    with a fresh key and permutation per draw are compared to the source
    distribution by total variation and a chi-square test.
    """
    Q = source.next_distribution(1) if hasattr(source, "next_distribution") else source
    N, r, p = cfg.circle.N, cfg.circle.r, cfg.code.p
    mk = MasterKey.from_seed(_trial_key(master_seed, 0, 5))
    probe = derive_step(mk, 1, N, r)
    analytic_devs = {}
    for c in range(p):
        cost = build_cost(Q, c, probe.perm, cfg.circle)
        plan = solve_plan(Q, cost, cfg.solver)
        analytic_devs[c] = float(np.abs(mixture_over_keys(plan) - Q.probs).max())
    dev_values = np.array(list(analytic_devs.values()))
    report = {
        "analytic_max_deviation": float(dev_values.max()),
        "analytic_symbol_spread": float(dev_values.max() - dev_values.min()),
        "analytic_per_symbol": analytic_devs,
        "empirical": {},
    }
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0xD1]))
    for c in empirical_symbols:
        counts = _sample_with_fresh_secrets(Q, int(c), cfg, mk, samples, rng)
        freq = counts / counts.sum()
        tv = 0.5 * float(np.abs(freq - Q.probs).sum())
        expected = Q.probs * samples
        keep = expected > 0
        chi2, pvalue = stats.chisquare(counts[keep], expected[keep])
        report["empirical"][int(c)] = {
            "tv_distance": tv,
            "chi2": float(chi2),
            "p_value": float(pvalue),
            "samples": samples,
        }
    return report


def _sample_with_fresh_secrets(
    Q: TokenDistribution, c: int, cfg: EmbedConfig, mk: MasterKey, samples: int, rng
) -> np.ndarray:
    """Sample tokens with an independent (v, perm) per draw, batching the solves."""
    from .circle import TWO_PI, angular_distance, key_grid

    N, r = cfg.circle.N, cfg.circle.r
    counts = np.zeros(N, dtype=np.int64)
    a = Q.probs[Q.support]
    grid = key_grid(c, cfg.circle)
    batch = 2048
    step = 1
    done = 0
    while done < samples:
        b_size = min(batch, samples - done)
        slots = np.empty((b_size, a.size), dtype=np.int64)
        vs = np.empty(b_size, dtype=np.int64)
        for i in range(b_size):
            secret = derive_step(mk, step, N, r)
            slots[i] = secret.perm[Q.support]
            vs[i] = secret.v
            step += 1
        tok_angles = TWO_PI * slots.astype(np.float64) / N
        costs = angular_distance(tok_angles[:, :, None], grid[None, None, :])
        if a.size == 1:
            chosen = np.full(b_size, int(Q.support[0]))
        else:
            joints = solve_plan_batch(np.tile(a, (b_size, 1)), costs, cfg.solver)
            cond = r * joints[np.arange(b_size), :, vs]
            cond = np.maximum(cond, 0)
            cond /= cond.sum(axis=1, keepdims=True)
            cum = np.cumsum(cond, axis=1)
            u = rng.random(b_size)
            idx = (u[:, None] * cum[:, -1:] > cum).sum(axis=1)
            chosen = Q.support[np.minimum(idx, a.size - 1)]
        np.add.at(counts, chosen, 1)
        done += b_size
    return counts


def run_r_ablation(
    spec: ExperimentSpec, r_values: tuple[int, ...]
) -> dict[int, ExperimentResult]:
    """Re-run the accuracy experiment at several key-grid resolutions.

    The per-token embed wall time lands in each row's wall_time field; the
    transport solve dominates it, so it tracks solver cost as r grows.
    """
    out = {}
    for r in r_values:
        circ = replace(spec.embed.circle, r=int(r))
        sub = replace(spec, embed=replace(spec.embed, circle=circ), output_path=None)
        out[int(r)] = run_accuracy_experiment(sub)
    return out


@dataclass(frozen=True)
class SweepRow:
    rate_fraction: float
    n: int
    k: int
    error_rate: float
    sem: float
    trials: int
    skipped: bool = False


def run_capacity_sweep(
    N: int,
    rates: tuple[float, ...],
    n_grid: tuple[int, ...],
    trials: int,
    master_seed: int = 0,
    output_path: str | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Message-error rate vs length for rates given as fractions of the two-point capacity.

    Uses the exact-coupling mode on the two-point source with the
    likelihood-matched distance; k = max(1, floor(rate * capacity * n)).
    """
    r_cap = capacity_closed_form(N)
    rows = []
    for rho in rates:
        for n in n_grid:
            k = max(1, int(math.floor(rho * r_cap * n)))
            if k > 24:
                rows.append(
                    SweepRow(rate_fraction=rho, n=n, k=k, error_rate=math.nan,
                             sem=math.nan, trials=0, skipped=True)
                )
                continue
            cfg = theorem2_config(N=N, k=k, n=n, code_seed=_trial_key(master_seed, 0, 7))
            spec = ExperimentSpec(
                embed=cfg,
                source=SourceSpec(kind="p2_uniform", N=N),
                distance=log_ml_distance(N),
                trials=trials,
                n_grid=(n,),
                master_seed=master_seed,
                workers=workers,
            )
            result = run_accuracy_experiment(spec)
            row = result.rows[0]
            rows.append(
                SweepRow(
                    rate_fraction=rho, n=n, k=k,
                    error_rate=1.0 - row.message_accuracy,
                    sem=row.sem_message, trials=result.trials_included,
                )
            )
    if output_path:
        with open(output_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["rate_fraction", "n", "k", "error_rate", "sem", "trials", "skipped",
                 "seed", "schema_version"]
            )
            for row in rows:
                writer.writerow(
                    [repr(row.rate_fraction), row.n, row.k, repr(row.error_rate),
                     repr(row.sem), row.trials, int(row.skipped), master_seed,
                     CSV_SCHEMA_VERSION]
                )
    return rows


def rank_histogram(N: int, steps: int, master_seed: int = 0) -> np.ndarray:
    """Histogram of the emitted token's closeness rank under the exact-coupling mode.

    Embeds `steps` tokens of the two-point source with p = r = N and counts,
    per step, where the emitted token ranked among all N tokens ordered by
    arc distance from the channel angle. Returns counts for ranks 1..N.
    """
    k = 1
    cfg = theorem2_config(N=N, k=k, n=steps, code_seed=_trial_key(master_seed, 0, 9),
                          sampling_seed=_trial_key(master_seed, 0, 11))
    src = make_source(SourceSpec(kind="p2_uniform", N=N,
                                 source_seed=_trial_key(master_seed, 0, 13)))
    mk = MasterKey.from_seed(_trial_key(master_seed, 0, 15))
    m = Message(np.array([1] + [0] * (k - 1)))
    trace = embed_sequence(m, src, mk, cfg)
    counts = np.zeros(N + 1, dtype=np.int64)
    for t in range(1, steps + 1):
        secret = derive_step(mk, t, N, N)
        c = int(trace.codeword.symbols[t - 1])
        u = (c + secret.v) % N
        delta = (int(secret.perm[trace.tokens[t - 1]]) - u) % N
        counts[theorem2_rank(delta, N)] += 1
    return counts[1:]
