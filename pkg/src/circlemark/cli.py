"""Command-line interface.

Subcommands: encode, embed, decode, capacity, dftest, experiment,
ablate-r, sweep, serve. Experiment-style commands require --seed and read
the rest of their setup from a JSON config file (--config) with flag
overrides; see README for the schema. Exit codes: 0 success, 2 bad
configuration or arguments, 3 too many failed trials at runtime.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .circle import CircleParams
from .decoder import DistanceFn, decode, identity_distance, log_ml_distance
from .embedder import EmbedConfig, config_from_trace_dict, embed_sequence
from .errors import ParameterError
from .harness import (
    ExperimentSpec,
    run_accuracy_experiment,
    run_capacity_sweep,
    run_distortion_test,
    run_r_ablation,
    write_result_csv,
)
from .modcode import CodeParams, Message, encode, make_generator
from .sideinfo import KEY_ENV_VAR, MasterKey
from .sources import SourceSpec, make_source
from .stdio_bridge import serve
from .transport import SolverConfig
from . import capacity as capacity_mod

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRIAL_FAILURES = 3


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _solver_from(d: dict) -> SolverConfig:
    return SolverConfig(
        epsilon=d.get("epsilon"),
        max_iters=int(d.get("max_iters", SolverConfig.max_iters)),
        tolerance=float(d.get("tolerance", SolverConfig.tolerance)),
    )


def _embed_config_from(cfg: dict) -> EmbedConfig:
    code = cfg["code"]
    circle = cfg["circle"]
    return EmbedConfig(
        code=CodeParams(
            k=int(code["k"]), n=int(code["n"]), p=int(code["p"]),
            code_seed=int(code.get("code_seed", 0)),
        ),
        circle=CircleParams(
            N=int(circle["N"]), p=int(circle["p"]), r=int(circle["r"]),
            phi=float(circle.get("phi", 0.0)),
        ),
        solver=_solver_from(cfg.get("solver", {})),
        theorem2_mode=bool(cfg.get("theorem2_mode", False)),
        sampling_seed=int(cfg.get("sampling_seed", 0)),
    )


def _source_spec_from(cfg: dict) -> SourceSpec:
    src = dict(cfg["source"])
    return SourceSpec(
        kind=src["kind"],
        N=int(src["N"]),
        alpha=float(src.get("alpha", 0.3)),
        top_k=src.get("top_k"),
        temperature=float(src.get("temperature", 1.0)),
        replay_path=src.get("replay_path"),
        source_seed=int(src.get("source_seed", 0)),
    )


def _distance_from(cfg: dict, N: int) -> DistanceFn:
    kind = cfg.get("distance", {}).get("kind", "identity")
    if kind == "identity":
        return identity_distance()
    if kind == "log_ml":
        return log_ml_distance(N)
    raise ParameterError(f"unknown distance kind {kind!r}")


def _master_key(args, stream_id: int = 0) -> MasterKey:
    if getattr(args, "key_hex", None):
        return MasterKey.from_hex(args.key_hex, stream_id=stream_id)
    return MasterKey.from_env(stream_id=stream_id)


def _parse_bits(text: str) -> Message:
    if not set(text) <= {"0", "1"}:
        raise ParameterError("message must be a 0/1 string, least significant bit first")
    return Message(np.array([int(ch) for ch in text], dtype=np.int64))


def _cmd_encode(args) -> int:
    params = CodeParams(k=args.k, n=args.n, p=args.p, code_seed=args.code_seed)
    m = _parse_bits(args.message)
    cw = encode(m, make_generator(params))
    print(json.dumps({
        "code": params.to_json_dict(),
        "message_bits": [int(b) for b in m.bits],
        "codeword": [int(s) for s in cw.symbols],
    }))
    return EXIT_OK


def _cmd_embed(args) -> int:
    cfg_json = _load_config(args.config)
    embed_cfg = _embed_config_from(cfg_json)
    source = make_source(_source_spec_from(cfg_json))
    m = _parse_bits(args.message)
    mk = _master_key(args, stream_id=args.stream_id)
    trace = embed_sequence(m, source, mk, embed_cfg)
    payload = trace.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return EXIT_OK


def _cmd_decode(args) -> int:
    with open(args.trace) as fh:
        trace_dict = json.load(fh)
    cfg = config_from_trace_dict(trace_dict, theorem2_mode=args.theorem2)
    mk = _master_key(args, stream_id=int(trace_dict.get("stream_id", 0)))
    f = log_ml_distance(cfg.circle.N) if args.distance == "log_ml" else identity_distance()
    result = decode(np.asarray(trace_dict["tokens"], dtype=np.int64), mk, cfg, f)
    print(json.dumps(result.to_json_dict()))
    return EXIT_OK


def _cmd_capacity(args) -> int:
    out = {"N": args.N, "closed_form_bits": capacity_mod.capacity_closed_form(args.N)}
    if args.limit:
        out["limit_bits"] = capacity_mod.capacity_limit()
    if args.brute_force:
        result = capacity_mod.brute_force_capacity(args.N, max_W_letters=args.max_w_letters)
        out["brute_force_bits"] = result.bits
        out["table"] = {
            "weights": list(result.table.weights),
            "cells": result.table.cells.tolist(),
            "pairs": [list(p) for p in result.table.pairs],
        }
        out["skipped_letter_counts"] = list(result.skipped_letter_counts)
    print(json.dumps(out))
    return EXIT_OK


def _cmd_dftest(args) -> int:
    cfg_json = _load_config(args.config)
    embed_cfg = _embed_config_from(cfg_json)
    source = make_source(_source_spec_from(cfg_json))
    report = run_distortion_test(
        embed_cfg, source, samples=args.samples, master_seed=args.seed
    )
    print(json.dumps(report))
    return EXIT_OK


def _experiment_spec(args, cfg_json: dict) -> ExperimentSpec:
    embed_cfg = _embed_config_from(cfg_json)
    return ExperimentSpec(
        embed=embed_cfg,
        source=_source_spec_from(cfg_json),
        distance=_distance_from(cfg_json, embed_cfg.circle.N),
        trials=int(cfg_json.get("trials", 100)),
        n_grid=tuple(cfg_json.get("n_grid", [embed_cfg.code.n])),
        master_seed=args.seed,
        output_path=args.out,
        workers=int(cfg_json.get("workers", 1)),
    )


# more than this fraction of trials failing is a runtime error (exit 3)
FAILURE_THRESHOLD = 0.1


def _check_failures(result) -> int:
    total = result.trials_included + result.excluded_trials
    if total and result.excluded_trials / total > FAILURE_THRESHOLD:
        print(
            f"error: {result.excluded_trials}/{total} trials failed", file=sys.stderr
        )
        return EXIT_TRIAL_FAILURES
    return EXIT_OK


def _cmd_experiment(args) -> int:
    spec = _experiment_spec(args, _load_config(args.config))
    result = run_accuracy_experiment(spec)
    for row in result.rows:
        print(
            f"n={row.n} message_accuracy={row.message_accuracy:.4f} "
            f"bit_accuracy={row.bit_accuracy:.4f}"
        )
    return _check_failures(result)


def _cmd_ablate_r(args) -> int:
    cfg_json = _load_config(args.config)
    spec = _experiment_spec(args, cfg_json)
    r_values = tuple(int(x) for x in args.r_values.split(","))
    results = run_r_ablation(spec, r_values)
    code = EXIT_OK
    for r, result in results.items():
        for row in result.rows:
            print(
                f"r={r} n={row.n} message_accuracy={row.message_accuracy:.4f} "
                f"embed_seconds_per_token={row.wall_time:.6f}"
            )
        code = max(code, _check_failures(result))
    if args.out:
        flat = [row for result in results.values() for row in result.rows]
        write_result_csv(args.out, flat, trials=spec.trials, seed=spec.master_seed)
    return code


def _cmd_sweep(args) -> int:
    rates = tuple(float(x) for x in args.rates.split(","))
    n_grid = tuple(int(x) for x in args.n_grid.split(","))
    rows = run_capacity_sweep(
        N=args.N, rates=rates, n_grid=n_grid, trials=args.trials,
        master_seed=args.seed, output_path=args.out, workers=args.workers,
    )
    for row in rows:
        flag = " (skipped: k>24)" if row.skipped else ""
        print(f"rate={row.rate_fraction} n={row.n} k={row.k} "
              f"error_rate={row.error_rate}{flag}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    return serve()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="circlemark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a message into a codeword")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--code-seed", type=int, default=0)
    p.add_argument("--message", required=True, help="bit string, LSB first")
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("embed", help="embed a message into a synthetic/replayed stream")
    p.add_argument("--config", required=True)
    p.add_argument("--message", required=True)
    p.add_argument("--stream-id", type=int, default=0)
    p.add_argument("--key-hex", help=f"master key (default: ${KEY_ENV_VAR})")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("decode", help="decode a trace JSON file")
    p.add_argument("--trace", required=True)
    p.add_argument("--key-hex")
    p.add_argument("--distance", choices=["identity", "log_ml"], default="identity")
    p.add_argument("--theorem2", action="store_true")
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("capacity", help="two-point capacity calculator")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--brute-force", action="store_true")
    p.add_argument("--limit", action="store_true")
    p.add_argument("--max-w-letters", type=int, default=4)
    p.set_defaults(fn=_cmd_capacity)

    p = sub.add_parser("dftest", help="distortion-freeness report")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=_cmd_dftest)

    p = sub.add_parser("experiment", help="accuracy vs length experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_experiment)

    p = sub.add_parser("ablate-r", help="repeat the experiment across key resolutions")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--r-values", default="64,256")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ablate_r)

    p = sub.add_parser("sweep", help="error rate vs length at fractions of capacity")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--rates", default="0.25")
    p.add_argument("--n-grid", default="64,128,256")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("serve", help="line-delimited JSON embedding service on stdio")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParameterError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
