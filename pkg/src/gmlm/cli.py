"""Command-line front end: corpus generation, training, decoding,
evaluation and the runtime benchmark.

Config files are plain key=value lines; '#' starts a comment. See the
README for the recognized keys of world and training configs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench as bench_mod
from .predictor import PredictorConfig, init_predictor, load_predictor, save_predictor
from .sampler import (
    DecodeRequest,
    accuracy_metrics,
    gipd_decode,
    ipd_baseline_decode,
    write_trace_csv,
)
from .tokens import CodecParams, load_gact, save_gact
from .training import TrainConfig, train_epoch
from .world import WorldSpec, generate_corpus, load_corpus, save_corpus


def read_kv_config(path) -> dict[str, str]:
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def world_from_config(path) -> WorldSpec:
    kv = read_kv_config(path)
    params = CodecParams(
        groups=int(kv.get("groups", 2)),
        levels=int(kv.get("levels", 2)),
        codebook_size=int(kv.get("codebook_size", 1024)),
        latent_dim=int(kv.get("latent_dim", 16)),
        frames_per_second=float(kv.get("frames_per_second", 50.0)),
    )
    return WorldSpec(
        params=params,
        semantic_vocab=int(kv.get("semantic_vocab", 16)),
        speakers=int(kv.get("speakers", 8)),
        p_noise=float(kv.get("p_noise", 0.0)),
        seed=int(kv.get("seed", 0)),
    )


def train_config_from_kv(kv: dict[str, str]) -> TrainConfig:
    mp = kv.get("min_prompt")
    return TrainConfig(
        batch_size=int(kv.get("batch_size", 8)),
        steps=int(kv.get("steps", 1000)),
        lr=float(kv.get("lr", 1e-3)),
        beta1=float(kv.get("beta1", 0.9)),
        beta2=float(kv.get("beta2", 0.999)),
        eps_opt=float(kv.get("eps_opt", 1e-8)),
        min_prompt=int(mp) if mp is not None else None,
        seed=int(kv.get("seed", 0)),
    )


def _int_list(text: str, parser: argparse.ArgumentParser, flag: str) -> list[int]:
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        parser.error(f"{flag} needs a non-empty comma-separated list")
    try:
        return [int(t) for t in items]
    except ValueError:
        parser.error(f"{flag}: not an integer list: {text!r}")


def _cmd_gen_data(args) -> int:
    spec = world_from_config(args.spec)
    corpus = generate_corpus(spec, args.n, (args.tmin, args.tmax), seed=args.seed)
    save_corpus(args.out, corpus)
    print(f"wrote {len(corpus)} utterances to {args.out}")
    return 0


def _cmd_train(args) -> int:
    kv = read_kv_config(args.config)
    cfg = train_config_from_kv(kv)
    corpus = load_corpus(args.data)
    g0 = corpus[0].grid
    params = CodecParams(
        groups=g0.params.groups,
        levels=g0.params.levels,
        codebook_size=g0.params.codebook_size,
        latent_dim=int(kv.get("latent_dim", g0.params.groups)),
        frames_per_second=float(kv.get("frames_per_second", 50.0)),
    )
    pcfg = PredictorConfig(
        params=params,
        sem_vocab=corpus[0].sem.vocab_size,
        dim=int(kv.get("dim", 128)),
        heads=int(kv.get("heads", 4)),
        layers=int(kv.get("layers", 4)),
        ffn_dim=int(kv["ffn_dim"]) if "ffn_dim" in kv else None,
        prompt_layers=int(kv.get("prompt_layers", 2)),
        max_frames=int(kv.get("max_frames", 512)),
    )
    pred = init_predictor(pcfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    pred, stats = train_epoch(pred, corpus, cfg, rng, stats_path=args.stats)
    save_predictor(args.out, pred)
    acc = ", ".join(f"L{j}={a:.3f}" for j, a in enumerate(stats.level_accuracy))
    print(f"trained {cfg.steps} steps, mean loss {stats.mean_loss:.4f}, acc {acc}")
    return 0


def _cmd_decode(args) -> int:
    pred = load_predictor(args.model)
    prompt, _ = load_gact(args.prompt)
    _, sem = load_gact(args.sem)
    req = DecodeRequest(
        sem, prompt, args.nc, temperature=args.temperature, seed=args.seed
    )
    if args.mode == "gipd":
        grid, trace = gipd_decode(pred, req)
        if args.trace:
            write_trace_csv(trace, args.trace)
    else:
        budget = (
            _int_list(args.budget, _PARSER, "--budget")
            if args.budget
            else bench_mod.baseline_budget(args.nc + 1, prompt.params)
        )
        grid = ipd_baseline_decode(pred, req, budget)
    save_gact(args.out, grid, sem)
    print(f"decoded {grid.T} frames -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    pred_grid, _ = load_gact(args.pred)
    ref_grid, _ = load_gact(args.ref)
    m = accuracy_metrics(pred_grid, ref_grid)
    lines = ["metric,value"]
    for g in range(pred_grid.params.groups):
        for j in range(pred_grid.params.levels):
            lines.append(f"acc_g{g}_l{j},{m.per_slice[g, j]:.6f}")
    lines.append(f"acc_coarse,{m.coarse:.6f}")
    lines.append(f"acc_fine,{m.fine:.6f}")
    lines.append(f"acc_overall,{m.overall:.6f}")
    lines.append(f"frame_match,{m.frame_match:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")
    return 0


def _cmd_bench(args) -> int:
    pred = load_predictor(args.model)
    spec = world_from_config(args.world)
    cfg = bench_mod.BenchConfig(
        prompt_lens=tuple(_int_list(args.prompt_lens, _PARSER, "--prompt-lens")),
        target_lens=tuple(_int_list(args.target_lens, _PARSER, "--target-lens")),
        budgets=tuple(_int_list(args.iters, _PARSER, "--iters")),
        repetitions=args.reps,
        warmup=args.warmup,
        seed=args.seed,
    )
    rows = bench_mod.bench_runtime(pred, spec, cfg)
    with open(args.out, "w") as f:
        f.write(bench_mod.rows_to_csv(rows))
    print(f"wrote {len(rows)} rows to {args.out}")
    if args.svg:
        bench_mod.emit_plot(rows, args.svg)
        print(f"wrote plot to {args.svg}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmlm", description="grouped masked token modeling engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic token corpus")
    g.add_argument("--spec", required=True, help="world config file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True, help="output corpus directory")
    g.add_argument("--tmin", type=int, default=16)
    g.add_argument("--tmax", type=int, default=48)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train a predictor on a corpus")
    t.add_argument("--data", required=True, help="corpus directory")
    t.add_argument("--config", required=True, help="training config file")
    t.add_argument("--out", required=True, help="model checkpoint path")
    t.add_argument("--stats", default=None, help="per-step stats CSV")
    t.set_defaults(fn=_cmd_train)

    d = sub.add_parser("decode", help="decode a target given a prompt")
    d.add_argument("--model", required=True)
    d.add_argument("--prompt", required=True, help="prompt GACT file")
    d.add_argument("--sem", required=True, help="GACT file supplying target semantics")
    d.add_argument("--nc", type=int, required=True, help="coarse iteration count")
    d.add_argument("--temperature", type=float, default=1.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--mode", choices=("gipd", "ipd-baseline"), default="gipd")
    d.add_argument("--budget", default=None, help="per-slice iterations for ipd-baseline")
    d.add_argument("--trace", default=None, help="write sampling trace CSV")
    d.add_argument("--out", required=True)
    d.set_defaults(fn=_cmd_decode)

    e = sub.add_parser("eval", help="token accuracy of a decoded file vs a reference")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--out", default=None, help="metrics CSV path")
    e.set_defaults(fn=_cmd_eval)

    b = sub.add_parser("bench", help="decode runtime benchmark")
    b.add_argument("--model", required=True)
    b.add_argument("--world", required=True, help="world config file")
    b.add_argument("--prompt-lens", required=True)
    b.add_argument("--target-lens", required=True)
    b.add_argument("--iters", required=True, help="total iteration budgets N")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="rows CSV path")
    b.add_argument("--svg", default=None, help="plot path")
    b.set_defaults(fn=_cmd_bench)
    return parser


_PARSER = _build_parser()


def main(argv=None) -> int:
    args = _PARSER.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
