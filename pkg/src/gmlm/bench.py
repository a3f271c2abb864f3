"""Decode-speed benchmark: cached grouped decoding vs the level-sequential
baseline vs a cache-disabled variant that re-encodes the prompt on every
iteration. Emits CSV rows (times in milliseconds) and a dependency-free
SVG line chart.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .predictor import Predictor
from .sampler import DecodeRequest, accuracy_metrics, gipd_decode, ipd_baseline_decode
from .tokens import SemanticSeq, TokenGrid
from .world import WorldSpec, generate_utterance, hash_fields

CSV_HEADER = "mode,prompt_len,target_len,n_c,median_ms,iqr_ms,forwards,accuracy"
MODES = ("gipd", "ipd-baseline", "gipd-nocache")


@dataclass(frozen=True)
class BenchConfig:
    prompt_lens: tuple[int, ...]
    target_lens: tuple[int, ...]
    budgets: tuple[int, ...]  # total forward passes N per decode
    repetitions: int = 5
    warmup: int = 1
    seed: int = 0
    temperature: float = 0.0  # greedy: decodes are rng-free and repeatable

    def __post_init__(self):
        if not (self.prompt_lens and self.target_lens and self.budgets):
            raise ValueError("prompt_lens, target_lens and budgets must be non-empty")
        if self.repetitions < 3:
            raise ValueError("repetitions must be >= 3")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")


@dataclass
class BenchRow:
    mode: str
    prompt_len: int
    target_len: int
    n_c: int
    median_ms: float
    iqr_ms: float
    forwards: int
    accuracy: float


class _NoCacheModel:
    """Re-encodes the prompt inside every forward call, emulating samplers
    that recompute the prompt context each iteration."""

    def __init__(self, pred: Predictor):
        self.pred = pred

    def encode_prompt(self, prompt: TokenGrid) -> TokenGrid:
        if prompt.mask.any():
            raise ValueError("prompt must be fully unmasked")
        return prompt  # all prompt-side work deferred into forward()

    def forward(self, sem: SemanticSeq, grid: TokenGrid, prompt: TokenGrid):
        return self.pred.forward_uncached(sem, grid, prompt)


def baseline_budget(N: int, params) -> list[int]:
    """Per-slice iterations summing to N: the first coarse slice takes the
    remainder after one pass per other slice."""
    slices = params.groups * params.levels
    if N < slices:
        raise ValueError(f"budget {N} below one pass per slice ({slices})")
    return [N - (slices - 1)] + [1] * (slices - 1)


def _decode_once(pred: Predictor, mode: str, req: DecodeRequest, budget: list[int]):
    if mode == "gipd":
        grid, _ = gipd_decode(pred, req)
    elif mode == "gipd-nocache":
        grid, _ = gipd_decode(_NoCacheModel(pred), req)
    elif mode == "ipd-baseline":
        grid = ipd_baseline_decode(pred, req, budget)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return grid


def bench_runtime(pred: Predictor, spec: WorldSpec, cfg: BenchConfig) -> list[BenchRow]:
    """Median wall time per (mode, prompt len, target len, budget) point.

    Timing covers the decode call only, cache build included. Warmup runs
    are discarded; non-timing columns are deterministic given cfg.seed.
    """
    rows = []
    for p_len in cfg.prompt_lens:
        for t_len in cfg.target_lens:
            rng = np.random.default_rng(hash_fields(cfg.seed, p_len, t_len))
            utt = generate_utterance(spec, p_len + t_len, rng)
            p = spec.params
            prompt = TokenGrid(
                p,
                utt.grid.tokens[:p_len].copy(),
                np.zeros((p_len, p.groups, p.levels), dtype=bool),
            )
            truth = TokenGrid(
                p,
                utt.grid.tokens[p_len:].copy(),
                np.zeros((t_len, p.groups, p.levels), dtype=bool),
            )
            sem_t = SemanticSeq(utt.sem.ids[p_len:].copy(), spec.semantic_vocab)
            for N in cfg.budgets:
                budget = baseline_budget(N, p)
                req = DecodeRequest(
                    sem_t, prompt, N - 1, temperature=cfg.temperature, seed=cfg.seed
                )
                for mode in MODES:
                    for _ in range(cfg.warmup):
                        _decode_once(pred, mode, req, budget)
                    before = pred.counters.snapshot()
                    times = []
                    grid = None
                    for _ in range(cfg.repetitions):
                        t0 = time.perf_counter()
                        grid = _decode_once(pred, mode, req, budget)
                        times.append((time.perf_counter() - t0) * 1e3)
                    forwards = (pred.counters.forwards - before.forwards) // cfg.repetitions
                    acc = accuracy_metrics(grid, truth).overall
                    q25, q50, q75 = np.percentile(times, [25, 50, 75])
                    rows.append(
                        BenchRow(mode, p_len, t_len, N - 1, float(q50),
                                 float(q75 - q25), int(forwards), acc)
                    )
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.mode},{r.prompt_len},{r.target_len},{r.n_c},"
            f"{r.median_ms:.3f},{r.iqr_ms:.3f},{r.forwards},{r.accuracy:.6f}"
        )
    return "\n".join(lines) + "\n"


def read_rows_csv(path) -> list[BenchRow]:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not a benchmark CSV (bad header)")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise ValueError(f"malformed row: {ln!r}")
        rows.append(
            BenchRow(parts[0], int(parts[1]), int(parts[2]), int(parts[3]),
                     float(parts[4]), float(parts[5]), int(parts[6]), float(parts[7]))
        )
    return rows


# ---------------------------------------------------------------------------
# SVG output (plain shapes, inline data, byte-deterministic)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
_W, _H = 720, 480
_ML, _MR, _MT, _MB = 70, 30, 40, 55


def emit_plot(rows: list[BenchRow], path) -> None:
    """Line chart of median decode time: one series per mode, x = prompt
    length when it varies, target length otherwise."""
    if not rows:
        raise ValueError("no rows to plot")
    x_field = "prompt_len" if len({r.prompt_len for r in rows}) > 1 else "target_len"
    modes = sorted({r.mode for r in rows})
    xs = sorted({getattr(r, x_field) for r in rows})
    ymax = max(r.median_ms for r in rows) * 1.05 or 1.0
    x0, x1 = min(xs), max(xs)
    span = (x1 - x0) or 1

    def sx(v):
        return _ML + (v - x0) / span * (_W - _ML - _MR)

    def sy(v):
        return _H - _MB - v / ymax * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{(_W) // 2}" y="{_H - 12}" text-anchor="middle" font-size="14">{x_field}</text>',
        f'<text x="18" y="{_H // 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {_H // 2})">median decode time (ms)</text>',
    ]
    for v in xs:
        parts.append(
            f'<text x="{sx(v):.2f}" y="{_H - _MB + 18}" text-anchor="middle" '
            f'font-size="12">{v}</text>'
        )
        parts.append(
            f'<line x1="{sx(v):.2f}" y1="{_H - _MB}" x2="{sx(v):.2f}" '
            f'y2="{_H - _MB + 4}" stroke="black"/>'
        )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = ymax * frac
        parts.append(
            f'<text x="{_ML - 8}" y="{sy(v):.2f}" text-anchor="end" '
            f'font-size="12" dominant-baseline="middle">{v:.1f}</text>'
        )
        parts.append(
            f'<line x1="{_ML - 4}" y1="{sy(v):.2f}" x2="{_ML}" y2="{sy(v):.2f}" stroke="black"/>'
        )
    for i, mode in enumerate(modes):
        color = _PALETTE[i % len(_PALETTE)]
        pts = sorted(
            ((getattr(r, x_field), r.median_ms) for r in rows if r.mode == mode)
        )
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        parts.append(
            f'<text x="{_W - _MR - 6}" y="{_MT + 16 * (i + 1)}" text-anchor="end" '
            f'font-size="13" fill="{color}">{mode}</text>'
        )
    parts.append("</svg>")
    with open(path, "wb") as f:
        f.write("\n".join(parts).encode("utf-8"))


def emit_plot_from_csv(csv_path, svg_path) -> None:
    """CSV-file front end of emit_plot; nothing is written on bad input."""
    emit_plot(read_rows_csv(csv_path), svg_path)
