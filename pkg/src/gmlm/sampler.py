"""Grouped iterative parallel decoding.

Coarse cells of all groups are decoded together: every iteration samples
all still-masked level-0 cells from Gumbel-perturbed logits, pools the
candidates across groups, keeps the schedule's quota of highest-confidence
cells and re-masks the rest. The temperature anneals to zero so the last
coarse iteration is a greedy fill, after which every fine cell is decoded
in a single greedy pass against the completed coarse grid. A
level-sequential baseline decodes one (group, level) slice at a time with
the confidence ranking confined to that slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from .tokens import CodecParams, SemanticSeq, TokenGrid, make_grid


@dataclass(frozen=True)
class DecodeRequest:
    sem: SemanticSeq  # target-side semantics
    prompt: TokenGrid  # fully unmasked conditioning prefix
    coarse_iters: int  # N_c; one more forward fills the fine cells
    temperature: float = 1.0
    seed: int = 0
    rank_with_noise: bool = False  # ablation: rank by perturbed confidence

    def __post_init__(self):
        if self.coarse_iters < 1:
            raise ValueError("coarse_iters must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def total_iters(self) -> int:
        return self.coarse_iters + 1


@dataclass
class DecodeSchedule:
    fix_counts: list[int]  # cells fixed per iteration; sums to the pool size
    remaining: list[int]  # masked cells left after each iteration


@dataclass
class IterationRecord:
    step: int
    fixed_cells: list[tuple[int, int, int]]  # (frame, group, level)
    confidences: list[float]
    remasked: int


@dataclass
class SamplerTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    fine_filled: int = 0


def cosine_schedule(M: int, S: int) -> DecodeSchedule:
    """Masked-cell counts following floor(cos(pi/2 * s/S) * M), clamped so
    each iteration fixes at least one cell and iteration S reaches zero."""
    if not 1 <= S <= M:
        raise ValueError(f"need 1 <= iterations <= cells, got S={S}, M={M}")
    fix, remaining = [], []
    prev = M
    for s in range(1, S + 1):
        # cos is mathematically >= 0 on [0, pi/2]; clamp the floor so ulp-level
        # rounding of the angle cannot produce -1 at s = S
        raw = max(0, math.floor(math.cos(0.5 * math.pi * s / S) * M))
        r = min(raw, prev - 1)
        remaining.append(r)
        fix.append(prev - r)
        prev = r
    assert prev == 0 and sum(fix) == M
    return DecodeSchedule(fix, remaining)


def gumbel_perturb(row: np.ndarray, tau: float, rng: np.random.Generator) -> np.ndarray:
    """row + tau * g with g standard Gumbel; tau=0 consumes no randomness."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    row = np.asarray(row, dtype=np.float64)
    if tau == 0.0:
        return row.copy()
    g = -np.log(-np.log(1.0 - rng.random(row.shape)))
    return row + tau * g


def _softmax_row(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def _sample_cells(logits, cells, level_of, tau, rng, rank_with_noise):
    """Sample every listed cell, returning (confidence, t, g, token) tuples."""
    out = []
    for t, g in cells:
        row = logits[t, g, level_of]
        pert = gumbel_perturb(row, tau, rng)
        tok = int(np.argmax(pert))
        conf = float(_softmax_row(pert if rank_with_noise else row)[tok])
        out.append((conf, t, g, tok))
    return out


def gipd_decode(model, req: DecodeRequest) -> tuple[TokenGrid, SamplerTrace]:
    """Decode a target grid; returns it with the per-iteration trace.

    Performs exactly coarse_iters + 1 forward passes and encodes the
    prompt exactly once.
    """
    if req.prompt.mask.any():
        raise ValueError("prompt must be fully unmasked")
    p = req.prompt.params
    T = req.sem.T
    grid = make_grid(p, T, fill=None)
    cache = model.encode_prompt(req.prompt)
    pool = p.groups * T
    sched = cosine_schedule(pool, req.coarse_iters)
    rng = np.random.default_rng(req.seed)
    trace = SamplerTrace()
    masked = [(t, g) for t in range(T) for g in range(p.groups)]
    for s in range(1, req.coarse_iters + 1):
        logits = model.forward(req.sem, grid, cache)
        tau = req.temperature * (1.0 - s / req.coarse_iters)
        cands = _sample_cells(logits, masked, 0, tau, rng, req.rank_with_noise)
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        keep = cands[: sched.fix_counts[s - 1]]
        for conf, t, g, tok in keep:
            grid.tokens[t, g, 0] = tok
            grid.mask[t, g, 0] = False
        kept = {(t, g) for _, t, g, _ in keep}
        masked = [c for c in masked if c not in kept]
        trace.iterations.append(
            IterationRecord(
                s,
                [(t, g, 0) for _, t, g, _ in keep],
                [c[0] for c in keep],
                len(cands) - len(keep),
            )
        )
    assert not masked
    grid = fine_greedy_fill(model, grid, req.sem, cache)
    trace.fine_filled = T * p.groups * (p.levels - 1)
    return grid, trace


def fine_greedy_fill(model, grid: TokenGrid, sem: SemanticSeq, cache) -> TokenGrid:
    """One forward; every fine cell becomes the argmax of its logits."""
    if grid.mask[:, :, 0].any():
        raise ValueError("coarse cells must be complete before the fine fill")
    if grid.params.levels > 1 and not grid.mask[:, :, 1:].all():
        raise ValueError("fine cells must all be masked")
    logits = model.forward(sem, grid, cache)
    out = grid.copy()
    if grid.params.levels > 1:
        out.tokens[:, :, 1:] = logits[:, :, 1:, :].argmax(axis=-1)
        out.mask[:, :, 1:] = False
    return out


def baseline_slices(params: CodecParams) -> list[tuple[int, int]]:
    """Slice order of the level-sequential baseline: coarse groups, then
    fine groups level by level."""
    return [(g, j) for j in range(params.levels) for g in range(params.groups)]


def ipd_baseline_decode(model, req: DecodeRequest, level_iters) -> TokenGrid:
    """Decode one (group, level) slice at a time; the confidence ranking
    never pools across groups. Forward passes = sum(level_iters)."""
    if req.prompt.mask.any():
        raise ValueError("prompt must be fully unmasked")
    p = req.prompt.params
    slices = baseline_slices(p)
    if len(level_iters) != len(slices):
        raise ValueError(f"need {len(slices)} per-slice iteration counts")
    T = req.sem.T
    grid = make_grid(p, T, fill=None)
    cache = model.encode_prompt(req.prompt)
    rng = np.random.default_rng(req.seed)
    for (g, j), S in zip(slices, level_iters):
        sched = cosine_schedule(T, S)
        masked = [(t, g) for t in range(T)]
        for s in range(1, S + 1):
            logits = model.forward(req.sem, grid, cache)
            tau = req.temperature * (1.0 - s / S)
            cands = _sample_cells(logits, masked, j, tau, rng, req.rank_with_noise)
            cands.sort(key=lambda c: (-c[0], c[1], c[2]))
            keep = cands[: sched.fix_counts[s - 1]]
            for conf, t, gg, tok in keep:
                grid.tokens[t, gg, j] = tok
                grid.mask[t, gg, j] = False
            kept = {(t, gg) for _, t, gg, _ in keep}
            masked = [c for c in masked if c not in kept]
        assert not masked
    return grid


@dataclass
class Metrics:
    per_slice: np.ndarray  # (G, N_q) token accuracy
    overall: float
    frame_match: float
    coarse: float
    fine: float  # nan when the grid has a single level


def accuracy_metrics(pred: TokenGrid, ref: TokenGrid) -> Metrics:
    if pred.tokens.shape != ref.tokens.shape:
        raise ValueError("grids have different shapes")
    eq = pred.tokens == ref.tokens
    per_slice = eq.mean(axis=0)
    fine = float(eq[:, :, 1:].mean()) if pred.params.levels > 1 else float("nan")
    return Metrics(
        per_slice=per_slice,
        overall=float(eq.mean()),
        frame_match=float(eq.all(axis=(1, 2)).mean()),
        coarse=float(eq[:, :, 0].mean()),
        fine=fine,
    )


def write_trace_csv(trace: SamplerTrace, path) -> None:
    """One row per fixed cell plus a re-mask summary row per iteration."""
    with open(path, "w") as f:
        f.write("iteration,cell,confidence,action\n")
        for rec in trace.iterations:
            for (t, g, j), conf in zip(rec.fixed_cells, rec.confidences):
                f.write(f"{rec.step},{t}:{g}:{j},{conf:.6f},fix\n")
            f.write(f"{rec.step},*,,remask={rec.remasked}\n")
        f.write(f"fine,*,,filled={trace.fine_filled}\n")
