"""Group-masked training: prompt/target split, per-group cosine masking,
masked cross-entropy, and the seeded training loop.

Each plan draws a prompt delimiter t uniform on [eps, T-1], a level
indicator l ~ Bernoulli(0.5) and a mask fraction u ~ Uniform(0, 1]. On a
coarse round (l=0) every group independently masks ceil(cos(pi/2 * u) *
T_tgt) level-0 cells along the temporal axis and ALL fine cells are
masked; on a fine round (l=1) the coarse cells stay visible and each
(group, fine level) masks the same count. The loss sees exactly the
masked cells.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .predictor import AdamHyper, AdamState, Predictor, adam_step, zero_grads
from .tokens import SemanticSeq, TokenGrid
from .world import Utterance


@dataclass(frozen=True)
class MaskPlan:
    prompt_len: int  # delimiter t: frames [0, t) are prompt
    level: int  # 0 = coarse round, 1 = fine round
    mask_fraction: float  # u in (0, 1]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    steps: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    min_prompt: int | None = None  # None -> max(1, T // 8)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class TrainStats:
    steps: int
    mean_loss: float
    level_accuracy: np.ndarray  # (N_q,) flagged-cell accuracy per level
    rows: list


def cosine_fraction(u: float) -> float:
    """Fraction of target cells to mask for a draw u in (0, 1]."""
    return math.cos(0.5 * math.pi * u)


def prompt_floor(T: int, cfg: TrainConfig | None = None) -> int:
    """Smallest allowed prompt delimiter; keeps the prompt non-empty."""
    if cfg is not None and cfg.min_prompt is not None:
        return min(cfg.min_prompt, T - 1)
    return min(max(1, T // 8), T - 1)


def sample_mask_plan(T: int, eps: int, rng: np.random.Generator) -> MaskPlan:
    if not 1 <= eps <= T - 1:
        raise ValueError(f"eps {eps} outside [1, {T - 1}]")
    t = int(rng.integers(eps, T))  # uniform on [eps, T-1]
    level = int(rng.integers(2))
    u = 1.0 - rng.random()  # (0, 1]
    return MaskPlan(t, level, u)


def apply_gmlm_mask(
    grid: TokenGrid, plan: MaskPlan, rng: np.random.Generator
) -> tuple[TokenGrid, TokenGrid, np.ndarray]:
    """Split into (prompt, masked target, loss flags).

    The target grid keeps the ground-truth token values under its mask;
    consumers must treat masked values as unknown. Loss flags are exactly
    the masked cells.
    """
    if grid.mask.any():
        raise ValueError("training grid must be fully unmasked")
    T = grid.T
    t = plan.prompt_len
    if not 1 <= t <= T - 1:
        raise ValueError(f"prompt delimiter {t} leaves an empty prompt or target")
    p = grid.params
    prompt = TokenGrid(p, grid.tokens[:t].copy(), np.zeros((t, p.groups, p.levels), dtype=bool))
    t_tgt = T - t
    mask = np.zeros((t_tgt, p.groups, p.levels), dtype=bool)
    n = math.ceil(cosine_fraction(plan.mask_fraction) * t_tgt)
    if plan.level == 0:
        mask[:, :, 1:] = True  # every fine cell
        for g in range(p.groups):
            mask[rng.choice(t_tgt, size=n, replace=False), g, 0] = True
    else:
        for g in range(p.groups):
            for j in range(1, p.levels):
                mask[rng.choice(t_tgt, size=n, replace=False), g, j] = True
    target = TokenGrid(p, grid.tokens[t:].copy(), mask)
    return prompt, target, mask.copy()


def masked_cross_entropy(
    logits: np.ndarray, targets: TokenGrid, flags: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean -log softmax(logits)[target] over flagged cells.

    The gradient is (softmax - onehot) / n_flagged at flagged cells and
    exactly zero everywhere else.
    """
    tok = targets.tokens
    if logits.shape[:3] != tok.shape or flags.shape != tok.shape:
        raise ValueError("logits/targets/flags shapes disagree")
    if not flags.any():
        raise ValueError("no flagged cells")
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = int(flags.sum())
    rows = logp[flags]
    picked = tok[flags]
    loss = float(-rows[np.arange(n), picked].mean())
    grad_rows = np.exp(rows)
    grad_rows[np.arange(n), picked] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[flags] = grad_rows / n
    return loss, dlogits


def train_epoch(
    pred: Predictor,
    corpus: list[Utterance],
    cfg: TrainConfig,
    rng: np.random.Generator,
    stats_path=None,
) -> tuple[Predictor, TrainStats]:
    """cfg.steps batches of (plan, mask, prompt-encode, forward, masked CE,
    backward, optimizer step). Deterministic given rng state and corpus."""
    if not corpus:
        raise ValueError("empty corpus")
    p = pred.config.params
    hyper = AdamHyper(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt)
    state = AdamState(pred)
    n_levels = p.levels
    all_losses = []
    hit = np.zeros(n_levels)
    tot = np.zeros(n_levels)
    rows = []
    csv = None
    if stats_path is not None:
        fresh = not os.path.exists(stats_path)
        csv = open(stats_path, "a")
        if fresh:
            csv.write("step,loss,acc_coarse,acc_fine\n")
    try:
        for step in range(cfg.steps):
            pick = rng.integers(0, len(corpus), size=cfg.batch_size)
            t_batch = min(corpus[i].grid.T for i in pick)
            grads = zero_grads(pred)
            step_losses = []
            step_hit = np.zeros(n_levels)
            step_tot = np.zeros(n_levels)
            for i in pick:
                utt = corpus[i]
                start = int(rng.integers(0, utt.grid.T - t_batch + 1))
                crop = TokenGrid(
                    p,
                    utt.grid.tokens[start : start + t_batch].copy(),
                    np.zeros((t_batch, p.groups, p.levels), dtype=bool),
                )
                plan = sample_mask_plan(t_batch, prompt_floor(t_batch, cfg), rng)
                prompt, target, flags = apply_gmlm_mask(crop, plan, rng)
                sem_t = SemanticSeq(
                    utt.sem.ids[start + plan.prompt_len : start + t_batch].copy(),
                    utt.sem.vocab_size,
                )
                cache = pred.encode_prompt(prompt, want_tape=True)
                logits, tape = pred.forward(sem_t, target, cache, want_tape=True)
                loss, dlogits = masked_cross_entropy(logits, target, flags)
                pred.backward(tape, dlogits, out=grads)
                step_losses.append(loss)
                guess = logits.argmax(axis=-1)
                for j in range(n_levels):
                    f = flags[:, :, j]
                    step_tot[j] += f.sum()
                    step_hit[j] += (guess[:, :, j][f] == target.tokens[:, :, j][f]).sum()
            for k in grads:
                grads[k] /= cfg.batch_size
            adam_step(pred, grads, hyper, state)
            mean_loss = float(np.mean(step_losses))
            all_losses.append(mean_loss)
            hit += step_hit
            tot += step_tot
            with np.errstate(invalid="ignore"):
                acc_c = step_hit[0] / step_tot[0] if step_tot[0] else float("nan")
                acc_f = (
                    step_hit[1:].sum() / step_tot[1:].sum()
                    if n_levels > 1 and step_tot[1:].sum()
                    else float("nan")
                )
            rows.append((step, mean_loss, acc_c, acc_f))
            if csv is not None:
                csv.write(f"{step},{mean_loss:.6f},{acc_c:.6f},{acc_f:.6f}\n")
    finally:
        if csv is not None:
            csv.close()
    level_acc = np.divide(hit, np.maximum(tot, 1.0))
    stats = TrainStats(
        steps=cfg.steps,
        mean_loss=float(np.mean(all_losses)) if all_losses else float("nan"),
        level_accuracy=level_acc,
        rows=rows,
    )
    return pred, stats
