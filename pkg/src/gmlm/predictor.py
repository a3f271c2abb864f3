"""Prediction network: embedding aggregation, pre-norm attention blocks with
cross-attention into a cached prompt encoding, and per-(group, level) output
heads. Forward, reverse-mode gradients and the optimizer are written out by
hand for this fixed graph; everything runs in float64.

Layout per decoder layer:

    x = x + SelfAttn(LN1(x))                  # over target frames
    x = x + CrossAttn(LN2(x), K_cache, V_cache)
    x = x + FFN(LN3(x))                       # linear-GELU-linear

and a final LayerNorm before the output heads. The prompt encoder is a
short stack of self-attention blocks over acoustic-only prompt embeddings
(no semantic ids); its output e is projected once per decoder layer into
the cross-attention keys/values, which is all a decode iteration touches.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .tokens import CodecParams, SemanticSeq, TokenGrid

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715

CKPT_MAGIC = b"GMLM"
CKPT_VERSION = 1


@dataclass(frozen=True)
class PredictorConfig:
    params: CodecParams
    sem_vocab: int
    dim: int = 128
    heads: int = 4
    layers: int = 4
    ffn_dim: int | None = None  # None -> 4 * dim
    prompt_layers: int = 2
    max_frames: int = 512

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.layers < 1 or self.prompt_layers < 1:
            raise ValueError("need at least one layer in each stack")
        if self.sem_vocab < 1 or self.max_frames < 1:
            raise ValueError("bad vocab or frame budget")

    @property
    def ffn(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.dim

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class OpCounters:
    """Work accounting. FLOPs are split by where the work lives:
    prompt_side recurs only when the prompt is re-encoded, cross_attn is the
    sole prompt-length-dependent part of a cached forward."""

    forwards: int = 0
    prompt_encodes: int = 0
    flops_prompt_side: float = 0.0
    flops_cross_attn: float = 0.0
    flops_target_side: float = 0.0

    def reset(self) -> None:
        self.forwards = 0
        self.prompt_encodes = 0
        self.flops_prompt_side = 0.0
        self.flops_cross_attn = 0.0
        self.flops_target_side = 0.0

    def snapshot(self) -> "OpCounters":
        return OpCounters(
            self.forwards,
            self.prompt_encodes,
            self.flops_prompt_side,
            self.flops_cross_attn,
            self.flops_target_side,
        )


@dataclass
class PromptCache:
    """Per-layer cross-attention keys/values projected from the prompt
    encoding; built once per decode and read-only afterwards."""

    keys: list[np.ndarray]  # layers x (H, P, dh)
    values: list[np.ndarray]
    prompt_len: int
    encoding: np.ndarray  # e, (P, d)
    tape: dict | None = None  # encoder intermediates, kept only for training


@dataclass
class Tape:
    """Intermediates of one forward, consumed exactly once by backward."""

    sem_ids: np.ndarray
    tokens: np.ndarray
    mask: np.ndarray
    layers: list
    final_ln: tuple
    final_x: np.ndarray
    cache: PromptCache


# ---------------------------------------------------------------------------
# primitive ops


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * istd
    return gain * xhat + bias, (xhat, istd)


def _layer_norm_back(dout, rec, gain, grads, gname, bname):
    xhat, istd = rec
    grads[gname] += (dout * xhat).sum(axis=0)
    grads[bname] += dout.sum(axis=0)
    dxhat = dout * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return istd * (dxhat - m1 - xhat * m2)


def _softmax(s):
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_back(a, da):
    return a * (da - (da * a).sum(axis=-1, keepdims=True))


def _gelu(x):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_K * (x2 * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dout, x, t):
    du = _GELU_C * (1.0 + 3.0 * _GELU_K * (x * x))
    return dout * (0.5 * (1.0 + t) + 0.5 * x * ((1.0 - t * t) * du))


def _split_heads(x, heads):
    T, d = x.shape
    return x.reshape(T, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x):
    H, T, dh = x.shape
    return x.transpose(1, 0, 2).reshape(T, H * dh)


# ---------------------------------------------------------------------------
# parameter registry


def _param_spec(cfg: PredictorConfig) -> list[tuple[str, tuple, str]]:
    """(name, shape, kind) in checkpoint order. kind drives initialization."""
    G, Nq, C = cfg.params.groups, cfg.params.levels, cfg.params.codebook_size
    d, f, M = cfg.dim, cfg.ffn, cfg.max_frames
    spec: list[tuple[str, tuple, str]] = [
        ("emb_sem", (cfg.sem_vocab, d), "emb"),
        ("emb_ac", (G, Nq, C, d), "emb"),
        ("emb_mask", (G, Nq, d), "emb"),
        ("pos_prompt", (M, d), "emb"),
        ("pos_tgt", (M, d), "emb"),
    ]

    def ln(prefix):
        spec.append((f"{prefix}.g", (d,), "ln_gain"))
        spec.append((f"{prefix}.b", (d,), "ln_bias"))

    def attn(prefix):
        for nm in ("wq", "wk", "wv", "wo"):
            spec.append((f"{prefix}.{nm}", (d, d), "proj"))
        for nm in ("bq", "bk", "bv", "bo"):
            spec.append((f"{prefix}.{nm}", (d,), "bias"))

    def ffn(prefix):
        spec.append((f"{prefix}.w1", (d, f), "proj"))
        spec.append((f"{prefix}.b1", (f,), "bias"))
        spec.append((f"{prefix}.w2", (f, d), "proj"))
        spec.append((f"{prefix}.b2", (d,), "bias"))

    for b in range(cfg.prompt_layers):
        ln(f"pe{b}.ln1")
        attn(f"pe{b}.attn")
        ln(f"pe{b}.ln2")
        ffn(f"pe{b}.ff")
    ln("pe.lnf")
    for l in range(cfg.layers):
        ln(f"dec{l}.ln1")
        attn(f"dec{l}.self")
        ln(f"dec{l}.ln2")
        attn(f"dec{l}.cross")
        ln(f"dec{l}.ln3")
        ffn(f"dec{l}.ff")
    ln("dec.lnf")
    spec.append(("head.w", (G, Nq, d, C), "proj"))
    spec.append(("head.b", (G, Nq, C), "bias"))
    return spec


def init_predictor(config: PredictorConfig, seed: int = 0) -> "Predictor":
    """Seeded init: projections uniform +-1/sqrt(fan_in), embeddings N(0, 0.02)."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in _param_spec(config):
        if kind == "proj":
            bound = 1.0 / math.sqrt(shape[-2])
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif kind == "emb":
            params[name] = rng.normal(0.0, 0.02, size=shape)
        elif kind == "ln_gain":
            params[name] = np.ones(shape)
        else:  # bias / ln_bias
            params[name] = np.zeros(shape)
    return Predictor(config, params)


def zero_grads(pred: "Predictor") -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in pred.params.items()}


# ---------------------------------------------------------------------------


class Predictor:
    def __init__(self, config: PredictorConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.counters = OpCounters()

    # -- embedding -----------------------------------------------------

    def embed_frames(self, sem: SemanticSeq, grid: TokenGrid) -> np.ndarray:
        """Per-frame sum of semantic, acoustic-or-MASK and position embeddings."""
        cfg = self.config
        if sem.T != grid.T:
            raise ValueError("semantic and grid frame counts differ")
        if grid.T > cfg.max_frames:
            raise ValueError(f"{grid.T} frames exceeds budget {cfg.max_frames}")
        pp = self.params
        x = pp["emb_sem"][sem.ids] + pp["pos_tgt"][: grid.T]
        for g in range(cfg.params.groups):
            for j in range(cfg.params.levels):
                tok = pp["emb_ac"][g, j][grid.tokens[:, g, j]]
                m = grid.mask[:, g, j][:, None]
                x = x + np.where(m, pp["emb_mask"][g, j][None, :], tok)
        return x

    def _embed_frames_back(self, dx, sem_ids, tokens, mask, grads):
        cfg = self.config
        np.add.at(grads["emb_sem"], sem_ids, dx)
        grads["pos_tgt"][: dx.shape[0]] += dx
        for g in range(cfg.params.groups):
            for j in range(cfg.params.levels):
                m = mask[:, g, j]
                if m.any():
                    grads["emb_mask"][g, j] += dx[m].sum(axis=0)
                if (~m).any():
                    np.add.at(grads["emb_ac"][g, j], tokens[~m, g, j], dx[~m])

    def _embed_prompt(self, prompt: TokenGrid) -> np.ndarray:
        """Acoustic + position only; prompt conditioning needs no semantic ids."""
        cfg = self.config
        if prompt.mask.any():
            raise ValueError("prompt must be fully unmasked")
        if prompt.T > cfg.max_frames:
            raise ValueError(f"{prompt.T} prompt frames exceeds budget {cfg.max_frames}")
        pp = self.params
        x = pp["pos_prompt"][: prompt.T].copy()
        for g in range(cfg.params.groups):
            for j in range(cfg.params.levels):
                x += pp["emb_ac"][g, j][prompt.tokens[:, g, j]]
        return x

    def _embed_prompt_back(self, dx, tokens, grads):
        cfg = self.config
        grads["pos_prompt"][: dx.shape[0]] += dx
        for g in range(cfg.params.groups):
            for j in range(cfg.params.levels):
                np.add.at(grads["emb_ac"][g, j], tokens[:, g, j], dx)

    # -- attention / ffn sub-blocks -------------------------------------

    def _flops(self, cat: str, n: float) -> None:
        if cat == "prompt":
            self.counters.flops_prompt_side += n
        elif cat == "cross":
            self.counters.flops_cross_attn += n
        else:
            self.counters.flops_target_side += n

    def _self_attn_fwd(self, lnp, ap, x, cat):
        pp, H = self.params, self.config.heads
        scale = 1.0 / math.sqrt(self.config.head_dim)
        T, d = x.shape
        xn, ln = _layer_norm(x, pp[f"{lnp}.g"], pp[f"{lnp}.b"])
        q = _split_heads(xn @ pp[f"{ap}.wq"] + pp[f"{ap}.bq"], H)
        k = _split_heads(xn @ pp[f"{ap}.wk"] + pp[f"{ap}.bk"], H)
        v = _split_heads(xn @ pp[f"{ap}.wv"] + pp[f"{ap}.bv"], H)
        a = _softmax(scale * (q @ k.transpose(0, 2, 1)))
        ctx = _merge_heads(a @ v)
        out = ctx @ pp[f"{ap}.wo"] + pp[f"{ap}.bo"]
        self._flops(cat, 8.0 * T * d * d + 4.0 * T * T * d)
        rec = {"ln": ln, "xn": xn, "q": q, "k": k, "v": v, "a": a, "ctx": ctx}
        return x + out, rec

    def _self_attn_bwd(self, lnp, ap, rec, dout, grads):
        pp, H = self.params, self.config.heads
        scale = 1.0 / math.sqrt(self.config.head_dim)
        dctx = dout @ pp[f"{ap}.wo"].T
        grads[f"{ap}.wo"] += rec["ctx"].T @ dout
        grads[f"{ap}.bo"] += dout.sum(axis=0)
        do = _split_heads(dctx, H)
        da = do @ rec["v"].transpose(0, 2, 1)
        dv = rec["a"].transpose(0, 2, 1) @ do
        ds = _softmax_back(rec["a"], da)
        dq = scale * (ds @ rec["k"])
        dk = scale * (ds.transpose(0, 2, 1) @ rec["q"])
        dqm, dkm, dvm = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        xn = rec["xn"]
        grads[f"{ap}.wq"] += xn.T @ dqm
        grads[f"{ap}.wk"] += xn.T @ dkm
        grads[f"{ap}.wv"] += xn.T @ dvm
        grads[f"{ap}.bq"] += dqm.sum(axis=0)
        grads[f"{ap}.bk"] += dkm.sum(axis=0)
        grads[f"{ap}.bv"] += dvm.sum(axis=0)
        dxn = dqm @ pp[f"{ap}.wq"].T + dkm @ pp[f"{ap}.wk"].T + dvm @ pp[f"{ap}.wv"].T
        dx = _layer_norm_back(dxn, rec["ln"], pp[f"{lnp}.g"], grads, f"{lnp}.g", f"{lnp}.b")
        return dout + dx

    def _cross_attn_fwd(self, lnp, ap, x, K, V):
        pp, H = self.params, self.config.heads
        scale = 1.0 / math.sqrt(self.config.head_dim)
        T, d = x.shape
        P = K.shape[1]
        xn, ln = _layer_norm(x, pp[f"{lnp}.g"], pp[f"{lnp}.b"])
        q = _split_heads(xn @ pp[f"{ap}.wq"] + pp[f"{ap}.bq"], H)
        a = _softmax(scale * (q @ K.transpose(0, 2, 1)))
        ctx = _merge_heads(a @ V)
        out = ctx @ pp[f"{ap}.wo"] + pp[f"{ap}.bo"]
        self._flops("target", 4.0 * T * d * d)
        self._flops("cross", 4.0 * T * P * d)
        rec = {"ln": ln, "xn": xn, "q": q, "a": a, "ctx": ctx}
        return x + out, rec

    def _cross_attn_bwd(self, lnp, ap, rec, K, V, dout, grads):
        pp, H = self.params, self.config.heads
        scale = 1.0 / math.sqrt(self.config.head_dim)
        dctx = dout @ pp[f"{ap}.wo"].T
        grads[f"{ap}.wo"] += rec["ctx"].T @ dout
        grads[f"{ap}.bo"] += dout.sum(axis=0)
        do = _split_heads(dctx, H)
        da = do @ V.transpose(0, 2, 1)
        dV = rec["a"].transpose(0, 2, 1) @ do
        ds = _softmax_back(rec["a"], da)
        dq = scale * (ds @ K)
        dK = scale * (ds.transpose(0, 2, 1) @ rec["q"])
        dqm = _merge_heads(dq)
        grads[f"{ap}.wq"] += rec["xn"].T @ dqm
        grads[f"{ap}.bq"] += dqm.sum(axis=0)
        dxn = dqm @ pp[f"{ap}.wq"].T
        dx = _layer_norm_back(dxn, rec["ln"], pp[f"{lnp}.g"], grads, f"{lnp}.g", f"{lnp}.b")
        return dout + dx, dK, dV

    def _ffn_fwd(self, lnp, fp, x, cat):
        pp = self.params
        T, d = x.shape
        f = self.config.ffn
        xn, ln = _layer_norm(x, pp[f"{lnp}.g"], pp[f"{lnp}.b"])
        u = xn @ pp[f"{fp}.w1"] + pp[f"{fp}.b1"]
        gact, tanh_u = _gelu(u)
        out = gact @ pp[f"{fp}.w2"] + pp[f"{fp}.b2"]
        self._flops(cat, 4.0 * T * d * f)
        rec = {"ln": ln, "xn": xn, "u": u, "tanh": tanh_u, "gact": gact}
        return x + out, rec

    def _ffn_bwd(self, lnp, fp, rec, dout, grads):
        pp = self.params
        dgact = dout @ pp[f"{fp}.w2"].T
        grads[f"{fp}.w2"] += rec["gact"].T @ dout
        grads[f"{fp}.b2"] += dout.sum(axis=0)
        du = _gelu_back(dgact, rec["u"], rec["tanh"])
        grads[f"{fp}.w1"] += rec["xn"].T @ du
        grads[f"{fp}.b1"] += du.sum(axis=0)
        dxn = du @ pp[f"{fp}.w1"].T
        dx = _layer_norm_back(dxn, rec["ln"], pp[f"{lnp}.g"], grads, f"{lnp}.g", f"{lnp}.b")
        return dout + dx

    # -- prompt encoder -------------------------------------------------

    def encode_prompt(self, prompt: TokenGrid, want_tape: bool = False) -> PromptCache:
        """Run the prompt stack once and project per-layer keys/values."""
        cfg, pp = self.config, self.params
        x = self._embed_prompt(prompt)
        P, d = x.shape
        recs = []
        for b in range(cfg.prompt_layers):
            x, r_attn = self._self_attn_fwd(f"pe{b}.ln1", f"pe{b}.attn", x, "prompt")
            x, r_ff = self._ffn_fwd(f"pe{b}.ln2", f"pe{b}.ff", x, "prompt")
            recs.append((r_attn, r_ff))
        e, lnf = _layer_norm(x, pp["pe.lnf.g"], pp["pe.lnf.b"])
        keys, values = [], []
        for l in range(cfg.layers):
            keys.append(_split_heads(e @ pp[f"dec{l}.cross.wk"] + pp[f"dec{l}.cross.bk"], cfg.heads))
            values.append(_split_heads(e @ pp[f"dec{l}.cross.wv"] + pp[f"dec{l}.cross.bv"], cfg.heads))
            self._flops("prompt", 4.0 * P * d * d)
        self.counters.prompt_encodes += 1
        tape = None
        if want_tape:
            tape = {"tokens": prompt.tokens, "blocks": recs, "lnf": lnf, "e": e}
        return PromptCache(keys, values, P, e, tape)

    def _encode_prompt_back(self, cache: PromptCache, dK: list, dV: list, grads):
        cfg, pp = self.config, self.params
        if cache.tape is None:
            raise ValueError("prompt cache was built without a tape")
        e = cache.encoding
        de = np.zeros_like(e)
        for l in range(cfg.layers):
            dkm, dvm = _merge_heads(dK[l]), _merge_heads(dV[l])
            grads[f"dec{l}.cross.wk"] += e.T @ dkm
            grads[f"dec{l}.cross.bk"] += dkm.sum(axis=0)
            grads[f"dec{l}.cross.wv"] += e.T @ dvm
            grads[f"dec{l}.cross.bv"] += dvm.sum(axis=0)
            de += dkm @ pp[f"dec{l}.cross.wk"].T + dvm @ pp[f"dec{l}.cross.wv"].T
        dx = _layer_norm_back(de, cache.tape["lnf"], pp["pe.lnf.g"], grads, "pe.lnf.g", "pe.lnf.b")
        for b in reversed(range(cfg.prompt_layers)):
            r_attn, r_ff = cache.tape["blocks"][b]
            dx = self._ffn_bwd(f"pe{b}.ln2", f"pe{b}.ff", r_ff, dx, grads)
            dx = self._self_attn_bwd(f"pe{b}.ln1", f"pe{b}.attn", r_attn, dx, grads)
        self._embed_prompt_back(dx, cache.tape["tokens"], grads)

    # -- prediction network ---------------------------------------------

    def forward(
        self,
        sem: SemanticSeq,
        grid: TokenGrid,
        cache: PromptCache,
        want_tape: bool = False,
    ):
        """Logits (T, G, N_q, C) for every cell of the target grid."""
        cfg, pp = self.config, self.params
        if len(cache.keys) != cfg.layers or cache.keys[0].shape[1] != cache.prompt_len:
            raise ValueError("prompt cache does not match this model")
        x = self.embed_frames(sem, grid)
        T, d = x.shape
        layer_recs = []
        for l in range(cfg.layers):
            x, r_self = self._self_attn_fwd(f"dec{l}.ln1", f"dec{l}.self", x, "target")
            x, r_cross = self._cross_attn_fwd(
                f"dec{l}.ln2", f"dec{l}.cross", x, cache.keys[l], cache.values[l]
            )
            x, r_ff = self._ffn_fwd(f"dec{l}.ln3", f"dec{l}.ff", x, "target")
            layer_recs.append((r_self, r_cross, r_ff))
        xf, lnf = _layer_norm(x, pp["dec.lnf.g"], pp["dec.lnf.b"])
        logits = np.tensordot(xf, pp["head.w"], axes=([1], [2])) + pp["head.b"]
        p = cfg.params
        self._flops("target", 2.0 * T * d * p.groups * p.levels * p.codebook_size)
        self.counters.forwards += 1
        if not np.isfinite(logits).all():
            raise FloatingPointError("non-finite logits: model diverged")
        if not want_tape:
            return logits
        tape = Tape(sem.ids, grid.tokens, grid.mask, layer_recs, lnf, xf, cache)
        return logits, tape

    def forward_uncached(self, sem: SemanticSeq, grid: TokenGrid, prompt: TokenGrid):
        """Re-encode the prompt and reproject K/V on every call."""
        return self.forward(sem, grid, self.encode_prompt(prompt))

    def backward(self, tape: Tape, dlogits: np.ndarray,
                 out: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        """Exact reverse-mode gradients for every parameter, including the
        prompt encoder reached through the cached keys/values. Accumulates
        into `out` when given."""
        cfg, pp = self.config, self.params
        cache = tape.cache
        grads = zero_grads(self) if out is None else out
        if dlogits.shape != (tape.final_x.shape[0],) + pp["head.b"].shape:
            raise ValueError("loss gradient shape does not match the forward tape")
        grads["head.w"] += np.tensordot(tape.final_x, dlogits, axes=([0], [0])).transpose(1, 2, 0, 3)
        grads["head.b"] += dlogits.sum(axis=0)
        dxf = np.tensordot(dlogits, pp["head.w"], axes=([1, 2, 3], [0, 1, 3]))
        dx = _layer_norm_back(dxf, tape.final_ln, pp["dec.lnf.g"], grads, "dec.lnf.g", "dec.lnf.b")
        dKs = [np.zeros_like(k) for k in cache.keys]
        dVs = [np.zeros_like(v) for v in cache.values]
        for l in reversed(range(cfg.layers)):
            r_self, r_cross, r_ff = tape.layers[l]
            dx = self._ffn_bwd(f"dec{l}.ln3", f"dec{l}.ff", r_ff, dx, grads)
            dx, dK, dV = self._cross_attn_bwd(
                f"dec{l}.ln2", f"dec{l}.cross", r_cross, cache.keys[l], cache.values[l], dx, grads
            )
            dKs[l] += dK
            dVs[l] += dV
            dx = self._self_attn_bwd(f"dec{l}.ln1", f"dec{l}.self", r_self, dx, grads)
        self._embed_frames_back(dx, tape.sem_ids, tape.tokens, tape.mask, grads)
        self._encode_prompt_back(cache, dKs, dVs, grads)
        return grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    def __init__(self, pred: Predictor):
        self.m = {k: np.zeros_like(v) for k, v in pred.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in pred.params.items()}
        self.t = 0


def adam_step(pred: Predictor, grads: dict[str, np.ndarray], hyper: AdamHyper,
              state: AdamState) -> tuple[Predictor, AdamState]:
    """Bias-corrected first/second-moment update, in place."""
    state.t += 1
    step_scale = hyper.lr / (1.0 - hyper.beta1**state.t)
    inv_sqrt_bc2 = 1.0 / math.sqrt(1.0 - hyper.beta2**state.t)
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {k}")
        m, v = state.m[k], state.v[k]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * (g * g)
        denom = np.sqrt(v)
        denom *= inv_sqrt_bc2
        denom += hyper.eps
        upd = m / denom
        upd *= step_scale
        pred.params[k] -= upd
    return pred, state


# ---------------------------------------------------------------------------
# checkpoint io

_CKPT_HEADER = "<IIIIIIIIIIId"  # dims, vocab and codec fields + fps


def save_predictor(path, pred: Predictor) -> None:
    """Versioned binary: config header, then parameter blocks as
    little-endian f32 in registry order (see _param_spec)."""
    cfg = pred.config
    p = cfg.params
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(bytes([CKPT_VERSION]))
        f.write(
            struct.pack(
                _CKPT_HEADER,
                cfg.dim, cfg.heads, cfg.layers, cfg.ffn, cfg.prompt_layers,
                cfg.max_frames, cfg.sem_vocab,
                p.groups, p.levels, p.codebook_size, p.latent_dim,
                p.frames_per_second,
            )
        )
        for name, _, _ in _param_spec(cfg):
            f.write(pred.params[name].astype("<f4").tobytes())


def load_predictor(path) -> Predictor:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CKPT_MAGIC or data[4] != CKPT_VERSION:
        raise ValueError("not a model checkpoint")
    fields = struct.unpack_from(_CKPT_HEADER, data, 5)
    dim, heads, layers, ffn, pl, maxf, sv, G, Nq, C, D, fps = fields
    cfg = PredictorConfig(
        params=CodecParams(groups=G, levels=Nq, codebook_size=C, latent_dim=D,
                           frames_per_second=fps),
        sem_vocab=sv, dim=dim, heads=heads, layers=layers, ffn_dim=ffn,
        prompt_layers=pl, max_frames=maxf,
    )
    off = 5 + struct.calcsize(_CKPT_HEADER)
    params = {}
    for name, shape, _ in _param_spec(cfg):
        n = int(np.prod(shape))
        params[name] = (
            np.frombuffer(data, dtype="<f4", count=n, offset=off)
            .astype(np.float64)
            .reshape(shape)
        )
        off += 4 * n
    if off != len(data):
        raise ValueError("checkpoint size mismatch")
    return Predictor(cfg, params)
