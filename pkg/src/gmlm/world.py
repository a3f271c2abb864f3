"""Synthetic token world with known conditional structure.

Every cell's "base" token is a hash of (semantic id, speaker, group,
level) plus, for entanglement, the emitted tokens it depends on: the
level-0 token of group g hashes in the emitted level-0 tokens of all
groups before it, and every fine token hashes in all emitted level-0
tokens of its frame. Emitted tokens equal their base with probability
1 - p_noise, otherwise they are uniform over the codebook. Because the
dependencies are on emitted tokens, the conditional distribution of any
cell given its resolved dependencies is exactly

    (1 - p_noise) + p_noise / C   at the base token,
    p_noise / C                   elsewhere,

which is what oracle_posterior returns and what the oracle model adapter
exposes through the predictor's forward contract.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .tokens import CodecParams, SemanticSeq, TokenGrid, load_gact, save_gact

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# Self-transition probability of the semantic Markov chain.
SEM_SELF_TRANSITION = 0.6


def mix64(x: int) -> int:
    """splitmix64 finalizer; the public mixing primitive of this world."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX_A) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX_B) & _MASK64
    return x ^ (x >> 31)


def hash_fields(seed: int, *fields: int) -> int:
    """Order-sensitive combination of integer fields into 64 bits."""
    h = mix64(seed ^ _GOLDEN)
    for f in fields:
        h = mix64((h * _GOLDEN + int(f) + 1) & _MASK64)
    return h


@dataclass(frozen=True)
class WorldSpec:
    params: CodecParams
    semantic_vocab: int = 16
    speakers: int = 8
    p_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.semantic_vocab < 2:
            raise ValueError("semantic_vocab must be >= 2")
        if self.speakers < 1:
            raise ValueError("speakers must be >= 1")
        if not 0.0 <= self.p_noise < 1.0:
            raise ValueError("p_noise must be in [0, 1)")


@dataclass
class Utterance:
    speaker: int
    sem: SemanticSeq
    grid: TokenGrid


class DependencyMaskedError(ValueError):
    """A queried cell's dependency is still masked: the schedule is broken."""


def _dependency_cells(g: int, j: int, groups: int) -> list[tuple[int, int]]:
    """(group, level) cells of the same frame that the base of (g, j) hashes in."""
    if j == 0:
        return [(gp, 0) for gp in range(g)]
    return [(gp, 0) for gp in range(groups)]


def base_token(spec: WorldSpec, sem_id: int, speaker: int, g: int, j: int,
               deps: tuple[int, ...]) -> int:
    """Deterministic base token for a cell given its emitted dependencies."""
    return hash_fields(spec.seed, sem_id, speaker, g, j, *deps) % spec.params.codebook_size


def _semantic_chain(spec: WorldSpec, T: int, rng: np.random.Generator) -> np.ndarray:
    ids = np.zeros(T, dtype=np.int32)
    ids[0] = rng.integers(spec.semantic_vocab)
    for t in range(1, T):
        if rng.random() < SEM_SELF_TRANSITION:
            ids[t] = ids[t - 1]
        else:
            step = rng.integers(spec.semantic_vocab - 1)
            ids[t] = (ids[t - 1] + 1 + step) % spec.semantic_vocab
    return ids


def _emit(spec: WorldSpec, base: int, rng: np.random.Generator) -> int:
    if rng.random() < spec.p_noise:
        return int(rng.integers(spec.params.codebook_size))
    return base


def generate_utterance(spec: WorldSpec, T: int, rng: np.random.Generator) -> Utterance:
    """One utterance; tokens emitted in dependency order within each frame."""
    p = spec.params
    speaker = int(rng.integers(spec.speakers))
    sem_ids = _semantic_chain(spec, T, rng)
    tokens = np.zeros((T, p.groups, p.levels), dtype=np.int32)
    for t in range(T):
        s = int(sem_ids[t])
        coarse: list[int] = []
        for g in range(p.groups):
            tok = _emit(spec, base_token(spec, s, speaker, g, 0, tuple(coarse)), rng)
            tokens[t, g, 0] = tok
            coarse.append(tok)
        deps = tuple(coarse)
        for g in range(p.groups):
            for j in range(1, p.levels):
                tokens[t, g, j] = _emit(spec, base_token(spec, s, speaker, g, j, deps), rng)
    grid = TokenGrid(p, tokens, np.zeros(tokens.shape, dtype=bool))
    return Utterance(speaker, SemanticSeq(sem_ids, spec.semantic_vocab), grid)


def generate_corpus(
    spec: WorldSpec,
    n: int,
    t_range: tuple[int, int],
    seed: int | None = None,
) -> list[Utterance]:
    """n utterances with frame counts uniform in t_range (inclusive).

    Each utterance runs on its own rng derived from (seed, index), so the
    corpus is reproducible and utterances could be generated concurrently.
    """
    t_min, t_max = t_range
    if n < 1:
        raise ValueError("n must be >= 1")
    if t_min < 2 or t_max < t_min:
        raise ValueError("need 2 <= T_min <= T_max")
    root = spec.seed if seed is None else seed
    out = []
    for i in range(n):
        rng = np.random.default_rng(hash_fields(root, 0xC0DE, i))
        T = int(rng.integers(t_min, t_max + 1))
        out.append(generate_utterance(spec, T, rng))
    return out


def oracle_posterior(
    spec: WorldSpec,
    speaker: int,
    sem: SemanticSeq,
    grid: TokenGrid,
    cell: tuple[int, int, int],
) -> np.ndarray:
    """Exact conditional distribution of a masked cell given resolved deps."""
    t, g, j = cell
    if not grid.mask[t, g, j]:
        raise ValueError(f"cell {cell} is not masked")
    deps = []
    for gp, jp in _dependency_cells(g, j, spec.params.groups):
        if grid.mask[t, gp, jp]:
            raise DependencyMaskedError(
                f"dependency ({t},{gp},{jp}) of {cell} still masked"
            )
        deps.append(int(grid.tokens[t, gp, jp]))
    C = spec.params.codebook_size
    base = base_token(spec, int(sem.ids[t]), speaker, g, j, tuple(deps))
    vec = np.full(C, spec.p_noise / C)
    vec[base] += 1.0 - spec.p_noise
    return vec


def _noise_dist(base: int, p_noise: float, C: int) -> np.ndarray:
    vec = np.full(C, p_noise / C)
    vec[base] += 1.0 - p_noise
    return vec


class OracleModel:
    """Brute-force posterior wrapped in the predictor's forward contract.

    forward() returns log-probabilities at masked cells and uniform zeros
    at unmasked ones. Masked dependencies are marginalized out exactly
    (their own distributions computed recursively in dependency order),
    so a fully masked frame still yields each cell's true marginal. The
    prompt carries no information the oracle needs; encode_prompt only
    participates in the call-counting contract.
    """

    # Refuse to enumerate dependency combinations past this many terms.
    MARGINALIZE_CAP = 1 << 20

    def __init__(self, spec: WorldSpec, speaker: int):
        self.spec = spec
        self.speaker = speaker
        self.prompt_encodes = 0
        self.forwards = 0

    def encode_prompt(self, prompt: TokenGrid):
        if prompt.mask.any():
            raise ValueError("prompt must be fully unmasked")
        self.prompt_encodes += 1
        return ("oracle-cache", prompt.T)

    def _cell_dist(self, sem_id: int, frame_dists: list[np.ndarray | int],
                   g: int, j: int) -> np.ndarray:
        """Distribution of cell (g, j) given per-group coarse dists/values."""
        spec = self.spec
        C = spec.params.codebook_size
        dep_cells = _dependency_cells(g, j, spec.params.groups)
        dep_states = [frame_dists[gp] for gp, _ in dep_cells]
        fixed = [s for s in dep_states if isinstance(s, (int, np.integer))]
        if len(fixed) == len(dep_states):
            base = base_token(spec, sem_id, self.speaker, g, j, tuple(fixed))
            return _noise_dist(base, spec.p_noise, C)
        # Marginalize over the masked dependencies' own distributions.
        supports = []
        for s in dep_states:
            if isinstance(s, (int, np.integer)):
                supports.append([(int(s), 1.0)])
            else:
                supports.append([(v, s[v]) for v in np.flatnonzero(s > 0.0)])
        total = 1
        for s in supports:
            total *= len(s)
        if total > self.MARGINALIZE_CAP:
            return np.full(C, 1.0 / C)
        out = np.zeros(C)
        stack = [((), 1.0)]
        for support in supports:
            stack = [(combo + (v,), w * pv) for combo, w in stack for v, pv in support]
        for combo, w in stack:
            base = base_token(spec, sem_id, self.speaker, g, j, combo)
            out += w * _noise_dist(base, spec.p_noise, C)
        return out

    def forward(self, sem: SemanticSeq, grid: TokenGrid, cache) -> np.ndarray:
        self.forwards += 1
        p = self.spec.params
        T = grid.T
        logits = np.zeros((T, p.groups, p.levels, p.codebook_size))
        for t in range(T):
            sem_id = int(sem.ids[t])
            # Coarse states in dependency order: emitted value if unmasked,
            # else the cell's own marginal given the earlier groups.
            frame_dists: list[np.ndarray | int] = []
            for g in range(p.groups):
                if grid.mask[t, g, 0]:
                    frame_dists.append(self._cell_dist(sem_id, frame_dists, g, 0))
                else:
                    frame_dists.append(int(grid.tokens[t, g, 0]))
            for g in range(p.groups):
                if grid.mask[t, g, 0]:
                    with np.errstate(divide="ignore"):
                        logits[t, g, 0] = np.log(frame_dists[g])
                for j in range(1, p.levels):
                    if grid.mask[t, g, j]:
                        dist = self._cell_dist(sem_id, frame_dists, g, j)
                        with np.errstate(divide="ignore"):
                            logits[t, g, j] = np.log(dist)
        return logits


def oracle_as_model(spec: WorldSpec, speaker: int) -> OracleModel:
    """Adapter satisfying the predictor forward contract for a known speaker."""
    return OracleModel(spec, speaker)


def save_corpus(dirpath, corpus: list[Utterance]) -> None:
    """GACT file per utterance plus a manifest of (filename, speaker, T)."""
    os.makedirs(dirpath, exist_ok=True)
    lines = []
    for i, utt in enumerate(corpus):
        name = f"utt_{i:05d}.gact"
        save_gact(os.path.join(dirpath, name), utt.grid, utt.sem)
        lines.append(f"{name} {utt.speaker} {utt.grid.T}")
    with open(os.path.join(dirpath, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_corpus(dirpath) -> list[Utterance]:
    out = []
    with open(os.path.join(dirpath, "manifest.txt")) as f:
        for line in f:
            if not line.strip():
                continue
            name, speaker, T = line.split()
            grid, sem = load_gact(os.path.join(dirpath, name))
            if grid.T != int(T):
                raise ValueError(f"manifest T mismatch for {name}")
            out.append(Utterance(int(speaker), sem, grid))
    return out
