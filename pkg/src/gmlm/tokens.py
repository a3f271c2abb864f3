"""Token-grid data model and the GACT on-disk format.

A token grid holds one discrete acoustic token per (frame, group, level)
cell together with a mask flag (True = unknown). Level 0 of every group is
the coarse stream; levels >= 1 are the fine streams. The GACT byte format
is the interchange format shared by the corpus generator, the decoder CLI
and the benchmark harness.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

GACT_MAGIC = b"GACT"
GACT_VERSION = 1

# Header: magic(4) + version(1) + T:u32 + G:u8 + N_q:u8 + C:u32 + S_v:u32
_HEADER_FMT = "<IBBII"
_HEADER_SIZE = 4 + 1 + struct.calcsize(_HEADER_FMT)


class GactFormatError(ValueError):
    """Raised when a GACT byte stream is malformed."""


@dataclass(frozen=True)
class CodecParams:
    """Shape parameters of a grouped residual quantizer token stream."""

    groups: int = 2
    levels: int = 2
    codebook_size: int = 1024
    latent_dim: int = 16
    frames_per_second: float = 50.0

    def __post_init__(self):
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.codebook_size < 2:
            raise ValueError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.latent_dim % self.groups != 0:
            raise ValueError(
                f"latent_dim {self.latent_dim} not divisible by groups {self.groups}"
            )
        if self.frames_per_second <= 0:
            raise ValueError("frames_per_second must be positive")

    @property
    def group_dim(self) -> int:
        return self.latent_dim // self.groups

    @property
    def cells_per_frame(self) -> int:
        return self.groups * self.levels


@dataclass
class TokenGrid:
    """Frame-major grid of token ids over (group, level) with mask flags.

    tokens: int array of shape (T, G, N_q); mask: bool array of the same
    shape, True meaning the cell is masked/unknown. Token values stored
    under masked cells carry no meaning to consumers.
    """

    params: CodecParams
    tokens: np.ndarray
    mask: np.ndarray

    @property
    def T(self) -> int:
        return self.tokens.shape[0]

    def validate(self) -> None:
        p = self.params
        expect = (self.T, p.groups, p.levels)
        if self.tokens.shape != expect or self.mask.shape != expect:
            raise ValueError(
                f"grid shapes {self.tokens.shape}/{self.mask.shape} != {expect}"
            )
        known = self.tokens[~self.mask]
        if known.size and (known.min() < 0 or known.max() >= p.codebook_size):
            raise ValueError("unmasked token id out of range")

    def copy(self) -> "TokenGrid":
        return TokenGrid(self.params, self.tokens.copy(), self.mask.copy())

    def equals(self, other: "TokenGrid") -> bool:
        """Cell-for-cell equality; ignores codec fields absent from the wire format."""
        dims = ("groups", "levels", "codebook_size")
        return (
            all(getattr(self.params, k) == getattr(other.params, k) for k in dims)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.tokens[~self.mask], other.tokens[~other.mask])
        )

    def fully_unmasked(self) -> bool:
        return not self.mask.any()


@dataclass
class SemanticSeq:
    """Per-frame semantic token ids, temporally aligned to a TokenGrid."""

    ids: np.ndarray
    vocab_size: int

    @property
    def T(self) -> int:
        return self.ids.shape[0]

    def validate(self) -> None:
        if self.ids.ndim != 1:
            raise ValueError("semantic ids must be 1-D")
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.vocab_size):
            raise ValueError("semantic id out of range")

    def copy(self) -> "SemanticSeq":
        return SemanticSeq(self.ids.copy(), self.vocab_size)


def make_grid(params: CodecParams, T: int, fill: int | None = None) -> TokenGrid:
    """Build a T-frame grid, either fully masked (fill=None) or constant-fill."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    shape = (T, params.groups, params.levels)
    if fill is None:
        return TokenGrid(params, np.zeros(shape, dtype=np.int32), np.ones(shape, dtype=bool))
    if not 0 <= fill < params.codebook_size:
        raise ValueError(f"fill {fill} outside [0, {params.codebook_size})")
    return TokenGrid(params, np.full(shape, fill, dtype=np.int32), np.zeros(shape, dtype=bool))


def coarse_fine_views(grid: TokenGrid) -> tuple[np.ndarray, np.ndarray]:
    """Level-0 cells across all groups, and the deeper-level cells.

    Returns views into grid.tokens: coarse (T, G) and fine (T, G, N_q-1).
    Together they partition every cell of the grid.
    """
    return grid.tokens[:, :, 0], grid.tokens[:, :, 1:]


def serialize_tokens(grid: TokenGrid, sem: SemanticSeq) -> bytes:
    """Encode a fully unmasked grid plus its semantic stream as GACT bytes."""
    if grid.mask.any():
        raise ValueError("cannot serialize a grid with masked cells")
    if sem.T != grid.T:
        raise ValueError(f"semantic length {sem.T} != grid frames {grid.T}")
    p = grid.params
    # ids are in [0, C), so C may reach 65536 with a 16-bit payload
    if p.codebook_size > 0x10000 or sem.vocab_size > 0x10000:
        raise ValueError("codebook/vocab size exceeds 16-bit token width")
    grid.validate()
    sem.validate()
    out = bytearray()
    out += GACT_MAGIC
    out.append(GACT_VERSION)
    out += struct.pack(_HEADER_FMT, grid.T, p.groups, p.levels, p.codebook_size, sem.vocab_size)
    out += sem.ids.astype("<u2").tobytes()
    # frame-major, group-major, level-minor == C order of the (T, G, N_q) array
    out += grid.tokens.astype("<u2").tobytes()
    return bytes(out)


def deserialize_tokens(data: bytes) -> tuple[TokenGrid, SemanticSeq]:
    """Inverse of serialize_tokens. Rejects bad magic, truncation, stray ids."""
    if len(data) < _HEADER_SIZE:
        raise GactFormatError("truncated stream: header incomplete")
    if data[:4] != GACT_MAGIC:
        raise GactFormatError(f"bad magic {data[:4]!r}")
    if data[4] != GACT_VERSION:
        raise GactFormatError(f"unsupported version {data[4]}")
    T, G, N_q, C, S_v = struct.unpack_from(_HEADER_FMT, data, 5)
    if T < 1 or G < 1 or N_q < 1 or C < 2:
        raise GactFormatError("invalid header dimensions")
    body = data[_HEADER_SIZE:]
    need = 2 * T + 2 * T * G * N_q
    if len(body) < need:
        raise GactFormatError(f"truncated stream: need {need} body bytes, have {len(body)}")
    if len(body) > need:
        raise GactFormatError(f"trailing garbage: {len(body) - need} extra bytes")
    sem_ids = np.frombuffer(body, dtype="<u2", count=T).astype(np.int32)
    tokens = (
        np.frombuffer(body, dtype="<u2", count=T * G * N_q, offset=2 * T)
        .astype(np.int32)
        .reshape(T, G, N_q)
    )
    if tokens.max() >= C:
        raise GactFormatError("token id >= codebook size")
    if sem_ids.size and sem_ids.max() >= S_v:
        raise GactFormatError("semantic id >= vocab size")
    params = CodecParams(groups=G, levels=N_q, codebook_size=C, latent_dim=G)
    grid = TokenGrid(params, tokens, np.zeros(tokens.shape, dtype=bool))
    return grid, SemanticSeq(sem_ids, S_v)


def save_gact(path, grid: TokenGrid, sem: SemanticSeq) -> None:
    with open(path, "wb") as f:
        f.write(serialize_tokens(grid, sem))


def load_gact(path) -> tuple[TokenGrid, SemanticSeq]:
    with open(path, "rb") as f:
        return deserialize_tokens(f.read())
