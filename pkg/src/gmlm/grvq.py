"""Toy grouped residual vector quantizer over synthetic latent frames.

The latent vector is split into G contiguous slices; each slice runs
through a cascade of N_q codebooks, every level quantizing the residual
left by the levels before it. Codebooks are fit greedily level by level
with seeded k-means. Also carries the even-split bitrate arithmetic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tokens import CodecParams

GRVQ_MAGIC = b"GRVQ"
GRVQ_VERSION = 1


@dataclass
class GrvqCodec:
    """Fitted quantizer: codebooks has shape (G, N_q, C, D/G)."""

    params: CodecParams
    codebooks: np.ndarray

    def validate(self) -> None:
        p = self.params
        expect = (p.groups, p.levels, p.codebook_size, p.group_dim)
        if self.codebooks.shape != expect:
            raise ValueError(f"codebook shape {self.codebooks.shape} != {expect}")
        if not np.isfinite(self.codebooks).all():
            raise ValueError("non-finite codebook vector")


def _nearest(codebook: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Index of the Euclidean-nearest codeword per row; ties -> lowest index."""
    # |x-c|^2 = |x|^2 - 2 x.c + |c|^2; |x|^2 is constant per row.
    d2 = (codebook * codebook).sum(axis=1)[None, :] - 2.0 * vecs @ codebook.T
    return np.argmin(d2, axis=1)


def _kmeans(data: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Plain Lloyd iterations with seeded init from data points.

    Empty clusters are reseeded to the point farthest from its assigned
    centroid (each reseed claims a distinct point).
    """
    n = data.shape[0]
    centroids = data[rng.choice(n, size=k, replace=False)].copy()
    for _ in range(iters):
        assign = _nearest(centroids, data)
        counts = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            dist = ((data - centroids[assign]) ** 2).sum(axis=1)
            for c in empty:
                far = int(np.argmax(dist))
                centroids[c] = data[far]
                assign[far] = c
                dist[far] = -1.0
            counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, data)
        centroids = sums / counts[:, None]
    return centroids


def fit_codebooks(
    latents: np.ndarray, params: CodecParams, iters: int = 25, seed: int = 0
) -> GrvqCodec:
    """Fit per-(group, level) codebooks on the residual streams of `latents`.

    Level 0 of each group is fit on that group's slice of the latent
    frames; level j on the residuals after subtracting the chosen
    codewords of levels < j (greedy, earlier levels frozen).
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != params.latent_dim:
        raise ValueError(f"latents must be (N, {params.latent_dim})")
    if not np.isfinite(latents).all():
        raise ValueError("non-finite latent input")
    if latents.shape[0] < params.codebook_size:
        raise ValueError(
            f"need >= {params.codebook_size} frames, got {latents.shape[0]}"
        )
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    gd = params.group_dim
    books = np.zeros((params.groups, params.levels, params.codebook_size, gd))
    for g in range(params.groups):
        residual = latents[:, g * gd : (g + 1) * gd].copy()
        for j in range(params.levels):
            books[g, j] = _kmeans(residual, params.codebook_size, iters, rng)
            residual -= books[g, j][_nearest(books[g, j], residual)]
    return GrvqCodec(params, books)


def encode_frames(codec: GrvqCodec, z: np.ndarray) -> np.ndarray:
    """Quantize latent frames (N, D) to token ids (N, G, N_q)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    p = codec.params
    if z.shape[1] != p.latent_dim:
        raise ValueError(f"latent dim {z.shape[1]} != {p.latent_dim}")
    gd = p.group_dim
    ids = np.zeros((z.shape[0], p.groups, p.levels), dtype=np.int32)
    for g in range(p.groups):
        residual = z[:, g * gd : (g + 1) * gd].copy()
        for j in range(p.levels):
            pick = _nearest(codec.codebooks[g, j], residual)
            ids[:, g, j] = pick
            residual -= codec.codebooks[g, j][pick]
    return ids


def encode_frame(codec: GrvqCodec, z: np.ndarray) -> np.ndarray:
    """Quantize one latent frame (D,) to token ids (G, N_q)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("encode_frame expects a single frame")
    return encode_frames(codec, z[None, :])[0]


def decode_frames(codec: GrvqCodec, ids: np.ndarray, levels: int | None = None) -> np.ndarray:
    """Reconstruct latent frames from ids (N, G, N_q), optionally truncating depth."""
    ids = np.asarray(ids)
    p = codec.params
    if ids.ndim == 2:
        ids = ids[None, :, :]
    if ids.shape[1:] != (p.groups, p.levels):
        raise ValueError(f"ids shape {ids.shape[1:]} != {(p.groups, p.levels)}")
    if ids.min() < 0 or ids.max() >= p.codebook_size:
        raise ValueError("token id out of range")
    use = p.levels if levels is None else levels
    if not 1 <= use <= p.levels:
        raise ValueError(f"levels must be in [1, {p.levels}]")
    out = np.zeros((ids.shape[0], p.latent_dim))
    gd = p.group_dim
    for g in range(p.groups):
        for j in range(use):
            out[:, g * gd : (g + 1) * gd] += codec.codebooks[g, j][ids[:, g, j]]
    return out


def decode_frame(codec: GrvqCodec, ids: np.ndarray, levels: int | None = None) -> np.ndarray:
    """Reconstruct a single frame (D,) from ids (G, N_q)."""
    return decode_frames(codec, np.asarray(ids)[None, :, :], levels)[0]


def bitrate(params: CodecParams) -> tuple[float, int]:
    """(bits per second, bits per VQ layer) under an even rate split.

    Every (group, level) codebook carries r_i = log2(C) bits per frame,
    so the stream rate is fps * G * N_q * r_i.
    """
    C = params.codebook_size
    if C & (C - 1) != 0:
        raise ValueError(f"codebook size {C} is not a power of two")
    r_i = C.bit_length() - 1
    bps = params.frames_per_second * params.groups * params.levels * r_i
    return bps, r_i


def save_codec(path, codec: GrvqCodec) -> None:
    """Checkpoint: header + codebooks as little-endian f32 in (g, j, code, dim) order."""
    codec.validate()
    p = codec.params
    with open(path, "wb") as f:
        f.write(GRVQ_MAGIC)
        f.write(bytes([GRVQ_VERSION]))
        f.write(struct.pack("<BBIId", p.groups, p.levels, p.codebook_size, p.latent_dim, p.frames_per_second))
        f.write(codec.codebooks.astype("<f4").tobytes())


def load_codec(path) -> GrvqCodec:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != GRVQ_MAGIC or data[4] != GRVQ_VERSION:
        raise ValueError("not a codec checkpoint")
    G, N_q, C, D, fps = struct.unpack_from("<BBIId", data, 5)
    params = CodecParams(groups=G, levels=N_q, codebook_size=C, latent_dim=D, frames_per_second=fps)
    off = 5 + struct.calcsize("<BBIId")
    count = G * N_q * C * params.group_dim
    books = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float64)
    return GrvqCodec(params, books.reshape(G, N_q, C, params.group_dim))
