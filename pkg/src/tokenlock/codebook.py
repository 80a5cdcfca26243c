"""Discrete token vocabulary with a metric embedding space and display palette.

Embeddings are unit-norm rows drawn from a seeded generator. Tokens are
organised in blocks of ``EMBED_BLOCK`` consecutive ids that share a random
cluster center, so ids within a block are mutually close in the embedding
space while tokens from different blocks are far apart with overwhelming
probability. This gives squared distances a usable near/far scale (roughly
0.3 within a block vs. 2.0 across blocks on moderate dimensions), which is
what distance-thresholded token matching needs to behave non-degenerately.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import InvalidArgumentError, OutOfRangeError
from .grids import PixelGrid, TokenGrid

# Tokens per embedding cluster; token id // EMBED_BLOCK is the cluster index.
EMBED_BLOCK = 8

# Relative magnitude of the within-cluster offset before renormalisation.
CLUSTER_SPREAD = 0.45

_U64 = (1 << 64) - 1

_FORMAT = "tokenlock-codebook"
_VERSION = 1


def _seed_entropy(seed: int, *salt: int) -> np.random.SeedSequence:
    # Two's-complement wrap keeps negative 64-bit seeds valid SeedSequence entropy.
    return np.random.SeedSequence((seed & _U64,) + salt)


class Codebook:
    """Immutable token vocabulary: embeddings plus an RGB palette."""

    def __init__(self, size: int, dim: int, seed: int, embeddings: np.ndarray, palette: np.ndarray) -> None:
        self.size = size
        self.dim = dim
        self.seed = seed
        self.embeddings = embeddings
        self.palette = palette
        self.embeddings.setflags(write=False)
        self.palette.setflags(write=False)

    # -- lookups ---------------------------------------------------------

    def _check_token(self, token: int) -> int:
        token = int(token)
        if token < 0 or token >= self.size:
            raise OutOfRangeError(f"token {token} outside [0, {self.size})")
        return token

    def embed(self, token: int) -> np.ndarray:
        """Row of the embedding matrix for ``token``."""
        return self.embeddings[self._check_token(token)]

    def quantize(self, v) -> int:
        """Nearest token to ``v`` by squared Euclidean distance (ties: smallest id)."""
        vec = np.asarray(v, dtype=np.float64).ravel()
        if vec.size != self.dim:
            raise InvalidArgumentError(f"vector has {vec.size} entries, expected {self.dim}")
        if not np.all(np.isfinite(vec)):
            raise InvalidArgumentError("vector has non-finite entries")
        d2 = np.sum((self.embeddings - vec) ** 2, axis=1)
        return int(np.argmin(d2))  # argmin returns the first (smallest-id) minimum

    def decode_grid(self, grid: TokenGrid) -> PixelGrid:
        """Render a token grid to pixels: one token becomes one palette pixel."""
        bad = np.nonzero((grid.tokens < 0) | (grid.tokens >= self.size))[0]
        if bad.size:
            i = int(bad[0])
            raise OutOfRangeError(
                f"token {int(grid.tokens[i])} at position {i} "
                f"(row {i // grid.width}, col {i % grid.width}) outside [0, {self.size})"
            )
        pixels = self.palette[grid.tokens]
        return PixelGrid(grid.height, grid.width, pixels)

    # -- serialization ---------------------------------------------------

    def to_json_bytes(self) -> bytes:
        doc = {
            "format": _FORMAT,
            "version": _VERSION,
            "size": self.size,
            "dim": self.dim,
            "seed": self.seed,
            "embeddings": [[float(x) for x in row] for row in self.embeddings],
            "palette": [[int(x) for x in row] for row in self.palette],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_json_bytes())

    @classmethod
    def from_json_bytes(cls, blob: bytes) -> "Codebook":
        doc = json.loads(blob)
        if doc.get("format") != _FORMAT:
            raise InvalidArgumentError("not a codebook file")
        emb = np.asarray(doc["embeddings"], dtype=np.float64)
        pal = np.asarray(doc["palette"], dtype=np.uint8)
        return cls(int(doc["size"]), int(doc["dim"]), int(doc["seed"]), emb, pal)

    @classmethod
    def load(cls, path) -> "Codebook":
        with open(path, "rb") as fh:
            return cls.from_json_bytes(fh.read())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.to_json_bytes() == other.to_json_bytes()


def _palette_from(embeddings: np.ndarray) -> np.ndarray:
    """Colors from the first three embedding coordinates (cycled when dim < 3).

    Colliding colors are bumped deterministically in token order so every
    token renders distinctly; this caps usable vocabularies at 2**24 tokens.
    """
    size, dim = embeddings.shape
    if size > (1 << 24):
        raise InvalidArgumentError("palette supports at most 2**24 distinct tokens")
    coords = np.stack([embeddings[:, k % dim] for k in range(3)], axis=1)
    channels = np.clip(np.rint((coords + 1.0) * 0.5 * 255.0), 0, 255).astype(np.int64)
    packed = (channels[:, 0] << 16) | (channels[:, 1] << 8) | channels[:, 2]
    seen: set[int] = set()
    out = np.empty((size, 3), dtype=np.uint8)
    for t in range(size):
        c = int(packed[t])
        while c in seen:
            c = (c + 1) % (1 << 24)
        seen.add(c)
        out[t] = ((c >> 16) & 0xFF, (c >> 8) & 0xFF, c & 0xFF)
    return out


def codebook_new(size: int, dim: int, seed: int) -> Codebook:
    """Build the deterministic clustered codebook for ``(size, dim, seed)``.

    Rows are ``normalize(center[id // EMBED_BLOCK] + CLUSTER_SPREAD * offset[id])``
    with centers and offsets drawn from one seeded PCG64 stream. Duplicate rows
    (possible only in degenerate dimensions, e.g. dim=1 where rows collapse to
    +/-1) are re-drawn in token order until distinct.
    """
    if size < 2 or dim < 1:
        raise InvalidArgumentError(f"need size >= 2 and dim >= 1, got size={size} dim={dim}")
    rng = np.random.default_rng(_seed_entropy(seed))
    n_blocks = math.ceil(size / EMBED_BLOCK)
    centers = rng.standard_normal((n_blocks, dim))
    offsets = rng.standard_normal((size, dim))

    def _norm_row(block: int, offset: np.ndarray) -> np.ndarray:
        row = centers[block] + CLUSTER_SPREAD * offset
        norm = np.linalg.norm(row)
        while norm == 0.0:  # essentially impossible, but keep the map total
            row = rng.standard_normal(dim)
            norm = np.linalg.norm(row)
        return row / norm

    emb = np.empty((size, dim), dtype=np.float64)
    seen: dict[bytes, int] = {}
    for t in range(size):
        row = _norm_row(t // EMBED_BLOCK, offsets[t])
        attempts = 0
        while row.tobytes() in seen:
            attempts += 1
            if attempts > 64 * size:
                raise InvalidArgumentError(
                    f"cannot build {size} distinct unit rows in dimension {dim}"
                )
            row = _norm_row(t // EMBED_BLOCK, rng.standard_normal(dim))
        seen[row.tobytes()] = t
        emb[t] = row

    return Codebook(size, dim, seed, emb, _palette_from(emb))
