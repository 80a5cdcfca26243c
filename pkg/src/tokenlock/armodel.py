"""Count-based conditional next-token model over raster neighborhoods.

The conditioning summary of the generated prefix is the (west, north,
northwest) neighborhood plus the prompt. Three granularities are counted
during training (full neighborhood, west-only, prompt-only); prediction
mixes their additively smoothed estimates with fixed interpolation weights.
Unseen contexts contribute the uniform vector at their level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .grids import TokenGrid
from .scenes import Corpus, Prompt

BOUNDARY = -1

_U64 = (1 << 64) - 1
_SAMPLE_SALT = 0x9B5D
_FORMAT = "tokenlock-armodel"
_VERSION = 1


@dataclass(frozen=True)
class Context:
    """Raster position plus its generated neighbors and the prompt."""

    position: int
    west: int
    north: int
    northwest: int
    prompt: Prompt


def context_at(tokens, h: int, w: int, i: int, prompt: Prompt) -> Context:
    """Context for flat position ``i`` given the tokens generated so far.

    ``tokens`` only needs valid entries at indices < i; neighbors outside the
    grid are BOUNDARY.
    """
    r, c = divmod(i, w)
    west = int(tokens[i - 1]) if c > 0 else BOUNDARY
    north = int(tokens[i - w]) if r > 0 else BOUNDARY
    northwest = int(tokens[i - w - 1]) if (r > 0 and c > 0) else BOUNDARY
    return Context(i, west, north, northwest, prompt)


def _gumbel_for(rng_seed: int, position: int, size: int) -> np.ndarray:
    """Per-(seed, position) Gumbel noise; the same pair always yields the same draw."""
    seq = np.random.SeedSequence((int(rng_seed) & _U64, int(position) & _U64, _SAMPLE_SALT))
    return np.random.default_rng(seq).gumbel(size=size)


class ARModel:
    """Interpolated smoothed count model p(token | neighborhood, prompt)."""

    def __init__(self, cb_size: int, lam: float, weights) -> None:
        if cb_size < 2:
            raise InvalidArgumentError("cb_size must be >= 2")
        if not lam > 0:
            raise InvalidArgumentError("smoothing lam must be > 0")
        w3, w1, w0 = (float(x) for x in weights)
        if min(w3, w1, w0) < 0 or abs(w3 + w1 + w0 - 1.0) > 1e-9:
            raise InvalidArgumentError("weights must be nonnegative and sum to 1")
        self.cb_size = cb_size
        self.lam = float(lam)
        self.weights = (w3, w1, w0)
        self.trigram: dict[tuple, dict[int, int]] = {}
        self.backoff: dict[tuple, dict[int, int]] = {}
        self.unigram: dict[tuple, dict[int, int]] = {}

    # -- training --------------------------------------------------------

    @classmethod
    def train(cls, corpus: Corpus, cb_size: int, lam: float = 0.1, weights=(0.8, 0.15, 0.05)) -> "ARModel":
        if len(corpus) == 0:
            raise InvalidArgumentError("corpus is empty")
        model = cls(cb_size, lam, weights)
        h, w = corpus.h, corpus.w
        tri, back = model.trigram, model.backoff
        for prompt, grid in corpus.grids():
            p = prompt.as_tuple()
            toks = grid.tokens.tolist()
            uni = model.unigram.setdefault((p,), {})
            i = 0
            for r in range(h):
                for c in range(w):
                    west = toks[i - 1] if c > 0 else BOUNDARY
                    north = toks[i - w] if r > 0 else BOUNDARY
                    nw = toks[i - w - 1] if (r > 0 and c > 0) else BOUNDARY
                    t = toks[i]
                    key3 = (p, west, north, nw)
                    slot = tri.get(key3)
                    if slot is None:
                        slot = tri[key3] = {}
                    slot[t] = slot.get(t, 0) + 1
                    key1 = (p, west)
                    slot = back.get(key1)
                    if slot is None:
                        slot = back[key1] = {}
                    slot[t] = slot.get(t, 0) + 1
                    uni[t] = uni.get(t, 0) + 1
                    i += 1
        return model

    # -- prediction ------------------------------------------------------

    def _level(self, table: dict, key: tuple) -> np.ndarray:
        counts = table.get(key)
        if not counts:
            return np.full(self.cb_size, 1.0 / self.cb_size)
        total = sum(counts.values())
        denom = total + self.lam * self.cb_size
        vec = np.full(self.cb_size, self.lam / denom)
        for tok, n in counts.items():
            vec[tok] += n / denom
        return vec

    def next_dist(self, ctx: Context) -> np.ndarray:
        """Probability vector over the vocabulary; entries > 0, sums to 1."""
        p = ctx.prompt.as_tuple()
        w3, w1, w0 = self.weights
        out = w3 * self._level(self.trigram, (p, ctx.west, ctx.north, ctx.northwest))
        out += w1 * self._level(self.backoff, (p, ctx.west))
        out += w0 * self._level(self.unigram, (p,))
        return out

    def top_k(self, ctx: Context, k: int) -> list[tuple[int, float]]:
        """First min(k, cb_size) tokens by probability, ties by ascending id."""
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        probs = self.next_dist(ctx)
        order = np.lexsort((np.arange(self.cb_size), -probs))[: min(k, self.cb_size)]
        return [(int(t), float(probs[t])) for t in order]

    def sample_k(self, ctx: Context, k: int, rng_seed: int) -> list[tuple[int, float]]:
        """Draw min(k, cb_size) distinct tokens, in draw order, deterministically.

        Implemented as Gumbel-top-k on log-probabilities, which is equivalent
        to sequential categorical sampling without replacement with
        renormalisation after each draw.
        """
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        probs = self.next_dist(ctx)
        keys = np.log(probs) + _gumbel_for(rng_seed, ctx.position, self.cb_size)
        order = np.lexsort((np.arange(self.cb_size), -keys))[: min(k, self.cb_size)]
        return [(int(t), float(probs[t])) for t in order]

    def argmax(self, ctx: Context) -> int:
        """Greedy token: highest probability, smallest id among exact ties."""
        return int(np.argmax(self.next_dist(ctx)))

    def sample_one(self, ctx: Context, rng_seed: int) -> int:
        """Seeded categorical draw (the first without-replacement draw)."""
        return self.sample_k(ctx, 1, rng_seed)[0][0]

    # -- serialization ---------------------------------------------------

    @staticmethod
    def _encode_table(table: dict) -> dict:
        out = {}
        for key, counts in table.items():
            prompt = key[0]
            rest = key[1:]
            name = ",".join(str(x) for x in prompt)
            if rest:
                name += "|" + "|".join(str(x) for x in rest)
            out[name] = {str(t): n for t, n in counts.items()}
        return out

    @staticmethod
    def _decode_table(doc: dict, arity: int) -> dict:
        out: dict[tuple, dict[int, int]] = {}
        for name, counts in doc.items():
            parts = name.split("|")
            prompt = tuple(int(x) for x in parts[0].split(","))
            rest = tuple(int(x) for x in parts[1:])
            if len(rest) != arity:
                raise InvalidArgumentError(f"bad context key {name!r}")
            out[(prompt, *rest)] = {int(t): int(n) for t, n in counts.items()}
        return out

    def to_json_bytes(self) -> bytes:
        doc = {
            "format": _FORMAT,
            "version": _VERSION,
            "cb_size": self.cb_size,
            "lam": self.lam,
            "weights": list(self.weights),
            "trigram": self._encode_table(self.trigram),
            "backoff": self._encode_table(self.backoff),
            "unigram": self._encode_table(self.unigram),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_json_bytes())

    @classmethod
    def from_json_bytes(cls, blob: bytes) -> "ARModel":
        doc = json.loads(blob)
        if doc.get("format") != _FORMAT:
            raise InvalidArgumentError("not a model file")
        model = cls(int(doc["cb_size"]), float(doc["lam"]), doc["weights"])
        model.trigram = cls._decode_table(doc["trigram"], 3)
        model.backoff = cls._decode_table(doc["backoff"], 1)
        model.unigram = cls._decode_table(doc["unigram"], 0)
        return model

    @classmethod
    def load(cls, path) -> "ARModel":
        with open(path, "rb") as fh:
            return cls.from_json_bytes(fh.read())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ARModel):
            return NotImplemented
        return self.to_json_bytes() == other.to_json_bytes()
