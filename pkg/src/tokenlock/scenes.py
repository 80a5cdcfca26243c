"""Procedural ground-truth scenes with exact foreground masks.

A scene is a token grid made of three layers:

* a background *wallpaper* whose token identifies the grid position (one
  stamp token per cell per background/style combo), so local neighborhoods
  carry absolute position and a counting model can reproduce scenes in
  raster order;
* a one-row *band* near the top whose token encodes one of eight band
  classes and whose single gap column depends on the class: the first band
  cell is an eight-way geometry decision, the only multi-way choice in a
  scene;
* one filled *object* in the lower-right area whose silhouette depends on
  the object attribute and whose fill token depends on (object, color,
  style). Silhouette row spans never shrink downward, which keeps every
  object boundary decidable from the west/north/northwest neighborhood.

Seeds select one of eight jitter classes (band class, small object shift,
small scale change); class 0 is the canonical scene and is the majority
class, so greedy generation from a trained model recovers it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .codebook import EMBED_BLOCK, Codebook
from .errors import InvalidArgumentError
from .grids import RegionMask, TokenGrid

OBJECT_COUNT = 8
COLOR_COUNT = 8
BACKGROUND_COUNT = 4
STYLE_COUNT = 4

FG_TOKEN_COUNT = OBJECT_COUNT * COLOR_COUNT  # ids [0, 64) are object fills
BG_BASE = FG_TOKEN_COUNT
BAND_CLASSES = 8
BAND_ROW = 2

_MIN_SIDE = 8
_U64 = (1 << 64) - 1
_STYLE_SALT = 0x5CE11E

# Jitter class -> (band class, object column shift, object scale bump).
# Class 0 is canonical and holds the majority so that per-context counts
# have a unique argmax equal to the canonical scene.
_JITTER = (
    (0, 0, 0),
    (0, 0, 0),
    (0, 0, 0),
    (0, 0, 0),
    (1, 0, 0),
    (2, 1, 0),
    (3, 0, 1),
    (4, 1, 0),
)


@dataclass(frozen=True)
class Prompt:
    """Discrete conditioning attributes: object, color, background, style."""

    object_id: int
    color: int
    background: int
    style: int

    def __post_init__(self):
        checks = (
            ("object", self.object_id, OBJECT_COUNT),
            ("color", self.color, COLOR_COUNT),
            ("background", self.background, BACKGROUND_COUNT),
            ("style", self.style, STYLE_COUNT),
        )
        for name, value, bound in checks:
            if not 0 <= value < bound:
                raise InvalidArgumentError(f"{name}={value} outside [0, {bound})")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.object_id, self.color, self.background, self.style)

    def format(self) -> str:
        return f"{self.object_id}:{self.color}:{self.background}:{self.style}"

    @classmethod
    def parse(cls, text: str) -> "Prompt":
        parts = text.split(":")
        if len(parts) != 4:
            raise InvalidArgumentError(f"prompt must be obj:color:bg:style, got {text!r}")
        try:
            values = [int(p) for p in parts]
        except ValueError as exc:
            raise InvalidArgumentError(f"non-integer prompt field in {text!r}") from exc
        return cls(*values)


def prompt_space():
    """All prompts in lexicographic (object, color, background, style) order."""
    for o in range(OBJECT_COUNT):
        for c in range(COLOR_COUNT):
            for b in range(BACKGROUND_COUNT):
                for s in range(STYLE_COUNT):
                    yield Prompt(o, c, b, s)


# -- token layout ---------------------------------------------------------


def required_codebook_size(h: int, w: int) -> int:
    """Smallest vocabulary for the attribute-to-token mapping on an h x w grid.

    Object fills need OBJECT_COUNT * COLOR_COUNT ids; every background/style
    combo needs BAND_CLASSES band ids plus one stamp id per grid cell.
    """
    return FG_TOKEN_COUNT + BACKGROUND_COUNT * STYLE_COUNT * (BAND_CLASSES + h * w)


def _combo_base(background: int, style: int, h: int, w: int) -> int:
    combo = background * STYLE_COUNT + style
    return BG_BASE + combo * (BAND_CLASSES + h * w)


def band_token(background: int, style: int, klass: int, h: int, w: int) -> int:
    return _combo_base(background, style, h, w) + klass


def stamp_token(background: int, style: int, row: int, col: int, h: int, w: int) -> int:
    return _combo_base(background, style, h, w) + BAND_CLASSES + row * w + col


def band_hole_col(klass: int, w: int) -> int:
    """Column of the band's gap for a band class; distinct per class when w >= 10."""
    return 1 + (klass * (w - 2)) // BAND_CLASSES


_STYLE_MAPS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _style_maps(style: int) -> tuple[np.ndarray, np.ndarray]:
    # Style permutes object blocks and colors within each block. Keeping the
    # block structure intact means colors of one object stay embedding-close
    # under every style (blocks of EMBED_BLOCK ids share a cluster).
    if style not in _STYLE_MAPS:
        if style == 0:
            sigma = np.arange(OBJECT_COUNT)
            rho = np.tile(np.arange(COLOR_COUNT), (OBJECT_COUNT, 1))
        else:
            rng = np.random.default_rng(np.random.SeedSequence((_STYLE_SALT, style)))
            sigma = rng.permutation(OBJECT_COUNT)
            rho = np.stack([rng.permutation(COLOR_COUNT) for _ in range(OBJECT_COUNT)])
        _STYLE_MAPS[style] = (sigma, rho)
    return _STYLE_MAPS[style]


def fill_token(object_id: int, color: int, style: int) -> int:
    sigma, rho = _style_maps(style)
    return int(sigma[object_id]) * COLOR_COUNT + int(rho[object_id][color])


def token_set_for(object_id: int, color: int, style: int) -> frozenset[int]:
    """Tokens scene_render may emit inside the mask for these attributes."""
    return frozenset({fill_token(object_id, color, style)})


def is_object_token(token: int) -> bool:
    return 0 <= token < FG_TOKEN_COUNT


def infer_mask(grid: TokenGrid) -> RegionMask:
    """Recover the foreground mask of any grid from the token band layout."""
    return RegionMask(grid.height, grid.width, grid.tokens < FG_TOKEN_COUNT)


# -- silhouettes -----------------------------------------------------------


def _silhouette_spans(object_id: int, size: int) -> list[int]:
    """Row widths for an object silhouette of the given base size.

    Every silhouette is left-aligned with non-decreasing row widths: rows
    grow only rightward and downward. Together with the positional
    wallpaper this makes every object cell after the top-left corner
    decidable from its west/north/northwest neighbors alone, so a
    neighborhood model neither forgets mid-object which variant it is
    generating nor mixes variants into impossible layouts.
    """
    s = size
    if object_id == 0:  # square
        widths = [s] * s
    elif object_id == 1:  # wide rectangle
        widths = [s + 2] * max(2, s - 1)
    elif object_id == 2:  # tall rectangle
        widths = [max(2, s - 1)] * (s + 2)
    elif object_id == 3:  # right triangle
        widths = [k + 1 for k in range(max(3, s))]
    elif object_id == 4:  # trapezoid
        widths = [max(2, s - 2) + k for k in range(max(2, s - 1))]
    elif object_id == 5:  # step block
        narrow = max(2, (s + 2) // 2)
        split = (s + 1) // 2
        widths = [narrow] * split + [s + 2] * (s - split)
    elif object_id == 6:  # pedestal (stem on a wide base)
        widths = [max(1, s - 3)] * max(1, s - 2) + [s + 2] * 2
    elif object_id == 7:  # staircase
        widths = [k + 2 for k in range(s + 1)]
    else:
        raise InvalidArgumentError(f"object id {object_id} outside [0, {OBJECT_COUNT})")
    assert all(b >= a for a, b in zip(widths, widths[1:])), "silhouette rows must not shrink"
    return widths


def _place_object(object_id: int, h: int, w: int, dc: int, ds: int):
    """Silhouette row widths plus top-left origin, bottom-right anchored."""
    base = max(2, min(h, w) // 3)
    for bump in (ds, 0):
        widths = _silhouette_spans(object_id, base + bump)
        height = len(widths)
        width = max(widths)
        r0 = (h - 2) - height + 1
        c0 = (w - 3 + dc) - width + 1
        if r0 >= BAND_ROW + 1 and c0 >= 1:
            return widths, r0, c0
    raise InvalidArgumentError(f"grid {h}x{w} too small for the minimum object footprint")


# -- rendering -------------------------------------------------------------


def jitter_class(seed: int) -> int:
    return int(seed & _U64) % len(_JITTER)


def scene_render(prompt: Prompt, cb: Codebook, h: int, w: int, seed: int):
    """Render the deterministic scene for (prompt, seed) on an h x w grid.

    Returns ``(TokenGrid, RegionMask)``; the mask is exactly the object
    silhouette. The seed selects the jitter class (``seed mod 8``).
    """
    if h < _MIN_SIDE or w < _MIN_SIDE:
        raise InvalidArgumentError(f"grid must be at least {_MIN_SIDE}x{_MIN_SIDE}, got {h}x{w}")
    need = required_codebook_size(h, w)
    if cb.size < need:
        raise InvalidArgumentError(f"codebook size {cb.size} < required {need} for {h}x{w}")

    band_class, dc, ds = _JITTER[jitter_class(seed)]
    b, s = prompt.background, prompt.style

    tokens = np.empty(h * w, dtype=np.int64)
    combo0 = _combo_base(b, s, h, w) + BAND_CLASSES
    tokens[:] = combo0 + np.arange(h * w)  # positional wallpaper stamps

    hole = band_hole_col(band_class, w)
    row = BAND_ROW * w
    tokens[row : row + w] = band_token(b, s, band_class, h, w)
    tokens[row + hole] = combo0 + row + hole  # the gap keeps the stamp

    widths, r0, c0 = _place_object(prompt.object_id, h, w, dc, ds)
    fill = fill_token(prompt.object_id, prompt.color, prompt.style)
    bits = np.zeros(h * w, dtype=bool)
    for dr, width in enumerate(widths):
        start = (r0 + dr) * w + c0
        tokens[start : start + width] = fill
        bits[start : start + width] = True

    area = bits.sum() / bits.size
    assert 0.05 <= area <= 0.60, f"mask area {area:.3f} outside documented [0.05, 0.60] bounds"
    return TokenGrid(h, w, tokens), RegionMask(h, w, bits)


def modal_scene(prompt: Prompt, cb: Codebook, h: int, w: int):
    """The canonical (majority jitter class) rendering of a prompt."""
    return scene_render(prompt, cb, h, w, seed=0)


# -- corpus ----------------------------------------------------------------


_CORPUS_FORMAT = "tokenlock-corpus"
_CORPUS_VERSION = 1


class Corpus:
    """Ordered list of (prompt, variant seed, token grid) training records."""

    def __init__(self, h: int, w: int, cb_size: int, items) -> None:
        self.h = h
        self.w = w
        self.cb_size = cb_size
        self.items = list(items)

    def __len__(self) -> int:
        return len(self.items)

    def grids(self):
        for prompt, _, grid in self.items:
            yield prompt, grid

    def to_jsonl_bytes(self) -> bytes:
        lines = [
            json.dumps(
                {
                    "format": _CORPUS_FORMAT,
                    "version": _CORPUS_VERSION,
                    "h": self.h,
                    "w": self.w,
                    "cb_size": self.cb_size,
                    "count": len(self.items),
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        ]
        for prompt, seed, grid in self.items:
            lines.append(
                json.dumps(
                    {
                        "prompt": list(prompt.as_tuple()),
                        "seed": seed,
                        "tokens": [int(t) for t in grid.tokens],
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
        return ("\n".join(lines) + "\n").encode("ascii")

    def sha256(self) -> str:
        return hashlib.sha256(self.to_jsonl_bytes()).hexdigest()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_jsonl_bytes())

    @classmethod
    def from_jsonl_bytes(cls, blob: bytes) -> "Corpus":
        lines = blob.decode("ascii").strip().split("\n")
        head = json.loads(lines[0])
        if head.get("format") != _CORPUS_FORMAT:
            raise InvalidArgumentError("not a corpus file")
        h, w = int(head["h"]), int(head["w"])
        items = []
        for line in lines[1:]:
            doc = json.loads(line)
            items.append(
                (Prompt(*doc["prompt"]), int(doc["seed"]), TokenGrid(h, w, doc["tokens"]))
            )
        if len(items) != int(head["count"]):
            raise InvalidArgumentError("corpus record count mismatch")
        return cls(h, w, int(head["cb_size"]), items)

    @classmethod
    def load(cls, path) -> "Corpus":
        with open(path, "rb") as fh:
            return cls.from_jsonl_bytes(fh.read())


def corpus_build(cb: Codebook, h: int, w: int, n_per_prompt: int, seed: int) -> Corpus:
    """Render every prompt n_per_prompt times with deterministic variant seeds.

    Variant ``v`` gets seed ``base*8 + v`` so its jitter class is ``v mod 8``:
    the first four variants of each prompt are canonical, later ones jittered.
    """
    if n_per_prompt < 1:
        raise InvalidArgumentError("n_per_prompt must be >= 1")
    base = (int(seed) & _U64) % (1 << 56)
    items = []
    for prompt in prompt_space():
        for v in range(n_per_prompt):
            sv = base * 8 + v
            grid, _ = scene_render(prompt, cb, h, w, sv)
            items.append((prompt, sv, grid))
    return Corpus(h, w, cb.size, items)
