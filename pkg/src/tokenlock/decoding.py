"""Anchor-matched decoding: reference generation, windowed nearest-anchor
selection with threshold relaxation, and the prompt-swap baseline.

Editing works in two passes. A *reference* grid is generated from the
original prompt; its token at each position is the anchor for that position.
The edited grid is then generated in raster order: at each step the model
proposes an ordered candidate list, a shrinking prefix window of it is
compared to the anchor by embedding distance, and the nearest candidate is
emitted when it is within the threshold ``tau`` — otherwise the most
probable candidate wins (the relaxation fallback).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .armodel import ARModel, Context, context_at
from .codebook import Codebook
from .errors import InvalidArgumentError
from .grids import TokenGrid
from .scenes import Prompt

METRICS = ("euclidean_sq", "cosine_dist")
CANDIDATE_MODES = ("top_k", "sample_k")
REFERENCE_MODES = ("greedy", "stochastic")


@dataclass(frozen=True)
class DecodeConfig:
    """Hyperparameters for reference generation and anchored decoding.

    ``fixed_window`` overrides the shrinking window schedule with a constant
    width (used by the window-size ablation); ``None`` means the schedule.
    """

    k: int = 150
    tau: float = 1.0
    alpha: float = 0.6
    metric: str = "euclidean_sq"
    candidate_mode: str = "top_k"
    rng_seed: int = 0
    reference_mode: str = "greedy"
    fixed_window: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if not (self.tau >= 0 or math.isinf(self.tau)):
            raise InvalidArgumentError("tau must be >= 0 or +inf")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgumentError("alpha must lie in [0, 1]")
        if self.metric not in METRICS:
            raise InvalidArgumentError(f"metric must be one of {METRICS}")
        if self.candidate_mode not in CANDIDATE_MODES:
            raise InvalidArgumentError(f"candidate_mode must be one of {CANDIDATE_MODES}")
        if self.reference_mode not in REFERENCE_MODES:
            raise InvalidArgumentError(f"reference_mode must be one of {REFERENCE_MODES}")
        if self.fixed_window is not None and not 1 <= self.fixed_window <= self.k:
            raise InvalidArgumentError("fixed_window must lie in [1, k]")

    def with_seed(self, rng_seed: int) -> "DecodeConfig":
        return replace(self, rng_seed=rng_seed)


def window_size(i: int, n: int, k: int, alpha: float) -> int:
    """Window width floor(k * (1 - alpha * i / n)), clamped to at least 1."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if not 0 <= i <= n:
        raise InvalidArgumentError(f"step index {i} outside [0, {n}]")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError("alpha must lie in [0, 1]")
    return max(1, math.floor(k * (1.0 - alpha * (i / n))))


def _step_window(cfg: DecodeConfig, i: int, n: int) -> int:
    if cfg.fixed_window is not None:
        return cfg.fixed_window
    return window_size(i, n, cfg.k, cfg.alpha)


def token_distance(cb: Codebook, candidate: int, anchor: int, metric: str = "euclidean_sq") -> float:
    """Embedding-space distance between two tokens; zero only for identical ids."""
    a = cb.embed(candidate)
    b = cb.embed(anchor)
    if metric == "euclidean_sq":
        diff = a - b
        return float(diff @ diff)
    if metric == "cosine_dist":
        denom = math.sqrt(float(a @ a)) * math.sqrt(float(b @ b))
        return float(1.0 - (a @ b) / denom)
    raise InvalidArgumentError(f"metric must be one of {METRICS}")


@dataclass
class StepTrace:
    """Record of one selection step, re-checkable from the candidates alone."""

    position: int
    window_size: int
    candidates: list[tuple[int, float, float]]  # (token, probability, distance)
    chosen: int
    used_fallback: bool

    def check(self) -> None:
        tokens = [t for t, _, _ in self.candidates]
        if self.chosen not in tokens:
            raise AssertionError("chosen token missing from candidates")
        if not self.used_fallback:
            window = self.candidates[: self.window_size]
            dmin = min(d for _, _, d in window)
            chosen_d = next(d for t, _, d in window if t == self.chosen)
            if chosen_d > dmin:
                raise AssertionError("non-fallback choice is not a window distance minimum")


@dataclass
class DecodeResult:
    grid: TokenGrid
    trace: list[StepTrace] = field(repr=False)
    anchor: TokenGrid

    def __post_init__(self):
        if len(self.trace) != self.grid.tokens.size:
            raise InvalidArgumentError("trace length must equal grid token count")

    def fallback_positions(self) -> list[int]:
        return [st.position for st in self.trace if st.used_fallback]


def select_token(candidates, anchor: int, i: int, n: int, cfg: DecodeConfig, cb: Codebook):
    """Pick the edited token for step ``i`` from an ordered candidate list.

    The window is the leading ``window_size`` candidates. Within it the
    minimum-distance candidate wins when that minimum is <= tau (distance
    ties: higher probability, then lower id); otherwise the fallback emits
    the highest-probability candidate of the whole list (ties: lower id).
    """
    if not candidates:
        raise InvalidArgumentError("candidate list is empty")
    wsize = min(_step_window(cfg, i, n), len(candidates))
    scored = [(t, p, token_distance(cb, t, anchor, cfg.metric)) for t, p in candidates]

    window = scored[:wsize]
    best_t, _, best_d = min(window, key=lambda tpd: (tpd[2], -tpd[1], tpd[0]))
    if best_d <= cfg.tau:
        chosen, used_fallback = best_t, False
    else:
        chosen = max(scored, key=lambda tpd: (tpd[1], -tpd[0]))[0]
        used_fallback = True
    trace = StepTrace(
        position=i,
        window_size=wsize,
        candidates=scored,
        chosen=chosen,
        used_fallback=used_fallback,
    )
    return chosen, trace


def _candidates(m: ARModel, ctx: Context, cfg: DecodeConfig):
    if cfg.candidate_mode == "top_k":
        return m.top_k(ctx, cfg.k)
    return m.sample_k(ctx, cfg.k, cfg.rng_seed)


def generate_reference(m: ARModel, prompt: Prompt, h: int, w: int, cfg: DecodeConfig) -> TokenGrid:
    """Raster-order generation: greedy argmax or a seeded draw per step."""
    if h < 1 or w < 1:
        raise InvalidArgumentError("h and w must be positive")
    tokens = [0] * (h * w)
    greedy = cfg.reference_mode == "greedy"
    for i in range(h * w):
        ctx = context_at(tokens, h, w, i, prompt)
        tokens[i] = m.argmax(ctx) if greedy else m.sample_one(ctx, cfg.rng_seed)
    return TokenGrid(h, w, tokens)


def anchored_decode(m: ARModel, cb: Codebook, prompt_edit: Prompt, anchor: TokenGrid, cfg: DecodeConfig) -> DecodeResult:
    """Generate the edited grid, matching each step's candidates to the anchor."""
    if cb.size != m.cb_size:
        raise InvalidArgumentError(f"codebook size {cb.size} != model cb_size {m.cb_size}")
    if int(anchor.tokens.max()) >= m.cb_size or int(anchor.tokens.min()) < 0:
        raise InvalidArgumentError("anchor grid contains tokens outside the model vocabulary")
    h, w = anchor.height, anchor.width
    n = h * w
    tokens = [0] * n
    trace: list[StepTrace] = []
    for i in range(n):
        ctx = context_at(tokens, h, w, i, prompt_edit)
        cands = _candidates(m, ctx, cfg)
        chosen, st = select_token(cands, int(anchor.tokens[i]), i, n, cfg, cb)
        tokens[i] = chosen
        trace.append(st)
    return DecodeResult(TokenGrid(h, w, tokens), trace, anchor)


def prompt_swap_decode(m: ARModel, prompt_edit: Prompt, h: int, w: int, cfg: DecodeConfig) -> TokenGrid:
    """Baseline: regenerate from the edited prompt with everything else unchanged.

    Shares ``cfg.rng_seed`` with the reference so the comparison is paired
    draw-for-draw.
    """
    return generate_reference(m, prompt_edit, h, w, cfg)
