"""Deterministic toy stack for structure-locked autoregressive token-grid editing.

Submodules: ``codebook`` (vocabulary + embeddings), ``scenes`` (procedural
ground truth), ``armodel`` (count-based next-token model), ``decoding``
(anchor-matched decoding and the prompt-swap baseline), ``metrics``
(SSIM/PSNR/MSE and token-level scores), ``experiments`` (studies and
ablations), ``cli`` (command line front end).
"""

from .armodel import BOUNDARY, ARModel, Context, context_at
from .codebook import Codebook, codebook_new
from .decoding import (
    DecodeConfig,
    DecodeResult,
    StepTrace,
    anchored_decode,
    generate_reference,
    prompt_swap_decode,
    select_token,
    token_distance,
    window_size,
)
from .errors import EmptyRegionError, InvalidArgumentError, OutOfRangeError
from .grids import PixelGrid, RegionMask, TokenGrid
from .metrics import MetricReport, build_report, edit_fidelity, mse, psnr, ssim, structure_proxy
from .scenes import (
    Corpus,
    Prompt,
    corpus_build,
    infer_mask,
    modal_scene,
    prompt_space,
    required_codebook_size,
    scene_render,
    token_set_for,
)

__all__ = [
    "ARModel",
    "BOUNDARY",
    "Codebook",
    "Context",
    "Corpus",
    "DecodeConfig",
    "DecodeResult",
    "EmptyRegionError",
    "InvalidArgumentError",
    "MetricReport",
    "OutOfRangeError",
    "PixelGrid",
    "Prompt",
    "RegionMask",
    "StepTrace",
    "TokenGrid",
    "anchored_decode",
    "build_report",
    "codebook_new",
    "context_at",
    "corpus_build",
    "edit_fidelity",
    "generate_reference",
    "infer_mask",
    "modal_scene",
    "mse",
    "prompt_space",
    "prompt_swap_decode",
    "psnr",
    "required_codebook_size",
    "scene_render",
    "select_token",
    "ssim",
    "structure_proxy",
    "token_distance",
    "token_set_for",
    "window_size",
]

__version__ = "0.1.0"
