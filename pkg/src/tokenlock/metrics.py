"""Image-quality metrics over pixel grids plus two token-level scores.

Pixel metrics (MSE, PSNR, SSIM) follow their standard single-scale
definitions on 8-bit values; all three support restriction to the
foreground or background side of a region mask. The token-level scores are
a relabeling-invariant boundary-map distance (structure proxy) and a
ground-truth attribute consistency score for the masked region (edit
fidelity).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import scenes
from .codebook import Codebook
from .errors import EmptyRegionError, InvalidArgumentError
from .grids import PixelGrid, RegionMask, TokenGrid
from .scenes import Prompt

REGIONS = ("all", "background", "foreground")

SSIM_WINDOW = 8
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2


def _check_pair(a: PixelGrid, b: PixelGrid, mask, region: str):
    if region not in REGIONS:
        raise InvalidArgumentError(f"region must be one of {REGIONS}")
    if a.height != b.height or a.width != b.width:
        raise InvalidArgumentError("pixel grids differ in dimensions")
    if region != "all":
        if mask is None:
            raise InvalidArgumentError(f"region={region!r} requires a mask")
        if mask.height != a.height or mask.width != a.width:
            raise InvalidArgumentError("mask dimensions do not match the images")


def _selection(mask, region: str, height: int, width: int) -> np.ndarray:
    if region == "all":
        return np.ones(height * width, dtype=bool)
    if region == "foreground":
        return mask.bits.copy()
    return ~mask.bits


def mse(a: PixelGrid, b: PixelGrid, mask: RegionMask | None = None, region: str = "all") -> float:
    """Mean over selected pixels of the channel-averaged squared difference."""
    _check_pair(a, b, mask, region)
    sel = _selection(mask, region, a.height, a.width)
    if not sel.any():
        raise EmptyRegionError(f"region {region!r} selects no pixels")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    per_pixel = (diff * diff).mean(axis=2).ravel()
    return float(per_pixel[sel].mean())


def psnr(a: PixelGrid, b: PixelGrid, mask: RegionMask | None = None, region: str = "all") -> float:
    """10 * log10(255^2 / mse); +inf for identical selections."""
    err = mse(a, b, mask, region)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / err)


def _luminance(img: PixelGrid) -> np.ndarray:
    return img.data.astype(np.float64).mean(axis=2)


def ssim(a: PixelGrid, b: PixelGrid, mask: RegionMask | None = None, region: str = "all") -> float:
    """Mean SSIM over 8x8 sliding windows (stride 1) on channel-mean luminance.

    With a region restriction, only windows lying entirely inside the
    selected region are averaged.
    """
    _check_pair(a, b, mask, region)
    h, w = a.height, a.width
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise EmptyRegionError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    la, lb = _luminance(a), _luminance(b)
    shape = (SSIM_WINDOW, SSIM_WINDOW)
    wa = sliding_window_view(la, shape)
    wb = sliding_window_view(lb, shape)

    sel = _selection(mask, region, h, w).reshape(h, w)
    keep = sliding_window_view(sel, shape).all(axis=(2, 3))
    if not keep.any():
        raise EmptyRegionError(f"region {region!r} contains no full {SSIM_WINDOW}x{SSIM_WINDOW} window")

    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    # Same algebraic form for variances and covariance so ssim(x, x) is exactly 1.
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + _C1) * (2.0 * cov + _C2)
    den = (mu_a * mu_a + mu_b * mu_b + _C1) * (var_a + var_b + _C2)
    return float((num[keep] / den[keep]).mean())


def _edge_maps(grid: TokenGrid) -> np.ndarray:
    t = grid.as_array()
    horizontal = t[:, :-1] != t[:, 1:]
    vertical = t[:-1, :] != t[1:, :]
    return np.concatenate([horizontal.ravel(), vertical.ravel()])


def structure_proxy(a: TokenGrid, b: TokenGrid, cb: Codebook) -> float:
    """Normalized Hamming distance between the grids' boundary-indicator maps.

    Zero exactly when both grids put token boundaries in the same places;
    invariant under any global relabeling of token ids.
    """
    if a.height != b.height or a.width != b.width:
        raise InvalidArgumentError("token grids differ in dimensions")
    for g in (a, b):
        if int(g.tokens.min()) < 0 or int(g.tokens.max()) >= cb.size:
            raise InvalidArgumentError("grid contains tokens outside the codebook")
    ea, eb = _edge_maps(a), _edge_maps(b)
    return float((ea != eb).sum() / ea.size)


def edit_fidelity(result: TokenGrid, prompt_edit: Prompt, cb: Codebook, mask: RegionMask) -> float:
    """Fraction of masked positions whose token matches the edit attributes."""
    if not mask.matches(result):
        raise InvalidArgumentError("mask dimensions do not match the grid")
    if mask.area() == 0:
        raise EmptyRegionError("mask selects no positions")
    allowed = scenes.token_set_for(prompt_edit.object_id, prompt_edit.color, prompt_edit.style)
    chosen = result.tokens[mask.bits]
    hits = sum(1 for t in chosen if int(t) in allowed)
    return hits / chosen.size


@dataclass
class MetricReport:
    """Bundle of the whole-image, background, and token-level scores."""

    ssim: float
    psnr: float
    mse: float
    bg_ssim: float
    bg_psnr: float
    bg_mse: float
    structure_proxy: float
    edit_fidelity: float

    def validate(self) -> None:
        for name, value, err in (("psnr", self.psnr, self.mse), ("bg_psnr", self.bg_psnr, self.bg_mse)):
            if (err == 0.0) != math.isinf(value):
                raise InvalidArgumentError(f"{name} must be +inf exactly when its mse is 0")
        for name in ("ssim", "mse", "bg_ssim", "bg_mse", "structure_proxy", "edit_fidelity"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be finite")


def build_report(cb: Codebook, reference: TokenGrid, edited: TokenGrid, mask: RegionMask, prompt_edit: Prompt) -> MetricReport:
    """Score an edited grid against its reference under the given mask."""
    img_ref = cb.decode_grid(reference)
    img_edit = cb.decode_grid(edited)
    report = MetricReport(
        ssim=ssim(img_ref, img_edit),
        psnr=psnr(img_ref, img_edit),
        mse=mse(img_ref, img_edit),
        bg_ssim=ssim(img_ref, img_edit, mask, "background"),
        bg_psnr=psnr(img_ref, img_edit, mask, "background"),
        bg_mse=mse(img_ref, img_edit, mask, "background"),
        structure_proxy=structure_proxy(reference, edited, cb),
        edit_fidelity=edit_fidelity(edited, prompt_edit, cb, mask),
    )
    report.validate()
    return report


def _round_floats(value, sig: int):
    if isinstance(value, float):
        if math.isinf(value) or math.isnan(value):
            return value
        return float(f"{value:.{sig}g}")
    if isinstance(value, dict):
        return {k: _round_floats(v, sig) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_floats(v, sig) for v in value]
    return value


def canonical_json_bytes(payload, sig_digits: int = 6) -> bytes:
    """Diff-stable JSON: sorted keys, floats at a fixed significant-digit count."""
    rounded = _round_floats(payload, sig_digits)
    return (json.dumps(rounded, sort_keys=True, separators=(",", ":")) + "\n").encode("ascii")


def report_json_bytes(report: MetricReport) -> bytes:
    return canonical_json_bytes(asdict(report))
