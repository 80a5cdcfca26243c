"""Experiment harness: perturbation sensitivity, window and threshold
ablations, and the anchored-vs-prompt-swap comparison.

Every run is a pure function of (model, codebook, seeds, config): reports
are plain dicts of Python scalars and reproduce byte-identically through
:func:`tokenlock.metrics.canonical_json_bytes`. Trend assertions live in
``check_*`` helpers so the CLI ``--assert`` mode and the acceptance tests
share one implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import metrics, scenes
from .armodel import ARModel, context_at
from .codebook import Codebook, codebook_new
from .decoding import DecodeConfig, anchored_decode, generate_reference, prompt_swap_decode, select_token
from .errors import InvalidArgumentError
from .grids import TokenGrid
from .scenes import Corpus, Prompt, corpus_build

_U64 = (1 << 64) - 1
_PERTURB_SALT = 0x7E27
_PAIR_SALT = 0x51AB


def _slug(prompt: Prompt) -> str:
    return prompt.format().replace(":", "-")


def _export_ppm(export_dir, name: str, cb: Codebook, grid: TokenGrid) -> None:
    if export_dir is None:
        return
    import os

    os.makedirs(export_dir, exist_ok=True)
    cb.decode_grid(grid).save_ppm(os.path.join(export_dir, name))

EXPERIMENT_NAMES = ("perturb", "ablate_window", "ablate_tau", "compare_npm")

DEFAULT_H = 16
DEFAULT_W = 16
DEFAULT_CB_DIM = 32
DEFAULT_CB_SEED = 20240817
DEFAULT_CORPUS_SEED = 11
DEFAULT_N_PER_PROMPT = 8
# The smoothing floor must stay out of reach of extreme order statistics in
# the sampled-candidate draws (~1e5 Gumbel draws per decoded grid), or
# references pick up isolated junk tokens.
DEFAULT_LAM = 1e-12
# Nearly all weight on the specific level: sampled references must flip off
# the modal continuation only at genuinely multimodal neighborhoods, and the
# lower levels exist for argmax healing, which is insensitive to their scale.
DEFAULT_WEIGHTS = (1.0 - 4e-6, 3e-6, 1e-6)
# Candidate count scaled to the toy vocabulary roughly like the reference
# setup's 150-of-16384; window thirds stay distinct integers.
DEFAULT_K = 6


@dataclass(frozen=True)
class ExperimentSpec:
    """A named run: seeds, grid size, sweep values, output path."""

    name: str
    seeds: tuple[int, ...]
    grid: tuple[int, int]
    sweep: tuple[float, ...]
    out_path: str | None = None

    def __post_init__(self):
        if self.name not in EXPERIMENT_NAMES:
            raise InvalidArgumentError(f"name must be one of {EXPERIMENT_NAMES}")
        if not self.seeds:
            raise InvalidArgumentError("seeds must be nonempty")
        if not self.sweep:
            raise InvalidArgumentError("sweep must be nonempty")


@dataclass
class SensitivityReport:
    """Early/late perturbation deltas with per-record detail."""

    early_mean: float
    early_std: float
    late_mean: float
    late_std: float
    p_value: float
    records: list[dict]

    def __post_init__(self):
        for rec in self.records:
            for key in ("delta_early", "delta_late"):
                if not 0.0 <= rec[key] <= 2.0:
                    raise InvalidArgumentError(f"{key}={rec[key]} outside [0, 2]")

    def as_dict(self) -> dict:
        return {
            "early_mean": self.early_mean,
            "early_std": self.early_std,
            "late_mean": self.late_mean,
            "late_std": self.late_std,
            "p_value": self.p_value,
            "records": self.records,
        }


def experiment_config(rng_seed: int = 0, **overrides) -> DecodeConfig:
    """Decode configuration used by the desk-scale experiments."""
    base = dict(
        k=DEFAULT_K,
        tau=1.0,
        alpha=0.6,
        metric="euclidean_sq",
        candidate_mode="sample_k",
        reference_mode="stochastic",
        rng_seed=rng_seed,
    )
    base.update(overrides)
    return DecodeConfig(**base)


def build_stack(
    h: int = DEFAULT_H,
    w: int = DEFAULT_W,
    cb_dim: int = DEFAULT_CB_DIM,
    cb_seed: int = DEFAULT_CB_SEED,
    corpus_seed: int = DEFAULT_CORPUS_SEED,
    n_per_prompt: int = DEFAULT_N_PER_PROMPT,
    lam: float = DEFAULT_LAM,
    weights=DEFAULT_WEIGHTS,
) -> tuple[Codebook, Corpus, ARModel]:
    """Codebook, corpus, and trained model for one experiment configuration."""
    cb = codebook_new(scenes.required_codebook_size(h, w), cb_dim, cb_seed)
    corpus = corpus_build(cb, h, w, n_per_prompt, corpus_seed)
    model = ARModel.train(corpus, cb.size, lam=lam, weights=weights)
    return cb, corpus, model


# -- perturbation sensitivity ----------------------------------------------


def perturb_and_regenerate(
    m: ARModel,
    prompt: Prompt,
    base: TokenGrid,
    span: str,
    cfg: DecodeConfig,
    seed: int,
    fraction: float = 0.2,
    regenerate_suffix: bool = True,
) -> TokenGrid:
    """Replace a positional span of ``base`` with uniform random tokens.

    ``span`` is ``first_20pct`` or ``last_20pct`` (the fraction is
    configurable). After an early span the remaining positions are
    regenerated greedily from the perturbed prefix; after a trailing span
    nothing follows, so only the span itself changes.
    """
    if span not in ("first_20pct", "last_20pct"):
        raise InvalidArgumentError("span must be first_20pct or last_20pct")
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgumentError("fraction must lie in [0, 1]")
    n = base.tokens.size
    width = math.floor(n * fraction)
    if fraction > 0.0 and width == 0:
        raise InvalidArgumentError(f"grid with {n} tokens is too small for a {fraction:.0%} span")
    if width == 0:
        return base.copy()

    rng = np.random.default_rng(np.random.SeedSequence((int(seed) & _U64, _PERTURB_SALT)))
    noise = rng.integers(0, m.cb_size, size=width)
    tokens = base.tokens.tolist()
    if span == "last_20pct":
        tokens[n - width :] = noise.tolist()
        return TokenGrid(base.height, base.width, tokens)

    tokens[:width] = noise.tolist()
    if regenerate_suffix:
        h, w = base.height, base.width
        for i in range(width, n):
            tokens[i] = m.argmax(context_at(tokens, h, w, i, prompt))
    return TokenGrid(base.height, base.width, tokens)


def _delta_ssim(cb: Codebook, base: TokenGrid, variant: TokenGrid) -> float:
    return 1.0 - metrics.ssim(cb.decode_grid(base), cb.decode_grid(variant))


def run_perturbation_study(
    m: ARModel,
    cb: Codebook,
    prompts: list[Prompt],
    cfg: DecodeConfig,
    seeds: list[int],
    h: int = DEFAULT_H,
    w: int = DEFAULT_W,
    export_dir: str | None = None,
) -> SensitivityReport:
    """Early-vs-late perturbation deltas over prompts x seeds (>= 30 seeds)."""
    if len(seeds) < 30:
        raise InvalidArgumentError("at least 30 seeds are required")
    if not prompts:
        raise InvalidArgumentError("prompt list is empty")
    greedy_cfg = replace(cfg, reference_mode="greedy")
    records = []
    for p_idx, prompt in enumerate(prompts):
        base = generate_reference(m, prompt, h, w, greedy_cfg)
        _export_ppm(export_dir, f"{_slug(prompt)}_base.ppm", cb, base)
        for s in seeds:
            seed = (p_idx << 32) + (int(s) & 0xFFFFFFFF)
            early = perturb_and_regenerate(m, prompt, base, "first_20pct", greedy_cfg, seed)
            late = perturb_and_regenerate(m, prompt, base, "last_20pct", greedy_cfg, seed)
            _export_ppm(export_dir, f"{_slug(prompt)}_s{s}_early.ppm", cb, early)
            _export_ppm(export_dir, f"{_slug(prompt)}_s{s}_late.ppm", cb, late)
            records.append(
                {
                    "prompt": prompt.format(),
                    "seed": int(s),
                    "delta_early": _delta_ssim(cb, base, early),
                    "delta_late": _delta_ssim(cb, base, late),
                }
            )
    early = np.array([r["delta_early"] for r in records])
    late = np.array([r["delta_late"] for r in records])
    if np.all(early == late):
        p_value = 1.0
    else:
        p_value = float(stats.wilcoxon(early, late, alternative="greater").pvalue)
    return SensitivityReport(
        early_mean=float(early.mean()),
        early_std=float(early.std(ddof=1)),
        late_mean=float(late.mean()),
        late_std=float(late.std(ddof=1)),
        p_value=p_value,
        records=records,
    )


def check_perturbation(report: SensitivityReport, alpha: float = 0.05, min_ratio: float = 2.0) -> list[str]:
    """Failed-assertion messages for the sensitivity ordering (empty = pass)."""
    problems = []
    if not report.early_mean > report.late_mean:
        problems.append("early-span delta mean does not exceed late-span delta mean")
    if report.late_mean > 0 and report.early_mean < min_ratio * report.late_mean:
        problems.append(f"early mean {report.early_mean:.4f} below {min_ratio}x late mean {report.late_mean:.4f}")
    if not report.p_value < alpha:
        problems.append(f"wilcoxon p={report.p_value:.4g} not below {alpha}")
    return problems


# -- edit pairs --------------------------------------------------------------


def make_edit_pairs(seeds, kind: str = "color") -> list[tuple[Prompt, Prompt, int]]:
    """Seeded (original prompt, edited prompt, pair seed) triples, one per seed."""
    seeds = list(seeds)
    if not seeds:
        raise InvalidArgumentError("seeds must be nonempty")
    if kind != "color":
        raise InvalidArgumentError("only color edits are generated here")
    pairs = []
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed) & _U64, _PAIR_SALT)))
        o = int(rng.integers(scenes.OBJECT_COUNT))
        c = int(rng.integers(scenes.COLOR_COUNT))
        b = int(rng.integers(scenes.BACKGROUND_COUNT))
        s = int(rng.integers(scenes.STYLE_COUNT))
        c2 = int((c + 1 + rng.integers(scenes.COLOR_COUNT - 1)) % scenes.COLOR_COUNT)
        if c2 == c:
            c2 = (c + 1) % scenes.COLOR_COUNT
        pairs.append((Prompt(o, c, b, s), Prompt(o, c2, b, s), int(seed)))
    return pairs


def _pair_seeds(pair_seed: int) -> tuple[int, int]:
    # Reference and edit decoding must not share noise streams, or the
    # candidate order at every step would lead with the reference's own pick.
    return pair_seed * 2, pair_seed * 2 + 1


def _references(m: ARModel, pairs, cfg: DecodeConfig, h: int, w: int):
    refs = []
    for prompt_org, _, pair_seed in pairs:
        seed_ref, _ = _pair_seeds(pair_seed)
        ref = generate_reference(m, prompt_org, h, w, cfg.with_seed(seed_ref))
        refs.append((ref, scenes.infer_mask(ref)))
    return refs


# -- window ablation ---------------------------------------------------------


def run_window_ablation(
    m: ARModel,
    cb: Codebook,
    pairs,
    window_sizes: list[int],
    cfg: DecodeConfig,
    h: int = DEFAULT_H,
    w: int = DEFAULT_W,
    export_dir: str | None = None,
) -> dict:
    """Fixed-window rows plus the shrinking-schedule row, shared seeds."""
    if not window_sizes:
        raise InvalidArgumentError("window_sizes must be nonempty")
    refs = _references(m, pairs, cfg, h, w)
    for (_, _, pair_seed), (ref, _) in zip(pairs, refs):
        _export_ppm(export_dir, f"pair{pair_seed}_anchor.ppm", cb, ref)
    rows = []
    for fixed in [*window_sizes, None]:
        row_cfg = replace(cfg, fixed_window=fixed)
        label = "dynamic" if fixed is None else f"w{fixed}"
        structures, fidelities = [], []
        for (prompt_org, prompt_edit, pair_seed), (ref, mask) in zip(pairs, refs):
            _, seed_edit = _pair_seeds(pair_seed)
            result = anchored_decode(m, cb, prompt_edit, ref, row_cfg.with_seed(seed_edit))
            _export_ppm(export_dir, f"pair{pair_seed}_edit_{label}.ppm", cb, result.grid)
            structures.append(metrics.structure_proxy(ref, result.grid, cb))
            fidelities.append(metrics.edit_fidelity(result.grid, prompt_edit, cb, mask))
        s_mean = float(np.mean(structures))
        f_mean = float(np.mean(fidelities))
        rows.append(
            {
                "window": "dynamic" if fixed is None else int(fixed),
                "structure_proxy_mean": s_mean,
                "edit_fidelity_mean": f_mean,
                "ratio": math.inf if f_mean == 0 else s_mean / f_mean,
            }
        )
    return {"experiment": "ablate_window", "k": cfg.k, "alpha": cfg.alpha, "pairs": len(pairs), "rows": rows}


def check_window_ablation(report: dict, ratio_slack: float = 1.05) -> list[str]:
    rows = report["rows"]
    fixed = [r for r in rows if r["window"] != "dynamic"]
    fixed.sort(key=lambda r: r["window"])
    dynamic = next(r for r in rows if r["window"] == "dynamic")
    problems = []
    for a, b in zip(fixed, fixed[1:]):
        if not b["structure_proxy_mean"] < a["structure_proxy_mean"]:
            problems.append(
                f"structure proxy not strictly decreasing: |W|={a['window']} -> {a['structure_proxy_mean']:.6f}, "
                f"|W|={b['window']} -> {b['structure_proxy_mean']:.6f}"
            )
        if b["edit_fidelity_mean"] > a["edit_fidelity_mean"] + 1e-12:
            problems.append(
                f"edit fidelity increases from |W|={a['window']} to |W|={b['window']}"
            )
    best_fixed_ratio = min(r["ratio"] for r in fixed)
    if dynamic["ratio"] > ratio_slack * best_fixed_ratio:
        problems.append(
            f"dynamic ratio {dynamic['ratio']:.6f} exceeds {ratio_slack}x best fixed {best_fixed_ratio:.6f}"
        )
    return problems


# -- threshold ablation --------------------------------------------------------


def _bg_match_rate(result: TokenGrid, anchor: TokenGrid, mask) -> float:
    sel = ~mask.bits
    return float((result.tokens[sel] == anchor.tokens[sel]).mean())


def run_tau_ablation(
    m: ARModel,
    cb: Codebook,
    pairs,
    tau_values: list[float],
    cfg: DecodeConfig,
    h: int = DEFAULT_H,
    w: int = DEFAULT_W,
    export_dir: str | None = None,
) -> dict:
    """Per-threshold background match, fidelity, and fallback rates.

    Also replays every recorded selection step against every threshold in
    the sweep on the step's own candidates, verifying that fallback steps
    under a larger threshold are a subset of those under a smaller one.
    """
    if not tau_values:
        raise InvalidArgumentError("tau_values must be nonempty")
    if any(b <= a for a, b in zip(tau_values, tau_values[1:])):
        raise InvalidArgumentError("tau_values must be sorted strictly ascending")
    refs = _references(m, pairs, cfg, h, w)
    for (_, _, pair_seed), (ref, _) in zip(pairs, refs):
        _export_ppm(export_dir, f"pair{pair_seed}_anchor.ppm", cb, ref)
    n = h * w
    rows = []
    replay_traces = []
    for tau in tau_values:
        row_cfg = replace(cfg, tau=tau)
        matches, fidelities, fallbacks = [], [], []
        for (prompt_org, prompt_edit, pair_seed), (ref, mask) in zip(pairs, refs):
            _, seed_edit = _pair_seeds(pair_seed)
            result = anchored_decode(m, cb, prompt_edit, ref, row_cfg.with_seed(seed_edit))
            _export_ppm(export_dir, f"pair{pair_seed}_edit_tau{tau}.ppm", cb, result.grid)
            matches.append(_bg_match_rate(result.grid, ref, mask))
            fidelities.append(metrics.edit_fidelity(result.grid, prompt_edit, cb, mask))
            fallbacks.append(len(result.fallback_positions()) / n)
            if tau == tau_values[0]:
                replay_traces.append((ref, result.trace))
        rows.append(
            {
                "tau": tau,
                "bg_match_mean": float(np.mean(matches)),
                "edit_fidelity_mean": float(np.mean(fidelities)),
                "fallback_rate_mean": float(np.mean(fallbacks)),
            }
        )

    # Replay every recorded step on its own candidate list under the whole
    # sweep: a larger threshold must never fall back where a smaller one
    # accepted (exact nesting on fixed candidates).
    superset_ok = True
    for ref, trace in replay_traces:
        for st in trace:
            cands = [(t, p) for t, p, _ in st.candidates]
            anchor_tok = int(ref.tokens[st.position])
            flags = []
            for t2 in tau_values:
                _, st2 = select_token(cands, anchor_tok, st.position, n, replace(cfg, tau=t2), cb)
                flags.append(st2.used_fallback)
            for a, b in zip(flags, flags[1:]):
                if b and not a:
                    superset_ok = False
    return {
        "experiment": "ablate_tau",
        "k": cfg.k,
        "pairs": len(pairs),
        "fallback_superset_ok": superset_ok,
        "rows": rows,
    }


def check_tau_ablation(report: dict) -> list[str]:
    rows = report["rows"]
    problems = []
    if not report["fallback_superset_ok"]:
        problems.append("fallback sets not nested across thresholds on fixed candidates")
    for a, b in zip(rows, rows[1:]):
        if b["fallback_rate_mean"] > a["fallback_rate_mean"] + 1e-12:
            problems.append(f"fallback rate increases from tau={a['tau']} to tau={b['tau']}")
        if b["bg_match_mean"] < a["bg_match_mean"] - 1e-12:
            problems.append(f"background match rate drops from tau={a['tau']} to tau={b['tau']}")
    inf_rows = [r for r in rows if math.isinf(r["tau"])]
    for r in inf_rows:
        if r["fallback_rate_mean"] != 0.0:
            problems.append("tau=inf row has a nonzero fallback rate")
    return problems


# -- baseline comparison --------------------------------------------------------


def run_npm_comparison(
    m: ARModel,
    cb: Codebook,
    pairs,
    cfg: DecodeConfig,
    h: int = DEFAULT_H,
    w: int = DEFAULT_W,
    export_dir: str | None = None,
) -> dict:
    """Anchored decoding vs. the prompt-swap baseline on paired seeds."""
    refs = _references(m, pairs, cfg, h, w)
    per_pair = []
    for (prompt_org, prompt_edit, pair_seed), (ref, mask) in zip(pairs, refs):
        seed_ref, seed_edit = _pair_seeds(pair_seed)
        swap = prompt_swap_decode(m, prompt_edit, h, w, cfg.with_seed(seed_ref))
        anchored = anchored_decode(m, cb, prompt_edit, ref, cfg.with_seed(seed_edit)).grid
        _export_ppm(export_dir, f"pair{pair_seed}_anchor.ppm", cb, ref)
        _export_ppm(export_dir, f"pair{pair_seed}_anchored.ppm", cb, anchored)
        _export_ppm(export_dir, f"pair{pair_seed}_prompt_swap.ppm", cb, swap)
        rec = {"prompt_org": prompt_org.format(), "prompt_edit": prompt_edit.format(), "pair_seed": pair_seed}
        img_ref = cb.decode_grid(ref)
        for label, grid in (("anchored", anchored), ("prompt_swap", swap)):
            img = cb.decode_grid(grid)
            rec[label] = {
                "structure_proxy": metrics.structure_proxy(ref, grid, cb),
                "bg_ssim": metrics.ssim(img_ref, img, mask, "background"),
                "bg_mse": metrics.mse(img_ref, img, mask, "background"),
                "edit_fidelity": metrics.edit_fidelity(grid, prompt_edit, cb, mask),
            }
        rec["anchor_edit_fidelity"] = metrics.edit_fidelity(ref, prompt_edit, cb, mask)
        per_pair.append(rec)

    def _mean(label, key):
        return float(np.mean([r[label][key] for r in per_pair]))

    methods = {
        label: {
            "structure_proxy_mean": _mean(label, "structure_proxy"),
            "bg_ssim_mean": _mean(label, "bg_ssim"),
            "bg_mse_mean": _mean(label, "bg_mse"),
            "edit_fidelity_mean": _mean(label, "edit_fidelity"),
        }
        for label in ("anchored", "prompt_swap")
    }

    def _one_sided(greater, lesser):
        g = np.array(greater)
        l = np.array(lesser)
        if np.all(g == l):
            return 1.0
        return float(stats.wilcoxon(g, l, alternative="greater").pvalue)

    p_structure = _one_sided(
        [r["prompt_swap"]["structure_proxy"] for r in per_pair],
        [r["anchored"]["structure_proxy"] for r in per_pair],
    )
    p_bg_ssim = _one_sided(
        [r["anchored"]["bg_ssim"] for r in per_pair],
        [r["prompt_swap"]["bg_ssim"] for r in per_pair],
    )
    return {
        "experiment": "compare_npm",
        "pairs": len(pairs),
        "methods": methods,
        "p_structure": p_structure,
        "p_bg_ssim": p_bg_ssim,
        "per_pair": per_pair,
    }


def check_npm_comparison(report: dict, alpha: float = 0.05) -> list[str]:
    anchored = report["methods"]["anchored"]
    swap = report["methods"]["prompt_swap"]
    problems = []
    if not anchored["structure_proxy_mean"] < swap["structure_proxy_mean"]:
        problems.append("anchored structure proxy mean is not below the prompt-swap baseline")
    if not anchored["bg_ssim_mean"] > swap["bg_ssim_mean"]:
        problems.append("anchored background SSIM mean is not above the prompt-swap baseline")
    if not report["p_structure"] < alpha:
        problems.append(f"structure ordering p={report['p_structure']:.4g} not below {alpha}")
    if not report["p_bg_ssim"] < alpha:
        problems.append(f"background SSIM ordering p={report['p_bg_ssim']:.4g} not below {alpha}")
    return problems
