"""Command line interface.

Subcommands: ``train``, ``gen``, ``edit``, ``report``, ``perturb``,
``ablate-window``, ``ablate-tau``, ``compare``. Every output file (JSON
reports, grids, PPM images) is written through canonical serializers, so
rerunning a command with identical arguments reproduces identical bytes.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

from . import experiments, metrics, scenes
from .armodel import ARModel
from .codebook import Codebook, codebook_new
from .decoding import DecodeConfig, anchored_decode, generate_reference, prompt_swap_decode
from .grids import RegionMask, TokenGrid
from .metrics import canonical_json_bytes
from .scenes import Corpus, Prompt, corpus_build


def _parse_seed_list(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _parse_float(text: str) -> float:
    if text.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def _parse_float_list(text: str) -> list[float]:
    return [_parse_float(p) for p in text.split(",") if p.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def _write(path: str | None, blob: bytes) -> None:
    if path is None:
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(blob)


def _load_stack(args) -> tuple[ARModel, Codebook]:
    return ARModel.load(args.model), Codebook.load(args.codebook)


def _decode_cfg(args, **extra) -> DecodeConfig:
    fields = dict(
        k=args.k,
        tau=args.tau,
        alpha=args.alpha,
        metric=args.metric,
        candidate_mode=args.candidate_mode,
        reference_mode=args.reference_mode,
    )
    fields.update(extra)
    return DecodeConfig(**fields)


def _report_and_assert(args, report: dict, checker) -> int:
    blob = canonical_json_bytes(report)
    _write(args.out, blob)
    if args.out is None:
        sys.stdout.write(blob.decode("ascii"))
    problems = checker(report) if args.assert_trends else []
    for msg in problems:
        print(f"ASSERT FAILED: {msg}", file=sys.stderr)
    return 2 if problems else 0


# -- subcommands -------------------------------------------------------------


def _cmd_train(args) -> int:
    cb = codebook_new(
        scenes.required_codebook_size(args.height, args.width) if args.cb_size is None else args.cb_size,
        args.dim,
        args.cb_seed,
    )
    corpus = corpus_build(cb, args.height, args.width, args.n_per_prompt, args.corpus_seed)
    model = ARModel.train(corpus, cb.size, lam=args.lam, weights=tuple(args.weights))
    cb.save(args.out_codebook)
    model.save(args.out_model)
    if args.out_corpus:
        corpus.save(args.out_corpus)
    print(f"trained on {len(corpus)} grids; codebook size {cb.size}, dim {cb.dim}")
    return 0


def _cmd_gen(args) -> int:
    model, cb = _load_stack(args)
    seeds = args.seed_list if args.seed_list else [args.seed]
    prompt = Prompt.parse(args.prompt)
    multi = len(seeds) > 1

    def _suffix(path, seed):
        if path is None or not multi:
            return path
        root, ext = os.path.splitext(path)
        return f"{root}.seed{seed}{ext}"

    for seed in seeds:
        cfg = DecodeConfig(k=1, reference_mode=args.mode, rng_seed=seed)
        grid = generate_reference(model, prompt, args.height, args.width, cfg)
        _write(_suffix(args.out_grid, seed), grid.to_json_bytes())
        if args.out_image:
            _write(_suffix(args.out_image, seed), cb.decode_grid(grid).to_ppm_bytes())
        if args.out_mask:
            _write(_suffix(args.out_mask, seed), scenes.infer_mask(grid).to_json_bytes())
    print(f"generated {len(seeds)} grid(s) for prompt {prompt.format()}")
    return 0


def _trace_json(trace) -> bytes:
    records = [
        {
            "position": st.position,
            "window_size": st.window_size,
            "chosen": st.chosen,
            "used_fallback": st.used_fallback,
            "candidates": [[t, p, d] for t, p, d in st.candidates],
        }
        for st in trace
    ]
    return canonical_json_bytes(records, sig_digits=9)


def _cmd_edit(args) -> int:
    model, cb = _load_stack(args)
    prompt_org = Prompt.parse(args.prompt_org)
    prompt_edit = Prompt.parse(args.prompt_edit)
    cfg = _decode_cfg(args, rng_seed=args.seed * 2)
    ref = generate_reference(model, prompt_org, args.height, args.width, cfg)
    result = anchored_decode(model, cb, prompt_edit, ref, cfg.with_seed(args.seed * 2 + 1))
    _write(args.out_grid, result.grid.to_json_bytes())
    if args.out_image:
        _write(args.out_image, cb.decode_grid(result.grid).to_ppm_bytes())
    if args.out_trace:
        _write(args.out_trace, _trace_json(result.trace))
    if args.out_anchor:
        _write(args.out_anchor, ref.to_json_bytes())
    if args.out_report:
        mask = scenes.infer_mask(ref)
        report = metrics.build_report(cb, ref, result.grid, mask, prompt_edit)
        _write(args.out_report, metrics.report_json_bytes(report))
    if args.export_images:
        os.makedirs(args.export_images, exist_ok=True)
        cb.decode_grid(ref).save_ppm(os.path.join(args.export_images, "anchor.ppm"))
        cb.decode_grid(result.grid).save_ppm(os.path.join(args.export_images, "edit.ppm"))
        baseline = prompt_swap_decode(model, prompt_edit, args.height, args.width, cfg)
        cb.decode_grid(baseline).save_ppm(os.path.join(args.export_images, "baseline.ppm"))
    fallback_rate = len(result.fallback_positions()) / result.grid.tokens.size
    print(f"edited {prompt_org.format()} -> {prompt_edit.format()}; fallback rate {fallback_rate:.3f}")
    return 0


def _cmd_report(args) -> int:
    cb = Codebook.load(args.codebook)
    grid_a = TokenGrid.load(args.grid_a)
    grid_b = TokenGrid.load(args.grid_b)
    mask = RegionMask.load(args.mask) if args.mask else scenes.infer_mask(grid_a)
    prompt_edit = Prompt.parse(args.prompt_edit)
    report = metrics.build_report(cb, grid_a, grid_b, mask, prompt_edit)
    blob = metrics.report_json_bytes(report)
    _write(args.out, blob)
    if args.out is None:
        sys.stdout.write(blob.decode("ascii"))
    return 0


def _sample_prompts(count: int, seed: int) -> list[Prompt]:
    import numpy as np

    rng = np.random.default_rng(np.random.SeedSequence((seed & ((1 << 64) - 1), 0x9A17)))
    prompts = []
    for _ in range(count):
        prompts.append(
            Prompt(
                int(rng.integers(scenes.OBJECT_COUNT)),
                int(rng.integers(scenes.COLOR_COUNT)),
                int(rng.integers(scenes.BACKGROUND_COUNT)),
                int(rng.integers(scenes.STYLE_COUNT)),
            )
        )
    return prompts


def _cmd_perturb(args) -> int:
    model, cb = _load_stack(args)
    if args.prompt:
        prompts = [Prompt.parse(p) for p in args.prompt]
    else:
        prompts = _sample_prompts(args.n_prompts, args.prompt_seed)
    cfg = experiments.experiment_config()
    report = experiments.run_perturbation_study(
        model, cb, prompts, cfg, args.seed_list, args.height, args.width, export_dir=args.export_images
    )
    return _report_and_assert(args, report.as_dict(), lambda r: experiments.check_perturbation(report))


def _cmd_ablate_window(args) -> int:
    model, cb = _load_stack(args)
    pairs = experiments.make_edit_pairs(args.seed_list)
    cfg = experiments.experiment_config(k=args.k, tau=args.tau, alpha=args.alpha)
    report = experiments.run_window_ablation(
        model, cb, pairs, args.windows, cfg, args.height, args.width, export_dir=args.export_images
    )
    return _report_and_assert(args, report, experiments.check_window_ablation)


def _cmd_ablate_tau(args) -> int:
    model, cb = _load_stack(args)
    pairs = experiments.make_edit_pairs(args.seed_list)
    cfg = experiments.experiment_config(k=args.k, alpha=args.alpha)
    report = experiments.run_tau_ablation(
        model, cb, pairs, args.taus, cfg, args.height, args.width, export_dir=args.export_images
    )
    return _report_and_assert(args, report, experiments.check_tau_ablation)


def _cmd_compare(args) -> int:
    model, cb = _load_stack(args)
    pairs = experiments.make_edit_pairs(args.seed_list)
    cfg = experiments.experiment_config(k=args.k, tau=args.tau, alpha=args.alpha)
    report = experiments.run_npm_comparison(
        model, cb, pairs, cfg, args.height, args.width, export_dir=args.export_images
    )
    return _report_and_assert(args, report, experiments.check_npm_comparison)


# -- parser ------------------------------------------------------------------


def _add_stack_args(p):
    p.add_argument("--model", required=True, help="trained model JSON")
    p.add_argument("--codebook", required=True, help="codebook JSON")


def _add_grid_args(p, default_h=experiments.DEFAULT_H, default_w=experiments.DEFAULT_W):
    p.add_argument("--height", type=int, default=default_h)
    p.add_argument("--width", type=int, default=default_w)


def _add_experiment_args(p, default_seeds):
    p.add_argument("--seed-list", type=_parse_seed_list, default=_parse_seed_list(default_seeds))
    p.add_argument("--out", default=None, help="JSON report path (stdout when omitted)")
    p.add_argument("--export-images", default=None, metavar="DIR", help="dump PPM images per case")
    p.add_argument("--assert", dest="assert_trends", action="store_true",
                   help="exit nonzero when a declared trend assertion fails")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokenlock", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="build codebook + corpus and train the model")
    _add_grid_args(p)
    p.add_argument("--dim", type=int, default=experiments.DEFAULT_CB_DIM)
    p.add_argument("--cb-size", type=int, default=None, help="default: smallest size the scene layout needs")
    p.add_argument("--cb-seed", type=int, default=experiments.DEFAULT_CB_SEED)
    p.add_argument("--corpus-seed", type=int, default=experiments.DEFAULT_CORPUS_SEED)
    p.add_argument("--n-per-prompt", type=int, default=experiments.DEFAULT_N_PER_PROMPT)
    p.add_argument("--lam", type=float, default=experiments.DEFAULT_LAM)
    p.add_argument("--weights", type=_parse_float_list, default=list(experiments.DEFAULT_WEIGHTS))
    p.add_argument("--out-codebook", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-corpus", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gen", help="generate a reference grid for a prompt")
    _add_stack_args(p)
    _add_grid_args(p)
    p.add_argument("--prompt", required=True, help="obj:color:bg:style")
    p.add_argument("--mode", choices=["greedy", "stochastic"], default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seed-list", type=_parse_seed_list, default=None)
    p.add_argument("--out-grid", default=None)
    p.add_argument("--out-image", default=None)
    p.add_argument("--out-mask", default=None)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("edit", help="anchored edit of a reference generation")
    _add_stack_args(p)
    _add_grid_args(p)
    p.add_argument("--prompt-org", required=True)
    p.add_argument("--prompt-edit", required=True)
    p.add_argument("--k", type=int, default=experiments.DEFAULT_K)
    p.add_argument("--tau", type=_parse_float, default=1.0, help="accepts 'inf'")
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--metric", choices=["euclidean_sq", "cosine_dist"], default="euclidean_sq")
    p.add_argument("--candidate-mode", choices=["top_k", "sample_k"], default="sample_k")
    p.add_argument("--reference-mode", choices=["greedy", "stochastic"], default="stochastic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-grid", default=None)
    p.add_argument("--out-image", default=None)
    p.add_argument("--out-trace", default=None)
    p.add_argument("--out-anchor", default=None)
    p.add_argument("--out-report", default=None)
    p.add_argument("--export-images", default=None, metavar="DIR")
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("report", help="score two grids and emit a metric report")
    p.add_argument("--codebook", required=True)
    p.add_argument("--grid-a", required=True, help="reference grid JSON")
    p.add_argument("--grid-b", required=True, help="edited grid JSON")
    p.add_argument("--mask", default=None, help="mask JSON (default: inferred from grid-a)")
    p.add_argument("--prompt-edit", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("perturb", help="early-vs-late perturbation sensitivity study")
    _add_stack_args(p)
    _add_grid_args(p)
    p.add_argument("--prompt", action="append", default=None, help="repeatable; default: sampled prompts")
    p.add_argument("--n-prompts", type=int, default=2)
    p.add_argument("--prompt-seed", type=int, default=0)
    _add_experiment_args(p, "0..29")
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("ablate-window", help="fixed vs dynamic selection-window sweep")
    _add_stack_args(p)
    _add_grid_args(p)
    p.add_argument("--k", type=int, default=experiments.DEFAULT_K)
    p.add_argument("--tau", type=_parse_float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--windows", type=_parse_int_list, default=[2, 4, 6])
    _add_experiment_args(p, "0..49")
    p.set_defaults(func=_cmd_ablate_window)

    p = sub.add_parser("ablate-tau", help="threshold sweep")
    _add_stack_args(p)
    _add_grid_args(p)
    p.add_argument("--k", type=int, default=experiments.DEFAULT_K)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--taus", type=_parse_float_list, default=[0.25, 0.5, 1.0, 2.0, math.inf])
    _add_experiment_args(p, "0..49")
    p.set_defaults(func=_cmd_ablate_tau)

    p = sub.add_parser("compare", help="anchored decoding vs prompt-swap baseline")
    _add_stack_args(p)
    _add_grid_args(p)
    p.add_argument("--k", type=int, default=experiments.DEFAULT_K)
    p.add_argument("--tau", type=_parse_float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.6)
    _add_experiment_args(p, "0..49")
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
