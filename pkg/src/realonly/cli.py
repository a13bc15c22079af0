"""Command-line entry point: ``realonly <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .imagio import ImageError
from .metrics import MetricError
from .noise import ExtractorError
from .ocsvm import OcSvmError
from .perturb import PerturbError, PerturbSpec
from .simgen import SimError
from .spectrum import SpectrumError

log = logging.getLogger("realonly")

_ERRORS = (pipeline.PipelineError, ImageError, ExtractorError, SpectrumError, OcSvmError,
           MetricError, PerturbError, SimError, OSError)


def _add_config_flags(p: argparse.ArgumentParser, train: bool = False) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--extractor", help="gaussian:SIGMA | median:W | wavelet:LEVELS:THR | external:DIR")
    p.add_argument("--input-policy", choices=pipeline.POLICIES)
    p.add_argument("--threads", type=int)
    if train:
        p.add_argument("-k", "--k", type=int, help="grid sampling interval (default 32)")
        p.add_argument("--nu", type=float, help="outlier bound (default 0.1)")
        p.add_argument("--gamma", help="RBF width or 'auto' (1/d)")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--seed", type=int)


def _config(args) -> pipeline.PipelineConfig:
    file_values = pipeline.read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {key: getattr(args, key, None)
                 for key in ("extractor", "k", "nu", "gamma", "tol", "max_iter", "seed", "threads")}
    overrides["input_policy"] = getattr(args, "input_policy", None)
    return pipeline.build_config(file_values, **overrides)


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


def run_train(args) -> int:
    cfg = _config(args)
    manifest = pipeline.Manifest.load(args.manifest)
    _, summary = pipeline.cmd_train(manifest, cfg, args.model_out)
    audit = summary.pop("audit")
    if args.audit_log:
        Path(args.audit_log).write_text("".join(p + "\n" for p in audit))
    print(f"trained on {summary['n_train']} images: sum(alpha)={summary['sum_alpha']:.12f} "
          f"SVs={summary['n_sv']} ({summary['sv_fraction']:.3f}) "
          f"training outliers={summary['outlier_fraction']:.3f}")
    return 0


def run_detect(args) -> int:
    doc = pipeline.cmd_detect(args.model, args.inputs, args.report_out, _config(args))
    s = doc["summary"]
    print(f"{s['n_images']} images: {s['n_real']} real, {s['n_generated']} generated, {s['n_failed']} failed")
    return 0


def run_eval(args) -> int:
    rep = pipeline.cmd_eval(args.model, pipeline.Manifest.load(args.manifest), args.report_out, _config(args))
    _print_json(rep)
    return 0


def run_robustness(args) -> int:
    grid = [PerturbSpec.parse(text, default_seed=args.seed) for text in args.perturb]
    rows = pipeline.cmd_robustness(args.model, pipeline.Manifest.load(args.manifest), grid,
                                   args.report_out, _config(args))
    for r in rows:
        print(f"{r['perturbation']:<24} acc={r['acc']:.4f} ap={r['ap']:.4f} f1={r['f1']:.4f}")
    return 0


def run_spectrum(args) -> int:
    res = pipeline.cmd_spectrum(args.inputs, args.out_dir, _config(args), args.mean_profile, args.period)
    print(f"rendered {len(res['images'])} spectra into {args.out_dir}")
    if "peak_report" in res:
        _print_json(res["peak_report"])
    return 0


def run_simulate(args) -> int:
    manifest = pipeline.cmd_simulate(args.inputs, args.out_dir, args.method, args.seed, args.size,
                                     args.patches, args.jitter)
    print(f"wrote {len(manifest.entries) // 2} real/generated pairs to {args.out_dir}")
    return 0


def run_perturb(args) -> int:
    written = pipeline.cmd_perturb(args.inputs, args.out_dir, PerturbSpec.parse(args.perturb, args.seed))
    print(f"wrote {len(written)} images to {args.out_dir}")
    return 0


def run_bench(args) -> int:
    rep = pipeline.cmd_bench(args.model, args.inputs, args.threads, _config(args))
    _print_json(rep)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="realonly",
        description="Detect generated images with a one-class model trained on real photos only.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the one-class model on a real-only manifest")
    p.add_argument("manifest")
    p.add_argument("model_out")
    p.add_argument("--audit-log", help="write every image path read during training")
    _add_config_flags(p, train=True)
    p.set_defaults(func=run_train)

    p = sub.add_parser("detect", help="score a directory or manifest")
    p.add_argument("model")
    p.add_argument("inputs")
    p.add_argument("report_out", nargs="?", help=".csv or .json report path")
    _add_config_flags(p)
    p.set_defaults(func=run_detect)

    p = sub.add_parser("eval", help="ACC/AP/F1 on a labelled manifest")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("report_out", nargs="?")
    _add_config_flags(p)
    p.set_defaults(func=run_eval)

    p = sub.add_parser("robustness", help="metrics under perturbations of the generated side")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("report_out", nargs="?")
    p.add_argument("--perturb", action="append", required=True,
                   help="kind:param[@seed=N], repeatable; 'none' gives the baseline row")
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=run_robustness)

    p = sub.add_parser("spectrum", help="render raw and enhanced amplitude spectra")
    p.add_argument("inputs")
    p.add_argument("out_dir")
    p.add_argument("--mean-profile", action="store_true", help="write the set-mean row profile CSV")
    p.add_argument("--period", type=int, help="also report peak contrast at this period")
    _add_config_flags(p)
    p.set_defaults(func=run_spectrum)

    p = sub.add_parser("simulate", help="make real/generated pairs with an upsampling simulator")
    p.add_argument("inputs")
    p.add_argument("out_dir")
    p.add_argument("--method", action="append", help="method:factor, repeatable (default nearest:4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=pipeline.TARGET)
    p.add_argument("--patches", type=int, default=1, help="crops per photo")
    p.add_argument("--jitter", type=float, default=0.1, help="relative tap noise of each stage")
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("perturb", help="apply one perturbation to every input")
    p.add_argument("inputs")
    p.add_argument("out_dir")
    p.add_argument("--perturb", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=run_perturb)

    p = sub.add_parser("bench", help="end-to-end throughput")
    p.add_argument("model")
    p.add_argument("inputs")
    _add_config_flags(p)
    p.set_defaults(func=run_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate" and not args.method:
        args.method = ["nearest:4"]
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"realonly {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
