"""Command-line entry points for the detection pipeline.

One verb per stage plus `synth` (dataset generation) and `all` (the whole
graph in one run). Failures exit nonzero with a single-line diagnostic.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PipelineConfig, load_config
from .evaluation import mean_ap, read_report
from .modelio import fmt_float
from .synth import SynthSpec, generate_dataset


def _config_from(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _add_common(p, manifest=True):
    p.add_argument("--out-dir", required=True, help="artifact directory")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="override the configured base seed")
    if manifest:
        p.add_argument("--manifest", required=True, help="dataset manifest file")
        p.add_argument("--tag", help="artifact tag (default: manifest directory name)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fusedet", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--images", type=int, default=100)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--max-shapes", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="img")

    for verb in ("propose", "extract", "train-svm", "train-fusion", "train-regressor", "train-prior"):
        _add_common(sub.add_parser(verb))

    p = sub.add_parser("detect", help="score, fuse, refine, suppress, gate, dump")
    _add_common(p)
    p.add_argument("--channel", choices=("fused",) + pipeline.CHANNELS, default="fused")

    p = sub.add_parser("eval", help="match detections and write the AP report")
    _add_common(p)
    p.add_argument("--channel", choices=("fused",) + pipeline.CHANNELS, default="fused")
    p.add_argument("--detections", help="detection dump to evaluate (default: detect's output)")
    p.add_argument("--report", help="report file to write (default: report_<tag>.txt)")

    p = sub.add_parser("compare", help="count per-category AP wins across reports")
    p.add_argument("reports", nargs="+", metavar="NAME=PATH")
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="draw detection overlays as PPM images")
    _add_common(p)
    p.add_argument("--channel", choices=("fused",) + pipeline.CHANNELS, default="fused")
    p.add_argument("--min-score", type=float, default=0.0)

    p = sub.add_parser("all", help="run the full pipeline on a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-manifest")
    p.add_argument("--test-manifest")
    p.add_argument("--train-images", type=int, default=200)
    p.add_argument("--test-images", type=int, default=50)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--max-shapes", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--size", type=int, default=96)

    return ap


def _run(args) -> int:
    if args.verb == "synth":
        spec = SynthSpec(
            n_classes=args.classes,
            n_images=args.images,
            max_shapes=args.max_shapes,
            noise=args.noise,
            image_size=args.size,
        )
        manifest = generate_dataset(args.out_dir, spec, args.seed, prefix=args.prefix)
        print(f"wrote {len(manifest.images)} images under {args.out_dir}")
        return 0

    if args.verb == "compare":
        named = {}
        for item in args.reports:
            if "=" not in item:
                raise ValueError(f"expected NAME=PATH, got {item!r}")
            name, _, path = item.partition("=")
            named[name] = Path(path)
        wins = pipeline.stage_compare(named, args.out)
        for name in sorted(wins):
            print(f"{name} {wins[name]}")
        return 0

    cfg = _config_from(args)
    if args.verb == "all":
        report = pipeline.stage_all(
            cfg,
            args.out_dir,
            train_manifest=args.train_manifest,
            test_manifest=args.test_manifest,
            train_images=args.train_images,
            test_images=args.test_images,
            classes=args.classes,
            max_shapes=args.max_shapes,
            noise=args.noise,
            image_size=args.size,
        )
        print(f"report {report}")
        print(f"mAP {fmt_float(mean_ap(read_report(report)))}")
        return 0

    tag = getattr(args, "tag", None)
    if args.verb == "propose":
        print(f"wrote {pipeline.stage_propose(cfg, args.manifest, args.out_dir, tag)}")
    elif args.verb == "extract":
        print(f"wrote {pipeline.stage_extract(cfg, args.manifest, args.out_dir, tag)}")
    elif args.verb == "train-svm":
        for path in pipeline.stage_train_svm(cfg, args.manifest, args.out_dir, tag):
            print(f"wrote {path}")
    elif args.verb == "train-fusion":
        print(f"wrote {pipeline.stage_train_fusion(cfg, args.manifest, args.out_dir, tag)}")
    elif args.verb == "train-regressor":
        print(f"wrote {pipeline.stage_train_regressor(cfg, args.manifest, args.out_dir, tag)}")
    elif args.verb == "train-prior":
        print(f"wrote {pipeline.stage_train_prior(cfg, args.manifest, args.out_dir, tag)}")
    elif args.verb == "detect":
        print(f"wrote {pipeline.stage_detect(cfg, args.manifest, args.out_dir, tag, channel=args.channel)}")
    elif args.verb == "eval":
        path = pipeline.stage_eval(
            cfg,
            args.manifest,
            args.out_dir,
            tag,
            channel=args.channel,
            detections_file=args.detections,
            report_file=args.report,
        )
        print(f"wrote {path}")
        print(f"mAP {fmt_float(mean_ap(read_report(path)))}")
    elif args.verb == "render":
        print(f"wrote {pipeline.stage_render(cfg, args.manifest, args.out_dir, tag, channel=args.channel, min_score=args.min_score)}")
    else:  # pragma: no cover - argparse enforces the verb set
        raise ValueError(f"unknown verb {args.verb!r}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except Exception as exc:
        print(f"fusedet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
