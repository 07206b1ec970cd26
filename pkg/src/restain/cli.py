"""Command-line entry point: ``restain {synth,train,normalize,evaluate,stability,histcmp}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import metrics
from .baselines import (MacenkoParams, lab_stats, load_lab_stats, macenko_normalize, macenko_target,
                        reinhard_normalize)
from .imagecore import default_styles, load_png, save_png, synth_corpus
from .losses import LossWeights
from .pipeline import (STABILITY_COEFFICIENTS, TrainConfig, Trainer, histogram_compare, load_generator,
                       restain_image, stability_experiment, write_loss_log)
from .stainsep import OdParams, StainMatrix, load_stain_matrix

log = logging.getLogger("restain")


class UsageError(Exception):
    pass


def _common(args) -> tuple[OdParams, StainMatrix]:
    try:
        odp = OdParams(i0=args.od_i0, floor=args.od_floor)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sm = load_stain_matrix(args.stain_matrix) if args.stain_matrix else StainMatrix()
    return odp, sm


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    style_a, style_b = default_styles(args.seed)
    manifest = synth_corpus(style_a, style_b, args.count, _out_dir(args, "data"), size=args.size)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    odp, sm = _common(args)
    out = _out_dir(args, "run")
    try:
        cfg = TrainConfig(
            data=Path(args.data), style_label=args.style, epochs=args.epochs, batch_size=args.batch_size,
            patch_size=args.patch_size, seed=args.seed,
            weights=LossWeights(args.lambda_gan, args.lambda_l1, args.lambda_staining),
            odp=odp, stain_matrix=sm, checkpoint=Path(args.checkpoint or out / "model.rsnm"),
            resume=args.resume, steps_per_epoch=args.steps_per_epoch, max_images=args.max_images,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    trainer = Trainer(cfg)
    history = trainer.run()
    write_loss_log(history, out / "losses.tsv")
    if not args.no_figures:
        from .plotting import plot_loss_curve
        plot_loss_curve(history, out / "losses.png")
    last = history[-1]
    log.info("final step %d: total %.4f (l1 %.4f, staining %.4f, gan %.4f)",
             last["step"], last["total"], last["l1"], last["staining"], last["g_gan"])
    print(cfg.checkpoint)
    return 0


def _reinhard_target(args):
    if args.target_stats:
        return load_lab_stats(args.target_stats)
    if args.target_image:
        return lab_stats(load_png(args.target_image))
    raise UsageError("reinhard needs --target-stats or --target-image")


def _macenko_target(args, odp):
    p = MacenkoParams()
    if args.target_matrix:
        if not args.target_max_c:
            raise UsageError("--target-matrix needs --target-max-c CH CE")
        return load_stain_matrix(args.target_matrix), tuple(args.target_max_c)
    if args.target_image:
        return macenko_target(load_png(args.target_image), p, odp)
    raise UsageError("macenko needs --target-image or --target-matrix with --target-max-c")


def cmd_normalize(args) -> int:
    odp, sm = _common(args)
    out = _out_dir(args, "normalized")
    if args.method == "restain":
        if not args.model:
            raise UsageError("restain needs --model CHECKPOINT")
        gen = load_generator(args.model)
    elif args.method == "reinhard":
        target_stats = _reinhard_target(args)
    else:
        target_sm, target_c = _macenko_target(args, odp)

    for src in map(Path, args.inputs):
        dst = out / (src.stem + ".png")
        if dst.resolve() == src.resolve():
            raise UsageError(f"output {dst} would overwrite its input")
        img = load_png(src)
        if args.method == "restain":
            result, _ = restain_image(gen, img, keep_l=args.keep_l, sm=sm, odp=odp)
        elif args.method == "reinhard":
            result = reinhard_normalize(img, target_stats)
        else:
            result = macenko_normalize(img, target_sm, target_c, MacenkoParams(), odp)
        save_png(result, dst)
        print(dst)
    return 0


def cmd_evaluate(args) -> int:
    names = [n.strip() for n in args.metrics.split(",") if n.strip()]
    unknown = [n for n in names if n not in metrics.METRIC_FUNCS]
    if unknown or not names:
        raise UsageError(f"unknown metric(s) {unknown}; valid names: {', '.join(metrics.METRICS)}")
    report = metrics.evaluate_set(args.pairs, names)
    text = report.to_tsv()
    if args.out:
        out = _out_dir(args, "report")
        (out / "report.tsv").write_text(text, encoding="utf-8")
        if not args.no_figures:
            from .plotting import plot_metric_report
            plot_metric_report(report, out / "report.png")
        print(out / "report.tsv")
    else:
        sys.stdout.write(text)
    return 0


def cmd_stability(args) -> int:
    odp, sm = _common(args)
    out = _out_dir(args, "stability")
    gen = load_generator(args.model)
    img = load_png(args.image)
    coeffs = args.coefficients
    images, dists = stability_experiment(gen, img, coeffs, keep_l=args.keep_l, sm=sm, odp=odp)
    lines = ["coefficient\tmean_lab_distance\toutput"]
    for c, d, res in zip(coeffs, dists, images):
        name = f"stability_c{c:g}.png"
        save_png(res, out / name)
        lines.append(f"{c:g}\t{d:.6g}\t{name}")
    text = "\n".join(lines) + "\n"
    (out / "summary.tsv").write_text(text, encoding="utf-8")
    if not args.no_figures:
        from .plotting import plot_stability
        plot_stability(images, coeffs, dists, out / "stability.png", source=img)
    sys.stdout.write(text)
    return 0


def cmd_histcmp(args) -> int:
    odp, sm = _common(args)
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    cmp = histogram_compare(load_png(args.image_a), load_png(args.image_b), args.bins, sm, odp)
    text = cmp.to_tsv()
    if args.out:
        out = _out_dir(args, "histcmp")
        (out / "histcmp.tsv").write_text(text, encoding="utf-8")
        if not args.no_figures:
            from .plotting import plot_dye_histograms
            plot_dye_histograms(cmp, out / "histcmp.png", labels=(Path(args.image_a).stem, Path(args.image_b).stem))
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--od-i0", type=float, default=255.0, help="incident light level (8-bit scale)")
    common.add_argument("--od-floor", type=float, default=1.0, help="transmitted-light floor before the log")
    common.add_argument("--stain-matrix", metavar="FILE", help="nine floats, row-major (H, E, residual)")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--no-figures", action="store_true", help="skip rendering PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="restain", description="H&E stain normalisation by digital re-staining")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic two-style corpus")
    p.add_argument("--count", type=int, default=20, help="images per style")
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="self-supervised training on one style")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--style", default="A", help="target-domain label in the manifest")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--max-images", type=int)
    p.add_argument("--checkpoint", metavar="FILE")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--lambda-gan", type=float, default=0.1)
    p.add_argument("--lambda-l1", type=float, default=1.0)
    p.add_argument("--lambda-staining", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("normalize", parents=[common], help="normalise images")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--method", choices=("restain", "reinhard", "macenko"), default="restain")
    p.add_argument("--model", metavar="CHECKPOINT")
    p.add_argument("--target-image")
    p.add_argument("--target-stats", metavar="FILE")
    p.add_argument("--target-matrix", metavar="FILE")
    p.add_argument("--target-max-c", type=float, nargs=2, metavar=("CH", "CE"))
    p.add_argument("--keep-L", dest="keep_l", action=argparse.BooleanOptionalAction, default=True,
                   help="copy the input luminance into the output (default on)")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("evaluate", parents=[common], help="full-reference metrics over image pairs")
    p.add_argument("--pairs", required=True, metavar="MANIFEST", help="reference<TAB>candidate per line")
    p.add_argument("--metrics", default=",".join(metrics.METRICS))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stability", parents=[common], help="re-stain with scaled H and E")
    p.add_argument("--image", required=True)
    p.add_argument("--model", required=True, metavar="CHECKPOINT")
    p.add_argument("--coefficients", type=float, nargs="+", default=list(STABILITY_COEFFICIENTS))
    p.add_argument("--keep-L", dest="keep_l", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("histcmp", parents=[common], help="compare H/E histograms of two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=cmd_histcmp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"restain {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
