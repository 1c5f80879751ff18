"""``relevance-lens`` command line.

Exit codes: 0 success, 1 input/validation/format error, 2 numerical or
internal error. Diagnostics go to stderr; results go to the declared output
files, or stdout for ``classify`` and ``model-info``.
"""

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__, kernels
from .attribution import attribute, normalize_heatmap, parse_method
from .errors import NumericalError, RelevanceLensError
from .evaluation import (
    DatasetItem,
    agreement,
    agreement_to_json,
    erase_image,
    erasure_curve,
    write_curve_csv,
    write_detail_csv,
)
from .io import (
    load_image,
    load_mask,
    manifest_from_breakhis_dir,
    read_heatmap,
    raw_to_rgb,
    read_manifest,
    save_png,
    to_raw,
    write_heatmap,
    write_manifest,
)
from .nn import classify, load_model
from .render import overlay, render_heatmap, render_occlusion_series
from .selection import SELECTION_METHODS, SelectionConfig, load_selection, save_selection, select
from .synthetic import write_synthetic_dataset

METHODS = ("gradient", "lrp-z", "lrp-epsilon")
THREADS_ENV = "RELEVANCE_LENS_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this CLI reserves 2 for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _threads(value):
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"--threads must be a positive integer or 'auto', got {value!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _bandwidth(value):
    if value == "auto":
        return "auto"
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be a float or 'auto'") from None


def _target(value):
    if value == "argmax":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("target must be 'argmax' or a class index") from None


def _selection_config(args, method):
    kw = {"method": method, "kmeans_seed": args.seed, "meanshift_bandwidth": args.bandwidth}
    if args.clusters is not None:
        kw.update(bins=args.clusters, kmeans_k=args.clusters, meanshift_top=args.clusters)
    return SelectionConfig(**kw)


def _load_raw(model, path, resize):
    c, h, w = model.input_shape
    return to_raw(load_image(path), c, (h, w), resize)


def _fmt_float(x):
    return None if isinstance(x, float) and math.isnan(x) else x


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_model_info(args):
    path = args.path or args.model
    if path is None:
        raise UsageError("model-info needs a model path")
    model = load_model(path)
    out = sys.stdout
    print(f"model: {path}", file=out)
    print(f"input shape: {model.input_shape}", file=out)
    print(f"preprocessing mean: {model.mean.tolist()} scale: {model.scale.tolist()}", file=out)
    print(f"{'#':>3}  {'layer':<10} {'output shape':<16} {'params':>8}  details", file=out)
    for i, layer in enumerate(model.layers):
        shape = "x".join(str(d) for d in model.shapes[i + 1])
        print(f"{i:>3}  {layer.kind:<10} {shape:<16} {layer.param_count():>8}  {layer.describe()}", file=out)
    print(f"parameters: {model.param_count()}", file=out)
    print(f"classes: {', '.join(model.class_labels)}", file=out)
    return 0


def cmd_classify(args):
    model = load_model(args.model)
    x = model.preprocess(_load_raw(model, args.image, args.resize))
    pred, logits = classify(model, x)
    doc = {
        "image": str(args.image),
        "predicted_class": pred,
        "label": model.class_labels[pred],
        "logits": logits.tolist(),
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_attribute(args):
    model = load_model(args.model)
    x = model.preprocess(_load_raw(model, args.image, args.resize))
    if args.target == "argmax":
        target, _ = classify(model, x)
    else:
        target = args.target
    method = parse_method(args.method, args.epsilon)
    h = normalize_heatmap(attribute(model, x, target, method, Path(args.image).stem))
    write_heatmap(h, args.out)
    print(f"wrote {args.out} ({args.method}, target {target})", file=sys.stderr)
    return 0


def cmd_select(args):
    h = read_heatmap(args.heatmap)
    sel = select(h, _selection_config(args, args.method))
    save_selection(sel, args.out)
    print(f"wrote {args.out}: {len(sel)} clusters", file=sys.stderr)
    return 0


def cmd_erase(args):
    model = load_model(args.model)
    raw = _load_raw(model, args.image, args.resize)
    sel = load_selection(args.selection)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_id = Path(args.image).stem
    target, _ = classify(model, model.preprocess(raw))
    logits, preds, _ = erase_image(model, raw, sel.clusters, args.steps, args.mode)
    rgb = load_image(args.image)
    if rgb.shape[:2] != raw.shape[1:]:
        # --resize: show frames at model resolution
        rgb = raw_to_rgb(raw)
    frames = render_occlusion_series(rgb, sel, args.steps, args.mode)
    for t, frame in enumerate(frames, start=1):
        save_png(frame, out / f"frame_{t:02d}.png")
    with open(out / "erasure.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("image_id,step,target_logit,predicted_class\n")
        for t, (lg, p) in enumerate(zip(logits, preds)):
            fh.write(f"{image_id},{t},{float(lg[target])!r},{p}\n")
    print(f"wrote {len(frames)} frames to {out}", file=sys.stderr)
    return 0


def cmd_evaluate(args):
    model = load_model(args.model)
    rows = read_manifest(args.manifest)
    dataset = [DatasetItem(r.image_id, _load_raw(model, r.path, args.resize), r.label) for r in rows]
    methods = METHODS if args.method == "all" else (args.method,)
    selects = SELECTION_METHODS if args.select == "all" else (args.select,)
    threads = _threads(args.threads)
    if (args.out is None) == (args.out_dir is None):
        raise UsageError("evaluate needs exactly one of --out FILE or --out-dir DIR")
    if args.out is not None and len(methods) * len(selects) > 1:
        raise UsageError("--out names a single curve file; use --out-dir with 'all'")
    out = Path(args.out_dir) if args.out is None else Path(args.out).parent
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for m in methods:
        method = parse_method(m, args.epsilon)
        for s in selects:
            curve = erasure_curve(
                model, dataset, method, _selection_config(args, s), args.steps, args.mode, threads
            )
            write_curve_csv(curve, Path(args.out) if args.out else out / f"curve_{m}_{s}.csv")
            write_detail_csv(curve.records, out / f"detail_{m}_{s}.csv")
            summary.append(
                {
                    "method": m,
                    "select": s,
                    "steps": curve.T,
                    "baseline_accuracy": curve.steps[0].accuracy,
                    "final_accuracy": curve.steps[-1].accuracy,
                    "baseline_auc": _fmt_float(curve.steps[0].roc_auc),
                    "mean_auc": _fmt_float(curve.mean_auc()),
                    "final_auc": _fmt_float(curve.steps[-1].roc_auc),
                }
            )
            print(f"{m} + {s}: {curve.T} steps, mean AUC {curve.mean_auc():.4f}", file=sys.stderr)
    cols = ["method", "select", "steps", "baseline_accuracy", "final_accuracy",
            "baseline_auc", "mean_auc", "final_auc"]
    with open(out / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in summary:
            fh.write(",".join("nan" if rec[c] is None else str(rec[c]) for c in cols) + "\n")
    grid = {s: {m: None for m in methods} for s in selects}
    for rec in summary:
        grid[rec["select"]][rec["method"]] = rec["mean_auc"]
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"runs": summary, "mean_auc_by_selection": grid}, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_agreement(args):
    sel = load_selection(args.selection)
    mask = load_mask(args.mask)
    steps = len(sel.clusters) if args.steps is None else min(args.steps, len(sel.clusters))
    report = agreement([sel.cumulative(t) for t in range(1, steps + 1)], mask)
    Path(args.out).write_text(agreement_to_json(report), encoding="utf-8")
    return 0


def cmd_overlay(args):
    rgb = load_image(args.image)
    h = read_heatmap(args.heatmap)
    save_png(overlay(rgb, h, args.alpha), args.out)
    return 0


def cmd_render(args):
    save_png(render_heatmap(read_heatmap(args.heatmap), args.palette), args.out)
    return 0


def cmd_manifest(args):
    write_manifest(manifest_from_breakhis_dir(args.dir, args.pattern), args.out)
    return 0


def cmd_synth(args):
    model_path, manifest_path = write_synthetic_dataset(args.out_dir, args.images, args.seed)
    print(f"wrote {model_path} and {manifest_path}", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--threads", default=None, help=f"worker threads, N or 'auto' (env {THREADS_ENV})")
    common.add_argument("--seed", type=int, default=0, help="seed for k-means++ (default 0)")

    model_opts = _Parser(add_help=False)
    model_opts.add_argument("--model", required=True, help="RLNS model file")
    model_opts.add_argument("--resize", action="store_true", help="bilinear-resize images to the model input")

    sel_opts = _Parser(add_help=False)
    sel_opts.add_argument("--clusters", type=int, default=None,
                          help="bins / k / retained mean-shift clusters (default 10)")
    sel_opts.add_argument("--bandwidth", type=_bandwidth, default="auto", help="mean-shift bandwidth or 'auto'")

    p = _Parser(prog="relevance-lens", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.backend()})")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("model-info", parents=[common], help="print layer table and class labels")
    s.add_argument("path", nargs="?")
    s.add_argument("--model", default=None)
    s.set_defaults(func=cmd_model_info)

    s = sub.add_parser("classify", parents=[common, model_opts], help="classify one image")
    s.add_argument("--image", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("attribute", parents=[common, model_opts], help="write a heatmap PGM + sidecar")
    s.add_argument("--image", required=True)
    s.add_argument("--method", choices=METHODS, default="gradient")
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--target", type=_target, default="argmax")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attribute)

    s = sub.add_parser("select", parents=[common, sel_opts], help="cluster a heatmap into ranked regions")
    s.add_argument("--heatmap", required=True)
    s.add_argument("--method", choices=SELECTION_METHODS, default="meanshift")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("erase", parents=[common, model_opts], help="cumulative occlusion frames for one image")
    s.add_argument("--image", required=True)
    s.add_argument("--selection", required=True)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--mode", choices=("mask", "square"), default="mask")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_erase)

    s = sub.add_parser("evaluate", parents=[common, model_opts, sel_opts], help="erasing curves over a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--method", choices=METHODS + ("all",), default="gradient")
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--select", choices=SELECTION_METHODS + ("all",), default="meanshift")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--mode", choices=("mask", "square"), default="mask")
    s.add_argument("--out-dir", default=None, help="directory for curve, detail and summary files")
    s.add_argument("--out", default=None, help="curve CSV path for a single method/selection pair")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("agreement", parents=[common], help="compare a selection with an annotation mask")
    s.add_argument("--selection", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_agreement)

    s = sub.add_parser("overlay", parents=[common], help="blend a heatmap over its image")
    s.add_argument("--image", required=True)
    s.add_argument("--heatmap", required=True)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_overlay)

    s = sub.add_parser("render", parents=[common], help="colour a heatmap PGM as PNG")
    s.add_argument("--heatmap", required=True)
    s.add_argument("--palette", choices=("grayscale", "diverging"), default="diverging")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("manifest", parents=[common], help="build a manifest from BreakHis-named files")
    s.add_argument("--dir", required=True)
    s.add_argument("--pattern", default="*.png")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_manifest)

    s = sub.add_parser("synth", parents=[common], help="write a planted-signal demo dataset")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--images", type=int, default=10)
    s.set_defaults(func=cmd_synth)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is not None:
            _threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RelevanceLensError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
