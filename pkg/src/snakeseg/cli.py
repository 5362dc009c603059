"""Command line interface: ``snakeseg <command> [flags]``.

Exit codes: 0 on success, 2 on input/parse errors (1 is reserved for
quality gates). Report-producing commands write key=value text to stdout,
tab-separated records to --out, and matplotlib figures next to --out
unless --no-figures is given.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import localization, metrics, pipeline, volume_io
from .errors import ParameterError, ParseError, SnakesegError
from .morphsnakes import GacParams

DEFAULTS = {
    "window": (-200.0, 300.0),
    "conf": 0.25,
    "iou": 0.5,
    "sigma": 2.0,
    "alpha": 100.0,
    "balloon": 1,
    "theta": 0.3,
    "mu": 1,
    "iters": 60,
    "pad": 1.2,
    "merge_classes": False,
    "postprocess": False,
    "fallback_default_crop": False,
}


def _parse_window(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ParseError(f"window must be 'LO,HI', got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise ParseError(f"window must be two numbers, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"expected a boolean, got {text!r}")


_CONFIG_PARSERS = {
    "window": _parse_window,
    "conf": float,
    "iou": float,
    "sigma": float,
    "alpha": float,
    "theta": float,
    "pad": float,
    "balloon": int,
    "mu": int,
    "iters": int,
    "merge_classes": _parse_bool,
    "postprocess": _parse_bool,
    "fallback_default_crop": _parse_bool,
}


def _load_config(path) -> dict:
    """line-oriented key=value text; '#' starts a comment line."""
    values = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError("expected key=value", line=ln)
        key, _, text = stripped.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_PARSERS:
            raise ParseError(f"unknown config key {key!r}", line=ln)
        try:
            values[key] = _CONFIG_PARSERS[key](text.strip())
        except ValueError:
            raise ParseError(f"bad value for {key!r}: {text.strip()!r}", line=ln) from None
    return values


def _resolve(args, key: str):
    """Explicit flag > config file > built-in default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    config = getattr(args, "_config", {})
    if key in config:
        return config[key]
    return DEFAULTS[key]


def _attach_config(args) -> None:
    args._config = _load_config(args.config) if getattr(args, "config", None) else {}


def _read_volume(path):
    volume, header = volume_io.read_nifti(Path(path).read_bytes())
    return volume, header


def _require_ct(volume, what: str) -> volume_io.CtVolume:
    if isinstance(volume, volume_io.MaskVolume):
        raise ParameterError(f"{what} expects a CT volume, got a uint8 label mask")
    return volume


def cmd_info(args) -> int:
    volume, header = _read_volume(args.path)
    print(f"dim={volume.nx}x{volume.ny}x{volume.nz}")
    print("spacing=" + ",".join(repr(s) for s in volume.spacing))
    print(f"datatype={volume_io.DTYPE_NAMES[header.datatype]}")
    if isinstance(volume, volume_io.MaskVolume):
        labels, counts = np.unique(volume.labels, return_counts=True)
        for value, count in zip(labels, counts):
            print(f"label[{int(value)}]={int(count)}")
    else:
        print(f"range={float(volume.data.min())!r},{float(volume.data.max())!r}")
    return 0


def cmd_export(args) -> int:
    _attach_config(args)
    if args.out is None and args.labels_out is None:
        raise ParameterError("export needs --out (PGM) and/or --labels-out (boxes)")
    volume, _ = _read_volume(args.path)
    if args.out is not None:
        ct = _require_ct(volume, "PGM export")
        image = volume_io.export_slice(ct, args.z, _resolve(args, "window"))
        Path(args.out).write_bytes(volume_io.pgm_bytes(image))
        print(f"wrote {args.out}")
    if args.labels_out is not None:
        mask = volume_io.as_mask(volume)
        boxes = volume_io.mask_to_labels(mask, args.z,
                                         merge_classes=_resolve(args, "merge_classes"))
        Path(args.labels_out).write_text(volume_io.serialize_labels(boxes))
        print(f"wrote {args.labels_out} ({len(boxes)} boxes)")
    return 0


def cmd_probmap(args) -> int:
    masks = [volume_io.as_mask(_read_volume(p)[0]) for p in args.masks]
    pm = localization.build_probmap(masks, per_volume=args.any_slice)
    out = Path(args.out)
    flat = volume_io.CtVolume(pm.p[np.newaxis, :, :], (1.0, 1.0, 1.0))
    out.write_bytes(volume_io.write_nifti(flat, 16))
    print(f"n_slices_counted={pm.n_slices_counted}")
    print(f"p_max={float(pm.p.max())!r}")
    extents = localization.probmap_extents(pm)
    if extents is None:
        print("extents=empty")
    else:
        print("extents=" + ",".join(str(v) for v in extents))
    if not args.no_figures:
        from . import plots

        plots.save_probmap(pm, out.with_suffix(".png"))
    return 0


def cmd_stats(args) -> int:
    volume = _require_ct(_read_volume(args.volume)[0], "stats")
    mask = volume_io.as_mask(_read_volume(args.mask)[0])
    mean, std, fraction = localization.hu_statistics(volume, mask)
    text = f"mean_hu={mean!r}\nstd_hu={std!r}\norgan_fraction={fraction!r}\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        if not args.no_figures:
            from . import plots

            values = volume.data[mask.binarized().astype(bool)]
            plots.save_hu_histogram(values, mean, std, out.with_suffix(".png"))
    return 0


def cmd_segment(args) -> int:
    _attach_config(args)
    volume = _require_ct(_read_volume(args.volume)[0], "segment")
    conf = _resolve(args, "conf")
    params = pipeline.PipelineParams(
        gac=GacParams(
            iterations=_resolve(args, "iters"),
            smoothing=_resolve(args, "mu"),
            balloon=_resolve(args, "balloon"),
            threshold=_resolve(args, "theta"),
        ),
        sigma=_resolve(args, "sigma"),
        alpha=_resolve(args, "alpha"),
        pad=_resolve(args, "pad"),
        confidence=conf,
        window=_resolve(args, "window"),
        postprocess=_resolve(args, "postprocess"),
        fallback_default_crop=_resolve(args, "fallback_default_crop"),
    )
    dets = pipeline.load_detections(args.detections, volume.nx, volume.ny, volume.nz,
                                    min_conf=conf)

    def on_slice(z, n, seconds):
        print(f"slice {z}: {n} detections, {seconds:.3f} s", file=sys.stderr)

    mask = pipeline.segment_volume(volume, dets, params, on_slice=on_slice)
    Path(args.out).write_bytes(volume_io.write_nifti(mask, 2))
    print(f"wrote {args.out}")
    return 0


def cmd_postprocess(args) -> int:
    mask = volume_io.as_mask(_read_volume(args.path)[0])
    cleaned = pipeline.postprocess(mask)
    datatype = 2 if cleaned.labels.max() <= 255 else 4
    Path(args.out).write_bytes(volume_io.write_nifti(cleaned, datatype))
    print(f"wrote {args.out}")
    return 0


def _pair_paths(a, b, pattern: str) -> list[tuple[str, Path, Path]]:
    pa, pb = Path(a), Path(b)
    if pa.is_dir() != pb.is_dir():
        raise ParameterError("pred and truth must both be files or both be directories")
    if not pa.is_dir():
        return [(pa.stem, pa, pb)]
    fa = {f.name: f for f in pa.glob(pattern)}
    fb = {f.name: f for f in pb.glob(pattern)}
    unpaired = sorted(set(fa) ^ set(fb))
    if unpaired:
        raise ParameterError("unpaired files: " + ", ".join(unpaired))
    if not fa:
        raise ParameterError(f"no {pattern} files found")
    return [(Path(name).stem, fa[name], fb[name]) for name in sorted(fa)]


def cmd_eval_seg(args) -> int:
    values, names = [], []
    for name, pred_path, truth_path in _pair_paths(args.pred, args.truth, "*.nii"):
        pred, _ = _read_volume(pred_path)
        truth, _ = _read_volume(truth_path)
        pred_grid = pred.labels if isinstance(pred, volume_io.MaskVolume) else pred.data
        truth_grid = truth.labels if isinstance(truth, volume_io.MaskVolume) else truth.data
        try:
            values.append(metrics.dice(pred_grid, truth_grid))
        except ParameterError as exc:
            raise ParameterError(f"case {name}: {exc}") from None
        names.append(name)
    rep = metrics.report(values, names)
    print(rep.to_kv(), end="")
    if args.out:
        out = Path(args.out)
        out.write_text(rep.to_records())
        out.with_suffix(".kv").write_text(rep.to_kv())
        if not args.no_figures:
            from . import plots

            plots.save_dice_cases(rep, out.with_suffix(".png"))
    return 0


def cmd_eval_det(args) -> int:
    _attach_config(args)
    iou_thresh = _resolve(args, "iou")
    conf = _resolve(args, "conf")
    gts: dict[int, dict[str, list]] = {}
    preds: dict[int, list[metrics.RankedPrediction]] = {}
    for name, pred_path, truth_path in _pair_paths(args.pred, args.truth, "*.txt"):
        try:
            truth_boxes = volume_io.parse_labels(truth_path.read_text())
        except ParseError as exc:
            raise ParseError(f"{truth_path.name}: {exc}") from None
        for label in truth_boxes:
            if label.w <= 0 or label.h <= 0:
                raise ParseError(f"{truth_path.name}: degenerate ground-truth box")
            gts.setdefault(label.class_id, {}).setdefault(name, []).append(label.box_norm)
        try:
            # frame (1, 1): AP only needs box ratios, so normalized units suffice
            detections = volume_io.parse_detections(pred_path.read_text(), 1, 1, conf)
        except ParseError as exc:
            raise ParseError(f"{pred_path.name}: {exc}") from None
        for det in detections:
            if det.w <= 0 or det.h <= 0:
                raise ParseError(f"{pred_path.name}: degenerate detection box")
            preds.setdefault(det.class_id, []).append(
                metrics.RankedPrediction(det.box_norm, det.confidence, name)
            )

    classes = sorted(gts)
    if not classes:
        raise ParameterError("no ground-truth boxes found")
    curves = {c: metrics.pr_curve(preds.get(c, []), gts[c], iou_thresh) for c in classes}
    aps = {c: curves[c].average_precision() for c in classes}
    rep = metrics.report([aps[c] for c in classes], [f"class{c}" for c in classes])

    tp = fp = fn = 0
    matched_ious = []
    for c in classes:
        results = metrics.match_predictions(preds.get(c, []), gts[c], iou_thresh)
        tp_c = sum(1 for _, is_tp, _ in results if is_tp)
        tp += tp_c
        fp += len(results) - tp_c
        fn += sum(len(b) for b in gts[c].values()) - tp_c
        matched_ious += [v for _, is_tp, v in results if is_tp]
    counts = metrics.ConfusionCounts(tp, fp, fn)
    ppv = metrics.precision(counts)
    tpr = metrics.recall(counts)
    mean_iou = float(np.mean(matched_ious)) if matched_ious else 0.0

    kv_lines = [f"classes={len(classes)}"]
    kv_lines += [f"ap[{c}]={aps[c]!r}" for c in classes]
    kv_lines += [f"map={rep.mean!r}", f"ppv={ppv!r}", f"tpr={tpr!r}",
                 f"mean_iou_tp={mean_iou!r}"]
    kv_text = "".join(line + "\n" for line in kv_lines)
    print(kv_text, end="")
    if args.out:
        out = Path(args.out)
        extra = f"ppv\t{ppv!r}\ntpr\t{tpr!r}\nmean_iou_tp\t{mean_iou!r}\n"
        out.write_text(rep.to_records() + extra)
        out.with_suffix(".kv").write_text(kv_text)
        if not args.no_figures:
            from . import plots

            plots.save_pr_curves(curves, out.with_suffix(".png"))
    return 0


def _window_flag(text: str):
    try:
        return _parse_window(text)
    except ParseError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_config_flag(sub) -> None:
    sub.add_argument("--config", default=None, metavar="PATH",
                     help="key=value config file (flags given explicitly win)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snakeseg",
        description="Organ segmentation in CT volumes with morphological active "
                    "contours, plus detection/segmentation evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("info", help="summarize a .nii header and contents")
    q.add_argument("path")
    q.set_defaults(func=cmd_info)

    q = sub.add_parser("export", help="export one slice as PGM and/or label boxes")
    q.add_argument("path")
    q.add_argument("--z", type=int, required=True, help="slice index")
    q.add_argument("--window", type=_window_flag, default=None, metavar="LO,HI",
                   help="HU window (default -200,300); use --window=-200,300")
    q.add_argument("--out", default=None, help="PGM output path")
    q.add_argument("--labels-out", default=None, help="label boxes output path")
    q.add_argument("--merge-classes", dest="merge_classes",
                   action="store_const", const=True, default=None,
                   help="merge all labels into one class before boxing")
    _add_config_flag(q)
    q.set_defaults(func=cmd_export)

    q = sub.add_parser("probmap", help="accumulate masks into an occupancy frequency map")
    q.add_argument("masks", nargs="+")
    q.add_argument("--out", required=True, help="float32 .nii output")
    q.add_argument("--any-slice", dest="any_slice", action="store_true",
                   help="count volumes touching a pixel instead of slices")
    q.add_argument("--no-figures", dest="no_figures", action="store_true")
    q.set_defaults(func=cmd_probmap)

    q = sub.add_parser("stats", help="HU statistics of the organ under a mask")
    q.add_argument("volume")
    q.add_argument("mask")
    q.add_argument("--out", default=None, help="key=value output path")
    q.add_argument("--no-figures", dest="no_figures", action="store_true")
    q.set_defaults(func=cmd_stats)

    q = sub.add_parser("segment", help="segment a volume from detection boxes")
    q.add_argument("volume")
    q.add_argument("detections",
                   help="z-prefixed detections file, or a directory of per-slice files")
    q.add_argument("--out", required=True, help=".nii mask output")
    q.add_argument("--window", type=_window_flag, default=None, metavar="LO,HI")
    q.add_argument("--conf", type=float, default=None, help="confidence gate (strict >)")
    q.add_argument("--sigma", type=float, default=None, help="edge indicator smoothing")
    q.add_argument("--alpha", type=float, default=None, help="edge indicator steepness")
    q.add_argument("--balloon", type=int, choices=(-1, 0, 1), default=None)
    q.add_argument("--theta", type=float, default=None, help="balloon gate on g")
    q.add_argument("--mu", type=int, default=None, help="smoothing passes per iteration")
    q.add_argument("--iters", type=int, default=None, help="contour iterations")
    q.add_argument("--pad", type=float, default=None, help="crop padding factor")
    q.add_argument("--postprocess", action="store_const", const=True, default=None,
                   help="apply the slice-triplet vote to the stacked mask")
    q.add_argument("--fallback-default-crop", dest="fallback_default_crop",
                   action="store_const", const=True, default=None,
                   help="segment undetected slices from the fixed default crop")
    _add_config_flag(q)
    q.set_defaults(func=cmd_segment)

    q = sub.add_parser("postprocess", help="slice-triplet vote over an existing mask")
    q.add_argument("path")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_postprocess)

    q = sub.add_parser("eval-seg", help="Dice of predicted vs ground-truth masks")
    q.add_argument("pred", help=".nii file or directory")
    q.add_argument("truth", help=".nii file or directory")
    q.add_argument("--out", default=None, help="records output path (TSV)")
    q.add_argument("--no-figures", dest="no_figures", action="store_true")
    q.set_defaults(func=cmd_eval_seg)

    q = sub.add_parser("eval-det", help="AP/mAP of detections vs ground-truth boxes")
    q.add_argument("pred", help="detections .txt file or directory")
    q.add_argument("truth", help="labels .txt file or directory")
    q.add_argument("--iou", type=float, default=None, help="match threshold")
    q.add_argument("--conf", type=float, default=None, help="confidence gate (strict >)")
    q.add_argument("--out", default=None, help="records output path (TSV)")
    q.add_argument("--no-figures", dest="no_figures", action="store_true")
    _add_config_flag(q)
    q.set_defaults(func=cmd_eval_det)

    return parser


def _origin_module(exc: BaseException) -> str:
    """Deepest package module on the traceback, for error qualification."""
    name = "snakeseg"
    tb = exc.__traceback__
    while tb is not None:
        module = tb.tb_frame.f_globals.get("__name__", "")
        if module.startswith("snakeseg.") and not module.endswith(".cli"):
            name = module.rsplit(".", 1)[-1]
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SnakesegError as exc:
        print(f"{_origin_module(exc)}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cli: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
