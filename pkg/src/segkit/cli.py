"""Command-line entry point for the full pipeline.

Subcommands: synth, train, eval, correct, filter, gradcheck.  Outputs are
files and plain-text reports; every run that writes an output directory
also writes a ``run.json`` provenance record (resolved config, seeds,
version) sufficient to reproduce it bitwise.

Exit codes: 0 ok, 1 check failure, 2 usage/config error, 3 I/O error,
4 training divergence, 5 missing robot under GOOSE weighting.

Config files are flat ``key = value`` text with ``#`` comments.  Model and
training checkpoints embed their configuration as rank-0 ``config.*``
entries, so ``eval`` and ``correct`` need nothing but the checkpoint.
"""

import argparse
import json
import os
import sys
from dataclasses import fields as dc_fields, is_dataclass

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .csec import CsecConfig, csec_correct, init_csec, psnr
from .dataio import (
    SynthSpec,
    load_manifest,
    load_pairs,
    read_pnm,
    save_manifest,
    synth_dataset,
    write_pnm,
)
from .denoise import DenoiseConfig, ErrorScore, filter_dataset, pixel_error_rate
from .errors import (
    BadFieldCountError,
    BadMagicError,
    ConfigInvalidError,
    MaxvalUnsupportedError,
    MissingRobotError,
    SegkitError,
    TrainingDivergedError,
    TruncatedError,
    UnknownSplitError,
)
from .gradcheck import SUITES, TOL, run_suite
from .metrics import GOOSE_WEIGHTS, ConfusionMatrix, class_iou, miou, weighted_miou
from .segnet import Model, ModelConfig, TrainConfig, build_model, predict, train, train_with_denoise
from .tensor import Tensor

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_MISSING_ROBOT = 5

__all__ = ["main", "read_config", "max_threads",
           "save_model_checkpoint", "load_model_checkpoint",
           "save_csec_checkpoint", "load_csec_checkpoint"]


def max_threads() -> int:
    """Worker cap from the SEGKIT_THREADS env var (default 1)."""
    raw = os.environ.get("SEGKIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigInvalidError(f"SEGKIT_THREADS must be an integer, got {raw!r}")


# -- config files ------------------------------------------------------------


def read_config(path) -> dict:
    """Parse a flat ``key = value`` config file into a str -> str dict."""
    cfg = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigInvalidError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _parse_like(text, current):
    """Parse ``text`` with the type of the existing field value ``current``."""
    if isinstance(current, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigInvalidError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        parts = text.replace(",", " ").split()
        return tuple(int(p) for p in parts)
    return text


def apply_config(obj, cfg: dict, used: set):
    """Set matching dataclass fields of obj from string config values."""
    for f in dc_fields(obj):
        if f.name in cfg:
            try:
                setattr(obj, f.name, _parse_like(cfg[f.name], getattr(obj, f.name)))
            except (ValueError, TypeError) as exc:
                raise ConfigInvalidError(f"bad value for {f.name!r}: {exc}")
            used.add(f.name)
    return obj


def _snapshot(obj) -> dict:
    out = {}
    for f in dc_fields(obj):
        v = getattr(obj, f.name)
        if is_dataclass(v):
            v = _snapshot(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def write_run_record(out_dir, command, arg_view: dict, resolved: dict):
    record = {
        "command": command,
        "args": arg_view,
        "config": resolved,
        "version": __version__,
        "threads": max_threads(),
    }
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- checkpoints with embedded configuration ---------------------------------

_MODEL_CFG_FIELDS = ("patch_size", "embed_dim", "n_blocks", "n_heads",
                     "n_classes", "use_csec", "use_rope", "image_size", "seed")
_CSEC_CFG_FIELDS = ("feat_channels", "hidden", "kernel", "residual_eps")


def _pack_config(cfg, names, kind):
    packed = {"config.kind": np.array({"model": 0.0, "csec": 1.0}[kind])}
    for name in names:
        v = getattr(cfg, name)
        packed["config." + name] = np.array(v, dtype=np.float32)
    return packed


def _split_config(loaded: dict):
    cfg_vals, params = {}, {}
    for key, t in loaded.items():
        if key.startswith("config."):
            cfg_vals[key[len("config."):]] = t.data
        else:
            params[key] = t
    return cfg_vals, params


def save_model_checkpoint(path, model: Model):
    blob = dict(model.params)
    blob.update(_pack_config(model.config, _MODEL_CFG_FIELDS, "model"))
    if model.csec_params is not None:
        for k, t in model.csec_params.items():
            blob["csec." + k] = t
        blob.update({"config.csec." + n: np.array(getattr(model.csec_config, n),
                                                  dtype=np.float32)
                     for n in _CSEC_CFG_FIELDS})
    save_checkpoint(path, blob)


def load_model_checkpoint(path) -> Model:
    cfg_vals, params = _split_config(load_checkpoint(path))
    if int(cfg_vals.get("kind", np.array(0.0))) != 0:
        raise ConfigInvalidError(f"{path} is not a model checkpoint")
    cfg = ModelConfig(
        patch_size=int(cfg_vals["patch_size"]),
        embed_dim=int(cfg_vals["embed_dim"]),
        n_blocks=int(cfg_vals["n_blocks"]),
        n_heads=int(cfg_vals["n_heads"]),
        n_classes=int(cfg_vals["n_classes"]),
        use_csec=bool(int(cfg_vals["use_csec"])),
        use_rope=bool(int(cfg_vals["use_rope"])),
        image_size=tuple(int(v) for v in np.atleast_1d(cfg_vals["image_size"])),
        seed=int(cfg_vals["seed"]),
    )
    cfg.validate()
    csec_params = {k[len("csec."):]: t for k, t in params.items() if k.startswith("csec.")}
    params = {k: t for k, t in params.items() if not k.startswith("csec.")}
    csec_cfg = CsecConfig()
    if csec_params:
        csec_cfg = CsecConfig(
            feat_channels=int(cfg_vals["csec.feat_channels"]),
            hidden=int(cfg_vals["csec.hidden"]),
            kernel=int(cfg_vals["csec.kernel"]),
            residual_eps=float(cfg_vals["csec.residual_eps"]),
        )
    return Model(cfg, params, csec_params=csec_params or None, csec_config=csec_cfg)


def save_csec_checkpoint(path, params: dict, config: CsecConfig = CsecConfig()):
    blob = dict(params)
    blob.update(_pack_config(config, _CSEC_CFG_FIELDS, "csec"))
    save_checkpoint(path, blob)


def load_csec_checkpoint(path):
    cfg_vals, params = _split_config(load_checkpoint(path))
    if int(cfg_vals.get("kind", np.array(1.0))) != 1:
        raise ConfigInvalidError(f"{path} is not a color-correction checkpoint")
    cfg = CsecConfig(
        feat_channels=int(cfg_vals["feat_channels"]),
        hidden=int(cfg_vals["hidden"]),
        kernel=int(cfg_vals["kernel"]),
        residual_eps=float(cfg_vals["residual_eps"]),
    )
    return params, cfg


# -- SVG curve emission ------------------------------------------------------

_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def write_curves_svg(path, series: dict, width=480, height=320):
    """Plot named float series as polylines in a minimal standalone SVG."""
    pad = 40
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    drawable = {k: v for k, v in series.items() if len(v) >= 1}
    if drawable:
        lo = min(min(v) for v in drawable.values())
        hi = max(max(v) for v in drawable.values())
        span = (hi - lo) or 1.0
        for ci, (name, vals) in enumerate(sorted(drawable.items())):
            color = _SVG_COLORS[ci % len(_SVG_COLORS)]
            n = len(vals)
            pts = []
            for i, v in enumerate(vals):
                x = pad + (width - 2 * pad) * (i / max(n - 1, 1))
                y = height - pad - (height - 2 * pad) * ((v - lo) / span)
                pts.append(f"{x:.1f},{y:.1f}")
            lines.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}"/>')
            lines.append(f'<text x="{pad + 4}" y="{pad + 14 * (ci + 1)}" '
                         f'fill="{color}" font-size="12">{name}</text>')
        lines.append(f'<text x="{pad}" y="{height - pad + 16}" font-size="10">'
                     f'range [{lo:.4g}, {hi:.4g}]</text>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = read_config(args.spec)
    used = set()
    spec = SynthSpec()
    try:
        apply_config(spec, cfg, used)
        spec.__post_init__()
    except ValueError as exc:
        raise ConfigInvalidError(str(exc))
    unknown = set(cfg) - used
    if unknown:
        raise ConfigInvalidError(f"unknown spec keys: {sorted(unknown)}")
    os.makedirs(args.out, exist_ok=True)
    records, _ = synth_dataset(spec, args.out)
    write_run_record(args.out, "synth", {"spec": args.spec, "out": args.out},
                     _snapshot(spec))
    print(f"wrote {len(records)} samples to {args.out}")
    return EXIT_OK


def _load_split(records, split):
    chosen = [r for r in records if r.split == split]
    return chosen, load_pairs(chosen)


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    used = set()
    mc = apply_config(ModelConfig(), cfg, used)
    tc = apply_config(TrainConfig(), cfg, used)
    dn = apply_config(DenoiseConfig(), cfg, used)
    try:
        dn.__post_init__()
    except ValueError as exc:
        raise ConfigInvalidError(str(exc))
    unknown = set(cfg) - used
    if unknown:
        raise ConfigInvalidError(f"unknown config keys: {sorted(unknown)}")
    mc.use_csec = mc.use_csec or args.use_csec
    mc.validate()

    csec_params, csec_cfg = None, CsecConfig()
    if mc.use_csec:
        if args.csec_checkpoint:
            csec_params, csec_cfg = load_csec_checkpoint(args.csec_checkpoint)
        else:
            csec_params = init_csec(csec_cfg, seed=mc.seed)

    records = load_manifest(args.data)
    train_records, train_pairs = _load_split(records, "train")
    _, val_pairs = _load_split(records, "val")
    os.makedirs(args.out, exist_ok=True)

    if args.denoise:
        tc.denoise = dn
        samples = [(r.sample_id, img, mask)
                   for r, (img, mask) in zip(train_records, train_pairs)]
        model, report, freport = train_with_denoise(
            samples, mc, tc, val_pairs=val_pairs or None, csec_params=csec_params)
        with open(os.path.join(args.out, "filter_report.tsv"), "w", encoding="utf-8") as fh:
            fh.write("# sample_id\terror_rate\tstatus\n")
            dropped = set(freport.dropped_ids)
            for s in freport.scores:
                status = "dropped" if s.sample_id in dropped else "kept"
                fh.write(f"{s.sample_id}\t{s.error_rate:.6f}\t{status}\n")
    else:
        model = build_model(mc, csec_params=csec_params)
        model.csec_config = csec_cfg
        report = train(model, train_pairs, tc, val_pairs=val_pairs or None)

    save_model_checkpoint(os.path.join(args.out, "checkpoint.smk"), model)
    with open(os.path.join(args.out, "metrics.tsv"), "w", encoding="utf-8") as fh:
        fh.write("# epoch\tloss\tval_miou\n")
        for i, loss in enumerate(report.losses):
            vm = f"{report.val_mious[i]:.6f}" if i < len(report.val_mious) else "nan"
            fh.write(f"{i}\t{loss:.6f}\t{vm}\n")
    if args.svg:
        curves = {"loss": report.losses}
        if report.val_mious:
            curves["val_miou"] = report.val_mious
        write_curves_svg(os.path.join(args.out, "curves.svg"), curves)
    resolved = {"model": _snapshot(mc), "train": _snapshot(tc)}
    if args.denoise:
        resolved["denoise"] = _snapshot(dn)
    write_run_record(args.out, "train",
                     {"config": args.config, "data": args.data, "out": args.out,
                      "denoise": args.denoise, "use_csec": args.use_csec},
                     resolved)
    print(f"final loss {report.losses[-1]:.6f}" +
          (f", val mIoU {report.val_mious[-1]:.4f}" if report.val_mious else ""))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model_checkpoint(args.checkpoint)
    records = load_manifest(args.data)
    chosen = [r for r in records if r.split == args.split]
    if not chosen:
        raise ConfigInvalidError(f"manifest has no {args.split!r} samples")
    pairs = load_pairs(chosen)
    k = model.config.n_classes
    overall = ConfusionMatrix(k)
    per_robot = {}
    for r, (img, mask) in zip(chosen, pairs):
        pred = predict(model, img)
        overall.update(pred, mask)
        per_robot.setdefault(r.robot_id, ConfusionMatrix(k)).update(pred, mask)

    ious = [class_iou(overall, c) for c in range(k)]
    robot_miou = {rid: miou(cm) for rid, cm in sorted(per_robot.items())}
    if args.weights == "goose":
        agg = weighted_miou(robot_miou, GOOSE_WEIGHTS)
    else:
        agg = float(np.mean(list(robot_miou.values())))

    print(f"split {args.split}  samples {len(chosen)}")
    print("class IoU:")
    for c, iou in enumerate(ious):
        print(f"  {c:>3}  {'undefined' if iou is None else f'{iou:.4f}'}")
    print("per-robot mIoU:")
    for rid, v in robot_miou.items():
        print(f"  {rid:<10} {v:.4f}")
    print(f"weighted mIoU ({args.weights}): {agg:.4f}")

    report = {
        "split": args.split,
        "samples": len(chosen),
        "class_iou": [None if v is None else float(v) for v in ious],
        "per_robot_miou": {rid: float(v) for rid, v in robot_miou.items()},
        "weighting": args.weights,
        "weighted_miou": float(agg),
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.svg:
        write_curves_svg(os.path.join(args.out, "eval_curves.svg"),
                         {"class_iou": [0.0 if v is None else float(v) for v in ious]})
    write_run_record(args.out, "eval",
                     {"checkpoint": args.checkpoint, "data": args.data,
                      "weights": args.weights, "split": args.split},
                     report)
    return EXIT_OK


def cmd_correct(args) -> int:
    params, cfg = load_csec_checkpoint(args.checkpoint)
    image = read_pnm(getattr(args, "in"))
    if not isinstance(image, Tensor):
        raise ConfigInvalidError("correct expects a P6 color image")
    corrected = csec_correct(image, params, cfg)
    write_pnm(args.out, corrected)
    if args.reference:
        clean = read_pnm(args.reference)
        gain = psnr(corrected, clean) - psnr(image, clean)
        print(f"PSNR improvement: {gain:+.2f} dB", file=sys.stderr)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    write_run_record(out_dir, "correct",
                     {"checkpoint": args.checkpoint, "in": getattr(args, "in"),
                      "out": args.out, "reference": args.reference},
                     _snapshot(cfg))
    return EXIT_OK


def cmd_filter(args) -> int:
    records = load_manifest(args.data)
    train_records = [r for r in records if r.split == "train"]
    if not train_records:
        raise ConfigInvalidError("manifest has no train samples")
    dn = DenoiseConfig(quantile=args.quantile)
    scores = []
    for r in train_records:
        mask = read_pnm(r.mask_path).astype(np.int64)
        pred_path = os.path.join(args.pred, r.sample_id + ".pgm")
        pred = read_pnm(pred_path).astype(np.int64)
        err = pixel_error_rate(pred, mask)
        scores.append(ErrorScore(sample_id=r.sample_id, error_rate=err,
                                 evaluated_pixels=int(mask.size)))
    kept = filter_dataset(scores, dn)
    kept_ids = {s.sample_id for s in kept}
    os.makedirs(args.out, exist_ok=True)
    filtered = [r for r in records if r.split != "train" or r.sample_id in kept_ids]
    save_manifest(os.path.join(args.out, "manifest.tsv"), filtered)
    with open(os.path.join(args.out, "filter_report.tsv"), "w", encoding="utf-8") as fh:
        fh.write("# sample_id\terror_rate\tstatus\n")
        for s in scores:
            status = "kept" if s.sample_id in kept_ids else "dropped"
            fh.write(f"{s.sample_id}\t{s.error_rate:.6f}\t{status}\n")
    write_run_record(args.out, "filter",
                     {"data": args.data, "pred": args.pred, "out": args.out,
                      "quantile": args.quantile},
                     {"quantile": args.quantile, "kept": len(kept_ids),
                      "dropped": len(scores) - len(kept_ids)})
    print(f"kept {len(kept_ids)} of {len(scores)} train samples")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    modules = list(SUITES) if args.module == "all" else [args.module]
    failed = []
    for module in modules:
        results = run_suite(module, trials=args.trials, seed=args.seed)
        for op, err in sorted(results.items()):
            ok = err <= TOL
            print(f"{module:<8} {op:<24} {err:.3e}  {'ok' if ok else 'FAIL'}")
            if not ok:
                failed.append(op)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_run_record(args.out, "gradcheck",
                         {"module": args.module, "trials": args.trials, "seed": args.seed},
                         {"tolerance": TOL, "failed": failed})
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# -- argument parsing and dispatch -------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segkit",
                                     description="Segmentation toolkit pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="key = value spec file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the segmentation model")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--denoise", action="store_true",
                   help="train -> score -> filter -> retrain loop")
    p.add_argument("--use-csec", action="store_true",
                   help="frozen color correction before the model")
    p.add_argument("--csec-checkpoint", default=None,
                   help="trained color-correction checkpoint for --use-csec")
    p.add_argument("--svg", action="store_true", help="emit loss/mIoU curves as SVG")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--weights", choices=("goose", "uniform"), default="goose")
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    p.add_argument("--out", default=".", help="directory for eval_report.json")
    p.add_argument("--svg", action="store_true", help="emit per-class IoU bars as SVG")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("correct", help="color-correct one image")
    p.add_argument("--checkpoint", required=True, help="color-correction checkpoint")
    p.add_argument("--in", required=True, help="input P6 image")
    p.add_argument("--out", required=True, help="output P6 image")
    p.add_argument("--reference", default=None,
                   help="clean image; reports PSNR improvement on stderr")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("filter", help="quantile-filter a manifest by prediction error")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--pred", required=True,
                   help="directory of predicted masks, <sample_id>.pgm")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quantile", type=float, default=0.975)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("gradcheck", help="run finite-difference gradient suites")
    p.add_argument("--module", choices=("all",) + SUITES, default="all")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional directory for run.json")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MissingRobotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ROBOT
    except (BadMagicError, TruncatedError, MaxvalUnsupportedError,
            BadFieldCountError, UnknownSplitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SegkitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
