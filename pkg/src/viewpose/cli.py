"""Command-line entry point: ``viewpose <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .data.manifest import load_manifest, write_manifest
from .data.synthetic import generate_synthetic
from .downstream import (
    evaluate_head,
    load_head,
    predict_classes,
    predict_scores,
    samples_from_dataset,
    train_downstream,
)
from .evaluate import (
    EvalReport,
    accuracy,
    cross_view_invariance,
    equivariance_residual,
    spearman_rank_correlation,
)
from .model import load_checkpoint
from .seeding import enable_determinism, numpy_stream
from .trainer import build_model, sweep_latent_size, train

log = logging.getLogger("viewpose")


class CommandError(RuntimeError):
    pass


def _prepare_out(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CommandError(f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> dict:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(("seed", args.seed))
    for attr, key in (
        ("views", None), ("epochs", "pretext.epochs"), ("loss_preset", "pretext.loss_preset"),
        ("mode", "downstream.mode"), ("protocol", "eval.protocol"), ("sizes", "sweep.sizes"),
        ("folds", "sweep.folds"),
    ):
        value = getattr(args, attr, None)
        if value is None:
            continue
        if attr == "views":
            if not 2 <= value <= len(C.DEFAULT_AZIMUTHS):
                raise CommandError(f"--views must be between 2 and {len(C.DEFAULT_AZIMUTHS)}")
            overrides.append(("data.azimuths", list(C.DEFAULT_AZIMUTHS[:value])))
        elif attr == "protocol":
            overrides.append((key, value.upper()))
        elif attr == "sizes":
            overrides.append((key, [int(s) for s in value.split(",") if s]))
        else:
            overrides.append((key, value))
    if getattr(args, "diagnostics", False):
        overrides.append(("eval.diagnostics", True))
    return C.load_config(args.config, overrides)


# commands -----------------------------------------------------------------

def cmd_generate(cfg: dict, out, force: bool = False) -> Path:
    spec = C.scene_spec(cfg)
    out = _prepare_out(out, force)
    ds = generate_synthetic(spec, int(cfg["data"]["n_sequences"]), int(cfg["data"]["frames_per_sequence"]))
    write_manifest(ds, out)
    C.save_config(cfg, out / "config.yaml")
    return out


def cmd_train_pretext(cfg: dict, dataset, out, force: bool = False, resume=None) -> Path:
    ds = load_manifest(dataset)
    views = cfg["pretext"].get("views")
    if views is not None:
        _check_views(ds, views)
        ds = ds.select_views(views)
    out = Path(out) if resume else _prepare_out(out, force)
    C.save_config(cfg, out / "config.yaml")
    pcfg = C.pretext_config(cfg)
    if resume is not None:
        return train(ds, pcfg, out_dir=out, resume_from=resume)
    model = build_model(C.model_config(cfg, ds.resolution), pcfg.seed)
    return train(ds, pcfg, out_dir=out, model=model)


def _check_views(ds, views) -> None:
    bad = [v for v in views if not 0 <= int(v) < ds.views_per_scene]
    if bad:
        raise CommandError(f"view indices {bad} out of range for a {ds.views_per_scene}-view dataset")


def _downstream_split(cfg: dict, ds):
    d = cfg["downstream"]
    protocol = cfg["eval"]["protocol"].upper()
    _check_views(ds, list(d["train_views"]) + (list(d["test_views"]) if protocol == "CV" else []))
    if protocol == "CV":
        train_s = samples_from_dataset(ds, views=d["train_views"])
        test_s = samples_from_dataset(ds, views=d["test_views"])
    elif protocol == "CS":
        held = set(d["test_subjects"])
        train_subjects = {s.subject_id for s in ds.sequences} - held
        views = d["train_views"]
        train_s = samples_from_dataset(ds, views=views, subjects=train_subjects)
        test_s = samples_from_dataset(ds, views=views, subjects=held)
    else:
        raise CommandError(f"unknown protocol {protocol!r}")
    if not train_s or not test_s:
        raise CommandError(f"{protocol} split leaves an empty train or test set")
    return protocol, train_s, test_s


def cmd_train_downstream(cfg: dict, dataset, out, checkpoint=None, force: bool = False) -> Path:
    hcfg = C.head_config(cfg)
    if hcfg.mode != "scratch" and checkpoint is None:
        raise CommandError(f"mode {hcfg.mode!r} requires --checkpoint")
    ds = load_manifest(dataset)
    out = _prepare_out(out, force)
    C.save_config(cfg, out / "config.yaml")
    protocol, train_s, test_s = _downstream_split(cfg, ds)
    metric = "accuracy" if hcfg.task == "classify" else "src"

    def on_epoch(epoch, record):
        value = record.get(f"val_{metric}", float("nan"))
        EvalReport(metric=metric, value=value, n_samples=len(test_s), protocol=protocol,
                   extra={"epoch": epoch, **record}).save(out / "reports" / f"epoch_{epoch:03d}.json")

    train_downstream(train_s, hcfg, encoder_checkpoint=checkpoint,
                     model_cfg=C.model_config(cfg, ds.resolution), val_samples=test_s,
                     out_dir=out, on_epoch=on_epoch)
    return out / "head.pt"


def quality_report(head, samples, protocol: str, action_names) -> EvalReport:
    scores = predict_scores(head, samples)
    labels = np.asarray([s.label for s in samples])
    breakdown = {}
    per_action = []
    for cls in sorted({s.motion_class for s in samples if s.motion_class is not None}):
        mask = np.asarray([s.motion_class == cls for s in samples])
        name = action_names[cls] if cls < len(action_names) else str(cls)
        try:
            src = spearman_rank_correlation(scores[mask], labels[mask])
        except ValueError:
            src = float("nan")
        breakdown[name] = src
        per_action.append(src)
    breakdown["Average"] = float(np.nanmean(per_action)) if per_action else float("nan")
    return EvalReport(metric="src", value=spearman_rank_correlation(scores, labels),
                      n_samples=len(samples), protocol=protocol, breakdown=breakdown,
                      extra={"layout": [*breakdown]})


def classification_report(head, samples, protocol: str, seed: int) -> EvalReport:
    preds = predict_classes(head, samples, seed)
    labels = np.asarray([s.label for s in samples])
    per_class = {str(c): accuracy(preds[labels == c], labels[labels == c]) for c in sorted(set(labels.tolist()))}
    return EvalReport(metric="accuracy", value=accuracy(preds, labels), n_samples=len(samples),
                      protocol=protocol, breakdown=per_class)


def cmd_eval(cfg: dict, dataset, head_path, out, checkpoint=None, force: bool = False) -> Path:
    ds = load_manifest(dataset)
    out = _prepare_out(out, force)
    C.save_config(cfg, out / "config.yaml")
    head, _ = load_head(head_path)
    protocol, _, test_s = _downstream_split(cfg, ds)
    if head.cfg.task == "classify":
        report = classification_report(head, test_s, protocol, int(cfg["seed"]))
    else:
        report = quality_report(head, test_s, protocol, cfg["eval"]["action_names"])
    if cfg["eval"]["diagnostics"]:
        if checkpoint is None:
            raise CommandError("--diagnostics requires --checkpoint")
        report.extra["diagnostics"] = diagnostics(cfg, ds, checkpoint)
    report.save(out / "report.json")
    return out / "report.json"


def diagnostics(cfg: dict, ds, checkpoint, baseline: bool = False) -> dict:
    model, _ = load_checkpoint(checkpoint)
    res = {
        "cross_view_invariance": cross_view_invariance(model.pose_encoder, ds),
        "equivariance_residual": equivariance_residual(model, ds, rng=numpy_stream(cfg["seed"], "shifts")),
    }
    if baseline:
        fresh = build_model(model.cfg, int(cfg["seed"]))
        res["untrained_cross_view_invariance"] = cross_view_invariance(fresh.pose_encoder, ds)
        res["untrained_equivariance_residual"] = equivariance_residual(
            fresh, ds, rng=numpy_stream(cfg["seed"], "shifts"))
    return res


def cmd_diagnose(cfg: dict, dataset, checkpoint, out, force: bool = False) -> Path:
    ds = load_manifest(dataset)
    out = _prepare_out(out, force)
    C.save_config(cfg, out / "config.yaml")
    path = out / "diagnostics.json"
    path.write_text(json.dumps(diagnostics(cfg, ds, checkpoint, baseline=True), indent=2, sort_keys=True))
    return path


def cmd_sweep(cfg: dict, dataset, out, force: bool = False) -> Path:
    ds = load_manifest(dataset)
    out = _prepare_out(out, force)
    C.save_config(cfg, out / "config.yaml")
    s = cfg["sweep"]
    pcfg = C.pretext_config(cfg)
    pcfg.epochs = int(s["epochs"])
    report = sweep_latent_size(ds, s["sizes"], int(s["folds"]), pcfg,
                               C.model_config(cfg, ds.resolution), out / "runs")
    (out / "sweep.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    (out / "sweep.md").write_text(report.table() + "\n")
    return out / "sweep.json"


# argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewpose", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True)
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset directory or manifest.json")

    p = sub.add_parser("generate", help="render the synthetic multi-view dataset")
    common(p, dataset=False)
    p.add_argument("--views", type=int)

    p = sub.add_parser("train-pretext", help="unsupervised auto-encoder training")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--loss-preset", choices=["full", "rec-only", "equiv", "invar"])
    p.add_argument("--resume", help="epoch checkpoint to continue from (same --out)")

    p = sub.add_parser("train-downstream", help="train a sequence head")
    common(p)
    p.add_argument("--checkpoint", help="pretext checkpoint holding the pose encoder")
    p.add_argument("--mode", choices=["frozen", "fine-tune", "scratch"])
    p.add_argument("--protocol", choices=["cv", "cs", "CV", "CS"])

    p = sub.add_parser("eval", help="evaluate a trained head")
    common(p)
    p.add_argument("--head", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--protocol", choices=["cv", "cs", "CV", "CS"])
    p.add_argument("--diagnostics", action="store_true")

    p = sub.add_parser("sweep", help="cross-validated latent-size sweep")
    common(p)
    p.add_argument("--sizes", help="comma-separated N values")
    p.add_argument("--folds", type=int)

    p = sub.add_parser("diagnose", help="invariance and equivariance diagnostics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    enable_determinism()
    try:
        cfg = _resolve(args)
        if args.command == "generate":
            result = cmd_generate(cfg, args.out, args.force)
        elif args.command == "train-pretext":
            result = cmd_train_pretext(cfg, args.dataset, args.out, args.force, args.resume)
        elif args.command == "train-downstream":
            result = cmd_train_downstream(cfg, args.dataset, args.out, args.checkpoint, args.force)
        elif args.command == "eval":
            result = cmd_eval(cfg, args.dataset, args.head, args.out, args.checkpoint, args.force)
        elif args.command == "sweep":
            result = cmd_sweep(cfg, args.dataset, args.out, args.force)
        else:
            result = cmd_diagnose(cfg, args.dataset, args.checkpoint, args.out, args.force)
    except Exception as exc:  # reported as a structured message
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        if args.verbose:
            raise
        return 1
    print(json.dumps({"command": args.command, "result": str(result)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
