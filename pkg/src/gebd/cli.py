"""Command-line interface: ``gebd <command> [--config FILE] [--section.key VALUE ...]``.

Data goes to files or stdout, logs to stderr. Failures exit non-zero with one
``error: <kind>: <message>`` line on stderr and leave no partial outputs.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import data_io, evaluation, inference, network, training
from .fileutil import atomic_write_text, staged_dir

log = logging.getLogger("gebd")


class CLIError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# config plumbing ----------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser, sections=None) -> None:
    p.add_argument("--config", metavar="FILE", help="YAML run configuration")
    group = p.add_argument_group("config overrides (flags win over the file)")
    for key, typ in cfgmod.iter_fields():
        if sections is not None and key.split(".")[0] not in sections:
            continue
        if isinstance(typ, tuple):
            metavar = "A,B,..."
        else:
            metavar = {bool: "BOOL", int: "INT", float: "FLOAT", str: "STR"}[typ]
        group.add_argument(f"--{key}", dest=f"cfg:{key}", metavar=metavar,
                           default=argparse.SUPPRESS, help=f"default: {_default_of(key)}")


def _default_of(key: str):
    cfg = cfgmod.RunConfig()
    if key == "seed":
        return cfg.seed
    sec, sub = key.split(".", 1)
    val = getattr(getattr(cfg, sec), sub)
    return ",".join(map(str, val)) if isinstance(val, list) else (val if val != "" else "''")


def _resolve(args) -> cfgmod.RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    return cfgmod.load(getattr(args, "config", None), overrides)


def _load_inputs(features_dir: str, flow_dir: str, modalities: str) -> dict:
    if not features_dir:
        raise CLIError("input", "no feature directory given")
    seqs = data_io.load_feature_dir(features_dir)
    if modalities == "rgb+flow":
        if not flow_dir:
            raise CLIError("input", "modalities rgb+flow needs a flow feature directory")
        flows = data_io.load_feature_dir(flow_dir)
        missing = sorted(set(seqs) - set(flows))
        if missing:
            raise CLIError("input", f"no flow features for {missing[0]!r} "
                                    f"({len(missing)} videos missing)")
        seqs = {k: data_io.fuse_modalities(v, flows[k]) for k, v in seqs.items()}
    return seqs


# commands -----------------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = _resolve(args)
    out = Path(args.out)
    with staged_dir(out) as tmp:
        for split in ("train", "test"):
            spec = cfg.synth.spec(split, cfg.seed)
            videos = data_io.synth_generate(spec)
            (tmp / split / "features").mkdir(parents=True)
            if spec.flow_C:
                (tmp / split / "flow").mkdir()
            for v in videos:
                data_io.save_features(v.rgb, tmp / split / "features" / f"{v.rgb.video_id}.feat")
                if v.flow is not None:
                    data_io.save_features(v.flow, tmp / split / "flow" / f"{v.flow.video_id}.feat")
            data_io.save_annotations([v.annotation for v in videos], tmp / split / "annotations.txt")
            log.info("%s: %d videos, %d boundaries", split, len(videos),
                     sum(len(v.annotation.boundaries_s) for v in videos))
        atomic_write_text(tmp / "synth.yaml", cfgmod.dump(cfg))
    print(out)


def _validator(cfg: cfgmod.RunConfig):
    d = cfg.data
    if not d.val_features:
        return None
    seqs = _load_inputs(d.val_features, d.val_flow, cfg.meta.modalities)
    anns = data_io.load_annotations(d.val_annotations)

    def validate(model):
        dets = [inference.detect(inference.score_video(model, seqs[a.video_id]),
                                 cfg.post.radius, cfg.post.threshold) for a in anns]
        return evaluation.evaluate(dets, anns, cfg.eval.rel_dis[0]).f1

    return validate


def cmd_train(args) -> None:
    from . import plotting

    cfg = _resolve(args)
    trunk = cfg.trunk()
    tcfg = cfg.train_config()
    seqs = _load_inputs(cfg.data.train_features, cfg.data.train_flow, cfg.meta.modalities)
    for s in seqs.values():
        if s.C != trunk.in_channels:
            raise CLIError("input", f"{s.video_id}: {s.C} feature channels but "
                                    f"model.in_channels={trunk.in_channels}")
    anns = data_io.load_annotations(cfg.data.train_annotations)
    examples = training.make_examples(seqs, anns, tcfg, trunk.K if trunk.category_head else None)
    validate = _validator(cfg)
    out = Path(args.out)
    with staged_dir(out) as tmp:
        (tmp / "checkpoints").mkdir()
        model = network.BoundaryTransformer(trunk, seed=cfg.seed)
        result = training.train(model, examples, tcfg, validate, tmp / "checkpoints")
        extra = {"meta": cfg.to_dict()["meta"], "epochs": tcfg.epochs}
        network.save_checkpoint(model, tmp / "model.ckpt", extra=extra)
        atomic_write_text(tmp / "curve.txt", training.format_curve(result.curve))
        if result.val_f1:
            atomic_write_text(tmp / "val.txt", "".join(
                f"{e} {f!r}\n" for e, f in enumerate(result.val_f1, start=1)))
        atomic_write_text(tmp / "config.yaml", cfgmod.dump(cfg))
        if not args.no_plot:
            plotting.plot_curve(result.curve, tmp / "curve.png", result.val_f1)
    print(out / "model.ckpt")


def cmd_infer(args) -> None:
    cfg = _resolve(args)
    _, _, extra = network.read_checkpoint(args.checkpoint)
    model = network.load_checkpoint(args.checkpoint)
    modalities = extra.get("meta", {}).get("modalities", cfg.meta.modalities)
    features = args.features or cfg.data.test_features
    flow = args.flow or cfg.data.test_flow
    seqs = _load_inputs(features, flow, modalities)
    scores = [inference.score_video(model, seqs[k]) for k in sorted(seqs)]
    inference.write_scores(scores, args.out)
    log.info("scored %d videos (%d encoder windows)", len(scores), model.encoder_calls)


def cmd_ensemble(args) -> None:
    runs = [inference.read_scores(p) for p in args.scores]
    ids = [s.video_id for s in runs[0]]
    maps = [{s.video_id: s for s in run} for run in runs]
    for path, m in zip(args.scores[1:], maps[1:]):
        if set(m) != set(ids):
            diff = sorted(set(m) ^ set(ids))
            raise CLIError("input", f"{path}: video set differs from {args.scores[0]} (e.g. {diff[0]!r})")
    merged = [inference.ensemble([m[v] for m in maps]) for v in ids]
    inference.write_scores(merged, args.out)


def cmd_detect(args) -> None:
    cfg = _resolve(args)
    scores = inference.read_scores(args.scores)
    dets = [inference.detect(s, cfg.post.radius, cfg.post.threshold) for s in scores]
    inference.write_detections(dets, args.out)
    if args.plot_dir:
        from . import plotting

        plot_dir = Path(args.plot_dir)
        plot_dir.mkdir(parents=True, exist_ok=True)
        for s, d in zip(scores, dets):
            plotting.plot_scores(s, d, plot_dir / f"{s.video_id}.png", threshold=cfg.post.threshold)


def cmd_eval(args) -> None:
    cfg = _resolve(args)
    dets = inference.read_detections(args.detections)
    anns = data_io.load_annotations(args.annotations or cfg.data.test_annotations)
    reports = [evaluation.evaluate(dets, anns, r, optimal=args.optimal) for r in cfg.eval.rel_dis]
    text = evaluation.format_reports(reports)
    if args.out:
        out = Path(args.out)
        atomic_write_text(out, text)
        if not args.no_plot:
            from . import plotting

            plotting.plot_report(reports, out.with_suffix(".png"))
    sys.stdout.write(text)


def cmd_members(args) -> None:
    base = _resolve(args)
    out = Path(args.out)
    with staged_dir(out) as tmp:
        for row in range(1, len(cfgmod.ENSEMBLE_ROWS) + 1):
            atomic_write_text(tmp / f"member_{row:02d}.yaml",
                              cfgmod.dump(cfgmod.ensemble_member(row, base)))
    print(out)


# entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gebd", description="Generic event boundary detection pipeline.")
    ap.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic train/test dataset")
    p.add_argument("--out", default="data", help="output directory (default: data)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model; writes checkpoints, loss curve and figure")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--no-plot", action="store_true", help="skip curve.png")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="score every video in a feature directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", help="feature directory (default: data.test_features)")
    p.add_argument("--flow", help="flow feature directory (default: data.test_flow)")
    p.add_argument("--out", required=True, help="score dump to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ensemble", help="average several score dumps")
    p.add_argument("scores", nargs="+", help="score dumps with identical videos")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("detect", help="peak-select boundaries from a score dump")
    p.add_argument("scores")
    p.add_argument("--out", required=True, help="detection dump to write")
    p.add_argument("--plot-dir", help="also render one score figure per video here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="F1 / precision / recall of detections")
    p.add_argument("detections")
    p.add_argument("--annotations", help="annotation file (default: data.test_annotations)")
    p.add_argument("--out", help="also write the report here, plus a .png figure beside it")
    p.add_argument("--optimal", action="store_true", help="maximum matching instead of greedy")
    p.add_argument("--no-plot", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("members", help="write the twelve ensemble-member configs")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_members)
    return ap


_KINDS = [
    (cfgmod.ConfigError, "config", 2),
    (CLIError, None, 1),
    (data_io.FormatError, "format", 1),
    (training.TrainingDiverged, "diverged", 1),
    (FileNotFoundError, "io", 1),
    (OSError, "io", 1),
    (KeyError, "input", 1),
    (ValueError, "input", 1),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        args.func(args)
    except tuple(k for k, _, _ in _KINDS) as e:
        for cls, kind, code in _KINDS:
            if isinstance(e, cls):
                kind = kind or e.kind
                msg = e.args[0] if isinstance(e, KeyError) and e.args else str(e)
                print(f"error: {kind}: {' '.join(str(msg).split())}", file=sys.stderr)
                return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
