"""Command-line interface: ``rmss <command> ...``.

Exit codes: 0 success, 2 bad arguments or configuration, 3 invalid data,
4 training aborted. Every output file is written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .cluster import ClusterParams
from .core import RadarScan
from .dpr import DprError, RansacParams, segment_with_profile
from .evaluation import IoUAccumulator, gt_mask
from .experiment import ExperimentConfig, ExperimentReport, run_experiment
from .io import (Checkpoint, DataError, atomic_write, load_checkpoint, read_config_file,
                 read_dataset, read_sequence, save_checkpoint, sequence_to_ndjson, write_dataset)
from .nn.model import EncoderConfig, Network, encoder_layout
from .synth import SceneConfig, generate
from .train import (FinetuneConfig, PretrainConfig, TrainingAborted, finetune, predict_masks,
                    pretrain)

log = logging.getLogger("rmss")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORTED = 0, 2, 3, 4
METRIC_COLUMNS = ("epoch", "loss", "lr", "skip_count", "val_iou_moving", "val_iou_static")
DEFAULT_CONFIG = Path(__file__).with_name("default.cfg")

SCHEMA = {"scene": SceneConfig, "encoder": EncoderConfig, "cluster": ClusterParams,
          "ransac": RansacParams, "pretrain": PretrainConfig, "finetune": FinetuneConfig}
EXPERIMENT_SCHEMA = {**SCHEMA, "experiment": ExperimentConfig}


# ---------------------------------------------------------------- helpers


def _as_dict(obj) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(obj).items()}


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([[_fmt(r.get(c)) for c in header] for r in rows])
    return buf.getvalue()


def _load_sections(path, schema, seed=None, seed_sections=(), defaults=None):
    sections = read_config_file(path, schema, defaults)
    if seed is not None:
        for name in seed_sections:
            sections[name] = replace(sections[name], seed=seed)
    return sections


def _dataset(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    return read_dataset(path)


def _model_checkpoint(params, encoder_cfg: EncoderConfig, extra: dict) -> Checkpoint:
    net = Network(encoder_cfg, params)
    layers = {n: net.layout.view(net.params, n).copy() for n in net.layout.names}
    return Checkpoint(layers, {"kind": "model", "encoder": encoder_cfg.to_dict(), **extra})


def _load_model(path):
    ckpt = load_checkpoint(path)
    if ckpt.config.get("kind") != "model":
        raise DataError(f"{path}: not a fine-tuned model checkpoint")
    try:
        cfg = EncoderConfig(**ckpt.config["encoder"])
        net = Network(cfg)
        params = net.layout.pack(ckpt.layers)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: layers do not match the encoder config ({exc})") from None
    return params, cfg, ckpt


def _load_pretrained(path, branch: str = "student"):
    ckpt = load_checkpoint(path)
    if ckpt.config.get("kind") != "pretrained":
        raise DataError(f"{path}: not a pretraining checkpoint")
    try:
        cfg = EncoderConfig(**ckpt.config["encoder"])
        layout = encoder_layout(cfg).prefixed(branch + ".")
        return layout.pack(ckpt.layers), cfg
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: layers do not match the encoder config ({exc})") from None


def _scan_pairs(data):
    for seq_id, scans in data.sequences:
        for scan in scans:
            yield seq_id, scan


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    scene = _load_sections(args.config, SCHEMA, args.seed, ("scene",))["scene"]
    dataset = generate(scene)
    write_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} sequences ({dataset.n_scans} scans) to {args.out} seed={scene.seed}")
    return EXIT_OK


def cmd_segment_dpr(args) -> int:
    params = RansacParams(threshold=args.threshold, seed=args.seed)
    rows = []
    for seq_id, scan in _scan_pairs(_dataset(args.input)):
        try:
            mask, prof = segment_with_profile(scan, params)
            a, b = prof.a, prof.b
        except DprError as exc:
            log.warning("%s frame %d: %s; all points marked static", seq_id, scan.frame_idx, exc)
            mask, a, b = np.zeros(scan.n_points, bool), None, None
        for i, m in enumerate(mask):
            rows.append({"seq_id": seq_id, "frame_idx": scan.frame_idx, "point": i,
                         "mask": "moving" if m else "static", "profile_a": a, "profile_b": b})
    atomic_write(args.out, _csv_text(("seq_id", "frame_idx", "point", "mask", "profile_a", "profile_b"),
                                     rows))
    n_moving = sum(r["mask"] == "moving" for r in rows)
    print(f"{len(rows)} points, {n_moving} moving (threshold={args.threshold}, seed={args.seed})")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    sec = _load_sections(args.config, SCHEMA, args.seed, ("pretrain", "ransac"))
    pcfg = sec["pretrain"]
    if args.epochs is not None:
        pcfg = replace(pcfg, epochs=args.epochs)
    if args.ablation is not None:
        pcfg = replace(pcfg, ablation=args.ablation)
    train_ds = _dataset(args.data).split("train")
    if train_ds.n_scans < 2:
        raise DataError("pretraining needs at least one consecutive pair of training scans")
    res = pretrain(train_ds, pcfg, sec["encoder"], sec["cluster"], sec["ransac"])
    layout = encoder_layout(res.encoder_config)
    layers = {}
    for branch, flat in (("student", res.student), ("teacher", res.teacher)):
        for n in layout.names:
            layers[f"{branch}.{n}"] = layout.view(flat, n).copy()
    config = {"kind": "pretrained", "encoder": res.encoder_config.to_dict(), "pretrain": pcfg.to_dict(),
              "cluster": _as_dict(sec["cluster"]), "ransac": _as_dict(sec["ransac"])}
    save_checkpoint(args.out, Checkpoint(layers, config))
    if args.metrics:
        atomic_write(args.metrics, _csv_text(METRIC_COLUMNS, res.history))
    last = res.history[-1]
    print(f"pretrained {pcfg.epochs} epochs ({pcfg.ablation}, seed={pcfg.seed}): "
          f"final loss {last['loss']:.6f}, skipped {last['skip_count']} pairs")
    return EXIT_OK


def cmd_finetune(args) -> int:
    sec = _load_sections(args.config, SCHEMA, args.seed, ("finetune",))
    fcfg = replace(sec["finetune"], label_fraction=args.fraction)
    if args.epochs is not None:
        fcfg = replace(fcfg, epochs=args.epochs)
    data = _dataset(args.data)
    enc_cfg, enc_params = sec["encoder"], None
    if not args.scratch:
        enc_params, enc_cfg = _load_pretrained(args.checkpoint)
    try:
        res = finetune(data.split("train").scans(), data.split("val").scans(), fcfg, enc_cfg, enc_params)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    best = dict(zip(("iou_moving", "iou_static", "iou_mean"), res.best_val))
    extra = {"finetune": fcfg.to_dict(), "init": "scratch" if args.scratch else str(args.checkpoint),
             "best_epoch": res.best_epoch, "best_val": best, "n_labeled": res.n_labeled}
    save_checkpoint(args.out, _model_checkpoint(res.params, enc_cfg, extra))
    if args.metrics:
        atomic_write(args.metrics, _csv_text(METRIC_COLUMNS, res.history))
    summary = ", ".join(f"{k}={v:.4f}" for k, v in best.items()) or "no validation split"
    print(f"fine-tuned on {res.n_labeled} scans (fraction={fcfg.label_fraction}, seed={fcfg.seed}); "
          f"best epoch {res.best_epoch}: {summary}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, enc_cfg, _ = _load_model(args.model)
    data = _dataset(args.data)
    scans = data.scans() if args.split == "all" else data.split(args.split).scans()
    if not scans:
        raise DataError(f"split {args.split!r} is empty")
    try:
        masks = predict_masks(params, enc_cfg, scans)
        acc = IoUAccumulator()
        for scan, pred in zip(scans, masks):
            acc.add(pred, gt_mask(scan))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    moving, static, mean = acc.result()
    metrics = {"iou_moving": moving, "iou_static": static, "iou_mean": mean}
    rows = [{"metric": k, "value": v} for k, v in metrics.items()]
    rows += [{"metric": "n_scans", "value": len(scans)},
             {"metric": "n_points", "value": sum(s.n_points for s in scans)}]
    atomic_write(args.out, _csv_text(("metric", "value"), rows))
    if args.plot:
        from .plotting import plot_iou_bars
        plot_iou_bars(metrics, args.plot)
    width = max(len(k) for k in metrics)
    for k, v in metrics.items():
        print(f"{k:<{width}}  {v:.6f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    seq_id, scans = read_sequence(args.input)
    matches = [s for s in scans if s.frame_idx == args.frame]
    if not matches:
        raise DataError(f"{args.input}: no frame {args.frame}")
    scan: RadarScan = matches[0]
    if args.out:
        atomic_write(args.out, sequence_to_ndjson(seq_id, [scan]))
    n_moving = int(np.sum(scan.gt_label == 1))
    n_unlabeled = int(np.sum(scan.gt_label < 0))
    print(f"{seq_id} frame {scan.frame_idx}: {scan.n_points} points, {n_moving} moving, "
          f"{n_unlabeled} unlabeled, ego velocity ({scan.ego_velocity[0]:.3f}, {scan.ego_velocity[1]:.3f})")
    if scan.n_points:
        r = scan.ranges()
        print(f"range {r.min():.2f}..{r.max():.2f} m, |v_comp| max {np.abs(scan.v_comp).max():.3f} m/s")
    return EXIT_OK


def _read_report(path) -> list:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty report")
    return rows


def cmd_export_plot(args) -> int:
    from .plotting import plot_iou_bars, plot_label_efficiency
    rows = _read_report(args.report)
    try:
        if "init" in rows[0]:
            plot_label_efficiency(rows, args.out)
        elif "metric" in rows[0]:
            plot_iou_bars({r["metric"]: r["value"] for r in rows}, args.out)
        else:
            raise DataError(f"{args.report}: unrecognised report columns")
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.report}: malformed report ({exc})") from None
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    base = ExperimentConfig()
    defaults = {name: getattr(base, name) for name in EXPERIMENT_SCHEMA if name != "experiment"}
    defaults["experiment"] = base
    sec = _load_sections(args.config, EXPERIMENT_SCHEMA, defaults=defaults)
    cfg = replace(sec["experiment"], scene=sec["scene"], pretrain=sec["pretrain"],
                  finetune=sec["finetune"], encoder=sec["encoder"], cluster=sec["cluster"],
                  ransac=sec["ransac"])
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    report: ExperimentReport = run_experiment(cfg)
    out = Path(args.out_dir)
    atomic_write(out / "report.csv", report.to_csv())
    atomic_write(out / "report.txt", report.to_text())
    history = [{"ablation": a, **h} for a, hist in report.pretrain_history.items() for h in hist]
    atomic_write(out / "pretrain_metrics.csv",
                 _csv_text(("ablation", "epoch", "loss", "lr", "skip_count"), history))
    from .plotting import plot_label_efficiency
    plot_label_efficiency(report.rows, out / "label_efficiency.svg")
    sys.stdout.write(report.to_text())
    print(f"elapsed {report.elapsed:.1f} s; outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmss", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset directory")
    g.add_argument("--config", default=str(DEFAULT_CONFIG))
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("segment-dpr", help="per-point DPR pseudo-labels as CSV")
    d.add_argument("--in", dest="input", required=True, help="dataset directory or sequence file")
    d.add_argument("--out", required=True)
    d.add_argument("--threshold", type=float, default=RansacParams.threshold)
    d.add_argument("--seed", type=int, default=RansacParams.seed)
    d.set_defaults(func=cmd_segment_dpr)

    t = sub.add_parser("pretrain", help="contrastive pretraining")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=str(DEFAULT_CONFIG))
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="per-epoch CSV")
    t.add_argument("--ablation", choices=("full", "no_dpr", "no_clustering"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="supervised fine-tuning on a labeled fraction")
    f.add_argument("--data", required=True)
    init = f.add_mutually_exclusive_group(required=True)
    init.add_argument("--checkpoint", help="pretraining checkpoint")
    init.add_argument("--scratch", action="store_true")
    f.add_argument("--fraction", type=float, default=1.0)
    f.add_argument("--config", default=str(DEFAULT_CONFIG))
    f.add_argument("--out", required=True, help="model path")
    f.add_argument("--metrics", help="per-epoch CSV")
    f.add_argument("--epochs", type=int)
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("evaluate", help="IoU of a model on a dataset split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    e.add_argument("--out", required=True, help="report CSV")
    e.add_argument("--plot", help="optional IoU bar chart (.svg or .png)")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="summarise one scan and extract it")
    i.add_argument("--in", dest="input", required=True, help="sequence NDJSON file")
    i.add_argument("--frame", type=int, required=True)
    i.add_argument("--out", help="single-scan NDJSON")
    i.set_defaults(func=cmd_inspect)

    x = sub.add_parser("export-plot", help="render a report CSV as a chart")
    x.add_argument("--report", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_plot)

    r = sub.add_parser("experiment", help="label-efficiency experiment with ablations")
    r.add_argument("--config", default=None, help="overrides on top of the benchmark defaults")
    r.add_argument("--out-dir", required=True)
    r.add_argument("--seeds", type=int, nargs="+")
    r.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"rmss: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # configuration errors and out-of-range arguments
        print(f"rmss: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"rmss: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
