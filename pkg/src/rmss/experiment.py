"""Label-efficiency experiment: scratch vs pretrained init across fractions and seeds."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import ClusterParams
from .dpr import DprError, RansacParams, segment_dpr
from .evaluation import IoUAccumulator, gt_mask
from .nn.model import EncoderConfig
from .synth import SceneConfig, SequenceDataset, generate
from .train import (ABLATIONS, FinetuneConfig, PretrainConfig, build_pair_cache, evaluate_params,
                    finetune, prepare_inputs, pretrain)

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("init", "ablation", "fraction", "seed", "n_labeled", "iou_moving", "iou_static",
                  "iou_mean")


def benchmark_scene() -> SceneConfig:
    """50 sequences of 50 frames: 2000 train, 200 validation and 300 test scans."""
    return SceneConfig(n_sequences=50, frames_per_sequence=50, val_sequences=4, test_sequences=6,
                       seed=7)


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=benchmark_scene)
    pretrain: PretrainConfig = field(default_factory=lambda: PretrainConfig(
        epochs=30, batch_size=32, milestones=(18, 24)))
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    fractions: tuple = (0.01, 0.1)
    seeds: tuple = (0, 1, 2)
    ablations: tuple = ABLATIONS
    include_scratch: bool = True
    include_baseline: bool = True

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.ablations = tuple(self.ablations)
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ValueError(f"unknown ablation {a!r}")


@dataclass
class ExperimentReport:
    rows: list
    pretrain_history: dict
    elapsed: float

    def medians(self) -> dict:
        """(init, ablation, fraction) -> median of each IoU column over seeds."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r["init"], r["ablation"], r["fraction"]), []).append(r)
        return {k: {c: float(np.median([r[c] for r in v])) for c in ("iou_moving", "iou_static", "iou_mean")}
                for k, v in groups.items()}

    def median_moving(self, init: str, ablation: str, fraction: float) -> float:
        return self.medians()[(init, ablation, fraction)]["iou_moving"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({c: (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in REPORT_COLUMNS})
        return buf.getvalue()

    def to_text(self) -> str:
        head = ("init", "ablation", "fraction", "seeds", "moving", "static", "mean")
        counts = {}
        for r in self.rows:
            key = (r["init"], r["ablation"], r["fraction"])
            counts[key] = counts.get(key, 0) + 1
        body = [(i, a, f"{f:g}", str(counts[(i, a, f)]), f"{m['iou_moving']:.4f}",
                 f"{m['iou_static']:.4f}", f"{m['iou_mean']:.4f}")
                for (i, a, f), m in self.medians().items()]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*row) for row in body]
        return "\n".join(lines) + "\n"


def dpr_baseline(scans, ransac: RansacParams) -> tuple:
    """IoU of the training-free DPR predictor."""
    acc = IoUAccumulator()
    for scan in scans:
        try:
            pred = segment_dpr(scan, ransac)
        except DprError:
            pred = np.zeros(scan.n_points, bool)
        acc.add(pred, gt_mask(scan))
    return acc.result()


def _row(init, ablation, fraction, seed, n_labeled, metrics) -> dict:
    m, s, mean = metrics
    return {"init": init, "ablation": ablation, "fraction": fraction, "seed": seed,
            "n_labeled": n_labeled, "iou_moving": m, "iou_static": s, "iou_mean": mean}


def run_experiment(cfg: ExperimentConfig, dataset: SequenceDataset | None = None) -> ExperimentReport:
    t0 = time.perf_counter()
    dataset = generate(cfg.scene) if dataset is None else dataset
    train_ds = dataset.split("train")
    train, val, test = train_ds.scans(), dataset.split("val").scans(), dataset.split("test").scans()
    if not test:
        raise ValueError("experiment needs a non-empty test split")
    k = cfg.encoder.k_neighbors
    val_inputs = prepare_inputs(val, k)
    test_inputs = prepare_inputs(test, k)

    encoders, histories = {}, {}
    if cfg.ablations:
        caches = build_pair_cache(train_ds, cfg.ablations, cfg.pretrain.pair_mode, cfg.cluster,
                                  cfg.ransac, cfg.pretrain.seed)
        keys = [(s, f) for s, (_, seq) in enumerate(train_ds.sequences) for f in range(len(seq))]
        inputs = dict(zip(keys, prepare_inputs(train, k)))
        for ablation in cfg.ablations:
            pcfg = replace(cfg.pretrain, ablation=ablation)
            res = pretrain(train_ds, pcfg, cfg.encoder, cfg.cluster, cfg.ransac,
                           caches[ablation], inputs)
            encoders[ablation] = res.student
            histories[ablation] = res.history
            log.info("pretrained %s: final loss %.4f", ablation, res.history[-1]["loss"])

    inits = ([("scratch", "-", None)] if cfg.include_scratch else []) + \
        [("pretrained", a, encoders[a]) for a in cfg.ablations]
    rows = []
    for fraction in cfg.fractions:
        for seed in cfg.seeds:
            fcfg = replace(cfg.finetune, label_fraction=fraction, seed=seed)
            for init, ablation, enc in inits:
                res = finetune(train, val, fcfg, cfg.encoder, enc, val_inputs)
                metrics = evaluate_params(res.params, cfg.encoder, test, test_inputs)
                rows.append(_row(init, ablation, fraction, seed, res.n_labeled, metrics))
                log.info("%s/%s f=%g seed=%d moving IoU %.4f", init, ablation, fraction, seed, metrics[0])
    if cfg.include_baseline:
        rows.append(_row("dpr_baseline", "-", 0.0, 0, 0, dpr_baseline(test, cfg.ransac)))
    return ExperimentReport(rows, histories, time.perf_counter() - t0)
