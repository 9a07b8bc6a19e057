"""Contrastive pretraining and supervised fine-tuning loops."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import pseudo
from .cluster import ClusterParams, cluster_scan
from .core import RadarScan
from .dpr import DprError, RansacParams, segment_dpr
from .evaluation import IoUAccumulator, gt_mask, label_fraction_split
from .nn.augment import ALL_OPS, apply_transform, draw_transform
from .nn.losses import TverskyParams, focal_tversky_loss
from .nn.model import (EncoderConfig, Network, batch_pooling, encoder_backward, encoder_forward,
                       encoder_layout, init_encoder, init_head, knn_indices)
from .nn.optim import ModelState, adamw_step, ema_update, multistep_lr, sgdw_step
from .synth import SequenceDataset, pair_indices

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_dpr", "no_clustering")


class TrainingAborted(RuntimeError):
    pass


def _tuple_fields(obj) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(obj).items()}


@dataclass
class PretrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.01
    milestones: tuple = (60, 80)
    lr_factor: float = 0.1
    ema_alpha: float = 0.01
    ablation: str = "full"
    pair_mode: str = "consecutive"
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")

    def to_dict(self) -> dict:
        return _tuple_fields(self)


@dataclass
class FinetuneConfig:
    label_fraction: float = 1.0
    epochs: int = 100
    batch_size: int = 128
    small_batch_size: int = 8
    # labeled sets smaller than this use the small batch size
    small_set_threshold: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    milestones: tuple = (60, 80)
    lr_factor: float = 0.1
    augment: bool = True
    freeze_backbone: bool = False
    tversky: TverskyParams = field(default_factory=TverskyParams)
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if isinstance(self.tversky, dict):
            self.tversky = TverskyParams(**self.tversky)
        if not isinstance(self.tversky, TverskyParams):
            raise ValueError("tversky must be a mapping of alpha, beta, gamma, eps")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError("label_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return _tuple_fields(self)


@dataclass
class ScanInputs:
    x: np.ndarray
    neighbours: np.ndarray


def prepare_inputs(scans, k: int) -> list:
    return [ScanInputs(s.features(), knn_indices(s.xyz, k)) for s in scans]


# ---------------------------------------------------------------- pseudo-labels


def pair_targets(scan_s: RadarScan, scan_t: RadarScan, ablation: str = "full",
                 cluster_params: ClusterParams = ClusterParams(),
                 ransac_params: RansacParams = RansacParams(),
                 labels_s=None, mask_s=None, mask_t=None) -> pseudo.PairTargets:
    """Run cluster -> transfer -> DPR -> refine -> match for one pair.

    Raises :class:`pseudo.PseudoLabelError` or :class:`DprError` when the pair
    cannot contribute to the loss.
    """
    need_masks = ablation != "no_dpr"
    if need_masks:
        mask_s = segment_dpr(scan_s, ransac_params) if mask_s is None else mask_s
        mask_t = segment_dpr(scan_t, ransac_params) if mask_t is None else mask_t
    if ablation == "no_clustering":
        return pseudo.targets_from_masks(mask_s, mask_t)

    labels_s = cluster_scan(scan_s, cluster_params) if labels_s is None else labels_s
    labels_t = pseudo.derive_teacher_labels(scan_s, labels_s, scan_t)
    if ablation == "no_dpr":
        common = sorted(set(labels_s.label_set().tolist()) & set(labels_t.label_set().tolist()))
        if not common:
            raise pseudo.NoMatchesError("no matched clusters")
        return pseudo.targets_from_matches(labels_s, labels_t, [(i, True) for i in common])

    ref_s, ref_t = pseudo.refine_clusters(labels_s, mask_s, labels_t, mask_t)
    matches = pseudo.match_clusters(pseudo.classify_clusters(ref_s, mask_s),
                                    pseudo.classify_clusters(ref_t, mask_t))
    return pseudo.targets_from_matches(ref_s, ref_t, matches)


@dataclass
class PairCache:
    """Pseudo-label targets per pair key; ``None`` marks a skipped pair."""

    targets: dict
    skip_reasons: dict

    def n_valid(self) -> int:
        return sum(t is not None for t in self.targets.values())


def build_pair_cache(dataset: SequenceDataset, ablations=("full",), mode: str = "consecutive",
                     cluster_params: ClusterParams = ClusterParams(),
                     ransac_params: RansacParams = RansacParams(), seed: int = 0) -> dict:
    """Pseudo-labels do not depend on network weights, so compute them once."""
    keys = sorted(pair_indices(dataset, mode, seed, 0))
    scans = {(s, f): scan for s, (_, seq) in enumerate(dataset.sequences) for f, scan in enumerate(seq)}
    masks, labels = {}, {}

    def mask(key):
        if key not in masks:
            try:
                masks[key] = segment_dpr(scans[key], ransac_params)
            except DprError as exc:
                masks[key] = exc
        if isinstance(masks[key], Exception):
            raise masks[key]
        return masks[key]

    def student_labels(key):
        if key not in labels:
            labels[key] = cluster_scan(scans[key], cluster_params)
        return labels[key]

    out = {}
    for ablation in ablations:
        targets, reasons = {}, {}
        for ks, kt in keys:
            try:
                m_s = m_t = lab = None
                if ablation != "no_dpr":
                    m_s, m_t = mask(ks), mask(kt)
                if ablation != "no_clustering":
                    lab = student_labels(ks)
                targets[(ks, kt)] = pair_targets(scans[ks], scans[kt], ablation, cluster_params,
                                                 ransac_params, lab, m_s, m_t)
            except (pseudo.PseudoLabelError, DprError) as exc:
                targets[(ks, kt)] = None
                reasons[(ks, kt)] = str(exc)
        out[ablation] = PairCache(targets, reasons)
    return out


# ---------------------------------------------------------------- pretraining


@dataclass
class PretrainResult:
    student: np.ndarray
    teacher: np.ndarray
    history: list
    encoder_config: EncoderConfig
    config: PretrainConfig


def pretrain(dataset: SequenceDataset, config: PretrainConfig = PretrainConfig(),
             encoder_config: EncoderConfig = EncoderConfig(),
             cluster_params: ClusterParams = ClusterParams(),
             ransac_params: RansacParams = RansacParams(),
             cache: PairCache | None = None, inputs: dict | None = None) -> PretrainResult:
    if cache is None:
        cache = build_pair_cache(dataset, (config.ablation,), config.pair_mode, cluster_params,
                                 ransac_params, config.seed)[config.ablation]
    if inputs is None:
        keys = [(s, f) for s, (_, seq) in enumerate(dataset.sequences) for f in range(len(seq))]
        inputs = dict(zip(keys, prepare_inputs(dataset.scans(), encoder_config.k_neighbors)))

    layout = encoder_layout(encoder_config)
    student = ModelState(init_encoder(encoder_config, seed=config.seed))
    teacher = student.params.copy()
    history = []
    for epoch in range(config.epochs):
        lr = multistep_lr(epoch, config.lr, config.milestones, config.lr_factor)
        order = pair_indices(dataset, config.pair_mode, config.seed, epoch)
        valid = [p for p in order if cache.targets.get(p) is not None]
        skipped = len(order) - len(valid)
        if not valid:
            raise TrainingAborted(f"epoch {epoch}: all {len(order)} pairs skipped")
        pair_losses = []
        for start in range(0, len(valid), config.batch_size):
            batch = valid[start:start + config.batch_size]
            in_s = [inputs[ks] for ks, _ in batch]
            in_t = [inputs[kt] for _, kt in batch]
            x_s = np.vstack([i.x for i in in_s])
            x_t = np.vstack([i.x for i in in_t])
            reps_s, enc_cache = encoder_forward(student.params, layout, x_s,
                                                batch_pooling([i.neighbours for i in in_s]),
                                                encoder_config)
            reps_t, _ = encoder_forward(teacher, layout, x_t,
                                        batch_pooling([i.neighbours for i in in_t]),
                                        encoder_config, keep_cache=False)
            _, losses, g_reps = pseudo.macl_loss_batch(
                reps_s, reps_t, [cache.targets[p] for p in batch],
                [len(i.x) for i in in_s], [len(i.x) for i in in_t])
            student.grads = encoder_backward(student.params, layout, enc_cache, g_reps)
            sgdw_step(student, lr, config.momentum, config.weight_decay)
            teacher = ema_update(teacher, student.params, config.ema_alpha)
            pair_losses.append(losses)
        mean_loss = float(np.concatenate(pair_losses).mean())
        history.append({"epoch": epoch, "loss": mean_loss, "lr": lr, "skip_count": skipped,
                        "processed": len(valid)})
        log.info("pretrain epoch %d loss %.6f lr %.2e skipped %d", epoch, mean_loss, lr, skipped)
    return PretrainResult(student.params, teacher, history, encoder_config, config)


# ---------------------------------------------------------------- fine-tuning


@dataclass
class FinetuneResult:
    params: np.ndarray
    best_epoch: int
    best_val: tuple
    history: list
    n_labeled: int
    encoder_config: EncoderConfig
    config: FinetuneConfig


def predict_masks(params: np.ndarray, encoder_config: EncoderConfig, scans, inputs=None,
                  chunk: int = 256) -> list:
    net = Network(encoder_config, params)
    if inputs is None:
        inputs = prepare_inputs(scans, encoder_config.k_neighbors)
    masks = []
    for start in range(0, len(inputs), chunk):
        block = inputs[start:start + chunk]
        sizes = [len(i.x) for i in block]
        if sum(sizes) == 0:
            masks.extend(np.zeros(0, bool) for _ in block)
            continue
        logits, _ = net.forward(np.vstack([i.x for i in block]),
                                batch_pooling([i.neighbours for i in block]))
        pred = logits[:, 1] > logits[:, 0]
        masks.extend(np.split(pred, np.cumsum(sizes)[:-1]))
    return masks


def evaluate_params(params, encoder_config, scans, inputs=None) -> tuple:
    acc = IoUAccumulator()
    for scan, pred in zip(scans, predict_masks(params, encoder_config, scans, inputs)):
        acc.add(pred, gt_mask(scan))
    return acc.result()


def finetune(train_scans, val_scans, config: FinetuneConfig = FinetuneConfig(),
             encoder_config: EncoderConfig = EncoderConfig(),
             encoder_params: np.ndarray | None = None, val_inputs=None) -> FinetuneResult:
    """Train encoder + head with the focal Tversky loss on a labeled fraction.

    ``encoder_params=None`` trains from scratch. The head, batch order and
    augmentations depend only on ``config.seed``, so scratch and pretrained
    runs differ only in their initial encoder weights.
    """
    labeled, _ = label_fraction_split(train_scans, config.label_fraction, config.seed)
    labeled = [s for s in labeled if s.n_points > 0]
    if not labeled:
        raise ValueError("empty labeled subset")
    for s in labeled:
        gt_mask(s)
    batch_size = config.small_batch_size if len(labeled) < config.small_set_threshold else config.batch_size

    enc = init_encoder(encoder_config, seed=config.seed) if encoder_params is None \
        else np.asarray(encoder_params, dtype=np.float64).copy()
    net = Network(encoder_config, np.concatenate([enc, init_head(encoder_config, seed=config.seed)]))
    state = ModelState(net.params.copy())
    inputs = prepare_inputs(labeled, encoder_config.k_neighbors)
    gts = [s.gt_label.astype(np.int64) for s in labeled]
    if val_inputs is None and val_scans:
        val_inputs = prepare_inputs(val_scans, encoder_config.k_neighbors)

    best = (-1.0, None, -1, None)  # (val moving IoU, params, epoch, metrics)
    history = []
    for epoch in range(config.epochs):
        lr = multistep_lr(epoch, config.lr, config.milestones, config.lr_factor)
        order = np.random.default_rng([config.seed, epoch, 7]).permutation(len(labeled))
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            xs = []
            for i in idx:
                x = inputs[i].x
                if config.augment:
                    rng = np.random.default_rng([config.seed, epoch, int(i), 11])
                    x = x.copy()
                    x[:, :3] = apply_transform(x[:, :3], **draw_transform(rng, ALL_OPS))
                xs.append(x)
            pool = batch_pooling([inputs[i].neighbours for i in idx])
            logits, fcache = net.forward(np.vstack(xs), pool, state.params)
            loss, g_logits = focal_tversky_loss(logits, np.concatenate([gts[i] for i in idx]),
                                                config.tversky)
            grads = net.backward(fcache, g_logits, state.params)
            if config.freeze_backbone:
                grads[:net.n_enc] = 0.0
            state.grads = grads
            adamw_step(state, lr, config.weight_decay)
            losses.append(loss)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr, "skip_count": 0}
        if val_scans:
            m, s_, mean = evaluate_params(state.params, encoder_config, val_scans, val_inputs)
            row.update(val_iou_moving=m, val_iou_static=s_, val_iou_mean=mean)
            if m > best[0]:
                best = (m, state.params.copy(), epoch, (m, s_, mean))
        history.append(row)
        log.debug("finetune epoch %d loss %.5f", epoch, row["loss"])
    if best[1] is None:
        best = (None, state.params.copy(), config.epochs - 1, ())
    return FinetuneResult(best[1], best[2], best[3], history, len(labeled), encoder_config, config)
