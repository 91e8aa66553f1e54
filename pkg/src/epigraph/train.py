"""Mini-batch training loop with validation split and min-val checkpointing.

Graphs are built per sample inside the loop (cached by pair id and graph
parameters); batch gradients are the arithmetic mean over the graphs that
built successfully; one Adam step per batch.  Fixed seed implies
bit-identical parameters after every epoch in single-threaded mode.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import EpigraphError, SchemaVersionError, ValidationError
from .geom import Pose
from .graph import GraphParams, build_graph
from .losses import LossBreakdown, LossWeights, PoseTarget, total_loss, total_loss_grad
from .seeding import substream
from .synth import CorrespondenceSet, _fmt


@dataclass
class TrainConfig:
    model: nn.ModelConfig
    graph: GraphParams = field(default_factory=GraphParams)
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 4
    lr: float = 1e-4
    epochs: int = 12
    split: float = 0.8
    seed: int = 0
    normalized_e: bool = False
    prebuild_workers: int = 0

    def __post_init__(self):
        if not (0.0 < self.split < 1.0):
            raise ValidationError("split fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_mean: LossBreakdown
    val_mean: LossBreakdown
    processed: int
    skipped: int
    val_processed: int
    val_skipped: int


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    best_epoch: int
    best_val_total: float
    checkpoint_path: str


def split_dataset(items, fraction: float, seed) -> tuple[list, list]:
    """Deterministic shuffled split; both halves nonempty."""
    n = len(items)
    if n < 2:
        raise ValidationError("need at least two items to split")
    perm = substream(seed, "split").permutation(n)
    n_train = int(round(fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    train_idx = sorted(perm[:n_train])
    val_idx = sorted(perm[n_train:])
    return [items[i] for i in train_idx], [items[i] for i in val_idx]


def _mean_breakdown(items: list[LossBreakdown]) -> LossBreakdown:
    if not items:
        return LossBreakdown(*([float("nan")] * 7))
    arr = np.array([[b.quat, b.t_dir, b.t_scale, b.frob, b.svd, b.yaw, b.total]
                    for b in items])
    return LossBreakdown(*(float(v) for v in arr.mean(axis=0)))


class _GraphCache:
    """Built graphs keyed by (pair id, content digest, graph params); the
    params in the key make stale entries impossible when k / tau / variant
    change, and the digest guards against colliding pair ids."""

    def __init__(self, params: GraphParams):
        self.params = params
        self.store: dict = {}

    def get(self, corr: CorrespondenceSet):
        key = (corr.pair_label(), corr.cache_token(), self.params)
        if key not in self.store:
            try:
                g = build_graph(corr, params=self.params)
                self.store[key] = nn.graph_tensors(g)
            except EpigraphError as e:
                self.store[key] = e
        res = self.store[key]
        if isinstance(res, EpigraphError):
            raise res
        return res

    def prebuild(self, dataset, workers: int):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(self._try_get, c) for c in dataset]
            for f in futures:
                f.result()

    def _try_get(self, corr):
        try:
            self.get(corr)
        except EpigraphError:
            pass


def _targets_for(dataset, normalized_e: bool) -> list[PoseTarget]:
    targets = []
    for corr in dataset:
        if corr.gt_relative is None:
            raise ValidationError(
                f"pair {corr.pair_label()} has no ground-truth relative pose")
        targets.append(PoseTarget.from_pose(corr.gt_relative, normalized_e))
    return targets


def _ckpt_meta(cfg: TrainConfig, epoch: int, val_total: float) -> dict:
    g, w = cfg.graph, cfg.weights
    return {
        "seed": cfg.seed,
        "epoch": epoch,
        "val_total": _fmt(val_total),
        "lambda_pose": _fmt(w.lambda_pose),
        "lambda_frob": _fmt(w.lambda_frob),
        "lambda_svd": _fmt(w.lambda_svd),
        "lambda_yaw": _fmt(w.lambda_yaw),
        "normalized_e": int(cfg.normalized_e),
        "graph.k": g.k,
        "graph.tau": _fmt(g.tau),
        "graph.variant": g.variant,
        "graph.symmetrize": int(g.symmetrize),
        "graph.knn_source": g.knn_source,
        "graph.radius": "none" if g.radius is None else _fmt(g.radius),
        "graph.e0_seed": g.e0_seed,
        "graph.e0_m": g.e0_m,
        "graph.e0_iters": g.e0_iters,
        "graph.full_denominator": int(g.full_denominator),
    }


def graph_params_from_meta(meta: dict) -> GraphParams:
    radius = meta.get("graph.radius", "none")
    return GraphParams(
        k=int(meta["graph.k"]),
        tau=float(meta["graph.tau"]),
        variant=meta["graph.variant"],
        symmetrize=bool(int(meta["graph.symmetrize"])),
        knn_source=int(meta["graph.knn_source"]),
        radius=None if radius == "none" else float(radius),
        e0_seed=int(meta["graph.e0_seed"]),
        e0_m=int(meta["graph.e0_m"]),
        e0_iters=int(meta["graph.e0_iters"]),
        full_denominator=bool(int(meta["graph.full_denominator"])),
    )


def weights_from_meta(meta: dict) -> LossWeights:
    return LossWeights(
        lambda_pose=float(meta["lambda_pose"]),
        lambda_frob=float(meta["lambda_frob"]),
        lambda_svd=float(meta["lambda_svd"]),
        lambda_yaw=float(meta["lambda_yaw"]),
    )


def train(cfg: TrainConfig, dataset, checkpoint_path,
          final_checkpoint_path=None) -> TrainReport:
    """Train on a list of correspondence sets carrying ground truth.

    The checkpoint tracks the minimum-validation epoch; pass
    ``final_checkpoint_path`` to also keep the last-epoch state (useful
    for overfit sanity runs)."""
    train_set, val_set = split_dataset(list(dataset), cfg.split, cfg.seed)
    train_targets = _targets_for(train_set, cfg.normalized_e)
    val_targets = _targets_for(val_set, cfg.normalized_e)

    cache = _GraphCache(cfg.graph)
    if cfg.prebuild_workers > 0:
        cache.prebuild(list(dataset), cfg.prebuild_workers)

    params = nn.init_params(cfg.model, substream(cfg.seed, "init"))
    stats: list[EpochStats] = []
    best = None

    for epoch in range(1, cfg.epochs + 1):
        order = substream(cfg.seed, "shuffle", epoch).permutation(len(train_set))
        train_losses: list[LossBreakdown] = []
        skipped = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            n_ok = 0
            for i in batch:
                try:
                    gtensors = cache.get(train_set[i])
                except EpigraphError:
                    skipped += 1
                    continue
                out, fwd_cache = nn.model_forward(gtensors, params, cfg.model)
                bd, dq, dt = total_loss_grad(out.q, out.t, train_targets[i],
                                             cfg.weights)
                grads = nn.model_backward(fwd_cache, dq, out.t_raw * dt,
                                          float(dt @ out.t_dir), params)
                train_losses.append(bd)
                n_ok += 1
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
            if n_ok == 0:
                continue
            for k in acc:
                acc[k] /= n_ok
            params.set_grads(acc)
            nn.adam_step(params, lr=cfg.lr)

        if not train_losses:
            raise ValidationError("every training graph failed to build this epoch")

        val_losses: list[LossBreakdown] = []
        val_skipped = 0
        for corr, target in zip(val_set, val_targets):
            try:
                gtensors = cache.get(corr)
            except EpigraphError:
                val_skipped += 1
                continue
            out, _ = nn.model_forward(gtensors, params, cfg.model)
            val_losses.append(total_loss(out.q, out.t, target, cfg.weights))

        val_mean = _mean_breakdown(val_losses)
        stats.append(EpochStats(epoch, _mean_breakdown(train_losses), val_mean,
                                len(train_losses), skipped,
                                len(val_losses), val_skipped))
        if val_losses and (best is None or val_mean.total < best):
            best = val_mean.total
            nn.save_checkpoint(checkpoint_path, params, cfg.model,
                               _ckpt_meta(cfg, epoch, best))

    if best is None:
        raise ValidationError("no validation graph ever built; nothing checkpointed")
    if final_checkpoint_path is not None:
        nn.save_checkpoint(final_checkpoint_path, params, cfg.model,
                           _ckpt_meta(cfg, cfg.epochs, stats[-1].val_mean.total))
    best_epoch = min((s for s in stats if s.val_processed > 0),
                     key=lambda s: s.val_mean.total).epoch
    return TrainReport(stats, best_epoch, best, str(checkpoint_path))


def evaluate(checkpoint_path, dataset) -> list[tuple[Pose, Pose, LossBreakdown]]:
    """Forward-only pass of a checkpoint over pairs with ground truth."""
    params, config, meta = nn.load_checkpoint(checkpoint_path)
    try:
        gp = graph_params_from_meta(meta)
        weights = weights_from_meta(meta)
        normalized_e = bool(int(meta.get("normalized_e", "0")))
    except (KeyError, ValueError) as e:
        raise SchemaVersionError(f"checkpoint meta lacks required field: {e}")
    cache = _GraphCache(gp)
    out = []
    for corr in dataset:
        if corr.gt_relative is None:
            raise ValidationError(f"pair {corr.pair_label()} has no ground truth")
        target = PoseTarget.from_pose(corr.gt_relative, normalized_e)
        gtensors = cache.get(corr)
        pred, _ = nn.model_forward(gtensors, params, config)
        bd = total_loss(pred.q, pred.t, target, weights)
        out.append((Pose(pred.q, pred.t), corr.gt_relative, bd))
    return out


def predict(checkpoint_path, dataset) -> list[Pose]:
    """Predicted relative poses only; no ground truth required."""
    params, config, meta = nn.load_checkpoint(checkpoint_path)
    gp = graph_params_from_meta(meta)
    cache = _GraphCache(gp)
    preds = []
    for corr in dataset:
        gtensors = cache.get(corr)
        out, _ = nn.model_forward(gtensors, params, config)
        preds.append(Pose(out.q, out.t))
    return preds


REPORT_HEADER = "# epigraph-train-report v1"


def write_report(report: TrainReport, path) -> None:
    lines = [REPORT_HEADER, f"epochs {len(report.epochs)}"]
    for s in report.epochs:
        tr = " ".join(_fmt(v) for v in (s.train_mean.quat, s.train_mean.t_dir,
                                        s.train_mean.t_scale, s.train_mean.frob,
                                        s.train_mean.svd, s.train_mean.yaw,
                                        s.train_mean.total))
        vl = " ".join(_fmt(v) for v in (s.val_mean.quat, s.val_mean.t_dir,
                                        s.val_mean.t_scale, s.val_mean.frob,
                                        s.val_mean.svd, s.val_mean.yaw,
                                        s.val_mean.total))
        lines.append(f"epoch {s.epoch} train {tr} val {vl} "
                     f"processed {s.processed} skipped {s.skipped} "
                     f"val_processed {s.val_processed} val_skipped {s.val_skipped}")
    lines.append(f"best_epoch {report.best_epoch}")
    lines.append(f"best_val_total {_fmt(report.best_val_total)}")
    lines.append(f"checkpoint {os.path.basename(report.checkpoint_path)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
