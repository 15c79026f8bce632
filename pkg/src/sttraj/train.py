"""Training loop, evaluation protocol and sample export."""
import csv
import logging
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import leave_one_out_split, load_dataset, prepare_samples
from .losses import (LossConfig, MetricsReport, best_of_k_errors, loss_terms, make_rng,
                     sample_trajectories, write_sample_csv)
from .model import SGD, ModelConfig, STGraphModel, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "nll", "mmd", "total", "lr"]


def model_config_from_run(cfg):
    return ModelConfig(
        d_model=cfg.d_model, heads=cfg.heads, tcnn_refine_layers=cfg.tcnn_refine_layers,
        kernel_width=cfg.kernel_width, variant=cfg.variant, coord_mode=cfg.coord_mode,
        loss=LossConfig(alpha=cfg.alpha, mmd_sample_count=cfg.mmd_sample_count),
    )


@dataclass
class EpochStats:
    epoch: int
    nll: float
    mmd: float
    total: float
    lr: float
    batch_sizes: list = field(default_factory=list)

    def row(self):
        return [self.epoch, repr(self.nll), repr(self.mmd), repr(self.total), repr(self.lr)]


def _target(sample):
    return np.transpose(sample.fut.values.data, (1, 2, 0))


class Trainer:
    """SGD over single-window graphs, accumulating ``batch_size`` windows per step.

    The accumulated gradient is divided by the number of windows in the batch,
    so a step follows the batch-mean loss.
    """

    def __init__(self, model, cfg, optimizer=None):
        self.model = model
        self.cfg = cfg
        self.optimizer = optimizer or SGD(model.named_parameters(), momentum=cfg.momentum)

    def epoch_rng(self, epoch):
        return make_rng([self.cfg.seed, 1, epoch])

    def train_epoch(self, samples, epoch):
        if not samples:
            raise ValueError("no training windows")
        rng = self.epoch_rng(epoch)
        lr = self.cfg.lr_at(epoch)
        order = rng.permutation(len(samples))
        sums = np.zeros(3)
        sizes = []
        bs = self.cfg.batch_size
        loss_cfg = self.model.config.loss
        for start in range(0, len(order), bs):
            batch = order[start:start + bs]
            self.optimizer.zero_grads()
            for idx in batch:
                s = samples[idx]
                terms = loss_terms(self.model(s.obs), _target(s), loss_cfg, rng)
                ad.backward(terms.total)
                sums += (terms.nll.item(), terms.mmd.item(), terms.total.item())
            self.optimizer.step(lr, scale=1.0 / len(batch), max_norm=self.cfg.clip_grad or None)
            sizes.append(len(batch))
        nll, mmd, total = (sums / len(samples)).tolist()
        return EpochStats(epoch, nll, mmd, total, lr, sizes)


def _write_log(path, rows, append):
    exists = append and os.path.exists(path)
    with open(path, "a" if exists else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow(r.row())


def read_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def collect_samples(scenes, cfg):
    out = []
    for scene in scenes:
        out.extend(prepare_samples(scene, cfg.coord_mode, cfg.stride))
    return out


def split_validation(samples, cfg):
    if cfg.val_fraction <= 0 or len(samples) < 2:
        return samples, []
    order = make_rng([cfg.seed, 3]).permutation(len(samples))
    n_val = max(1, int(round(cfg.val_fraction * len(samples))))
    val = set(order[:n_val].tolist())
    return ([s for i, s in enumerate(samples) if i not in val],
            [s for i, s in enumerate(samples) if i in val])


def train(cfg, train_scenes, out_dir, resume=None, stop_after=None, model=None):
    """Run the epoch loop and write ``train_log.csv`` plus checkpoints into ``out_dir``.

    Checkpoints: ``last.sttc`` after every epoch, ``best.sttc`` whenever the
    selection score improves, ``final.sttc`` once all epochs are done. The
    score is validation best-of-K ADE when ``cfg.val_fraction`` > 0, otherwise
    the epoch's mean training loss. ``stop_after`` ends the run early (for
    interruption/resume). Returns the list of :class:`EpochStats`.
    """
    os.makedirs(out_dir, exist_ok=True)
    samples, val = split_validation(collect_samples(train_scenes, cfg), cfg)
    start_epoch = 1
    best = np.inf
    if resume is not None:
        model, ckpt = load_checkpoint(resume)
        trainer = Trainer(model, cfg)
        for k, v in ckpt.velocity.items():
            trainer.optimizer.velocity[k] = v.copy()
        start_epoch = ckpt.epoch + 1
        best = float(ckpt.meta.get("best_score", np.inf))
    else:
        if model is None:
            model = STGraphModel(model_config_from_run(cfg), seed=cfg.seed)
        trainer = Trainer(model, cfg)
    log_path = os.path.join(out_dir, "train_log.csv")
    history = []
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start_epoch, last + 1):
        stats = trainer.train_epoch(samples, epoch)
        history.append(stats)
        _write_log(log_path, [stats], append=epoch > 1)
        log.info("epoch %d nll=%.4f mmd=%.4f total=%.4f lr=%g", epoch, stats.nll, stats.mmd, stats.total, stats.lr)
        score = stats.total
        if val:
            score = evaluate(model, {"val": val}, cfg.eval_k, cfg.seed).per_scene["val"][0]
        meta = {"best_score": min(best, score)}
        state = trainer.epoch_rng(epoch + 1).bit_generator.state
        save_checkpoint(model, os.path.join(out_dir, "last.sttc"), trainer.optimizer, epoch, state, meta)
        if score < best:
            best = score
            save_checkpoint(model, os.path.join(out_dir, "best.sttc"), trainer.optimizer, epoch, state, meta)
    if last == cfg.epochs:
        save_checkpoint(model, os.path.join(out_dir, "final.sttc"), trainer.optimizer, cfg.epochs,
                        trainer.epoch_rng(cfg.epochs + 1).bit_generator.state, {"best_score": best})
    return history, model


def zero_gradient_parameters(model, samples, cfg, probe=32):
    """Names of trainable tensors whose gradient is identically zero.

    Gradients are accumulated over up to ``probe`` windows, preferring ones
    with several pedestrians: a lone pedestrian's spatial attention is a
    constant 1 and would look dead in any variant.
    """
    ranked = sorted(range(len(samples)), key=lambda i: (-samples[i].sample.num_peds, i))[:probe]
    rng = make_rng([cfg.seed, 4])
    model.zero_grads()
    for i in ranked:
        s = samples[i]
        ad.backward(loss_terms(model(s.obs), _target(s), model.config.loss, rng).total)
    dead = sorted(k for k, g in model.gradients().items() if not np.any(g))
    model.zero_grads()
    return dead


def window_seed(seed, scene_name, index):
    return [int(seed), 2, zlib.crc32(scene_name.encode("utf-8")), int(index)]


def evaluate(model, samples_by_scene, K, seed):
    """Best-of-K metrics for each scene, pooling point errors over its windows."""
    errors = {}
    mode = model.config.coord_mode
    for name, samples in samples_by_scene.items():
        errs = []
        for s in samples:
            field_ = model(s.obs)
            gt_abs = np.transpose(s.sample.fut, (1, 0, 2))
            errs.append(best_of_k_errors(field_, gt_abs, K, make_rng(window_seed(seed, name, s.index)),
                                         s.sample.obs[:, -1], mode))
        if not errs:
            raise ValueError(f"scene {name!r} has no complete 20-frame windows")
        errors[name] = errs
    return MetricsReport.from_errors(errors)


def evaluate_scenes(model, scenes, K, seed, stride=1):
    mode = model.config.coord_mode
    return evaluate(model, {s.name: prepare_samples(s, mode, stride) for s in scenes}, K, seed)


def export_samples(model, scene, window_index, K, seed, path, stride=1):
    """Write K sampled futures plus observed/ground-truth paths for one window."""
    samples = prepare_samples(scene, model.config.coord_mode, stride)
    if not 0 <= window_index < len(samples):
        raise IndexError(f"window {window_index} out of range; scene {scene.name!r} has {len(samples)} windows")
    s = samples[window_index]
    field_ = model(s.obs)
    drawn = sample_trajectories(field_, K, make_rng(window_seed(seed, scene.name, window_index)),
                                s.sample.obs[:, -1], model.config.coord_mode)
    write_sample_csv(path, drawn, s.sample.ped_ids, obs=s.sample.obs, gt=s.sample.fut)
    return drawn


def run_leave_one_out(cfg, out_dir, test_scene=None, scenes=None):
    """Train on every scene but the test one, then evaluate on it."""
    scenes = scenes if scenes is not None else load_dataset(cfg.dataset_dir)
    train_scenes, test = leave_one_out_split(scenes, test_scene or cfg.test_scene)
    history, model = train(cfg, train_scenes, out_dir)
    report = evaluate_scenes(model, [test], cfg.eval_k, cfg.seed, cfg.stride)
    return history, model, report
