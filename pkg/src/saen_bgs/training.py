"""Self-distillation spiking learning: joint loss, tandem surrogate backward, LR schedules."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import VideoDataset
from .metrics import Confusion, accumulate, metrics
from .network import SAENBGS, predict_mask
from .tensor import backward, load_checkpoint, rmsprop_step, save_checkpoint

log = logging.getLogger(__name__)

SCHEDULERS = ("step", "multi-step", "plateau", "none")
EPOCH_FIELDS = ("epoch", "L_main", "L_aux", "L_all", "lr", "heldout_fm")
BATCH_FIELDS = ("epoch", "batch", "L_main", "L_aux", "L_all")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-4
    alpha: float = 0.8
    scheduler: str = "step"
    step_size: int = 20
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    patience: int = 5
    seed: int = 0
    eval_frames: int = 16  # held-out slice scored each epoch; 0 = all
    checkpoint_every: int = 10

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}, got {self.scheduler!r}")
        if self.step_size < 1 or self.patience < 1 or not 0.0 < self.gamma < 1.0:
            raise ValueError("step_size and patience must be >= 1, gamma in (0, 1)")
        if any(m < 1 for m in self.milestones) or list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be positive and increasing")
        if self.checkpoint_every < 1 or self.eval_frames < 0:
            raise ValueError("checkpoint_every must be >= 1 and eval_frames >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        if "milestones" in d:
            d["milestones"] = tuple(int(m) for m in d["milestones"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


def nll_loss(logits, mask):
    """Mean negative log-likelihood of the true class under a 2-way softmax."""
    if logits.dim() != 4 or logits.shape[1] != 2:
        raise ValueError(f"logits must be (N, 2, H, W), got {tuple(logits.shape)}")
    if mask.shape != (logits.shape[0], *logits.shape[2:]):
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match logits {tuple(logits.shape)}")
    target = mask.long()
    if ((target != 0) & (target != 1)).any():
        raise ValueError("ground-truth mask must contain only 0 and 1")
    return F.nll_loss(F.log_softmax(logits, dim=1), target)


def joint_loss(out, mask, alpha: float):
    l_main = nll_loss(out.logits, mask)
    l_aux = nll_loss(out.aux_logits, mask)
    return l_main, l_aux, alpha * l_main + (1.0 - alpha) * l_aux


def surrogate_backward(net: SAENBGS, out, mask, alpha: float):
    """Gradients of the joint loss through the tandem graph.

    The main loss sees true spike counts in the forward pass; its backward pass
    runs through the approximated counts (see ``straight_through``). The
    auxiliary loss differentiates the analog graph with the approximated counts
    in each interpolation held constant.
    """
    l_main, l_aux, l_all = joint_loss(out, mask, alpha)
    return backward(l_all, net.store), (l_main.detach(), l_aux.detach(), l_all.detach())


class LRScheduler:
    """step: x gamma every ``step_size`` epochs; multi-step: x gamma at each
    milestone; plateau: x gamma after ``patience`` epochs without improvement."""

    def __init__(self, cfg: TrainConfig):
        self.kind = cfg.scheduler
        self.base_lr = cfg.lr
        self.lr = cfg.lr
        self.gamma = cfg.gamma
        self.step_size = cfg.step_size
        self.milestones = tuple(cfg.milestones)
        self.patience = cfg.patience
        self.epoch = 0
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, metric: float | None = None) -> float:
        self.epoch += 1
        if self.kind == "step":
            self.lr = self.base_lr * self.gamma ** (self.epoch // self.step_size)
        elif self.kind == "multi-step":
            n = sum(1 for m in self.milestones if m <= self.epoch)
            self.lr = self.base_lr * self.gamma ** n
        elif self.kind == "plateau":
            if metric is None:
                raise ValueError("plateau scheduler needs the monitored loss")
            if metric < self.best:
                self.best = metric
                self.bad_epochs = 0
            else:
                self.bad_epochs += 1
                if self.bad_epochs >= self.patience:
                    self.lr *= self.gamma
                    self.bad_epochs = 0
        return self.lr

    def state_dict(self) -> dict:
        return {"lr": self.lr, "epoch": self.epoch, "best": self.best, "bad_epochs": self.bad_epochs}

    def load_state_dict(self, d: dict) -> None:
        self.lr = d["lr"]
        self.epoch = d["epoch"]
        self.best = d["best"]
        self.bad_epochs = d["bad_epochs"]


@dataclass
class LossReport:
    epoch: int
    batches: list[tuple[float, float, float]] = field(default_factory=list)
    lr: float = 0.0
    heldout_fm: float = float("nan")

    def _mean(self, i):
        return float(np.mean([b[i] for b in self.batches])) if self.batches else float("nan")

    @property
    def L_main(self):
        return self._mean(0)

    @property
    def L_aux(self):
        return self._mean(1)

    @property
    def L_all(self):
        return self._mean(2)

    def row(self) -> dict:
        return {
            "epoch": self.epoch,
            "L_main": repr(self.L_main),
            "L_aux": repr(self.L_aux),
            "L_all": repr(self.L_all),
            "lr": repr(self.lr),
            "heldout_fm": repr(self.heldout_fm),
        }


def batch_order(n: int, seed: int, epoch: int, batch_size: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(net: SAENBGS, dataset: VideoDataset, cfg: TrainConfig, lr: float, epoch: int = 0) -> LossReport:
    if len(dataset) == 0:
        raise ValueError("empty training set")
    report = LossReport(epoch=epoch, lr=lr)
    snapshot = net.store.snapshot()
    opt_snapshot = {k: v.clone() for k, v in net.store.sq_avg.items()}
    for idx in batch_order(len(dataset), cfg.seed, epoch, cfg.batch_size):
        idx_t = torch.as_tensor(idx)
        frames, masks = dataset.frames[idx_t], dataset.masks[idx_t]
        try:
            out = net.forward_tandem(frames)
            grads, (l_main, l_aux, l_all) = surrogate_backward(net, out, masks, cfg.alpha)
            if not torch.isfinite(l_all):
                raise FloatingPointError("non-finite loss")
        except FloatingPointError as exc:  # includes NonFiniteActivation
            net.store.restore(snapshot)
            for k, v in opt_snapshot.items():
                net.store.sq_avg[k].copy_(v)
            raise TrainingDiverged(f"epoch {epoch}: {exc}; parameters rolled back") from exc
        rmsprop_step(net.store, grads, lr)
        report.batches.append((l_main.item(), l_aux.item(), l_all.item()))
    return report


def evaluate(net: SAENBGS, dataset: VideoDataset, limit: int = 0, batch_size: int = 8) -> Confusion:
    """Pooled confusion of spike-only inference over (a prefix of) ``dataset``."""
    n = len(dataset) if not limit else min(limit, len(dataset))
    conf = Confusion()
    for i in range(0, n, batch_size):
        sl = slice(i, min(i + batch_size, n))
        pred = predict_mask(net.forward_spiking_inference(dataset.frames[sl])).numpy()
        gt = dataset.masks[sl].numpy()
        ign = None if dataset.ignore is None else dataset.ignore[sl].numpy()
        conf = conf + accumulate(pred, gt, ign)
    return conf


def heldout_fm(net: SAENBGS, dataset: VideoDataset | None, limit: int = 0) -> float:
    if dataset is None or len(dataset) == 0:
        return float("nan")
    fm = metrics(evaluate(net, dataset, limit))["Fm"]
    return 0.0 if fm is None else fm / 100.0


def _write_csv(path: Path, fields, rows, append: bool) -> None:
    new = not append or not path.exists()
    with path.open("w" if new else "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        if new:
            w.writeheader()
        w.writerows(rows)


def fit(
    net: SAENBGS,
    train: VideoDataset,
    heldout: VideoDataset | None,
    cfg: TrainConfig,
    out_dir=None,
    resume=None,
) -> list[LossReport]:
    """Train for ``cfg.epochs`` epochs (continuing from ``resume`` if given).

    ``out_dir`` receives ``train_log.csv`` (one row per epoch), ``batch_log.csv``,
    periodic ``ckpt_epochNNN.bin``, ``last.bin``, ``best.bin`` and ``summary.json``.
    """
    cfg.validate()
    sched = LRScheduler(cfg)
    start = 0
    best_fm = -1.0
    if resume is not None:
        meta = load_checkpoint(resume, net.store)
        sched.load_state_dict(meta["scheduler"])
        start = int(meta["epoch"])
        best_fm = float(meta.get("best_fm", -1.0))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    reports = []
    for epoch in range(start, cfg.epochs):
        rep = train_epoch(net, train, cfg, sched.lr, epoch)
        rep.heldout_fm = heldout_fm(net, heldout, cfg.eval_frames)
        sched.step(rep.L_all)
        reports.append(rep)
        log.info("epoch %d  L_main %.4f  L_aux %.4f  L_all %.4f  lr %.2g  Fm %.4f",
                 epoch, rep.L_main, rep.L_aux, rep.L_all, rep.lr, rep.heldout_fm)
        if out is None:
            continue
        resumed = resume is not None or epoch > start
        _write_csv(out / "train_log.csv", EPOCH_FIELDS, [rep.row()], append=resumed)
        _write_csv(
            out / "batch_log.csv", BATCH_FIELDS,
            [{"epoch": epoch, "batch": i, "L_main": repr(a), "L_aux": repr(b), "L_all": repr(c)}
             for i, (a, b, c) in enumerate(rep.batches)],
            append=resumed,
        )
        improved = rep.heldout_fm > best_fm
        if improved:
            best_fm = rep.heldout_fm
        meta = {
            "epoch": epoch + 1,
            "scheduler": sched.state_dict(),
            "best_fm": best_fm,
            "network": net.cfg.to_dict(),
            "train": cfg.to_dict(),
        }
        save_checkpoint(out / "last.bin", net.store, meta)
        if improved:
            save_checkpoint(out / "best.bin", net.store, meta)
        if (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_epoch{epoch + 1:03d}.bin", net.store, meta)
    if out is not None:
        summary = {
            "epochs_run": len(reports),
            "final": reports[-1].row() if reports else None,
            "best_heldout_fm": best_fm,
            "wall_seconds": time.perf_counter() - t0,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return reports

