"""Training loop: SI-SNR objective, Adam, lr halving on validation-loss
increase, early stopping, best-checkpoint retention."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from . import checkpoint
from .config import RunConfig
from .data import DynamicMixer, Manifest
from .model import DCCRN
from .optim import Adam, PlateauSchedule, clip_grad_norm
from .synthetic import toy_set
from .targets import loss_sisnr, si_snr

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    best_val_sisnr: float
    noisy_val_sisnr: float
    epochs_run: int
    steps: int
    best_checkpoint: Path | None
    history: list[dict] = field(default_factory=list)
    lr_halvings: int = 0
    stopped_early: bool = False

    @property
    def improvement_db(self) -> float:
        return self.best_val_sisnr - self.noisy_val_sisnr


def metrics_line(epoch: int, split: str, sisnr: float, lr: float) -> str:
    return f"epoch={epoch} split={split} sisnr={sisnr:.4f} lr={lr:.6g}"


def evaluate(model: DCCRN, mixtures: np.ndarray, cleans: np.ndarray, batch: int = 8) -> float:
    """Mean SI-SNR (dB) of the model's eval-mode output."""
    was = model.training
    model.eval()
    scores = []
    for i in range(0, len(mixtures), batch):
        scores.append(si_snr(model.enhance(mixtures[i:i + batch]), cleans[i:i + batch]))
    model.train(was)
    return float(np.mean(np.concatenate([np.atleast_1d(s) for s in scores])))


def _materialise(mixer: DynamicMixer) -> tuple[np.ndarray, np.ndarray]:
    pairs = list(mixer)
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


class Trainer:
    def __init__(self, run: RunConfig, sink: Callable[[str], None] | None = None):
        run.validate()
        self.run = run
        self.sink = sink
        self.model = DCCRN(run.model, seed=run.train.seed)
        o = run.optim
        self.opt = Adam(self.model.parameters(), lr=o.lr, betas=(o.beta1, o.beta2), eps=o.eps)
        self.schedule = PlateauSchedule(self.opt, factor=o.lr_decay, patience=o.patience)
        self.rng = np.random.default_rng(run.train.seed)
        self.out_dir = Path(run.output_dir)
        self._val = self._validation_set()

    # -- data ------------------------------------------------------------------
    def _validation_set(self):
        d, t = self.run.data, self.run.train
        if d.source == "synthetic":
            return toy_set(d.val_clips, d.val_segment, seed=t.seed + 1_000_003)
        mixer = DynamicMixer(Manifest.load(d.val_manifest), t.seed, mode="eval", segment=d.val_segment,
                             count=d.val_clips, reverb=d.reverb, noise_rir=d.noise_rir)
        return _materialise(mixer)

    def _epoch_set(self, epoch: int):
        d, t = self.run.data, self.run.train
        if d.source == "synthetic":
            # a fixed corpus, reshuffled each epoch
            if not hasattr(self, "_train_fixed"):
                self._train_fixed = toy_set(d.train_clips, t.segment, seed=t.seed)
            return self._train_fixed
        mixer = DynamicMixer(Manifest.load(d.train_manifest), t.seed + epoch, mode="train",
                             segment=t.segment, count=d.train_clips, reverb=d.reverb, noise_rir=d.noise_rir)
        return _materialise(mixer)

    # -- loop ------------------------------------------------------------------
    def _emit(self, line: str, handle) -> None:
        log.info(line)
        if handle is not None:
            handle.write(line + "\n")
            handle.flush()
        if self.sink is not None:
            self.sink(line)

    def step(self, mix: np.ndarray, clean: np.ndarray) -> float:
        _, est = self.model(mix)
        loss = loss_sisnr(est, clean)
        self.opt.zero_grad()
        ag.backward(loss)
        if self.run.optim.grad_clip > 0:
            clip_grad_norm(self.opt.params, self.run.optim.grad_clip)
        self.opt.step()
        return -float(loss.data)

    def fit(self) -> TrainResult:
        t = self.run.train
        self.out_dir.mkdir(parents=True, exist_ok=True)
        val_mix, val_clean = self._val
        noisy = float(np.mean(si_snr(val_mix, val_clean)))
        best_path = self.out_dir / "best.ckpt"
        result = TrainResult(-np.inf, noisy, 0, 0, None)
        deadline = time.monotonic() + t.time_budget if t.time_budget > 0 else None
        self.model.train()
        with open(self.out_dir / "metrics.log", "w", encoding="utf-8") as handle:
            log.info("noisy validation baseline sisnr=%.4f", noisy)
            for epoch in range(1, t.epochs + 1):
                mix, clean = self._epoch_set(epoch)
                order = self.rng.permutation(len(mix))
                scores = []
                for start in range(0, len(order), t.batch_size):
                    idx = order[start:start + t.batch_size]
                    scores.append(self.step(mix[idx], clean[idx]))
                    result.steps += 1
                    if deadline is not None and time.monotonic() > deadline:
                        break
                lr = self.opt.lr
                self._emit(metrics_line(epoch, "train", float(np.mean(scores)), lr), handle)
                val = evaluate(self.model, val_mix, val_clean)
                self._emit(metrics_line(epoch, "val", val, lr), handle)
                result.history.append({"epoch": epoch, "train": float(np.mean(scores)), "val": val, "lr": lr})
                result.epochs_run = epoch
                stop = self.schedule.update(-val)
                meta = {"epoch": epoch, "val_sisnr": f"{val:.6f}"}
                checkpoint.save(self.model, self.out_dir / "last.ckpt", meta)
                if val > result.best_val_sisnr:
                    result.best_val_sisnr = val
                    checkpoint.save(self.model, best_path, meta)
                    result.best_checkpoint = best_path
                if stop:
                    result.stopped_early = True
                    break
                if deadline is not None and time.monotonic() > deadline:
                    break
        result.lr_halvings = self.schedule.halvings
        return result


def train(run: RunConfig, sink: Callable[[str], None] | None = None) -> TrainResult:
    return Trainer(run, sink).fit()
