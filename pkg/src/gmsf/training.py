"""Gradients, the training loop, evaluation and checkpoint round trips."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint
from .config import TrainConfig
from .errors import NumericError, ShapeMismatchError
from .evaluation import MetricsAccumulator, robust_loss
from .geometry import ScenePair, augment_flip, random_sample
from .model import GMSF
from .optim import OptimState, adamw_step, no_decay_names, onecycle_lr
from .rng import Xoshiro256

log = logging.getLogger(__name__)


def grad(loss_fn, params, batch=None) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of the scalar ``loss_fn(batch)`` for every parameter.

    ``params`` is a module or a ``{path: tensor}`` map. Parameters the loss
    does not depend on get zero gradients.
    """
    if isinstance(params, nn.Module):
        params = dict(params.named_parameters())
    loss = loss_fn(batch) if batch is not None else loss_fn()
    names = list(params)
    tensors = [params[n] for n in names]
    if not loss.requires_grad:
        return {n: torch.zeros_like(t) for n, t in zip(names, tensors)}
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return {n: torch.zeros_like(t) if g is None else g
            for n, t, g in zip(names, tensors, grads)}


@contextlib.contextmanager
def reference_mode():
    """Single-threaded torch kernels so reductions run in a fixed order."""
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(threads)


class TrainingDiverged(NumericError):
    def __init__(self, message, last_good: bytes | None):
        super().__init__(message)
        self.last_good = last_good


def stack_pairs(pairs, dtype=torch.float32):
    def t(arrs):
        return torch.from_numpy(np.stack(arrs)).to(dtype)
    return (t([p.source.points for p in pairs]), t([p.target.points for p in pairs]),
            t([p.gt_flow for p in pairs]),
            torch.from_numpy(np.stack([p.occlusion for p in pairs])))


@torch.no_grad()
def predict(model: GMSF, pair: ScenePair) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        dtype = next(model.parameters()).dtype
        p1 = torch.from_numpy(np.asarray(pair.source.points)).to(dtype)
        p2 = torch.from_numpy(np.asarray(pair.target.points)).to(dtype)
        return model(p1, p2)["flow"].numpy()
    finally:
        model.train(was_training)


def evaluate(model, dataset) -> dict:
    """``{"all": Metrics, "non_occ": Metrics}`` pooled over every point."""
    acc = MetricsAccumulator()
    for pair in dataset:
        acc.add(predict(model, pair), pair.gt_flow, pair.occlusion)
    return acc.result()


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float

    def line(self) -> str:
        return f"step={self.step} lr={self.lr:.9e} loss={self.loss:.9e}"


class Trainer:
    """Owns the model, optimizer state and data stream of one training run."""

    def __init__(self, cfg: TrainConfig, dataset=(), model: GMSF | None = None):
        for i, pair in enumerate(dataset):
            if min(len(pair.source), len(pair.target)) < cfg.n_points:
                raise ValueError(f"scene {i} has fewer than n_points={cfg.n_points} points")
        self.cfg = cfg
        self.dataset = list(dataset)
        self.model = GMSF.from_config(cfg) if model is None else model
        self.params = dict(self.model.named_parameters())
        self.state = OptimState.zeros_like(self.params)
        self.no_decay = no_decay_names(self.model)
        self.rng = Xoshiro256(cfg.seed)
        self.step = 0
        self.records: list[StepRecord] = []

    def next_batch(self):
        if not self.dataset:
            raise ValueError("training needs a non-empty dataset")
        pairs = []
        for _ in range(self.cfg.batch_size):
            pair = self.dataset[self.rng.randbelow(len(self.dataset))]
            pair = random_sample(pair, self.cfg.n_points, self.rng)
            if self.cfg.augment:
                pair = augment_flip(pair, self.rng)
            pairs.append(pair)
        return stack_pairs(pairs)

    def loss(self, batch):
        p1, p2, gt, occ = batch
        out = self.model(p1, p2)
        mask = ~occ if self.cfg.loss_valid_only else None
        return robust_loss(out["flow"], gt, mask, mean=self.cfg.loss_mean)

    def train_step(self) -> StepRecord:
        cfg = self.cfg
        lr = onecycle_lr(self.step, cfg.total_steps, cfg.lr_max, cfg.warmup_frac,
                         cfg.div_start, cfg.div_final)
        self.model.train()
        batch = self.next_batch()
        loss = self.loss(batch)
        if not torch.isfinite(loss):
            raise NumericError(f"loss became {loss.item()} at step {self.step}")
        grads = self._grads(loss)
        adamw_step(self.params, grads, self.state, lr, cfg.weight_decay,
                   no_decay=self.no_decay)
        rec = StepRecord(self.step, lr, loss.item())
        self.records.append(rec)
        self.step += 1
        return rec

    def _grads(self, loss):
        names = list(self.params)
        gs = torch.autograd.grad(loss, [self.params[n] for n in names], allow_unused=True)
        return {n: torch.zeros_like(self.params[n]) if g is None else g
                for n, g in zip(names, gs)}

    def run(self, ckpt_path=None, on_record=None, eval_set=None):
        """Train until ``total_steps``; checkpoints and evals per the config."""
        cfg = self.cfg
        if self.step < cfg.total_steps and not self.dataset:
            raise ValueError("training needs a non-empty dataset")
        last_good = self.to_bytes()
        if ckpt_path is not None and self.step == 0:
            self.save(ckpt_path)
        while self.step < cfg.total_steps:
            try:
                rec = self.train_step()
            except NumericError as exc:
                raise TrainingDiverged(str(exc), last_good) from exc
            if on_record is not None:
                on_record(rec.line())
            done = self.step == cfg.total_steps
            if cfg.ckpt_every and (self.step % cfg.ckpt_every == 0 or done):
                last_good = self.to_bytes()
                if ckpt_path is not None:
                    self.save(ckpt_path)
            elif done and ckpt_path is not None:
                self.save(ckpt_path)
            if cfg.eval_every and eval_set is not None and (
                    self.step % cfg.eval_every == 0 or done):
                metrics = evaluate(self.model, eval_set)
                if on_record is not None:
                    for split, m in metrics.items():
                        if m is not None:
                            on_record(f"step={self.step} eval split={split} {m.to_record()}")
        return self.records

    # checkpointing

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self.model.state_dict().items():
            out[f"model/{name}"] = t.detach().cpu().numpy()
        for name in self.params:
            out[f"optim/exp_avg/{name}"] = self.state.exp_avg[name].cpu().numpy()
            out[f"optim/exp_avg_sq/{name}"] = self.state.exp_avg_sq[name].cpu().numpy()
        out["optim/step"] = np.array(self.state.step, dtype=np.int64)
        out["train/step"] = np.array(self.step, dtype=np.int64)
        out["train/rng"] = np.array(self.rng.getstate(), dtype=np.uint64)
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        """Restore everything or nothing: all shapes are checked first."""
        model_state = self.model.state_dict()
        expected = {f"model/{n}": tuple(t.shape) for n, t in model_state.items()}
        for name in self.params:
            shape = tuple(self.params[name].shape)
            expected[f"optim/exp_avg/{name}"] = shape
            expected[f"optim/exp_avg_sq/{name}"] = shape
        expected.update({"optim/step": (), "train/step": (), "train/rng": (4,)})
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        if missing or extra:
            raise ShapeMismatchError(
                f"checkpoint does not fit model: missing {sorted(missing)[:5]}, "
                f"unexpected {sorted(extra)[:5]}")
        for path, shape in expected.items():
            if tuple(tensors[path].shape) != shape:
                raise ShapeMismatchError(
                    f"{path}: checkpoint shape {tuple(tensors[path].shape)} != model {shape}")

        self.model.load_state_dict({
            n: torch.from_numpy(np.array(tensors[f"model/{n}"])).to(t.dtype)
            for n, t in model_state.items()})
        self.params = dict(self.model.named_parameters())
        self.state = OptimState(
            {n: torch.from_numpy(np.array(tensors[f"optim/exp_avg/{n}"])) for n in self.params},
            {n: torch.from_numpy(np.array(tensors[f"optim/exp_avg_sq/{n}"])) for n in self.params},
            int(tensors["optim/step"]))
        self.step = int(tensors["train/step"])
        self.rng.setstate([int(w) for w in tensors["train/rng"]])

    def to_bytes(self) -> bytes:
        return checkpoint.encode(self.cfg.to_json(), self.state_tensors())

    def save(self, path) -> None:
        checkpoint.save(path, self.cfg.to_json(), self.state_tensors())

    @classmethod
    def from_checkpoint(cls, path, dataset, cfg: TrainConfig | None = None) -> "Trainer":
        """Rebuild from a checkpoint; ``cfg`` (if given) must fit its tensors."""
        cfg_json, tensors = checkpoint.load(path)
        trainer = cls(cfg or TrainConfig.from_json(cfg_json), dataset or ())
        trainer.load_state_tensors(tensors)
        return trainer


def load_model(path, cfg: TrainConfig | None = None) -> GMSF:
    return Trainer.from_checkpoint(path, None, cfg).model


def train(cfg: TrainConfig, dataset, ckpt_path=None, on_record=None, eval_set=None):
    """Run a full training job; returns ``(model, records)``."""
    with reference_mode():
        trainer = Trainer(cfg, dataset)
        records = trainer.run(ckpt_path, on_record, eval_set)
    return trainer.model, records
