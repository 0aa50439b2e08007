"""AdamW with decoupled weight decay and the one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import NumericError


@dataclass
class OptimState:
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimState":
        return cls({n: torch.zeros_like(p) for n, p in params.items()},
                   {n: torch.zeros_like(p) for n, p in params.items()})


@torch.no_grad()
def adamw_step(params: dict, grads: dict, state: OptimState, lr: float,
               weight_decay: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
               no_decay=frozenset()) -> None:
    """In-place ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)``.

    Parameters named in ``no_decay`` skip the decay term. A non-finite
    gradient aborts before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        m = state.exp_avg[name]
        v = state.exp_avg_sq[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        update = (m / c1) / ((v / c2).sqrt() + eps)
        wd = 0.0 if name in no_decay else weight_decay
        if wd:
            update = update + wd * p
        p.sub_(lr * update)


def no_decay_names(model: nn.Module) -> frozenset:
    """Parameter paths belonging to batch-norm or layer-norm modules."""
    norms = (nn.BatchNorm1d, nn.LayerNorm)
    out = set()
    for mod_name, mod in model.named_modules():
        if isinstance(mod, norms):
            for p_name, _ in mod.named_parameters(recurse=False):
                out.add(f"{mod_name}.{p_name}" if mod_name else p_name)
    return frozenset(out)


def onecycle_lr(step: int, total_steps: int, lr_max: float, warmup_frac: float = 0.3,
                div_start: float = 25.0, div_final: float = 1e4) -> float:
    """Linear warmup from ``lr_max/div_start`` to ``lr_max`` over the first
    ``warmup_frac`` of steps, then cosine annealing to ``lr_max/div_final``
    at step ``total_steps - 1``."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    lr_start, lr_end = lr_max / div_start, lr_max / div_final
    last = total_steps - 1
    peak = warmup_frac * last
    if last == 0:
        return lr_start
    if step <= peak:
        return lr_start + (lr_max - lr_start) * (step / peak)
    progress = (step - peak) / (last - peak)
    return lr_end + (lr_max - lr_end) * 0.5 * (1.0 + math.cos(math.pi * progress))
