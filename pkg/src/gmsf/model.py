"""The full scene-flow network: tokenizer -> global-cross transformer -> matcher."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import TrainConfig
from .gct import GctStack
from .matcher import Matcher
from .tokenizer import Tokenizer


class GMSF(nn.Module):
    def __init__(self, d=128, k=16, gct_layers=10, heads=1, backbone="edgeconv",
                 local_transformer=True, edge_widths=(32, 64), dynamic_graph=True):
        super().__init__()
        self.tokenizer = Tokenizer(d, k, backbone, local_transformer,
                                   edge_widths, dynamic_graph)
        self.gct = GctStack(d, gct_layers, heads)
        self.matcher = Matcher(d)

    @classmethod
    def from_config(cls, cfg: TrainConfig, seed: int | None = None) -> "GMSF":
        """Build with parameters drawn from a private torch RNG seeded by ``seed``."""
        seed = cfg.seed if seed is None else seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return cls(cfg.d, cfg.k, cfg.gct_layers, cfg.heads, cfg.backbone,
                       cfg.local_transformer, cfg.edge_widths, cfg.dynamic_graph)

    def features(self, p1, p2):
        if p1.shape == p2.shape:
            # one pass so batch norm sees both clouds together
            tokens = self.tokenizer(torch.cat([p1, p2], dim=0))
            x1, x2 = tokens.split(p1.shape[0], dim=0)
        else:
            x1, x2 = self.tokenizer(p1), self.tokenizer(p2)
        return self.gct(x1, x2)

    def forward(self, p1: torch.Tensor, p2: torch.Tensor) -> dict:
        """``p1`` ``(B, N1, 3)``, ``p2`` ``(B, N2, 3)``; returns flows and matrices."""
        squeeze = p1.dim() == 2
        if squeeze:
            p1, p2 = p1.unsqueeze(0), p2.unsqueeze(0)
        f1, f2 = self.features(p1, p2)
        out = self.matcher(f1, f2, p1, p2)
        out["f1"], out["f2"] = f1, f2
        if squeeze:
            out = {key: val.squeeze(0) for key, val in out.items()}
        return out
