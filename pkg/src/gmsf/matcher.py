"""Global matching: softmax similarity matrices turned into scene flow."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def _softmax_rows(logits: torch.Tensor) -> torch.Tensor:
    # row max subtracted before exponentiation
    shifted = logits - logits.amax(dim=-1, keepdim=True)
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def _check_width(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"feature widths differ: {a.shape[-1]} vs {b.shape[-1]}")


def cross_similarity(f1: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
    """Row-stochastic ``softmax(F1 F2^T / sqrt(d))``, shape ``(..., N1, N2)``."""
    _check_width(f1, f2)
    d = f1.shape[-1]
    return _softmax_rows(f1 @ f2.transpose(-1, -2) / math.sqrt(d))


class SelfSimilarity(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)

    def forward(self, f1):
        return self_similarity(f1, self)


def self_similarity(f1: torch.Tensor, params: SelfSimilarity) -> torch.Tensor:
    """Row-stochastic ``softmax(W_q(F1) W_k(F1)^T / sqrt(d))``."""
    if f1.shape[-1] != params.d:
        raise ValueError(f"expected width {params.d}, got {f1.shape[-1]}")
    q, k = params.w_q(f1), params.w_k(f1)
    return _softmax_rows(q @ k.transpose(-1, -2) / math.sqrt(params.d))


def match_flow(m_cross: torch.Tensor, p1: torch.Tensor, p2: torch.Tensor) -> torch.Tensor:
    """Flow to the similarity-weighted target centroid: ``M P2 - P1``."""
    if m_cross.shape[-2] != p1.shape[-2] or m_cross.shape[-1] != p2.shape[-2]:
        raise ValueError(
            f"matching matrix {tuple(m_cross.shape)} does not fit clouds "
            f"{tuple(p1.shape)} / {tuple(p2.shape)}")
    return m_cross @ p2 - p1


def smooth_flow(m_self: torch.Tensor, v_inter: torch.Tensor) -> torch.Tensor:
    if m_self.shape[-1] != m_self.shape[-2] or m_self.shape[-1] != v_inter.shape[-2]:
        raise ValueError(
            f"self similarity {tuple(m_self.shape)} does not fit flow {tuple(v_inter.shape)}")
    return m_self @ v_inter


class Matcher(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.self_sim = SelfSimilarity(d)

    def forward(self, f1, f2, p1, p2):
        m_cross = cross_similarity(f1, f2)
        m_self = self_similarity(f1, self.self_sim)
        v_inter = match_flow(m_cross, p1, p2)
        return {
            "m_cross": m_cross,
            "m_self": m_self,
            "flow_inter": v_inter,
            "flow": smooth_flow(m_self, v_inter),
        }
