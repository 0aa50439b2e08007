"""Global-cross transformer: self-attention within each cloud, then
cross-attention between clouds, then a feedforward block."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


class Attention(nn.Module):
    """Scaled dot-product attention with post-norm residual.

    ``out = LN(x + proj(softmax(q(x) k(y)^T / sqrt(d_head)) v(y)))``; ``y``
    defaults to ``x`` (self-attention).
    """

    def __init__(self, d: int, heads: int = 1):
        super().__init__()
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.proj = nn.Linear(d, d)
        self.norm = nn.LayerNorm(d)

    def _split(self, t):
        b, n, _ = t.shape
        return t.view(b, n, self.heads, -1).transpose(1, 2)

    def weights(self, x, y=None):
        y = x if y is None else y
        self._check(x, y)
        q, k = self._split(self.q(x)), self._split(self.k(y))
        scale = 1.0 / math.sqrt(self.d // self.heads)
        return torch.softmax(q @ k.transpose(-1, -2) * scale, dim=-1)

    def _check(self, x, y):
        if x.dim() != 3 or y.dim() != 3:
            raise ValueError("attention expects (B, N, d) inputs")
        if x.shape[-1] != self.d or y.shape[-1] != self.d:
            raise ValueError(
                f"expected width {self.d}, got {x.shape[-1]} and {y.shape[-1]}")
        if x.shape[0] != y.shape[0]:
            raise ValueError("batch sizes differ")

    def forward(self, x, y=None):
        y = x if y is None else y
        att = self.weights(x, y)
        msg = (att @ self._split(self.v(y))).transpose(1, 2).reshape(x.shape)
        return self.norm(x + self.proj(msg))


class FeedForward(nn.Module):
    def __init__(self, d: int, expansion: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(d, expansion * d)
        self.fc2 = nn.Linear(expansion * d, d)
        self.act = nn.ReLU()
        self.norm = nn.LayerNorm(d)

    def forward(self, x):
        return self.norm(x + self.fc2(self.act(self.fc1(x))))


class GctBlock(nn.Module):
    def __init__(self, d: int, heads: int = 1):
        super().__init__()
        self.self_attn = Attention(d, heads)
        self.cross_attn = Attention(d, heads)
        self.ffn = FeedForward(d)

    def forward(self, f1, f2):
        g1, g2 = self.self_attn(f1), self.self_attn(f2)
        # both directions read the self-attended features and share weights
        c1, c2 = self.cross_attn(g1, g2), self.cross_attn(g2, g1)
        return self.ffn(c1), self.ffn(c2)


class GctStack(nn.Module):
    def __init__(self, d: int, layers: int = 10, heads: int = 1):
        super().__init__()
        if layers < 0:
            raise ValueError("layer count must be >= 0")
        self.blocks = nn.ModuleList(GctBlock(d, heads) for _ in range(layers))

    def forward(self, f1, f2):
        for block in self.blocks:
            f1, f2 = block(f1, f2)
        return f1, f2
