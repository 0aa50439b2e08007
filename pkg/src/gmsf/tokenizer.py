"""Point tokenization: EdgeConv / PointNet / MLP backbones and a local
point transformer over the coordinate kNN graph.

All tensors are batched: points ``(B, N, 3)``, features ``(B, N, C)`` and
neighbor indices ``(B, N, k)``.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .errors import NumericError
from .geometry import knn_indices

BACKBONES = ("edgeconv", "pointnet", "mlp")


def knn_graph(x: torch.Tensor, k: int) -> torch.Tensor:
    """Batched kNN on rows of ``x`` (no gradient flows through the graph)."""
    arr = x.detach().cpu().numpy()
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite features reached the kNN graph")
    idx = np.stack([knn_indices(a, k) for a in arr])
    return torch.from_numpy(idx).to(x.device)


def gather_neighbors(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """``(B, N, C)`` x ``(B, M, k)`` -> ``(B, M, k, C)``."""
    batch = torch.arange(x.shape[0], device=x.device).view(-1, 1, 1)
    return x[batch, idx]


def _check_graph(x: torch.Tensor, idx: torch.Tensor):
    if x.dim() != 3 or idx.dim() != 3 or x.shape[:2] != idx.shape[:2]:
        raise ValueError(
            f"features {tuple(x.shape)} and graph {tuple(idx.shape)} disagree")


class EdgeConv(nn.Module):
    """One EdgeConv layer: ``max_j h(x_i, x_j - x_i)`` with h = linear, BN, ReLU."""

    def __init__(self, c_in: int, c_out: int, batch_norm: bool = True):
        super().__init__()
        self.c_in = c_in
        self.linear = nn.Linear(2 * c_in, c_out)
        # torch momentum 0.1 == running stats keep 0.9 of their old value
        self.bn = nn.BatchNorm1d(c_out, momentum=0.1) if batch_norm else None
        self.act = nn.ReLU()

    def edge_features(self, x, idx):
        nbr = gather_neighbors(x, idx)
        center = x.unsqueeze(2).expand_as(nbr)
        return torch.cat([center, nbr - center], dim=-1)

    def forward(self, x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        _check_graph(x, idx)
        if x.shape[-1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {x.shape[-1]}")
        h = self.linear(self.edge_features(x, idx))
        if self.bn is not None:
            shape = h.shape
            h = self.bn(h.reshape(-1, shape[-1])).reshape(shape)
        return self.act(h).amax(dim=2)


class DGCNN(nn.Module):
    """Stacked EdgeConv layers with the graph rebuilt in feature space."""

    def __init__(self, widths=(32, 64, 128), k: int = 16, dynamic: bool = True,
                 batch_norm: bool = True):
        super().__init__()
        self.k = k
        self.dynamic = dynamic
        chans = [3, *widths]
        self.layers = nn.ModuleList(
            EdgeConv(a, b, batch_norm) for a, b in zip(chans[:-1], chans[1:]))

    def forward(self, points, graph=None):
        x = points
        idx = knn_graph(points, self.k) if graph is None else graph
        for i, layer in enumerate(self.layers):
            if i > 0 and self.dynamic:
                idx = knn_graph(x, self.k)
            x = layer(x, idx)
        return x


class _PointMLP(nn.Sequential):
    # shared per-point linear + BN + ReLU stack
    def __init__(self, chans):
        mods = []
        for a, b in zip(chans[:-1], chans[1:]):
            mods += [nn.Linear(a, b), _PointBN(b), nn.ReLU()]
        super().__init__(*mods)


class _PointBN(nn.BatchNorm1d):
    def forward(self, x):
        shape = x.shape
        return super().forward(x.reshape(-1, shape[-1])).reshape(shape)


class MLPBackbone(nn.Module):
    """Plain per-point MLP, no neighborhood information."""

    def __init__(self, widths=(32, 64, 128)):
        super().__init__()
        self.mlp = _PointMLP([3, *widths])

    def forward(self, points, graph=None):
        return self.mlp(points)


class PointNetBackbone(nn.Module):
    """Per-point MLP whose output is concatenated with its global max pool."""

    def __init__(self, widths=(32, 64, 128)):
        super().__init__()
        *hidden, d = widths
        self.local = _PointMLP([3, *hidden])
        self.head = _PointMLP([2 * hidden[-1], d])

    def forward(self, points, graph=None):
        local = self.local(points)
        pooled = local.amax(dim=1, keepdim=True).expand_as(local)
        return self.head(torch.cat([local, pooled], dim=-1))


class LocalPointTransformer(nn.Module):
    """Vector attention over each point's kNN neighborhood.

    ``a_ij = softmax_j(gamma(phi(x_i) - psi(x_j) + delta_ij))`` per channel,
    ``y_i = sum_j a_ij * (alpha(x_j) + delta_ij)``, ``delta_ij = pos(p_i - p_j)``,
    output ``x_i + out(y_i)``.
    """

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.phi = nn.Linear(d, d, bias=False)
        self.psi = nn.Linear(d, d, bias=False)
        self.alpha = nn.Linear(d, d, bias=False)
        self.pos = nn.Sequential(nn.Linear(3, d), nn.ReLU(), nn.Linear(d, d))
        self.gamma = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, d))
        self.out = nn.Linear(d, d)

    def attention(self, x, points, idx):
        """Return ``(weights, values)``, both ``(B, N, k, d)``."""
        _check_graph(x, idx)
        if x.shape[-1] != self.d:
            raise ValueError(f"expected width {self.d}, got {x.shape[-1]}")
        if points.shape[:2] != x.shape[:2]:
            raise ValueError("points and features disagree on N")
        rel = points.unsqueeze(2) - gather_neighbors(points, idx)
        delta = self.pos(rel)
        q = self.phi(x).unsqueeze(2)
        k = gather_neighbors(self.psi(x), idx)
        v = gather_neighbors(self.alpha(x), idx)
        weights = torch.softmax(self.gamma(q - k + delta), dim=2)
        return weights, v + delta

    def forward(self, x, points, idx):
        weights, values = self.attention(x, points, idx)
        return x + self.out((weights * values).sum(dim=2))


class Tokenizer(nn.Module):
    def __init__(self, d: int = 128, k: int = 16, backbone: str = "edgeconv",
                 local_transformer: bool = True, widths=(32, 64),
                 dynamic_graph: bool = True):
        super().__init__()
        if backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {backbone!r}; choose from {BACKBONES}")
        self.k = k
        widths = (*widths, d)
        if backbone == "edgeconv":
            self.backbone = DGCNN(widths, k, dynamic_graph)
        elif backbone == "pointnet":
            self.backbone = PointNetBackbone(widths)
        else:
            self.backbone = MLPBackbone(widths)
        self.local = LocalPointTransformer(d) if local_transformer else None

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        needs_graph = self.local is not None or isinstance(self.backbone, DGCNN)
        graph = knn_graph(points, self.k) if needs_graph else None
        x = self.backbone(points, graph)
        if self.local is not None:
            x = self.local(x, points, graph)
        return x
