"""Point-cloud containers, kNN graphs, sampling and flip augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .rng import Xoshiro256

# Upper bound on query_chunk * n_points * n_dims elements held at once by knn.
_KNN_BLOCK = 1 << 22


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"points must be N x 3, got shape {arr.shape}")
    return arr


@dataclass
class PointCloud:
    points: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.points = _as_points(self.points)
        n = len(self.points)
        if n < 1:
            raise InvalidInputError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("point coordinates must be finite")
        if self.mask is None:
            self.mask = np.ones(n, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (n,):
            raise InvalidInputError("mask length must equal the number of points")

    def __len__(self):
        return len(self.points)


@dataclass
class NeighborGraph:
    indices: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[-1]


@dataclass
class ScenePair:
    source: PointCloud
    target: PointCloud
    gt_flow: np.ndarray
    occlusion: np.ndarray = field(default=None)

    def __post_init__(self):
        n1 = len(self.source)
        self.gt_flow = np.asarray(self.gt_flow)
        if self.gt_flow.shape != (n1, 3):
            raise InvalidInputError("gt_flow must be N1 x 3")
        if not np.all(np.isfinite(self.gt_flow)):
            raise InvalidInputError("gt_flow must be finite")
        if self.occlusion is None:
            self.occlusion = np.zeros(n1, dtype=bool)
        self.occlusion = np.asarray(self.occlusion, dtype=bool)
        if self.occlusion.shape != (n1,):
            raise InvalidInputError("occlusion length must equal N1")


def pairwise_sq_dists(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from explicit differences.

    Differences rather than the ||a||^2 + ||b||^2 - 2ab expansion: equal
    distances stay bit-equal, which the index tie-break relies on.
    """
    diff = query[:, None, :] - ref[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest rows of ``x`` for every row, self excluded.

    Works for any feature width. Rows are sorted by ascending distance with
    ties broken by ascending index.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise InvalidInputError("knn expects an N x C array")
    n = len(x)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N, got k={k}, N={n}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("knn input must be finite")
    chunk = max(1, _KNN_BLOCK // max(1, n * x.shape[1]))
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d = pairwise_sq_dists(x[start:stop], x)
        rows = np.arange(stop - start)
        d[rows, rows + start] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def knn(points: PointCloud | np.ndarray, k: int) -> NeighborGraph:
    pts = points.points if isinstance(points, PointCloud) else _as_points(points)
    return NeighborGraph(knn_indices(pts, k))


def random_sample(pair: ScenePair, n: int, seed: int | Xoshiro256) -> ScenePair:
    """Subsample ``n`` source and ``n`` target points without replacement.

    Source rows, gt_flow and occlusion share one index set; the target uses
    an independent set drawn next from the same stream.
    """
    n1, n2 = len(pair.source), len(pair.target)
    if n > min(n1, n2):
        raise ValueError(f"cannot sample {n} points from clouds of size {n1}, {n2}")
    if n < 1:
        raise ValueError("sample size must be positive")
    rng = seed if isinstance(seed, Xoshiro256) else Xoshiro256(seed)
    src_idx = np.asarray(rng.sample(n1, n), dtype=np.int64)
    tgt_idx = np.asarray(rng.sample(n2, n), dtype=np.int64)
    source = PointCloud(pair.source.points[src_idx], pair.source.mask[src_idx])
    target = PointCloud(pair.target.points[tgt_idx], pair.target.mask[tgt_idx])
    return ScenePair(source, target, pair.gt_flow[src_idx], pair.occlusion[src_idx])


def flip_axes(pair: ScenePair, flip_x: bool, flip_y: bool) -> ScenePair:
    sign = np.array([-1.0 if flip_x else 1.0, -1.0 if flip_y else 1.0, 1.0])
    if not (flip_x or flip_y):
        return replace(pair)
    def f(a):
        return (a * sign).astype(a.dtype, copy=False)
    return ScenePair(
        PointCloud(f(pair.source.points), pair.source.mask.copy()),
        PointCloud(f(pair.target.points), pair.target.mask.copy()),
        f(pair.gt_flow),
        pair.occlusion.copy(),
    )


def draw_flips(rng: Xoshiro256) -> tuple[bool, bool]:
    return rng.random() < 0.5, rng.random() < 0.5


def augment_flip(pair: ScenePair, seed: int | Xoshiro256) -> ScenePair:
    """Negate x and/or y (each with probability 0.5) of points and flow."""
    rng = seed if isinstance(seed, Xoshiro256) else Xoshiro256(seed)
    flip_x, flip_y = draw_flips(rng)
    return flip_axes(pair, flip_x, flip_y)
