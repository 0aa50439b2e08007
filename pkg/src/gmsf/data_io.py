"""Synthetic scene pairs, the SFLW scene file format and PLY export.

SFLW layout (all little-endian)::

    b"SFLW" | version u32 | N1 u32 | N2 u32
    source  f32[N1*3] | target f32[N2*3] | flow f32[N1*3]
    occlusion u8[N1] (0/1)
    crc32 u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, ChecksumError, FormatError, InvalidInputError,
                     TruncatedError, VersionError)
from .geometry import PointCloud, ScenePair

SFLW_MAGIC = b"SFLW"
SFLW_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_CRC = struct.Struct("<I")


@dataclass
class SynthConfig:
    n_points: int = 256
    n_rigid_clusters: int = 4
    translation_scale: float = 1.0
    rotation_scale: float = 0.1
    deformation_sigma: float = 0.0
    occlusion_fraction: float = 0.0
    extent: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 1 or self.n_rigid_clusters < 1:
            raise ValueError("n_points and n_rigid_clusters must be positive")
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise ValueError("occlusion_fraction must lie in [0, 1)")
        if min(self.translation_scale, self.rotation_scale,
               self.deformation_sigma) < 0 or self.extent <= 0:
            raise ValueError("scales must be non-negative and extent positive")


def rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def synth_scene(cfg: SynthConfig) -> ScenePair:
    """Clustered points, one rigid motion per cluster, optional occlusion.

    Each cluster is a box of half-size ``extent / 4`` around a random center
    and rotates about that center. Occluded source points lose their
    correspondence; the target is topped back up to ``n_points`` with fresh
    samples from the moved clusters and then shuffled.
    """
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.n_points, cfg.n_rigid_clusters
    half = cfg.extent / 4
    centers = rng.uniform(-cfg.extent, cfg.extent, size=(c, 3))
    labels = rng.integers(0, c, size=n)

    rotations, translations = [], []
    for _ in range(c):
        axis = rng.normal(size=3)
        rotations.append(rotation_matrix(axis, rng.normal() * cfg.rotation_scale))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        translations.append(direction * cfg.translation_scale * rng.uniform(0.5, 1.5))

    def sample(lab):
        return centers[lab] + rng.uniform(-half, half, size=(len(lab), 3))

    def move(pts, lab):
        out = np.empty_like(pts)
        for j in range(c):
            sel = lab == j
            rel = pts[sel] - centers[j]
            out[sel] = rel @ rotations[j].T + centers[j] + translations[j]
        return out

    source = sample(labels)
    flow = move(source, labels) - source
    if cfg.deformation_sigma > 0:
        flow = flow + rng.normal(scale=cfg.deformation_sigma, size=flow.shape)
    occluded = rng.random(n) < cfg.occlusion_fraction

    target = (source + flow)[~occluded]
    n_fill = int(occluded.sum())
    if n_fill:
        fill_labels = rng.integers(0, c, size=n_fill)
        target = np.concatenate([target, move(sample(fill_labels), fill_labels)])
    target = target[rng.permutation(len(target))]

    return ScenePair(
        PointCloud(source.astype(np.float32), ~occluded),
        PointCloud(target.astype(np.float32)),
        flow.astype(np.float32),
        occluded,
    )


def encode_scene(pair: ScenePair, flow=None) -> bytes:
    """Serialize a pair; ``flow`` replaces ``gt_flow`` (predicted-flow output)."""
    n1, n2 = len(pair.source), len(pair.target)
    flow = pair.gt_flow if flow is None else np.asarray(flow)
    if n1 == 0 or n2 == 0:
        raise InvalidInputError("cannot write an empty point cloud")
    if flow.shape != (n1, 3):
        raise InvalidInputError("flow must be N1 x 3")
    body = b"".join([
        _HEADER.pack(SFLW_MAGIC, SFLW_VERSION, n1, n2),
        np.ascontiguousarray(pair.source.points, dtype="<f4").tobytes(),
        np.ascontiguousarray(pair.target.points, dtype="<f4").tobytes(),
        np.ascontiguousarray(flow, dtype="<f4").tobytes(),
        pair.occlusion.astype(np.uint8).tobytes(),
    ])
    return body + _CRC.pack(zlib.crc32(body))


def decode_scene(blob: bytes) -> ScenePair:
    if len(blob) < _HEADER.size + _CRC.size:
        raise TruncatedError("file shorter than the SFLW header")
    magic, version, n1, n2 = _HEADER.unpack_from(blob)
    if magic != SFLW_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {SFLW_MAGIC!r}")
    if version != SFLW_VERSION:
        raise VersionError(f"unsupported SFLW version {version}")
    if n1 == 0 or n2 == 0:
        raise FormatError("SFLW file declares an empty point cloud")
    expected = _HEADER.size + 4 * 3 * (2 * n1 + n2) + n1 + _CRC.size
    if len(blob) != expected:
        raise TruncatedError(f"expected {expected} bytes, found {len(blob)}")
    (crc,) = _CRC.unpack_from(blob, len(blob) - _CRC.size)
    if zlib.crc32(blob[:-_CRC.size]) != crc:
        raise ChecksumError("SFLW checksum mismatch")

    off = _HEADER.size

    def take(count, dtype, shape):
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape)
        off += arr.nbytes
        return arr.astype(arr.dtype.newbyteorder("="))

    source = take(n1 * 3, "<f4", (n1, 3))
    target = take(n2 * 3, "<f4", (n2, 3))
    flow = take(n1 * 3, "<f4", (n1, 3))
    occ = take(n1, np.uint8, (n1,))
    if np.any(occ > 1):
        raise FormatError("occlusion bytes must be 0 or 1")
    occ = occ.astype(bool)
    return ScenePair(PointCloud(source, ~occ), PointCloud(target), flow, occ)


def write_scene(pair: ScenePair, path, flow=None) -> None:
    Path(path).write_bytes(encode_scene(pair, flow))


def read_scene(path) -> ScenePair:
    return decode_scene(Path(path).read_bytes())


MANIFEST = "manifest.json"


def write_dataset(directory, scenes, generator: SynthConfig | None = None) -> list[str]:
    """Write ``scene_XXXX.sflw`` files plus a manifest; returns the file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, pair in enumerate(scenes):
        name = f"scene_{i:04d}.sflw"
        write_scene(pair, directory / name)
        names.append(name)
    manifest = {"files": names,
                "generator": asdict(generator) if generator is not None else None}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return names


def read_dataset(directory) -> list[ScenePair]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if manifest_path.exists():
        names = json.loads(manifest_path.read_text())["files"]
    else:
        names = sorted(p.name for p in directory.glob("*.sflw"))
    if not names:
        raise FormatError(f"no scenes found in {directory}")
    return [read_scene(directory / name) for name in names]


RED, BLUE, GREEN = (255, 0, 0), (0, 0, 255), (0, 255, 0)


def export_ply(source, target, flow, path) -> None:
    """ASCII PLY: source in red, target in blue, source + flow in green."""
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    flow = np.asarray(flow, dtype=np.float64).reshape(-1, 3)
    if flow.shape != source.shape:
        raise InvalidInputError("flow must match the source cloud")
    groups = [(source, RED), (target, BLUE), (source + flow, GREEN)]
    total = sum(len(pts) for pts, _ in groups)
    lines = [
        "ply",
        "format ascii 1.0",
        "comment red=source blue=target green=warped source",
        f"element vertex {total}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for pts, (r, g, b) in groups:
        lines.extend(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}" for x, y, z in pts)
    Path(path).write_text("\n".join(lines) + "\n")
