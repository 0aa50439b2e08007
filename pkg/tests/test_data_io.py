import hashlib
import re

import numpy as np
import pytest
from plyfile import PlyData

from gmsf.data_io import (SynthConfig, decode_scene, encode_scene, export_ply, read_dataset,
                          read_scene, synth_scene, write_dataset, write_scene)
from gmsf.errors import BadMagicError, ChecksumError, InvalidInputError, TruncatedError, VersionError


def as_set(a):
    return sorted(map(tuple, np.round(a, 6)))


def test_zero_motion_scene():
    pair = synth_scene(SynthConfig(n_points=50, translation_scale=0, rotation_scale=0, seed=1))
    assert np.all(pair.gt_flow == 0)
    assert as_set(pair.target.points) == as_set(pair.source.points)


def test_single_cluster_translation():
    pair = synth_scene(SynthConfig(n_points=40, n_rigid_clusters=1, rotation_scale=0, seed=2))
    t = pair.gt_flow[0]
    np.testing.assert_allclose(pair.gt_flow, np.broadcast_to(t, pair.gt_flow.shape), atol=1e-6)
    assert 0.5 - 1e-6 <= np.linalg.norm(t) <= 1.5 + 1e-6


def test_frozen_fixture_hash():
    blob = encode_scene(synth_scene(SynthConfig(n_points=64, occlusion_fraction=0.2, seed=7)))
    assert hashlib.sha256(blob).hexdigest() == FROZEN_SHA256


FROZEN_SHA256 = "d9939349ba4cd0268d938f2c84e4a47f42f847fcdbe3361b96b8f34a7151d516"


def test_occlusion_rate_within_binomial_bounds():
    f, n = 0.3, 4000
    pair = synth_scene(SynthConfig(n_points=n, occlusion_fraction=f, seed=3))
    sigma = np.sqrt(f * (1 - f) / n)
    assert abs(pair.occlusion.mean() - f) < 3 * sigma
    assert len(pair.target) == n
    assert np.array_equal(pair.source.mask, ~pair.occlusion)


def test_non_occluded_points_land_on_target():
    cfg = SynthConfig(n_points=200, occlusion_fraction=0.25, deformation_sigma=0.02, seed=5)
    pair = synth_scene(cfg)
    warped = (pair.source.points + pair.gt_flow)[~pair.occlusion]
    d = np.sqrt(((warped[:, None] - pair.target.points[None]) ** 2).sum(-1)).min(1)
    assert d.max() < 1e-5


def test_scene_round_trip(tmp_path):
    pair = synth_scene(SynthConfig(n_points=30, occlusion_fraction=0.3, seed=9))
    path = tmp_path / "a.sflw"
    write_scene(pair, path)
    back = read_scene(path)
    for a, b in [(back.source.points, pair.source.points), (back.target.points, pair.target.points),
                 (back.gt_flow, pair.gt_flow), (back.occlusion, pair.occlusion)]:
        assert np.array_equal(a, b)
    assert encode_scene(back) == path.read_bytes()


def test_scene_corruption_detected():
    blob = encode_scene(synth_scene(SynthConfig(n_points=10, seed=1)))
    with pytest.raises(TruncatedError):
        decode_scene(blob[:-7])
    with pytest.raises(TruncatedError):
        decode_scene(blob[:10])
    flipped = bytearray(blob)
    flipped[40] ^= 0x01
    with pytest.raises(ChecksumError):
        decode_scene(bytes(flipped))
    with pytest.raises(BadMagicError):
        decode_scene(b"XXXX" + blob[4:])
    with pytest.raises(VersionError):
        decode_scene(blob[:4] + (2).to_bytes(4, "little") + blob[8:])


def test_empty_scene_rejected_at_write():
    pair = synth_scene(SynthConfig(n_points=3, seed=0))
    pair.source.points = np.zeros((0, 3), np.float32)
    with pytest.raises(InvalidInputError):
        encode_scene(pair, flow=np.zeros((0, 3)))


def test_dataset_manifest(tmp_path):
    cfg = SynthConfig(n_points=12)
    scenes = [synth_scene(SynthConfig(n_points=12, seed=s)) for s in range(3)]
    names = write_dataset(tmp_path, scenes, cfg)
    assert names == ["scene_0000.sflw", "scene_0001.sflw", "scene_0002.sflw"]
    back = read_dataset(tmp_path)
    assert len(back) == 3
    assert np.array_equal(back[2].gt_flow, scenes[2].gt_flow)


def test_ply_export(tmp_path):
    rng = np.random.default_rng(0)
    src, tgt = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    path = tmp_path / "v.ply"
    export_ply(src, tgt, np.zeros((5, 3)), path)
    text = path.read_text()
    header = text.split("end_header\n")[0]
    assert re.search(r"^element vertex 17$", header, re.M)
    ply = PlyData.read(str(path))
    v = ply["vertex"]
    assert v.count == 17
    xyz = np.stack([v["x"], v["y"], v["z"]], 1)
    rgb = np.stack([v["red"], v["green"], v["blue"]], 1)
    assert np.all(rgb[:5] == [255, 0, 0]) and np.all(rgb[5:12] == [0, 0, 255])
    assert np.all(rgb[12:] == [0, 255, 0])
    np.testing.assert_array_equal(xyz[12:], xyz[:5])
