import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import seeded
from gmsf.matcher import (Matcher, SelfSimilarity, cross_similarity, match_flow,
                          self_similarity, smooth_flow)
import oracles


def t(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def test_cross_similarity_hand_values():
    m = cross_similarity(t([[1, 0], [0, 1]]), t([[1, 0], [0, 1]]))
    e = math.exp(1 / math.sqrt(2))
    np.testing.assert_allclose(m.numpy(), [[e / (e + 1), 1 / (e + 1)], [1 / (e + 1), e / (e + 1)]])
    np.testing.assert_allclose(m[0].numpy(), [0.6698, 0.3302], atol=5e-5)


def test_cross_similarity_zero_features_uniform():
    m = cross_similarity(torch.zeros(3, 4, dtype=torch.float64), t(np.random.rand(5, 4)))
    torch.testing.assert_close(m, torch.full((3, 5), 0.2, dtype=torch.float64))


def test_cross_similarity_saturates_to_one_hot():
    f2 = torch.eye(4, dtype=torch.float64)
    f1 = 1e3 * f2[[2, 0, 3]]
    m = cross_similarity(f1, f2)
    torch.testing.assert_close(m, f2[[2, 0, 3]])
    assert torch.isfinite(m).all()


def test_cross_similarity_width_mismatch():
    with pytest.raises(ValueError):
        cross_similarity(torch.zeros(2, 3), torch.zeros(2, 4))


def test_self_similarity_identity_projection_saturates():
    mod = SelfSimilarity(3).double()
    with torch.no_grad():
        mod.w_q.weight.copy_(torch.eye(3))
        mod.w_k.weight.copy_(torch.eye(3))
    m = self_similarity(100 * torch.eye(3, dtype=torch.float64), mod)
    torch.testing.assert_close(m, torch.eye(3, dtype=torch.float64))


def test_self_similarity_zero_query_uniform():
    mod = seeded(SelfSimilarity, 4)
    with torch.no_grad():
        mod.w_q.weight.zero_()
    m = self_similarity(t(np.random.rand(5, 4)), mod)
    torch.testing.assert_close(m, torch.full((5, 5), 0.2, dtype=torch.float64))


def test_self_similarity_shape_error():
    with pytest.raises(ValueError):
        self_similarity(torch.zeros(3, 5), SelfSimilarity(4))


def test_match_flow_cases():
    p = t(np.random.rand(4, 3))
    torch.testing.assert_close(match_flow(torch.eye(4, dtype=torch.float64), p, p),
                               torch.zeros(4, 3, dtype=torch.float64))
    p2 = t(np.random.rand(5, 3))
    uni = torch.full((4, 5), 0.2, dtype=torch.float64)
    torch.testing.assert_close(match_flow(uni, p, p2), p2.mean(0) - p)
    m = t([[0.7, 0.3], [0.2, 0.8]])
    flow = match_flow(m, torch.zeros(2, 3, dtype=torch.float64), t([[1, 0, 0], [0, 1, 0]]))
    torch.testing.assert_close(flow, t([[0.7, 0.3, 0], [0.2, 0.8, 0]]))
    with pytest.raises(ValueError):
        match_flow(m, p, p2)


def test_smooth_flow_cases():
    v = t(np.random.rand(3, 3))
    torch.testing.assert_close(smooth_flow(torch.eye(3, dtype=torch.float64), v), v)
    half = torch.full((2, 2), 0.5, dtype=torch.float64)
    out = smooth_flow(half, t([[1, 0, 0], [0, 0, 0]]))
    torch.testing.assert_close(out, t([[0.5, 0, 0], [0.5, 0, 0]]))
    with pytest.raises(ValueError):
        smooth_flow(half, v)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_smooth_flow_constant_fixed_point(n, seed):
    rng = np.random.default_rng(seed)
    m = torch.softmax(t(rng.normal(size=(n, n)) * 5), dim=-1)
    c = t(rng.normal(size=3))
    out = smooth_flow(m, c.expand(n, 3))
    torch.testing.assert_close(out, c.expand(n, 3), atol=1e-6, rtol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 10**6))
def test_match_endpoint_in_target_hull(n1, n2, seed):
    rng = np.random.default_rng(seed)
    f1, f2 = t(rng.normal(size=(n1, 4))), t(rng.normal(size=(n2, 4)))
    p1, p2 = t(rng.normal(size=(n1, 3))), t(rng.normal(size=(n2, 3)))
    m = cross_similarity(f1, f2)
    end = p1 + match_flow(m, p1, p2)
    # convex combination: bounded by the target's coordinate-wise range
    assert torch.all(end >= p2.min(0).values - 1e-12)
    assert torch.all(end <= p2.max(0).values + 1e-12)
    torch.testing.assert_close(end, m @ p2)


def test_target_permutation_invariance():
    rng = np.random.default_rng(3)
    m = torch.softmax(t(rng.normal(size=(4, 6))), -1)
    p1, p2 = t(rng.normal(size=(4, 3))), t(rng.normal(size=(6, 3)))
    perm = torch.from_numpy(rng.permutation(6))
    torch.testing.assert_close(match_flow(m[:, perm], p1, p2[perm]), match_flow(m, p1, p2))


def test_matcher_matches_loop_oracle():
    mat = seeded(Matcher, 8, seed=4)
    rng = np.random.default_rng(5)
    f1, f2 = rng.normal(size=(16, 8)), rng.normal(size=(16, 8))
    p1, p2 = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
    out = mat(t(f1), t(f2), t(p1), t(p2))
    ref = oracles.matcher(mat.self_sim, f1, f2, p1, p2)
    for key, r in zip(("m_cross", "m_self", "flow_inter", "flow"), ref):
        np.testing.assert_allclose(out[key].detach().numpy(), r, atol=1e-6, rtol=0)
