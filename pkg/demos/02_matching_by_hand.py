"""
Matching without learning
=========================

The matcher turns features into flow: a softmax over feature similarity
picks a soft correspondence in the target, and a second softmax over the
source smooths the result. Feeding hand-made features shows both halves.
"""
import numpy as np
import torch

from gmsf import match_flow, smooth_flow
from gmsf.matcher import cross_similarity

rng = np.random.default_rng(0)
p1 = torch.from_numpy(rng.uniform(-1, 1, size=(6, 3)))
shift = torch.tensor([0.5, 0.0, -0.2], dtype=torch.float64)
p2 = (p1 + shift)[torch.randperm(6, generator=torch.Generator().manual_seed(1))]

# Features that identify each point exactly: one-hot codes, scaled up so
# the softmax is nearly a hard assignment.
code = torch.eye(6, dtype=torch.float64) * 12
order = torch.cdist(p2, p1 + shift).argmin(1)
f1, f2 = code, code[order]

m_cross = cross_similarity(f1, f2)
print("largest weight per row:", np.round(m_cross.max(1).values.numpy(), 4))
flow = match_flow(m_cross, p1, p2)
print("error of matched flow:", float((flow - shift).abs().max()))

# Smoothing with any row-stochastic matrix leaves a uniform motion alone,
# and pulls a corrupted row back toward its neighbours.
m_self = torch.softmax(torch.from_numpy(rng.normal(size=(6, 6))), dim=1)
print("constant flow kept:", bool(torch.allclose(smooth_flow(m_self, flow), flow)))
noisy = flow.clone()
noisy[0] += 1.0
print("row 0 error before/after smoothing:",
      float((noisy[0] - shift).norm()), float((smooth_flow(m_self, noisy)[0] - shift).norm()))
