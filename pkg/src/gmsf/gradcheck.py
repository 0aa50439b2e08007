"""Central finite-difference checks of the analytic (autograd) gradients.

Every op is wrapped as a scalar objective ``sum(op(...) * W)`` with a fixed
random ``W`` so all output coordinates contribute. Instances are drawn in
float64 with N <= 8 and d <= 6. Ops containing ReLU or max are only
checked at instances whose distance to the nearest kink exceeds
``KINK_MARGIN``; closer instances are redrawn.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .evaluation import robust_loss
from .gct import Attention, FeedForward
from .geometry import knn_indices
from .matcher import SelfSimilarity, cross_similarity, match_flow, self_similarity, smooth_flow
from .model import GMSF
from .tokenizer import EdgeConv, LocalPointTransformer

KINK_MARGIN = 5e-3
# the full network has hundreds of ReLUs; a wide margin is almost never met
FULL_MODEL_MARGIN = 1e-3
DEFAULT_H = 1e-4
TOLERANCE = 1e-5
# gradients smaller than this are compared in absolute terms
SCALE_FLOOR = 1e-3


def finite_difference_check(fn, inputs: dict[str, torch.Tensor], h: float = DEFAULT_H):
    """Max relative error between autograd and central differences.

    ``fn()`` must return a scalar computed from the tensors in ``inputs``
    (float64, ``requires_grad=True``). Returns ``(max_error, per_tensor)``
    where each per-tensor error is ``max|g_auto - g_fd| / max(|g|_inf, floor)``.
    """
    names = list(inputs)
    tensors = [inputs[n] for n in names]
    out = fn()
    analytic = torch.autograd.grad(out, tensors, allow_unused=True)
    errors = {}
    with torch.no_grad():
        for name, t, g in zip(names, tensors, analytic):
            g = torch.zeros_like(t) if g is None else g
            numeric = torch.zeros_like(t)
            flat, nflat = t.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = fn().item()
                flat[i] = orig - h
                f_minus = fn().item()
                flat[i] = orig
                nflat[i] = (f_plus - f_minus) / (2 * h)
            scale = max(g.abs().max().item(), numeric.abs().max().item(), SCALE_FLOOR)
            errors[name] = (g - numeric).abs().max().item() / scale
    return max(errors.values(), default=0.0), errors


class _KinkMonitor:
    """Records the smallest |input| to any ReLU and the smallest positive
    top-2 gap of EdgeConv neighbor maxima during one forward pass."""

    def __init__(self, modules):
        self.margin = np.inf
        self.handles = []
        for mod in modules:
            for sub in mod.modules():
                if isinstance(sub, nn.ReLU):
                    self.handles.append(sub.register_forward_hook(self._relu))
                if isinstance(sub, EdgeConv):
                    self.handles.append(sub.act.register_forward_hook(self._edge_max))

    def _relu(self, mod, inp, out):
        self.margin = min(self.margin, inp[0].detach().abs().min().item())

    def _edge_max(self, mod, inp, out):
        if out.shape[2] < 2:
            return
        top = out.detach().topk(2, dim=2).values
        first, second = top[:, :, 0], top[:, :, 1]
        live = first > 0
        if live.any():
            gap = (first - second)[live]
            self.margin = min(self.margin, gap.min().item())

    def close(self):
        for h in self.handles:
            h.remove()


def _kink_margin(fn, modules):
    mon = _KinkMonitor(modules)
    try:
        with torch.no_grad():
            fn()
    finally:
        mon.close()
    return mon.margin


def _objective(out, gen):
    w = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    return lambda o: (o * w).sum()


def _module(cls, *args, gen):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
        mod = cls(*args).double()
    return mod


def _leaf(*shape, gen, scale=1.0):
    return (torch.randn(*shape, generator=gen, dtype=torch.float64) * scale).requires_grad_()


def _params(mod, prefix):
    return {f"{prefix}.{n}": p for n, p in mod.named_parameters()}


def _sizes(gen, n_min=2):
    n = int(torch.randint(n_min, 9, (1,), generator=gen))
    d = int(torch.randint(2, 7, (1,), generator=gen))
    return n, d


def case_edge_conv(gen):
    n, d = _sizes(gen, 3)
    k = int(torch.randint(1, min(4, n - 1) + 1, (1,), generator=gen))
    layer = _module(EdgeConv, d, d, gen=gen)
    x = _leaf(1, n, d, gen=gen)
    idx = torch.from_numpy(knn_indices(x[0].detach().numpy(), k))[None]
    obj = _objective(torch.empty(1, n, d), gen)
    return (lambda: obj(layer(x, idx))), {"x": x, **_params(layer, "edge")}, [layer]


def case_local_transformer(gen):
    n, d = _sizes(gen, 3)
    k = int(torch.randint(1, min(4, n - 1) + 1, (1,), generator=gen))
    lpt = _module(LocalPointTransformer, d, gen=gen)
    x = _leaf(1, n, d, gen=gen)
    p = _leaf(1, n, 3, gen=gen)
    idx = torch.from_numpy(knn_indices(p[0].detach().numpy(), k))[None]
    obj = _objective(torch.empty(1, n, d), gen)
    return (lambda: obj(lpt(x, p, idx))), {"x": x, "p": p, **_params(lpt, "lpt")}, [lpt]


def case_self_attention(gen):
    n, d = _sizes(gen, 1)
    att = _module(Attention, d, gen=gen)
    x = _leaf(1, n, d, gen=gen)
    obj = _objective(torch.empty(1, n, d), gen)
    return (lambda: obj(att(x))), {"x": x, **_params(att, "attn")}, [att]


def case_cross_attention(gen):
    n1, d = _sizes(gen, 1)
    n2, _ = _sizes(gen, 1)
    att = _module(Attention, d, gen=gen)
    x, y = _leaf(1, n1, d, gen=gen), _leaf(1, n2, d, gen=gen)
    obj = _objective(torch.empty(1, n1, d), gen)
    return (lambda: obj(att(x, y))), {"x": x, "y": y, **_params(att, "attn")}, [att]


def case_feedforward(gen):
    n, d = _sizes(gen, 1)
    ffn = _module(FeedForward, d, gen=gen)
    x = _leaf(1, n, d, gen=gen)
    obj = _objective(torch.empty(1, n, d), gen)
    return (lambda: obj(ffn(x))), {"x": x, **_params(ffn, "ffn")}, [ffn]


def case_layer_norm(gen):
    n, d = _sizes(gen, 1)
    ln = _module(nn.LayerNorm, d, gen=gen)
    with torch.no_grad():
        ln.weight.normal_(generator=gen)
        ln.bias.normal_(generator=gen)
    x = _leaf(n, d, gen=gen)
    obj = _objective(torch.empty(n, d), gen)
    return (lambda: obj(ln(x))), {"x": x, **_params(ln, "ln")}, [ln]


def case_batch_norm(gen):
    n, d = _sizes(gen, 2)
    bn = _module(nn.BatchNorm1d, d, gen=gen)
    with torch.no_grad():
        bn.weight.normal_(generator=gen)
        bn.bias.normal_(generator=gen)
    x = _leaf(n, d, gen=gen)
    obj = _objective(torch.empty(n, d), gen)
    return (lambda: obj(bn(x))), {"x": x, **_params(bn, "bn")}, [bn]


def case_cross_similarity(gen):
    n1, d = _sizes(gen, 1)
    n2, _ = _sizes(gen, 1)
    f1, f2 = _leaf(n1, d, gen=gen), _leaf(n2, d, gen=gen)
    obj = _objective(torch.empty(n1, n2), gen)
    return (lambda: obj(cross_similarity(f1, f2))), {"f1": f1, "f2": f2}, []


def case_self_similarity(gen):
    n, d = _sizes(gen, 1)
    mod = _module(SelfSimilarity, d, gen=gen)
    f1 = _leaf(n, d, gen=gen)
    obj = _objective(torch.empty(n, n), gen)
    return (lambda: obj(self_similarity(f1, mod))), {"f1": f1, **_params(mod, "self_sim")}, []


def _stochastic_leaf(n, m, gen):
    logits = torch.randn(n, m, generator=gen, dtype=torch.float64)
    return torch.softmax(logits, dim=-1).requires_grad_()


def case_match_flow(gen):
    n1, _ = _sizes(gen, 1)
    n2, _ = _sizes(gen, 1)
    m = _stochastic_leaf(n1, n2, gen)
    p1, p2 = _leaf(n1, 3, gen=gen), _leaf(n2, 3, gen=gen)
    obj = _objective(torch.empty(n1, 3), gen)
    return (lambda: obj(match_flow(m, p1, p2))), {"m_cross": m, "p1": p1, "p2": p2}, []


def case_smooth_flow(gen):
    n, _ = _sizes(gen, 1)
    m = _stochastic_leaf(n, n, gen)
    v = _leaf(n, 3, gen=gen)
    obj = _objective(torch.empty(n, 3), gen)
    return (lambda: obj(smooth_flow(m, v))), {"m_self": m, "v_inter": v}, []


def case_robust_loss(gen):
    n, _ = _sizes(gen, 1)
    gt = torch.randn(n, 3, generator=gen, dtype=torch.float64)
    # keep every coordinate error at least 1e-3 away from the |.| kink
    err = torch.rand(n, 3, generator=gen, dtype=torch.float64) + 1e-3
    sign = torch.randint(0, 2, (n, 3), generator=gen).to(torch.float64) * 2 - 1
    pred = (gt + sign * err).requires_grad_()
    return (lambda: robust_loss(pred, gt)), {"v_pred": pred}, []


def case_full_model(gen):
    n = int(torch.randint(5, 7, (1,), generator=gen))
    model = _module(GMSF, 4, 2, 1, 1, "edgeconv", True, (4,), False, gen=gen)
    p1 = torch.randn(1, n, 3, generator=gen, dtype=torch.float64)
    p2 = p1 + 0.3 * torch.randn(1, n, 3, generator=gen, dtype=torch.float64)
    gt = p2 - p1
    fn = lambda: robust_loss(model(p1, p2)["flow"], gt)  # noqa: E731
    return fn, _params(model, "gmsf"), [model]


CASES = {
    "edge_conv_layer": case_edge_conv,
    "local_point_transformer": case_local_transformer,
    "self_attention": case_self_attention,
    "cross_attention": case_cross_attention,
    "feedforward": case_feedforward,
    "layer_norm": case_layer_norm,
    "batch_norm": case_batch_norm,
    "cross_similarity": case_cross_similarity,
    "self_similarity": case_self_similarity,
    "match_flow": case_match_flow,
    "smooth_flow": case_smooth_flow,
    "robust_loss": case_robust_loss,
}


@dataclass
class CheckResult:
    op: str
    seed: int
    error: float
    redraws: int
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} op={self.op} seed={self.seed} "
                f"max_rel_err={self.error:.3e} redraws={self.redraws}")


def check_case(name, seed, h=DEFAULT_H, tol=TOLERANCE, max_redraws=100) -> CheckResult:
    builder = CASES[name] if name in CASES else case_full_model
    margin = KINK_MARGIN if name in CASES else FULL_MODEL_MARGIN
    gen = torch.Generator().manual_seed(seed)
    for redraw in range(max_redraws + 1):
        fn, inputs, modules = builder(gen)
        if not modules or _kink_margin(fn, modules) > margin:
            break
    else:
        raise RuntimeError(f"{name}: no instance clear of kinks in {max_redraws} draws")
    err, _ = finite_difference_check(fn, inputs, h)
    return CheckResult(name, seed, err, redraw, err < tol)


def run_suite(seeds=range(20), ops=None, h=DEFAULT_H, tol=TOLERANCE,
              full_model_seeds=range(2), on_result=None):
    """Check every op for every seed; returns ``(results, seconds)``."""
    start = time.perf_counter()
    results = []
    for name in ops or CASES:
        for seed in seeds:
            res = check_case(name, seed, h, tol)
            results.append(res)
            if on_result:
                on_result(res)
    for seed in full_model_seeds:
        res = check_case("full_model", seed, h, tol)
        results.append(res)
        if on_result:
            on_result(res)
    return results, time.perf_counter() - start
