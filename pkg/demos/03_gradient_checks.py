"""
Checking gradients against finite differences
=============================================

Every differentiable block is compared with central differences in
double precision. Random instances that sit too close to a ReLU or max
kink are redrawn, since differences straddling a kink are meaningless.
"""
from gmsf.gradcheck import CASES, check_case, finite_difference_check

import torch

# A single hand-written function first.
x = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64, requires_grad=True)
err, per_tensor = finite_difference_check(lambda: (x.sin() * x).sum(), {"x": x})
print(f"sin(x)*x: max relative error {err:.2e}")

# Then each library case for a few seeds.
for name in CASES:
    worst = max(check_case(name, seed).error for seed in range(3))
    print(f"{name:26s} {worst:.2e}")
print(check_case("full_model", 0).line())
