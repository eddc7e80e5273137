"""How much gradient each method puts on a pair, as a function of its margin.

The sigmoid loss weights a pair by beta_bar * sigmoid(beta_bar * delta).  Once
the policy fits winners a little better than the reference does (delta < 0),
that weight collapses exponentially.  The linear utility replaces it with
clip(0.2 * beta_bar * delta + 0.5, eta, 1), which never drops below eta.

Run:  python demos/01_gradient_weights.py [out.svg]
"""

import sys

import numpy as np

from lindpo.objectives import DpoConfig, UtilitySpec, dpo_gradient_weight, linear_dpo_weight
from lindpo.plotting import utility_svg

beta_bar, eta = 250.0, 1e-2
cfg = DpoConfig(beta_bar=beta_bar, utility=UtilitySpec(floor_eta=eta))

print(f"beta_bar = {beta_bar:g}, eta = {eta:g}")
print(f"{'delta':>8}  {'sigmoid w/beta':>14}  {'linear w':>9}")
for delta in (0.02, 0.005, 0.0, -0.005, -0.01, -0.02, -0.05, -0.1):
    sig = dpo_gradient_weight(delta, beta_bar) / beta_bar
    lin = linear_dpo_weight(delta, cfg)
    print(f"{delta:8.3f}  {sig:14.3e}  {lin:9.3g}")

# where the sigmoid weight crosses the floor
cross = -np.log(1 / eta - 1) / beta_bar
print(f"\nsigmoid weight falls under eta for delta < {cross:.5f}")

out = sys.argv[1] if len(sys.argv) > 1 else "utilities.svg"
with open(out, "w") as fh:
    fh.write(utility_svg())
print(f"normalized utility curves written to {out}")
