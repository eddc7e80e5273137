"""Rectified flow on 1D Gaussian data, where everything has a closed form.

For x0 ~ N(0, s^2) and noise eps ~ N(0, 1) the interpolant x_t = (1-t) x0 + t eps
is Gaussian with variance V(t) = (1-t)^2 s^2 + t^2, and the optimal velocity is
linear in x.  We plug that exact velocity into the samplers and check that

* the score recovered from the velocity is -x / V(t);
* the deterministic sampler and the velocity SDE both land on N(0, V(t_min));
* Euler's error halves with each doubling of the step count.

Run:  python demos/02_gaussian_flow.py
"""

import numpy as np

from lindpo.dynamics import sample, score_from_velocity_rf
from lindpo.schedules import make_schedule
from lindpo.verify import gaussian_rf_velocity, integrate_ode

s = 2.0
sch = make_schedule("rf")
V = lambda t: (1 - t) ** 2 * s**2 + t**2

x = np.linspace(-2, 2, 5)
for t in (0.2, 0.5, 0.8):
    err = np.max(np.abs(score_from_velocity_rf(x, t, gaussian_rf_velocity(x, t, s)) + x / V(t)))
    print(f"t={t}: score from velocity vs -x/V(t), max err {err:.1e}")

model = lambda x, t, c: gaussian_rf_velocity(x, t, s)
target = V(sch.t_min)
print(f"\nexpected variance at t_min: {target:.4f}")
for mode in ("ode", "sde"):
    xs = sample(model, sch, "velocity", steps=200, mode=mode, seed=0, n=20_000, data_dim=1)
    print(f"{mode}: mean {xs.mean():+.4f}, variance {xs.var():.4f}")

x1 = np.array([1.0, -0.5])
exact = x1 * np.sqrt(V(0.1) / V(0.9))
print("\nEuler from t=0.9 to t=0.1")
prev = None
for n in (25, 50, 100, 200):
    err = np.max(np.abs(integrate_ode(x1, s, n) - exact))
    print(f"  {n:4d} steps: error {err:.3e}" + (f"  (ratio {prev / err:.3f})" if prev else ""))
    prev = err
