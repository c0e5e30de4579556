"""One-off calibration pilot: scenario-E PINN with range-legal weights.

Usage: python tools/pilot_pinn_e_tuned.py <lambda_dt> <lambda_f_max> [epochs]
Prints best-validation checkpoint quality every 50 epochs.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

from swingnet.network import load_bundled_case
from swingnet.datasets import (generate, generate_offset_validation,
                               scenario_grid, collocation_grid, OutputLayout)
from swingnet.training import (CombinedObjective, LossWeights, compute_scalings,
                               build_normalization, lambda_f_schedule,
                               lbfgs_minimize, loss_x)
from swingnet.mlp import (init_glorot, flatten_params, unflatten_params,
                          forward, SurrogateModel)

lam_dt = float(sys.argv[1])
lam_f = float(sys.argv[2])
n_epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 300

m = load_bundled_case("kundur11")
ds = generate(m, "E")
val = generate_offset_validation(m, scenario_grid("E"), scenario="E")
col = collocation_grid(model=m)
test = generate(m, "test")
nd = m.n_bus - 1
layout = OutputLayout.for_model(m)

w = LossWeights(lambda_dt=lam_dt, lambda_f0=0.005, lambda_f_max=lam_f,
                fade_epochs=15.0)
sc = compute_scalings(ds.targets, layout)
norm = build_normalization(ds, sc)
p0 = init_glorot([2] + [32] * 5 + [layout.n_out], seed=0)
theta = flatten_params(p0)
obj = CombinedObjective(p0, norm, ds.inputs, ds.targets, ds.target_derivs, sc, w,
                        grid_model=m, collocation_inputs=col.inputs, bus_index=6)
zv = norm.normalize_in(val.inputs)
best = (np.inf, theta.copy(), -1)
t0 = time.perf_counter()
for epoch in range(n_epochs):
    obj.set_lambda_f(lambda_f_schedule(epoch, w))
    theta, _ = lbfgs_minimize(obj, theta, max_iterations=20, history_size=120,
                              learning_rate=1.0)
    vl = loss_x(norm.denormalize_out(forward(unflatten_params(p0, theta), zv)),
                val.targets, sc.xi_x)
    if vl < best[0]:
        best = (vl, theta.copy(), epoch)
    if (epoch + 1) % 50 == 0:
        model = SurrogateModel(unflatten_params(p0, best[1]), norm)
        pred = model.predict(test.inputs)
        mae = np.max(np.abs(pred[:, :nd] - test.targets[:, :nd]))
        print("pinnE tuned(dt=%g f=%g) ep %3d: best@%3d val %.2e maxAE_d %.4f (%.0fs)"
              % (lam_dt, lam_f, epoch + 1, best[2], best[0], mae,
                 time.perf_counter() - t0), flush=True)
