"""Build the training scenarios and inspect their cost structure.

Denser time sampling rides on the same trajectories (nearly free), while
every extra disturbance magnitude costs one more integration -- the reason
scenario C is about twice as expensive as scenario A despite having fewer
rows than scenario D.
"""

import numpy as np

from swingnet.datasets import (OutputLayout, collocation_grid, generate,
                               generate_offset_validation, scenario_grid)
from swingnet.network import load_bundled_case
from swingnet.training import compute_scalings, output_groups

model = load_bundled_case("kundur11")

print("scenario   rows  trajectories  cost [s]")
data = {}
for label in ("A", "B", "C", "D", "E"):
    ds = generate(model, label)
    data[label] = ds
    m = ds.manifest
    print(f"   {label:5s} {len(ds):6d} {m['n_trajectories']:10d} "
          f"{m['wall_time_s']:11.2f}")

val = generate_offset_validation(model, scenario_grid("A"), scenario="A")
col = collocation_grid(model=model)
print(f"\nscenario-A validation rows (half-step offset grid): {len(val)}")
print(f"collocation points (scenario-E nodes, no targets):   {len(col)}")

layout = OutputLayout.for_model(model)
scalings = compute_scalings(data["E"].targets, layout)
delta_group, omega_group = output_groups(layout)
print(f"\nloss scalings from scenario E targets:")
print(f"  angle-difference group: xi = {scalings.xi_x[delta_group][0]:.4f} rad")
print(f"  frequency group:        xi = {scalings.xi_x[omega_group][0]:.6f} pu")
print("per-column target standard deviations:")
for name, std in zip(data["E"].labels, data["E"].targets.std(axis=0)):
    print(f"  {name:14s} {std:.5f}")
