"""Train the three surrogate flavours on scenario A and compare them.

Same code path throughout; only the loss weights differ.  The physics
residual is evaluated on 5151 collocation points that need no simulation,
which is what lets the PINN generalise from 66 labelled rows.
"""

import numpy as np

from swingnet.datasets import (OutputLayout, collocation_grid, generate,
                               generate_offset_validation, scenario_grid)
from swingnet.network import load_bundled_case
from swingnet.training import preset_hyperparameters, train

EPOCHS = 80   # enough to see the ordering; raise for publication-grade runs

model = load_bundled_case("kundur11")
train_ds = generate(model, "A")
val_ds = generate_offset_validation(model, scenario_grid("A"), scenario="A")
collocation = collocation_grid(model=model)
test_ds = generate(model, "test")

layout = OutputLayout.for_model(model)
n_delta = layout.n_bus - 1

print(f"training on {len(train_ds)} rows, validating on {len(val_ds)}, "
      f"testing on {len(test_ds)}\n")

for flavour in ("vanilla", "dtnn", "pinn"):
    hyper = preset_hyperparameters(flavour, "A", seed=0,
                                   max_epochs=EPOCHS, patience=EPOCHS)
    record = train(model, train_ds, val_ds, hyper,
                   collocation=collocation if flavour == "pinn" else None)
    pred = record.model.predict(test_ds.inputs)
    err = np.abs(pred - test_ds.targets)
    print(f"{flavour:8s}: best epoch {record.best_epoch:3d}, "
          f"val loss {record.best_val_loss:.3e}, "
          f"test max_AE_delta {err[:, :n_delta].max():.4f} rad, "
          f"max_AE_domega {err[:, n_delta:].max():.5f} pu, "
          f"{record.total_wall_time_s:.0f}s")
