"""Summarise a trained matrix directory: median test max-AE per cell."""

import os
import statistics
import sys

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from swingnet.datasets import OutputLayout, generate
from swingnet.mlp import load_model
from swingnet.network import load_bundled_case


def main(ws):
    model = load_bundled_case("kundur11")
    layout = OutputLayout.for_model(model)
    nd = layout.n_bus - 1
    test = generate(model, "test")
    cells = {}
    for name in sorted(os.listdir(ws)):
        if not name.endswith(".swnn"):
            continue
        flavour, scenario, seed = name[:-5].split("_")
        surrogate = load_model(os.path.join(ws, name))
        pred = surrogate.predict(test.inputs)
        err = float(np.max(np.abs(pred[:, :nd] - test.targets[:, :nd])))
        cells.setdefault((flavour, scenario), []).append(err)
        print(f"{name:28s} maxAE_delta {err:.4f}")
    print("\nmedians:")
    for key in sorted(cells):
        med = statistics.median(cells[key])
        print(f"  {key[0]:8s} {key[1]}: {med:.4f}  (n={len(cells[key])})")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".matrix_cache")
