"""Produce the flavour x scenario x seed study into a cache directory.

The acceptance suite (tests/test_acceptance.py) reuses the directory when
SWINGNET_MATRIX_DIR points at it, so the two-hour study does not have to
be retrained on every pytest invocation.  Uses the test module's own
worker, so cached artifacts are identical to freshly trained ones.
"""

import os
import sys

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from swingnet.datasets import (collocation_grid, generate,
                               generate_offset_validation, scenario_grid)
from swingnet.network import find_equilibrium, load_bundled_case

import test_acceptance


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    model = load_bundled_case("kundur11")
    eq = find_equilibrium(model)
    scenario_data = {lab: generate(model, lab, equilibrium=eq) for lab in ("A", "E")}
    validation_data = {
        lab: generate_offset_validation(model, scenario_grid(lab), scenario=lab,
                                        equilibrium=eq)
        for lab in ("A", "E")
    }
    collocation = collocation_grid(model=model)
    manifest = test_acceptance.run_seed_matrix(
        out_dir, scenario_data, validation_data, collocation
    )
    print(f"matrix complete in {manifest['wall_s']:.0f}s -> {out_dir}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".matrix_cache")
