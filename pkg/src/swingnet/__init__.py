"""Swing-equation time-domain simulation and neural-network surrogates.

Submodules:
  network    -- grid physics: cases, admittance, swing dynamics, equilibria
  solver     -- implicit trapezoidal integrator (reference ground truth)
  mlp        -- feed-forward network with a hand-rolled differentiation core
  training   -- losses, L-BFGS, fade-in schedule, training loop
  datasets   -- (t, P) grid datasets and persistence
  benchmark  -- accuracy metrics, timing harness, total-cost model
  cli        -- command-line pipeline
"""

from .network import (
    Disturbance,
    NetworkModel,
    build_admittance,
    electrical_power,
    find_equilibrium,
    load_bundled_case,
    load_case,
    mass_matrix,
    rhs,
)
from .solver import SolverConfig, Trajectory, integrate, sample_dense, simulate
from .mlp import SurrogateModel, init_glorot, load_model, save_model
from .datasets import Dataset, GridSpec, OutputLayout, collocation_grid, generate
from .training import Hyperparameters, LossWeights, lbfgs_minimize, train

__version__ = "0.1.0"
