"""Run-time and total-cost comparison: surrogate vs reference solver.

A trained network answers a (t, P) query with one forward pass, so its
run-time is flat in the prediction horizon and nearly flat in system size.
The solver pays per internal step.  The crossover count n_critical tells
how many queries amortise the training investment.
"""

from swingnet.benchmark import CostModel, critical_n, time_nn, time_solver
from swingnet.datasets import generate, generate_offset_validation, scenario_grid
from swingnet.network import load_bundled_case
from swingnet.solver import SolverConfig
from swingnet.training import preset_hyperparameters, train

model = load_bundled_case("kundur11")
train_ds = generate(model, "A")
val_ds = generate_offset_validation(model, scenario_grid("A"), scenario="A")
hyper = preset_hyperparameters("vanilla", "A", seed=0, max_epochs=40, patience=40)
record = train(model, train_ds, val_ds, hyper)
surrogate = record.model

queries = [(t, 6.09) for t in (1.0, 5.0, 10.0, 20.0)]
print("prediction time   NN median      solver median (eps=1e-6)")
nn_rows = time_nn(surrogate, queries, reps=30)
sv_rows = time_solver(model, queries, SolverConfig(rel_tol=1e-6), reps=30)
for nn, sv in zip(nn_rows, sv_rows):
    print(f"   t = {nn.t:5.1f} s   {nn.median_s * 1e6:8.1f} us   "
          f"{sv.median_s * 1e3:10.2f} ms   ({sv.median_s / nn.median_s:6.0f}x)")

upfront = train_ds.manifest["wall_time_s"] + record.total_wall_time_s
nn_cost = CostModel("nn", upfront, nn_rows[-1].median_s)
solver_cost = CostModel("solver", 0.0, sv_rows[-1].median_s)
n_crit = critical_n(nn_cost, solver_cost)
print(f"\nup-front cost (data + training): {upfront:.1f} s")
print(f"critical evaluation count: {n_crit} queries at t = 20 s")
print(f"total cost at 10 n_critical: "
      f"NN {nn_cost.total_cost(10 * n_crit):.1f} s vs "
      f"solver {solver_cost.total_cost(10 * n_crit):.1f} s")
