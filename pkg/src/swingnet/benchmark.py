"""Accuracy metrics, timing harness, and the total-cost model.

Timing follows one discipline for both contenders: monotonic clock,
warmup iterations discarded, at least 30 repetitions, median reported.
Accuracy uses the maximum absolute error over same-unit state groups and
per-point loss distributions over the two input axes.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .network import Disturbance, find_equilibrium
from .solver import SolverConfig, integrate, swing_system
from .training import loss_pointwise

DEFAULT_WARMUP = 5
DEFAULT_REPS = 30


# ---------------------------------------------------------------------------
# Accuracy
# ---------------------------------------------------------------------------

def max_ae(predictions, targets, group=None):
    """Maximum absolute error over a group of columns (all if None)."""
    predictions = np.asarray(predictions, float)
    targets = np.asarray(targets, float)
    err = np.abs(predictions - targets)
    if group is not None:
        err = err[..., group]
    return float(err.max())


def max_ae_by_group(predictions, targets, groups):
    """One max-AE value per named group, e.g. {'delta': ..., 'domega': ...}."""
    return {name: max_ae(predictions, targets, idx) for name, idx in groups.items()}


QUANTILE_LEVELS = (0.0, 0.10, 0.25, 0.50, 0.75, 0.90, 1.0)
QUANTILE_NAMES = ("q0", "q10", "q25", "median", "q75", "q90", "q100")


def error_distribution(predictions, targets, inputs, xi_x, axis="t"):
    """Per-point loss quantile bands along one input axis.

    axis 't' groups by prediction time, 'P' by disturbance size.  The
    bands (q0,q100) = 100%, (q10,q90) = 80%, (q25,q75) = 50% nest around
    the median by construction.
    """
    if axis not in ("t", "P"):
        raise ValueError("axis must be 't' or 'P'")
    col = 0 if axis == "t" else 1
    point_loss = loss_pointwise(predictions, targets, xi_x)
    values = np.asarray(inputs, float)[:, col]
    rows = []
    for v in np.unique(values):
        sel = point_loss[values == v]
        qs = np.quantile(sel, QUANTILE_LEVELS)
        rows.append({"axis": axis, "value": float(v),
                     **{n: float(q) for n, q in zip(QUANTILE_NAMES, qs)}})
    return rows


@dataclass
class AccuracyReport:
    model_label: str
    scenario: str
    max_ae: dict                    # per state group
    point_losses: np.ndarray        # aligned with inputs
    inputs: np.ndarray
    distributions: list = field(default_factory=list)

    def summary(self):
        return {
            "model": self.model_label,
            "scenario": self.scenario,
            "max_ae": self.max_ae,
            "loss_mean": float(self.point_losses.mean()),
            "loss_median": float(np.median(self.point_losses)),
        }


def evaluate_accuracy(model, test_ds, layout, label=""):
    """Full accuracy report of a surrogate on a test dataset.

    The loss scalings are recomputed from the test targets, keeping the
    reported losses independent of the training set.
    """
    from .training import compute_scalings

    scalings = compute_scalings(test_ds.targets, layout)
    pred = model.predict(test_ds.inputs)
    n_delta = layout.n_bus - 1
    groups = {
        "delta": np.arange(n_delta),
        "domega": np.arange(n_delta, layout.n_out),
    }
    report = AccuracyReport(
        model_label=label or model.meta.get("flavour", "model"),
        scenario=str(test_ds.manifest.get("scenario")),
        max_ae=max_ae_by_group(pred, test_ds.targets, groups),
        point_losses=loss_pointwise(pred, test_ds.targets, scalings.xi_x),
        inputs=test_ds.inputs,
    )
    for axis in ("t", "P"):
        report.distributions.extend(
            error_distribution(pred, test_ds.targets, test_ds.inputs, scalings.xi_x, axis)
        )
    return report


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

def _time_callable(fn, reps, warmup):
    for _ in range(warmup):
        fn()
    samples = np.empty(reps)
    for i in range(reps):
        tic = time.perf_counter()
        fn()
        samples[i] = time.perf_counter() - tic
    return samples


@dataclass
class TimingRow:
    case: str
    method: str
    setting: str
    t: float
    p: float
    median_s: float
    reps: int
    samples: np.ndarray = None


def time_nn(model, queries, reps=DEFAULT_REPS, warmup=DEFAULT_WARMUP, case=""):
    """Median single-query wall time of the surrogate per (t, P) query."""
    rows = []
    setting = "x".join(str(d) for d in model.params.layer_dims[1:-1])
    for t, p in queries:
        q = np.array([[t, p]])
        samples = _time_callable(lambda: model.predict(q), reps, warmup)
        rows.append(TimingRow(case, "nn", setting, float(t), float(p),
                              float(np.median(samples)), reps, samples))
    return rows


def time_solver(grid_model, queries, solver_config=None, reps=DEFAULT_REPS,
                warmup=DEFAULT_WARMUP, x0=None):
    """Median wall time of integrating to each query horizon."""
    if solver_config is None:
        solver_config = SolverConfig(rel_tol=1e-6)
    if x0 is None:
        x0 = find_equilibrium(grid_model)
    rows = []
    setting = f"eps={solver_config.rel_tol:g}"
    from .datasets import DEFAULT_DISTURBANCE_BUS

    bus = DEFAULT_DISTURBANCE_BUS.get(grid_model.name, 0)
    for t, p in queries:
        system = swing_system(grid_model, Disturbance(bus, float(p)))

        def run():
            integrate(system, x0, (0.0, float(t)), solver_config)

        samples = _time_callable(run, reps, warmup)
        rows.append(TimingRow(grid_model.name, "solver", setting, float(t),
                              float(p), float(np.median(samples)), reps, samples))
    return rows


# ---------------------------------------------------------------------------
# Total cost model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    label: str
    upfront_s: float
    per_eval_s: float

    def total_cost(self, n):
        return self.upfront_s + self.per_eval_s * n


def total_cost(cost_model, n):
    return cost_model.total_cost(n)


def critical_n(candidate, baseline):
    """Smallest evaluation count at which the candidate's total cost drops
    to the baseline's; infinite if its per-evaluation cost is not lower."""
    if candidate.per_eval_s >= baseline.per_eval_s:
        return math.inf
    gap = candidate.upfront_s - baseline.upfront_s
    if gap <= 0:
        return 0
    return math.ceil(gap / (baseline.per_eval_s - candidate.per_eval_s))


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def emit_report(path_prefix, timing_rows=(), accuracy_reports=(), cost_models=(),
                extra=None):
    """CSV tables plus a JSON summary, deterministic ordering, versioned."""
    written = []
    if timing_rows:
        path = f"{path_prefix}_timing.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case", "method", "setting", "t", "P", "median_s", "reps"])
            for r in sorted(timing_rows, key=lambda r: (r.case, r.method, r.setting, r.t, r.p)):
                writer.writerow([r.case, r.method, r.setting, repr(r.t), repr(r.p),
                                 repr(r.median_s), r.reps])
        written.append(path)
    if accuracy_reports:
        path = f"{path_prefix}_accuracy.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "scenario", "max_ae_delta", "max_ae_domega"])
            for rep in accuracy_reports:
                writer.writerow([rep.model_label, rep.scenario,
                                 repr(rep.max_ae.get("delta")),
                                 repr(rep.max_ae.get("domega"))])
        written.append(path)
        path = f"{path_prefix}_distribution.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "axis", "value"] + list(QUANTILE_NAMES))
            for rep in accuracy_reports:
                for row in rep.distributions:
                    writer.writerow([rep.model_label, row["axis"], repr(row["value"])]
                                    + [repr(row[n]) for n in QUANTILE_NAMES])
        written.append(path)
    summary = {
        "schema_version": 1,
        "accuracy": [rep.summary() for rep in accuracy_reports],
        "cost_models": [
            {"label": c.label, "upfront_s": c.upfront_s, "per_eval_s": c.per_eval_s}
            for c in cost_models
        ],
    }
    if len(cost_models) == 2:
        summary["critical_n"] = critical_n(cost_models[0], cost_models[1])
        if summary["critical_n"] == math.inf:
            summary["critical_n"] = "inf"
    if extra:
        summary.update(extra)
    path = f"{path_prefix}_summary.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written
