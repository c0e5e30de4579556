"""Dataset generation on (t, P_dist) grids.

A dataset row maps one input pair (prediction time, disturbance size) to
the system state in difference coordinates: bus-angle differences against
the reference bus followed by the generator frequency deviations, plus the
time derivatives of both.  Using angle differences removes the common
post-disturbance drift, which is what makes the targets learnable over a
20 s horizon; the reference bus is a generator, so the full state can be
reconstructed exactly for physics evaluation (the reference angle is
gauged to zero and its rate is the reference frequency deviation output).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass

import numpy as np

from .network import Disturbance, find_equilibrium
from .solver import (IntegrationError, SolverConfig, integrate, integrate_batch,
                     sample_dense, consistent_derivative, swing_system,
                     swing_system_multi)

SCENARIOS = {
    "A": (2.0, 2.0),
    "B": (1.0, 2.0),
    "C": (2.0, 1.0),
    "D": (1.0, 1.0),
    "E": (0.2, 0.2),
    "test": (0.05, 0.05),
}

DEFAULT_DISTURBANCE_BUS = {"kundur11": 6, "ieee39": 19}   # 0-based: bus 7 / bus 20


class DatasetIntegrityError(ValueError):
    """Manifest hash does not match the stored payload."""


# ---------------------------------------------------------------------------
# Difference-coordinate output layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutputLayout:
    """Column schema of targets: angle differences, then frequency deviations."""

    n_bus: int
    gen_idx: tuple
    ref_bus: int

    @classmethod
    def for_model(cls, model):
        return cls(model.n_bus, tuple(int(g) for g in model.gen_idx), model.reference_bus)

    @property
    def nonref(self):
        return np.array([i for i in range(self.n_bus) if i != self.ref_bus])

    @property
    def n_gen(self):
        return len(self.gen_idx)

    @property
    def n_out(self):
        return self.n_bus - 1 + self.n_gen

    @property
    def ref_gen_col(self):
        """Output column holding the reference generator's frequency deviation."""
        return self.n_bus - 1 + self.gen_idx.index(self.ref_bus)

    def labels(self):
        out = [f"ddelta_{i + 1}_{self.ref_bus + 1}" for i in self.nonref]
        out += [f"domega_{g + 1}" for g in self.gen_idx]
        return out

    def from_full(self, states, derivs=None):
        """Full flattened states (..., n_state) -> difference outputs."""
        states = np.asarray(states, float)
        nb = self.n_bus
        s = states[..., self.nonref] - states[..., self.ref_bus : self.ref_bus + 1]
        out = np.concatenate([s, states[..., nb:]], axis=-1)
        if derivs is None:
            return out
        derivs = np.asarray(derivs, float)
        sd = derivs[..., self.nonref] - derivs[..., self.ref_bus : self.ref_bus + 1]
        return out, np.concatenate([sd, derivs[..., nb:]], axis=-1)

    def to_full_states(self, out):
        """Difference outputs -> full states in the reference-angle-zero gauge."""
        out = np.asarray(out, float)
        nb = self.n_bus
        states = np.empty(out.shape[:-1] + (nb + self.n_gen,))
        states[..., self.ref_bus] = 0.0
        states[..., self.nonref] = out[..., : nb - 1]
        states[..., nb:] = out[..., nb - 1 :]
        return states

    def to_full_derivs(self, out, out_dt):
        """Difference outputs and their rates -> full state derivatives.

        The reference bus is a generator, so its angle rate equals the
        predicted reference frequency deviation; adding it back undoes the
        gauge choice exactly on a true trajectory.
        """
        out = np.asarray(out, float)
        out_dt = np.asarray(out_dt, float)
        nb = self.n_bus
        w_ref = out[..., self.ref_gen_col]
        derivs = np.empty(out.shape[:-1] + (nb + self.n_gen,))
        derivs[..., self.ref_bus] = w_ref
        derivs[..., self.nonref] = out_dt[..., : nb - 1] + w_ref[..., None]
        derivs[..., nb:] = out_dt[..., nb - 1 :]
        return derivs


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    dt_step: float
    dp_step: float
    t_range: tuple = (0.0, 20.0)
    p_range: tuple = (0.0, 10.0)
    offset_t: bool = False
    offset_p: bool = False

    def __post_init__(self):
        for step, (lo, hi), off in (
            (self.dt_step, self.t_range, self.offset_t),
            (self.dp_step, self.p_range, self.offset_p),
        ):
            if step <= 0:
                raise ValueError("grid steps must be positive")
            n = (hi - lo) / step
            if not off and abs(n - round(n)) > 1e-9:
                raise ValueError(f"step {step} does not divide range ({lo}, {hi})")

    @staticmethod
    def _axis(lo, hi, step, offset):
        if offset:
            vals = np.arange(lo + 0.5 * step, hi, step)
        else:
            vals = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
        return vals

    @property
    def t_values(self):
        return self._axis(*self.t_range, self.dt_step, self.offset_t)

    @property
    def p_values(self):
        return self._axis(*self.p_range, self.dp_step, self.offset_p)

    @property
    def size(self):
        return len(self.t_values) * len(self.p_values)

    def offset_by_half(self):
        return GridSpec(self.dt_step, self.dp_step, self.t_range, self.p_range,
                        offset_t=True, offset_p=True)

    def to_json(self):
        return {
            "dt_step": self.dt_step, "dp_step": self.dp_step,
            "t_range": list(self.t_range), "p_range": list(self.p_range),
            "offset_t": self.offset_t, "offset_p": self.offset_p,
        }


def scenario_grid(label):
    if label not in SCENARIOS:
        raise KeyError(f"unknown scenario {label!r}; choose from {sorted(SCENARIOS)}")
    dt, dp = SCENARIOS[label]
    return GridSpec(dt_step=dt, dp_step=dp)


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------

def _lexsort_rows(inputs, *arrays):
    order = np.lexsort((inputs[:, 1], inputs[:, 0]))    # by t, then P
    return (inputs[order],) + tuple(a[order] if a is not None else None for a in arrays)


@dataclass
class Dataset:
    """Rows of (t, P_dist) -> difference-state targets and their rates."""

    inputs: np.ndarray                 # (N, 2): t, P_dist
    targets: np.ndarray | None         # (N, n_out) or None for collocation sets
    target_derivs: np.ndarray | None   # (N, n_out) or None
    labels: tuple
    manifest: dict

    def __post_init__(self):
        for arr in (self.inputs, self.targets, self.target_derivs):
            if arr is not None and not np.isfinite(arr).all():
                raise ValueError("dataset contains non-finite values")

    def __len__(self):
        return len(self.inputs)


def _grid_inputs(grid):
    tv, pv = grid.t_values, grid.p_values
    T, P = np.meshgrid(tv, pv, indexing="ij")
    return np.column_stack([T.ravel(), P.ravel()])


BATCH_THRESHOLD = 30    # magnitudes; above this, integrate the set in lockstep


def generate(model, grid, bus_index=None, solver_config=None, scenario=None,
             equilibrium=None):
    """Simulate one trajectory per disturbance magnitude and sample the grid.

    Additional time samples on an existing trajectory are interpolation
    only, so refining the t-axis is nearly free while every extra
    disturbance magnitude adds a full integration.  Large magnitude sets
    are integrated in lockstep to amortise per-step overhead.
    """
    if isinstance(grid, str):
        scenario = scenario or grid
        grid = scenario_grid(grid)
    if bus_index is None:
        bus_index = DEFAULT_DISTURBANCE_BUS[model.name]
    if solver_config is None:
        solver_config = SolverConfig(rel_tol=1e-10)
    layout = OutputLayout.for_model(model)
    x0 = find_equilibrium(model) if equilibrium is None else equilibrium
    pv = grid.p_values
    tv = grid.t_values

    t_start = time.perf_counter()
    if len(pv) >= BATCH_THRESHOLD:
        system = swing_system_multi(model, bus_index, pv)
        x0b = np.tile(x0, (len(pv), 1))
        states, _, derivs, stats = integrate_batch(
            system, x0b, grid.t_range, tv, solver_config
        )
    else:
        states = np.empty((len(pv), len(tv), model.n_state))
        derivs = np.empty_like(states)
        stats = {"accepted": 0, "rejected": 0}
        for j, p in enumerate(pv):
            system = swing_system(model, Disturbance(bus_index, float(p)))
            try:
                traj = integrate(system, x0, grid.t_range, solver_config)
            except IntegrationError as exc:
                raise IntegrationError(
                    f"scenario generation aborted at P_dist = {p:g} pu: {exc}"
                ) from exc
            st, _ = sample_dense(traj, tv)
            states[j] = st
            derivs[j] = consistent_derivative(system, st)
            stats["accepted"] += traj.stats["accepted"]
            stats["rejected"] += traj.stats["rejected"]
    gen_seconds = time.perf_counter() - t_start

    # (n_p, n_t, n_state) -> rows (t-major to match the documented row order)
    out, out_dt = layout.from_full(states, derivs)
    T, P = np.meshgrid(tv, pv, indexing="ij")
    inputs = np.column_stack([T.ravel(), P.ravel()])
    targets = out.transpose(1, 0, 2).reshape(-1, layout.n_out)
    target_derivs = out_dt.transpose(1, 0, 2).reshape(-1, layout.n_out)
    inputs, targets, target_derivs = _lexsort_rows(inputs, targets, target_derivs)

    manifest = {
        "schema_version": 1,
        "case": model.name,
        "scenario": scenario,
        "grid": grid.to_json(),
        "disturbance_bus": int(bus_index),
        "solver_config": {"rel_tol": solver_config.rel_tol, "abs_tol": solver_config.atol},
        "row_count": int(len(inputs)),
        "n_trajectories": int(len(pv)),
        "wall_time_s": gen_seconds,
        "solver_steps": stats,
    }
    return Dataset(inputs, targets, target_derivs, tuple(layout.labels()), manifest)


def generate_offset_validation(model, grid, bus_index=None, solver_config=None,
                               scenario=None, equilibrium=None):
    """Same trajectories' machinery on the half-step-offset grid."""
    if isinstance(grid, str):
        scenario = scenario or grid
        grid = scenario_grid(grid)
    label = f"{scenario}_validation" if scenario else None
    return generate(model, grid.offset_by_half(), bus_index, solver_config,
                    scenario=label, equilibrium=equilibrium)


def collocation_grid(grid=None, model=None):
    """Input-only dataset of ordered collocation points (scenario-E nodes)."""
    if grid is None:
        grid = scenario_grid("E")
    elif isinstance(grid, str):
        grid = scenario_grid(grid)
    inputs = _grid_inputs(grid)
    inputs = inputs[np.lexsort((inputs[:, 1], inputs[:, 0]))]
    manifest = {
        "schema_version": 1,
        "case": model.name if model is not None else None,
        "scenario": "collocation",
        "grid": grid.to_json(),
        "row_count": int(len(inputs)),
    }
    return Dataset(inputs, None, None, (), manifest)


# ---------------------------------------------------------------------------
# Persistence: CSV payload + JSON manifest with content hash
# ---------------------------------------------------------------------------

def _dataset_csv_bytes(ds):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["t", "P_dist"]
    if ds.targets is not None:
        header += list(ds.labels)
        header += [f"d_dt_{name}" for name in ds.labels]
    writer.writerow(header)
    for i in range(len(ds)):
        row = [repr(float(v)) for v in ds.inputs[i]]
        if ds.targets is not None:
            row += [repr(float(v)) for v in ds.targets[i]]
            row += [repr(float(v)) for v in ds.target_derivs[i]]
        writer.writerow(row)
    return buf.getvalue().encode()


def save_dataset(ds, csv_path, manifest_path=None):
    payload = _dataset_csv_bytes(ds)
    digest = hashlib.sha256(payload).hexdigest()
    with open(csv_path, "wb") as fh:
        fh.write(payload)
    manifest = dict(ds.manifest)
    manifest["content_hash"] = digest
    if manifest_path is None:
        manifest_path = str(csv_path) + ".manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return digest


def load_dataset(csv_path, manifest_path=None):
    if manifest_path is None:
        manifest_path = str(csv_path) + ".manifest.json"
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    with open(csv_path, "rb") as fh:
        payload = fh.read()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest.get("content_hash"):
        raise DatasetIntegrityError(
            f"{csv_path}: content hash {digest[:12]}... does not match manifest"
        )
    rows = list(csv.reader(io.StringIO(payload.decode())))
    header, data = rows[0], rows[1:]
    arr = np.array([[float(v) for v in row] for row in data]) if data else np.empty((0, len(header)))
    inputs = arr[:, :2]
    if len(header) == 2:
        return Dataset(inputs, None, None, (), manifest)
    n_out = (len(header) - 2) // 2
    labels = tuple(header[2 : 2 + n_out])
    targets = arr[:, 2 : 2 + n_out]
    derivs = arr[:, 2 + n_out :]
    return Dataset(inputs, targets, derivs, labels, manifest)
