"""Implicit trapezoidal integrator for M * dx/dt = f(x).

One-step scheme, A-stable, second order, with step-doubling error control.
Rows with a zero mass entry are treated as algebraic constraints and solved
as 0 = f_i(x_{n+1}) inside the same Newton system, so the swing model's
zero-injection buses need no special casing by the caller.

The batched entry point integrates many trajectories in lockstep with a
shared adaptive step controlled by the worst-case error; every trajectory
then satisfies the tolerance and the whole dataset grid amortises the
Python overhead of the small linear algebra.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .network import mass_matrix, rhs, rhs_jacobian


class IntegrationError(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class StepRejected(RuntimeError):
    """Newton failed to converge; the caller should retry with a smaller h."""


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-8
    abs_tol: float | None = None      # default: rel_tol / 100
    h_init: float = 1e-3
    h_min: float = 1e-10
    h_max: float = 0.25               # resolves electromechanical swing periods
    newton_tol: float | None = None   # default: clip(rel_tol / 100, 1e-13, 1e-8)
    newton_max_iter: int = 12
    safety: float = 0.9
    shrink_limit: float = 0.2
    growth_limit: float = 5.0
    error_weights: tuple | None = None  # per-state magnitudes for the error norm

    def __post_init__(self):
        if not (0 < self.h_min <= self.h_init <= self.h_max):
            raise ValueError("require 0 < h_min <= h_init <= h_max")
        if self.rel_tol <= 0 or (self.abs_tol is not None and self.abs_tol <= 0):
            raise ValueError("tolerances must be positive")
        atol = self.abs_tol if self.abs_tol is not None else self.rel_tol * 1e-2
        ntol = self.newton_tol
        if ntol is None:
            ntol = min(max(self.rel_tol * 1e-2, 1e-13), 1e-8)
        object.__setattr__(self, "_atol", float(atol))
        object.__setattr__(self, "_ntol", float(ntol))

    @property
    def atol(self):
        return self._atol

    @property
    def ntol(self):
        return self._ntol


@dataclass(frozen=True)
class DynamicalSystem:
    """Autonomous system M dx/dt = f(x) with diagonal mass."""

    mass: np.ndarray
    f: callable
    jac: callable = None
    fd_step: float = 1e-7

    def __post_init__(self):
        m = np.asarray(self.mass, float)
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "alg_idx", np.flatnonzero(m == 0.0))
        object.__setattr__(self, "diff_idx", np.flatnonzero(m != 0.0))

    def jacobian(self, x):
        if self.jac is not None:
            return self.jac(x)
        x = np.asarray(x, float)
        n = x.shape[-1]
        J = np.empty(x.shape[:-1] + (n, n))
        for k in range(n):
            dx = np.zeros(n)
            dx[k] = self.fd_step * max(1.0, abs(float(np.max(np.abs(x[..., k])))))
            J[..., :, k] = (self.f(x + dx) - self.f(x - dx)) / (2 * dx[k])
        return J


def swing_system(model, disturbance=None):
    """Wrap a NetworkModel (plus step disturbance) as a DynamicalSystem.

    The closure inlines the swing right-hand side with constants hoisted
    out; it computes exactly what network.rhs computes.
    """
    from .network import mechanical_power

    YT = np.ascontiguousarray(model.Ybus.T)
    Vm = model.Vm
    p_mech = np.array(mechanical_power(model, disturbance))
    n = model.n_bus
    gi = model.gen_idx
    D = model.D

    def f(x):
        delta = x[..., :n]
        domega = x[..., n:]
        V = Vm * np.exp(1j * delta)
        p_bal = p_mech - (V * np.conj(V @ YT)).real
        out = np.empty_like(x)
        out[..., :n] = p_bal
        out[..., gi] = domega
        out[..., n:] = p_bal[..., gi] - D * domega
        return out

    return DynamicalSystem(
        mass=mass_matrix(model), f=f, jac=lambda x: rhs_jacobian(model, x)
    )


def swing_system_multi(model, bus_index, magnitudes):
    """Batched swing system: one disturbance magnitude per batch row.

    The step power lands on the bus's power-balance row: the angle row for
    a load bus, the frequency row for a generator bus.
    """
    from .network import GENERATOR

    mags = np.asarray(magnitudes, float)
    if model.kinds[bus_index] == GENERATOR:
        row = model.n_bus + int(np.searchsorted(model.gen_idx, bus_index))
    else:
        row = bus_index

    def f(x):
        out = rhs(model, x)
        out[..., row] = out[..., row] + mags
        return out

    return DynamicalSystem(
        mass=mass_matrix(model), f=f, jac=lambda x: rhs_jacobian(model, x)
    )


def consistent_derivative(system, x, f_x=None, J_x=None):
    """dx/dt with algebraic rows from the differentiated constraint."""
    x = np.asarray(x, float)
    M = system.mass
    alg, diff = system.alg_idx, system.diff_idx
    dxdt = np.zeros_like(x)
    if f_x is None:
        f_x = system.f(x)
    dxdt[..., diff] = f_x[..., diff] / M[diff]
    if alg.size:
        J = system.jacobian(x) if J_x is None else J_x
        Ja = J[..., alg, :]
        b = -(Ja[..., diff] @ dxdt[..., diff, None])
        dxdt[..., alg] = np.linalg.solve(Ja[..., alg], b)[..., 0]
    return dxdt


@dataclass
class Trajectory:
    """Accepted integration steps: states and their time derivatives."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.times) == len(self.states) == len(self.derivs)):
            raise ValueError("times/states/derivs length mismatch")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


# ---------------------------------------------------------------------------
# Newton solve of one implicit step
# ---------------------------------------------------------------------------

def _step_matrix(system, J, h):
    """diag(M)/h - J/2 on differential rows, J on algebraic rows."""
    M = system.mass
    n = M.shape[0]
    A = -0.5 * J
    idx = np.arange(n)
    A[..., idx, idx] += M / h
    alg = system.alg_idx
    if alg.size:
        A[..., alg, :] = J[..., alg, :]
    return A


def _residual(system, x, x_n, f_n, h):
    M = system.mass
    fx = system.f(x)
    R = M * (x - x_n) / h - 0.5 * (fx + f_n)
    alg = system.alg_idx
    if alg.size:
        R[..., alg] = fx[..., alg]
    return R


def _newton(system, x_n, f_n, h, A_inv, config, x_guess=None):
    """Modified Newton with a frozen step matrix; returns x or raises."""
    ntol = config.ntol
    M_h = system.mass / h
    alg = system.alg_idx
    offset = M_h * x_n + 0.5 * f_n

    def resid(x):
        fx = system.f(x)
        R = M_h * x - 0.5 * fx - offset
        if alg.size:
            R[..., alg] = fx[..., alg]
        return R

    x = x_n.copy() if x_guess is None else x_guess.copy()
    R = resid(x)
    rnorm = np.abs(R).max(axis=-1)
    for _ in range(config.newton_max_iter):
        dx = -(A_inv @ R[..., None])[..., 0]
        x_try = x + dx
        R_try = resid(x_try)
        rnorm_try = np.abs(R_try).max(axis=-1)
        grew = rnorm_try > np.maximum(rnorm, ntol)
        if grew.any():
            # damping: halve the update of elements whose residual grows
            scale = np.where(grew, 0.5, 1.0)
            for _ in range(7):
                x_try = x + scale[..., None] * dx
                R_try = resid(x_try)
                rnorm_try = np.abs(R_try).max(axis=-1)
                grew = rnorm_try > np.maximum(rnorm, ntol)
                if not grew.any():
                    break
                scale = np.where(grew, 0.5 * scale, scale)
        x, R, rnorm = x_try, R_try, rnorm_try
        if np.abs(dx).max() < ntol:
            if np.isfinite(x).all():
                return x
            break
        if not np.isfinite(rnorm).all():
            break
    raise StepRejected(f"Newton stalled, residual {np.max(rnorm):.3e}")


def step_trapezoidal(system, x_n, h, config=None, f_n=None, J_n=None):
    """Advance one trapezoidal step of size h; raises StepRejected on
    Newton failure so the caller can halve h."""
    if config is None:
        config = SolverConfig()
    x_n = np.asarray(x_n, float)
    if f_n is None:
        f_n = system.f(x_n)
    if J_n is None:
        J_n = system.jacobian(x_n)
    A_inv = np.linalg.inv(_step_matrix(system, J_n, h))
    return _newton(system, x_n, f_n, h, A_inv, config)


def _attempt_step(system, x_n, h, config, f_n, J_n, d_n=None):
    """Full step and half-step pair sharing one frozen Jacobian.

    Returns (y_half, y_big); the half solves reuse one factored matrix and
    warm-start from the predictor / full-step solution.
    """
    guess = None if d_n is None else x_n + h * d_n
    A_big = np.linalg.inv(_step_matrix(system, J_n, h))
    y_big = _newton(system, x_n, f_n, h, A_big, config, x_guess=guess)
    A_half = np.linalg.inv(_step_matrix(system, J_n, 0.5 * h))
    y_mid = _newton(
        system, x_n, f_n, 0.5 * h, A_half, config, x_guess=0.5 * (x_n + y_big)
    )
    f_mid = system.f(y_mid)
    y_half = _newton(
        system, y_mid, f_mid, 0.5 * h, A_half, config, x_guess=y_big
    )
    return y_half, y_big


# ---------------------------------------------------------------------------
# Adaptive integration (single trajectory)
# ---------------------------------------------------------------------------

def _error_norm(err, x_ref, config):
    scale = config.rel_tol * np.abs(x_ref) + config.atol
    if config.error_weights is not None:
        w = np.asarray(config.error_weights, float)
        scale = config.rel_tol * np.maximum(np.abs(x_ref), w) + config.atol * w
    q = err / scale
    return np.sqrt(np.mean(q * q, axis=-1))


def integrate(system, x0, t_span, config=None):
    """Adaptive trapezoidal integration over t_span = (t0, t_max).

    Every accepted step advances with the half-step pair of the doubling
    estimate and is recorded together with its consistent state derivative.
    """
    if config is None:
        config = SolverConfig()
    t0, t_end = float(t_span[0]), float(t_span[1])
    if t_end <= t0:
        raise ValueError("t_span must satisfy t_max > t0")
    x = np.asarray(x0, float).copy()

    f_x = system.f(x)
    J_x = system.jacobian(x)
    times, states = [t0], [x.copy()]
    derivs = [consistent_derivative(system, x, f_x, J_x)]
    n_accept = n_reject = n_newton_fail = 0
    h = min(config.h_init, t_end - t0)
    t = t0

    def partial():
        return Trajectory(
            np.array(times), np.array(states), np.array(derivs),
            {"accepted": n_accept, "rejected": n_reject},
        )

    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        h = min(h, t_end - t)
        try:
            y_half, y_big = _attempt_step(system, x, h, config, f_x, J_x, derivs[-1])
        except StepRejected:
            n_newton_fail += 1
            h = 0.5 * h
            if h < config.h_min:
                raise IntegrationError(
                    f"step size underflow at t = {t:.6g}", trajectory=partial()
                )
            continue
        err = float(
            _error_norm((y_half - y_big) / 3.0, np.maximum(np.abs(x), np.abs(y_half)), config)
        )
        if err <= 1.0:
            t += h
            x = y_half
            f_x = system.f(x)
            J_x = system.jacobian(x)
            times.append(t)
            states.append(x.copy())
            derivs.append(consistent_derivative(system, x, f_x, J_x))
            n_accept += 1
        else:
            n_reject += 1
        factor = config.safety * err ** (-1.0 / 3.0) if err > 0 else config.growth_limit
        h = h * min(max(factor, config.shrink_limit), config.growth_limit)
        h = min(max(h, config.h_min), config.h_max)
        if h <= config.h_min and err > 1.0:
            raise IntegrationError(
                f"step size underflow at t = {t:.6g}", trajectory=partial()
            )
    stats = {
        "accepted": n_accept,
        "rejected": n_reject,
        "newton_failures": n_newton_fail,
    }
    return Trajectory(np.array(times), np.array(states), np.array(derivs), stats)


# ---------------------------------------------------------------------------
# Dense output
# ---------------------------------------------------------------------------

def _hermite(t0, t1, x0, x1, d0, d1, tq):
    h = t1 - t0
    s = (tq - t0) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    val = (
        h00[..., None] * x0 + (h10 * h)[..., None] * d0
        + h01[..., None] * x1 + (h11 * h)[..., None] * d1
    )
    dh00 = (6 * s2 - 6 * s) / h
    dh10 = 3 * s2 - 4 * s + 1
    dh01 = (6 * s - 6 * s2) / h
    dh11 = 3 * s2 - 2 * s
    der = (
        dh00[..., None] * x0 + dh10[..., None] * d0
        + dh01[..., None] * x1 + dh11[..., None] * d1
    )
    return val, der


def sample_dense(trajectory, query_times):
    """Cubic-Hermite states and derivatives at query_times (within span)."""
    tq = np.atleast_1d(np.asarray(query_times, float))
    t = trajectory.times
    if np.any(tq < t[0] - 1e-12) or np.any(tq > t[-1] + 1e-12):
        raise ValueError(f"query outside trajectory span [{t[0]}, {t[-1]}]")
    k = np.clip(np.searchsorted(t, tq, side="right") - 1, 0, len(t) - 2)
    x0, x1 = trajectory.states[k], trajectory.states[k + 1]
    d0, d1 = trajectory.derivs[k], trajectory.derivs[k + 1]
    val, der = _hermite(t[k], t[k + 1], x0, x1, d0, d1, tq)
    # snap queries that land on stored nodes so they are exact there
    for node in (k, k + 1):
        hit = np.abs(tq - t[node]) < 1e-13
        if hit.any():
            val[hit] = trajectory.states[node[hit]]
            der[hit] = trajectory.derivs[node[hit]]
    return val, der


# ---------------------------------------------------------------------------
# Lockstep batch integration with online dense sampling
# ---------------------------------------------------------------------------

def integrate_batch(system, x0, t_span, sample_times, config=None):
    """Integrate a batch of initial states in lockstep.

    system.f / system.jacobian must accept (B, n) states; the shared step
    size is controlled by the worst error over the batch, so every member
    meets the tolerance.  Only the dense samples at sample_times are kept:
    returns (states, hermite_derivs, consistent_derivs, stats) with shape
    (B, len(sample_times), n).
    """
    if config is None:
        config = SolverConfig()
    t0, t_end = float(t_span[0]), float(t_span[1])
    tq = np.asarray(sample_times, float)
    if np.any(tq < t0) or np.any(tq > t_end):
        raise ValueError("sample_times outside t_span")
    order = np.argsort(tq, kind="stable")
    tq_sorted = tq[order]

    x = np.asarray(x0, float).copy()
    B, n = x.shape
    out_states = np.empty((B, len(tq), n))
    out_dh = np.empty((B, len(tq), n))
    out_dc = np.empty((B, len(tq), n))
    nq = 0

    def emit(t_prev, t_new, x_prev, x_new, d_prev, d_new):
        nonlocal nq
        while nq < len(tq_sorted) and tq_sorted[nq] <= t_new + 1e-13:
            pos = order[nq]
            tquery = tq_sorted[nq]
            if abs(tquery - t_prev) < 1e-13:
                out_states[:, pos], out_dh[:, pos] = x_prev, d_prev
                out_dc[:, pos] = d_prev
            elif abs(tquery - t_new) < 1e-13:
                out_states[:, pos], out_dh[:, pos] = x_new, d_new
                out_dc[:, pos] = d_new
            else:
                val, der = _hermite(
                    t_prev, t_new, x_prev, x_new, d_prev, d_new, np.array(tquery)
                )
                out_states[:, pos], out_dh[:, pos] = val, der
                out_dc[:, pos] = consistent_derivative(system, val)
            nq += 1

    f_x = system.f(x)
    J_x = system.jacobian(x)
    d = consistent_derivative(system, x, f_x, J_x)
    emit(t0, t0, x, x, d, d)

    n_accept = n_reject = 0
    h = min(config.h_init, t_end - t0)
    t = t0
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        h = min(h, t_end - t)
        try:
            y_half, y_big = _attempt_step(system, x, h, config, f_x, J_x, d)
        except StepRejected:
            h = 0.5 * h
            if h < config.h_min:
                raise IntegrationError(f"step size underflow at t = {t:.6g}")
            continue
        err_all = _error_norm(
            (y_half - y_big) / 3.0, np.maximum(np.abs(x), np.abs(y_half)), config
        )
        err = float(np.max(err_all))
        if err <= 1.0:
            f_new = system.f(y_half)
            J_new = system.jacobian(y_half)
            d_new = consistent_derivative(system, y_half, f_new, J_new)
            emit(t, t + h, x, y_half, d, d_new)
            t += h
            x, d, f_x, J_x = y_half, d_new, f_new, J_new
            n_accept += 1
        else:
            n_reject += 1
        factor = config.safety * err ** (-1.0 / 3.0) if err > 0 else config.growth_limit
        h = h * min(max(factor, config.shrink_limit), config.growth_limit)
        h = min(max(h, config.h_min), config.h_max)
        if h <= config.h_min and err > 1.0:
            raise IntegrationError(f"step size underflow at t = {t:.6g}")
    stats = {"accepted": n_accept, "rejected": n_reject}
    return out_states, out_dh, out_dc, stats


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

def export_trajectory(trajectory, csv_path, manifest_path, state_labels,
                      disturbance=None, config=None, wall_time_s=None):
    """CSV of accepted steps plus a JSON manifest."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + list(state_labels))
        for t, row in zip(trajectory.times, trajectory.states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    manifest = {
        "schema_version": 1,
        "steps": int(len(trajectory.times) - 1),
        "stats": {k: int(v) for k, v in trajectory.stats.items()},
        "t_span": [float(trajectory.times[0]), float(trajectory.times[-1])],
    }
    if disturbance is not None:
        manifest["disturbance"] = {
            "bus_index": int(disturbance.bus_index),
            "magnitude": float(disturbance.magnitude),
        }
    if config is not None:
        manifest["solver_config"] = {
            "rel_tol": config.rel_tol, "abs_tol": config.atol,
            "h_init": config.h_init, "h_min": config.h_min, "h_max": config.h_max,
            "newton_tol": config.ntol, "newton_max_iter": config.newton_max_iter,
        }
    if wall_time_s is not None:
        manifest["wall_time_s"] = float(wall_time_s)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def simulate(model, disturbance, t_max, config=None, x0=None):
    """Equilibrium-started disturbance response of a grid model."""
    from .network import find_equilibrium

    if x0 is None:
        x0 = find_equilibrium(model)
    system = swing_system(model, disturbance)
    t_start = time.perf_counter()
    traj = integrate(system, x0, (0.0, t_max), config)
    traj.stats["wall_time_s"] = time.perf_counter() - t_start
    return traj
