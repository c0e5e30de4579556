"""Loss functions, L-BFGS optimizer, and the training loop.

One code path produces all three model flavours, distinguished only by
the loss weights: data loss alone (vanilla), plus a derivative-matching
term (dtNN), plus a physics residual on collocation points faded in over
epochs (PINN).  Training is full batch; an epoch is one optimizer call of
a fixed number of L-BFGS iterations, and the checkpointed model is the
one with the lowest validation data loss.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass

import numpy as np

from . import mlp
from .datasets import OutputLayout, DEFAULT_DISTURBANCE_BUS
from .mlp import (Normalization, SurrogateModel, flatten_grads,
                  flatten_params, init_glorot, unflatten_params)
from .network import GENERATOR, mass_matrix


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; carries the diagnostic context."""


# ---------------------------------------------------------------------------
# Scalings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scalings:
    """Per-column loss scalings; xi_x is constant within each state group."""

    xi_x: np.ndarray
    xi_dt: np.ndarray
    xi_f: np.ndarray

    def __post_init__(self):
        for arr in (self.xi_x, self.xi_dt, self.xi_f):
            arr.setflags(write=False)
            if np.any(arr <= 0):
                raise ValueError("scalings must be strictly positive")


SCALING_FLOOR = 1e-9


def output_groups(layout):
    """Same-unit output column groups: angle differences, frequency deviations."""
    n_delta = layout.n_bus - 1
    return [np.arange(n_delta), np.arange(n_delta, n_delta + layout.n_gen)]


def compute_scalings(targets, layout, n_state=None):
    """Group-averaged standard deviations of the targets (floored).

    xi_dt and xi_f stay at 1.0; they are separate knobs the studies leave
    untouched.
    """
    targets = np.asarray(targets, float)
    if targets.size == 0:
        raise ValueError("cannot compute scalings of an empty dataset")
    stds = targets.std(axis=0)
    xi = np.empty(targets.shape[1])
    for group in output_groups(layout):
        xi[group] = max(stds[group].mean(), SCALING_FLOOR)
    n_state = layout.n_bus + layout.n_gen if n_state is None else n_state
    return Scalings(xi, np.ones(targets.shape[1]), np.ones(n_state))


# ---------------------------------------------------------------------------
# Loss functions
# ---------------------------------------------------------------------------

def loss_x(pred, target, xi_x):
    """Mean over points of the squared scaled state mismatch."""
    q = (np.asarray(pred, float) - np.asarray(target, float)) / xi_x
    return float(np.mean(np.sum(q * q, axis=-1)))


def loss_pointwise(pred, target, xi_x):
    """Per-point summands of loss_x (before the mean), for distributions."""
    q = (np.asarray(pred, float) - np.asarray(target, float)) / xi_x
    return np.sum(q * q, axis=-1)


def loss_dt(pred_deriv, target_deriv, xi_dt):
    """Same form as loss_x on the time derivatives."""
    return loss_x(pred_deriv, target_deriv, xi_dt)


def lambda_f_schedule(epoch, weights):
    """Fade-in of the physics weight: min(cap, initial * 10^(epoch/speed))."""
    if weights.lambda_f_max == 0.0:
        return 0.0
    return float(min(weights.lambda_f_max,
                     weights.lambda_f0 * 10.0 ** (epoch / weights.fade_epochs)))


@dataclass(frozen=True)
class LossWeights:
    lambda_dt: float = 0.0
    lambda_f0: float = 0.005
    lambda_f_max: float = 0.0      # 0 disables the physics term
    fade_epochs: float = 15.0

    def __post_init__(self):
        if self.lambda_dt < 0 or self.lambda_f0 <= 0 or self.fade_epochs <= 0:
            raise ValueError("invalid loss weights")
        if self.lambda_f_max != 0.0 and self.lambda_f0 > self.lambda_f_max:
            raise ValueError("lambda_f0 must not exceed lambda_f_max")

    @property
    def flavour(self):
        if self.lambda_f_max != 0.0:
            return "pinn"
        return "dtnn" if self.lambda_dt != 0.0 else "vanilla"


def flavour_weights(flavour, lambda_dt=None, lambda_f0=0.005, lambda_f_max=None,
                    fade_epochs=15.0):
    if flavour == "vanilla":
        if lambda_dt not in (None, 0.0) or lambda_f_max not in (None, 0.0):
            raise ValueError("vanilla flavour requires lambda_dt = lambda_f = 0")
        return LossWeights(0.0, lambda_f0, 0.0, fade_epochs)
    if flavour == "dtnn":
        if lambda_dt in (None, 0.0):
            raise ValueError("dtnn flavour requires lambda_dt != 0")
        if lambda_f_max not in (None, 0.0):
            raise ValueError("dtnn flavour requires lambda_f = 0")
        return LossWeights(lambda_dt, lambda_f0, 0.0, fade_epochs)
    if flavour == "pinn":
        if lambda_dt in (None, 0.0) or lambda_f_max in (None, 0.0):
            raise ValueError("pinn flavour requires lambda_dt != 0 and lambda_f != 0")
        return LossWeights(lambda_dt, lambda_f0, lambda_f_max, fade_epochs)
    raise ValueError(f"unknown flavour {flavour!r}")


# ---------------------------------------------------------------------------
# Physics residual on collocation points
# ---------------------------------------------------------------------------

def physics_residual(mass, derivs, f_values, xi_f=1.0):
    """Mass-form residual rows (M dx/dt - f) / xi per state."""
    return (np.asarray(mass, float) * np.asarray(derivs, float)
            - np.asarray(f_values, float)) / xi_f


class PhysicsLoss:
    """Mass-form residual of the swing equations on predicted states.

    Predictions are in difference coordinates; the full state is
    reconstructed in the reference-angle-zero gauge and the reference
    generator's predicted frequency deviation restores the angle rates, so
    the residual vanishes exactly on a true trajectory.
    """

    def __init__(self, model, layout, bus_index, xi_f):
        self.model = model
        self.layout = layout
        self.bus_index = int(bus_index)
        self.xi_f = np.asarray(xi_f, float)
        self.mass = mass_matrix(model)
        if model.kinds[self.bus_index] == GENERATOR:
            pos = int(np.searchsorted(model.gen_idx, self.bus_index))
            self.dist_row = model.n_bus + pos
        else:
            self.dist_row = self.bus_index
        self.gen_delta_rows = model.gen_idx
        self.nonref = layout.nonref
        n = model.n_bus
        # power-balance row of every bus: its angle row for loads, its
        # frequency row for generators
        power_row = np.arange(n)
        for pos, g in enumerate(model.gen_idx):
            power_row[g] = n + pos
        self.power_row = power_row
        self._YT = np.ascontiguousarray(model.Ybus.T)
        self._Yc = np.ascontiguousarray(np.conj(model.Ybus))

    def _residual_parts(self, out, out_dt, p_mags):
        """Residual plus the shared complex quantities for the backward pass."""
        model = self.model
        n = model.n_bus
        full_x = self.layout.to_full_states(out)
        full_d = self.layout.to_full_derivs(out, out_dt)
        V = model.Vm * np.exp(1j * full_x[..., :n])
        I = V @ self._YT
        p_bal = model.P_set - np.real(V * np.conj(I))
        domega = full_x[..., n:]
        f = np.empty_like(full_x)
        f[..., :n] = p_bal
        f[..., model.gen_idx] = domega
        f[..., n:] = p_bal[..., model.gen_idx] - model.D * domega
        f[..., self.dist_row] += p_mags
        return physics_residual(self.mass, full_d, f, self.xi_f), V, I

    def value(self, out, out_dt, p_mags):
        r, _, _ = self._residual_parts(out, out_dt, p_mags)
        return float(np.mean(np.sum(r * r, axis=-1)))

    def value_and_upstreams(self, out, out_dt, p_mags):
        """Loss value plus gradients w.r.t. the physical outputs.

        Returns (value, d/d out, d/d out_dt); the chain into network
        parameters runs through the caller's reverse passes.
        """
        model = self.model
        r, V, I = self._residual_parts(out, out_dt, p_mags)
        n_pts = r.shape[0]
        value = float(np.mean(np.sum(r * r, axis=-1)))
        dLdr = (2.0 / n_pts) * r / self.xi_f
        a = self.mass * dLdr                       # d L / d full_deriv
        # d L / d full_state: power rows carry -P_e(delta)
        n = model.n_bus
        mu = dLdr[..., self.power_row]             # upstream of each bus's -P_e
        w = V * mu
        u_x = np.empty_like(a)
        u_x[..., :n] = np.real(1j * (np.conj(I) * w - np.conj(V) * (w @ self._Yc)))
        u_x[..., n:] = -dLdr[..., self.gen_delta_rows] + model.D * dLdr[..., n:]
        # map to difference-coordinate outputs
        u_out = np.empty_like(out)
        u_out[..., : n - 1] = u_x[..., self.nonref]
        u_out[..., n - 1 :] = u_x[..., n:]
        u_out[..., self.layout.ref_gen_col] += a[..., :n].sum(axis=-1)
        u_out_dt = np.empty_like(out_dt)
        u_out_dt[..., : n - 1] = a[..., self.nonref]
        u_out_dt[..., n - 1 :] = a[..., n:]
        return value, u_out, u_out_dt


def loss_f(params, norm, collocation_inputs, model, xi_f, layout=None,
           bus_index=None, t_index=0):
    """Physics loss of a parameterised network at collocation inputs."""
    if layout is None:
        layout = OutputLayout.for_model(model)
    if bus_index is None:
        bus_index = DEFAULT_DISTURBANCE_BUS[model.name]
    phys = PhysicsLoss(model, layout, bus_index, xi_f)
    inputs = np.atleast_2d(np.asarray(collocation_inputs, float))
    z0 = norm.normalize_in(inputs)
    y, zs = mlp._forward_cache(params, z0)
    v = np.zeros_like(z0)
    v[:, t_index] = 1.0 / norm.in_scale[t_index]
    ydot = mlp._tangent_cache(params, zs, v)[0]
    out = norm.denormalize_out(y)
    out_dt = norm.out_scale * ydot
    return phys.value(out, out_dt, inputs[:, 1])


def physics_loss_of_values(model, out, out_dt, p_mags, xi_f=None, bus_index=None):
    """Physics loss of given difference-state values (no network involved)."""
    layout = OutputLayout.for_model(model)
    if xi_f is None:
        xi_f = np.ones(model.n_state)
    if bus_index is None:
        bus_index = DEFAULT_DISTURBANCE_BUS[model.name]
    return PhysicsLoss(model, layout, bus_index, xi_f).value(out, out_dt, p_mags)


# ---------------------------------------------------------------------------
# Combined objective over a training set
# ---------------------------------------------------------------------------

class CombinedObjective:
    """Full-batch combined loss with analytic parameter gradients.

    Branches with a zero weight are skipped entirely; a vanilla run never
    touches the tangent or physics machinery.
    """

    def __init__(self, template_params, norm, train_inputs, train_targets,
                 train_target_derivs, scalings, weights, grid_model=None,
                 collocation_inputs=None, bus_index=None, t_index=0):
        self.template = template_params
        self.norm = norm
        self.inputs = np.asarray(train_inputs, float)
        self.z0 = norm.normalize_in(self.inputs)
        self.targets = np.asarray(train_targets, float)
        self.target_derivs = (
            None if train_target_derivs is None else np.asarray(train_target_derivs, float)
        )
        self.scalings = scalings
        self.weights = weights
        self.t_index = t_index
        self.v = np.zeros_like(self.z0)
        self.v[:, t_index] = 1.0 / norm.in_scale[t_index]
        self.lambda_f = 0.0
        self.physics = None
        if weights.lambda_f_max != 0.0:
            if grid_model is None or collocation_inputs is None:
                raise ValueError("physics loss requires the grid model and collocation points")
            layout = OutputLayout.for_model(grid_model)
            if bus_index is None:
                bus_index = DEFAULT_DISTURBANCE_BUS[grid_model.name]
            self.physics = PhysicsLoss(grid_model, layout, bus_index, scalings.xi_f)
            self.col_inputs = np.asarray(collocation_inputs, float)
            self.zc = norm.normalize_in(self.col_inputs)
            self.vc = np.zeros_like(self.zc)
            self.vc[:, t_index] = 1.0 / norm.in_scale[t_index]

    def set_lambda_f(self, lam):
        self.lambda_f = float(lam)

    def parts(self, theta):
        value, _, parts = self._evaluate(theta, want_grad=False)
        return parts

    def __call__(self, theta):
        value, grad, _ = self._evaluate(theta, want_grad=True)
        return value, grad

    def _evaluate(self, theta, want_grad):
        params = unflatten_params(self.template, theta)
        norm, w = self.norm, self.weights
        n_pts = len(self.z0)
        y, zs = mlp._forward_cache(params, self.z0)
        hs = mlp._slope_cache(params, zs)
        out = norm.denormalize_out(y)
        q = (out - self.targets) / self.scalings.xi_x
        lx = float(np.mean(np.sum(q * q, axis=-1)))
        parts = {"loss_x": lx, "loss_dt": None, "loss_f": None}
        value = lx
        u_state = (2.0 / n_pts) * q / self.scalings.xi_x if want_grad else None

        tangent = w.lambda_dt != 0.0
        if tangent:
            ydot, zdots, pres = mlp._tangent_cache(params, zs, self.v, hs)
            out_dt = norm.out_scale * ydot
            qd = (out_dt - self.target_derivs) / self.scalings.xi_dt
            ldt = float(np.mean(np.sum(qd * qd, axis=-1)))
            parts["loss_dt"] = ldt
            value += w.lambda_dt * ldt
            if want_grad:
                u_tan = w.lambda_dt * (2.0 / n_pts) * qd / self.scalings.xi_dt

        if want_grad:
            grads = mlp._grad_params_cached(params, zs, u_state * norm.out_scale, hs)
            if tangent:
                grads = mlp.add_grads(
                    grads,
                    mlp._grad_jvp_cached(params, zs, zdots, pres, u_tan * norm.out_scale, hs),
                )

        if self.physics is not None and self.lambda_f != 0.0:
            yc, zsc = mlp._forward_cache(params, self.zc)
            hsc = mlp._slope_cache(params, zsc)
            ycdot, zcdots, cpres = mlp._tangent_cache(params, zsc, self.vc, hsc)
            outc = norm.denormalize_out(yc)
            outc_dt = norm.out_scale * ycdot
            if want_grad:
                lf, u_out, u_out_dt = self.physics.value_and_upstreams(
                    outc, outc_dt, self.col_inputs[:, 1]
                )
                grads = mlp.add_grads(
                    grads,
                    mlp._grad_params_cached(params, zsc, u_out * norm.out_scale, hsc),
                    scale=self.lambda_f,
                )
                grads = mlp.add_grads(
                    grads,
                    mlp._grad_jvp_cached(
                        params, zsc, zcdots, cpres, u_out_dt * norm.out_scale, hsc
                    ),
                    scale=self.lambda_f,
                )
            else:
                lf = self.physics.value(outc, outc_dt, self.col_inputs[:, 1])
            parts["loss_f"] = lf
            value += self.lambda_f * lf
        elif self.physics is not None:
            parts["loss_f"] = 0.0

        grad = flatten_grads(grads) if want_grad else None
        return value, grad, parts


def combined_loss(theta, objective, lambda_f=0.0):
    """Scalar combined loss and its flat gradient at the given weights."""
    objective.set_lambda_f(lambda_f)
    return objective(theta)


# ---------------------------------------------------------------------------
# L-BFGS with strong Wolfe line search
# ---------------------------------------------------------------------------

WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9


def _two_loop(g, pairs):
    """H g via the two-loop recursion; empty history degenerates to g."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(a, fa, da, b, fb, db):
    # minimiser of the cubic through (a, fa, da), (b, fb, db); None if ill-posed
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    t = b - (b - a) * ((db + d2 - d1) / (db - da + 2 * d2))
    return t if np.isfinite(t) else None


def _zoom(phi, t_lo, f_lo, d_lo, t_hi, f_hi, d_hi, f0, derphi0, c1, c2, max_iter=12):
    for _ in range(max_iter):
        t = _cubic_min(t_lo, f_lo, d_lo, t_hi, f_hi, d_hi)
        lo, hi = min(t_lo, t_hi), max(t_lo, t_hi)
        margin = 0.1 * (hi - lo)
        if t is None or not (lo + margin <= t <= hi - margin):
            t = 0.5 * (t_lo + t_hi)
        f_t, g_t, d_t = phi(t)
        if f_t > f0 + c1 * t * derphi0 or f_t >= f_lo:
            t_hi, f_hi, d_hi = t, f_t, d_t
        else:
            if abs(d_t) <= -c2 * derphi0:
                return t, f_t, g_t
            if d_t * (t_hi - t_lo) >= 0:
                t_hi, f_hi, d_hi = t_lo, f_lo, d_lo
            t_lo, f_lo, d_lo = t, f_t, d_t
        if abs(t_hi - t_lo) < 1e-14 * max(1.0, abs(t_lo)):
            break
    return None


def _strong_wolfe(phi, f0, derphi0, t_init, c1=WOLFE_C1, c2=WOLFE_C2, max_iter=10):
    """Line search enforcing both strong Wolfe conditions.

    phi(t) -> (f, g, g.d); returns (t, f, g) or None on failure.
    """
    if derphi0 >= 0:
        return None
    t_prev, f_prev, d_prev = 0.0, f0, derphi0
    t = t_init
    for i in range(max_iter):
        f_t, g_t, d_t = phi(t)
        if f_t > f0 + c1 * t * derphi0 or (i > 0 and f_t >= f_prev):
            return _zoom(phi, t_prev, f_prev, d_prev, t, f_t, d_t, f0, derphi0, c1, c2)
        if abs(d_t) <= -c2 * derphi0:
            return t, f_t, g_t
        if d_t >= 0:
            return _zoom(phi, t, f_t, d_t, t_prev, f_prev, d_prev, f0, derphi0, c1, c2)
        t_prev, f_prev, d_prev = t, f_t, d_t
        t = 2.0 * t
    return None


def lbfgs_minimize(objective, theta0, max_iterations, history_size,
                   learning_rate=1.0, grad_tol=1e-7, c1=WOLFE_C1, c2=WOLFE_C2):
    """Two-loop L-BFGS with a strong-Wolfe line search.

    objective(theta) -> (value, gradient).  Curvature pairs with
    y.s <= 1e-10 are skipped; a failed line search falls back to a
    steepest-descent step at half the learning rate and counts as one
    iteration.  Returns (theta, trace), where the trace records per
    iteration the accepted step and whether both Wolfe conditions held.
    """
    theta = np.asarray(theta0, float).copy()
    f, g = objective(theta)
    n_evals = 1
    pairs = []
    trace = {
        "f": [float(f)], "gnorm": [float(np.abs(g).max())],
        "steps": [], "wolfe_ok": [], "fallback": [], "n_evals": 0,
    }
    for it in range(max_iterations):
        gnorm = float(np.abs(g).max())
        if gnorm < grad_tol or not np.isfinite(f):
            break
        d = -_two_loop(g, pairs)
        derphi0 = float(g @ d)
        if derphi0 >= 0:
            pairs.clear()
            d = -g
            derphi0 = float(g @ d)

        cache = {}

        def phi(t):
            ft, gt = objective(theta + t * d)
            cache[t] = (ft, gt)
            return ft, gt, float(gt @ d)

        if it == 0:
            t_init = learning_rate * min(1.0, 1.0 / max(np.abs(g).sum(), 1e-12))
        else:
            t_init = learning_rate
        result = _strong_wolfe(phi, f, derphi0, t_init, c1, c2)
        n_evals += len(cache)
        if result is None:
            # line-search failure: damped steepest-descent step
            t = 0.5 * learning_rate / max(1.0, float(np.abs(g).max()))
            theta_new = theta - t * g
            f_new, g_new = objective(theta_new)
            n_evals += 1
            trace["fallback"].append(True)
            trace["wolfe_ok"].append(False)
            trace["steps"].append(t)
        else:
            t, f_new, g_new = result
            theta_new = theta + t * d
            armijo = f_new <= f + c1 * t * derphi0 + 1e-15 * abs(f)
            curv = abs(float(g_new @ d)) <= -c2 * derphi0 + 1e-15
            trace["fallback"].append(False)
            trace["wolfe_ok"].append(bool(armijo and curv))
            trace["steps"].append(float(t))
        s = theta_new - theta
        yk = g_new - g
        ys = float(yk @ s)
        if ys > 1e-10:
            pairs.append((s, yk, 1.0 / ys))
            if len(pairs) > history_size:
                pairs.pop(0)
        theta, f, g = theta_new, f_new, g_new
        trace["f"].append(float(f))
        trace["gnorm"].append(float(np.abs(g).max()))
    trace["n_evals"] = n_evals
    return theta, trace


# ---------------------------------------------------------------------------
# Hyperparameters, Table-1 presets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hyperparameters:
    weights: LossWeights
    n_layers: int = 5
    n_neurons: int = 32
    learning_rate: float = 1.0
    history_size: int = 140
    max_iterations: int = 22
    max_epochs: int = 400
    patience: int = 100
    optimizer_tol: float = 1e-7
    seed: int = 0

    def to_json(self):
        d = {k: getattr(self, k) for k in (
            "n_layers", "n_neurons", "learning_rate", "history_size",
            "max_iterations", "max_epochs", "patience", "optimizer_tol", "seed")}
        d["weights"] = {
            "lambda_dt": self.weights.lambda_dt,
            "lambda_f0": self.weights.lambda_f0,
            "lambda_f_max": self.weights.lambda_f_max,
            "fade_epochs": self.weights.fade_epochs,
        }
        return d


# selected values per flavour and scenario column; scenarios A-D share one
# column and E has its own
PRESET_HYPERPARAMETERS = {
    ("vanilla", "A"): dict(lambda_dt=0.0, lambda_f_max=0.0,
                           learning_rate=1.0, history_size=140, max_iterations=22),
    ("vanilla", "E"): dict(lambda_dt=0.0, lambda_f_max=0.0,
                           learning_rate=1.6, history_size=140, max_iterations=22),
    ("dtnn", "A"): dict(lambda_dt=0.3, lambda_f_max=0.0,
                        learning_rate=0.5, history_size=120, max_iterations=23),
    ("dtnn", "E"): dict(lambda_dt=1.0, lambda_f_max=0.0,
                        learning_rate=2.0, history_size=120, max_iterations=20),
    ("pinn", "A"): dict(lambda_dt=0.01, lambda_f_max=0.5,
                        learning_rate=1.2, history_size=120, max_iterations=20),
    ("pinn", "E"): dict(lambda_dt=0.01, lambda_f_max=0.01,
                        learning_rate=1.0, history_size=120, max_iterations=19),
}


def preset_hyperparameters(flavour, scenario, seed=0, **overrides):
    """Selected hyperparameter column for a flavour and dataset scenario."""
    column = "E" if scenario == "E" else "A"
    try:
        sel = dict(PRESET_HYPERPARAMETERS[(flavour, column)])
    except KeyError:
        raise ValueError(f"unknown flavour {flavour!r}") from None
    weights = LossWeights(
        lambda_dt=sel.pop("lambda_dt"),
        lambda_f0=overrides.pop("lambda_f0", 0.005),
        lambda_f_max=sel.pop("lambda_f_max"),
        fade_epochs=overrides.pop("fade_epochs", 15.0),
    )
    sel.update(overrides)
    return Hyperparameters(weights=weights, seed=seed, **sel)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss_x: float
    loss_dt: float | None
    loss_f: float | None
    lambda_f: float
    val_loss_x: float
    improved: bool
    wall_time_s: float


@dataclass
class TrainRecord:
    epochs: list
    best_epoch: int
    best_val_loss: float
    model: SurrogateModel
    hyper: Hyperparameters

    @property
    def total_wall_time_s(self):
        return sum(e.wall_time_s for e in self.epochs)


def build_normalization(train_ds, scalings):
    """Inputs to [-1, 1] over the sampling domain; outputs standardised
    per state group with the xi_x scalings."""
    grid = train_ds.manifest.get("grid", {})
    t_lo, t_hi = grid.get("t_range", (0.0, 20.0))
    p_lo, p_hi = grid.get("p_range", (0.0, 10.0))
    in_shift = np.array([(t_lo + t_hi) / 2.0, (p_lo + p_hi) / 2.0])
    in_scale = np.array([(t_hi - t_lo) / 2.0, (p_hi - p_lo) / 2.0])
    return Normalization(
        in_shift=in_shift,
        in_scale=in_scale,
        out_shift=train_ds.targets.mean(axis=0),
        out_scale=scalings.xi_x.copy(),
    )


def train(grid_model, train_ds, val_ds, hyper, collocation=None,
          bus_index=None, meta=None, verbose=False):
    """Epoch loop producing the best-validation checkpointed model."""
    layout = OutputLayout.for_model(grid_model)
    scalings = compute_scalings(train_ds.targets, layout)
    norm = build_normalization(train_ds, scalings)
    if bus_index is None:
        bus_index = train_ds.manifest.get(
            "disturbance_bus", DEFAULT_DISTURBANCE_BUS[grid_model.name]
        )

    dims = [2] + [hyper.n_neurons] * hyper.n_layers + [layout.n_out]
    params0 = init_glorot(dims, seed=hyper.seed)
    theta = flatten_params(params0)

    needs_physics = hyper.weights.lambda_f_max != 0.0
    col_inputs = collocation.inputs if (needs_physics and collocation is not None) else None
    if needs_physics and col_inputs is None:
        raise ValueError("PINN training requires a collocation dataset")
    objective = CombinedObjective(
        params0, norm, train_ds.inputs, train_ds.targets, train_ds.target_derivs,
        scalings, hyper.weights, grid_model=grid_model if needs_physics else None,
        collocation_inputs=col_inputs, bus_index=bus_index,
    )
    zv = norm.normalize_in(val_ds.inputs)

    def validation_loss(th):
        p = unflatten_params(params0, th)
        pred = norm.denormalize_out(mlp.forward(p, zv))
        return loss_x(pred, val_ds.targets, scalings.xi_x)

    records = []
    best_val, best_theta, best_epoch = np.inf, theta.copy(), -1
    for epoch in range(hyper.max_epochs):
        lam_f = lambda_f_schedule(epoch, hyper.weights)
        objective.set_lambda_f(lam_f)
        tic = time.perf_counter()
        theta, trace = lbfgs_minimize(
            objective, theta,
            max_iterations=hyper.max_iterations,
            history_size=hyper.history_size,
            learning_rate=hyper.learning_rate,
            grad_tol=hyper.optimizer_tol,
        )
        wall = time.perf_counter() - tic
        parts = objective.parts(theta)
        val = validation_loss(theta)
        if not np.isfinite(val) or not np.isfinite(trace["f"][-1]):
            raise TrainingDiverged(
                f"non-finite loss at epoch {epoch}: parts={parts}, "
                f"val={val}, lambda_f={lam_f}, last objective={trace['f'][-5:]}"
            )
        improved = val < best_val
        if improved:
            best_val, best_theta, best_epoch = val, theta.copy(), epoch
        records.append(EpochRecord(
            epoch, parts["loss_x"], parts["loss_dt"], parts["loss_f"],
            lam_f, val, improved, wall,
        ))
        if verbose:
            print(f"epoch {epoch:4d}  Lx {parts['loss_x']:.3e}  val {val:.3e}"
                  f"  lam_f {lam_f:.3g}  ({wall:.2f}s)")
        if epoch - best_epoch >= hyper.patience:
            break

    best_params = unflatten_params(params0, best_theta)
    model_meta = {
        "case": grid_model.name,
        "scenario": train_ds.manifest.get("scenario"),
        "flavour": hyper.weights.flavour,
        "disturbance_bus": int(bus_index),
        "best_epoch": int(best_epoch),
        "best_val_loss": float(best_val),
        "epochs_run": len(records),
        "hyperparameters": hyper.to_json(),
        "state_labels": list(train_ds.labels),
    }
    if meta:
        model_meta.update(meta)
    model = SurrogateModel(params=best_params, norm=norm, meta=model_meta)
    return TrainRecord(records, best_epoch, float(best_val), model, hyper)


# ---------------------------------------------------------------------------
# Train-record export (timing kept out of the deterministic files)
# ---------------------------------------------------------------------------

def export_train_record(record, csv_path, summary_path=None, timing_path=None):
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_x", "loss_dt", "loss_f",
                         "lambda_f", "val_loss_x", "improved"])
        for e in record.epochs:
            writer.writerow([
                e.epoch, repr(e.loss_x),
                "" if e.loss_dt is None else repr(e.loss_dt),
                "" if e.loss_f is None else repr(e.loss_f),
                repr(e.lambda_f), repr(e.val_loss_x), int(e.improved),
            ])
    if summary_path is not None:
        summary = {
            "schema_version": 1,
            "best_epoch": record.best_epoch,
            "best_val_loss": record.best_val_loss,
            "epochs_run": len(record.epochs),
            "hyperparameters": record.hyper.to_json(),
            "model_meta": record.model.meta,
        }
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if timing_path is not None:
        with open(timing_path, "w") as fh:
            json.dump({
                "per_epoch_s": [e.wall_time_s for e in record.epochs],
                "total_s": record.total_wall_time_s,
            }, fh, indent=2)
            fh.write("\n")
