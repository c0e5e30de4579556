"""Multi-machine swing-equation grid model.

The system is written in mass-matrix form  M * dx/dt = f(x, u)  with the
state vector x = [delta_1 .. delta_n, domega_g1 .. domega_gm] (all bus
voltage angles in ascending bus order, then the frequency deviations of the
generator buses in ascending bus order).

Generator bus i carries two states:

    d(delta_i)/dt                = domega_i
    2 H_i w0 * d(domega_i)/dt    = P_set_i + P_dist_i - D_i domega_i - P_e_i

Load bus i carries one state:

    d_i w0 * d(delta_i)/dt       = P_set_i + P_dist_i - P_e_i

P_e is the net active power injected into the network at each bus,
computed from the bus admittance matrix.  Set-points are stored as signed
net injections (generation positive, consumption negative).  Buses with a
zero set-point get d_i = 0, i.e. an algebraic angle state; the reference
integrator handles those rows natively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GENERATOR = "G"
LOAD = "L"


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case files."""


class DisconnectedNetworkError(ValueError):
    """Raised when the branch list leaves a bus without any connection."""


class EquilibriumError(RuntimeError):
    """Raised when the equilibrium Newton iteration does not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Disturbance:
    """Step change of injected power at a single bus (loss of load)."""

    bus_index: int
    magnitude: float


@dataclass(frozen=True)
class NetworkModel:
    """Immutable container for one study case.

    All quantities are per-unit on ``base_mva`` except angles (rad) and
    omega0 (the nominal frequency parameter entering the mass matrix).
    """

    name: str
    n_bus: int
    kinds: tuple
    Ybus: np.ndarray
    Vm: np.ndarray
    P_set: np.ndarray
    H: np.ndarray          # per generator bus, ascending bus order
    D: np.ndarray          # generator damping, ascending bus order
    d: np.ndarray          # load damping, one entry per load bus
    omega0: float
    base_mva: float

    def __post_init__(self):
        for arr in (self.Ybus, self.Vm, self.P_set, self.H, self.D, self.d):
            arr.setflags(write=False)
        gi = np.flatnonzero(np.array([k == GENERATOR for k in self.kinds]))
        li = np.flatnonzero(np.array([k == LOAD for k in self.kinds]))
        object.__setattr__(self, "_gen_idx", gi)
        object.__setattr__(self, "_load_idx", li)

    @property
    def gen_idx(self):
        return self._gen_idx

    @property
    def load_idx(self):
        return self._load_idx

    @property
    def n_gen(self):
        return len(self._gen_idx)

    @property
    def n_state(self):
        return self.n_bus + self.n_gen

    @property
    def reference_bus(self):
        """Angle reference: the lowest-index generator bus."""
        return int(self.gen_idx[0])

    def state_labels(self):
        labels = [f"delta_{i + 1}" for i in range(self.n_bus)]
        labels += [f"domega_{i + 1}" for i in self.gen_idx]
        return labels


def pack_state(delta, domega):
    """Concatenate angles and frequency deviations in flattening order."""
    return np.concatenate([np.asarray(delta, float), np.asarray(domega, float)], axis=-1)


def unpack_state(model, x):
    """Split a flat state vector into (delta, domega)."""
    x = np.asarray(x)
    return x[..., : model.n_bus], x[..., model.n_bus :]


# ---------------------------------------------------------------------------
# Admittance assembly and electrical power
# ---------------------------------------------------------------------------

def build_admittance(branches, n_bus, shunts=()):
    """Assemble the standard bus admittance matrix.

    branches: iterable of (from_bus, to_bus, r, x, b_total[, tap]) with
    0-based bus indices, series impedance r + jx, total line charging
    b_total (split half per end) and an optional off-nominal tap ratio on
    the from side.  shunts: iterable of (bus, g, b) fixed bus shunts.
    """
    Y = np.zeros((n_bus, n_bus), dtype=complex)
    for br in branches:
        f, t, r, x, b = br[:5]
        tap = br[5] if len(br) > 5 and br[5] else 1.0
        y = 1.0 / complex(r, x)
        ysh = 0.5j * b
        Y[f, f] += (y + ysh) / (tap * tap)
        Y[t, t] += y + ysh
        Y[f, t] -= y / tap
        Y[t, f] -= y / tap
    for bus, g, b in shunts:
        Y[bus, bus] += complex(g, b)
    degree = (np.abs(Y) > 0).sum(axis=1)
    isolated = np.flatnonzero(degree == 0)
    if isolated.size:
        raise DisconnectedNetworkError(
            f"buses without any connection: {[int(i) + 1 for i in isolated]}"
        )
    return Y


def electrical_power(Ybus, Vm, delta):
    """Net active power injection P_e = Re(V o (Ybus V)*) at every bus.

    delta may carry leading batch dimensions; the result has the same
    shape as delta.
    """
    Vm = np.asarray(Vm, float)
    delta = np.asarray(delta, float)
    if Vm.shape[-1] != Ybus.shape[0] or delta.shape[-1] != Ybus.shape[0]:
        raise ValueError(
            f"dimension mismatch: Ybus {Ybus.shape}, Vm {Vm.shape}, delta {delta.shape}"
        )
    V = Vm * np.exp(1j * delta)
    I = V @ Ybus.T
    return np.real(V * np.conj(I))


def injection_angle_jacobian(Ybus, Vm, delta):
    """dP_e/d(delta), shape (..., n_bus, n_bus), batched over leading dims."""
    V = np.asarray(Vm, float) * np.exp(1j * np.asarray(delta, float))
    I = V @ Ybus.T
    # dP_i/dd_k = Re( j V_i (1{i=k} I_i - Y_ik V_k)* )
    inner = I[..., :, None] * np.eye(Ybus.shape[0]) - Ybus * V[..., None, :]
    return np.real(1j * V[..., :, None] * np.conj(inner))


def injection_angle_vjp(Ybus, Vm, delta, v):
    """(dP_e/d delta)^T v without materialising the Jacobian.

    v has the shape of delta (batched); the result is the angle-gradient
    of <v, P_e>, used by the physics-loss backward pass.
    """
    V = np.asarray(Vm, float) * np.exp(1j * np.asarray(delta, float))
    I = V @ Ybus.T
    w = V * np.asarray(v, float)
    return np.real(1j * (np.conj(I) * w - np.conj(V) * (w @ np.conj(Ybus))))


# ---------------------------------------------------------------------------
# Mass matrix and right-hand side
# ---------------------------------------------------------------------------

def mass_matrix(model):
    """Diagonal of M in flattening order; zero entries mark algebraic rows."""
    diag = np.ones(model.n_state)
    diag[model.load_idx] = model.d * model.omega0
    diag[model.n_bus :] = 2.0 * model.H * model.omega0
    return diag


def mechanical_power(model, disturbance=None):
    """P_set plus the disturbance step, per bus (read-only view if unchanged)."""
    if disturbance is None or disturbance.magnitude == 0.0:
        return model.P_set
    if not 0 <= disturbance.bus_index < model.n_bus:
        raise ValueError(f"disturbance bus {disturbance.bus_index} out of range")
    p = model.P_set.copy()
    p[disturbance.bus_index] += disturbance.magnitude
    return p


def rhs(model, x, disturbance=None):
    """Mass-form right-hand side f(x, u), batched over leading dims of x."""
    x = np.asarray(x, float)
    if x.shape[-1] != model.n_state:
        raise ValueError(f"state length {x.shape[-1]} != {model.n_state}")
    delta = x[..., : model.n_bus]
    domega = x[..., model.n_bus :]
    p_mech = mechanical_power(model, disturbance)
    p_bal = p_mech - electrical_power(model.Ybus, model.Vm, delta)
    f = np.empty_like(x)
    f[..., : model.n_bus] = p_bal
    f[..., model.gen_idx] = domega
    f[..., model.n_bus :] = p_bal[..., model.gen_idx] - model.D * domega
    return f


def rhs_jacobian(model, x):
    """Analytic d f/d x of the mass-form right-hand side, batched."""
    x = np.asarray(x, float)
    n, ng = model.n_bus, model.n_gen
    dP = injection_angle_jacobian(model.Ybus, model.Vm, x[..., :n])
    J = np.zeros(x.shape[:-1] + (model.n_state, model.n_state))
    J[..., :n, :n] = -dP
    gi = model.gen_idx
    J[..., gi, :n] = 0.0
    J[..., gi, n + np.arange(ng)] = 1.0
    J[..., n:, :n] = -dP[..., gi, :]
    J[..., n + np.arange(ng), n + np.arange(ng)] = -model.D
    return J


def state_derivative(model, x, disturbance=None):
    """Consistent dx/dt: f/M on differential rows, hidden-constraint solve
    on algebraic rows (M_ii = 0)."""
    x = np.asarray(x, float)
    diag = mass_matrix(model)
    f = rhs(model, x, disturbance)
    alg = np.flatnonzero(diag == 0.0)
    dxdt = np.zeros_like(f)
    diff = np.flatnonzero(diag != 0.0)
    dxdt[..., diff] = f[..., diff] / diag[diff]
    if alg.size:
        # d/dt f_alg(x) = 0  =>  J[alg, alg] xdot_alg = -J[alg, diff] xdot_diff
        J = rhs_jacobian(model, x)
        Ja = J[..., alg, :]
        b = -np.einsum("...ij,...j->...i", Ja[..., diff], dxdt[..., diff])
        dxdt[..., alg] = np.linalg.solve(Ja[..., alg], b[..., None])[..., 0]
    return dxdt


# ---------------------------------------------------------------------------
# Equilibrium
# ---------------------------------------------------------------------------

def find_equilibrium(model, disturbance=None, tol=1e-12, max_iter=60):
    """Pre-disturbance operating point by Newton iteration on f(x, u) = 0.

    Frequency deviations are fixed at zero and the reference-bus angle at
    zero; the remaining n_bus - 1 power-balance rows are solved.  The full
    residual (including the reference row) is checked afterwards, so an
    inconsistent case or a non-absorbable disturbance fails loudly.
    """
    ref = model.reference_bus
    free = np.array([i for i in range(model.n_bus) if i != ref])
    p_mech = mechanical_power(model, disturbance)

    delta = np.zeros(model.n_bus)
    best_rn = np.inf
    for _ in range(max_iter):
        mism = p_mech - electrical_power(model.Ybus, model.Vm, delta)
        rn = np.max(np.abs(mism[free]))
        if rn < tol:
            break
        J = -injection_angle_jacobian(model.Ybus, model.Vm, delta)[np.ix_(free, free)]
        try:
            step = np.linalg.solve(J, -mism[free])
        except np.linalg.LinAlgError as exc:
            raise EquilibriumError(f"singular Jacobian: {exc}", residual=rn) from exc
        # damped update: halve until the residual stops growing
        scale = 1.0
        for _ in range(30):
            trial = delta.copy()
            trial[free] += scale * step
            trial_rn = np.max(
                np.abs((p_mech - electrical_power(model.Ybus, model.Vm, trial))[free])
            )
            if trial_rn < rn or not np.isfinite(rn):
                break
            scale *= 0.5
        delta = trial
        if not np.isfinite(trial_rn) or trial_rn > 1e12:
            raise EquilibriumError(
                f"Newton diverged (residual {trial_rn:.3e})", residual=trial_rn
            )
        best_rn = min(best_rn, trial_rn)
    x = pack_state(delta, np.zeros(model.n_gen))
    resid = np.max(np.abs(rhs(model, x, disturbance)))
    if resid > 1e-10:
        raise EquilibriumError(
            f"no equilibrium found: residual max-norm {resid:.3e} after "
            f"{max_iter} iterations",
            residual=resid,
        )
    return x


# ---------------------------------------------------------------------------
# Case file parsing
# ---------------------------------------------------------------------------

_SECTIONS = ("BUS", "BRANCH", "SHUNT", "PARAM")


def parse_case(text, name="case"):
    """Parse the plain-text case grammar (see docs/case_format.md)."""
    bus_rows, branch_rows, shunt_rows, params = [], [], [], {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) == 1 and tok[0].isalpha():
            if tok[0].upper() not in _SECTIONS:
                raise CaseFormatError(f"line {lineno}: unknown section {tok[0]!r}")
            section = tok[0].upper()
            continue
        if section is None:
            raise CaseFormatError(f"line {lineno}: data before any section header")
        if section == "BUS":
            if len(tok) != 4 or tok[1] not in (GENERATOR, LOAD):
                raise CaseFormatError(f"line {lineno}: expected 'index G|L Vm P_set'")
            bus_rows.append((int(tok[0]), tok[1], float(tok[2]), float(tok[3])))
        elif section == "BRANCH":
            if len(tok) not in (5, 6):
                raise CaseFormatError(f"line {lineno}: expected 'from to r x b [tap]'")
            branch_rows.append(tuple(int(v) for v in tok[:2]) + tuple(float(v) for v in tok[2:]))
        elif section == "SHUNT":
            if len(tok) != 3:
                raise CaseFormatError(f"line {lineno}: expected 'bus g b'")
            shunt_rows.append((int(tok[0]), float(tok[1]), float(tok[2])))
        elif section == "PARAM":
            key = tok[0].lower()
            params[key] = [float(v) for v in tok[1:]]

    if not bus_rows:
        raise CaseFormatError("case file has no BUS section")
    for key in ("omega0", "base_mva", "gen_damping", "load_damping", "h"):
        if key not in params:
            raise CaseFormatError(f"PARAM section is missing {key!r}")

    bus_rows.sort(key=lambda r: r[0])
    indices = [r[0] for r in bus_rows]
    if indices != list(range(1, len(bus_rows) + 1)):
        raise CaseFormatError("bus indices must be 1..n_bus without gaps")

    n_bus = len(bus_rows)
    kinds = tuple(r[1] for r in bus_rows)
    Vm = np.array([r[2] for r in bus_rows])
    P_set = np.array([r[3] for r in bus_rows])

    branches = [(f - 1, t - 1, r, x, b, *rest) for f, t, r, x, b, *rest in branch_rows]
    shunts = [(b - 1, g, s) for b, g, s in shunt_rows]
    Y = build_admittance(branches, n_bus, shunts)

    omega0 = params["omega0"][0]
    gen_damping = params["gen_damping"][0]
    load_damping = params["load_damping"][0]
    gen_idx = [i for i, k in enumerate(kinds) if k == GENERATOR]
    load_idx = [i for i, k in enumerate(kinds) if k == LOAD]
    H = np.array(params["h"])
    if len(H) != len(gen_idx):
        raise CaseFormatError(
            f"PARAM h lists {len(H)} inertia values for {len(gen_idx)} generators"
        )
    if np.any(H <= 0):
        raise CaseFormatError("inertia constants must be positive")
    if np.any(P_set[gen_idx] == 0.0):
        raise CaseFormatError("generator buses must have nonzero set-points")

    D = gen_damping * omega0 / np.abs(P_set[gen_idx])
    d = load_damping * np.abs(P_set[load_idx]) / omega0

    return NetworkModel(
        name=name,
        n_bus=n_bus,
        kinds=kinds,
        Ybus=Y,
        Vm=Vm,
        P_set=P_set,
        H=H,
        D=D,
        d=d,
        omega0=omega0,
        base_mva=params["base_mva"][0],
    )


def load_case(path):
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    name = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return parse_case(text, name=name)


def bundled_case_path(name):
    """Path of a case file shipped with the package ('kundur11', 'ieee39')."""
    from importlib.resources import files

    return str(files("swingnet") / "cases" / f"{name}.case")


def load_bundled_case(name):
    return load_case(bundled_case_path(name))
