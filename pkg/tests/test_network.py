"""Grid model: admittance assembly, power flows, swing dynamics, equilibria."""

import numpy as np
import pytest

from oracles import injection_trig_form

from swingnet.network import (CaseFormatError, Disturbance,
                              DisconnectedNetworkError, EquilibriumError,
                              build_admittance, bundled_case_path,
                              electrical_power, find_equilibrium,
                              injection_angle_jacobian, injection_angle_vjp,
                              load_bundled_case, mass_matrix, pack_state, parse_case,
                              rhs, rhs_jacobian, state_derivative, unpack_state)


# ---------------------------------------------------------------------------
# build_admittance
# ---------------------------------------------------------------------------

def test_single_branch_stamp():
    y = 1.0 / complex(0.01, 0.1)
    Y = build_admittance([(0, 1, 0.01, 0.1, 0.0)], 2)
    expected = np.array([[y, -y], [-y, y]])
    assert np.allclose(Y, expected, rtol=0, atol=1e-15)


def test_parallel_branches_add():
    y1 = 1.0 / complex(0.01, 0.1)
    y2 = 1.0 / complex(0.02, 0.25)
    Y = build_admittance([(0, 1, 0.01, 0.1, 0.0), (0, 1, 0.02, 0.25, 0.0)], 2)
    assert np.allclose(Y[0, 0], y1 + y2)
    assert np.allclose(Y[0, 1], -(y1 + y2))


def test_bundled_11bus_row_sums_equal_shunts():
    """Series terms cancel in every row sum, leaving exactly the shunt
    admittance connected at that bus (line charging plus capacitors)."""
    model = load_bundled_case("kundur11")
    with open(bundled_case_path("kundur11")) as fh:
        text = fh.read()
    shunt_sum = np.zeros(model.n_bus, dtype=complex)
    section = None
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) == 1:
            section = tok[0]
            continue
        if section == "BRANCH":
            f, t = int(tok[0]) - 1, int(tok[1]) - 1
            b = float(tok[4])
            shunt_sum[f] += 0.5j * b
            shunt_sum[t] += 0.5j * b
        elif section == "SHUNT":
            shunt_sum[int(tok[0]) - 1] += complex(float(tok[1]), float(tok[2]))
    assert np.allclose(model.Ybus.sum(axis=1), shunt_sum, atol=1e-12)


def test_disconnected_bus_rejected():
    with pytest.raises(DisconnectedNetworkError):
        build_admittance([(0, 1, 0.0, 0.1, 0.0)], 3)


# ---------------------------------------------------------------------------
# electrical_power
# ---------------------------------------------------------------------------

def test_equal_angles_lossless_zero_power():
    Y = build_admittance([(0, 1, 0.0, 0.1, 0.0), (1, 2, 0.0, 0.2, 0.0)], 3)
    P = electrical_power(Y, np.ones(3), 0.3 * np.ones(3))
    assert np.max(np.abs(P)) < 1e-14


def test_two_bus_susceptance_closed_form():
    b = 4.0
    Y = np.array([[-1j * b, 1j * b], [1j * b, -1j * b]])
    for d1, d2 in [(0.3, -0.2), (0.0, 0.7), (-1.0, 0.4)]:
        P = electrical_power(Y, np.array([1.0, 1.0]), np.array([d1, d2]))
        assert np.isclose(P[0], b * np.sin(d1 - d2), atol=1e-14)
        assert np.isclose(P[1], b * np.sin(d2 - d1), atol=1e-14)


def test_bundled_39bus_injections_match_setpoints(ieee39, ieee39_equilibrium):
    """At the solved operating point every bus's electrical power equals its
    stored net injection (the offline power-flow result)."""
    delta = ieee39_equilibrium[: ieee39.n_bus]
    P = electrical_power(ieee39.Ybus, ieee39.Vm, delta)
    assert np.max(np.abs(P - ieee39.P_set)) < 1e-6


def test_injection_matches_trig_oracle(kundur11, rng):
    delta = rng.normal(0.0, 0.4, kundur11.n_bus)
    P = electrical_power(kundur11.Ybus, kundur11.Vm, delta)
    P_ref = injection_trig_form(kundur11.Ybus, kundur11.Vm, delta)
    assert np.allclose(P, P_ref, atol=1e-12)


def test_electrical_power_dimension_mismatch(kundur11):
    with pytest.raises(ValueError):
        electrical_power(kundur11.Ybus, kundur11.Vm, np.zeros(5))


# ---------------------------------------------------------------------------
# rhs
# ---------------------------------------------------------------------------

def test_rhs_zero_at_equilibrium(kundur11, kundur11_equilibrium):
    assert np.max(np.abs(rhs(kundur11, kundur11_equilibrium))) < 1e-10


def test_rhs_frequency_perturbation_rows(kundur11, kundur11_equilibrium):
    m = kundur11
    eps = 1e-3
    f0 = rhs(m, kundur11_equilibrium)
    for pos, bus in enumerate(m.gen_idx):
        x = kundur11_equilibrium.copy()
        x[m.n_bus + pos] = eps
        f = rhs(m, x)
        assert np.isclose(f[bus] - f0[bus], eps, atol=1e-14)
        assert np.isclose(f[m.n_bus + pos] - f0[m.n_bus + pos], -m.D[pos] * eps,
                          rtol=1e-12)


def test_rhs_disturbance_enters_one_row(kundur11, kundur11_equilibrium, rng):
    m = kundur11
    x = kundur11_equilibrium + rng.normal(0, 0.05, m.n_state)
    p = 3.7
    f0 = rhs(m, x)
    f1 = rhs(m, x, Disturbance(6, p))
    diff = f1 - f0
    assert np.isclose(diff[6], p, atol=1e-13)
    mask = np.ones(m.n_state, bool)
    mask[6] = False
    assert np.max(np.abs(diff[mask])) == 0.0


def test_rhs_translation_invariance(kundur11, rng):
    m = kundur11
    x = pack_state(rng.normal(0, 0.4, m.n_bus), rng.normal(0, 0.01, m.n_gen))
    for c in (0.5, -2.0, 10.0):
        shifted = x.copy()
        shifted[: m.n_bus] += c
        assert np.allclose(rhs(m, x), rhs(m, shifted), atol=1e-10)


def test_lossless_network_power_balance(rng):
    branches = [(0, 1, 0.0, 0.1, 0.0), (1, 2, 0.0, 0.05, 0.0), (0, 2, 0.0, 0.2, 0.0)]
    Y = build_admittance(branches, 3)
    for _ in range(20):
        delta = rng.normal(0, 1.0, 3)
        P = electrical_power(Y, np.ones(3), delta)
        assert abs(P.sum()) < 10 * np.finfo(float).eps * np.max(np.abs(P) + 1)


# ---------------------------------------------------------------------------
# mass matrix
# ---------------------------------------------------------------------------

def test_mass_matrix_coefficients(kundur11):
    m = kundur11
    diag = mass_matrix(m)
    for bus in m.gen_idx:
        assert diag[bus] == 1.0
    for pos, bus in enumerate(m.gen_idx):
        assert diag[m.n_bus + pos] == 2.0 * m.H[pos] * m.omega0
    for pos, bus in enumerate(m.load_idx):
        assert diag[bus] == m.d[pos] * m.omega0


def test_zero_injection_buses_are_algebraic(kundur11):
    diag = mass_matrix(kundur11)
    zero_p = [i for i in kundur11.load_idx if kundur11.P_set[i] == 0.0]
    assert zero_p, "the bundled 11-bus case has pure network buses"
    for bus in zero_p:
        assert diag[bus] == 0.0


# ---------------------------------------------------------------------------
# equilibria
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("case", ["kundur11", "ieee39"])
def test_equilibrium_residual(case):
    model = load_bundled_case(case)
    x = find_equilibrium(model)
    resid = np.max(np.abs(rhs(model, x)))
    print(f"\n  {case}: equilibrium residual {resid:.2e}")
    assert resid <= 1e-10


def test_equilibrium_matches_setpoints(kundur11, kundur11_equilibrium):
    P = electrical_power(kundur11.Ybus, kundur11.Vm,
                         kundur11_equilibrium[: kundur11.n_bus])
    assert np.allclose(P, kundur11.P_set, atol=1e-10)


def test_equilibrium_infeasible_disturbance(kundur11):
    with pytest.raises(EquilibriumError):
        find_equilibrium(kundur11, Disturbance(6, 1e6))


def test_moderate_disturbance_has_no_static_equilibrium(kundur11):
    # a 6 pu load loss cannot be absorbed by losses alone, so the model
    # drifts instead of settling; the solver must refuse
    with pytest.raises(EquilibriumError):
        find_equilibrium(kundur11, Disturbance(6, 6.09))


# ---------------------------------------------------------------------------
# state packing and derivatives
# ---------------------------------------------------------------------------

def test_pack_unpack_roundtrip(kundur11, rng):
    for _ in range(10):
        x = rng.normal(size=kundur11.n_state)
        delta, domega = unpack_state(kundur11, x)
        assert np.array_equal(pack_state(delta, domega), x)


def test_rhs_jacobian_matches_finite_differences(kundur11, kundur11_equilibrium, rng):
    m = kundur11
    x = kundur11_equilibrium + rng.normal(0, 0.1, m.n_state)
    J = rhs_jacobian(m, x)
    step = 1e-6
    for k in rng.choice(m.n_state, 8, replace=False):
        e = np.zeros(m.n_state)
        e[k] = step
        fd = (rhs(m, x + e) - rhs(m, x - e)) / (2 * step)
        assert np.allclose(J[:, k], fd, atol=1e-6)


def test_injection_vjp_matches_jacobian(kundur11, rng):
    m = kundur11
    delta = rng.normal(0, 0.3, (5, m.n_bus))
    v = rng.normal(size=(5, m.n_bus))
    J = injection_angle_jacobian(m.Ybus, m.Vm, delta)
    ref = np.einsum("bij,bi->bj", J, v)
    got = injection_angle_vjp(m.Ybus, m.Vm, delta, v)
    assert np.allclose(got, ref, atol=1e-12)


def test_state_derivative_consistency(kundur11, kundur11_equilibrium):
    m = kundur11
    d = Disturbance(6, 4.0)
    xdot = state_derivative(m, kundur11_equilibrium, d)
    f = rhs(m, kundur11_equilibrium, d)
    diag = mass_matrix(m)
    diff = diag != 0
    assert np.allclose(diag[diff] * xdot[diff], f[diff], atol=1e-12)
    # algebraic rows: the constraint derivative must vanish
    J = rhs_jacobian(m, kundur11_equilibrium)
    alg = np.flatnonzero(diag == 0)
    assert np.max(np.abs(J[alg] @ xdot)) < 1e-10


# ---------------------------------------------------------------------------
# case file parsing
# ---------------------------------------------------------------------------

MINI_CASE = """
BUS
1 G 1.0 1.0
2 L 1.0 -1.0
BRANCH
1 2 0.0 0.1 0.0
PARAM
omega0 376.99
base_mva 100.0
gen_damping 0.05
load_damping 1.0
h 5.0
"""


def test_parse_minimal_case():
    model = parse_case(MINI_CASE, name="mini")
    assert model.n_bus == 2 and model.n_gen == 1
    assert model.kinds == ("G", "L")


def test_parser_rejects_unknown_section():
    with pytest.raises(CaseFormatError, match="unknown section"):
        parse_case(MINI_CASE + "\nGARBAGE\n1 2 3\n")


def test_parser_rejects_zero_generator_setpoint():
    bad = MINI_CASE.replace("1 G 1.0 1.0", "1 G 1.0 0.0")
    with pytest.raises(CaseFormatError, match="nonzero set-points"):
        parse_case(bad)


def test_parser_rejects_wrong_h_count():
    bad = MINI_CASE.replace("h 5.0", "h 5.0 6.0")
    with pytest.raises(CaseFormatError, match="inertia"):
        parse_case(bad)


def test_model_arrays_are_immutable(kundur11):
    with pytest.raises(ValueError):
        kundur11.P_set[0] = 99.0
