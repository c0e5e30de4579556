"""Build the bundled case files from raw network tables.

Runs an AC Newton power flow on the raw bus/branch data and writes
src/swingnet/cases/*.case with the solved voltage magnitudes and the net
active injection of every bus as its set-point.  The dynamic model holds
voltage magnitudes fixed, so a consistent (Vm, P_set) pair is what makes
the swing equilibrium solvable to tight tolerance.

Run once from the repository root:  python tools/build_case_files.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from swingnet.network import build_admittance  # noqa: E402


def solve_power_flow(Y, slack, pv, pq, P_spec, Q_spec, Vm0, tol=1e-12, max_iter=40):
    """Full Newton AC power flow in polar coordinates.

    P_spec/Q_spec are specified net injections (pu); Vm0 carries the slack
    and PV magnitudes.  Returns (Vm, theta) with theta[slack] = 0.
    """
    n = Y.shape[0]
    theta = np.zeros(n)
    Vm = Vm0.copy()
    ang_idx = np.array([i for i in range(n) if i != slack])
    vm_idx = np.array(sorted(pq))

    for it in range(max_iter):
        V = Vm * np.exp(1j * theta)
        I = Y @ V
        S = V * np.conj(I)
        dP = P_spec - S.real
        dQ = Q_spec - S.imag
        mism = np.concatenate([dP[ang_idx], dQ[vm_idx]])
        if np.max(np.abs(mism)) < tol:
            return Vm, theta, it
        # dS/dtheta and dS/dVm in complex form
        dS_dth = 1j * V[:, None] * np.conj(I[:, None] * np.eye(n) - Y * V[None, :])
        dS_dvm = np.diag((V / Vm) * np.conj(I)) + V[:, None] * np.conj(Y) * np.conj(
            V / Vm
        )[None, :]
        J11 = dS_dth.real[np.ix_(ang_idx, ang_idx)]
        J12 = dS_dvm.real[np.ix_(ang_idx, vm_idx)]
        J21 = dS_dth.imag[np.ix_(vm_idx, ang_idx)]
        J22 = dS_dvm.imag[np.ix_(vm_idx, vm_idx)]
        J = np.block([[J11, J12], [J21, J22]])
        upd = np.linalg.solve(J, mism)
        theta[ang_idx] += upd[: len(ang_idx)]
        Vm[vm_idx] += upd[len(ang_idx) :]
    raise RuntimeError(f"power flow did not converge, mismatch {np.max(np.abs(mism)):.3e}")


def kundur11_raw():
    """Kundur two-area 11-bus test system, 100 MVA base.

    Two 900 MVA plants per area behind 0.15 pu (machine base) step-up
    transformers, double-circuit 220 km tie between buses 8 and 9 split at
    bus 8, loads and shunt capacitors at buses 7 and 9.
    """
    xt = 0.15 * 100.0 / 900.0
    branches = [
        (1, 5, 0.0, xt, 0.0),
        (2, 6, 0.0, xt, 0.0),
        (3, 11, 0.0, xt, 0.0),
        (4, 10, 0.0, xt, 0.0),
        (5, 6, 0.0025, 0.025, 0.04375),
        (6, 7, 0.0010, 0.010, 0.01750),
        (7, 8, 0.0110, 0.110, 0.19250),
        (7, 8, 0.0110, 0.110, 0.19250),
        (8, 9, 0.0110, 0.110, 0.19250),
        (8, 9, 0.0110, 0.110, 0.19250),
        (9, 10, 0.0010, 0.010, 0.01750),
        (10, 11, 0.0025, 0.025, 0.04375),
    ]
    shunts = [(7, 0.0, 2.00), (9, 0.0, 3.50)]      # 200 / 350 Mvar capacitors
    loads = {7: (9.67, 1.00), 9: (17.67, 1.00)}    # P, Q consumption in pu
    gens = {1: None, 2: 7.00, 3: 7.19, 4: 7.00}    # None marks the slack
    vset = {1: 1.03, 2: 1.01, 3: 1.03, 4: 1.01}
    H = [6.5, 6.5, 6.175, 6.175]
    return dict(
        name="kundur11", n_bus=11, branches=branches, shunts=shunts, loads=loads,
        gens=gens, vset=vset, H=H, gen_damping=0.05, load_damping=1.0,
        disturbance_bus=7,
    )


def ieee39_raw():
    """IEEE 39-bus New England system, 100 MVA base (classic data set)."""
    branches = [
        (1, 2, 0.0035, 0.0411, 0.6987),
        (1, 39, 0.0010, 0.0250, 0.7500),
        (2, 3, 0.0013, 0.0151, 0.2572),
        (2, 25, 0.0070, 0.0086, 0.1460),
        (3, 4, 0.0013, 0.0213, 0.2214),
        (3, 18, 0.0011, 0.0133, 0.2138),
        (4, 5, 0.0008, 0.0128, 0.1342),
        (4, 14, 0.0008, 0.0129, 0.1382),
        (5, 6, 0.0002, 0.0026, 0.0434),
        (5, 8, 0.0008, 0.0112, 0.1476),
        (6, 7, 0.0006, 0.0092, 0.1130),
        (6, 11, 0.0007, 0.0082, 0.1389),
        (7, 8, 0.0004, 0.0046, 0.0780),
        (8, 9, 0.0023, 0.0363, 0.3804),
        (9, 39, 0.0010, 0.0250, 1.2000),
        (10, 11, 0.0004, 0.0043, 0.0729),
        (10, 13, 0.0004, 0.0043, 0.0729),
        (13, 14, 0.0009, 0.0101, 0.1723),
        (14, 15, 0.0018, 0.0217, 0.3660),
        (15, 16, 0.0009, 0.0094, 0.1710),
        (16, 17, 0.0007, 0.0089, 0.1342),
        (16, 19, 0.0016, 0.0195, 0.3040),
        (16, 21, 0.0008, 0.0135, 0.2548),
        (16, 24, 0.0003, 0.0059, 0.0680),
        (17, 18, 0.0007, 0.0082, 0.1319),
        (17, 27, 0.0013, 0.0173, 0.3216),
        (21, 22, 0.0008, 0.0140, 0.2565),
        (22, 23, 0.0006, 0.0096, 0.1846),
        (23, 24, 0.0022, 0.0350, 0.3610),
        (25, 26, 0.0032, 0.0323, 0.5130),
        (26, 27, 0.0014, 0.0147, 0.2396),
        (26, 28, 0.0043, 0.0474, 0.7802),
        (26, 29, 0.0057, 0.0625, 1.0290),
        (28, 29, 0.0014, 0.0151, 0.2490),
        (12, 11, 0.0016, 0.0435, 0.0, 1.006),
        (12, 13, 0.0016, 0.0435, 0.0, 1.006),
        (6, 31, 0.0000, 0.0250, 0.0, 1.070),
        (10, 32, 0.0000, 0.0200, 0.0, 1.070),
        (19, 33, 0.0007, 0.0142, 0.0, 1.070),
        (20, 34, 0.0009, 0.0180, 0.0, 1.009),
        (22, 35, 0.0000, 0.0143, 0.0, 1.025),
        (23, 36, 0.0005, 0.0272, 0.0, 1.000),
        (25, 37, 0.0006, 0.0232, 0.0, 1.025),
        (2, 30, 0.0000, 0.0181, 0.0, 1.025),
        (29, 38, 0.0008, 0.0156, 0.0, 1.025),
        (19, 20, 0.0007, 0.0138, 0.0, 1.060),
    ]
    loads_mw = {
        3: (322.0, 2.4), 4: (500.0, 184.0), 7: (233.8, 84.0), 8: (522.0, 176.0),
        12: (7.5, 88.0), 15: (320.0, 153.0), 16: (329.0, 32.3), 18: (158.0, 30.0),
        20: (628.0, 103.0), 21: (274.0, 115.0), 23: (247.5, 84.6), 24: (308.6, -92.0),
        25: (224.0, 47.2), 26: (139.0, 17.0), 27: (281.0, 75.5), 28: (206.0, 27.6),
        29: (283.5, 26.9), 31: (9.2, 4.6), 39: (1104.0, 250.0),
    }
    gens_mw = {
        30: 250.0, 31: None, 32: 650.0, 33: 632.0, 34: 508.0,
        35: 650.0, 36: 560.0, 37: 540.0, 38: 830.0, 39: 1000.0,
    }
    vset = {
        30: 1.0475, 31: 0.9820, 32: 0.9831, 33: 0.9972, 34: 1.0123,
        35: 1.0493, 36: 1.0635, 37: 1.0278, 38: 1.0265, 39: 1.0300,
    }
    # Inertia in ascending bus order 30..39 (classic machine numbering maps
    # the 500 s equivalent to bus 39 and the 42 s unit to bus 30).
    H = [42.0, 30.3, 35.8, 38.6, 26.0, 34.8, 26.4, 24.3, 34.5, 500.0]
    loads = {b: (p / 100.0, q / 100.0) for b, (p, q) in loads_mw.items()}
    gens = {b: (None if p is None else p / 100.0) for b, p in gens_mw.items()}
    return dict(
        name="ieee39", n_bus=39, branches=branches, shunts=[], loads=loads,
        gens=gens, vset=vset, H=H, gen_damping=0.05, load_damping=0.2,
        disturbance_bus=20,
    )


def build_case(raw):
    n = raw["n_bus"]
    branches0 = [(f - 1, t - 1, *rest) for f, t, *rest in raw["branches"]]
    shunts0 = [(b - 1, g, s) for b, g, s in raw["shunts"]]
    Y = build_admittance(branches0, n, shunts0)

    gen_buses = sorted(raw["gens"])
    slack = next(b for b, p in raw["gens"].items() if p is None) - 1
    pv = [b - 1 for b in gen_buses if b - 1 != slack]
    pq = [i for i in range(n) if i not in pv and i != slack]

    P_spec = np.zeros(n)
    Q_spec = np.zeros(n)
    for b, (p, q) in raw["loads"].items():
        P_spec[b - 1] -= p
        Q_spec[b - 1] -= q
    for b, p in raw["gens"].items():
        if p is not None:
            P_spec[b - 1] += p
    Vm0 = np.ones(n)
    for b, v in raw["vset"].items():
        Vm0[b - 1] = v

    Vm, theta, iters = solve_power_flow(Y, slack, pv, pq, P_spec, Q_spec, Vm0)
    V = Vm * np.exp(1j * theta)
    P_inj = np.real(V * np.conj(Y @ V))
    # zero-injection buses must come out exactly zero so they become
    # algebraic rows (d_i = 0) instead of carrying a vanishing damping
    P_inj[np.abs(P_inj) < 1e-9] = 0.0
    print(f"{raw['name']}: power flow converged in {iters} iterations, "
          f"losses {P_inj.sum():.4f} pu, V range [{Vm.min():.4f}, {Vm.max():.4f}]")

    def fmt(v):
        return repr(float(v))

    lines = [f"# {raw['name']} case file (per-unit on base_mva; angles handled internally)"]
    lines.append("# generated by tools/build_case_files.py -- do not edit by hand")
    lines.append("BUS")
    for i in range(n):
        kind = "G" if (i + 1) in raw["gens"] else "L"
        lines.append(f"{i + 1} {kind} {fmt(Vm[i])} {fmt(P_inj[i])}")
    lines.append("BRANCH")
    for br in raw["branches"]:
        lines.append(" ".join(fmt(v) if isinstance(v, float) else str(v) for v in br))
    if raw["shunts"]:
        lines.append("SHUNT")
        for b, g, s in raw["shunts"]:
            lines.append(f"{b} {fmt(g)} {fmt(s)}")
    lines.append("PARAM")
    lines.append(f"omega0 {fmt(2.0 * np.pi * 60.0)}")
    lines.append("base_mva 100.0")
    lines.append(f"gen_damping {fmt(raw['gen_damping'])}")
    lines.append(f"load_damping {fmt(raw['load_damping'])}")
    lines.append("h " + " ".join(fmt(h) for h in raw["H"]))
    lines.append(f"# disturbance bus used in the bundled studies: {raw['disturbance_bus']}")
    return "\n".join(lines) + "\n"


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "src", "swingnet", "cases")
    os.makedirs(out_dir, exist_ok=True)
    for raw in (kundur11_raw(), ieee39_raw()):
        text = build_case(raw)
        path = os.path.join(out_dir, raw["name"] + ".case")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
