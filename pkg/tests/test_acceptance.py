"""Acceptance criteria, each checked at its stated tolerance.

Scenario-backed criteria run the scenario into a temporary directory and read
the emitted CSV summaries. A one-line verdict per criterion is printed in the
pytest terminal summary (and with ``-s``, as each test finishes).
"""
import json

import numpy as np
import pytest
from scipy.integrate import quad

from qpiston.basis import overlap_matrix
from qpiston.dynamics import simulate
from qpiston.harness import scenarios
from qpiston.harness.cli import main
from qpiston.harness.config import ScenarioSpec, with_pressure_ratio
from qpiston.harness.io import read_table
from qpiston.state import MixedState, SimParams, ground_state, thermal_state
from qpiston.thermo import thermo_record


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def scenario_tables(name, out_dir):
    files = scenarios.run_scenario(ScenarioSpec(name=name, out=out_dir))
    return {f.stem: read_table(f)[0] for f in files if f.suffix == ".csv"}


def verdict(log, num, checks):
    """Record and print the verdict; ``checks`` maps a label to (ok, value text)."""
    passed = all(ok for ok, _ in checks.values())
    detail = "; ".join(f"{k}={v}{'' if ok else ' (!)'}" for k, (ok, v) in checks.items())
    log[num] = (passed, detail)
    print(f"\ncriterion {num}: {'PASS' if passed else 'FAIL'}  {detail}")
    failed = [k for k, (ok, _) in checks.items() if not ok]
    assert not failed, f"criterion {num} failed on: {', '.join(failed)}"


def test_criterion_1_overlap_oracle(acceptance_log):
    K = 40
    I = overlap_matrix(K)

    def oracle(n, k):
        f = lambda x: x * 2.0 * np.sin(n * np.pi * x) * k * np.pi * np.cos(k * np.pi * x)
        return quad(f, 0.0, 1.0, limit=400, epsabs=1e-12, epsrel=0.0)[0]

    err = max(abs(I[n - 1, k - 1] - oracle(n, k)) for n in range(1, K + 1) for k in range(1, K + 1))
    exact = bool(np.array_equal(I + I.T, -np.eye(K)))
    verdict(acceptance_log, 1, {
        "max|closed-quad|": (err <= 1e-10, f"{err:.2e}"),
        "I+I^T==-Id": (exact, str(exact)),
    })


def test_criterion_2_conservation(acceptance_log):
    p = SimParams()
    pure = simulate(p, initial=ground_state(p.K), state_stride=100)
    norm_drift = float(np.max(np.abs(pure.populations.sum(axis=1) - 1.0)))
    rho, _ = thermal_state(p.beta, 1.0, p.K)
    mixed = simulate(with_pressure_ratio(p, 1.1, rho), initial=rho, state_stride=100)
    trace_drift = float(np.max(np.abs(mixed.populations.sum(axis=1) - 1.0)))
    purity_span = float(np.ptp(mixed.purity))
    verdict(acceptance_log, 2, {
        "norm_drift": (norm_drift <= 1e-8, f"{norm_drift:.2e}"),
        "trace_drift": (trace_drift <= 1e-8, f"{trace_drift:.2e}"),
        "purity_span": (purity_span <= 1e-8, f"{purity_span:.2e}"),
    })


def test_criterion_3_adiabatic_limits(acceptance_log, out_dir):
    s = scenario_tables("const_velocity", out_dir)["summary"]
    V = s["V"]
    slow = np.abs(np.abs(V) - 0.01) < 1e-12
    slow_min = float(s["min_ground_population"][slow].min())
    fast = float(s["physical_overlap2"][V == 100.0][0])
    verdict(acceptance_log, 3, {
        "min ground pop |V|=0.01": (slow_min >= 0.999, f"{slow_min:.6f}"),
        "overlap^2 V=100": (fast >= 0.99, f"{fast:.5f}"),
    })


def test_criterion_4_mechanical_equilibrium(acceptance_log, out_dir):
    s = scenario_tables("friction_modes", out_dir)["summary"]
    damped = s["friction_mode_code"] > 0
    balance = float(s["balance_rel"][damped].max())
    v_end = float(s["V_end_fraction"][damped].max())
    none_fails = bool(np.all((s["balance_rel"][~damped] > 1e-2) | (s["V_end_fraction"][~damped] > 1e-2)))
    none_fails &= bool(np.all(s["stationary_point_found"][~damped] == 0))
    verdict(acceptance_log, 4, {
        "max balance_rel (damped)": (balance <= 1e-2, f"{balance:.2e}"),
        "max |V(T)|/max|V| (damped)": (v_end <= 1e-2, f"{v_end:.2e}"),
        "undamped runs fail": (none_fails, str(none_fails)),
    })


def test_criterion_5_asymmetric_friction(acceptance_log, out_dir):
    s = scenario_tables("friction_modes", out_dir)["summary"]
    row = (s["friction_mode_code"] == 2) & (s["pressure_ratio"] > 1)
    up, down = int(s["zero_crossings_up"][row][0]), int(s["zero_crossings_down"][row][0])
    sweep = scenario_tables("equilibrium_sweep", out_dir)["sweep"]
    above = sweep["pressure_ratio"][(sweep["pressure_ratio"] > 1) & (sweep["L_T"] > 1.0)]
    verdict(acceptance_log, 5, {
        "crossings (up, down)": (up == 1 and down == 0, f"({up}, {down})"),
        "ratios>1 with L(T)>L0": (above.size > 0, np.array2string(above, precision=2)),
    })


def test_criterion_6_dephasing_phenomenology(acceptance_log, out_dir):
    s = scenario_tables("dephasing", out_dir)["summary"]
    by_rate = dict(zip(s["Gamma"], s["min_purity"]))
    non_monotonic = by_rate[10.0] > min(by_rate[0.0], by_rate[1.0])
    shift = float(scenario_tables("dephasing_length_shift", out_dir)["summary"]["Delta_L_rel_T"][0])
    verdict(acceptance_log, 6, {
        "min purity G=0,1,10": (non_monotonic, ", ".join(f"{by_rate[g]:.6f}" for g in (0.0, 1.0, 10.0))),
        "Delta_L_rel(T)": (shift > 0, f"{shift:.2e}"),
    })


def test_criterion_7_thermodynamic_identities(acceptance_log, out_dir):
    sigma_min, ident, jarz = np.inf, 0.0, 0.0
    ep = scenario_tables("entropy_and_friction_work", out_dir)
    irr = scenario_tables("irreversible_work", out_dir)
    jz = scenario_tables("jarzynski", out_dir)
    for label in ("expansion", "compression"):
        sigma_min = min(sigma_min, float(ep[label]["Sigma_ep"].min()))
        ident = max(ident, float(np.max(np.abs(irr[label]["identity_residual"]))))
        jarz = max(jarz, float(np.max(np.abs(jz[label]["difference"]))))
    verdict(acceptance_log, 7, {
        "min Sigma": (sigma_min >= -1e-12, f"{sigma_min:.2e}"),
        "max|Sigma-beta(dU-dF)|": (ident <= 1e-6, f"{ident:.2e}"),
        "max|<e^-bW>-e^-bdF|": (jarz <= 1e-3, f"{jarz:.2e}"),
    })


def test_criterion_8_fidelity_anchors(acceptance_log, out_dir):
    s = scenario_tables("fidelity_check", out_dir)["summary"]
    primary = np.isclose(s["pressure_ratio"], 0.9)
    light = float(s["min_fidelity"][primary & (s["M"] == 0.001)][0])
    heavy = float(s["min_fidelity"][primary & (s["M"] == 1.0)][0])
    verdict(acceptance_log, 8, {
        "min fidelity M=0.001": (abs(light - 0.997) <= 0.002, f"{light:.5f}"),
        "min fidelity M=1": (heavy >= 0.9999, f"{heavy:.6f}"),
    })


def test_criterion_9_convergence_and_determinism(acceptance_log, tmp_path):
    short = scenarios.convergence_report(SimParams(T=0.1, dt=2e-4), "ground", 1.1)
    order = short["dt"]["order_estimate"]
    k_dev = 0.0
    for ratio in (0.9, 1.1):
        rep = scenarios.convergence_report(SimParams(), "ground", ratio)
        k_dev = max(k_dev, max(rep["K"]["max_dev"].values()))
    scenarios.run_self_consistent.cache_clear()
    for run in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / run)]) == 0
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("trajectory.csv", "final_state.txt"))
    verdict(acceptance_log, 9, {
        "dt order estimate": (order is not None and 3.5 <= order <= 4.5, f"{order:.2f}"),
        "max K vs 2K deviation": (k_dev <= 1e-3, f"{k_dev:.2e}"),
        "bitwise identical reruns": (same, str(same)),
    })
