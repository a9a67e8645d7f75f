"""Scenario runners, one per figure, plus sweeps and the convergence report.

Every runner writes deterministic CSV tables under ``<out>/<scenario>/`` and
returns the list of files it produced. Each table carries a metadata header
naming the figure it reproduces, the full parameter set, and any value that
had to be chosen here because the source leaves it open.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..basis import coupling_matrix, energy_levels
from ..dynamics import ConstantVelocity, Replay, SelfConsistent, Trajectory, simulate
from ..errors import ConfigurationError, PistonError
from ..state import INITIAL_LENGTH, MixedState, SimParams, physical_overlap, wavefunction
from ..thermo import ThermoRecord, hstar_basis_observables, thermo_record, work_statistics
from ..basis import effective_hamiltonian, overlap_matrix
from . import io
from .config import SCENARIOS, ScenarioSpec, initial_state, with_pressure_ratio

log = logging.getLogger(__name__)

WORKERS_ENV = "QPISTON_WORKERS"
CSV_STRIDE = 10

VELOCITIES = (0.01, 1.0, 100.0, -0.01, -1.0, -100.0)
DEPHASING_RATES = (0.0, 1.0, 10.0)
SWEEP_RATIOS = tuple(np.round(np.arange(0.5, 3.0 + 1e-9, 0.1), 10))
GAMMAS = (10.0, 1.0, 0.1)
WALL_MASSES = (0.001, 1.0)
THERMO_RATIOS = (0.9, 1.1)

DEFAULT_NOTES = {
    "const_velocity": "wall speeds (+/-0.01, +/-1, +/-100) are implementation defaults chosen by this package",
    "dephasing": "dephasing rates (0, 1, 10) are implementation defaults chosen by this package",
    "equilibrium_sweep": "pressure-ratio grid 0.5..3.0 is an implementation default chosen by this package",
    "fidelity_check": "primary setting P0/P(0)=0.9 as in mass_regimes; the inverse ratio 1/0.9 is also reported",
}


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer") from None


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Map over ``items`` with a bounded process pool; results keep input order."""
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# shared runs
# --------------------------------------------------------------------------

def scenario_params(spec: ScenarioSpec, **figure_defaults) -> SimParams:
    """Figure defaults, then the user's explicit overrides."""
    merged = dict(figure_defaults)
    merged.update(spec.overrides)
    merged.pop("external_pressure", None)
    return SimParams(**merged)


@lru_cache(maxsize=64)
def run_self_consistent(params: SimParams, initial: str, ratio: float, stride: int = 1,
                        state_stride: Optional[int] = None, auto_dt: bool = True,
                        mixed: bool = False, eigen_n: int = 1) -> Trajectory:
    """Self-consistent run at external pressure ``ratio * P(0)``. Cached per process."""
    state = initial_state(initial, params, eigen_n)
    if mixed and not isinstance(state, MixedState):
        state = MixedState(state.density_matrix())
    p = with_pressure_ratio(params, ratio, state)
    return simulate(p, SelfConsistent(), state, stride=stride, state_stride=state_stride, auto_dt=auto_dt,
                    metadata={"initial_state": initial, "pressure_ratio": ratio})


@lru_cache(maxsize=8)
def run_thermo(params: SimParams, ratio: float, state_stride: int = 20,
               auto_dt: bool = True) -> tuple[Trajectory, ThermoRecord]:
    tr = run_self_consistent(params, "thermal", ratio, 1, state_stride, auto_dt)
    return tr, thermo_record(tr, params.beta)


def _meta(spec: ScenarioSpec, name: str, params: Optional[SimParams] = None, *, p0_per_run: bool = False,
          **extra) -> dict:
    """Header for a scenario file. ``p0_per_run`` marks tables that merge runs at different P0."""
    meta = {"scenario": name, "figure": SCENARIOS[name]}
    if params is not None:
        meta["params"] = params.to_dict()
        if p0_per_run:
            meta["params"]["external_pressure"] = "pressure_ratio * P(0) of each run"
    if name in DEFAULT_NOTES:
        meta["implementation_defaults"] = DEFAULT_NOTES[name]
    meta.update(extra)
    return meta


def _thin(tr: Trajectory, every: int) -> slice:
    every = max(1, every // tr.stride)
    return slice(0, None, every)


def _ratio_label(r: float) -> str:
    return f"{r:.4g}".replace(".", "p")


# --------------------------------------------------------------------------
# constant velocity
# --------------------------------------------------------------------------

def constant_velocity_dt(params: SimParams, V: float, T: float, min_steps: int = 2000) -> float:
    """Step keeping ``||H*|| dt <= 1`` over the run and at least ``min_steps`` steps."""
    L_end = INITIAL_LENGTH + V * T
    L_min = min(INITIAL_LENGTH, L_end)
    bound = energy_levels(params.K, L_min, params.particle_mass)[-1]
    bound += abs(V) / L_min * np.linalg.norm(coupling_matrix(params.K), 2)
    dt = min(1.0 / bound, T / min_steps)
    return T / math.ceil(T / dt - 1e-9)


def run_constant_velocity(params: SimParams, V: float) -> Trajectory:
    T = INITIAL_LENGTH / (2.0 * abs(V))
    p = params.replace(T=T, dt=constant_velocity_dt(params, V, T))
    n_steps = int(round(T / p.dt))
    stride = max(1, n_steps // 1000)
    while n_steps % stride:
        stride -= 1
    return simulate(p, ConstantVelocity(V), initial_state("ground", p), stride=stride, state_stride=1)


def _const_velocity_case(args):
    params, V = args
    tr = run_constant_velocity(params, V)
    final = tr.final_state
    L_T = float(tr.L[-1])
    overlap = physical_overlap(initial_state("ground", params), INITIAL_LENGTH, final, L_T)
    return tr, {
        "V": V, "T": float(tr.t[-1]), "dt": tr.params.dt, "L_T": L_T,
        "ground_population": float(tr.populations[-1, 0]),
        "min_ground_population": float(tr.populations[:, 0].min()),
        "physical_overlap2": abs(overlap) ** 2,
        "norm_drift": float(abs(np.sum(tr.populations[-1]) - 1.0)),
    }


def scenario_const_velocity(spec: ScenarioSpec, velocities: Sequence[float] = VELOCITIES) -> list[Path]:
    name = "const_velocity"
    params = scenario_params(spec, K=20)
    out = spec.out / name
    results = parallel_map(_const_velocity_case, [(params, V) for V in velocities])
    z = np.linspace(0.0, 1.0, 201)
    wf = {"z": z}
    rows = {k: [] for k in results[0][1]}
    for tr, row in results:
        phi = wavefunction(tr.final_state, z)
        tag = f"V={row['V']:g}"
        wf[f"re_phi[{tag}]"] = phi.real
        wf[f"im_phi[{tag}]"] = phi.imag
        wf[f"abs2_phi[{tag}]"] = np.abs(phi) ** 2
        for k, v in row.items():
            rows[k].append(v)
    return [
        io.write_table(out / "wavefunctions.csv", wf, _meta(spec, name, params, frame="transformed, z in [0,1]")),
        io.write_table(out / "summary.csv", rows, _meta(spec, name, params)),
    ]


# --------------------------------------------------------------------------
# friction, gamma and mass regimes
# --------------------------------------------------------------------------

def sign_changes(V: np.ndarray) -> tuple[int, int]:
    """Number of (negative -> positive, positive -> negative) transitions, ignoring exact zeros."""
    s = np.sign(V)
    s = s[s != 0]
    d = np.diff(s)
    return int(np.sum(d > 0)), int(np.sum(d < 0))


def level_crossings(x: np.ndarray, level: float) -> int:
    s = np.sign(x - level)
    s = s[s != 0]
    return int(np.sum(s[1:] != s[:-1]))


def equilibrium_metrics(tr: Trajectory) -> dict:
    p = tr.params
    ext = p.section * p.external_pressure
    imbalance = np.abs(2.0 * tr.U / tr.L - ext)
    vmax = float(np.max(np.abs(tr.V)))
    up, down = sign_changes(tr.V)
    # times at which both residuals sit below 1% of their run maxima
    both = (imbalance <= 0.01 * imbalance.max()) & (np.abs(tr.V) <= 0.01 * vmax)
    both[0] = False
    return {
        "L_T": float(tr.L[-1]),
        "L_min": float(tr.L.min()),
        "V_T": float(tr.V[-1]),
        "max_abs_V": vmax,
        "V_end_fraction": abs(float(tr.V[-1])) / vmax if vmax > 0 else 0.0,
        "balance_rel": float(imbalance[-1] / ext),
        "zero_crossings_up": up,
        "zero_crossings_down": down,
        "stationary_point_found": int(bool(np.any(both))),
    }


def scenario_friction_modes(spec: ScenarioSpec) -> list[Path]:
    name = "friction_modes"
    base = scenario_params(spec, K=20, gamma=10.0, wall_mass=0.05)
    out = spec.out / name
    files, rows = [], {}
    for mode in ("none", "symmetric", "expansion_only"):
        for ratio, label in ((1.1, "compression"), (0.9, "expansion")):
            p = base.replace(friction_mode=mode)
            tr = run_self_consistent(p, spec.initial_state, ratio, 1, None, spec.auto_dt, eigen_n=spec.eigenstate)
            sl = _thin(tr, CSV_STRIDE)
            files.append(io.write_table(
                out / f"V_{mode}_{label}.csv", {"t": tr.t[sl], "L": tr.L[sl], "V": tr.V[sl], "U": tr.U[sl], "P": tr.P[sl]},
                _meta(spec, name, tr.params, friction_mode=mode, pressure_ratio=ratio),
            ))
            row = {"friction_mode": mode, "pressure_ratio": ratio, **equilibrium_metrics(tr)}
            for k, v in row.items():
                rows.setdefault(k, []).append(v)
    modes = rows.pop("friction_mode")
    rows = {"friction_mode_code": [("none", "symmetric", "expansion_only").index(m) for m in modes], **rows}
    files.append(io.write_table(out / "summary.csv", rows, _meta(
        spec, name, base, friction_mode_code="0=none, 1=symmetric, 2=expansion_only")))
    return files


def scenario_gamma_regimes(spec: ScenarioSpec, gammas: Sequence[float] = GAMMAS) -> list[Path]:
    name = "gamma_regimes"
    base = scenario_params(spec, K=20, wall_mass=0.05)
    out = spec.out / name
    cols, rows = None, {"gamma": [], "L_T": [], "crossings_of_final_length": [], "V_end_fraction": []}
    for g in gammas:
        tr = run_self_consistent(base.replace(gamma=g), spec.initial_state, 0.9, 1, None, spec.auto_dt)
        sl = _thin(tr, CSV_STRIDE)
        if cols is None:
            cols = {"t": tr.t[sl]}
        cols[f"L[gamma={g:g}]"] = tr.L[sl]
        rows["gamma"].append(g)
        rows["L_T"].append(tr.L[-1])
        rows["crossings_of_final_length"].append(level_crossings(tr.L[1:], tr.L[-1]))
        rows["V_end_fraction"].append(abs(tr.V[-1]) / np.max(np.abs(tr.V)))
    meta = _meta(spec, name, base, p0_per_run=True, pressure_ratio=0.9)
    return [io.write_table(out / "lengths.csv", cols, meta), io.write_table(out / "summary.csv", rows, meta)]


def scenario_mass_regimes(spec: ScenarioSpec, masses: Sequence[float] = WALL_MASSES) -> list[Path]:
    name = "mass_regimes"
    base = scenario_params(spec, K=20)
    out = spec.out / name
    cols, rows = None, {"M": [], "gamma": [], "L_T": [], "V_end_fraction": []}
    for M in masses:
        p = base.replace(wall_mass=M, gamma=10.0 * M / 0.05)
        tr = run_self_consistent(p, spec.initial_state, 0.9, 1, None, spec.auto_dt)
        sl = _thin(tr, CSV_STRIDE)
        if cols is None:
            cols = {"t": tr.t[sl]}
        cols[f"L[M={M:g}]"] = tr.L[sl]
        cols[f"V[M={M:g}]"] = tr.V[sl]
        rows["M"].append(M)
        rows["gamma"].append(p.gamma)
        rows["L_T"].append(tr.L[-1])
        rows["V_end_fraction"].append(abs(tr.V[-1]) / np.max(np.abs(tr.V)))
    meta = _meta(spec, name, base, p0_per_run=True, pressure_ratio=0.9, gamma_rule="gamma = 10 M / 0.05")
    return [io.write_table(out / "trajectories.csv", cols, meta), io.write_table(out / "summary.csv", rows, meta)]


def fidelity_series(tr: Trajectory, hamiltonian: str = "physical") -> np.ndarray:
    """Ground-state fidelity at each recorded sample (physical) or stored state (effective)."""
    if hamiltonian == "physical":
        return np.sqrt(np.clip(tr.populations[:, 0], 0.0, None))
    I = overlap_matrix(tr.params.K)
    out = np.empty(len(tr.state_index))
    for j, i in enumerate(tr.state_index):
        H = effective_hamiltonian(tr.L[i], tr.V[i], I, tr.params.particle_mass)
        g = np.linalg.eigh(H)[1][:, 0]
        out[j] = abs(np.vdot(g, tr.states[j]))
    return out


def scenario_fidelity_check(spec: ScenarioSpec, masses: Sequence[float] = WALL_MASSES,
                            ratios: Sequence[float] = (0.9, 1.0 / 0.9)) -> list[Path]:
    name = "fidelity_check"
    base = scenario_params(spec, K=20)
    out = spec.out / name
    rows = {k: [] for k in ("M", "gamma", "pressure_ratio", "min_fidelity", "min_fidelity_effective", "L_T")}
    for ratio in ratios:
        for M in masses:
            p = base.replace(wall_mass=M, gamma=10.0 * M / 0.05)
            tr = run_self_consistent(p, "ground", ratio, 1, 1, spec.auto_dt)
            rows["M"].append(M)
            rows["gamma"].append(p.gamma)
            rows["pressure_ratio"].append(ratio)
            rows["min_fidelity"].append(fidelity_series(tr).min())
            rows["min_fidelity_effective"].append(fidelity_series(tr, "effective").min())
            rows["L_T"].append(tr.L[-1])
    return [io.write_table(out / "summary.csv", rows, _meta(
        spec, name, base, fidelity="|<ground of H(t)|psi>|; effective column uses the lowest eigenvector of H*"))]


# --------------------------------------------------------------------------
# dephasing
# --------------------------------------------------------------------------

def _dephasing_run(params: SimParams, Gamma: float, spec: ScenarioSpec) -> Trajectory:
    return run_self_consistent(params.replace(dephasing_rate=Gamma), spec.initial_state, 1.1, 1, 20,
                               spec.auto_dt, mixed=True)


def scenario_dephasing(spec: ScenarioSpec, rates: Sequence[float] = DEPHASING_RATES) -> list[Path]:
    name = "dephasing"
    base = scenario_params(spec, K=40)
    out = spec.out / name
    files = []
    rows = {"Gamma": [], "min_purity": [], "final_purity": [], "L_T": []}
    I = overlap_matrix(base.K)
    for G in rates:
        tr = _dephasing_run(base, G, spec)
        n = len(tr.state_index)
        cols = {k: np.empty(n) for k in ("t", "L", "V", "pop_ground_Hstar", "pop_first_Hstar", "coherence_01", "purity")}
        for j, i in enumerate(tr.state_index):
            H = effective_hamiltonian(tr.L[i], tr.V[i], I, base.particle_mass)
            pops, coh, pur = hstar_basis_observables(tr.states[j], H)
            cols["t"][j], cols["L"][j], cols["V"][j] = tr.t[i], tr.L[i], tr.V[i]
            cols["pop_ground_Hstar"][j], cols["pop_first_Hstar"][j] = pops[0], pops[1]
            cols["coherence_01"][j], cols["purity"][j] = coh, pur
        files.append(io.write_table(out / f"Gamma_{G:g}.csv", cols, _meta(spec, name, tr.params, pressure_ratio=1.1)))
        rows["Gamma"].append(G)
        rows["min_purity"].append(tr.purity.min())
        rows["final_purity"].append(tr.purity[-1])
        rows["L_T"].append(tr.L[-1])
    files.append(io.write_table(out / "summary.csv", rows, _meta(spec, name, base, p0_per_run=True, pressure_ratio=1.1)))
    return files


def scenario_dephasing_length_shift(spec: ScenarioSpec, Gamma: float = 10.0) -> list[Path]:
    name = "dephasing_length_shift"
    base = scenario_params(spec, K=40)
    ref = _dephasing_run(base, 0.0, spec)
    deph = _dephasing_run(base, Gamma, spec)
    sl = _thin(ref, CSV_STRIDE)
    rel = (deph.L - ref.L) / ref.L
    cols = {"t": ref.t[sl], "L_Gamma0": ref.L[sl], f"L_Gamma{Gamma:g}": deph.L[sl], "Delta_L_rel": rel[sl]}
    meta = _meta(spec, name, ref.params.replace(dephasing_rate=Gamma), pressure_ratio=1.1, Gamma=Gamma)
    summary = {"Gamma": [Gamma], "Delta_L_rel_T": [rel[-1]], "Delta_L_rel_max": [rel.max()], "Delta_L_rel_min": [rel.min()]}
    out = spec.out / name
    return [io.write_table(out / "length_shift.csv", cols, meta), io.write_table(out / "summary.csv", summary, meta)]


# --------------------------------------------------------------------------
# equilibrium sweep
# --------------------------------------------------------------------------

def _sweep_case(args):
    params, initial, ratio, auto_dt = args
    tr = run_self_consistent(params, initial, ratio, 10, 1000, auto_dt)
    return {"pressure_ratio": ratio, **equilibrium_metrics(tr)}


def sweep(params: SimParams, ratios: Iterable[float], initial: str = "thermal", auto_dt: bool = True) -> dict:
    """Final/minimum length and wall speed across pressure ratios (merged in input order)."""
    rows = parallel_map(_sweep_case, [(params, initial, float(r), auto_dt) for r in ratios])
    return {k: [r[k] for r in rows] for k in rows[0]}


def scenario_equilibrium_sweep(spec: ScenarioSpec, ratios: Sequence[float] = SWEEP_RATIOS) -> list[Path]:
    name = "equilibrium_sweep"
    params = scenario_params(spec, K=20, gamma=10.0, beta=0.1)
    table = sweep(params, ratios, "thermal", spec.auto_dt)
    return [io.write_table(spec.out / name / "sweep.csv", table, _meta(spec, name, params, p0_per_run=True, initial_state="thermal"))]


# --------------------------------------------------------------------------
# thermodynamics
# --------------------------------------------------------------------------

def _thermo_params(spec: ScenarioSpec) -> SimParams:
    return scenario_params(spec, K=20, gamma=10.0, beta=0.1, dephasing_rate=0.0)


def _label(ratio: float) -> str:
    return "compression" if ratio > 1 else "expansion"


def scenario_entropy_and_friction_work(spec: ScenarioSpec) -> list[Path]:
    name = "entropy_and_friction_work"
    params = _thermo_params(spec)
    files = []
    for ratio in THERMO_RATIOS:
        tr, rec = run_thermo(params, ratio, 20, spec.auto_dt)
        cols = {"t": rec.t, "W_fric_abs": rec.W_fric, "Sigma_ep": rec.entropy_production}
        files.append(io.write_table(spec.out / name / f"{_label(ratio)}.csv", cols,
                                    _meta(spec, name, tr.params, pressure_ratio=ratio, initial_state="thermal")))
    return files


def scenario_irreversible_work(spec: ScenarioSpec) -> list[Path]:
    name = "irreversible_work"
    params = _thermo_params(spec)
    files = []
    for ratio in THERMO_RATIOS:
        tr, rec = run_thermo(params, ratio, 20, spec.auto_dt)
        W_expected = rec.entropy_production / params.beta + rec.delta_F
        cols = {
            "t": rec.t, "Delta_U": rec.delta_U, "W_expected": W_expected,
            "difference": rec.delta_U - W_expected, "W_mean": rec.W_mean, "Delta_F": rec.delta_F,
            "W_irr": rec.W_irr, "Sigma_ep": rec.entropy_production,
            "identity_residual": rec.entropy_production - params.beta * (rec.delta_U - rec.delta_F),
        }
        files.append(io.write_table(spec.out / name / f"{_label(ratio)}.csv", cols, _meta(
            spec, name, tr.params, pressure_ratio=ratio, initial_state="thermal",
            W_expected="Sigma/beta + Delta_F", work_sign="w = E_m(t) - E_n(0), work done on the particle")))
    return files


def scenario_jarzynski(spec: ScenarioSpec) -> list[Path]:
    name = "jarzynski"
    params = _thermo_params(spec)
    files = []
    for ratio in THERMO_RATIOS:
        tr, rec = run_thermo(params, ratio, 20, spec.auto_dt)
        cols = {"t": rec.t, "lhs": rec.jarzynski_lhs, "rhs": rec.jarzynski_rhs, "difference": rec.jarzynski_difference}
        meta = _meta(spec, name, tr.params, pressure_ratio=ratio, initial_state="thermal")
        files.append(io.write_table(spec.out / name / f"{_label(ratio)}.csv", cols, meta))
        stats = work_statistics(tr, params.beta, state_stride=len(tr) - 1)
        dist = stats.distribution(len(stats) - 1)
        path = spec.out / name / f"work_distribution_{_label(ratio)}_T.csv"
        path.write_text(dist.to_csv(meta))
        files.append(path)
    return files


RUNNERS = {
    "const_velocity": scenario_const_velocity,
    "friction_modes": scenario_friction_modes,
    "dephasing": scenario_dephasing,
    "dephasing_length_shift": scenario_dephasing_length_shift,
    "equilibrium_sweep": scenario_equilibrium_sweep,
    "entropy_and_friction_work": scenario_entropy_and_friction_work,
    "irreversible_work": scenario_irreversible_work,
    "jarzynski": scenario_jarzynski,
    "gamma_regimes": scenario_gamma_regimes,
    "mass_regimes": scenario_mass_regimes,
    "fidelity_check": scenario_fidelity_check,
}


def run_scenario(spec: ScenarioSpec) -> list[Path]:
    if spec.name not in RUNNERS:
        raise ConfigurationError(f"unknown scenario {spec.name!r}; choose from {sorted(RUNNERS)}")
    try:
        Path(spec.out).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {spec.out}: {exc}") from None
    return RUNNERS[spec.name](spec)


# --------------------------------------------------------------------------
# convergence
# --------------------------------------------------------------------------

def _max_dev(a: Trajectory, b: Trajectory, key: str) -> float:
    """Max |a - b| over the common sample times of two runs."""
    t = np.intersect1d(np.round(a.t, 12), np.round(b.t, 12))
    ia = np.searchsorted(np.round(a.t, 12), t)
    ib = np.searchsorted(np.round(b.t, 12), t)
    if key == "pop_1":
        return float(np.max(np.abs(a.populations[ia, 0] - b.populations[ib, 0])))
    return float(np.max(np.abs(getattr(a, key)[ia] - getattr(b, key)[ib])))


def _joint_final(tr: Trajectory, K: int) -> np.ndarray:
    s = tr.states[-1]
    return np.concatenate([np.ravel(s), [tr.L[-1], tr.V[-1]]])


def convergence_report(base: SimParams, initial: str = "ground", ratio: float = 1.1,
                       with_jarzynski: Optional[bool] = None) -> dict:
    """Sensitivity of a run to the time step and to the truncation order.

    Time step: runs at dt, dt/2 and dt/4 give successive differences of the
    final joint state; their ratio estimates the convergence order
    (``log2(ratio)``, 4 for RK4). Truncation: K versus 2K.
    """
    if with_jarzynski is None:
        with_jarzynski = initial == "thermal"
    dt = base.dt
    runs = [run_self_consistent(base.replace(dt=dt / f), initial, ratio, f, None if initial != "thermal" else 20 * f,
                                False)
            for f in (1, 2, 4)]
    d1 = float(np.max(np.abs(_joint_final(runs[0], base.K) - _joint_final(runs[1], base.K))))
    d2 = float(np.max(np.abs(_joint_final(runs[1], base.K) - _joint_final(runs[2], base.K))))
    ratio_dt = d1 / d2 if d2 > 0 else float("inf")
    kruns = [run_self_consistent(base.replace(K=k), initial, ratio, 1, None if initial != "thermal" else 20, False)
             for k in (base.K, 2 * base.K)]
    report = {
        "params": base.to_dict(),
        "initial_state": initial,
        "pressure_ratio": ratio,
        "dt": {
            "values": [dt, dt / 2, dt / 4],
            "final_state_diff": [d1, d2],
            "error_ratio": ratio_dt,
            "order_estimate": math.log2(ratio_dt) if 0 < ratio_dt < float("inf") else None,
            "max_dev_dt_vs_half": {k: _max_dev(runs[0], runs[1], k) for k in ("L", "U", "pop_1")},
        },
        "K": {
            "values": [base.K, 2 * base.K],
            "max_dev": {k: _max_dev(kruns[0], kruns[1], k) for k in ("L", "U", "pop_1")},
        },
    }
    if with_jarzynski:
        jz = [np.max(np.abs(thermo_record(r, base.beta).jarzynski_difference)) for r in (runs[0], runs[1])]
        report["dt"]["max_jarzynski_difference"] = [float(x) for x in jz]
        jk = [np.max(np.abs(thermo_record(r, base.beta).jarzynski_difference)) for r in kruns]
        report["K"]["max_jarzynski_difference"] = [float(x) for x in jk]
    return report
