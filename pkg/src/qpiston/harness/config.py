"""Run configuration: a flat TOML key/value file.

Recognised keys (all optional)::

    m, M, Sigma_w, gamma, P0, pressure_ratio, Gamma, beta, K, dt, T,
    friction_mode, initial_state, eigenstate, auto_dt, stride, state_stride,
    scenario, out

``pressure_ratio`` sets the external pressure relative to the particle's
initial pressure P(0); it cannot be combined with ``P0``. When neither is
given the ratio defaults to 1 (mechanical balance at t = 0).
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigurationError
from ..state import FRICTION_MODES, INITIAL_LENGTH, MixedState, PureState, SimParams, eigenstate, thermal_state

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# config key -> SimParams field
PARAM_KEYS = {
    "m": "particle_mass",
    "M": "wall_mass",
    "Sigma_w": "section",
    "gamma": "gamma",
    "P0": "external_pressure",
    "Gamma": "dephasing_rate",
    "beta": "beta",
    "K": "K",
    "dt": "dt",
    "T": "T",
    "friction_mode": "friction_mode",
}
RUN_KEYS = {"pressure_ratio", "initial_state", "eigenstate", "auto_dt", "stride", "state_stride", "scenario", "out"}
INITIAL_STATES = ("ground", "eigenstate", "thermal")

SCENARIOS = {
    "const_velocity": "wavefunction after T = L0/2V at constant wall speed",
    "friction_modes": "wall speed for the three friction models",
    "dephasing": "populations, coherence and purity under dephasing",
    "dephasing_length_shift": "relative length change caused by dephasing",
    "equilibrium_sweep": "final and minimum length versus P0/P(0)",
    "entropy_and_friction_work": "friction work and entropy production",
    "irreversible_work": "energy change versus irreversible-work prediction",
    "jarzynski": "both sides of the Jarzynski equality",
    "gamma_regimes": "box length for gamma = 10, 1, 0.1",
    "mass_regimes": "box length and wall speed for M = 0.001 and M = 1",
    "fidelity_check": "minimum instantaneous ground-state fidelity for light and heavy walls",
}


@dataclass(frozen=True)
class ScenarioSpec:
    """What to run and where to write it.

    ``overrides`` holds only the SimParams fields the user set explicitly;
    scenarios start from their own figure defaults and apply these on top.
    """

    name: Optional[str] = None
    overrides: dict = field(default_factory=dict)
    out: Path = Path("out")
    initial_state: str = "ground"
    eigenstate: int = 1
    pressure_ratio: Optional[float] = None
    auto_dt: bool = True
    stride: int = 1
    state_stride: Optional[int] = None

    def __post_init__(self):
        if self.name is not None and self.name not in SCENARIOS:
            raise ConfigurationError(f"scenario: unknown name {self.name!r}; choose from {sorted(SCENARIOS)}")
        if self.initial_state not in INITIAL_STATES:
            raise ConfigurationError(f"initial_state: must be one of {INITIAL_STATES}, got {self.initial_state!r}")

    @property
    def figure(self) -> str:
        return SCENARIOS.get(self.name, "")


def initial_state(kind: str, params: SimParams, n: int = 1):
    if kind == "ground":
        return eigenstate(1, params.K)
    if kind == "eigenstate":
        return eigenstate(n, params.K)
    if kind == "thermal":
        return thermal_state(params.beta, INITIAL_LENGTH, params.K, params.particle_mass)[0]
    raise ConfigurationError(f"initial_state: unknown kind {kind!r}")


def initial_pressure(state, params: SimParams, L: float = INITIAL_LENGTH) -> float:
    """P(0) = 2 U(0) / (L section)."""
    from ..thermo import internal_energy

    return 2.0 * internal_energy(state, L, params.particle_mass) / (L * params.section)


def with_pressure_ratio(params: SimParams, ratio: float, state) -> SimParams:
    if not np.isfinite(ratio) or ratio < 0:
        raise ConfigurationError(f"pressure_ratio: must be >= 0, got {ratio!r}")
    return params.replace(external_pressure=ratio * initial_pressure(state, params))


def _check_type(key, value, kinds):
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigurationError(f"{key}: expected {kinds[0].__name__}, got {value!r}")
    if not isinstance(value, kinds):
        raise ConfigurationError(f"{key}: expected {kinds[0].__name__}, got {value!r}")


def parse_config(raw: dict) -> tuple[SimParams, ScenarioSpec]:
    """Validate a key/value mapping and build parameters plus scenario spec."""
    unknown = sorted(set(raw) - set(PARAM_KEYS) - RUN_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
    overrides = {}
    for key, fname in PARAM_KEYS.items():
        if key not in raw:
            continue
        value = raw[key]
        if key == "friction_mode":
            _check_type(key, value, (str,))
            if value not in FRICTION_MODES:
                raise ConfigurationError(f"{key}: must be one of {FRICTION_MODES}, got {value!r}")
        elif key == "K":
            _check_type(key, value, (int,))
        else:
            _check_type(key, value, (float, int))
            value = float(value)
        overrides[fname] = value
    if "P0" in raw and "pressure_ratio" in raw:
        raise ConfigurationError("P0 and pressure_ratio are mutually exclusive")
    try:
        params = SimParams(**overrides)
    except ConfigurationError as exc:
        # re-label with the config key the user actually wrote
        msg = str(exc)
        for key, fname in PARAM_KEYS.items():
            if msg.startswith(fname + ":"):
                msg = key + msg[len(fname):]
                break
        raise ConfigurationError(msg) from None

    run = {}
    for key in ("initial_state", "scenario", "out"):
        if key in raw:
            _check_type(key, raw[key], (str,))
    for key in ("eigenstate", "stride", "state_stride"):
        if key in raw:
            _check_type(key, raw[key], (int,))
            if raw[key] < 1:
                raise ConfigurationError(f"{key}: must be >= 1, got {raw[key]!r}")
    if "auto_dt" in raw:
        _check_type("auto_dt", raw["auto_dt"], (bool,))
    ratio = raw.get("pressure_ratio")
    if ratio is not None:
        _check_type("pressure_ratio", ratio, (float, int))
        ratio = float(ratio)
    spec = ScenarioSpec(
        name=raw.get("scenario"),
        overrides=overrides,
        out=Path(raw.get("out", "out")),
        initial_state=raw.get("initial_state", "ground"),
        eigenstate=raw.get("eigenstate", 1),
        pressure_ratio=ratio,
        auto_dt=raw.get("auto_dt", True),
        stride=raw.get("stride", 1),
        state_stride=raw.get("state_stride"),
    )
    if spec.initial_state == "eigenstate" and not 1 <= spec.eigenstate <= params.K:
        raise ConfigurationError(f"eigenstate: must lie in 1..K={params.K}, got {spec.eigenstate}")
    if "P0" not in raw:
        state = initial_state(spec.initial_state, params, spec.eigenstate)
        params = with_pressure_ratio(params, 1.0 if ratio is None else ratio, state)
    return params, spec


def load_config(path) -> tuple[SimParams, ScenarioSpec]:
    """Read a TOML config file. An empty file yields the defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    return parse_config(raw)
