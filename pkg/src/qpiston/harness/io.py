"""CSV and sidecar-metadata persistence for trajectories and tables."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ..dynamics import Trajectory, friction_factor
from ..errors import ConfigurationError
from ..state import SimParams, format_state

FLOAT_FORMAT = "{:.12g}"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(v)
    return FLOAT_FORMAT.format(float(v))


def write_table(path: Path, columns: Mapping[str, Sequence], metadata: Optional[Mapping] = None) -> Path:
    """Write equal-length columns as CSV, preceded by ``# key: value`` metadata lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    n = {a.shape[0] for a in arrays}
    if len(n) > 1:
        raise ValueError(f"columns have different lengths: {n}")
    with open(path, "w", newline="") as fh:
        for k, v in (metadata or {}).items():
            text = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
            fh.write(f"# {k}: {text}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*arrays):
            writer.writerow([_fmt(v) for v in row])
    return path


def read_table(path: Path) -> tuple[dict, dict]:
    """Inverse of :func:`write_table`: ``(columns, metadata)``; metadata values stay strings."""
    meta, rows = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition(": ")
                meta[key] = value
            else:
                rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    data = [list(map(float, r)) for r in reader if r]
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}, meta


def trajectory_columns(tr: Trajectory) -> dict:
    cols = {
        "t": tr.t, "L": tr.L, "V": tr.V, "U": tr.U, "P": tr.P, "W_fric": tr.W_fric,
        "purity": tr.purity,
    }
    for n in range(tr.populations.shape[1]):
        cols[f"pop_{n + 1}"] = tr.populations[:, n]
    cols["A"] = tr.A
    cols["E_residual"] = tr.energy_residual
    return cols


def write_trajectory(path: Path, tr: Trajectory, metadata: Optional[Mapping] = None,
                     extra: Optional[Mapping] = None) -> Path:
    """Trajectory CSV plus a ``.meta.json`` sidecar holding the full parameter set."""
    path = Path(path)
    meta = {"params": tr.params.to_dict(), "mode": tr.mode, "stride": tr.stride}
    meta.update(tr.metadata)
    meta.update(metadata or {})
    cols = trajectory_columns(tr)
    cols.update(extra or {})
    write_table(path, cols, meta)
    sidecar = path.with_suffix(".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return path


def read_trajectory(path: Path, params: Optional[SimParams] = None) -> Trajectory:
    """Load a trajectory CSV for replay. Quantum states are not stored in CSV."""
    path = Path(path)
    cols, _ = read_table(path)
    if params is None:
        sidecar = path.with_suffix(".meta.json")
        if not sidecar.exists():
            raise ConfigurationError(f"{path}: no parameters given and no sidecar {sidecar.name}")
        params = SimParams(**json.loads(sidecar.read_text())["params"])
        meta = json.loads(sidecar.read_text())
    else:
        meta = {}
    t = cols["t"]
    K = sum(1 for k in cols if k.startswith("pop_"))
    pops = np.column_stack([cols[f"pop_{n}"] for n in range(1, K + 1)])
    if "A" in cols:
        A = cols["A"]
    else:
        f = np.array([friction_factor(v, params.friction_mode) for v in cols["V"]])
        A = (2 * cols["U"] / cols["L"] - params.section * params.external_pressure
             - params.gamma * f * cols["V"]) / params.wall_mass
    stride = int(round((t[1] - t[0]) / params.dt)) if len(t) > 1 else 1
    return Trajectory(
        params=params, mode=str(meta.get("mode", "self_consistent")), t=t, L=cols["L"], V=cols["V"], A=A,
        U=cols["U"], P=cols["P"], W_fric=cols["W_fric"], purity=cols["purity"], populations=pops,
        energy_residual=cols.get("E_residual", np.zeros_like(t)),
        states=np.empty((0, K), dtype=complex), state_index=np.empty(0, dtype=int),
        stride=stride, state_stride=1, mixed=False, metadata=meta,
    )


def write_state(path: Path, state) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_state(state))
    return path


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
