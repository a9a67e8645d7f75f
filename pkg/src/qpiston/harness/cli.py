"""Command-line entry point.

    qpiston simulate     [--config F] [--out D] [--k K] [--dt DT] [--mode M] [--velocity V]
    qpiston scenario N   [--config F] [--out D] [--k K] [--dt DT] [--plot]
    qpiston sweep        [--config F] [--out D] [--values 0.8,0.9,...]
    qpiston jarzynski    [--config F] [--out D]
    qpiston convergence  [--config F] [--out D]

Exit status is 0 on success; validation errors exit 2, invalid states 3,
integration failures 4. The message on stderr starts with the error category.
No random numbers are drawn anywhere, so repeated runs are bitwise identical.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from ..dynamics import ConstantVelocity, SelfConsistent, simulate
from ..errors import ConfigurationError, PistonError
from ..thermo import thermo_record, work_statistics
from . import io
from .config import SCENARIOS, initial_state, parse_config, tomllib
from .scenarios import SWEEP_RATIOS, convergence_report, run_scenario, sweep

log = logging.getLogger("qpiston")


def _raw_config(args) -> dict:
    raw = {}
    if args.config:
        path = Path(args.config)
        try:
            raw = tomllib.loads(path.read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    # command-line flags win over the file
    for flag, key in (("k", "K"), ("dt", "dt"), ("out", "out")):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = str(value) if key == "out" else value
    return raw


def _load(args, **forced):
    raw = _raw_config(args)
    raw.update(forced)
    return parse_config(raw)


def cmd_simulate(args) -> list[Path]:
    params, spec = _load(args)
    state = initial_state(spec.initial_state, params, spec.eigenstate)
    if args.mode == "constant_velocity":
        if args.velocity is None:
            raise ConfigurationError("--velocity is required with --mode constant_velocity")
        mode = ConstantVelocity(args.velocity)
    else:
        mode = SelfConsistent()
    tr = simulate(params, mode, state, stride=spec.stride, state_stride=spec.state_stride, auto_dt=spec.auto_dt,
                  metadata={"initial_state": spec.initial_state})
    return [
        io.write_trajectory(spec.out / "trajectory.csv", tr, {"figure": "n/a (single run)"}),
        io.write_state(spec.out / "final_state.txt", tr.final_state),
    ]


def cmd_scenario(args) -> list[Path]:
    _, spec = _load(args)
    spec = dataclasses.replace(spec, name=args.name)
    files = run_scenario(spec)
    if args.plot:
        from .plots import plot_tables

        files += plot_tables(files)
    return files


def cmd_sweep(args) -> list[Path]:
    params, spec = _load(args)
    values = SWEEP_RATIOS if args.values is None else [float(v) for v in args.values.split(",")]
    table = sweep(params, values, spec.initial_state, spec.auto_dt)
    meta = {"figure": SCENARIOS["equilibrium_sweep"], "params": params.to_dict(), "initial_state": spec.initial_state}
    meta["params"]["external_pressure"] = "pressure_ratio * P(0) of each run"
    return [io.write_table(spec.out / "sweep.csv", table, meta)]


def cmd_jarzynski(args) -> list[Path]:
    params, spec = _load(args, initial_state="thermal")
    state = initial_state("thermal", params)
    state_stride = spec.state_stride or 20
    tr = simulate(params, SelfConsistent(), state, stride=1, state_stride=state_stride, auto_dt=spec.auto_dt,
                  metadata={"initial_state": "thermal"})
    rec = thermo_record(tr)
    idx = tr.state_index
    cols = {k: v[idx] for k, v in io.trajectory_columns(tr).items()}
    cols.update(rec.columns())
    cols["jarzynski_difference"] = rec.jarzynski_difference
    meta = {"figure": SCENARIOS["jarzynski"], "params": tr.params.to_dict(), "initial_state": "thermal"}
    files = [io.write_table(spec.out / "thermo.csv", cols, meta)]
    stats = work_statistics(tr, params.beta, state_stride=len(tr) - 1)
    path = spec.out / "work_distribution_T.csv"
    path.write_text(stats.distribution(len(stats) - 1).to_csv(meta))
    return files + [path]


def cmd_convergence(args) -> list[Path]:
    params, spec = _load(args)
    ratio = 1.1 if spec.pressure_ratio is None else spec.pressure_ratio
    report = convergence_report(params, spec.initial_state, ratio)
    return [io.write_json(spec.out / "convergence.json", report)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpiston", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="TOML key/value file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--k", type=int, help="truncation order K")
        p.add_argument("--dt", type=float, help="integration step")
        p.add_argument("--seedless", action="store_true", help="accepted for compatibility; runs never use RNG")
        return p

    p = common(sub.add_parser("simulate", help="single run, trajectory CSV"))
    p.add_argument("--mode", choices=("self_consistent", "constant_velocity"), default="self_consistent")
    p.add_argument("--velocity", type=float)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("scenario", help="reproduce one figure"))
    p.add_argument("name", choices=sorted(SCENARIOS))
    p.add_argument("--plot", action="store_true", help="also write PNG charts")
    p.set_defaults(func=cmd_scenario)

    p = common(sub.add_parser("sweep", help="final/minimum length across pressure ratios"))
    p.add_argument("--values", help="comma-separated P0/P(0) ratios")
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("jarzynski", help="thermal run with work statistics"))
    p.set_defaults(func=cmd_jarzynski)

    p = common(sub.add_parser("convergence", help="dt and K sensitivity report"))
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        files = args.func(args)
    except PistonError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
