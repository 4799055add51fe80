"""Command-line front end.

Configuration files are JSON objects whose keys carry their units::

    {
      "model": {"eta": 0.505, "omega_max_over_omega0": 20.0,
                "gamma_z_over_omega0_2pi": 0.0, "n_max": 3},
      "optimizer": {"alpha_dr": 0.3, "alpha_tw": 0.3, "n_it": 20000,
                    "n_omega": 18, "n_f": 3},
      "pulse_area_over_pi": 1.5,
      "substeps_per_period": 200
    }

Every command writes ``provenance.json`` to its output directory. Exit
codes: 0 success, 2 configuration error, 3 numerical failure, 4 partial
sweep.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import experiments as ex
from .dynamics import (
    IntegrationError,
    PropagationSettings,
    final_state,
    infidelity,
    motional_populations,
    quadrature_trajectory,
    target_state,
)
from .hilbert import ModelConfig
from .pepr import CalibrationTable, OptimizerHyperparams, learning_rate_lookup, optimize
from .protocols import (
    check_constraints,
    load_protocol,
    normalized_impulse,
    projected_force,
    protocol_from_dict,
    pulse_area,
    rabi_protocol,
    recoil_compensated_protocol,
    save_protocol,
    write_protocol_timeseries,
)

log = logging.getLogger("recoilfree")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4

MODEL_KEYS = {
    "eta": "eta",
    "omega_max_over_omega0": "omega_max",
    "gamma_z_over_omega0_2pi": "gamma_z",
    "n_max": "n_max",
    "v_max_over_x0_omega0": "v_max_dimless",
}
OPTIMIZER_KEYS = {"alpha_dr", "alpha_tw", "n_it", "n_omega", "n_f", "seed", "eval_stride", "stall_window"}
TOP_KEYS = {"model", "optimizer", "pulse_area_over_pi", "substeps_per_period", "seeds", "experiment"}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Parsed configuration file plus command-line overrides."""

    def __init__(self, raw: dict | None = None):
        raw = dict(raw or {})
        unknown = set(raw) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        self.raw = raw
        model = dict(raw.get("model", {}))
        bad = set(model) - set(MODEL_KEYS)
        if bad:
            raise ConfigError(f"unknown model keys: {sorted(bad)} (units belong in key names, e.g. omega_max_over_omega0)")
        try:
            self.model = ModelConfig(**{MODEL_KEYS[k]: v for k, v in model.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc
        opt = dict(raw.get("optimizer", {}))
        bad = set(opt) - OPTIMIZER_KEYS
        if bad:
            raise ConfigError(f"unknown optimizer keys: {sorted(bad)}")
        try:
            self.hyper = OptimizerHyperparams(**opt)
            self.settings = PropagationSettings(substeps_per_period=int(raw.get("substeps_per_period", 200)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.area = float(raw.get("pulse_area_over_pi", 1.5))
        if not self.area > 0:
            raise ConfigError("pulse_area_over_pi must be positive")
        self.seeds = raw.get("seeds")
        self.experiment = dict(raw.get("experiment", {}))

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
        return cls(data)

    def resolved(self) -> dict:
        """Fully expanded parameters, enough to rerun the command."""
        return {
            "model": {k: getattr(self.model, v) for k, v in MODEL_KEYS.items()},
            "optimizer": asdict(self.hyper),
            "pulse_area_over_pi": self.area,
            "substeps_per_period": self.settings.substeps_per_period,
            "seeds": self.seeds,
            "experiment": self.experiment,
        }


def parse_seeds(text: str | None, default=(0,)) -> list:
    """'3' -> [3]; '1..8' -> [1, ..., 8]; '1,4,9' -> [1, 4, 9]."""
    if text is None:
        return list(default)
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"empty seed range {text}")
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad seed specification {text!r}") from exc


def _floats(text: str) -> list:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _write_provenance(out: Path, args, cfg: RunConfig, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "software": ex.provenance(),
        "command": args.command,
        "argv": sys.argv[1:],
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "config": cfg.resolved(),
    }
    if extra:
        record.update(extra)
    (out / "provenance.json").write_text(json.dumps(record, indent=2, default=str) + "\n")


def _hyper(args, cfg: RunConfig) -> OptimizerHyperparams:
    h = cfg.hyper
    if args.full_scale:
        h = h.replace(n_it=ex.FULL_N_IT)
    if getattr(args, "n_it", None) is not None:
        h = h.replace(n_it=args.n_it)
    return h


def _builtin_protocol(name: str, config: ModelConfig):
    if name == "rabi":
        return rabi_protocol(config.omega_max)
    if name in ("recoil-compensated", "compensated"):
        return recoil_compensated_protocol(config)
    raise ConfigError(f"unknown builtin protocol {name!r} (use rabi or recoil-compensated)")


# --- commands -------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> int:
    config = cfg.model
    if args.protocol is not None:
        p = Path(args.protocol)
        if not p.is_file():
            raise ConfigError(f"protocol file not found: {p}")
        try:
            protocol = load_protocol(p)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    else:
        protocol = _builtin_protocol(args.builtin, config)
    report = check_constraints(protocol, config)
    if not report.ok:
        log.warning("protocol violates constraints: %s", report)
    rho = final_state(config, protocol, cfg.settings)
    result = {
        "infidelity": infidelity(rho, target_state(config)),
        "motional_populations": motional_populations(rho).tolist(),
        "pulse_area": pulse_area(protocol),
        "normalized_impulse": normalized_impulse(protocol),
        "t_f": protocol.t_f,
    }
    print(f"1-F = {result['infidelity']:.12g}")
    print("motional populations: " + " ".join(f"{v:.6g}" for v in result["motional_populations"]))
    print(f"pulse area = {result['pulse_area']:.12g}")
    print(f"normalized impulse = {result['normalized_impulse']:.12g}")
    if args.out:
        out = Path(args.out)
        _write_provenance(out, args, cfg, {"result": result})
        if args.emit_csv:
            traj = quadrature_trajectory(config, protocol, settings=cfg.settings)
            ex.write_csv(out / "quadratures.csv", ["t", "x", "p"], zip(traj.times, traj.position, traj.momentum))
            write_protocol_timeseries(out / "protocol.csv", protocol)
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig) -> int:
    config = cfg.model
    seeds = parse_seeds(args.seeds, cfg.seeds and parse_seeds(str(cfg.seeds)) or (cfg.hyper.seed,))
    hyper = _hyper(args, cfg)
    t_f = cfg.area * math.pi / config.omega_max
    if args.calibration:
        a_dr, a_tw, _ = learning_rate_lookup(config.omega_max, t_f, CalibrationTable.load(args.calibration))
        hyper = hyper.replace(alpha_dr=a_dr, alpha_tw=a_tw)
    out = Path(args.out)
    _write_provenance(out, args, cfg, {"seeds": seeds})
    tasks = [(config, t_f, hyper.replace(seed=s), cfg.settings) for s in seeds]
    best = None
    failed = 0
    for s, traj in zip(seeds, ex._map(_optimize_task, tasks, args.workers)):
        (out / f"trajectory_seed{s}.json").write_text(json.dumps(traj, indent=1) + "\n")
        print(f"seed {s}: best 1-F = {traj['best_infidelity']:.6g} ({traj['status']})")
        if traj["status"] != "ok":
            failed += 1
            continue
        if best is None or traj["best_infidelity"] < best["best_infidelity"]:
            best = traj
    if best is None:
        log.error("all trajectories failed")
        return EXIT_NUMERIC
    proto = protocol_from_dict(best["best_protocol"])
    save_protocol(out / "best_protocol.json", proto)
    if args.emit_csv:
        write_protocol_timeseries(out / "best_protocol.csv", proto)
    print(f"best 1-F = {best['best_infidelity']:.12g} (seed {best['hyper']['seed']})")
    return EXIT_PARTIAL if failed else EXIT_OK


def _optimize_task(args):
    config, t_f, hyper, settings = args
    return optimize(config, t_f, hyper, settings=settings).to_dict()


def _load_table(path):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"calibration table not found: {p}")
    return CalibrationTable.load(p)


def cmd_sweep(args, cfg: RunConfig) -> int:
    seeds = parse_seeds(args.seeds, ex.DESK_SEEDS)
    if args.omegas:
        omegas = _floats(args.omegas)
        areas = _floats(args.areas) if args.areas else list(np.linspace(1.0, 4.0, 13))
        grid = [(o, a) for o in omegas for a in areas]
    else:
        grid = ex.default_grid(args.n_omega, args.n_area)
    out = Path(args.out)
    _write_provenance(out, args, cfg, {"seeds": seeds})
    cells = ex.regime_sweep(
        grid, _hyper(args, cfg), seeds, cfg.model, out, args.resume, args.workers,
        _load_table(args.calibration), cfg.settings,
    )
    if args.emit_csv:
        ex.write_csv(out / "regime_grid.csv", ["omega_max_over_omega0", "tf_omega_max_over_pi", "log10_infidelity"],
                     ex.sweep_csv_rows(cells))
        ex.write_csv(out / "lab_time.csv", ["omega_max_over_omega0", "tf_omega0_over_pi", "best_infidelity"],
                     ex.lab_time_view(cells))
        imap = ex.impulse_map(cells, cfg.model.eta, args.slice_area)
        ex.write_csv(out / "impulse_map.csv", ["omega_max_over_omega0", "tf_omega_max_over_pi", "impulse"], imap.rows)
        ex.write_csv(out / "impulse_slice.csv", ["omega_max_over_omega0", "impulse", "minus_eta"], imap.slice_rows)
    for c in cells:
        print(f"{c.cell_id}: 1-F0={c.infidelity_rabi:.3g} 1-Ff={c.infidelity_compensated:.3g} "
              f"1-F*={c.best_infidelity:.3g} [{c.status}]")
    return EXIT_PARTIAL if any(c.status != "ok" for c in cells) else EXIT_OK


def cmd_dissipation(args, cfg: RunConfig) -> int:
    seeds = parse_seeds(args.seeds, ex.DESK_SEEDS)
    omegas = _floats(args.omegas)
    gammas = _floats(args.gammas)
    out = Path(args.out)
    _write_provenance(out, args, cfg, {"seeds": seeds})
    recs = ex.dissipation_sweep(
        omegas, gammas, _hyper(args, cfg), seeds, cfg.model, args.area, out, args.resume,
        args.workers, _load_table(args.calibration), cfg.settings,
    )
    rows = [(r.omega_max, r.gamma_z, r.infidelity_compensated, r.best_infidelity) for r in recs]
    if args.emit_csv:
        ex.write_csv(out / "dissipation.csv",
                     ["omega_max_over_omega0", "gamma_z_over_omega0_2pi", "infidelity_compensated", "best_infidelity"],
                     rows)
    for row in rows:
        print("Omega=%.6g gamma_z=%.6g 1-Ff=%.4g 1-F*=%.4g" % row)
    return EXIT_PARTIAL if any(not math.isfinite(r[3]) for r in rows) else EXIT_OK


def cmd_strobo(args, cfg: RunConfig) -> int:
    series = ex.strobo_run(args.omega, args.reps, cfg.model, cfg.settings)
    out = Path(args.out)
    _write_provenance(out, args, cfg)
    rows = []
    for fam, recs in series.items():
        rows.extend((r.family, r.n, r.infidelity) for r in recs)
    ex.write_csv(out / "strobo.csv", ["family", "n", "infidelity"], rows)
    rabi = [r.infidelity for r in series["rabi"]]
    comp = [r.infidelity for r in series["compensated"]]
    print(f"rabi: local minima at n = {ex.local_minima(rabi)[:8]} ...")
    print(f"compensated: max 1-F = {max(comp):.6g}")
    return EXIT_OK if len(rabi) == len(comp) == args.reps else EXIT_NUMERIC


def cmd_phase_space(args, cfg: RunConfig) -> int:
    res = ex.phase_space_study(args.omega, cfg.model)
    out = Path(args.out)
    _write_provenance(out, args, cfg)
    for name in ("constant", "compensated", "free"):
        tr = getattr(res, name)
        ex.write_csv(out / f"phase_space_{name}.csv", ["t", "x", "p"], zip(tr.times, tr.position, tr.momentum))
    print(f"displacement ratio = {res.displacement_ratio:.6g}")
    print(f"momentum ratio = {res.momentum_ratio:.6g}")
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _write_provenance(out, args, cfg)
    areas = _floats(args.areas) if args.areas else None
    kwargs = {} if areas is None else {"areas": areas}
    scans = {}
    table = ex.calibrate_learning_rates(
        _floats(args.omegas), n_it=args.n_it_scan, seed=parse_seeds(args.seeds)[0], base_config=cfg.model,
        workers=args.workers, settings=cfg.settings, scans=scans, **kwargs,
    )
    table.save(out / "calibration.json")
    if args.emit_csv:
        rows = [(o, a, r.alpha_dr, r.alpha_tw, r.best_infidelity, int(r.unstable))
                for (o, a), rs in scans.items() for r in rs]
        ex.write_csv(out / "calibration_scan.csv",
                     ["omega_max_over_omega0", "t_test_omega_max_over_pi", "alpha_dr", "alpha_tw",
                      "best_infidelity", "unstable"], rows)
    for e in table.entries:
        print(f"Omega={e.omega_max:.6g} area={e.area:.3g}: alpha_dr={e.alpha_dr} alpha_tw={e.alpha_tw}"
              + (" [flagged]" if e.flagged else ""))
    return EXIT_PARTIAL if any(e.flagged for e in table.entries) else EXIT_OK


def cmd_project_force(args, cfg: RunConfig) -> int:
    p = Path(args.protocol)
    if not p.is_file():
        raise ConfigError(f"protocol file not found: {p}")
    protocol = load_protocol(p)
    t = np.linspace(0.0, protocol.t_f, args.n_points)
    hx, hy, _ = protocol.controls(t)
    theta = projected_force(np.hypot(hx, hy), cfg.model.eta, protocol.t_f, args.n_f)
    l = np.arange(1, theta.size + 1)
    curve = np.sin(np.pi * np.outer(t, l) / protocol.t_f) @ theta
    out = Path(args.out)
    _write_provenance(out, args, cfg)
    ex.write_csv(out / "theta_f.csv", ["l", "theta_f"], zip(l, theta))
    ex.write_csv(out / "projected_force.csv", ["t", "f_tw"], zip(t, curve))
    print("theta_f = " + " ".join(f"{v:.12g}" for v in theta))
    return EXIT_OK


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recoilfree", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--emit-csv", action="store_true", help="write CSV tables")
        sp.set_defaults(func=func)
        return sp

    def runner(sp, out_required=True):
        sp.add_argument("--seeds", help="seed, list (1,2,3) or range (1..8)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--full-scale", action="store_true", help=f"n_it = {ex.FULL_N_IT}")
        sp.add_argument("--n-it", type=int, help="override the number of accepted updates")
        sp.add_argument("--calibration", help="learning-rate table from the calibrate command")
        if out_required:
            sp.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True)

    sp = add("simulate", cmd_simulate, "propagate one protocol and report 1-F")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--protocol", help="protocol JSON file")
    g.add_argument("--builtin", default="recoil-compensated", help="rabi or recoil-compensated")

    sp = add("optimize", cmd_optimize, "run optimizer trajectories")
    runner(sp, out_required=False)

    sp = add("sweep", cmd_sweep, "regime grid sweep")
    runner(sp)
    sp.add_argument("--omegas", help="comma-separated Omega_max/omega0 values")
    sp.add_argument("--areas", help="comma-separated t_f Omega_max/pi values")
    sp.add_argument("--n-omega", type=int, default=25)
    sp.add_argument("--n-area", type=int, default=13)
    sp.add_argument("--slice-area", type=float, default=3.5)

    sp = add("dissipation", cmd_dissipation, "optimal infidelity versus dephasing")
    runner(sp)
    sp.add_argument("--omegas", required=True)
    sp.add_argument("--gammas", required=True, help="gamma_z in units of omega0/2pi")
    sp.add_argument("--area", type=float, default=3.5)

    sp = add("strobo", cmd_strobo, "repeated forward/backward pulses")
    sp.add_argument("--omega", type=float, default=20.0)
    sp.add_argument("--reps", type=int, default=500)

    sp = add("phase-space", cmd_phase_space, "quadrature dynamics, constant vs compensated force")
    sp.add_argument("--omega", type=float, default=200.0)

    sp = add("calibrate", cmd_calibrate, "learning-rate scan")
    sp.add_argument("--omegas", required=True)
    sp.add_argument("--areas")
    sp.add_argument("--n-it-scan", type=int, default=300)
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--workers", type=int, default=1)

    sp = add("project-force", cmd_project_force, "force projected from a protocol's Rabi amplitude")
    sp.add_argument("--protocol", required=True)
    sp.add_argument("--n-f", type=int, default=3)
    sp.add_argument("--n-points", type=int, default=2001)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    needs_out = args.command not in ("simulate",)
    try:
        if needs_out and not args.out:
            raise ConfigError("--out is required")
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"recoilfree: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"recoilfree: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
