"""Studies built on the simulator and optimizer, with on-disk persistence.

Results directory layout::

    out/
      manifest.json          index of all cells
      cells/<cell_id>.json   one record per sweep cell

Cells already on disk are skipped when a sweep is resumed.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import __version__
from .dynamics import (
    DEFAULT_SETTINGS,
    IntegrationError,
    PropagationSettings,
    _health,
    advance,
    initial_state,
    protocol_infidelity,
    quadrature_trajectory,
    step_size,
)
from .hilbert import ModelConfig, generator_for
from .pepr import (
    ALPHA_GRID,
    T_TEST_AREAS,
    CalibrationEntry,
    CalibrationTable,
    OptimizerHyperparams,
    learning_rate_lookup,
    optimize,
)
from .protocols import (
    AnalyticProtocol,
    SineModeProtocol,
    normalized_impulse,
    projected_force,
    rabi_protocol,
    recoil_compensated_protocol,
)

log = logging.getLogger(__name__)

DESK_N_IT = 20_000
FULL_N_IT = 100_000
DESK_SEEDS = tuple(range(8))


def provenance() -> str:
    """Package version plus the git revision of the working tree, when available."""
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"recoilfree {__version__}" + (f" ({rev})" if rev else "")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.12g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def default_grid(n_omega: int = 25, n_area: int = 13) -> list:
    """Omega_max log-spaced over [1e-2, 2e2], t_f Omega_max / pi linear over [1, 4]."""
    omegas = np.geomspace(1e-2, 2e2, n_omega)
    areas = np.linspace(1.0, 4.0, n_area)
    return [(float(o), float(a)) for o in omegas for a in areas]


# --- sweep cells -----------------------------------------------------------


def cell_id(omega_max: float, area: float, gamma_z: float = 0.0) -> str:
    s = f"om{omega_max:.6g}_area{area:.6g}"
    if gamma_z:
        s += f"_gz{gamma_z:.6g}"
    return s


@dataclass
class SweepCell:
    omega_max: float
    area: float  # t_f omega_max / pi
    gamma_z: float = 0.0
    seeds: list = field(default_factory=list)
    infidelity_rabi: float = math.nan  # 1 - F_0
    infidelity_compensated: float = math.nan  # 1 - F_f
    best_infidelity: float = math.nan  # 1 - F_theta*, min over the ensemble
    per_seed: dict = field(default_factory=dict)
    best_seed: int | None = None
    best_protocol: dict | None = None
    impulse: float = math.nan
    alpha_dr: float = math.nan
    alpha_tw: float = math.nan
    rates_calibrated: bool = False
    wall_time: float = 0.0
    status: str = "ok"
    errors: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    provenance: str = ""

    @property
    def cell_id(self) -> str:
        return cell_id(self.omega_max, self.area, self.gamma_z)

    @property
    def t_f(self) -> float:
        return self.area * math.pi / self.omega_max

    def protocol(self) -> SineModeProtocol | None:
        return None if self.best_protocol is None else SineModeProtocol.from_dict(self.best_protocol)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepCell":
        data = dict(data)
        data["per_seed"] = {int(k): v for k, v in data.get("per_seed", {}).items()}
        return cls(**data)


def _seed_task(args):
    config, t_f, hyper, seed, settings = args
    t0 = time.perf_counter()
    traj = optimize(config, t_f, hyper.replace(seed=seed), settings=settings)
    return {
        "seed": seed,
        "best_infidelity": traj.best_infidelity,
        "best_protocol": None if traj.best_protocol is None else traj.best_protocol.to_dict(),
        "status": traj.status,
        "error": traj.error,
        "wall_time": time.perf_counter() - t0,
    }


def _map(fn, tasks, workers: int):
    if workers <= 1:
        for t in tasks:
            yield fn(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, tasks)


def _baselines(config: ModelConfig, settings: PropagationSettings):
    out = []
    for make in (lambda: rabi_protocol(config.omega_max), lambda: recoil_compensated_protocol(config)):
        try:
            out.append(protocol_infidelity(config, make(), settings))
        except IntegrationError:
            out.append(math.nan)
    return out


def _new_cell(config, omega, area, hyper, seeds, settings, lr_table) -> SweepCell:
    t_f = area * math.pi / omega
    if lr_table is not None:
        a_dr, a_tw, found = learning_rate_lookup(omega, t_f, lr_table)
    else:
        a_dr, a_tw, found = hyper.alpha_dr, hyper.alpha_tw, False
    return SweepCell(
        omega_max=omega, area=area, gamma_z=config.gamma_z, seeds=list(seeds),
        alpha_dr=a_dr, alpha_tw=a_tw, rates_calibrated=found,
        config=asdict(config), hyper=asdict(hyper.replace(alpha_dr=a_dr, alpha_tw=a_tw)),
        settings=asdict(settings), provenance=provenance(),
    )


def _finish_cell(cell: SweepCell, results: list, config: ModelConfig, settings) -> SweepCell:
    cell.infidelity_rabi, cell.infidelity_compensated = _baselines(config, settings)
    for r in results:
        cell.wall_time += r["wall_time"]
        if r["status"] != "ok":
            cell.errors.append(f"seed {r['seed']}: {r['error']}")
            continue
        cell.per_seed[r["seed"]] = r["best_infidelity"]
        if not r["best_infidelity"] >= cell.best_infidelity:  # handles nan start
            cell.best_infidelity = r["best_infidelity"]
            cell.best_seed = r["seed"]
            cell.best_protocol = r["best_protocol"]
    if cell.best_protocol is not None:
        cell.impulse = normalized_impulse(cell.protocol())
    if cell.errors:
        cell.status = "partial" if cell.per_seed else "failed"
    return cell


def run_cell(
    base_config: ModelConfig,
    omega_max: float,
    area: float,
    hyper: OptimizerHyperparams,
    seeds=DESK_SEEDS,
    settings: PropagationSettings = DEFAULT_SETTINGS,
    lr_table: CalibrationTable | None = None,
    workers: int = 1,
) -> SweepCell:
    """Baselines plus a seed ensemble of optimizations at one grid point."""
    return next(iter(_run_cells(base_config, [(omega_max, area)], hyper, seeds, settings, lr_table, workers)))


def _run_cells(base_config, grid, hyper, seeds, settings, lr_table, workers):
    cells, tasks = [], []
    for omega, area in grid:
        config = base_config.replace(omega_max=omega)
        cell = _new_cell(config, omega, area, hyper, seeds, settings, lr_table)
        cells.append((cell, config))
        h = hyper.replace(alpha_dr=cell.alpha_dr, alpha_tw=cell.alpha_tw)
        tasks.extend((config, cell.t_f, h, s, settings) for s in seeds)
    results = iter(_map(_seed_task, tasks, workers))
    for cell, config in cells:
        chunk = [next(results) for _ in seeds]
        yield _finish_cell(cell, chunk, config, settings)


class ResultStore:
    """Single-writer persistence of cell records plus a manifest."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "cells").mkdir(parents=True, exist_ok=True)

    def path(self, cid: str) -> Path:
        return self.root / "cells" / f"{cid}.json"

    def has(self, cid: str) -> bool:
        p = self.path(cid)
        if not p.exists():
            return False
        try:
            return json.loads(p.read_text()).get("status") in ("ok", "partial")
        except json.JSONDecodeError:
            return False

    def load(self, cid: str) -> SweepCell:
        return SweepCell.from_dict(json.loads(self.path(cid).read_text()))

    def save(self, cell: SweepCell) -> None:
        tmp = self.path(cell.cell_id).with_suffix(".tmp")
        tmp.write_text(json.dumps(cell.to_dict(), indent=1) + "\n")
        tmp.replace(self.path(cell.cell_id))
        self._update_manifest(cell)

    def _update_manifest(self, cell: SweepCell) -> None:
        mpath = self.root / "manifest.json"
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {"cells": {}}
        manifest["cells"][cell.cell_id] = {
            "omega_max": cell.omega_max,
            "area": cell.area,
            "gamma_z": cell.gamma_z,
            "status": cell.status,
            "best_infidelity": cell.best_infidelity,
            "file": f"cells/{cell.cell_id}.json",
        }
        manifest["provenance"] = provenance()
        mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    def all_cells(self) -> list:
        return [SweepCell.from_dict(json.loads(p.read_text())) for p in sorted((self.root / "cells").glob("*.json"))]


def regime_sweep(
    grid,
    hyper: OptimizerHyperparams,
    seeds=DESK_SEEDS,
    base_config: ModelConfig = ModelConfig(),
    out_dir=None,
    resume: bool = True,
    workers: int = 1,
    lr_table: CalibrationTable | None = None,
    settings: PropagationSettings = DEFAULT_SETTINGS,
) -> list:
    """Run baselines and optimizer ensembles over (omega_max, t_f omega_max / pi) cells.

    Cells with less than a pi of available pulse area are dropped. With an
    ``out_dir`` each finished cell is written immediately and, if
    ``resume`` is set, cells already on disk are loaded instead of rerun.
    """
    grid = [(float(o), float(a)) for o, a in grid if a >= 1.0 - 1e-12]
    store = ResultStore(out_dir) if out_dir is not None else None
    done, todo = {}, []
    for omega, area in grid:
        cid = cell_id(omega, area, base_config.gamma_z)
        if store is not None and resume and store.has(cid):
            done[cid] = store.load(cid)
        else:
            todo.append((omega, area))
    for cell in _run_cells(base_config, todo, hyper, seeds, settings, lr_table, workers):
        if store is not None:
            store.save(cell)
        done[cell.cell_id] = cell
    return [done[cell_id(o, a, base_config.gamma_z)] for o, a in grid]


# --- dissipation -----------------------------------------------------------


@dataclass
class DissipationRecord:
    omega_max: float
    gamma_z: float
    infidelity_compensated: float
    best_infidelity: float
    per_seed: dict


def dissipation_sweep(
    omegas,
    gammas,
    hyper: OptimizerHyperparams,
    seeds=DESK_SEEDS,
    base_config: ModelConfig = ModelConfig(),
    area: float = 3.5,
    out_dir=None,
    resume: bool = True,
    workers: int = 1,
    lr_table: CalibrationTable | None = None,
    settings: PropagationSettings = DEFAULT_SETTINGS,
) -> list:
    """Compensated-baseline and optimal infidelity for each (omega_max, gamma_z)."""
    records = []
    for gamma in gammas:
        cells = regime_sweep(
            [(o, area) for o in omegas], hyper, seeds,
            base_config.replace(gamma_z=gamma), out_dir, resume, workers, lr_table, settings,
        )
        for c in cells:
            records.append(DissipationRecord(c.omega_max, gamma, c.infidelity_compensated, c.best_infidelity, c.per_seed))
    return records


# --- impulse map and laboratory time ----------------------------------------


@dataclass
class ImpulseMap:
    rows: list  # (omega_max, area, j)
    slice_area: float
    slice_rows: list  # (omega_max, j, -eta)
    eta: float


def impulse_map(cells, eta: float, slice_area: float = 3.5) -> ImpulseMap:
    rows = []
    for c in cells:
        j = normalized_impulse(c.protocol()) if c.best_protocol is not None else math.nan
        rows.append((c.omega_max, c.area, j))
    areas = sorted({a for _, a, _ in rows})
    nearest = min(areas, key=lambda a: abs(a - slice_area)) if areas else slice_area
    slice_rows = sorted((o, j, -eta) for o, a, j in rows if a == nearest)
    return ImpulseMap(rows, nearest, slice_rows, eta)


def lab_time_view(cells) -> list:
    """(omega_max, t_f omega0 / pi, best infidelity) for every cell."""
    return [(c.omega_max, c.area / c.omega_max, c.best_infidelity) for c in cells]


def sweep_csv_rows(cells) -> list:
    return [
        (c.omega_max, c.area, math.log10(c.best_infidelity) if c.best_infidelity > 0 else -math.inf)
        for c in cells
    ]


# --- protocol inspection ------------------------------------------------------


@dataclass
class ForceComparison:
    times: np.ndarray
    optimized: np.ndarray
    projected: np.ndarray
    theta_projected: np.ndarray
    relative_l2: float


def compare_with_projected_force(protocol: SineModeProtocol, eta: float, n_points: int = 2001) -> ForceComparison:
    """Optimized force against the force projected from the protocol's own |Omega(t)|."""
    t = np.linspace(0.0, protocol.t_f, n_points)
    hx, hy, f = protocol.controls(t)
    theta = projected_force(np.hypot(hx, hy), eta, protocol.t_f, protocol.n_f)
    proj = protocol.replace(theta_f=theta).controls(t)[2]
    norm = np.sqrt(trapezoid(proj**2, t))
    dist = np.sqrt(trapezoid((f - proj) ** 2, t))
    return ForceComparison(t, f, proj, theta, dist / norm if norm > 0 else math.inf)


# --- phase space -----------------------------------------------------------------


@dataclass
class PhaseSpaceResult:
    omega_max: float
    constant: object
    compensated: object
    free: object  # Rabi pulse without any force
    displacement_ratio: float
    momentum_ratio: float
    impulse_constant: float
    impulse_compensated: float


def phase_space_study(
    omega_max: float = 200.0,
    base_config: ModelConfig = ModelConfig(),
    settings: PropagationSettings = PropagationSettings(observable_sample_count=401),
) -> PhaseSpaceResult:
    """Quadrature dynamics for constant versus recoil-compensated force."""
    config = base_config.replace(omega_max=omega_max)
    comp = recoil_compensated_protocol(config)
    const = AnalyticProtocol(comp.t_f, omega_max, config.eta, "constant")
    free = AnalyticProtocol(comp.t_f, omega_max, config.eta, "none")
    runs = {name: quadrature_trajectory(config, p, settings=settings) for name, p in
            (("constant", const), ("compensated", comp), ("free", free))}
    c, r = runs["constant"], runs["compensated"]
    return PhaseSpaceResult(
        omega_max=omega_max,
        constant=c,
        compensated=r,
        free=runs["free"],
        displacement_ratio=float(np.max(np.abs(c.position)) / np.max(np.abs(r.position))),
        momentum_ratio=float(np.max(np.abs(c.momentum)) / np.max(np.abs(r.momentum))),
        impulse_constant=normalized_impulse(const),
        impulse_compensated=normalized_impulse(comp),
    )


# --- learning-rate calibration --------------------------------------------------


@dataclass
class ScanResult:
    alpha_dr: float
    alpha_tw: float
    best_infidelity: float
    unstable: bool


def _scan_task(args):
    config, t_f, hyper, settings = args
    traj = optimize(config, t_f, hyper, settings=settings)
    trace = [c.infidelity for c in traj.checkpoints]
    best = traj.best_infidelity if traj.status == "ok" else math.inf
    # a run that wanders far above its own best is unstable
    unstable = traj.status != "ok" or (bool(trace) and trace[-1] > 10 * best)
    return ScanResult(hyper.alpha_dr, hyper.alpha_tw, best, unstable)


def calibrate_learning_rates(
    omegas,
    areas=T_TEST_AREAS,
    n_it: int = 300,
    seed: int = 0,
    base_config: ModelConfig = ModelConfig(),
    alpha_grid=ALPHA_GRID,
    workers: int = 1,
    settings: PropagationSettings = DEFAULT_SETTINGS,
    table: CalibrationTable | None = None,
    scans: dict | None = None,
) -> CalibrationTable:
    """Scan (alpha_dr, alpha_tw) on alpha_grid^2 with short runs for each cell.

    The pair with the lowest best infidelity is stored. If every run of a
    cell fails, the fallback rates are stored with ``flagged=True``. Pass a
    dict as ``scans`` to receive the raw scan results keyed by cell.
    """
    table = table if table is not None else CalibrationTable()
    stride = max(1, n_it // 10)
    for omega in omegas:
        config = base_config.replace(omega_max=float(omega))
        for area in areas:
            t_f = area * math.pi / omega
            tasks = [
                (config, t_f, OptimizerHyperparams(alpha_dr=a, alpha_tw=b, n_it=n_it, seed=seed,
                                                   eval_stride=stride, stall_window=None), settings)
                for a in alpha_grid for b in alpha_grid
            ]
            results = list(_map(_scan_task, tasks, workers))
            if scans is not None:
                scans[(float(omega), float(area))] = results
            good = [r for r in results if math.isfinite(r.best_infidelity)]
            if good:
                best = min(good, key=lambda r: r.best_infidelity)
                entry = CalibrationEntry(float(omega), float(area), best.alpha_dr, best.alpha_tw, best.best_infidelity)
            else:
                entry = CalibrationEntry(float(omega), float(area), 0.21, 0.21, math.nan, flagged=True)
            table.add(entry)
    return table


# --- stroboscopic heating ---------------------------------------------------------


@dataclass
class StroboRecord:
    n: int  # the (2n - 1)-th pulse has just finished
    infidelity: float
    family: str


def strobo_run(
    omega_max: float = 20.0,
    n_reps: int = 500,
    base_config: ModelConfig = ModelConfig(),
    settings: PropagationSettings = DEFAULT_SETTINGS,
    families=("rabi", "compensated"),
) -> dict:
    """Alternate forward and force-reversed pulses without resetting the state.

    Returns ``{family: [StroboRecord, ...]}`` with the infidelity to |up,0>
    after each odd-numbered pulse. The Rabi family repeats the same pulse.
    A propagation failure ends that family's series early.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    config = base_config.replace(omega_max=omega_max)
    gen = generator_for(config)
    comp = recoil_compensated_protocol(config)
    pulses = {
        "rabi": (rabi_protocol(omega_max), rabi_protocol(omega_max)),
        "compensated": (comp, comp.flipped()),
    }
    k = gen.target_index
    one = np.ones(1)
    out = {}
    for fam in families:
        forward, backward = pulses[fam]
        h = step_size(config, forward.t_f, settings)
        rho = initial_state(config)[None]
        series = []
        try:
            for n in range(1, n_reps + 1):
                rho = advance(gen, forward, rho, one, 0.0, forward.t_f, h)
                _health(rho[0])
                series.append(StroboRecord(n, float(1.0 - rho[0, k, k].real), fam))
                rho = advance(gen, backward, rho, one, 0.0, backward.t_f, h)
        except IntegrationError as exc:
            log.error("strobo series %s stopped at n=%d: %s", fam, len(series), exc)
        out[fam] = series
    return out


def local_minima(values) -> list:
    """1-based indices n of strict interior local minima of a series."""
    v = np.asarray(values)
    idx = np.where((v[1:-1] < v[:-2]) & (v[1:-1] < v[2:]))[0] + 1
    return [int(i) + 1 for i in idx]
