"""Stochastic pulse engineering by projected response functions.

Each iteration picks a random time t_r and control channel, propagates
the commutator ``[B_j, rho(t_r)]`` to the end of the pulse and projects
it on the target. The resulting susceptibility drives a sine-mode update
of that channel.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    DEFAULT_SETTINGS,
    IntegrationError,
    PropagationSettings,
    _health,
    advance,
    initial_state,
    protocol_infidelity,
    step_size,
)
from .hilbert import ModelConfig, generator_for
from .protocols import SineModeProtocol, check_constraints

log = logging.getLogger(__name__)

CHANNELS = ("x", "y", "f")
# d H / d h_j for each channel: the Rabi channels enter as (h/2) B, the force as -f B_f
CHANNEL_COUPLING = {"x": 0.5, "y": 0.5, "f": -1.0}
IMAG_TOL = 1e-9
MAX_INIT_HALVINGS = 64
FALLBACK_RATES = (0.21, 0.21)


@dataclass(frozen=True)
class OptimizerHyperparams:
    alpha_dr: float = 0.3
    alpha_tw: float = 0.3
    n_it: int = 20_000
    n_omega: int = 18
    n_f: int = 3
    seed: int = 0
    eval_stride: int = 1000
    stall_window: int | None = 5000

    def __post_init__(self):
        if not (self.alpha_dr > 0 and self.alpha_tw > 0):
            raise ValueError("learning rates must be positive")
        if self.n_it < 0:
            raise ValueError("n_it must be non-negative")
        if self.n_omega < 1 or self.n_f < 1:
            raise ValueError("mode counts must be >= 1")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")

    def replace(self, **changes) -> "OptimizerHyperparams":
        d = asdict(self)
        d.update(changes)
        return OptimizerHyperparams(**d)


def _channel_index(control) -> int:
    if isinstance(control, str):
        return CHANNELS.index(control)
    return int(control)


def init_parameters(config: ModelConfig, t_f: float, hyper: OptimizerHyperparams, rng) -> SineModeProtocol:
    """Random Rabi modes with std omega_max / (n_omega sqrt(l)); zero force.

    Invalid draws are rejected and redrawn with half the spread.
    """
    l = np.arange(1, hyper.n_omega + 1)
    std = config.omega_max / (hyper.n_omega * np.sqrt(l))
    for _ in range(MAX_INIT_HALVINGS + 1):
        proto = SineModeProtocol(
            t_f=t_f,
            theta_x=rng.normal(0.0, std),
            theta_y=rng.normal(0.0, std),
            theta_f=np.zeros(hyper.n_f),
        )
        if check_constraints(proto, config).ok:
            return proto
        std = std / 2
    raise RuntimeError(f"no valid initial protocol after {MAX_INIT_HALVINGS} halvings")


def _response(config, protocol, j: int, t_r: float, rho_tr: np.ndarray, h: float):
    """Propagate (rho, [B_j, rho]) from t_r to t_f; return (infidelity, chi)."""
    gen = generator_for(config)
    B = (gen.b_x, gen.b_y, gen.b_f)[j]
    drho = B @ rho_tr - rho_tr @ B
    out = advance(gen, protocol, np.stack([rho_tr, drho]), np.array([1.0, -1.0]), t_r, protocol.t_f, h)
    k = gen.target_index
    projected = 1j * out[1, k, k]
    if abs(projected.imag) > IMAG_TOL:
        raise IntegrationError(f"susceptibility has imaginary part {projected.imag:.3g}")
    return 1.0 - out[0, k, k].real, projected.real, out[0]


def susceptibility(
    config: ModelConfig,
    protocol,
    control,
    t_r: float,
    rho_tr: np.ndarray | None = None,
    settings: PropagationSettings = DEFAULT_SETTINGS,
) -> float:
    """Response of the final infidelity to an impulse of ``B_j`` at t_r.

    Returns ``Re{ i Tr(rho_target dRho(t_f)) }`` where ``dRho`` starts as
    ``[B_j, rho(t_r)]``. To first order, adding ``eps * delta(t - t_r) B_j``
    to the Hamiltonian changes 1 - F by ``eps * chi``. If ``rho_tr`` is not
    given it is propagated from the initial state.
    """
    if not 0.0 <= t_r <= protocol.t_f:
        raise ValueError(f"t_r={t_r} outside [0, {protocol.t_f}]")
    gen = generator_for(config)
    h = step_size(config, protocol.t_f, settings)
    if rho_tr is None:
        rho_tr = advance(gen, protocol, initial_state(config)[None], np.ones(1), 0.0, t_r, h)[0]
    return _response(config, protocol, _channel_index(control), t_r, np.asarray(rho_tr, complex), h)[1]


def channel_gradient(control, chi: float) -> float:
    """Functional derivative of 1 - F with respect to the channel amplitude at t_r."""
    return CHANNEL_COUPLING[CHANNELS[_channel_index(control)]] * chi


def update_step(protocol: SineModeProtocol, control, t_r: float, chi: float, hyper: OptimizerHyperparams) -> SineModeProtocol:
    """theta_{j,l} -> theta_{j,l} - (2 alpha / t_f) chi sin(pi l t_r / t_f) for channel j."""
    j = _channel_index(control)
    name = CHANNELS[j]
    alpha = hyper.alpha_tw if name == "f" else hyper.alpha_dr
    theta = getattr(protocol, "theta_" + name)
    l = np.arange(1, theta.size + 1)
    new = theta - (2.0 * alpha / protocol.t_f) * chi * np.sin(np.pi * l * t_r / protocol.t_f)
    return protocol.replace(**{"theta_" + name: new})


def halve_on_stall(alpha: float) -> float:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return alpha / 2.0


@dataclass
class Checkpoint:
    accepted: int
    iteration: int
    infidelity: float
    protocol: dict


@dataclass
class OptimizationTrajectory:
    config: ModelConfig
    hyper: OptimizerHyperparams
    t_f: float
    checkpoints: list = field(default_factory=list)
    initial_infidelity: float = math.nan
    best_infidelity: float = math.inf
    best_protocol: SineModeProtocol | None = None
    final_protocol: SineModeProtocol | None = None
    final_infidelity: float = math.nan
    accepted: int = 0
    rejected: int = 0
    alpha_dr_final: float = math.nan
    halvings: int = 0
    status: str = "ok"
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "hyper": asdict(self.hyper),
            "t_f": self.t_f,
            "initial_infidelity": self.initial_infidelity,
            "best_infidelity": self.best_infidelity,
            "final_infidelity": self.final_infidelity,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "alpha_dr_final": self.alpha_dr_final,
            "halvings": self.halvings,
            "status": self.status,
            "error": self.error,
            "best_protocol": None if self.best_protocol is None else self.best_protocol.to_dict(),
            "final_protocol": None if self.final_protocol is None else self.final_protocol.to_dict(),
            "checkpoints": [asdict(c) for c in self.checkpoints],
        }


def optimize(
    config: ModelConfig,
    t_f: float,
    hyper: OptimizerHyperparams,
    rng=None,
    settings: PropagationSettings = DEFAULT_SETTINGS,
    initial: SineModeProtocol | None = None,
) -> OptimizationTrajectory:
    """Run one PEPR trajectory until ``hyper.n_it`` updates have been accepted.

    The per-iteration infidelity (of the protocol before its update) comes
    for free from the response propagation and is used to track the best
    protocol. Reported best/final infidelities are re-evaluated on the
    standard step grid so they reproduce exactly from the stored protocol.
    """
    if rng is None:
        rng = np.random.default_rng(hyper.seed)
    traj = OptimizationTrajectory(config=config, hyper=hyper, t_f=t_f)
    gen = generator_for(config)
    h = step_size(config, t_f, settings)
    rho0 = initial_state(config)[None]
    one = np.ones(1)
    rates = hyper
    proto = best_proto = None
    best_val = math.inf
    try:
        proto = initial if initial is not None else init_parameters(config, t_f, hyper, rng)
        traj.initial_infidelity = protocol_infidelity(config, proto, settings)
        best_proto, best_val = proto, traj.initial_infidelity
        since_best = 0
        iteration = 0
        while traj.accepted < hyper.n_it:
            iteration += 1
            t_r = rng.uniform(0.0, t_f)
            j = int(rng.integers(len(CHANNELS)))
            rho_tr = advance(gen, proto, rho0, one, 0.0, t_r, h)[0]
            current, chi, rho_f = _response(config, proto, j, t_r, rho_tr, h)
            if not math.isfinite(current):
                _health(rho_f)
            if current < best_val:
                best_proto, best_val = proto, current
                since_best = 0
            candidate = update_step(proto, j, t_r, channel_gradient(j, chi), rates)
            if not check_constraints(candidate, config).ok:
                traj.rejected += 1
                continue
            proto = candidate
            traj.accepted += 1
            since_best += 1
            if traj.accepted % hyper.eval_stride == 0:
                value = protocol_infidelity(config, proto, settings)
                traj.checkpoints.append(Checkpoint(traj.accepted, iteration, value, proto.to_dict()))
            if hyper.stall_window and since_best >= hyper.stall_window:
                rates = rates.replace(alpha_dr=halve_on_stall(rates.alpha_dr))
                traj.halvings += 1
                since_best = 0
                log.debug("stall at %d accepted updates, alpha_dr -> %g", traj.accepted, rates.alpha_dr)
        traj.final_protocol = proto
        traj.final_infidelity = protocol_infidelity(config, proto, settings)
        best_exact = protocol_infidelity(config, best_proto, settings)
        if traj.final_infidelity <= best_exact:
            best_proto, best_exact = proto, traj.final_infidelity
        traj.best_protocol = best_proto
        traj.best_infidelity = best_exact
    except IntegrationError as exc:
        traj.status = "failed"
        traj.error = str(exc)
        traj.final_protocol = proto
        traj.best_protocol = best_proto
        traj.best_infidelity = best_val
    traj.alpha_dr_final = rates.alpha_dr
    return traj


# --- learning-rate calibration table --------------------------------------

ALPHA_GRID = tuple(round(0.01 + 0.2 * k, 2) for k in range(11))
T_TEST_AREAS = tuple(1.0 + 0.5 * k for k in range(7))  # t_test omega_max / pi


@dataclass
class CalibrationEntry:
    omega_max: float
    area: float  # t_test omega_max / pi
    alpha_dr: float
    alpha_tw: float
    best_infidelity: float = math.nan
    flagged: bool = False


@dataclass
class CalibrationTable:
    entries: list = field(default_factory=list)

    def add(self, entry: CalibrationEntry) -> None:
        self.entries = [
            e for e in self.entries
            if not (math.isclose(e.omega_max, entry.omega_max) and math.isclose(e.area, entry.area))
        ]
        self.entries.append(entry)

    def omegas(self) -> list:
        return sorted({e.omega_max for e in self.entries})

    def to_dict(self) -> dict:
        return {"alpha_grid": list(ALPHA_GRID), "entries": [asdict(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationTable":
        return cls([CalibrationEntry(**e) for e in data.get("entries", [])])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def learning_rate_lookup(omega_max: float, t_f: float, table: CalibrationTable | None):
    """Learning rates for (omega_max, t_f) from a calibration table.

    The table row must match omega_max (relative 1e-6); within that row the
    entry with the closest t_test omega_max is used. Returns
    ``(alpha_dr, alpha_tw, found)``; ``found`` is False when the
    conservative fallback rates are returned.
    """
    if table is not None:
        row = [e for e in table.entries if math.isclose(e.omega_max, omega_max, rel_tol=1e-6)]
        area = t_f * omega_max / math.pi
        if row and min(T_TEST_AREAS) - 0.25 <= area <= max(T_TEST_AREAS) + 0.25:
            best = min(row, key=lambda e: abs(e.area - area))
            return best.alpha_dr, best.alpha_tw, True
    log.warning("no calibrated learning rate for omega_max=%g, t_f=%g; using fallback", omega_max, t_f)
    return FALLBACK_RATES[0], FALLBACK_RATES[1], False
