"""Density-matrix propagation, fidelity and observables."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import rk4_propagate
from .hilbert import (
    SPIN_DOWN,
    SPIN_UP,
    Generator,
    ModelConfig,
    generator_for,
    projector,
    quadrature_operators,
)

TRACE_DRIFT_LIMIT = 1e-6
POSITIVITY_LIMIT = -1e-6
HERMITICITY_TOL = 1e-10
_MIN_STEP = 1e-14


class IntegrationError(RuntimeError):
    """Raised when a propagation leaves the space of density matrices."""


@dataclass(frozen=True)
class PropagationSettings:
    substeps_per_period: int = 200
    observable_sample_count: int = 201

    def __post_init__(self):
        if self.substeps_per_period < 10:
            raise ValueError("substeps_per_period must be >= 10")
        if self.observable_sample_count < 2:
            raise ValueError("observable_sample_count must be >= 2")


DEFAULT_SETTINGS = PropagationSettings()


def step_size(config: ModelConfig, t_f: float, settings: PropagationSettings) -> float:
    """Nominal RK4 step: the shortest of trap period, Rabi period and pulse, over substeps."""
    return min(2 * math.pi, 2 * math.pi / config.omega_max, t_f) / settings.substeps_per_period


def initial_state(config: ModelConfig) -> np.ndarray:
    """|down, 0><down, 0|."""
    return projector(config, SPIN_DOWN, 0)


def target_state(config: ModelConfig) -> np.ndarray:
    """|up, 0><up, 0|."""
    return projector(config, SPIN_UP, 0)


def n_steps(t0: float, t1: float, h: float) -> int:
    return max(1, math.ceil((t1 - t0) / h - 1e-9))


def advance(gen: Generator, protocol, states: np.ndarray, sym: np.ndarray, t0: float, t1: float, h: float) -> np.ndarray:
    """Propagate a stack of operators from t0 to t1 with equal RK4 steps no longer than h.

    ``sym[m]`` is +1 for a Hermitian operator and -1 for an anti-Hermitian
    one. No validation is done here.
    """
    if t1 <= t0:
        return states.copy()
    n = n_steps(t0, t1, h)
    dt = (t1 - t0) / n
    if not dt > _MIN_STEP * max(1.0, abs(t1)):
        raise IntegrationError(f"step size underflow (dt={dt:g})")
    stages = t0 + (t1 - t0) * np.arange(2 * n + 1) / (2 * n)
    hx, hy, f = protocol.controls(stages)
    return rk4_propagate(
        gen.h0, gen.b_x, gen.b_y, gen.b_f, gen.dissipator,
        states, sym, dt,
        np.ascontiguousarray(hx, dtype=float),
        np.ascontiguousarray(hy, dtype=float),
        np.ascontiguousarray(f, dtype=float),
    )


def check_density(rho: np.ndarray, trace_tol: float = 1e-9, herm_tol: float = HERMITICITY_TOL, eig_tol: float = 1e-9) -> None:
    """Raise ValueError unless rho is a valid density matrix within tolerances."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density matrix has non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > trace_tol:
        raise ValueError(f"trace {np.trace(rho).real:.12g} != 1")
    if np.linalg.eigvalsh(rho).min() < -eig_tol:
        raise ValueError("density matrix has negative eigenvalues")


def _health(rho: np.ndarray) -> None:
    if not np.all(np.isfinite(rho)):
        raise IntegrationError("non-finite state")
    drift = abs(np.trace(rho) - 1)
    if drift > TRACE_DRIFT_LIMIT:
        raise IntegrationError(f"trace drift {drift:.3g}")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lam < POSITIVITY_LIMIT:
        raise IntegrationError(f"negative eigenvalue {lam:.3g}")


def evolve(
    config: ModelConfig,
    protocol,
    rho0: np.ndarray,
    t0: float = 0.0,
    t1: float | None = None,
    settings: PropagationSettings = DEFAULT_SETTINGS,
) -> np.ndarray:
    """Integrate the master equation from t0 to t1 (default: the pulse end)."""
    if t1 is None:
        t1 = protocol.t_f
    if t1 < t0:
        raise ValueError(f"t1={t1} < t0={t0}")
    if t0 < 0 or t1 > protocol.t_f * (1 + 1e-12):
        raise ValueError(f"[{t0}, {t1}] not inside the pulse [0, {protocol.t_f}]")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (config.dim, config.dim):
        raise ValueError(f"rho0 has shape {rho0.shape}, expected {(config.dim, config.dim)}")
    check_density(rho0)
    gen = generator_for(config)
    h = step_size(config, protocol.t_f, settings)
    out = advance(gen, protocol, rho0[None], np.ones(1), t0, t1, h)[0]
    _health(out)
    return out


def final_state(config: ModelConfig, protocol, settings: PropagationSettings = DEFAULT_SETTINGS) -> np.ndarray:
    return evolve(config, protocol, initial_state(config), 0.0, protocol.t_f, settings)


def infidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """1 - Tr(target^dagger rho)."""
    return float(1.0 - np.real(np.vdot(target, rho)))


def protocol_infidelity(config: ModelConfig, protocol, settings: PropagationSettings = DEFAULT_SETTINGS) -> float:
    """Infidelity of |down,0> -> |up,0> under ``protocol``."""
    return infidelity(final_state(config, protocol, settings), target_state(config))


def motional_populations(rho: np.ndarray) -> np.ndarray:
    """Fock-state populations traced over the spin."""
    diag = np.real(np.diagonal(rho))
    return diag.reshape(2, -1).sum(axis=0)


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.vdot(rho, rho)))


@dataclass
class QuadratureTrajectory:
    times: np.ndarray
    position: np.ndarray  # <a + a^dagger>
    momentum: np.ndarray  # <i(a^dagger - a)>
    final_state: np.ndarray


def quadrature_trajectory(
    config: ModelConfig,
    protocol,
    rho0: np.ndarray | None = None,
    settings: PropagationSettings = DEFAULT_SETTINGS,
) -> QuadratureTrajectory:
    """Sample the motional quadratures at uniform times over the pulse.

    A single photon kick shifts the momentum quadrature by 2 eta.
    """
    if rho0 is None:
        rho0 = initial_state(config)
    X, P = quadrature_operators(config)
    times = np.linspace(0.0, protocol.t_f, settings.observable_sample_count)
    rho = np.asarray(rho0, dtype=complex)
    check_density(rho)
    gen = generator_for(config)
    h = step_size(config, protocol.t_f, settings)
    xs = np.empty(times.size)
    ps = np.empty(times.size)
    xs[0] = np.real(np.vdot(X, rho))
    ps[0] = np.real(np.vdot(P, rho))
    for k in range(1, times.size):
        rho = advance(gen, protocol, rho[None], np.ones(1), times[k - 1], times[k], h)[0]
        xs[k] = np.real(np.vdot(X, rho))
        ps[k] = np.real(np.vdot(P, rho))
    _health(rho)
    return QuadratureTrajectory(times, xs, ps, rho)
