"""Recoil-free pi pulses for a trapped atom: simulation and pulse engineering."""

__version__ = "0.1.0"

from .hilbert import ModelConfig, build_control_set, build_displacement, generator_for
from .dynamics import (
    IntegrationError,
    PropagationSettings,
    evolve,
    final_state,
    infidelity,
    protocol_infidelity,
    quadrature_trajectory,
)
from .protocols import (
    AnalyticProtocol,
    SineModeProtocol,
    check_constraints,
    normalized_impulse,
    projected_force,
    pulse_area,
    rabi_protocol,
    recoil_compensated_protocol,
)
from .pepr import OptimizerHyperparams, optimize, susceptibility

__all__ = [
    "AnalyticProtocol",
    "IntegrationError",
    "ModelConfig",
    "OptimizerHyperparams",
    "PropagationSettings",
    "SineModeProtocol",
    "build_control_set",
    "build_displacement",
    "check_constraints",
    "evolve",
    "final_state",
    "generator_for",
    "infidelity",
    "normalized_impulse",
    "optimize",
    "projected_force",
    "protocol_infidelity",
    "pulse_area",
    "quadrature_trajectory",
    "rabi_protocol",
    "recoil_compensated_protocol",
    "susceptibility",
]
