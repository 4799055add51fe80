"""Control protocols: sine-mode parameterization and analytic baselines.

Every protocol exposes ``t_f`` and ``controls(t) -> (h_x, h_y, f_tw)``
evaluated in closed form on an array of times, plus ``force_rate(t)``
for the tweezer-velocity constraint.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .hilbert import ModelConfig

_TIME_SLACK = 1e-12


def _sine_table(t: np.ndarray, n_modes: int, t_f: float) -> np.ndarray:
    l = np.arange(1, n_modes + 1)
    return np.sin(np.pi * np.multiply.outer(t, l) / t_f)


def _cosine_table(t: np.ndarray, n_modes: int, t_f: float) -> np.ndarray:
    l = np.arange(1, n_modes + 1)
    return np.cos(np.pi * np.multiply.outer(t, l) / t_f)


@dataclass(frozen=True, eq=False)
class SineModeProtocol:
    """Rabi and force controls as sums of sine modes ``sin(pi l t / t_f)``.

    Coefficients are in units of omega0; all controls vanish at both ends
    of the pulse.
    """

    t_f: float
    theta_x: np.ndarray
    theta_y: np.ndarray
    theta_f: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (math.isfinite(self.t_f) and self.t_f > 0):
            raise ValueError(f"t_f must be positive and finite, got {self.t_f}")
        for name in ("theta_x", "theta_y", "theta_f"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.theta_x.size != self.theta_y.size:
            raise ValueError("theta_x and theta_y must have the same length")

    @property
    def n_omega(self) -> int:
        return self.theta_x.size

    @property
    def n_f(self) -> int:
        return self.theta_f.size

    def controls(self, t):
        t = np.asarray(t, dtype=float)
        s = _sine_table(t, max(self.n_omega, self.n_f), self.t_f)
        return (
            s[..., : self.n_omega] @ self.theta_x,
            s[..., : self.n_omega] @ self.theta_y,
            s[..., : self.n_f] @ self.theta_f,
        )

    def force_rate(self, t):
        t = np.asarray(t, dtype=float)
        l = np.arange(1, self.n_f + 1)
        c = _cosine_table(t, self.n_f, self.t_f)
        return c @ (self.theta_f * np.pi * l / self.t_f)

    def replace(self, **changes) -> "SineModeProtocol":
        fields = dict(
            t_f=self.t_f, theta_x=self.theta_x, theta_y=self.theta_y, theta_f=self.theta_f
        )
        fields.update(changes)
        return SineModeProtocol(**fields)

    def flipped(self) -> "SineModeProtocol":
        """Same Rabi drive with the force reversed."""
        return self.replace(theta_f=-self.theta_f)

    def rotated(self, phi: float) -> "SineModeProtocol":
        """Apply a global phase exp(i phi) to the Rabi frequency."""
        c, s = math.cos(phi), math.sin(phi)
        return self.replace(
            theta_x=c * self.theta_x - s * self.theta_y,
            theta_y=s * self.theta_x + c * self.theta_y,
        )

    def to_dict(self) -> dict:
        return {
            "kind": "sine_modes",
            "t_f": float(self.t_f),
            "n_omega": self.n_omega,
            "n_f": self.n_f,
            "theta_x": self.theta_x.tolist(),
            "theta_y": self.theta_y.tolist(),
            "theta_f": self.theta_f.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SineModeProtocol":
        proto = cls(
            t_f=data["t_f"],
            theta_x=data["theta_x"],
            theta_y=data["theta_y"],
            theta_f=data["theta_f"],
        )
        for key, size in (("n_omega", proto.n_omega), ("n_f", proto.n_f)):
            if key in data and int(data[key]) != size:
                raise ValueError(f"{key}={data[key]} does not match coefficient count {size}")
        return proto


FORCE_KINDS = ("none", "compensated", "constant")


@dataclass(frozen=True)
class AnalyticProtocol:
    """Sine Rabi pulse ``omega_max sin(pi t / t_f)`` with a closed-form force.

    ``force_kind`` selects the tweezer force:

    * ``"none"``: no force.
    * ``"compensated"``: the recoil-compensating curve
      ``-(eta omega_max / 2) sin(pi t/t_f) sin(pi sin^2(pi t / 2 t_f))``.
    * ``"constant"``: ``-eta / t_f`` throughout the pulse.

    ``force_sign`` multiplies the force (used for alternating pulse trains).
    """

    t_f: float
    omega_max: float
    eta: float = 0.0
    force_kind: str = "none"
    force_sign: float = 1.0

    def __post_init__(self):
        if self.force_kind not in FORCE_KINDS:
            raise ValueError(f"unknown force kind {self.force_kind!r}")
        if not self.t_f > 0:
            raise ValueError("t_f must be positive")

    def force_curve(self, t):
        t = np.asarray(t, dtype=float)
        if self.force_kind == "compensated":
            u = np.pi * t / self.t_f
            f = -0.5 * self.eta * self.omega_max * np.sin(u) * np.sin(np.pi * np.sin(0.5 * u) ** 2)
        elif self.force_kind == "constant":
            f = np.full_like(t, -self.eta / self.t_f)
        else:
            f = np.zeros_like(t)
        return self.force_sign * f

    def controls(self, t):
        t = np.asarray(t, dtype=float)
        return (
            self.omega_max * np.sin(np.pi * t / self.t_f),
            np.zeros_like(t),
            self.force_curve(t),
        )

    def force_rate(self, t):
        t = np.asarray(t, dtype=float)
        if self.force_kind != "compensated":
            return np.zeros_like(t)
        w = np.pi / self.t_f
        u = w * t
        inner = np.pi * np.sin(0.5 * u) ** 2
        # d/dt sin(pi sin^2(u/2)) = cos(inner) * pi * sin(u/2) cos(u/2) * w
        d_inner = 0.5 * np.pi * np.sin(u) * w
        rate = w * np.cos(u) * np.sin(inner) + np.sin(u) * np.cos(inner) * d_inner
        return self.force_sign * (-0.5 * self.eta * self.omega_max) * rate

    def flipped(self) -> "AnalyticProtocol":
        return AnalyticProtocol(
            self.t_f, self.omega_max, self.eta, self.force_kind, -self.force_sign
        )

    def sine_modes(self, n_f: int = 3, n_grid: int = 4001) -> SineModeProtocol:
        """Truncated sine-mode version of this protocol (force projected on n_f modes)."""
        t = np.linspace(0.0, self.t_f, n_grid)
        return SineModeProtocol(
            t_f=self.t_f,
            theta_x=[self.omega_max],
            theta_y=[0.0],
            theta_f=project_onto_sine_modes(self.force_curve(t), self.t_f, n_f),
        )


def sample(protocol, t: float) -> tuple[float, float, float]:
    """Controls (h_x, h_y, f_tw) at a single time in [0, t_f]."""
    if not -_TIME_SLACK <= t <= protocol.t_f * (1 + _TIME_SLACK):
        raise ValueError(f"t={t} outside [0, {protocol.t_f}]")
    hx, hy, f = protocol.controls(np.asarray(float(t)))
    return float(hx), float(hy), float(f)


def rabi_protocol(omega_max: float) -> SineModeProtocol:
    """Single-mode pi pulse, t_f = pi^2 / (2 omega_max)."""
    if not omega_max > 0:
        raise ValueError("omega_max must be positive")
    return SineModeProtocol(
        t_f=math.pi**2 / (2.0 * omega_max),
        theta_x=[omega_max],
        theta_y=[0.0],
        theta_f=np.zeros(0),
    )


def debye_waller_duration(config: ModelConfig) -> float:
    """Pi-pulse duration with the slow-drive Debye-Waller stretch.

    Below omega_max = omega0 the pulse is lengthened by exp(eta^2/2); the
    atom then sees the ground-state-reduced Rabi frequency.
    """
    t_f = math.pi**2 / (2.0 * config.omega_max)
    if config.omega_max < 1.0:
        t_f *= math.exp(0.5 * config.eta**2)
    return t_f


def recoil_compensated_protocol(config: ModelConfig) -> AnalyticProtocol:
    """Sine pi pulse plus the recoil-compensating force curve.

    Use ``.sine_modes(n_f)`` for the mode-truncated variant.
    """
    return AnalyticProtocol(
        t_f=debye_waller_duration(config),
        omega_max=config.omega_max,
        eta=config.eta,
        force_kind="compensated",
    )


def project_onto_sine_modes(values: np.ndarray, t_f: float, n_modes: int) -> np.ndarray:
    """Coefficients of ``values`` (uniform samples on [0, t_f]) in the sine basis."""
    values = np.asarray(values, dtype=float)
    t = np.linspace(0.0, t_f, values.size)
    s = _sine_table(t, n_modes, t_f)
    return (2.0 / t_f) * integrate.simpson(s * values[:, None], x=t, axis=0)


def projected_force(h_samples, eta: float, t_f: float, n_f: int) -> np.ndarray:
    """Force coefficients derived from a Rabi amplitude |Omega(t)|.

    ``h_samples`` are uniform samples of |Omega| on [0, t_f]. The running
    pulse area sets ``f(t) = -(eta h(t) / 2) sin(int_0^t h)``, which is then
    projected onto the first ``n_f`` sine modes.
    """
    h = np.asarray(h_samples, dtype=float)
    if h.ndim != 1 or h.size < 3:
        raise ValueError("need at least three amplitude samples")
    if np.any(h < 0):
        raise ValueError("Rabi amplitudes must be non-negative")
    t = np.linspace(0.0, t_f, h.size)
    area = integrate.cumulative_trapezoid(h, t, initial=0.0)
    f0 = -0.5 * eta * h * np.sin(area)
    return project_onto_sine_modes(f0, t_f, n_f)


def pulse_area(protocol) -> float:
    """Integral of |Omega(t)| over the pulse."""

    def magnitude(t):
        hx, hy, _ = protocol.controls(np.asarray(t))
        return float(np.hypot(hx, hy))

    n_modes = getattr(protocol, "n_omega", 1)
    # breakpoints at the mode nodes help quad with the kinks of |Omega|
    pts = np.linspace(0.0, protocol.t_f, 2 * n_modes + 1)[1:-1]
    val, _ = integrate.quad(
        magnitude, 0.0, protocol.t_f, points=pts, epsabs=1e-12, epsrel=1e-12, limit=500
    )
    return val


def normalized_impulse(protocol) -> float:
    """Time integral of the tweezer force over the pulse."""
    if isinstance(protocol, SineModeProtocol):
        l = np.arange(1, protocol.n_f + 1)
        odd = (l % 2) == 1
        return float(np.sum(protocol.theta_f[odd] * 2.0 * protocol.t_f / (np.pi * l[odd])))
    if isinstance(protocol, AnalyticProtocol) and protocol.force_kind == "constant":
        return float(-protocol.force_sign * protocol.eta)
    val, _ = integrate.quad(
        lambda t: float(protocol.controls(np.asarray(t))[2]),
        0.0,
        protocol.t_f,
        epsabs=1e-13,
        epsrel=1e-13,
        limit=200,
    )
    return val


@dataclass
class ConstraintReport:
    amplitude_ok: bool
    velocity_ok: bool
    worst_amplitude: float
    worst_velocity: float
    violating_times: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.amplitude_ok and self.velocity_ok


AMPLITUDE_SLACK = 1e-12


def constraint_grid(t_f: float, n_intervals: int = 100) -> np.ndarray:
    return np.linspace(0.0, t_f, n_intervals + 1)


def check_constraints(protocol, config: ModelConfig, n_intervals: int = 100) -> ConstraintReport:
    """Evaluate amplitude and tweezer-velocity bounds on t_j = j t_f / n_intervals."""
    t = constraint_grid(protocol.t_f, n_intervals)
    hx, hy, _ = protocol.controls(t)
    amp = np.hypot(hx, hy)
    rate = np.abs(protocol.force_rate(t))
    amp_bad = amp > config.omega_max * (1 + AMPLITUDE_SLACK)
    vel_bad = rate >= config.v_max_dimless
    return ConstraintReport(
        amplitude_ok=not amp_bad.any(),
        velocity_ok=not vel_bad.any(),
        worst_amplitude=float(amp.max()),
        worst_velocity=float(rate.max()),
        violating_times=t[amp_bad | vel_bad].tolist(),
    )


# --- serialization -------------------------------------------------------


def protocol_to_dict(protocol) -> dict:
    if isinstance(protocol, SineModeProtocol):
        return protocol.to_dict()
    if isinstance(protocol, AnalyticProtocol):
        return {
            "kind": "analytic",
            "t_f": protocol.t_f,
            "omega_max": protocol.omega_max,
            "eta": protocol.eta,
            "force_kind": protocol.force_kind,
            "force_sign": protocol.force_sign,
        }
    raise TypeError(f"cannot serialize {type(protocol).__name__}")


def protocol_from_dict(data: dict):
    kind = data.get("kind", "sine_modes")
    if kind == "sine_modes":
        return SineModeProtocol.from_dict(data)
    if kind == "analytic":
        return AnalyticProtocol(
            t_f=data["t_f"],
            omega_max=data["omega_max"],
            eta=data.get("eta", 0.0),
            force_kind=data.get("force_kind", "none"),
            force_sign=data.get("force_sign", 1.0),
        )
    raise ValueError(f"unknown protocol kind {kind!r}")


def save_protocol(path, protocol) -> None:
    Path(path).write_text(json.dumps(protocol_to_dict(protocol), indent=2) + "\n")


def load_protocol(path):
    return protocol_from_dict(json.loads(Path(path).read_text()))


def protocol_timeseries(protocol, n_points: int = 501) -> np.ndarray:
    """Rows of (t, |Omega|, arg Omega, f_tw)."""
    t = np.linspace(0.0, protocol.t_f, n_points)
    hx, hy, f = protocol.controls(t)
    return np.column_stack([t, np.hypot(hx, hy), np.arctan2(hy, hx), f])


def write_protocol_timeseries(path, protocol, n_points: int = 501) -> None:
    rows = protocol_timeseries(protocol, n_points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "abs_omega", "arg_omega", "f_tw"])
        w.writerows([[f"{v:.12g}" for v in row] for row in rows])
