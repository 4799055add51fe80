"""Truncated spin-motion Hilbert space, operators and generators.

Units: hbar = 1 and the trap frequency omega0 = 1. Frequencies are
multiples of omega0, times are multiples of 1/omega0.

Basis ordering is spin-major: index ``s * (n_max + 1) + n`` with spin
``s = 0`` for the excited state |up> and ``s = 1`` for |down>. With this
ordering the upper-right spin block of ``B_x`` carries
``exp(i eta (a + a^dagger))``, i.e. absorption (down -> up) kicks the
atom by one photon momentum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

HBAR = 1.054571817e-34  # J s
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg

SPIN_UP = 0
SPIN_DOWN = 1

# 171Yb in a 50 kHz tweezer with a 500 m/s displacement speed limit.
YB171_MASS = 171 * ATOMIC_MASS_UNIT
YB171_TRAP_OMEGA = 2 * math.pi * 50e3
YB171_WAVEVECTOR = 2 * math.pi / 302e-9
TWEEZER_SPEED_LIMIT = 500.0


def oscillator_length(mass: float, omega0: float) -> float:
    """Return x0 = sqrt(hbar / (2 m omega0)) in metres."""
    return math.sqrt(HBAR / (2.0 * mass * omega0))


def lamb_dicke_parameter(k_wavevector: float, mass: float, omega0: float) -> float:
    return k_wavevector * oscillator_length(mass, omega0)


def velocity_bound_dimless(v_max: float, mass: float, omega0: float) -> float:
    """Convert a tweezer speed limit into a bound on |d f_tw / dt|.

    The trap displacement is ``r = 2 x0 f_tw / omega0`` for a normalized
    force ``f_tw`` in rad/s. In units omega0 = 1 the bound on the
    dimensionless force rate is ``v_max / (2 x0 omega0)``.
    """
    return v_max / (2.0 * oscillator_length(mass, omega0) * omega0)


DEFAULT_VELOCITY_BOUND = velocity_bound_dimless(
    TWEEZER_SPEED_LIMIT, YB171_MASS, YB171_TRAP_OMEGA
)


@dataclass(frozen=True)
class ModelConfig:
    """Physical parameters of the driven atom in units of the trap frequency.

    Parameters
    ----------
    eta : float
        Lamb-Dicke parameter.
    omega_max : float
        Maximal Rabi frequency in units of omega0.
    gamma_z : float
        Dephasing rate in units of omega0 / (2 pi).
    n_max : int
        Highest retained Fock state.
    v_max_dimless : float
        Bound on |d f_tw / dt| in units of omega0**2.
    omega0, mass, k_wavevector : float, optional
        Physical trap frequency (rad/s), atomic mass (kg) and laser wave
        vector (1/m). Only used for unit conversions and consistency checks.
    """

    eta: float = 0.505
    omega_max: float = 1.0
    gamma_z: float = 0.0
    n_max: int = 3
    v_max_dimless: float = DEFAULT_VELOCITY_BOUND
    omega0: float | None = None
    mass: float | None = None
    k_wavevector: float | None = None

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")
        object.__setattr__(self, "n_max", int(self.n_max))
        if not self.omega_max > 0:
            raise ValueError(f"omega_max must be positive, got {self.omega_max}")
        if not self.gamma_z >= 0:
            raise ValueError(f"gamma_z must be non-negative, got {self.gamma_z}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if not self.v_max_dimless > 0:
            raise ValueError("v_max_dimless must be positive")
        physical = (self.omega0, self.mass, self.k_wavevector)
        if all(v is not None for v in physical):
            expected = lamb_dicke_parameter(self.k_wavevector, self.mass, self.omega0)
            if abs(self.eta - expected) > 1e-6 * expected:
                raise ValueError(
                    f"eta={self.eta} inconsistent with k*x0={expected:.9g}"
                )

    @classmethod
    def from_physical(
        cls,
        *,
        mass: float,
        omega0: float,
        k_wavevector: float,
        omega_max: float,
        v_max: float = TWEEZER_SPEED_LIMIT,
        gamma_z: float = 0.0,
        n_max: int = 3,
    ) -> "ModelConfig":
        """Build a config with eta and the velocity bound derived from SI values."""
        return cls(
            eta=lamb_dicke_parameter(k_wavevector, mass, omega0),
            omega_max=omega_max,
            gamma_z=gamma_z,
            n_max=n_max,
            v_max_dimless=velocity_bound_dimless(v_max, mass, omega0),
            omega0=omega0,
            mass=mass,
            k_wavevector=k_wavevector,
        )

    @property
    def dim(self) -> int:
        return 2 * (self.n_max + 1)

    @property
    def dephasing_rate(self) -> float:
        """Dephasing rate in units of omega0 (``gamma_z`` is per 2 pi)."""
        return self.gamma_z / (2.0 * math.pi)

    @property
    def x0(self) -> float | None:
        if self.mass is None or self.omega0 is None:
            return None
        return oscillator_length(self.mass, self.omega0)

    def replace(self, **changes) -> "ModelConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return ModelConfig(**fields)


@dataclass(frozen=True, eq=False)
class ControlSet:
    """The three control operators on the truncated space."""

    b_x: np.ndarray
    b_y: np.ndarray
    b_f: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return {"x": self.b_x, "y": self.b_y, "f": self.b_f}[name]


def build_ladder(n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncated annihilation and creation operators on n = 0..n_max."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    a = np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), k=1).astype(complex)
    return a, a.conj().T.copy()


def build_displacement(eta: float, n_max: int) -> np.ndarray:
    """exp(i eta (a + a^dagger)) of the truncated generator.

    The Hermitian quadrature is diagonalized and exponentiated, so the
    result is unitary to machine precision on the truncated space.
    """
    a, adag = build_ladder(n_max)
    evals, evecs = np.linalg.eigh(a + adag)
    return (evecs * np.exp(1j * eta * evals)) @ evecs.conj().T


def _lift_motion(op: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(2), op)


def build_control_set(config: ModelConfig) -> ControlSet:
    disp = build_displacement(config.eta, config.n_max)
    zero = np.zeros_like(disp)
    b_x = np.block([[zero, disp], [disp.conj().T, zero]])
    b_y = np.block([[zero, -1j * disp], [1j * disp.conj().T, zero]])
    a, adag = build_ladder(config.n_max)
    b_f = _lift_motion(a + adag)
    return ControlSet(b_x=b_x, b_y=b_y, b_f=b_f)


def motional_hamiltonian(config: ModelConfig) -> np.ndarray:
    """omega0 a^dagger a on both spin states."""
    a, adag = build_ladder(config.n_max)
    return _lift_motion(adag @ a)


def dephasing_operator(config: ModelConfig) -> np.ndarray:
    """L = sigma_z (x) 1_m with sigma_z = +1 on |up>."""
    return np.kron(np.diag([1.0, -1.0]), np.eye(config.n_max + 1)).astype(complex)


def quadrature_operators(config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Position a + a^dagger and momentum i(a^dagger - a), lifted to the full space."""
    a, adag = build_ladder(config.n_max)
    return _lift_motion(a + adag), _lift_motion(1j * (adag - a))


def basis_index(config: ModelConfig, spin: int, n: int) -> int:
    if spin not in (SPIN_UP, SPIN_DOWN) or not 0 <= n <= config.n_max:
        raise ValueError(f"no basis state (spin={spin}, n={n})")
    return spin * (config.n_max + 1) + n


def projector(config: ModelConfig, spin: int, n: int) -> np.ndarray:
    rho = np.zeros((config.dim, config.dim), dtype=complex)
    i = basis_index(config, spin, n)
    rho[i, i] = 1.0
    return rho


def hamiltonian_at(
    config: ModelConfig,
    h_x: float,
    h_y: float,
    f_tw: float,
    controls: ControlSet | None = None,
) -> np.ndarray:
    """Total Hamiltonian for one set of control values.

    ``H = a^dagger a + (h_x/2) B_x + (h_y/2) B_y - f_tw B_f`` so that the
    complex Rabi frequency ``h_x + i h_y`` enters with the usual factor 1/2.
    """
    if controls is None:
        controls = build_control_set(config)
    return (
        motional_hamiltonian(config)
        + 0.5 * h_x * controls.b_x
        + 0.5 * h_y * controls.b_y
        - f_tw * controls.b_f
    )


def lindblad_rhs(config: ModelConfig, H: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Right-hand side of the dephasing master equation."""
    L = dephasing_operator(config)
    out = -1j * (H @ rho - rho @ H)
    if config.gamma_z:
        out = out + config.dephasing_rate * (L @ rho @ L.conj().T - rho)
    return out


@dataclass(frozen=True, eq=False)
class Generator:
    """Precomputed operators shared by every propagation of one config."""

    h0: np.ndarray
    b_x: np.ndarray
    b_y: np.ndarray
    b_f: np.ndarray
    dissipator: np.ndarray  # elementwise weights gamma (l_i l_j^* - 1)
    target_index: int
    initial_index: int


@lru_cache(maxsize=64)
def generator_for(config: ModelConfig) -> Generator:
    ctrl = build_control_set(config)
    l_diag = np.diag(dephasing_operator(config))
    weights = config.dephasing_rate * (np.outer(l_diag, l_diag.conj()) - 1.0)
    return Generator(
        h0=np.ascontiguousarray(motional_hamiltonian(config)),
        b_x=np.ascontiguousarray(ctrl.b_x),
        b_y=np.ascontiguousarray(ctrl.b_y),
        b_f=np.ascontiguousarray(ctrl.b_f),
        dissipator=np.ascontiguousarray(weights.real),
        target_index=basis_index(config, SPIN_UP, 0),
        initial_index=basis_index(config, SPIN_DOWN, 0),
    )
