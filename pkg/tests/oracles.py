"""Reference implementations built independently of the package internals.

Operators come from scipy.linalg.expm on explicitly constructed ladder
matrices; time evolution uses scipy's adaptive DOP853 integrator.
"""
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm


def reference_operators(eta, n_max):
    n = n_max + 1
    a = np.diag(np.sqrt(np.arange(1, n)), 1).astype(complex)
    ad = a.conj().T
    D = expm(1j * eta * (a + ad))
    sp = np.array([[0, 1], [0, 0]], complex)  # |up><down| with up first
    I = np.eye(n)
    bx = np.kron(sp, D) + np.kron(sp.T, D.conj().T)
    by = np.kron(sp, -1j * D) + np.kron(sp.T, 1j * D.conj().T)
    bf = np.kron(np.eye(2), a + ad)
    h0 = np.kron(np.eye(2), ad @ a)
    L = np.kron(np.diag([1.0, -1.0]), I).astype(complex)
    return h0, bx, by, bf, L


def reference_evolve(eta, n_max, gamma_z, protocol, rho0, t0, t1, extra=None, rtol=1e-11, atol=1e-13):
    """Integrate the dephasing master equation with DOP853.

    ``extra`` is an optional ``(operator, callable(t) -> float)`` added to H.
    """
    h0, bx, by, bf, L = reference_operators(eta, n_max)
    rate = gamma_z / (2 * math.pi)
    d = h0.shape[0]

    def rhs(t, y):
        rho = y.view(complex).reshape(d, d)
        hx, hy, f = (float(v) for v in protocol.controls(np.asarray(t)))
        H = h0 + 0.5 * hx * bx + 0.5 * hy * by - f * bf
        if extra is not None:
            H = H + extra[1](t) * extra[0]
        out = -1j * (H @ rho - rho @ H) + rate * (L @ rho @ L - rho)
        return out.ravel().view(float)

    if t1 <= t0:
        return np.array(rho0, complex)
    sol = solve_ivp(rhs, (t0, t1), np.array(rho0, complex).ravel().view(float),
                    method="DOP853", rtol=rtol, atol=atol)
    assert sol.success, sol.message
    return sol.y[:, -1].view(complex).reshape(d, d)


def fd_kick_gradient(eta, n_max, gamma_z, protocol, channel, t_r, eps=1e-4):
    """Central difference of 1 - F under an instantaneous kick exp(-i eps B_j) at t_r."""
    ops = reference_operators(eta, n_max)
    B = ops[1 + "xyf".index(channel)]
    d = ops[0].shape[0]
    n = n_max + 1
    rho0 = np.zeros((d, d), complex)
    rho0[n, n] = 1.0  # |down, 0>
    rho_r = reference_evolve(eta, n_max, gamma_z, protocol, rho0, 0.0, t_r)
    vals = []
    for s in (+eps, -eps):
        U = expm(-1j * s * B)
        rho = reference_evolve(eta, n_max, gamma_z, protocol, U @ rho_r @ U.conj().T, t_r, protocol.t_f)
        vals.append(1.0 - rho[0, 0].real)
    return (vals[0] - vals[1]) / (2 * eps)


def fd_window_gradient(eta, n_max, gamma_z, protocol, channel, t_r, width, eps=1e-4):
    """Same derivative with the kick spread over a rectangular window of the given width."""
    ops = reference_operators(eta, n_max)
    B = ops[1 + "xyf".index(channel)]
    d = ops[0].shape[0]
    n = n_max + 1
    rho0 = np.zeros((d, d), complex)
    rho0[n, n] = 1.0
    lo, hi = t_r - width / 2, t_r + width / 2
    rho_lo = reference_evolve(eta, n_max, gamma_z, protocol, rho0, 0.0, lo)
    vals = []
    for s in (+eps, -eps):
        rho = reference_evolve(eta, n_max, gamma_z, protocol, rho_lo, lo, hi, extra=(B, lambda t: s / width))
        rho = reference_evolve(eta, n_max, gamma_z, protocol, rho, hi, protocol.t_f)
        vals.append(1.0 - rho[0, 0].real)
    return (vals[0] - vals[1]) / (2 * eps)
