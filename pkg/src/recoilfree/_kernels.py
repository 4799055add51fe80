"""Compiled RK4 stepping for the dephasing master equation.

Operators in a stack are either Hermitian (density matrices) or
anti-Hermitian (commutator perturbations). Both symmetries are preserved
by the generator, so ``rho H = sym * (H rho)^dagger`` halves the work.
"""
import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _lindblad(H, r, weights, sym, work, out):
    d = r.shape[0]
    for i in range(d):
        for j in range(d):
            acc = 0j
            for k in range(d):
                acc += H[i, k] * r[k, j]
            work[i, j] = acc
    for i in range(d):
        for j in range(d):
            c = work[i, j] - sym * np.conj(work[j, i])
            out[i, j] = -1j * c + weights[i, j] * r[i, j]


@njit(cache=True)
def _assemble(h0, bx, by, bf, hx, hy, f, out):
    d = h0.shape[0]
    for a in range(d):
        for b in range(d):
            out[a, b] = h0[a, b] + 0.5 * hx * bx[a, b] + 0.5 * hy * by[a, b] - f * bf[a, b]


@njit(cache=True, fastmath=True)
def rk4_propagate(h0, bx, by, bf, weights, states, sym, dt, hx, hy, f):
    """Advance every operator in ``states`` by ``(len(hx) - 1) // 2`` steps.

    ``hx``, ``hy`` and ``f`` hold the controls at the RK4 stage times
    ``t0 + k dt / 2`` for ``k = 0 .. 2 n``.
    """
    nstate = states.shape[0]
    d = h0.shape[0]
    nstep = (hx.shape[0] - 1) // 2
    out = states.copy()
    H1 = np.empty((d, d), np.complex128)
    H2 = np.empty_like(H1)
    H3 = np.empty_like(H1)
    k1 = np.empty_like(H1)
    k2 = np.empty_like(H1)
    k3 = np.empty_like(H1)
    k4 = np.empty_like(H1)
    tmp = np.empty_like(H1)
    work = np.empty_like(H1)
    half = 0.5 * dt
    sixth = dt / 6.0
    for s in range(nstep):
        i = 2 * s
        _assemble(h0, bx, by, bf, hx[i], hy[i], f[i], H1)
        _assemble(h0, bx, by, bf, hx[i + 1], hy[i + 1], f[i + 1], H2)
        _assemble(h0, bx, by, bf, hx[i + 2], hy[i + 2], f[i + 2], H3)
        for m in range(nstate):
            r = out[m]
            sg = sym[m]
            _lindblad(H1, r, weights, sg, work, k1)
            for a in range(d):
                for b in range(d):
                    tmp[a, b] = r[a, b] + half * k1[a, b]
            _lindblad(H2, tmp, weights, sg, work, k2)
            for a in range(d):
                for b in range(d):
                    tmp[a, b] = r[a, b] + half * k2[a, b]
            _lindblad(H2, tmp, weights, sg, work, k3)
            for a in range(d):
                for b in range(d):
                    tmp[a, b] = r[a, b] + dt * k3[a, b]
            _lindblad(H3, tmp, weights, sg, work, k4)
            for a in range(d):
                for b in range(d):
                    r[a, b] += sixth * (k1[a, b] + 2.0 * k2[a, b] + 2.0 * k3[a, b] + k4[a, b])
    return out
