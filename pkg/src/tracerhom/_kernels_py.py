"""Pure-numpy implementation of the hot loops.

The compiled module ``_kernels`` exposes the same functions with the same
signatures; ``tracerhom.kernels`` picks one at import.  Everything here is
vectorised over paths and loops over time steps.  All arrays are updated in
place.
"""
from __future__ import annotations

import numpy as np

BLOWUP = 1e6


def profile_eval(codes, params, y):
    """Values (P, n) and gradients (P, n, 2) of encoded profiles at y (P, 2)."""
    P, n = y.shape[0], codes.shape[0]
    val = np.empty((P, n))
    grad = np.zeros((P, n, 2))
    for i in range(n):
        p = params[i]
        if codes[i] == 0:
            val[:, i] = p[0]
        elif codes[i] == 1:
            z = y[:, 0] * p[2] + y[:, 1] * p[3] - p[4]
            s = 0.5 * (1.0 + np.tanh(0.5 * z))
            val[:, i] = p[0] + (p[1] - p[0]) * s
            ds = (p[1] - p[0]) * s * (1.0 - s)
            grad[:, i, 0] = ds * p[2]
            grad[:, i, 1] = ds * p[3]
        else:
            d0, d1 = y[:, 0] - p[2], y[:, 1] - p[3]
            w2 = p[4] * p[4]
            g = np.exp(-0.5 * (d0 * d0 + d1 * d1) / w2)
            val[:, i] = p[0] + p[1] * g
            grad[:, i, 0] = -p[1] * g * d0 / w2
            grad[:, i, 1] = -p[1] * g * d1 / w2
    return val, grad


def _bary(nodes, counts, bary, alpha):
    """Interpolation weights (P, N, M) at alpha (P, N)."""
    P, N = alpha.shape
    M = nodes.shape[1]
    c = np.zeros((P, N, M))
    for i in range(N):
        m = counts[i]
        if m == 1:
            c[:, i, 0] = 1.0
            continue
        d = alpha[:, i, None] - nodes[i, :m]
        hit = np.abs(d) < 1e-14
        with np.errstate(divide="ignore", invalid="ignore"):
            t = bary[i, :m] / d
            t = t / t.sum(axis=1, keepdims=True)
        rows = hit.any(axis=1)
        t[rows] = hit[rows].astype(float)
        c[:, i, :m] = t
    return c


def _velocity(x, Z, Y, nodes, counts, bary, acodes, aparams, scodes, sparams,
              k, eps, track_y):
    N = k.shape[0]
    alpha, dalpha = profile_eval(acodes, aparams, x)
    sigma, dsigma = profile_eval(scodes, sparams, x)
    c = _bary(nodes, counts, bary, alpha)[:, :, None, :]
    Zi = np.sum(c * Z, axis=-1)                      # (P, N, 2)
    root = np.sqrt(2.0 * alpha)
    amp = (root * sigma)[:, :, None] * Zi
    gam = dsigma + dalpha * (sigma / (2.0 * alpha))[:, :, None]
    g = root[:, :, None, None] * gam[:, :, None, :] * Zi[..., None]   # (P, N, 2c, 2j)
    if track_y:
        Yi = np.sum(c * Y, axis=-1)
        g = g - (root * sigma)[:, :, None, None] * dalpha[:, :, None, :] * Yi[..., None]
    ph = (x / eps) @ k.T
    cs, sn = np.cos(ph), np.sin(ph)
    coef = -amp[:, :, 0] * sn + amp[:, :, 1] * cs      # (P, N)
    kp = np.stack([k[:, 1], -k[:, 0]], axis=1)
    W = coef @ kp
    rot = g[:, :, 0, :] * cs[:, :, None] + g[:, :, 1, :] * sn[:, :, None]   # (P, N, 2)
    tot = rot.sum(axis=1)
    U = np.stack([tot[:, 1], -tot[:, 0]], axis=1)
    return W / eps + U


def eps_chunk(x, Z, Y, nodes, counts, bary, acodes, aparams, scodes, sparams,
              k, eps, dt, decay, L, noise, track_y, status):
    """Advance ``x (P, 2)`` and the bank by ``noise.shape[0]`` Heun micro-steps.

    ``decay (N, M)`` is exp(-alpha_m dt/eps^2); ``L (N, S, R)`` the increment
    factor; ``noise (steps, P, N, 2, R)``.  ``status[p]`` is set to 1 when a
    path leaves the ball of radius 1e6 (it is then frozen).
    """
    dtf = dt / (eps * eps)
    M = nodes.shape[1]
    live = status == 0
    for s in range(noise.shape[0]):
        v1 = _velocity(x, Z, Y, nodes, counts, bary, acodes, aparams, scodes, sparams,
                       k, eps, track_y)
        xs = x + dt * v1
        v2 = _velocity(xs, Z, Y, nodes, counts, bary, acodes, aparams, scodes, sparams,
                       k, eps, track_y)
        xn = x + 0.5 * dt * (v1 + v2)
        x[live] = xn[live]
        v = np.einsum("isr,picr->pics", L, noise[s])
        if track_y:
            Y[:] = decay[None, :, None, :] * (Y + dtf * Z) + v[..., M:]
            Z[:] = decay[None, :, None, :] * Z + v[..., :M]
        else:
            Z[:] = decay[None, :, None, :] * Z + v
        bad = ~np.all(np.abs(x) <= BLOWUP, axis=1)
        if np.any(bad & live):
            status[bad & live] = 1
            live = status == 0


def aux_chunk(amp, jac, chi, grad, phase, bel, alpha, sigma, delta, kperp, dt, noise):
    """Advance tilde-dynamics paths ``amp (P, 2N)`` by ``noise.shape[0]`` steps.

    Each step is an exact rotation of (a_i, b_i) by omega_i dt, with
    omega = delta @ b taken before the step, followed by the exact OU
    transition.  Optional accumulators (pass arrays of size 0 to skip):

      chi   (P, 2)       += sum_i kperp[i, q] phi_i b_i           (left point)
      grad  (P, 2, 2N)   += sum_i kperp[i, q] phi_i J[b_i, :]
      phase (P, N)       += omega_i dt
      jac   (P, 2N, 2N)  tangent propagation of the step map
      bel   (P, 2N)      += (xi_k / sd) @ J_{k+1}   (Bismut weight, needs jac)

    with phi_i = (1 - exp(-alpha_i dt)) / alpha_i.
    """
    N = alpha.shape[0]
    e = np.exp(-alpha * dt)
    phi = -np.expm1(-alpha * dt) / alpha
    sd = sigma * np.sqrt(-np.expm1(-2.0 * alpha * dt))
    e2, sd2 = np.concatenate([e, e]), np.concatenate([sd, sd])
    wk = kperp * phi[:, None]                    # (N, 2)
    do_chi, do_grad = chi.size > 0, grad.size > 0
    do_phase, do_jac = phase.size > 0, jac.size > 0
    do_bel = bel.size > 0
    for s in range(noise.shape[0]):
        a, b = amp[:, :N], amp[:, N:]
        if do_chi:
            chi += b @ wk
        if do_grad:
            grad += np.einsum("iq,pij->pqj", wk, jac[:, N:, :])
        om = b @ delta.T
        if do_phase:
            phase += om * dt
        th = om * dt
        c, sn = np.cos(th), np.sin(th)
        an = a * c + b * sn
        bn = -a * sn + b * c
        if do_jac:
            Ja, Jb = jac[:, :N, :], jac[:, N:, :]
            dJ = dt * np.einsum("ij,pjk->pik", delta, Jb)
            nJa = c[..., None] * Ja + sn[..., None] * Jb + bn[..., None] * dJ
            nJb = -sn[..., None] * Ja + c[..., None] * Jb - an[..., None] * dJ
            jac[:, :N, :] = nJa * e[None, :, None]
            jac[:, N:, :] = nJb * e[None, :, None]
            if do_bel:
                bel += np.einsum("pm,pmk->pk", noise[s] / sd2, jac)
        amp[:, :N] = an
        amp[:, N:] = bn
        amp *= e2
        amp += sd2 * noise[s]
