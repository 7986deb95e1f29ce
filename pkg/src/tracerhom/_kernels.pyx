# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_kernels_py``.

Same signatures, same arithmetic order where it matters; all arrays must be
C-contiguous float64 (int64 for codes/counts/status).  The GIL is released
inside the loops so path blocks can run on separate threads.
"""
import numpy as np
from libc.math cimport exp, expm1, sqrt, sin, cos, tanh, fabs

cdef double BLOWUP = 1e6


cdef inline void prof(long code, const double* p, double y0, double y1,
                      double* val, double* g0, double* g1) noexcept nogil:
    cdef double z, s, ds, d0, d1, w2, g
    if code == 0:
        val[0] = p[0]
        g0[0] = 0.0
        g1[0] = 0.0
    elif code == 1:
        z = y0 * p[2] + y1 * p[3] - p[4]
        s = 0.5 * (1.0 + tanh(0.5 * z))
        val[0] = p[0] + (p[1] - p[0]) * s
        ds = (p[1] - p[0]) * s * (1.0 - s)
        g0[0] = ds * p[2]
        g1[0] = ds * p[3]
    else:
        d0 = y0 - p[2]
        d1 = y1 - p[3]
        w2 = p[4] * p[4]
        g = exp(-0.5 * (d0 * d0 + d1 * d1) / w2)
        val[0] = p[0] + p[1] * g
        g0[0] = -p[1] * g * d0 / w2
        g1[0] = -p[1] * g * d1 / w2


cdef inline void interp(const double* nodes, const double* bw, long m, double a,
                        double* c) noexcept nogil:
    """Barycentric weights at ``a`` over ``m`` nodes, written to c[0:m]."""
    cdef long j, h = -1
    cdef double tot = 0.0
    if m == 1:
        c[0] = 1.0
        return
    for j in range(m):
        if fabs(a - nodes[j]) < 1e-14:
            h = j
            break
    if h >= 0:
        for j in range(m):
            c[j] = 0.0
        c[h] = 1.0
        return
    for j in range(m):
        c[j] = bw[j] / (a - nodes[j])
        tot += c[j]
    for j in range(m):
        c[j] /= tot


cdef void velocity(double x0, double x1, const double* Z, const double* Y,
                   const double* nodes, const long* counts, const double* bary,
                   const long* acodes, const double* aparams,
                   const long* scodes, const double* sparams,
                   const double* k, long N, long M, double eps, bint track_y,
                   double* cw, double* out) noexcept nogil:
    cdef long i, c, j, m
    cdef double al, ga0, ga1, si, gs0, gs1, root, zi, yi, ph, cs, sn
    cdef double w0 = 0.0, w1 = 0.0, t0 = 0.0, t1 = 0.0
    cdef double amp[2]
    cdef double g[2][2]
    cdef double gam0, gam1
    for i in range(N):
        prof(acodes[i], aparams + 5 * i, x0, x1, &al, &ga0, &ga1)
        prof(scodes[i], sparams + 5 * i, x0, x1, &si, &gs0, &gs1)
        m = counts[i]
        interp(nodes + i * M, bary + i * M, m, al, cw)
        root = sqrt(2.0 * al)
        gam0 = gs0 + ga0 * si / (2.0 * al)
        gam1 = gs1 + ga1 * si / (2.0 * al)
        for c in range(2):
            zi = 0.0
            for j in range(m):
                zi += cw[j] * Z[(i * 2 + c) * M + j]
            amp[c] = root * si * zi
            g[c][0] = root * gam0 * zi
            g[c][1] = root * gam1 * zi
            if track_y:
                yi = 0.0
                for j in range(m):
                    yi += cw[j] * Y[(i * 2 + c) * M + j]
                g[c][0] -= root * si * ga0 * yi
                g[c][1] -= root * si * ga1 * yi
        ph = (x0 * k[2 * i] + x1 * k[2 * i + 1]) / eps
        cs = cos(ph)
        sn = sin(ph)
        zi = -amp[0] * sn + amp[1] * cs
        # k_perp = (k2, -k1)
        w0 += zi * k[2 * i + 1]
        w1 -= zi * k[2 * i]
        t0 += g[0][0] * cs + g[1][0] * sn
        t1 += g[0][1] * cs + g[1][1] * sn
    out[0] = w0 / eps + t1
    out[1] = w1 / eps - t0


def eps_chunk(double[:, ::1] x, double[:, :, :, ::1] Z, double[:, :, :, ::1] Y,
              const double[:, ::1] nodes, const long[::1] counts, const double[:, ::1] bary,
              const long[::1] acodes, const double[:, ::1] aparams,
              const long[::1] scodes, const double[:, ::1] sparams,
              const double[:, ::1] k, double eps, double dt, const double[:, ::1] decay,
              const double[:, :, ::1] L, const double[:, :, :, :, ::1] noise, bint track_y,
              long[::1] status):
    cdef long P = x.shape[0], N = k.shape[0], M = nodes.shape[1]
    cdef long S = L.shape[1], R = L.shape[2], steps = noise.shape[0]
    cdef long s, p, i, c, j, r
    cdef double dtf = dt / (eps * eps)
    cdef double v1[2]
    cdef double v2[2]
    cdef double xs0, xs1, acc, e, zold
    cdef double[::1] cw = np.empty(max(M, 1))
    cdef double* Zp
    cdef double* Yp
    cdef const double* xi
    with nogil:
        for p in range(P):
            Zp = &Z[p, 0, 0, 0]
            Yp = &Y[p, 0, 0, 0]
            for s in range(steps):
                if status[p] == 0:
                    velocity(x[p, 0], x[p, 1], Zp, Yp, &nodes[0, 0], &counts[0], &bary[0, 0],
                             &acodes[0], &aparams[0, 0], &scodes[0], &sparams[0, 0],
                             &k[0, 0], N, M, eps, track_y, &cw[0], v1)
                    xs0 = x[p, 0] + dt * v1[0]
                    xs1 = x[p, 1] + dt * v1[1]
                    velocity(xs0, xs1, Zp, Yp, &nodes[0, 0], &counts[0], &bary[0, 0],
                             &acodes[0], &aparams[0, 0], &scodes[0], &sparams[0, 0],
                             &k[0, 0], N, M, eps, track_y, &cw[0], v2)
                    x[p, 0] += 0.5 * dt * (v1[0] + v2[0])
                    x[p, 1] += 0.5 * dt * (v1[1] + v2[1])
                    if not (fabs(x[p, 0]) <= BLOWUP and fabs(x[p, 1]) <= BLOWUP):
                        status[p] = 1
                for i in range(N):
                    for c in range(2):
                        xi = &noise[s, p, i, c, 0]
                        for j in range(M):
                            e = decay[i, j]
                            zold = Zp[(i * 2 + c) * M + j]
                            acc = 0.0
                            for r in range(R):
                                acc += L[i, j, r] * xi[r]
                            Zp[(i * 2 + c) * M + j] = e * zold + acc
                            if track_y:
                                acc = 0.0
                                for r in range(R):
                                    acc += L[i, M + j, r] * xi[r]
                                Yp[(i * 2 + c) * M + j] = e * (Yp[(i * 2 + c) * M + j] + dtf * zold) + acc


def aux_chunk(double[:, ::1] amp, double[:, :, ::1] jac, double[:, ::1] chi,
              double[:, :, ::1] grad, double[:, ::1] phase, double[:, ::1] bel,
              const double[::1] alpha, const double[::1] sigma, const double[:, ::1] delta,
              const double[:, ::1] kperp, double dt, const double[:, :, ::1] noise):
    cdef long P = amp.shape[0], N = alpha.shape[0], D = 2 * alpha.shape[0]
    cdef long steps = noise.shape[0]
    cdef bint do_chi = chi.shape[0] > 0, do_grad = grad.shape[0] > 0
    cdef bint do_phase = phase.shape[0] > 0, do_jac = jac.shape[0] > 0
    cdef bint do_bel = bel.shape[0] > 0
    cdef long s, p, i, j, col, q
    cdef double[::1] e = np.exp(-np.asarray(alpha) * dt)
    cdef double[::1] phi = -np.expm1(-np.asarray(alpha) * dt) / np.asarray(alpha)
    cdef double[::1] sd = np.asarray(sigma) * np.sqrt(-np.expm1(-2.0 * np.asarray(alpha) * dt))
    cdef double[::1] om = np.empty(N)
    cdef double[::1] cs = np.empty(N)
    cdef double[::1] sn = np.empty(N)
    cdef double[::1] an = np.empty(N)
    cdef double[::1] bn = np.empty(N)
    cdef double[::1] dJ = np.empty(max(D, 1))
    cdef double a, b, th, acc
    with nogil:
        for p in range(P):
            for s in range(steps):
                if do_chi:
                    for q in range(2):
                        acc = 0.0
                        for i in range(N):
                            acc += kperp[i, q] * phi[i] * amp[p, N + i]
                        chi[p, q] += acc
                if do_grad:
                    for q in range(2):
                        for col in range(D):
                            acc = 0.0
                            for i in range(N):
                                acc += kperp[i, q] * phi[i] * jac[p, N + i, col]
                            grad[p, q, col] += acc
                for i in range(N):
                    acc = 0.0
                    for j in range(N):
                        acc += delta[i, j] * amp[p, N + j]
                    om[i] = acc
                    if do_phase:
                        phase[p, i] += acc * dt
                    th = acc * dt
                    cs[i] = cos(th)
                    sn[i] = sin(th)
                    a = amp[p, i]
                    b = amp[p, N + i]
                    an[i] = a * cs[i] + b * sn[i]
                    bn[i] = -a * sn[i] + b * cs[i]
                if do_jac:
                    for col in range(D):
                        for i in range(N):
                            acc = 0.0
                            for j in range(N):
                                acc += delta[i, j] * jac[p, N + j, col]
                            dJ[i] = dt * acc
                        for i in range(N):
                            a = jac[p, i, col]
                            b = jac[p, N + i, col]
                            jac[p, i, col] = (cs[i] * a + sn[i] * b + bn[i] * dJ[i]) * e[i]
                            jac[p, N + i, col] = (-sn[i] * a + cs[i] * b - an[i] * dJ[i]) * e[i]
                    if do_bel:
                        for col in range(D):
                            acc = 0.0
                            for i in range(N):
                                acc += noise[s, p, i] / sd[i] * jac[p, i, col]
                                acc += noise[s, p, N + i] / sd[i] * jac[p, N + i, col]
                            bel[p, col] += acc
                for i in range(N):
                    amp[p, i] = an[i] * e[i] + sd[i] * noise[s, p, i]
                    amp[p, N + i] = bn[i] * e[i] + sd[i] * noise[s, p, N + i]
