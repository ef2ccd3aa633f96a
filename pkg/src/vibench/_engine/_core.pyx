# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled engine kernels (Cython port of ``_purepy``).

Same semantics and floating-point operation order as the pure-Python
fallback; see ``_purepy.py`` for the commented reference implementation.
Fixed-size scratch buffers cap the problem size at 8 modes / order 32.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, pow, M_PI

cnp.import_array()

BACKEND = "cython"

cdef double _C2 = 1.0 / 5.0
cdef double _C3 = 3.0 / 10.0
cdef double _C4 = 4.0 / 5.0
cdef double _C5 = 8.0 / 9.0
cdef double _A21 = 1.0 / 5.0
cdef double _A31 = 3.0 / 40.0, _A32 = 9.0 / 40.0
cdef double _A41 = 44.0 / 45.0, _A42 = -56.0 / 15.0, _A43 = 32.0 / 9.0
cdef double _A51 = 19372.0 / 6561.0, _A52 = -25360.0 / 2187.0
cdef double _A53 = 64448.0 / 6561.0, _A54 = -212.0 / 729.0
cdef double _A61 = 9017.0 / 3168.0, _A62 = -355.0 / 33.0
cdef double _A63 = 46732.0 / 5247.0, _A64 = 49.0 / 176.0
cdef double _A65 = -5103.0 / 18656.0
cdef double _B1 = 35.0 / 384.0, _B3 = 500.0 / 1113.0, _B4 = 125.0 / 192.0
cdef double _B5 = -2187.0 / 6784.0, _B6 = 11.0 / 84.0
cdef double _E1 = 71.0 / 57600.0, _E3 = -71.0 / 16695.0, _E4 = 71.0 / 1920.0
cdef double _E5 = -17253.0 / 339200.0, _E6 = 22.0 / 525.0, _E7 = -1.0 / 40.0


cdef inline bint _finite(double v) nogil:
    return v - v == 0.0


cdef inline double _phase(double s, double tau0, double om_a, double om_b,
                          double t_ramp) nogil:
    cdef double half
    if t_ramp <= 0.0:
        return tau0 + om_a * s
    if s >= t_ramp:
        half = 0.5 * (om_a + om_b) * t_ramp
        return tau0 + half + om_b * (s - t_ramp)
    return tau0 + om_a * s + 0.5 * (om_b - om_a) * (
        s - (t_ramp / M_PI) * sin(M_PI * s / t_ramp))


cdef inline double _command_value(double complex * u_eff, int H,
                                  double tau) nogil:
    cdef double cr = cos(tau)
    cdef double ci = sin(tau)
    cdef double er = 1.0, ei = 0.0, t, val
    cdef int h
    val = u_eff[0].real
    for h in range(1, H + 1):
        t = er * cr - ei * ci
        ei = er * ci + ei * cr
        er = t
        val += u_eff[h].real * er - u_eff[h].imag * ei
    return val


cdef inline double _plant_rhs(int mode, int M, double * w2, double * c2dw,
                              double * drive, double * phi_nl, double knl,
                              double mex, double e2dw, double ew2,
                              double go_r, double inv_den,
                              double u_val, double * x, double * dx) nogil:
    cdef double q = 0.0, dnl, g, qex, qexd, f, a0, sga, qb, qbd, ab
    cdef int l
    for l in range(M):
        q += phi_nl[l] * x[l]
    dnl = knl * q * q * q
    if mode == 0:
        g = 0.0
        qex = 0.0
        qexd = 0.0
        for l in range(M):
            a0 = -c2dw[l] * x[M + l] - w2[l] * x[l] - phi_nl[l] * dnl
            dx[M + l] = a0
            qex += drive[l] * x[l]
            qexd += drive[l] * x[M + l]
            g += drive[l] * a0
        f = (go_r * u_val - mex * (g + e2dw * qexd + ew2 * qex)) * inv_den
        for l in range(M):
            dx[l] = x[M + l]
            dx[M + l] += drive[l] * f
        return f
    sga = 0.0
    for l in range(M):
        a0 = -c2dw[l] * x[M + l] - w2[l] * x[l] - phi_nl[l] * dnl
        dx[M + l] = a0
        sga += drive[l] * a0
    qb = x[2 * M]
    qbd = x[2 * M + 1]
    ab = (go_r * u_val - mex * (e2dw * qbd + ew2 * qb) - sga) * inv_den
    for l in range(M):
        dx[l] = x[M + l]
        dx[M + l] -= drive[l] * ab
    dx[2 * M] = qbd
    dx[2 * M + 1] = ab
    return ab


cdef inline double _forced_rhs(int M, double * w2, double * c2dw,
                               double * drive, double * phi_nl, double knl,
                               double f_val, double * x, double * dx) nogil:
    cdef double q = 0.0, dnl
    cdef int l
    for l in range(M):
        q += phi_nl[l] * x[l]
    dnl = knl * q * q * q
    for l in range(M):
        dx[l] = x[M + l]
        dx[M + l] = (-c2dw[l] * x[M + l] - w2[l] * x[l] - phi_nl[l] * dnl
                     + drive[l] * f_val)
    return f_val


cdef inline double _stage(bint forced, double forced_amp,
                          int mode, int M, double * w2, double * c2dw,
                          double * drive, double * phi_nl, double knl,
                          double mex, double e2dw, double ew2, double go_r,
                          double inv_den, double complex * u_eff, int H,
                          double t_s, double tau0, double om_a, double om_b,
                          double t_ramp, double * y, double * out) nogil:
    cdef double tau_s = _phase(t_s, tau0, om_a, om_b, t_ramp)
    if forced:
        return _forced_rhs(M, w2, c2dw, drive, phi_nl, knl,
                           forced_amp * cos(tau_s), y, out)
    return _plant_rhs(mode, M, w2, c2dw, drive, phi_nl, knl, mex, e2dw,
                      ew2, go_r, inv_den,
                      _command_value(u_eff, H, tau_s), y, out)


def run_segment(dict plant, x0, fcoef0, integ0, double u1, ucmd, wdist,
                hmask, double kp, double ki, double kf, double target,
                double ulimit, bint fund_on, bint harm_on, double cutoff,
                double tau0, double om_a, double om_b, double t_ramp,
                Py_ssize_t n_samples, double dt,
                double rtol, double atol, double max_step, double h0,
                bint forced, double forced_amp, noise,
                rec_exc, rec_obs, rec_u, Py_ssize_t snap_stride):
    cdef int mode = plant["mode"]
    cdef int M = plant["n_modes"]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w2_a = np.ascontiguousarray(plant["w2"])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c2dw_a = np.ascontiguousarray(plant["c2dw"])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] drive_a = np.ascontiguousarray(plant["drive"])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] phi_nl_a = np.ascontiguousarray(plant["phi_nl"])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] obs_a = np.ascontiguousarray(plant["obs"])
    cdef double knl = plant["k_nl"]
    cdef double mex = plant["m_ex"]
    cdef double e2dw = plant["e2dw"]
    cdef double ew2 = plant["ew2"]
    cdef double go_r = plant["g_over_r"]
    cdef double inv_den = plant["inv_den"]
    cdef double * w2 = &w2_a[0]
    cdef double * c2dw = &c2dw_a[0]
    cdef double * drive = &drive_a[0]
    cdef double * phi_nl = &phi_nl_a[0]
    cdef double * obs_row = &obs_a[0]

    cdef cnp.ndarray[cnp.float64_t, ndim=1] x_a = np.array(x0, dtype=np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] fc_a = np.array(fcoef0, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] integ_a = np.array(integ0, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] ucmd_a = np.ascontiguousarray(ucmd, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] wdist_a = np.ascontiguousarray(wdist, dtype=np.complex128)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] hmask_a = np.ascontiguousarray(hmask, dtype=np.uint8)

    cdef Py_ssize_t S = x_a.shape[0]
    cdef int H = fc_a.shape[0] - 1
    if S > 18 or H > 32 or M > 8:
        raise ValueError("state/harmonic dimensions exceed engine limits")

    cdef double * x = &x_a[0]
    cdef double complex * fc = &fc_a[0]
    cdef double complex * integ = &integ_a[0]
    cdef double complex * ucmd_p = &ucmd_a[0]
    cdef double complex * wdist_p = &wdist_a[0]
    cdef unsigned char * hm = &hmask_a[0]

    cdef double complex u_now[33]
    cdef double complex u_eff[33]
    cdef double k1[18]
    cdef double k2[18]
    cdef double k3[18]
    cdef double k4[18]
    cdef double k5[18]
    cdef double k6[18]
    cdef double k7[18]
    cdef double xs[18]
    cdef double x5[18]

    cdef bint has_noise = noise is not None
    cdef cnp.ndarray[cnp.float64_t, ndim=1] noise_a
    cdef double * noise_p = NULL
    if has_noise:
        noise_a = np.ascontiguousarray(noise)
        noise_p = &noise_a[0]
    cdef bint has_rec = rec_exc is not None
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rexc_a, robs_a, ru_a
    cdef double * rexc = NULL
    cdef double * robs = NULL
    cdef double * ru = NULL
    if has_rec:
        rexc_a = rec_exc
        robs_a = rec_obs
        ru_a = rec_u
        rexc = &rexc_a[0]
        robs = &robs_a[0]
        ru = &ru_a[0]

    cdef Py_ssize_t n_snap = n_samples // snap_stride if snap_stride > 0 else 0
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] snap_fc = np.zeros((n_snap, H + 1), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] snap_uc = np.zeros((n_snap, H + 1), dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] snap_u1 = np.zeros(n_snap)
    cdef Py_ssize_t i_snap = 0

    cdef long n_steps = 0, n_rejected = 0, n_frozen = 0, n_clamped = 0
    cdef int status = 0
    cdef Py_ssize_t i_fail = -1
    cdef double h = h0 if h0 > 0.0 else dt
    cdef double h_min = 1e-12 * dt
    cdef double h_try, s_n, tau_n, u_n, e_n, e_meas, y_n
    cdef double cr, ci, er, ei, tre, est, err, gain
    cdef double t_loc, t_end, err_acc, err_norm, e_j, a_x, a_n, sc, fac
    cdef bint finite, sat, have_k1, clamped
    cdef Py_ssize_t n
    cdef int j, hh, l

    for hh in range(H + 1):
        u_now[hh] = 0.0
    if not forced:
        if fund_on:
            u_now[1] = u1
        else:
            u_now[1] = ucmd_p[1]
        for hh in range(2, H + 1):
            if harm_on and hm[hh]:
                u_now[hh] = -kp * fc[hh] + ki * integ[hh]
            elif not harm_on:
                u_now[hh] = ucmd_p[hh]
    for hh in range(H + 1):
        u_eff[hh] = u_now[hh] + wdist_p[hh]

    for n in range(n_samples):
        s_n = n * dt
        tau_n = _phase(s_n, tau0, om_a, om_b, t_ramp)
        if forced:
            u_n = 0.0
            e_n = _forced_rhs(M, w2, c2dw, drive, phi_nl, knl,
                              forced_amp * cos(tau_n), x, k1)
        else:
            u_n = _command_value(u_now, H, tau_n)
            e_n = _plant_rhs(mode, M, w2, c2dw, drive, phi_nl, knl, mex,
                             e2dw, ew2, go_r, inv_den,
                             _command_value(u_eff, H, tau_n), x, k1)
        e_meas = e_n + (noise_p[n] if has_noise else 0.0)
        finite = _finite(e_meas)
        if finite:
            for j in range(S):
                if not _finite(x[j]):
                    finite = False
                    break
        if not finite:
            status = 1
            i_fail = n
            break

        y_n = 0.0
        for l in range(M):
            y_n += obs_row[l] * x[l]
        if has_rec:
            rexc[n] = e_meas
            robs[n] = y_n
            ru[n] = u_n

        # adaptive filter step (explicit Euler; DC gain = cutoff)
        cr = cos(tau_n)
        ci = sin(tau_n)
        er = 1.0
        ei = 0.0
        est = fc[0].real
        for hh in range(1, H + 1):
            tre = er * cr - ei * ci
            ei = er * ci + ei * cr
            er = tre
            est += fc[hh].real * er - fc[hh].imag * ei
        err = e_meas - est
        fc[0] = fc[0].real + dt * cutoff * err
        gain = 2.0 * cutoff * dt * err
        er = 1.0
        ei = 0.0
        for hh in range(1, H + 1):
            tre = er * cr + ei * ci
            ei = ei * cr - er * ci
            er = tre
            fc[hh] = fc[hh] + gain * er + 1j * (gain * ei)

        # controllers
        sat = fabs(u_n) > ulimit
        if sat:
            n_frozen += 1
        if not forced:
            if fund_on:
                u1 += kf * (target - abs(fc[1])) * dt
                if u1 > ulimit:
                    u1 = ulimit
                    n_clamped += 1
                elif u1 < 0.0:
                    u1 = 0.0
            if harm_on and not sat:
                for hh in range(2, H + 1):
                    if hm[hh]:
                        integ[hh] = integ[hh] + dt * (-fc[hh])
            for hh in range(H + 1):
                u_now[hh] = 0.0
            if fund_on:
                u_now[1] = u1
            else:
                u_now[1] = ucmd_p[1]
            for hh in range(2, H + 1):
                if harm_on and hm[hh]:
                    u_now[hh] = -kp * fc[hh] + ki * integ[hh]
                elif not harm_on:
                    u_now[hh] = ucmd_p[hh]
            for hh in range(H + 1):
                u_eff[hh] = u_now[hh] + wdist_p[hh]

        if snap_stride > 0 and (n + 1) % snap_stride == 0:
            for hh in range(H + 1):
                snap_fc[i_snap, hh] = fc[hh]
                snap_uc[i_snap, hh] = u_now[hh]
            snap_u1[i_snap] = u1
            i_snap += 1

        # integrate the plant over [s_n, s_n + dt]
        t_loc = s_n
        t_end = s_n + dt
        have_k1 = False
        while t_loc < t_end - 1e-12 * dt:
            h_try = h
            if h_try > max_step:
                h_try = max_step
            clamped = False
            if h_try > t_end - t_loc:
                h_try = t_end - t_loc
                clamped = True
            if h_try < h_min:
                status = 2
                i_fail = n
                break

            if not have_k1:
                _stage(forced, forced_amp, mode, M, w2, c2dw, drive, phi_nl,
                       knl, mex, e2dw, ew2, go_r, inv_den, u_eff, H,
                       t_loc, tau0, om_a, om_b, t_ramp, x, k1)
                have_k1 = True
            for j in range(S):
                xs[j] = x[j] + h_try * _A21 * k1[j]
            _stage(forced, forced_amp, mode, M, w2, c2dw, drive, phi_nl,
                   knl, mex, e2dw, ew2, go_r, inv_den, u_eff, H,
                   t_loc + _C2 * h_try, tau0, om_a, om_b, t_ramp, xs, k2)
            for j in range(S):
                xs[j] = x[j] + h_try * (_A31 * k1[j] + _A32 * k2[j])
            _stage(forced, forced_amp, mode, M, w2, c2dw, drive, phi_nl,
                   knl, mex, e2dw, ew2, go_r, inv_den, u_eff, H,
                   t_loc + _C3 * h_try, tau0, om_a, om_b, t_ramp, xs, k3)
            for j in range(S):
                xs[j] = x[j] + h_try * (_A41 * k1[j] + _A42 * k2[j]
                                        + _A43 * k3[j])
            _stage(forced, forced_amp, mode, M, w2, c2dw, drive, phi_nl,
                   knl, mex, e2dw, ew2, go_r, inv_den, u_eff, H,
                   t_loc + _C4 * h_try, tau0, om_a, om_b, t_ramp, xs, k4)
            for j in range(S):
                xs[j] = x[j] + h_try * (_A51 * k1[j] + _A52 * k2[j]
                                        + _A53 * k3[j] + _A54 * k4[j])
            _stage(forced, forced_amp, mode, M, w2, c2dw, drive, phi_nl,
                   knl, mex, e2dw, ew2, go_r, inv_den, u_eff, H,
                   t_loc + _C5 * h_try, tau0, om_a, om_b, t_ramp, xs, k5)
            for j in range(S):
                xs[j] = x[j] + h_try * (_A61 * k1[j] + _A62 * k2[j]
                                        + _A63 * k3[j] + _A64 * k4[j]
                                        + _A65 * k5[j])
            _stage(forced, forced_amp, mode, M, w2, c2dw, drive, phi_nl,
                   knl, mex, e2dw, ew2, go_r, inv_den, u_eff, H,
                   t_loc + h_try, tau0, om_a, om_b, t_ramp, xs, k6)
            for j in range(S):
                x5[j] = x[j] + h_try * (_B1 * k1[j] + _B3 * k3[j]
                                        + _B4 * k4[j] + _B5 * k5[j]
                                        + _B6 * k6[j])
            _stage(forced, forced_amp, mode, M, w2, c2dw, drive, phi_nl,
                   knl, mex, e2dw, ew2, go_r, inv_den, u_eff, H,
                   t_loc + h_try, tau0, om_a, om_b, t_ramp, x5, k7)

            err_acc = 0.0
            for j in range(S):
                e_j = h_try * (_E1 * k1[j] + _E3 * k3[j] + _E4 * k4[j]
                               + _E5 * k5[j] + _E6 * k6[j] + _E7 * k7[j])
                a_x = fabs(x[j])
                a_n = fabs(x5[j])
                sc = atol + rtol * (a_x if a_x > a_n else a_n)
                err_acc += (e_j / sc) * (e_j / sc)
            err_norm = sqrt(err_acc / S)
            if not _finite(err_norm):
                status = 1
                i_fail = n
                break

            if err_norm <= 1.0:
                t_loc += h_try
                for j in range(S):
                    x[j] = x5[j]
                    k1[j] = k7[j]
                n_steps += 1
                if err_norm == 0.0:
                    fac = 5.0
                else:
                    fac = 0.9 * pow(err_norm, -0.2)
                    if fac > 5.0:
                        fac = 5.0
                    elif fac < 0.2:
                        fac = 0.2
                if not clamped:
                    h = h_try * fac
            else:
                n_rejected += 1
                fac = 0.9 * pow(err_norm, -0.2)
                if fac < 0.2:
                    fac = 0.2
                h = h_try * fac
        if status != 0:
            break

    cdef double tau_end = _phase(n_samples * dt, tau0, om_a, om_b, t_ramp)
    u_now_out = np.zeros(H + 1, dtype=np.complex128)
    for hh in range(H + 1):
        u_now_out[hh] = u_now[hh]
    return {
        "status": status, "i_fail": i_fail,
        "x": x_a, "fcoef": fc_a, "integ": integ_a, "u1": u1,
        "u_now": u_now_out, "tau_end": tau_end, "h_next": h,
        "n_steps": n_steps, "n_rejected": n_rejected,
        "n_frozen": n_frozen, "n_clamped": n_clamped,
        "snap_fcoef": snap_fc, "snap_ucmd": snap_uc, "snap_u1": snap_u1,
    }


def filter_history(samples, double tau0, double omega, double dt,
                   double cutoff, int order, coeffs, Py_ssize_t stride):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s_a = np.ascontiguousarray(samples, dtype=np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] fc_a = np.array(coeffs, dtype=np.complex128)
    cdef Py_ssize_t n = s_a.shape[0]
    cdef int H = order
    cdef Py_ssize_t n_out = n // stride if stride > 0 else 0
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] hist = np.zeros((n_out, H + 1), dtype=np.complex128)
    cdef double complex * fc = &fc_a[0]
    cdef double * s = &s_a[0]
    cdef Py_ssize_t i, i_out = 0
    cdef int hh
    cdef double tau, cr, ci, er, ei, tre, est, err, gain
    for i in range(n):
        tau = tau0 + omega * (i * dt)
        cr = cos(tau)
        ci = sin(tau)
        er = 1.0
        ei = 0.0
        est = fc[0].real
        for hh in range(1, H + 1):
            tre = er * cr - ei * ci
            ei = er * ci + ei * cr
            er = tre
            est += fc[hh].real * er - fc[hh].imag * ei
        err = s[i] - est
        fc[0] = fc[0].real + dt * cutoff * err
        gain = 2.0 * cutoff * dt * err
        er = 1.0
        ei = 0.0
        for hh in range(1, H + 1):
            tre = er * cr + ei * ci
            ei = ei * cr - er * ci
            er = tre
            fc[hh] = fc[hh] + gain * er + 1j * (gain * ei)
        if stride > 0 and (i + 1) % stride == 0:
            for hh in range(H + 1):
                hist[i_out, hh] = fc[hh]
            i_out += 1
    return hist, fc_a


cdef int _dsolve_c(int n, int m, double * A, double * b) nogil:
    """Solve A (n x n, row-major) X = B (n x m) in place; X left in b."""
    cdef int col, r, c, p
    cdef double best, mfac, piv, tmp
    for col in range(n):
        p = col
        best = fabs(A[col * n + col])
        for r in range(col + 1, n):
            if fabs(A[r * n + col]) > best:
                best = fabs(A[r * n + col])
                p = r
        if best == 0.0:
            return 1
        if p != col:
            for c in range(n):
                tmp = A[col * n + c]
                A[col * n + c] = A[p * n + c]
                A[p * n + c] = tmp
            for c in range(m):
                tmp = b[col * m + c]
                b[col * m + c] = b[p * m + c]
                b[p * m + c] = tmp
        piv = A[col * n + col]
        for r in range(col + 1, n):
            mfac = A[r * n + col] / piv
            if mfac != 0.0:
                for c in range(col, n):
                    A[r * n + c] -= mfac * A[col * n + c]
                for c in range(m):
                    b[r * m + c] -= mfac * b[col * m + c]
    for r in range(n - 1, -1, -1):
        for c in range(m):
            tmp = b[r * m + c]
            for p in range(r + 1, n):
                tmp -= A[r * n + p] * b[p * m + c]
            b[r * m + c] = tmp / A[r * n + r]
    return 0


def newmark_orbit(w2, c2dw, phi_nl, double knl, phi_f, double omega,
                  double famp, double phase0, x0,
                  int steps_per_period, int n_periods,
                  bint want_monodromy, bint want_traj,
                  double newton_tol, int max_newton):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w2_a = np.ascontiguousarray(w2, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c2dw_a = np.ascontiguousarray(c2dw, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pnl_a = np.ascontiguousarray(phi_nl, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pf_a = np.ascontiguousarray(phi_f, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x0_a = np.ascontiguousarray(x0, dtype=np.float64)
    cdef int M = w2_a.shape[0]
    if M > 8:
        raise ValueError("mode count exceeds engine limit")
    cdef int n_steps = steps_per_period * n_periods
    cdef double T = 2.0 * M_PI / omega
    cdef double dt = T / steps_per_period
    cdef double a0c = 4.0 / (dt * dt)
    cdef double a1c = 2.0 / dt

    cdef double eta[8]
    cdef double etad[8]
    cdef double etadd[8]
    cdef double eta_new[8]
    cdef double p_new[8]
    cdef double res[8]
    cdef double acc[8]
    cdef double vel[8]
    cdef double A[64]
    cdef double dE[128]
    cdef double dEd[128]
    cdef double dEdd[128]
    cdef double rhs[128]
    cdef double dE_new[128]

    cdef double * w2p = &w2_a[0]
    cdef double * cp = &c2dw_a[0]
    cdef double * pnl = &pnl_a[0]
    cdef double * pf = &pf_a[0]

    cdef int l, c, it, step, cols = 2 * M
    cdef double q, qc, dnl, jfac, t_new, resmax, tol_scale, pfmax
    cdef long newton_total = 0
    cdef bint converged

    for l in range(M):
        eta[l] = x0_a[l]
        etad[l] = x0_a[M + l]

    q = 0.0
    for l in range(M):
        q += pnl[l] * eta[l]
    dnl = knl * q * q * q
    for l in range(M):
        etadd[l] = pf[l] * (famp * cos(phase0)) - cp[l] * etad[l] \
            - w2p[l] * eta[l] - pnl[l] * dnl

    if want_monodromy:
        jfac = 3.0 * knl * q * q
        for l in range(M):
            for c in range(cols):
                dE[l * cols + c] = 1.0 if c == l else 0.0
                dEd[l * cols + c] = 1.0 if c == M + l else 0.0
        for c in range(cols):
            qc = 0.0
            for l in range(M):
                qc += pnl[l] * dE[l * cols + c]
            for l in range(M):
                dEdd[l * cols + c] = -cp[l] * dEd[l * cols + c] \
                    - w2p[l] * dE[l * cols + c] - jfac * pnl[l] * qc

    cdef cnp.ndarray[cnp.float64_t, ndim=2] traj_a
    if want_traj:
        traj_a = np.zeros((n_steps + 1, 2 * M))
        for l in range(M):
            traj_a[0, l] = eta[l]
            traj_a[0, M + l] = etad[l]
    else:
        traj_a = np.zeros((0, 0))

    pfmax = 0.0
    for l in range(M):
        if fabs(pf[l]) > pfmax:
            pfmax = fabs(pf[l])
    tol_scale = newton_tol * (1.0 + famp * pfmax)
    cdef double eps64 = 64.0 * 2.220446049250313e-16
    cdef double mag, tol_eff

    cdef int status = 0
    cdef int i_fail = -1
    for step in range(1, n_steps + 1):
        t_new = step * dt
        for l in range(M):
            p_new[l] = pf[l] * (famp * cos(omega * t_new + phase0))
            eta_new[l] = eta[l] + dt * etad[l] + (0.5 * dt * dt) * etadd[l]
        # keep tolerance above the 4/dt^2-amplified rounding floor
        mag = 0.0
        for l in range(M):
            if fabs(eta[l]) > mag:
                mag = fabs(eta[l])
            if dt * fabs(etad[l]) > mag:
                mag = dt * fabs(etad[l])
        tol_eff = tol_scale + eps64 * a0c * mag
        converged = False
        for it in range(max_newton):
            q = 0.0
            for l in range(M):
                q += pnl[l] * eta_new[l]
            dnl = knl * q * q * q
            resmax = 0.0
            for l in range(M):
                acc[l] = a0c * (eta_new[l] - eta[l] - dt * etad[l]) - etadd[l]
                vel[l] = a1c * (eta_new[l] - eta[l]) - etad[l]
                res[l] = acc[l] + cp[l] * vel[l] + w2p[l] * eta_new[l] \
                    + pnl[l] * dnl - p_new[l]
                if fabs(res[l]) > resmax:
                    resmax = fabs(res[l])
            newton_total += 1
            if resmax < tol_eff:
                converged = True
                break
            jfac = 3.0 * knl * q * q
            for l in range(M):
                for c in range(M):
                    A[l * M + c] = jfac * pnl[l] * pnl[c]
                A[l * M + l] += a0c + a1c * cp[l] + w2p[l]
            if _dsolve_c(M, 1, A, res):
                converged = False
                break
            for l in range(M):
                eta_new[l] -= res[l]
        if not converged:
            status = 3
            i_fail = step
            break
        q = 0.0
        for l in range(M):
            q += pnl[l] * eta_new[l]
        for l in range(M):
            acc[l] = a0c * (eta_new[l] - eta[l] - dt * etad[l]) - etadd[l]
            vel[l] = a1c * (eta_new[l] - eta[l]) - etad[l]
        if want_monodromy:
            jfac = 3.0 * knl * q * q
            for l in range(M):
                for c in range(M):
                    A[l * M + c] = jfac * pnl[l] * pnl[c]
                A[l * M + l] += a0c + a1c * cp[l] + w2p[l]
            for l in range(M):
                for c in range(cols):
                    rhs[l * cols + c] = a0c * (dE[l * cols + c]
                                               + dt * dEd[l * cols + c]) \
                        + dEdd[l * cols + c] \
                        + cp[l] * (a1c * dE[l * cols + c] + dEd[l * cols + c])
            if _dsolve_c(M, cols, A, rhs):
                status = 3
                i_fail = step
                break
            for l in range(M):
                for c in range(cols):
                    dE_new[l * cols + c] = rhs[l * cols + c]
            for l in range(M):
                for c in range(cols):
                    dEdd[l * cols + c] = a0c * (dE_new[l * cols + c]
                                                - dE[l * cols + c]
                                                - dt * dEd[l * cols + c]) \
                        - dEdd[l * cols + c]
                    dEd[l * cols + c] = a1c * (dE_new[l * cols + c]
                                               - dE[l * cols + c]) \
                        - dEd[l * cols + c]
                    dE[l * cols + c] = dE_new[l * cols + c]
        for l in range(M):
            eta[l] = eta_new[l]
            etad[l] = vel[l]
            etadd[l] = acc[l]
        if want_traj:
            for l in range(M):
                traj_a[step, l] = eta[l]
                traj_a[step, M + l] = etad[l]

    x_end = np.empty(2 * M)
    for l in range(M):
        x_end[l] = eta[l]
        x_end[M + l] = etad[l]
    out = {"status": status, "i_fail": i_fail, "x_end": x_end,
           "monodromy": None, "traj": traj_a if want_traj else None,
           "newton_total": newton_total}
    if want_monodromy and status == 0:
        mono = np.zeros((2 * M, 2 * M))
        for l in range(M):
            for c in range(cols):
                mono[l, c] = dE[l * cols + c]
                mono[M + l, c] = dEd[l * cols + c]
        out["monodromy"] = mono
    return out
