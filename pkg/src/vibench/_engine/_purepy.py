"""Pure-Python engine kernels.

Reference implementation of the hot loops; the Cython core in
``_core.pyx`` is a line-by-line translation.  Accumulations are written
as explicit loops so both backends perform identical floating-point
operations.
"""

import math

import numpy as np

BACKEND = "python"

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = (19372.0 / 6561.0, -25360.0 / 2187.0,
                          64448.0 / 6561.0, -212.0 / 729.0)
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0,
                                46732.0 / 5247.0, 49.0 / 176.0,
                                -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0,
                                71.0 / 1920.0, -17253.0 / 339200.0,
                                22.0 / 525.0, -1.0 / 40.0)

STATUS_OK = 0
STATUS_BLOWUP = 1
STATUS_UNDERFLOW = 2
STATUS_NEWTON_FAIL = 3


def _phase(s, tau0, om_a, om_b, t_ramp):
    """Phase at segment-local time ``s`` under the half-cosine ramp law."""
    if t_ramp <= 0.0:
        return tau0 + om_a * s
    if s >= t_ramp:
        half = 0.5 * (om_a + om_b) * t_ramp
        return tau0 + half + om_b * (s - t_ramp)
    return tau0 + om_a * s + 0.5 * (om_b - om_a) * (
        s - (t_ramp / math.pi) * math.sin(math.pi * s / t_ramp))


def _plant_rhs(plant, u_val, x, dx):
    """State derivative for voltage input ``u_val``; fills ``dx``."""
    M = plant["n_modes"]
    w2, c2dw = plant["w2"], plant["c2dw"]
    drive, phi_nl = plant["drive"], plant["phi_nl"]
    q = 0.0
    for l in range(M):
        q += phi_nl[l] * x[l]
    dnl = plant["k_nl"] * q * q * q
    if plant["mode"] == 0:
        g = 0.0
        qex = 0.0
        qexd = 0.0
        for l in range(M):
            a0 = -c2dw[l] * x[M + l] - w2[l] * x[l] - phi_nl[l] * dnl
            dx[M + l] = a0
            qex += drive[l] * x[l]
            qexd += drive[l] * x[M + l]
            g += drive[l] * a0
        f = (plant["g_over_r"] * u_val - plant["m_ex"] * (
            g + plant["e2dw"] * qexd + plant["ew2"] * qex)) * plant["inv_den"]
        for l in range(M):
            dx[l] = x[M + l]
            dx[M + l] += drive[l] * f
        return f
    # base drive
    sga = 0.0
    for l in range(M):
        a0 = -c2dw[l] * x[M + l] - w2[l] * x[l] - phi_nl[l] * dnl
        dx[M + l] = a0
        sga += drive[l] * a0
    qb = x[2 * M]
    qbd = x[2 * M + 1]
    ab = (plant["g_over_r"] * u_val - plant["m_ex"] * (
        plant["e2dw"] * qbd + plant["ew2"] * qb) - sga) * plant["inv_den"]
    for l in range(M):
        dx[l] = x[M + l]
        dx[M + l] -= drive[l] * ab
    dx[2 * M] = qbd
    dx[2 * M + 1] = ab
    return ab


def _forced_rhs(plant, f_val, x, dx):
    """State derivative with a force imposed at the drive point."""
    M = plant["n_modes"]
    w2, c2dw = plant["w2"], plant["c2dw"]
    drive, phi_nl = plant["drive"], plant["phi_nl"]
    q = 0.0
    for l in range(M):
        q += phi_nl[l] * x[l]
    dnl = plant["k_nl"] * q * q * q
    for l in range(M):
        dx[l] = x[M + l]
        dx[M + l] = (-c2dw[l] * x[M + l] - w2[l] * x[l] - phi_nl[l] * dnl
                     + drive[l] * f_val)
    return f_val


def _command_value(u_eff, tau):
    """Evaluate sum_{h} Re{u_eff[h] e^{i h tau}} (index 0 = DC)."""
    cr = math.cos(tau)
    ci = math.sin(tau)
    er, ei = 1.0, 0.0
    val = u_eff[0].real
    for h in range(1, len(u_eff)):
        t = er * cr - ei * ci
        ei = er * ci + ei * cr
        er = t
        val += u_eff[h].real * er - u_eff[h].imag * ei
    return val


def run_segment(plant, x0, fcoef0, integ0, u1, ucmd, wdist, hmask,
                kp, ki, kf, target, ulimit, fund_on, harm_on, cutoff,
                tau0, om_a, om_b, t_ramp, n_samples, dt,
                rtol, atol, max_step, h0,
                forced, forced_amp, noise,
                rec_exc, rec_obs, rec_u, snap_stride):
    """March the coupled plant/filter/controller system over one segment.

    The controllers and the adaptive filter step once per sample; the
    plant is integrated between samples with an embedded adaptive
    Dormand-Prince 5(4) scheme.  Returns a dict with final states,
    diagnostics and optional decimated snapshots.
    """
    S = len(x0)
    M = plant["n_modes"]
    H = len(fcoef0) - 1
    obs_row = plant["obs"]
    x = np.array(x0, dtype=float)
    fc = np.array(fcoef0, dtype=complex)
    integ = np.array(integ0, dtype=complex)
    u_eff = np.zeros(H + 1, dtype=complex)
    u_now = np.zeros(H + 1, dtype=complex)

    dx = np.zeros(S)
    k = [np.zeros(S) for _ in range(7)]
    xs = np.zeros(S)
    x5 = np.zeros(S)

    n_steps = 0
    n_rejected = 0
    n_frozen = 0
    n_clamped = 0
    status = STATUS_OK
    i_fail = -1
    h = h0 if h0 > 0.0 else dt
    h_min = 1e-12 * dt

    n_snap = n_samples // snap_stride if snap_stride > 0 else 0
    snap_fcoef = np.zeros((n_snap, H + 1), dtype=complex)
    snap_ucmd = np.zeros((n_snap, H + 1), dtype=complex)
    snap_u1 = np.zeros(n_snap)
    i_snap = 0

    def rebuild():
        """Refresh command coefficients from the controller states."""
        for hh in range(H + 1):
            u_now[hh] = 0.0
        if forced:
            pass
        elif fund_on:
            u_now[1] = u1
        else:
            u_now[1] = ucmd[1]
        for hh in range(2, H + 1):
            if harm_on and hmask[hh]:
                u_now[hh] = -kp * fc[hh] + ki * integ[hh]
            elif not harm_on:
                u_now[hh] = ucmd[hh]
        for hh in range(H + 1):
            u_eff[hh] = u_now[hh] + wdist[hh]

    rebuild()

    def stage(t_s, y, out):
        tau_s = _phase(t_s, tau0, om_a, om_b, t_ramp)
        if forced:
            _forced_rhs(plant, forced_amp * math.cos(tau_s), y, out)
        else:
            _plant_rhs(plant, _command_value(u_eff, tau_s), y, out)

    for n in range(n_samples):
        s_n = n * dt
        tau_n = _phase(s_n, tau0, om_a, om_b, t_ramp)
        if forced:
            u_n = 0.0
            e_n = _forced_rhs(plant, forced_amp * math.cos(tau_n), x, dx)
        else:
            u_n = _command_value(u_now, tau_n)
            e_n = _plant_rhs(plant, _command_value(u_eff, tau_n), x, dx)
        e_meas = e_n + (noise[n] if noise is not None else 0.0)
        finite = math.isfinite(e_meas)
        if finite:
            for j in range(S):
                if not math.isfinite(x[j]):
                    finite = False
                    break
        if not finite:
            status = STATUS_BLOWUP
            i_fail = n
            break

        y_n = 0.0
        for l in range(M):
            y_n += obs_row[l] * x[l]
        if rec_exc is not None:
            rec_exc[n] = e_meas
            rec_obs[n] = y_n
            rec_u[n] = u_n

        # adaptive filter (explicit Euler; DC channel gain = cutoff)
        cr = math.cos(tau_n)
        ci = math.sin(tau_n)
        er, ei = 1.0, 0.0
        est = fc[0].real
        for hh in range(1, H + 1):
            t = er * cr - ei * ci
            ei = er * ci + ei * cr
            er = t
            est += fc[hh].real * er - fc[hh].imag * ei
        err = e_meas - est
        fc[0] = complex(fc[0].real + dt * cutoff * err, 0.0)
        gain = 2.0 * cutoff * dt * err
        er, ei = 1.0, 0.0
        for hh in range(1, H + 1):
            t = er * cr + ei * ci
            ei = ei * cr - er * ci
            er = t
            fc[hh] += complex(gain * er, gain * ei)

        # controllers
        sat = abs(u_n) > ulimit
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
                    if hmask[hh]:
                        integ[hh] += dt * (-fc[hh])
            rebuild()

        if snap_stride > 0 and (n + 1) % snap_stride == 0:
            snap_fcoef[i_snap, :] = fc
            snap_ucmd[i_snap, :] = u_now
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
                status = STATUS_UNDERFLOW
                i_fail = n
                break

            if not have_k1:
                stage(t_loc, x, k[0])
                have_k1 = True
            for j in range(S):
                xs[j] = x[j] + h_try * _A21 * k[0][j]
            stage(t_loc + _C2 * h_try, xs, k[1])
            for j in range(S):
                xs[j] = x[j] + h_try * (_A31 * k[0][j] + _A32 * k[1][j])
            stage(t_loc + _C3 * h_try, xs, k[2])
            for j in range(S):
                xs[j] = x[j] + h_try * (_A41 * k[0][j] + _A42 * k[1][j]
                                        + _A43 * k[2][j])
            stage(t_loc + _C4 * h_try, xs, k[3])
            for j in range(S):
                xs[j] = x[j] + h_try * (_A51 * k[0][j] + _A52 * k[1][j]
                                        + _A53 * k[2][j] + _A54 * k[3][j])
            stage(t_loc + _C5 * h_try, xs, k[4])
            for j in range(S):
                xs[j] = x[j] + h_try * (_A61 * k[0][j] + _A62 * k[1][j]
                                        + _A63 * k[2][j] + _A64 * k[3][j]
                                        + _A65 * k[4][j])
            stage(t_loc + h_try, xs, k[5])
            for j in range(S):
                x5[j] = x[j] + h_try * (_B1 * k[0][j] + _B3 * k[2][j]
                                        + _B4 * k[3][j] + _B5 * k[4][j]
                                        + _B6 * k[5][j])
            stage(t_loc + h_try, x5, k[6])

            err_acc = 0.0
            for j in range(S):
                e_j = h_try * (_E1 * k[0][j] + _E3 * k[2][j] + _E4 * k[3][j]
                               + _E5 * k[4][j] + _E6 * k[5][j] + _E7 * k[6][j])
                a_x = abs(x[j])
                a_n = abs(x5[j])
                sc = atol + rtol * (a_x if a_x > a_n else a_n)
                err_acc += (e_j / sc) * (e_j / sc)
            err_norm = math.sqrt(err_acc / S)
            if not math.isfinite(err_norm):
                status = STATUS_BLOWUP
                i_fail = n
                break

            if err_norm <= 1.0:
                t_loc += h_try
                for j in range(S):
                    x[j] = x5[j]
                    k[0][j] = k[6][j]
                n_steps += 1
                fac = 5.0 if err_norm == 0.0 else min(
                    5.0, max(0.2, 0.9 * err_norm ** -0.2))
                if not clamped:
                    h = h_try * fac
                # interval-boundary clamps keep the previous suggestion
            else:
                n_rejected += 1
                fac = max(0.2, 0.9 * err_norm ** -0.2)
                h = h_try * fac
        if status != STATUS_OK:
            break

    tau_end = _phase(n_samples * dt, tau0, om_a, om_b, t_ramp)
    return {
        "status": status, "i_fail": i_fail,
        "x": x, "fcoef": fc, "integ": integ, "u1": u1,
        "u_now": u_now.copy(), "tau_end": tau_end, "h_next": h,
        "n_steps": n_steps, "n_rejected": n_rejected,
        "n_frozen": n_frozen, "n_clamped": n_clamped,
        "snap_fcoef": snap_fcoef, "snap_ucmd": snap_ucmd, "snap_u1": snap_u1,
    }


def filter_history(samples, tau0, omega, dt, cutoff, order, coeffs, stride):
    """Offline adaptive-filter pass over a recorded constant-frequency
    signal; returns (history, final coefficients)."""
    n = len(samples)
    H = order
    fc = np.array(coeffs, dtype=complex)
    n_out = n // stride
    hist = np.zeros((n_out, H + 1), dtype=complex)
    i_out = 0
    for i in range(n):
        tau = tau0 + omega * (i * dt)
        cr = math.cos(tau)
        ci = math.sin(tau)
        er, ei = 1.0, 0.0
        est = fc[0].real
        for hh in range(1, H + 1):
            t = er * cr - ei * ci
            ei = er * ci + ei * cr
            er = t
            est += fc[hh].real * er - fc[hh].imag * ei
        err = samples[i] - est
        fc[0] = complex(fc[0].real + dt * cutoff * err, 0.0)
        gain = 2.0 * cutoff * dt * err
        er, ei = 1.0, 0.0
        for hh in range(1, H + 1):
            t = er * cr + ei * ci
            ei = ei * cr - er * ci
            er = t
            fc[hh] += complex(gain * er, gain * ei)
        if stride > 0 and (i + 1) % stride == 0:
            hist[i_out, :] = fc
            i_out += 1
    return hist, fc


def _dsolve(A, b):
    """Solve A x = b in place (Gaussian elimination, partial pivoting)."""
    n = A.shape[0]
    for col in range(n):
        p = col
        best = abs(A[col, col])
        for r in range(col + 1, n):
            if abs(A[r, col]) > best:
                best = abs(A[r, col])
                p = r
        if p != col:
            A[[col, p], :] = A[[p, col], :]
            b[[col, p]] = b[[p, col]]
        piv = A[col, col]
        for r in range(col + 1, n):
            m = A[r, col] / piv
            if m != 0.0:
                A[r, col:] -= m * A[col, col:]
                b[r] -= m * b[col]
    x = np.zeros_like(b)
    for r in range(n - 1, -1, -1):
        acc = b[r].copy() if b.ndim > 1 else b[r]
        for c in range(r + 1, n):
            acc = acc - A[r, c] * x[c]
        x[r] = acc / A[r, r]
    return x


def newmark_orbit(w2, c2dw, phi_nl, knl, phi_f, omega, famp, phase0, x0,
                  steps_per_period, n_periods, want_monodromy, want_traj,
                  newton_tol, max_newton):
    """Integrate the forced modal system over whole periods with the
    constant-average-acceleration Newmark scheme.

    The nonlinear term is resolved by per-step Newton iteration; the
    monodromy matrix is propagated alongside with the linearized scheme.
    Forcing is ``famp * cos(omega t + phase0)`` at the drive row.
    """
    M = len(w2)
    n_steps = steps_per_period * n_periods
    T = 2.0 * math.pi / omega
    dt = T / steps_per_period
    a0c = 4.0 / (dt * dt)
    a1c = 2.0 / dt

    eta = np.array(x0[:M], dtype=float)
    etad = np.array(x0[M:2 * M], dtype=float)

    def dvec(e):
        q = float(np.dot(phi_nl, e))
        return phi_nl * (knl * q ** 3), q

    def jnl(q):
        return np.outer(phi_nl, phi_nl) * (3.0 * knl * q * q)

    d0, _ = dvec(eta)
    p = phi_f * (famp * math.cos(phase0))
    etadd = p - c2dw * etad - w2 * eta - d0

    if want_monodromy:
        dE = np.zeros((M, 2 * M))
        dEd = np.zeros((M, 2 * M))
        dE[:, :M] = np.eye(M)
        dEd[:, M:] = np.eye(M)
        _, q_now = dvec(eta)
        A0 = jnl(q_now) + np.diag(w2)
        dEdd = -np.diag(c2dw) @ dEd - A0 @ dE
    traj = None
    if want_traj:
        traj = np.zeros((n_steps + 1, 2 * M))
        traj[0, :M] = eta
        traj[0, M:] = etad

    tol_scale = newton_tol * (1.0 + famp * float(np.max(np.abs(phi_f))))
    eps64 = 64.0 * 2.220446049250313e-16
    newton_total = 0
    for step in range(1, n_steps + 1):
        t_new = step * dt
        p_new = phi_f * (famp * math.cos(omega * t_new + phase0))
        eta_new = eta + dt * etad + (0.5 * dt * dt) * etadd
        # the 4/dt^2 term amplifies rounding of eta; keep the tolerance
        # above the floating-point floor of the residual evaluation
        mag = max(float(np.max(np.abs(eta))), dt * float(np.max(np.abs(etad))))
        tol_eff = tol_scale + eps64 * a0c * mag
        converged = False
        for _ in range(max_newton):
            acc = a0c * (eta_new - eta - dt * etad) - etadd
            vel = a1c * (eta_new - eta) - etad
            d_new, q_new = dvec(eta_new)
            res = acc + c2dw * vel + w2 * eta_new + d_new - p_new
            newton_total += 1
            if float(np.max(np.abs(res))) < tol_eff:
                converged = True
                break
            A = jnl(q_new) + np.diag(a0c + a1c * c2dw + w2)
            eta_new = eta_new - _dsolve(A.copy(), res.copy())
        if not converged:
            return {"status": STATUS_NEWTON_FAIL, "i_fail": step,
                    "x_end": np.concatenate([eta, etad]),
                    "monodromy": None, "traj": traj,
                    "newton_total": newton_total}
        acc = a0c * (eta_new - eta - dt * etad) - etadd
        vel = a1c * (eta_new - eta) - etad
        if want_monodromy:
            _, q_new = dvec(eta_new)
            A = jnl(q_new) + np.diag(a0c + a1c * c2dw + w2)
            rhs = (a0c * (dE + dt * dEd) + dEdd
                   + c2dw[:, None] * (a1c * dE + dEd))
            dE_new = _dsolve(A.copy(), rhs.copy())
            dEdd_new = a0c * (dE_new - dE - dt * dEd) - dEdd
            dEd_new = a1c * (dE_new - dE) - dEd
            dE, dEd, dEdd = dE_new, dEd_new, dEdd_new
        eta, etad, etadd = eta_new, vel, acc
        if want_traj:
            traj[step, :M] = eta
            traj[step, M:] = etad

    out = {"status": STATUS_OK, "i_fail": -1,
           "x_end": np.concatenate([eta, etad]),
           "monodromy": None, "traj": traj, "newton_total": newton_total}
    if want_monodromy:
        mono = np.zeros((2 * M, 2 * M))
        mono[:M, :] = dE
        mono[M:, :] = dEd
        out["monodromy"] = mono
    return out
