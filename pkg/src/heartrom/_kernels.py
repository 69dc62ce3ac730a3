"""Numba kernels shared by the circulation, ventricle, surrogate and
coupling layers.

Everything here operates on packed float64 arrays so the per-heartbeat cost
stays in the microsecond range; the public modules own validation, packing
and unit bookkeeping.  All kernels are deterministic (no fastmath, no
threading) so results are bit-reproducible regardless of process count.

Packed layouts
--------------
Circulation parameters ``cp`` (32): see CP_* индексы below (Tab-ordered:
volume, elastances, timings, reference volumes, delays, valve resistances,
RLC lines).  Circulation state ``c`` (12): chamber volumes LA/RA/RV/LV,
compartment pressures AR_SYS/VEN_SYS/AR_PUL/VEN_PUL, fluxes in the same
compartment order.  Ventricle parameters ``rp`` (13): the four physiological
parameters followed by the fixed internal constants.  Windkessel ``wp`` (5):
resistance, capacitance, filling ramp rate, filling-entry pressure, aortic
opening pressure.

Network weights are packed flat as [W1 row-major, b1, (Wh[l], bh[l]) per
extra hidden layer, W2 row-major, b2]; with zero hidden layers the layout is
just [W row-major, b] and W2/b2 are empty placeholders.
"""

import numpy as np
from numba import njit

# -- circulation parameter indices -------------------------------------------
CP_V_TOT = 0
CP_E_ACT_LA = 1
CP_E_ACT_RA = 2
CP_E_ACT_RV = 3
CP_E_PASS_LA = 4
CP_E_PASS_RA = 5
CP_E_PASS_RV = 6
CP_T_CONTR_LA = 7
CP_T_CONTR_RA = 8
CP_T_CONTR_RV = 9
CP_T_REL_LA = 10
CP_T_REL_RA = 11
CP_T_REL_RV = 12
CP_V0_LA = 13
CP_V0_RA = 14
CP_V0_RV = 15
CP_T_AV_L = 16
CP_T_AV_R = 17
CP_R_MIN = 18
CP_R_MAX = 19
CP_R_AR_SYS = 20
CP_R_VEN_SYS = 21
CP_R_AR_PUL = 22
CP_R_VEN_PUL = 23
CP_C_AR_SYS = 24
CP_C_VEN_SYS = 25
CP_C_AR_PUL = 26
CP_C_VEN_PUL = 27
CP_L_AR_SYS = 28
CP_L_VEN_SYS = 29
CP_L_AR_PUL = 30
CP_L_VEN_PUL = 31
N_CP = 32

# -- circulation state indices ------------------------------------------------
IC_V_LA = 0
IC_V_RA = 1
IC_V_RV = 2
IC_V_LV = 3
IC_P_AR_SYS = 4
IC_P_VEN_SYS = 5
IC_P_AR_PUL = 6
IC_P_VEN_PUL = 7
IC_Q_AR_SYS = 8
IC_Q_VEN_SYS = 9
IC_Q_AR_PUL = 10
IC_Q_VEN_PUL = 11
N_STATE = 12

# -- reference-ventricle parameter indices -------------------------------------
RP_A_XB = 0
RP_SIGMA_F = 1
RP_ALPHA = 2
RP_C_PASS = 3
RP_V_UN = 4
RP_E_SCALE = 5
RP_KAPPA = 6
RP_GAMMA = 7
RP_TAU_RISE = 8
RP_TAU_FALL = 9
RP_TAU_D0 = 10
RP_DRIVE_WIDTH = 11
RP_FIBER_EXP = 12
N_RP = 13

# -- windkessel parameter indices ----------------------------------------------
WP_R = 0
WP_C = 1
WP_RAMP = 2
WP_P_FILL = 3
WP_P_OPEN = 4
N_WP = 5

# windkessel phases
PHASE_FILLING = 0
PHASE_ISOVOLUMIC = 1
PHASE_EJECTION = 2

# record layout for closed-loop runs
REC_CL_WIDTH = 17
# record layout for windkessel runs: t, v_lv, p_lv, phase
REC_WK_WIDTH = 4

_V_SENTINEL = -1.0e9  # ventricle volume when the pressure is below reach


# ------------------------------------------------------------------ activation

@njit(cache=True)
def activation_pulse(tau, t_contr, t_rel):
    """Cosine contraction/relaxation pulse over one period, in [0, 1]."""
    if tau < 0.0:
        return 0.0
    if tau < t_contr:
        return 0.5 * (1.0 - np.cos(np.pi * tau / t_contr))
    if tau < t_contr + t_rel:
        return 0.5 * (1.0 + np.cos(np.pi * (tau - t_contr) / t_rel))
    return 0.0


@njit(cache=True)
def chamber_activation_kernel(t, t_hb, t_onset, t_contr, t_rel):
    tau = (t - t_onset) % t_hb
    return activation_pulse(tau, t_contr, t_rel)


# ------------------------------------------------------------------ circulation

@njit(cache=True)
def valve_flux(p_up, p_down, r_min, r_max, width):
    dp = p_up - p_down
    if width <= 0.0:
        if dp > 0.0:
            return dp / r_min
        return dp / r_max
    sigma = dp / width + 0.5
    if sigma < 0.0:
        sigma = 0.0
    elif sigma > 1.0:
        sigma = 1.0
    g = sigma / r_min + (1.0 - sigma) / r_max
    return dp * g


@njit(cache=True)
def chamber_pressures(c, t, cp, t_hb):
    """Elastance pressures of LA, RA, RV at time t."""
    a_la = chamber_activation_kernel(
        t, t_hb, t_hb - cp[CP_T_AV_L], cp[CP_T_CONTR_LA], cp[CP_T_REL_LA])
    a_ra = chamber_activation_kernel(
        t, t_hb, t_hb - cp[CP_T_AV_R], cp[CP_T_CONTR_RA], cp[CP_T_REL_RA])
    a_rv = chamber_activation_kernel(
        t, t_hb, 0.0, cp[CP_T_CONTR_RV], cp[CP_T_REL_RV])
    p_la = (cp[CP_E_PASS_LA] + cp[CP_E_ACT_LA] * a_la) * (c[IC_V_LA] - cp[CP_V0_LA])
    p_ra = (cp[CP_E_PASS_RA] + cp[CP_E_ACT_RA] * a_ra) * (c[IC_V_RA] - cp[CP_V0_RA])
    p_rv = (cp[CP_E_PASS_RV] + cp[CP_E_ACT_RV] * a_rv) * (c[IC_V_RV] - cp[CP_V0_RV])
    return p_la, p_ra, p_rv


@njit(cache=True)
def circ_rhs_kernel(c, p_lv, t, cp, t_hb, width, dc):
    """Closed-loop circulation right-hand side; fills dc (12,)."""
    p_la, p_ra, p_rv = chamber_pressures(c, t, cp, t_hb)
    r_min = cp[CP_R_MIN]
    r_max = cp[CP_R_MAX]
    q_mv = valve_flux(p_la, p_lv, r_min, r_max, width)
    q_av = valve_flux(p_lv, c[IC_P_AR_SYS], r_min, r_max, width)
    q_tv = valve_flux(p_ra, p_rv, r_min, r_max, width)
    q_pv = valve_flux(p_rv, c[IC_P_AR_PUL], r_min, r_max, width)

    dc[IC_V_LA] = c[IC_Q_VEN_PUL] - q_mv
    dc[IC_V_RA] = c[IC_Q_VEN_SYS] - q_tv
    dc[IC_V_RV] = q_tv - q_pv
    dc[IC_V_LV] = q_mv - q_av
    dc[IC_P_AR_SYS] = (q_av - c[IC_Q_AR_SYS]) / cp[CP_C_AR_SYS]
    dc[IC_P_VEN_SYS] = (c[IC_Q_AR_SYS] - c[IC_Q_VEN_SYS]) / cp[CP_C_VEN_SYS]
    dc[IC_P_AR_PUL] = (q_pv - c[IC_Q_AR_PUL]) / cp[CP_C_AR_PUL]
    dc[IC_P_VEN_PUL] = (c[IC_Q_AR_PUL] - c[IC_Q_VEN_PUL]) / cp[CP_C_VEN_PUL]
    dc[IC_Q_AR_SYS] = (c[IC_P_AR_SYS] - c[IC_P_VEN_SYS]
                       - cp[CP_R_AR_SYS] * c[IC_Q_AR_SYS]) / cp[CP_L_AR_SYS]
    dc[IC_Q_VEN_SYS] = (c[IC_P_VEN_SYS] - p_ra
                        - cp[CP_R_VEN_SYS] * c[IC_Q_VEN_SYS]) / cp[CP_L_VEN_SYS]
    dc[IC_Q_AR_PUL] = (c[IC_P_AR_PUL] - c[IC_P_VEN_PUL]
                       - cp[CP_R_AR_PUL] * c[IC_Q_AR_PUL]) / cp[CP_L_AR_PUL]
    dc[IC_Q_VEN_PUL] = (c[IC_P_VEN_PUL] - p_la
                        - cp[CP_R_VEN_PUL] * c[IC_Q_VEN_PUL]) / cp[CP_L_VEN_PUL]


# ------------------------------------------------------------- reference model

@njit(cache=True)
def fiber_effectiveness(alpha_deg, exponent):
    s = np.sin(alpha_deg * np.pi / 180.0)
    s60 = np.sin(60.0 * np.pi / 180.0)
    return (s * s / (s60 * s60)) ** (0.5 * exponent)


@njit(cache=True)
def ref_active_elastance(s, rp):
    return (rp[RP_E_SCALE] * (rp[RP_A_XB] / 160.0)
            * fiber_effectiveness(rp[RP_ALPHA], rp[RP_FIBER_EXP]) * s)


@njit(cache=True)
def ref_pressure(v, s, rp):
    """LV pressure at volume v and activation s (algebraic law)."""
    v_un = rp[RP_V_UN]
    kp = (rp[RP_C_PASS] / 0.88) * rp[RP_KAPPA]
    arg = rp[RP_GAMMA] * (v - v_un) / v_un
    if arg > 500.0:
        arg = 500.0
    return ref_active_elastance(s, rp) * (v - v_un) + kp * np.expm1(arg)


@njit(cache=True)
def ref_volume(p, s, rp):
    """Invert ref_pressure in v by safeguarded Newton.

    Returns (volume, status): status 0 on success, 1 when the pressure is
    below what the passive law can reach at s=0 (volume then carries a large
    negative sentinel so that bracketing callers keep a usable sign).
    """
    v_un = rp[RP_V_UN]
    kp = (rp[RP_C_PASS] / 0.88) * rp[RP_KAPPA]
    gamma = rp[RP_GAMMA]
    ea = ref_active_elastance(s, rp)

    if ea <= 0.0 and p <= -kp * (1.0 - 1e-12):
        return _V_SENTINEL, 1

    # bracket [lo, hi] with F(lo) <= 0 <= F(hi)
    if p >= 0.0:
        lo = v_un
        hi = v_un * (1.0 + np.log1p(p / kp) / gamma)
        if ea > 0.0:
            h2 = v_un + p / ea
            if h2 < hi:
                hi = h2
        if hi < lo:
            hi = lo
    else:
        hi = v_un
        if p > -kp:
            lo = v_un * (1.0 + np.log1p(p / kp) / gamma)
        else:
            lo = v_un - ((-p) + kp) / ea - 1.0

    v = 0.5 * (lo + hi)
    for _ in range(100):
        arg = gamma * (v - v_un) / v_un
        if arg > 500.0:
            arg = 500.0
        e = np.exp(arg)
        f = ea * (v - v_un) + kp * (e - 1.0) - p
        if np.abs(f) < 1e-10:
            return v, 0
        if f > 0.0:
            hi = v
        else:
            lo = v
        df = ea + kp * gamma * e / v_un
        v_new = v - f / df
        if v_new <= lo or v_new >= hi:
            v_new = 0.5 * (lo + hi)
        v = v_new
    return v, 2


@njit(cache=True)
def ref_drive(t, rp, t_hb):
    """Systolic drive pulse, delayed by the conduction time."""
    tau_d = rp[RP_TAU_D0] * (76.43 / rp[RP_SIGMA_F])
    half = 0.5 * rp[RP_DRIVE_WIDTH]
    tau = (t - tau_d) % t_hb
    return activation_pulse(tau, half, half)


@njit(cache=True)
def ref_act_rhs(s, t, rp, t_hb):
    u = ref_drive(t, rp, t_hb)
    if u > s:
        return (u - s) / rp[RP_TAU_RISE]
    return (u - s) / rp[RP_TAU_FALL]


# ------------------------------------------------------------------- NN kernels

@njit(cache=True)
def nn_forward(x, W1, b1, Wh, bh, W2, b2, n_layers, hcache, y):
    """Fully connected tanh network; caches hidden activations for backprop."""
    if n_layers == 0:
        for i in range(W1.shape[0]):
            acc = b1[i]
            for j in range(W1.shape[1]):
                acc += W1[i, j] * x[j]
            y[i] = acc
        return
    H = W1.shape[0]
    for a in range(H):
        acc = b1[a]
        for j in range(W1.shape[1]):
            acc += W1[a, j] * x[j]
        hcache[0, a] = np.tanh(acc)
    for l in range(1, n_layers):
        for a in range(H):
            acc = bh[l - 1, a]
            for b in range(H):
                acc += Wh[l - 1, a, b] * hcache[l - 1, b]
            hcache[l, a] = np.tanh(acc)
    for i in range(W2.shape[0]):
        acc = b2[i]
        for a in range(H):
            acc += W2[i, a] * hcache[n_layers - 1, a]
        y[i] = acc


@njit(cache=True)
def nn_backprop(x, W1, b1, Wh, bh, W2, b2, n_layers, hcache,
                d_cur, d_prev, dfdx, dfdw):
    """Exact Jacobians of the raw network output wrt inputs and flat weights.

    Fills dfdx (n_out, n_in) and dfdw (n_out, n_weights); requires hcache
    from a preceding nn_forward call at the same x.
    """
    if n_layers == 0:
        n_out = W1.shape[0]
        n_in = W1.shape[1]
        for i in range(n_out):
            for w in range(dfdw.shape[1]):
                dfdw[i, w] = 0.0
            for j in range(n_in):
                dfdx[i, j] = W1[i, j]
                dfdw[i, i * n_in + j] = x[j]
            dfdw[i, n_out * n_in + i] = 1.0
        return
    H = W1.shape[0]
    n_in = W1.shape[1]
    n_out = W2.shape[0]
    off_b1 = H * n_in
    off_hidden = off_b1 + H
    hidden_block = H * H + H
    off_W2 = off_hidden + (n_layers - 1) * hidden_block
    off_b2 = off_W2 + n_out * H
    for i in range(n_out):
        for w in range(dfdw.shape[1]):
            dfdw[i, w] = 0.0
        # output layer
        for a in range(H):
            dfdw[i, off_W2 + i * H + a] = hcache[n_layers - 1, a]
            h = hcache[n_layers - 1, a]
            d_cur[a] = W2[i, a] * (1.0 - h * h)
        dfdw[i, off_b2 + i] = 1.0
        # hidden layers l = n_layers .. 2 (d_cur holds delta of layer l)
        for l in range(n_layers, 1, -1):
            base = off_hidden + (l - 2) * hidden_block
            for a in range(H):
                da = d_cur[a]
                for b in range(H):
                    dfdw[i, base + a * H + b] = da * hcache[l - 2, b]
                dfdw[i, base + H * H + a] = da
            for b in range(H):
                acc = 0.0
                for a in range(H):
                    acc += Wh[l - 2, a, b] * d_cur[a]
                h = hcache[l - 2, b]
                d_prev[b] = acc * (1.0 - h * h)
            for b in range(H):
                d_cur[b] = d_prev[b]
        # input layer
        for a in range(H):
            da = d_cur[a]
            for j in range(n_in):
                dfdw[i, a * n_in + j] = da * x[j]
            dfdw[i, off_b1 + a] = da
        for j in range(n_in):
            acc = 0.0
            for a in range(H):
                acc += W1[a, j] * d_cur[a]
            dfdx[i, j] = acc


@njit(cache=True)
def rom_f(z, p, cs, sn, xbuf, hcache, ybuf, in_c, in_hw, out_scale,
          W1, b1, Wh, bh, W2, b2, n_layers, fout):
    """Surrogate right-hand side dz/dt; xbuf carries pre-normalized theta."""
    nz = z.shape[0]
    for i in range(nz):
        xbuf[i] = (z[i] - in_c[i]) / in_hw[i]
    xbuf[nz] = (p - in_c[nz]) / in_hw[nz]
    xbuf[nz + 1] = cs
    xbuf[nz + 2] = sn
    nn_forward(xbuf, W1, b1, Wh, bh, W2, b2, n_layers, hcache, ybuf)
    for i in range(nz):
        fout[i] = out_scale[i] * ybuf[i]


@njit(cache=True)
def phase_angle(t, t_hb):
    return 2.0 * np.pi * ((t / t_hb) % 1.0)


# ------------------------------------------------- coupled pressure residuals

@njit(cache=True)
def cl_resid_ref(p, c, s_new, dt, t, cp, rp, t_hb, width):
    """Volume-consistency residual for reference ventricle + closed loop."""
    p_la, _, _ = chamber_pressures(c, t, cp, t_hb)
    q_mv = valve_flux(p_la, p, cp[CP_R_MIN], cp[CP_R_MAX], width)
    q_av = valve_flux(p, c[IC_P_AR_SYS], cp[CP_R_MIN], cp[CP_R_MAX], width)
    v_circ = c[IC_V_LV] + dt * (q_mv - q_av)
    v_vent, _ = ref_volume(p, s_new, rp)
    return v_circ - v_vent


@njit(cache=True)
def cl_resid_rom(p, c, z, cs, sn, dt, t, cp, t_hb, width,
                 xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                 W1, b1, Wh, bh, W2, b2, n_layers, fbuf):
    p_la, _, _ = chamber_pressures(c, t, cp, t_hb)
    q_mv = valve_flux(p_la, p, cp[CP_R_MIN], cp[CP_R_MAX], width)
    q_av = valve_flux(p, c[IC_P_AR_SYS], cp[CP_R_MIN], cp[CP_R_MAX], width)
    v_circ = c[IC_V_LV] + dt * (q_mv - q_av)
    rom_f(z, p, cs, sn, xbuf, hcache, ybuf, in_c, in_hw, out_scale,
          W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
    v_vent = z[0] + dt * fbuf[0]
    return v_circ - v_vent


@njit(cache=True)
def _bracket_and_solve_ref(p_start, c, s_new, dt, t, cp, rp, t_hb, width,
                           vol_tol, max_iter, p_lo, p_hi):
    """Solve cl_resid_ref(p) = 0.  Residual is decreasing in p.

    Returns (p, ok).
    """
    p0 = p_start
    if p0 < p_lo:
        p0 = p_lo
    elif p0 > p_hi:
        p0 = p_hi
    f0 = cl_resid_ref(p0, c, s_new, dt, t, cp, rp, t_hb, width)
    if np.abs(f0) < vol_tol:
        return p0, True
    h = 0.25
    if f0 > 0.0:
        a, fa = p0, f0
        b, fb = p0, f0
        while fb > 0.0:
            if b >= p_hi:
                return p0, False
            a, fa = b, fb
            b = min(b + h, p_hi)
            fb = cl_resid_ref(b, c, s_new, dt, t, cp, rp, t_hb, width)
            h *= 2.0
    else:
        b, fb = p0, f0
        a, fa = p0, f0
        while fa < 0.0:
            if a <= p_lo:
                return p0, False
            b, fb = a, fa
            a = max(a - h, p_lo)
            fa = cl_resid_ref(a, c, s_new, dt, t, cp, rp, t_hb, width)
            h *= 2.0
    # Illinois false position on [a, b] with fa >= 0 >= fb
    side = 0
    pm = 0.5 * (a + b)
    for _ in range(max_iter):
        denom = fa - fb
        if denom != 0.0:
            pm = (fa * b - fb * a) / denom
        if not (a < pm < b):
            pm = 0.5 * (a + b)
        fm = cl_resid_ref(pm, c, s_new, dt, t, cp, rp, t_hb, width)
        if np.abs(fm) < vol_tol:
            return pm, True
        if fm > 0.0:
            a, fa = pm, fm
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            b, fb = pm, fm
            if side == -1:
                fa *= 0.5
            side = -1
        if b - a < 1e-13 * (1.0 + np.abs(a)):
            return pm, np.abs(fm) < 1e3 * vol_tol
    return pm, False


@njit(cache=True)
def _bracket_and_solve_rom(p_start, c, z, cs, sn, dt, t, cp, t_hb, width,
                           xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                           W1, b1, Wh, bh, W2, b2, n_layers, fbuf,
                           vol_tol, max_iter, p_lo, p_hi):
    """Same as the reference variant but for the surrogate ventricle.

    On success fbuf holds the surrogate RHS evaluated at the accepted
    pressure, so the caller can advance z without re-evaluating.
    """
    p0 = p_start
    if p0 < p_lo:
        p0 = p_lo
    elif p0 > p_hi:
        p0 = p_hi
    f0 = cl_resid_rom(p0, c, z, cs, sn, dt, t, cp, t_hb, width,
                      xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                      W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
    if np.abs(f0) < vol_tol:
        return p0, True
    h = 0.25
    if f0 > 0.0:
        a, fa = p0, f0
        b, fb = p0, f0
        while fb > 0.0:
            if b >= p_hi:
                return p0, False
            a, fa = b, fb
            b = min(b + h, p_hi)
            fb = cl_resid_rom(b, c, z, cs, sn, dt, t, cp, t_hb, width,
                              xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                              W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
            h *= 2.0
    else:
        b, fb = p0, f0
        a, fa = p0, f0
        while fa < 0.0:
            if a <= p_lo:
                return p0, False
            b, fb = a, fa
            a = max(a - h, p_lo)
            fa = cl_resid_rom(a, c, z, cs, sn, dt, t, cp, t_hb, width,
                              xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                              W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
            h *= 2.0
    side = 0
    pm = 0.5 * (a + b)
    for _ in range(max_iter):
        denom = fa - fb
        if denom != 0.0:
            pm = (fa * b - fb * a) / denom
        if not (a < pm < b):
            pm = 0.5 * (a + b)
        fm = cl_resid_rom(pm, c, z, cs, sn, dt, t, cp, t_hb, width,
                          xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                          W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
        if np.abs(fm) < vol_tol:
            return pm, True
        if fm > 0.0:
            a, fa = pm, fm
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            b, fb = pm, fm
            if side == -1:
                fa *= 0.5
            side = -1
        if b - a < 1e-13 * (1.0 + np.abs(a)):
            return pm, np.abs(fm) < 1e3 * vol_tol
    return pm, False


# ------------------------------------------------------------- coupled runners

@njit(cache=True)
def record_cl_row(rec, row, c, p, t, cp, t_hb):
    p_la, p_ra, p_rv = chamber_pressures(c, t, cp, t_hb)
    rec[row, 0] = t
    rec[row, 1] = c[IC_V_LA]
    rec[row, 2] = c[IC_V_LV]
    rec[row, 3] = c[IC_V_RA]
    rec[row, 4] = c[IC_V_RV]
    rec[row, 5] = p_la
    rec[row, 6] = p
    rec[row, 7] = p_ra
    rec[row, 8] = p_rv
    rec[row, 9] = c[IC_P_AR_SYS]
    rec[row, 10] = c[IC_P_VEN_SYS]
    rec[row, 11] = c[IC_P_AR_PUL]
    rec[row, 12] = c[IC_P_VEN_PUL]
    rec[row, 13] = c[IC_Q_AR_SYS]
    rec[row, 14] = c[IC_Q_VEN_SYS]
    rec[row, 15] = c[IC_Q_AR_PUL]
    rec[row, 16] = c[IC_Q_VEN_PUL]


@njit(cache=True)
def run_cl_ref(c, s, p, t0, dt, n_steps, rec_every, cp, rp, t_hb, width,
               vol_tol, max_iter, p_lo, p_hi, rec):
    """Advance the reference ventricle + closed loop by n_steps Euler steps.

    Records post-step rows every rec_every steps.  Returns
    (s, p, status, failing_step); status 0 ok, 1 pressure solve failed,
    2 non-finite state.
    """
    dc = np.empty(N_STATE)
    row = 0
    t = t0
    for k in range(n_steps):
        s_new = s + dt * ref_act_rhs(s, t, rp, t_hb)
        if s_new < 0.0:
            s_new = 0.0
        elif s_new > 1.0:
            s_new = 1.0
        p_new, ok = _bracket_and_solve_ref(
            p, c, s_new, dt, t, cp, rp, t_hb, width,
            vol_tol, max_iter, p_lo, p_hi)
        if not ok:
            return s, p, 1, k
        circ_rhs_kernel(c, p_new, t, cp, t_hb, width, dc)
        for i in range(N_STATE):
            c[i] += dt * dc[i]
            if not np.isfinite(c[i]):
                return s, p, 2, k
        s = s_new
        p = p_new
        t = t0 + (k + 1) * dt
        if rec_every > 0 and (k + 1) % rec_every == 0:
            record_cl_row(rec, row, c, p, t, cp, t_hb)
            row += 1
    return s, p, 0, -1


@njit(cache=True)
def run_cl_rom(c, z, p, t0, dt, n_steps, rec_every, cp, t_hb, width,
               in_c, in_hw, out_scale, xtheta,
               W1, b1, Wh, bh, W2, b2, n_layers,
               vol_tol, max_iter, p_lo, p_hi, rec):
    """Advance the surrogate ventricle + closed loop by n_steps Euler steps."""
    nz = z.shape[0]
    n_in = in_c.shape[0]
    dc = np.empty(N_STATE)
    xbuf = np.empty(n_in)
    for j in range(xtheta.shape[0]):
        xbuf[nz + 3 + j] = xtheta[j]
    n_h = W1.shape[0] if n_layers > 0 else 1
    hcache = np.empty((max(n_layers, 1), n_h))
    ybuf = np.empty(nz)
    fbuf = np.empty(nz)
    row = 0
    t = t0
    for k in range(n_steps):
        ang = phase_angle(t, t_hb)
        cs = np.cos(ang)
        sn = np.sin(ang)
        p_new, ok = _bracket_and_solve_rom(
            p, c, z, cs, sn, dt, t, cp, t_hb, width,
            xbuf, hcache, ybuf, in_c, in_hw, out_scale,
            W1, b1, Wh, bh, W2, b2, n_layers, fbuf,
            vol_tol, max_iter, p_lo, p_hi)
        if not ok:
            return z, p, 1, k
        # fbuf holds the RHS at the accepted pressure
        circ_rhs_kernel(c, p_new, t, cp, t_hb, width, dc)
        for i in range(N_STATE):
            c[i] += dt * dc[i]
            if not np.isfinite(c[i]):
                return z, p, 2, k
        for i in range(nz):
            z[i] += dt * fbuf[i]
            if not np.isfinite(z[i]):
                return z, p, 2, k
        p = p_new
        t = t0 + (k + 1) * dt
        if rec_every > 0 and (k + 1) % rec_every == 0:
            record_cl_row(rec, row, c, p, t, cp, t_hb)
            row += 1
    return z, p, 0, -1


@njit(cache=True)
def run_wk_ref(s, p, v_cur, v_prev, v_hold, phase, t0, dt, n_steps, rec_every,
               wp, rp, t_hb, rec):
    """Reference ventricle driven by the phase-based afterload/preload closure.

    Returns (s, p, v_cur, v_prev, v_hold, phase, status, failing_step).
    """
    row = 0
    t = t0
    for k in range(n_steps):
        s_new = s + dt * ref_act_rhs(s, t, rp, t_hb)
        if s_new < 0.0:
            s_new = 0.0
        elif s_new > 1.0:
            s_new = 1.0
        if phase == PHASE_FILLING:
            p_try = p + dt * wp[WP_RAMP]
            v_try, st = ref_volume(p_try, s_new, rp)
            if st != 0:
                return s, p, v_cur, v_prev, v_hold, phase, 1, k
            if v_try >= v_cur:
                p_new, v_new = p_try, v_try
            else:
                phase = PHASE_ISOVOLUMIC
                v_hold = v_cur
                p_new = ref_pressure(v_hold, s_new, rp)
                v_new = v_hold
        elif phase == PHASE_ISOVOLUMIC:
            p_new = ref_pressure(v_hold, s_new, rp)
            v_new = v_hold
            if p_new >= wp[WP_P_OPEN]:
                phase = PHASE_EJECTION
            elif p_new <= wp[WP_P_FILL]:
                phase = PHASE_FILLING
        else:  # ejection
            dvdt = (v_cur - v_prev) / dt
            p_new = p + dt * (-dvdt - p / wp[WP_R]) / wp[WP_C]
            v_new, st = ref_volume(p_new, s_new, rp)
            if st != 0:
                return s, p, v_cur, v_prev, v_hold, phase, 1, k
            if v_new >= v_cur:
                phase = PHASE_ISOVOLUMIC
                v_hold = v_cur
                p_new = ref_pressure(v_hold, s_new, rp)
                v_new = v_hold
        if not (np.isfinite(p_new) and np.isfinite(v_new)):
            return s, p, v_cur, v_prev, v_hold, phase, 2, k
        v_prev = v_cur
        v_cur = v_new
        p = p_new
        s = s_new
        t = t0 + (k + 1) * dt
        if rec_every > 0 and (k + 1) % rec_every == 0:
            rec[row, 0] = t
            rec[row, 1] = v_cur
            rec[row, 2] = p
            rec[row, 3] = phase
            row += 1
    return s, p, v_cur, v_prev, v_hold, phase, 0, -1


@njit(cache=True)
def _wk_rom_resid(p, z, v_hold, cs, sn, dt,
                  xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                  W1, b1, Wh, bh, W2, b2, n_layers, fbuf):
    rom_f(z, p, cs, sn, xbuf, hcache, ybuf, in_c, in_hw, out_scale,
          W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
    return z[0] + dt * fbuf[0] - v_hold


@njit(cache=True)
def run_wk_rom(z, p, v_prev, v_hold, phase, t0, dt, n_steps, rec_every,
               wp, t_hb, in_c, in_hw, out_scale, xtheta,
               W1, b1, Wh, bh, W2, b2, n_layers,
               vol_tol, max_iter, p_lo, p_hi, rec):
    """Surrogate ventricle driven by the phase-based closure."""
    nz = z.shape[0]
    n_in = in_c.shape[0]
    xbuf = np.empty(n_in)
    for j in range(xtheta.shape[0]):
        xbuf[nz + 3 + j] = xtheta[j]
    n_h = W1.shape[0] if n_layers > 0 else 1
    hcache = np.empty((max(n_layers, 1), n_h))
    ybuf = np.empty(nz)
    fbuf = np.empty(nz)
    row = 0
    t = t0
    v_cur = z[0]
    for k in range(n_steps):
        ang = phase_angle(t, t_hb)
        cs = np.cos(ang)
        sn = np.sin(ang)
        if phase == PHASE_FILLING:
            rom_f(z, p, cs, sn, xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                  W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
            for i in range(nz):
                z[i] += dt * fbuf[i]
            v_new = z[0]
            p_new = p + dt * wp[WP_RAMP]
            if v_new < v_cur:
                phase = PHASE_ISOVOLUMIC
                v_hold = v_new
                p_new = p
        elif phase == PHASE_ISOVOLUMIC:
            # solve p so the surrogate volume stays at v_hold
            f0 = _wk_rom_resid(p, z, v_hold, cs, sn, dt,
                               xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                               W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
            p_new = p
            if np.abs(f0) >= vol_tol:
                h = 0.25
                if f0 > 0.0:
                    a, fa = p, f0
                    b, fb = p, f0
                    while fb > 0.0:
                        if b >= p_hi:
                            return z, p, v_prev, v_hold, phase, 1, k
                        a, fa = b, fb
                        b = min(b + h, p_hi)
                        fb = _wk_rom_resid(b, z, v_hold, cs, sn, dt,
                                           xbuf, hcache, ybuf, in_c, in_hw,
                                           out_scale, W1, b1, Wh, bh, W2, b2,
                                           n_layers, fbuf)
                        h *= 2.0
                else:
                    b, fb = p, f0
                    a, fa = p, f0
                    while fa < 0.0:
                        if a <= p_lo:
                            return z, p, v_prev, v_hold, phase, 1, k
                        b, fb = a, fa
                        a = max(a - h, p_lo)
                        fa = _wk_rom_resid(a, z, v_hold, cs, sn, dt,
                                           xbuf, hcache, ybuf, in_c, in_hw,
                                           out_scale, W1, b1, Wh, bh, W2, b2,
                                           n_layers, fbuf)
                        h *= 2.0
                side = 0
                pm = 0.5 * (a + b)
                ok = False
                for _ in range(max_iter):
                    denom = fa - fb
                    if denom != 0.0:
                        pm = (fa * b - fb * a) / denom
                    if not (a < pm < b):
                        pm = 0.5 * (a + b)
                    fm = _wk_rom_resid(pm, z, v_hold, cs, sn, dt,
                                       xbuf, hcache, ybuf, in_c, in_hw,
                                       out_scale, W1, b1, Wh, bh, W2, b2,
                                       n_layers, fbuf)
                    if np.abs(fm) < vol_tol:
                        ok = True
                        break
                    if fm > 0.0:
                        a, fa = pm, fm
                        if side == 1:
                            fb *= 0.5
                        side = 1
                    else:
                        b, fb = pm, fm
                        if side == -1:
                            fa *= 0.5
                        side = -1
                    if b - a < 1e-13 * (1.0 + np.abs(a)):
                        ok = np.abs(fm) < 1e3 * vol_tol
                        break
                if not ok:
                    return z, p, v_prev, v_hold, phase, 1, k
                p_new = pm
            for i in range(nz):
                z[i] += dt * fbuf[i]
            v_new = z[0]
            if p_new >= wp[WP_P_OPEN]:
                phase = PHASE_EJECTION
            elif p_new <= wp[WP_P_FILL]:
                phase = PHASE_FILLING
        else:  # ejection
            rom_f(z, p, cs, sn, xbuf, hcache, ybuf, in_c, in_hw, out_scale,
                  W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
            dvdt = fbuf[0]
            for i in range(nz):
                z[i] += dt * fbuf[i]
            v_new = z[0]
            p_new = p + dt * (-dvdt - p / wp[WP_R]) / wp[WP_C]
            if v_new >= v_cur:
                phase = PHASE_ISOVOLUMIC
                v_hold = v_new
        finite = np.isfinite(p_new)
        for i in range(nz):
            finite = finite and np.isfinite(z[i])
        if not finite:
            return z, p, v_prev, v_hold, phase, 2, k
        v_prev = v_cur
        v_cur = v_new
        p = p_new
        t = t0 + (k + 1) * dt
        if rec_every > 0 and (k + 1) % rec_every == 0:
            rec[row, 0] = t
            rec[row, 1] = v_cur
            rec[row, 2] = p
            rec[row, 3] = phase
            row += 1
    return z, p, v_prev, v_hold, phase, 0, -1


# -------------------------------------------------------------- ROM open loop

@njit(cache=True)
def rom_open_loop(z0, p_steps, cs_steps, sn_steps, xtheta, n_steps, dt,
                  in_c, in_hw, out_scale, W1, b1, Wh, bh, W2, b2, n_layers,
                  z_traj):
    """Forward Euler on the surrogate driven by a prescribed pressure series.

    z_traj must have shape (n_steps + 1, n_z).  Returns (status, step):
    status 0 ok, 1 non-finite state at the given step.
    """
    nz = z0.shape[0]
    n_in = in_c.shape[0]
    xbuf = np.empty(n_in)
    for j in range(xtheta.shape[0]):
        xbuf[nz + 3 + j] = xtheta[j]
    n_h = W1.shape[0] if n_layers > 0 else 1
    hcache = np.empty((max(n_layers, 1), n_h))
    ybuf = np.empty(nz)
    fbuf = np.empty(nz)
    z = z0.copy()
    for i in range(nz):
        z_traj[0, i] = z[i]
    for k in range(n_steps):
        rom_f(z, p_steps[k], cs_steps[k], sn_steps[k], xbuf, hcache, ybuf,
              in_c, in_hw, out_scale, W1, b1, Wh, bh, W2, b2, n_layers, fbuf)
        for i in range(nz):
            z[i] += dt * fbuf[i]
            if not np.isfinite(z[i]):
                return 1, k
            z_traj[k + 1, i] = z[i]
    return 0, -1


@njit(cache=True)
def rom_traj_res_jac(z0, p_steps, cs_steps, sn_steps, xtheta, n_steps, dt,
                     in_c, in_hw, out_scale, W1, b1, Wh, bh, W2, b2, n_layers,
                     quad_step_idx, sqrt_w, v_quad, r_out, J_out):
    """Residuals and exact weight Jacobian of the discrete training trajectory.

    Propagates the tangent S = dz/dw through the forward-Euler recursion and
    records sqrt_w * (z1 - v_data) and sqrt_w * S[0, :] at the quadrature
    nodes (given as step indices).  Returns (status, step).
    """
    nz = z0.shape[0]
    n_in = in_c.shape[0]
    n_w = J_out.shape[1]
    xbuf = np.empty(n_in)
    for j in range(xtheta.shape[0]):
        xbuf[nz + 3 + j] = xtheta[j]
    n_h = W1.shape[0] if n_layers > 0 else 1
    hcache = np.empty((max(n_layers, 1), n_h))
    ybuf = np.empty(nz)
    dfdx = np.empty((nz, n_in))
    dfdw = np.empty((nz, n_w))
    dfdz = np.empty((nz, nz))
    d_cur = np.empty(n_h)
    d_prev = np.empty(n_h)
    S = np.zeros((nz, n_w))
    S_new = np.empty((nz, n_w))
    z = z0.copy()
    iq = 0
    n_quad = quad_step_idx.shape[0]
    for k in range(n_steps + 1):
        if iq < n_quad and quad_step_idx[iq] == k:
            r_out[iq] = sqrt_w[iq] * (z[0] - v_quad[iq])
            for w in range(n_w):
                J_out[iq, w] = sqrt_w[iq] * S[0, w]
            iq += 1
        if k == n_steps:
            break
        for i in range(nz):
            xbuf[i] = (z[i] - in_c[i]) / in_hw[i]
        xbuf[nz] = (p_steps[k] - in_c[nz]) / in_hw[nz]
        xbuf[nz + 1] = cs_steps[k]
        xbuf[nz + 2] = sn_steps[k]
        nn_forward(xbuf, W1, b1, Wh, bh, W2, b2, n_layers, hcache, ybuf)
        nn_backprop(xbuf, W1, b1, Wh, bh, W2, b2, n_layers, hcache,
                    d_cur, d_prev, dfdx, dfdw)
        for i in range(nz):
            for j in range(nz):
                dfdz[i, j] = out_scale[i] * dfdx[i, j] / in_hw[j]
        for i in range(nz):
            osc = out_scale[i]
            for w in range(n_w):
                acc = osc * dfdw[i, w]
                for j in range(nz):
                    acc += dfdz[i, j] * S[j, w]
                S_new[i, w] = S[i, w] + dt * acc
        for i in range(nz):
            z[i] += dt * out_scale[i] * ybuf[i]
            if not np.isfinite(z[i]):
                return 1, k
        tmp = S
        S = S_new
        S_new = tmp
    return 0, -1
