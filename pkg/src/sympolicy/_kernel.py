"""Compiled closed-loop simulation for symbolic and neural-ODE policies.

The loop mirrors :func:`sympolicy.simulate.simulate_batch` step for step; the
Python version is the reference, this one is what the optimisers call.
Trees are interpreted from postfix programs, one instruction at a time across
all still-running trials of the batch.
"""

import math

import numpy as np
from numba import njit

BIG = 1e100
EPS = 1e-9

POL_STATIC, POL_DYNAMIC, POL_NDE = 0, 1, 2
FIT_QUADRATIC, FIT_SWING = 0, 1
ST_RUNNING, ST_SUCCESS, ST_ABORT, ST_NONFINITE = 0, 1, 2, 3


@njit(cache=True, inline="always")
def _sat(v):
    if v > BIG:
        return BIG
    if v < -BIG:
        return -BIG
    return v


@njit(cache=True, inline="always")
def _sign(v):
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0 * v


@njit(cache=True)
def run_program(ops, args, start, stop, z, idx, n_act, stack, out, col):
    """Evaluate one postfix program for trials ``idx[:n_act]`` into ``out[b, col]``."""
    sp = 0
    for k in range(start, stop):
        op = ops[k]
        if op == 0:
            c = args[k]
            for q in range(n_act):
                stack[sp, q] = c
            sp += 1
        elif op == 1:
            s = int(args[k])
            for q in range(n_act):
                stack[sp, q] = _sat(z[idx[q], s])
            sp += 1
        elif op <= 6:
            sp -= 1
            if op == 2:
                for q in range(n_act):
                    stack[sp - 1, q] = _sat(stack[sp - 1, q] + stack[sp, q])
            elif op == 3:
                for q in range(n_act):
                    stack[sp - 1, q] = _sat(stack[sp - 1, q] - stack[sp, q])
            elif op == 4:
                for q in range(n_act):
                    stack[sp - 1, q] = _sat(stack[sp - 1, q] * stack[sp, q])
            elif op == 5:
                for q in range(n_act):
                    a = stack[sp - 1, q]
                    b = stack[sp, q]
                    if abs(b) < EPS:
                        r = a * _sign(b) / EPS
                    else:
                        r = a / b
                    stack[sp - 1, q] = _sat(r)
            else:
                for q in range(n_act):
                    a = stack[sp - 1, q]
                    e = stack[sp, q]
                    if e > 5.0:
                        e = 5.0
                    elif e < -5.0:
                        e = -5.0
                    m = abs(a)
                    if e < 0.0 and m < EPS:
                        m = EPS
                    stack[sp - 1, q] = _sat(_sign(a) * m**e)
        elif op == 7:
            for q in range(n_act):
                stack[sp - 1, q] = math.sin(stack[sp - 1, q])
        elif op == 8:
            for q in range(n_act):
                stack[sp - 1, q] = math.cos(stack[sp - 1, q])
        elif op == 9:
            for q in range(n_act):
                v = stack[sp - 1, q]
                if v > 50.0:
                    v = 50.0
                elif v < -50.0:
                    v = -50.0
                stack[sp - 1, q] = _sat(math.exp(v))
        else:
            for q in range(n_act):
                stack[sp - 1, q] = _sat(math.log(abs(stack[sp - 1, q]) + EPS))
    for q in range(n_act):
        out[idx[q], col] = stack[0, q]


@njit(cache=True)
def _drift(env, p, x, u, f):
    if env == 0:
        f[0] = x[1]
        f[1] = -p[0] * x[0] - p[1] * x[1] + u[0]
    elif env == 1:
        m1, m2, l1, l2, lc1, lc2, I1, I2, g = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]
        th1, th2, dth1, dth2 = x[0], x[1], x[2], x[3]
        c2 = math.cos(th2)
        s2 = math.sin(th2)
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * c2) + I1 + I2
        d2 = m2 * (lc2**2 + l1 * lc2 * c2) + I2
        phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2)
        phi1 = (
            -m2 * l1 * lc2 * dth2**2 * s2
            - 2 * m2 * l1 * lc2 * dth2 * dth1 * s2
            + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2)
            + phi2
        )
        denom = m2 * lc2**2 + I2 - d2**2 / d1
        ddth2 = (u[0] + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1**2 * s2 - phi2) / denom
        if p[9] > 0.5:
            ddth1 = (u[1] - d2 * ddth2 - phi1) / d1
        else:
            ddth1 = -(d2 * ddth2 + phi1) / d1
        f[0] = dth1
        f[1] = dth2
        f[2] = ddth1
        f[3] = ddth2


@njit(cache=True)
def _cstr_next(p, x, u, dt, out):
    """Deterministic reactor step; see ``environments.cstr_step``."""
    q_r, c_f, T_f, T_cf, V_r, V_c = p[0], p[1], p[2], p[3], p[4], p[5]
    dH, rho, C_p, UA, k0, E, R, sgn = p[6], p[7], p[8], p[9], p[10], p[11], p[12], p[13]
    c, T_r, T_c = x[0], x[1], x[2]
    q_c = u[0]
    if q_c < 0.0:
        q_c = 0.0
    elif q_c > 300.0:
        q_c = 300.0
    k = k0 * math.exp(-E / (R * max(T_r, 1.0)))
    flow = q_r / V_r
    exchange = UA / (rho * C_p * V_r)
    if sgn < 0:
        lam = flow + k
        c_inf = flow * c_f / lam
        decay = math.exp(-lam * dt)
        c_new = c_inf + (c - c_inf) * decay
        reacted = k * (c_inf * dt + (c - c_inf) * (-math.expm1(-lam * dt)) / lam)
    else:
        c_new = c + (flow * (c_f - c) + k * c) * dt
        reacted = k * c * dt
    out[0] = c_new
    out[1] = T_r + (flow * (T_f - T_r) + exchange * (T_c - T_r)) * dt + (-dH) / (rho * C_p) * reacted
    out[2] = T_c + (q_c / V_c * (T_cf - T_c) + exchange * (T_r - T_c)) * dt


@njit(cache=True)
def _wrap(v):
    return (v + math.pi) % (2 * math.pi) - math.pi


@njit(cache=True, nogil=True)
def run_batch(
    env, params, x0, target, xstar, dW, xi, V, D, sig_std, wrap, u_lo, u_hi, dt, n_steps,
    pol_kind, H, C, ops, args, starts, nde_A, nde_B,
    fit_kind, Q, r, target_height, floor,
):
    """Simulate every trial of a batch; returns per-trial (fitness, status, final time).

    The swing-up fitness counts time in steps: ``-f - sum u'Ru``.
    """
    B, N = x0.shape
    M = D.shape[0]
    P = xstar.shape[1]
    K = V.shape[1]
    nz = H + M + C + P
    x = x0.copy()
    # z columns: latent a, observation y, previous control, visible target
    z = np.zeros((B, nz))
    for b in range(B):
        for j in range(P):
            z[b, H + M + C + j] = xstar[b, j]
    u = np.zeros((B, C))
    da = np.zeros((B, max(H, 1)))
    cost = np.zeros(B)
    status = np.zeros(B, dtype=np.int64)
    t_final = np.full(B, n_steps * dt)
    f_step = np.full(B, n_steps)
    idx = np.arange(B)
    n_act = B
    stack = np.zeros((64, B))
    f = np.zeros(N)
    xb = np.zeros(N)
    ub = np.zeros(C)
    clip = u_lo[0] > -np.inf or u_hi[0] < np.inf

    for i in range(n_steps + 1):
        # observe
        for q in range(n_act):
            b = idx[q]
            for m in range(M):
                acc = 0.0
                for n in range(N):
                    acc += D[m, n] * x[b, n]
                v = acc + sig_std[m] * xi[b, i, m]
                if wrap[m]:
                    v = _wrap(v)
                z[b, H + m] = v
        # readout
        if pol_kind == 2:
            for q in range(n_act):
                b = idx[q]
                for c in range(C):
                    acc = 0.0
                    for h in range(H):
                        acc += nde_B[c, h] * z[b, h]
                    for j in range(P):
                        acc += nde_B[c, H + j] * z[b, H + M + C + j]
                    acc += nde_B[c, H + P]
                    u[b, c] = acc
        else:
            first = H if pol_kind == 1 else 0
            for c in range(C):
                run_program(ops, args, starts[first + c], starts[first + c + 1], z, idx, n_act, stack, u, c)
        if clip:
            for q in range(n_act):
                b = idx[q]
                for c in range(C):
                    if u[b, c] < u_lo[c]:
                        u[b, c] = u_lo[c]
                    elif u[b, c] > u_hi[c]:
                        u[b, c] = u_hi[c]
        # cost and termination on the current state
        changed = False
        for q in range(n_act):
            b = idx[q]
            s = 0.0
            if fit_kind == 0:
                for n in range(N):
                    en = x[b, n] - target[b, n]
                    for m in range(N):
                        s += en * Q[n, m] * (x[b, m] - target[b, m])
            for c in range(C):
                s += r[c] * u[b, c] * u[b, c]
            cost[b] += s
            if not math.isfinite(cost[b]):
                status[b] = 3
                changed = True
            elif env == 1:
                height = -math.cos(x[b, 0]) - math.cos(x[b, 0] + x[b, 1])
                if height > target_height:
                    status[b] = 1
                    t_final[b] = i * dt
                    f_step[b] = i
                    changed = True
                elif abs(x[b, 2]) > 8 * math.pi or abs(x[b, 3]) > 18 * math.pi:
                    status[b] = 2
                    changed = True
        if changed:
            k = 0
            for q in range(n_act):
                if status[idx[q]] == 0:
                    idx[k] = idx[q]
                    k += 1
            n_act = k
        if n_act == 0 or i == n_steps:
            break
        # latent derivative with the previous control
        if pol_kind == 1:
            for h in range(H):
                run_program(ops, args, starts[h], starts[h + 1], z, idx, n_act, stack, da, h)
        elif pol_kind == 2:
            for q in range(n_act):
                b = idx[q]
                for h in range(H):
                    acc = 0.0
                    for j in range(nz):
                        acc += nde_A[h, j] * z[b, j]
                    acc += nde_A[h, nz]
                    da[b, h] = math.tanh(acc)
        # advance environment and latent state
        changed = False
        for q in range(n_act):
            b = idx[q]
            for n in range(N):
                xb[n] = x[b, n]
            for c in range(C):
                ub[c] = u[b, c]
            if env == 2:
                _cstr_next(params[b], xb, ub, dt, f)
            else:
                _drift(env, params[b], xb, ub, f)
                for n in range(N):
                    f[n] = xb[n] + f[n] * dt
            ok = True
            for n in range(N):
                noise = 0.0
                for kk in range(K):
                    noise += V[n, kk] * dW[b, i, kk]
                v = f[n] + noise
                x[b, n] = v
                if not math.isfinite(v):
                    ok = False
            if pol_kind != 0:
                for h in range(H):
                    v = z[b, h] + da[b, h] * dt
                    z[b, h] = v
                    if not math.isfinite(v):
                        ok = False
            for c in range(C):
                z[b, H + M + c] = u[b, c]
            if not ok:
                status[b] = 3
                changed = True
        if changed:
            k = 0
            for q in range(n_act):
                if status[idx[q]] == 0:
                    idx[k] = idx[q]
                    k += 1
            n_act = k
            if n_act == 0:
                break

    fitness = np.empty(B)
    for b in range(B):
        if status[b] == 3:
            fitness[b] = floor
        elif fit_kind == 0:
            fitness[b] = -cost[b]
        else:
            fitness[b] = -f_step[b] - cost[b]
    return fitness, status, t_final
