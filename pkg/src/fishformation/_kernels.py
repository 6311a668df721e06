"""Compiled inner loops shared by the CPG, swimmer and rollout code.

All arrays are float64 and modified in place. The Python wrappers in
``cpg`` and ``swimmer`` are thin; rollouts call :func:`advance_tick` directly
so both paths run the exact same arithmetic.
"""

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi

# status codes returned by the body kernel
OK = 0
NONFINITE = 1
NO_CONVERGENCE = 2

PROJECTION_TOL = 1e-9
PROJECTION_MAX_ITERS = 20


@njit(cache=True, nogil=True)
def cpg_substep(theta, r, rdot, x, freq, amp, coupling, bias, gain, sigma,
                torque_limit, dt, torque):
    n = theta.shape[0]
    dtheta = np.empty(n)
    for i in range(n):
        acc = TWO_PI * freq
        if i > 0:
            acc += coupling * np.sin(theta[i - 1] - theta[i] + bias)
        if i < n - 1:
            acc += coupling * np.sin(theta[i + 1] - theta[i] - bias)
        dtheta[i] = acc
    for i in range(n):
        theta[i] += dt * dtheta[i]
        rddot = gain * (0.25 * gain * (amp[i] - r[i]) - rdot[i])
        r[i] += dt * rdot[i]
        rdot[i] += dt * rddot
        x[i] += dt * gain * (sigma * amp[i] - x[i])
        tau = x[i] + r[i] * np.cos(theta[i])
        if tau > torque_limit:
            tau = torque_limit
        elif tau < -torque_limit:
            tau = -torque_limit
        torque[i] = tau


@njit(cache=True, nogil=True)
def _joint_residual(pos, th, half, res):
    n = th.shape[0]
    worst = 0.0
    for j in range(n - 1):
        cx = (pos[j, 0] - half * np.cos(th[j])) - (pos[j + 1, 0] + half * np.cos(th[j + 1]))
        cy = (pos[j, 1] - half * np.sin(th[j])) - (pos[j + 1, 1] + half * np.sin(th[j + 1]))
        res[2 * j] = cx
        res[2 * j + 1] = cy
        a = max(abs(cx), abs(cy))
        if a > worst:
            worst = a
    return worst


@njit(cache=True, nogil=True)
def _constraint_system(th, half, mass, inertia):
    """Jacobian rows and J M^-1 J^T for the pin joints of the chain."""
    n = th.shape[0]
    m = 2 * (n - 1)
    jac = np.zeros((m, 3 * n))
    for j in range(n - 1):
        # d/dt of  p_j - half t_j - p_{j+1} - half t_{j+1}
        nxj = -np.sin(th[j])
        nyj = np.cos(th[j])
        nxk = -np.sin(th[j + 1])
        nyk = np.cos(th[j + 1])
        r0 = 2 * j
        jac[r0, 3 * j] = 1.0
        jac[r0 + 1, 3 * j + 1] = 1.0
        jac[r0, 3 * j + 2] = -half * nxj
        jac[r0 + 1, 3 * j + 2] = -half * nyj
        jac[r0, 3 * (j + 1)] = -1.0
        jac[r0 + 1, 3 * (j + 1) + 1] = -1.0
        jac[r0, 3 * (j + 1) + 2] = -half * nxk
        jac[r0 + 1, 3 * (j + 1) + 2] = -half * nyk
    minv = np.empty(3 * n)
    for i in range(n):
        minv[3 * i] = 1.0 / mass
        minv[3 * i + 1] = 1.0 / mass
        minv[3 * i + 2] = 1.0 / inertia
    a = np.zeros((m, m))
    for p in range(m):
        for q in range(m):
            s = 0.0
            for c in range(3 * n):
                s += jac[p, c] * minv[c] * jac[q, c]
            a[p, q] = s
    return jac, minv, a


@njit(cache=True, nogil=True)
def body_substep(pos, th, vel, om, tau, link_length, mass, inertia,
                 drag_n, drag_t, drag_rot, stiffness, damping, dt):
    """One semi-implicit step of the pinned link chain.

    Joint j connects the tail end of link j to the head end of link j+1.
    Positive joint torque rotates link j counter-clockwise relative to j+1.
    """
    n = th.shape[0]
    half = 0.5 * link_length

    # joint torques (actuation + passive spring/damper)
    ext = np.zeros(n)
    for j in range(n - 1):
        q = th[j] - th[j + 1]
        q = np.arctan2(np.sin(q), np.cos(q))
        t = tau[j] - stiffness * q - damping * (om[j] - om[j + 1])
        ext[j] += t
        ext[j + 1] -= t

    # drag is integrated implicitly per link in its own frame
    ln = link_length
    for i in range(n):
        c = np.cos(th[i])
        s = np.sin(th[i])
        vt = vel[i, 0] * c + vel[i, 1] * s
        vn = -vel[i, 0] * s + vel[i, 1] * c
        vt = mass * vt / (mass + dt * drag_t * ln)
        vn = mass * vn / (mass + dt * drag_n * ln)
        vel[i, 0] = vt * c - vn * s
        vel[i, 1] = vt * s + vn * c
        om[i] = (inertia * om[i] + dt * ext[i]) / (inertia + dt * drag_rot)

    # velocity projection onto the constraint tangent space (mass metric)
    jac, minv, a = _constraint_system(th, half, mass, inertia)
    m = jac.shape[0]
    rhs = np.zeros(m)
    for p in range(m):
        s = 0.0
        for i in range(n):
            s += jac[p, 3 * i] * vel[i, 0] + jac[p, 3 * i + 1] * vel[i, 1] + jac[p, 3 * i + 2] * om[i]
        rhs[p] = -s
    lam = np.linalg.solve(a, rhs)
    for i in range(n):
        dvx = 0.0
        dvy = 0.0
        dw = 0.0
        for p in range(m):
            dvx += jac[p, 3 * i] * lam[p]
            dvy += jac[p, 3 * i + 1] * lam[p]
            dw += jac[p, 3 * i + 2] * lam[p]
        vel[i, 0] += minv[3 * i] * dvx
        vel[i, 1] += minv[3 * i + 1] * dvy
        om[i] += minv[3 * i + 2] * dw

    for i in range(n):
        pos[i, 0] += dt * vel[i, 0]
        pos[i, 1] += dt * vel[i, 1]
        th[i] += dt * om[i]

    # position projection (Newton on the pin constraints)
    res = np.zeros(m)
    worst = _joint_residual(pos, th, half, res)
    it = 0
    while worst > PROJECTION_TOL:
        if it >= PROJECTION_MAX_ITERS or not np.isfinite(worst):
            return NO_CONVERGENCE
        jac, minv, a = _constraint_system(th, half, mass, inertia)
        lam = np.linalg.solve(a, -res)
        for i in range(n):
            dx = 0.0
            dy = 0.0
            dw = 0.0
            for p in range(m):
                dx += jac[p, 3 * i] * lam[p]
                dy += jac[p, 3 * i + 1] * lam[p]
                dw += jac[p, 3 * i + 2] * lam[p]
            pos[i, 0] += minv[3 * i] * dx
            pos[i, 1] += minv[3 * i + 1] * dy
            th[i] += minv[3 * i + 2] * dw
        worst = _joint_residual(pos, th, half, res)
        it += 1

    for i in range(n):
        if th[i] > np.pi or th[i] <= -np.pi:
            th[i] = np.arctan2(np.sin(th[i]), np.cos(th[i]))
        if not (np.isfinite(pos[i, 0]) and np.isfinite(pos[i, 1]) and np.isfinite(om[i])
                and np.isfinite(vel[i, 0]) and np.isfinite(vel[i, 1])):
            return NONFINITE
    return OK


@njit(cache=True, nogil=True)
def advance_tick(theta, r, rdot, x, freq, amp, coupling, bias, gain, sigma,
                 torque_limit, active, pos, th, vel, om, link_length, mass,
                 inertia, drag_n, drag_t, drag_rot, stiffness, damping, dt,
                 n_sub, torque):
    """Run ``n_sub`` fused CPG + body substeps. Inactive robots hold zero torque."""
    for _ in range(n_sub):
        if active:
            cpg_substep(theta, r, rdot, x, freq, amp, coupling, bias, gain,
                        sigma, torque_limit, dt, torque)
        else:
            for i in range(torque.shape[0]):
                torque[i] = 0.0
        status = body_substep(pos, th, vel, om, torque, link_length, mass,
                              inertia, drag_n, drag_t, drag_rot, stiffness,
                              damping, dt)
        if status != OK:
            return status
    return OK


@njit(cache=True, nogil=True)
def segment_distance(p1x, p1y, q1x, q1y, p2x, p2y, q2x, q2y):
    """Minimum distance between two 2D segments (closest-point clamping)."""
    d1x = q1x - p1x
    d1y = q1y - p1y
    d2x = q2x - p2x
    d2y = q2y - p2y
    rx = p1x - p2x
    ry = p1y - p2y
    a = d1x * d1x + d1y * d1y
    e = d2x * d2x + d2y * d2y
    f = d2x * rx + d2y * ry
    if a <= 1e-30 and e <= 1e-30:
        return np.sqrt(rx * rx + ry * ry)
    if a <= 1e-30:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = d1x * rx + d1y * ry
        if e <= 1e-30:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = d1x * d2x + d1y * d2y
            denom = a * e - b * b
            if denom > 1e-12 * a * e:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    dx = p1x + d1x * s - (p2x + d2x * t)
    dy = p1y + d1y * s - (p2y + d2y * t)
    return np.sqrt(dx * dx + dy * dy)


@njit(cache=True, nogil=True)
def min_segment_distance(fa, ra, fb, rb):
    best = np.inf
    for i in range(fa.shape[0]):
        for j in range(fb.shape[0]):
            d = segment_distance(fa[i, 0], fa[i, 1], ra[i, 0], ra[i, 1],
                                 fb[j, 0], fb[j, 1], rb[j, 0], rb[j, 1])
            if d < best:
                best = d
    return best


@njit(cache=True, nogil=True)
def lstm_backward(dh_head, gates, cs, wh, dz):
    """Backward pass through the LSTM recurrence.

    ``dh_head`` (T, B, H) is the loss gradient reaching each hidden state from
    the dense head; ``gates`` holds the activated i, f, g, o blocks and
    ``cs[t + 1]`` the cell after step t. Fills ``dz`` with gate pre-activation
    gradients.
    """
    T, B, H = dh_head.shape
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                i = gates[t, b, j]
                f = gates[t, b, H + j]
                g = gates[t, b, 2 * H + j]
                o = gates[t, b, 3 * H + j]
                dh = dh_head[t, b, j] + dh_next[b, j]
                tc = np.tanh(cs[t + 1, b, j])
                dc = dh * o * (1.0 - tc * tc) + dc_next[b, j]
                dz[t, b, j] = dc * g * i * (1.0 - i)
                dz[t, b, H + j] = dc * cs[t, b, j] * f * (1.0 - f)
                dz[t, b, 2 * H + j] = dc * i * (1.0 - g * g)
                dz[t, b, 3 * H + j] = dh * tc * o * (1.0 - o)
                dc_next[b, j] = dc * f
        dh_next = dz[t] @ wh
