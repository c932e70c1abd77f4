"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Operation order mirrors the Cython source exactly; keep the two in sync.
"""

import math

import numpy as np

BACKEND = "python"


def g_shape(u, t, xi):
    if u <= -xi:
        return t
    if u >= xi:
        return 1.0 - t
    return 0.5 + (0.5 - t) * u / xi


def _clamp01(v):
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


def _solve_spd(A, b, ridge, p):
    L = [[0.0] * p for _ in range(p)]
    for j in range(p):
        s = A[j][j] + ridge
        for k in range(j):
            s = s - L[j][k] * L[j][k]
        if not (s > 0.0):
            return None
        L[j][j] = math.sqrt(s)
        for i in range(j + 1, p):
            s = A[i][j]
            for k in range(j):
                s = s - L[i][k] * L[j][k]
            L[i][j] = s / L[j][j]
    z = [0.0] * p
    for i in range(p):
        s = b[i]
        for k in range(i):
            s = s - L[i][k] * z[k]
        z[i] = s / L[i][i]
    out = [0.0] * p
    for i in range(p - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, p):
            s = s - L[k][i] * out[k]
        out[i] = s / L[i][i]
    return out


def design_loop(phi_plus, phi_minus, z_plus, z_minus, u, g_burn, t_seq, xi_seq, n0, ridge):
    """Run the sequential design over pre-drawn randomness.

    Steps ``i < n0`` use the burn-in probabilities ``g_burn``; later steps solve
    the inverse-probability-weighted ridge normal equations on the past, clamp
    the working-model predictions to [0, 1] and pass their difference through
    the clipped shape function. Action 1 is taken when ``u[i] < g``. After
    burn-in the probability of action -1 is the mirrored shape ``G(-u)`` so
    that it meets the exploration floor exactly.

    Returns ``(a, y, w, g1, beta_path, status)`` where ``status`` is -1 on
    success or the failing step index.
    """
    n, p = phi_plus.shape
    pp = phi_plus.tolist()
    pm = phi_minus.tolist()
    zp = z_plus.tolist()
    zm = z_minus.tolist()
    uu = u.tolist()
    gb = g_burn.tolist()
    ts = t_seq.tolist()
    xs = xi_seq.tolist()

    a_out = np.empty(n, dtype=np.int64)
    y_out = np.empty(n, dtype=np.float64)
    w_out = np.empty(n, dtype=np.float64)
    g1_out = np.empty(n, dtype=np.float64)
    beta_out = np.full((n, p), np.nan, dtype=np.float64)

    S = [[0.0] * p for _ in range(p)]
    rhs = [0.0] * p
    status = -1
    for i in range(n):
        if i < n0:
            p1 = gb[i]
            pm1 = 1.0 - p1
        else:
            beta = _solve_spd(S, rhs, ridge, p)
            if beta is None:
                status = i
                break
            acc = 0.0
            row = pp[i]
            for j in range(p):
                acc = acc + row[j] * beta[j]
            qp = _clamp01(acc)
            acc = 0.0
            row = pm[i]
            for j in range(p):
                acc = acc + row[j] * beta[j]
            qm = _clamp01(acc)
            p1 = g_shape(qp - qm, ts[i], xs[i])
            pm1 = g_shape(qm - qp, ts[i], xs[i])
            beta_out[i] = beta
        g1_out[i] = p1
        if uu[i] < p1:
            a_out[i] = 1
            yv = zp[i]
            w = p1
            phi = pp[i]
        else:
            a_out[i] = -1
            yv = zm[i]
            w = pm1
            phi = pm[i]
        y_out[i] = yv
        w_out[i] = w
        for j in range(p):
            rhs[j] = rhs[j] + phi[j] * yv / w
            Sj = S[j]
            for k in range(p):
                Sj[k] = Sj[k] + phi[j] * phi[k] / w
    return a_out, y_out, w_out, g1_out, beta_out, status


def threshold_sweep(xs, diff, base, lo, hi):
    """Exact argmax of a running sum over sorted breakpoints.

    Returns ``(tau, best_sum)``. Candidates are ``lo`` followed by every distinct
    ``xs`` value in ``(lo, hi]``; ties keep the smallest candidate.
    """
    xs = np.asarray(xs, dtype=np.float64)
    prefix = np.cumsum(np.concatenate(([base], np.asarray(diff, dtype=np.float64))))
    k_lo = int(np.searchsorted(xs, lo, side="right"))
    k_hi = int(np.searchsorted(xs, hi, side="right"))
    idx = np.arange(k_lo, k_hi)
    if idx.size:
        last_of_group = np.ones(idx.size, dtype=bool)
        nxt = idx + 1 < xs.size
        last_of_group[nxt] = xs[idx[nxt] + 1] != xs[idx[nxt]]
        idx = idx[last_of_group]
    values = np.concatenate(([prefix[k_lo]], prefix[idx + 1]))
    taus = np.concatenate(([lo], xs[idx]))
    j = int(np.argmax(values))
    return float(taus[j]), float(values[j])
