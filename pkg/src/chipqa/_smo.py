"""SMO solver for the epsilon-SVR dual (second-order working-set selection).

Variables are the 2l multipliers [alpha; alpha*] with labels y = [+1; -1]:

    min  1/2 a^T Q a + p^T a    s.t.  y^T a = 0,  0 <= a <= C
    Q_ts = y_t y_s K(t mod l, s mod l),   p = [eps - z; eps + z]

The regression coefficients are alpha - alpha*, and the bias is -rho.
"""

import numpy as np
from numba import njit

TAU = 1e-12


@njit(cache=True)
def solve(K, z, C, eps, tol, max_iter, trace):
    l = K.shape[0]
    n = 2 * l
    alpha = np.zeros(n)
    y = np.empty(n)
    p = np.empty(n)
    for t in range(l):
        y[t] = 1.0
        y[t + l] = -1.0
        p[t] = eps - z[t]
        p[t + l] = eps + z[t]
    G = p.copy()
    it = 0
    gap = np.inf
    n_trace = trace.shape[0]
    while it < max_iter:
        # i: maximal violating index from the "up" set
        Gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -G[t] >= Gmax:
                    Gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0 and G[t] >= Gmax:
                    Gmax = G[t]
                    i = t
        Gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        if i >= 0:
            ii = i % l
            Kii = K[ii, ii]
            for t in range(n):
                tt = t % l
                Qit = y[i] * y[t] * K[ii, tt]
                if y[t] > 0:
                    if alpha[t] > 0:
                        diff = Gmax + G[t]
                        if G[t] >= Gmax2:
                            Gmax2 = G[t]
                        if diff > 0:
                            quad = Kii + K[tt, tt] - 2.0 * y[i] * Qit
                            if quad <= 0:
                                quad = TAU
                            od = -(diff * diff) / quad
                            if od <= obj_min:
                                obj_min = od
                                j = t
                else:
                    if alpha[t] < C:
                        diff = Gmax - G[t]
                        if -G[t] >= Gmax2:
                            Gmax2 = -G[t]
                        if diff > 0:
                            quad = Kii + K[tt, tt] + 2.0 * y[i] * Qit
                            if quad <= 0:
                                quad = TAU
                            od = -(diff * diff) / quad
                            if od <= obj_min:
                                obj_min = od
                                j = t
        gap = Gmax + Gmax2
        if i < 0 or j < 0 or gap < tol:
            break

        ii = i % l
        jj = j % l
        Qij = y[i] * y[j] * K[ii, jj]
        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            quad = K[ii, ii] + K[jj, jj] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            d = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if d > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = d
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -d
            if d > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - d
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + d
        else:
            quad = K[ii, ii] + K[jj, jj] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        di = alpha[i] - old_i
        dj = alpha[j] - old_j
        for t in range(n):
            tt = t % l
            G[t] += y[t] * (y[i] * K[tt, ii] * di + y[j] * K[tt, jj] * dj)
        if it < n_trace:
            v = 0.0
            for t in range(n):
                v += alpha[t] * (G[t] + p[t])
            trace[it] = -0.5 * v
        it += 1

    # rho from free variables, else the midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    n_free = 0
    sum_free = 0.0
    for t in range(n):
        yG = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            n_free += 1
            sum_free += yG
    if n_free > 0:
        rho = sum_free / n_free
    else:
        rho = (ub + lb) / 2.0
    coef = alpha[:l] - alpha[l:]
    obj = 0.0
    for t in range(n):
        obj += alpha[t] * (G[t] + p[t])
    return coef, -rho, it, gap, -0.5 * obj
