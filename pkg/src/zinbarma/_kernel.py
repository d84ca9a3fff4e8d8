"""Compiled forward recursion for the ZINB-ARMA states, log-likelihood and score.

Parameter dependence of ``e_{t-j}``, ``Z_{t-i}`` and ``V_{t-i}`` is propagated
exactly in forward mode: every state carries its derivative with respect to
the free parameter vector ``(nu, k)``. One pass costs O(N * P * (p + q)).

The per-observation contribution is written through the zero-state weight
``r_t``. For the observed partial likelihood ``r_t`` is the posterior
probability of the zero state (0 when ``y_t > 0``); for the EM surrogate Q it
is the fixed E-step weight. In both cases

    d ell_t / dM_t = r_t - pi_t
    d ell_t / dW_t = (1 - r_t) * d log NB(y_t) / dW_t
    d ell_t / dk  |direct = (1 - r_t) * d log NB(y_t) / dk
"""

import math

import numpy as np
from numba import njit

LINK_CLAMP = 30.0
PSI_FLOOR = 1e-12


@njit(cache=True)
def digamma(x):
    r = 0.0
    while x < 10.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    tail = f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (1.0 / 240 + f * (-1.0 / 132 + f * (691.0 / 32760))))))
    return r + math.log(x) - 0.5 / x + tail


@njit(cache=True)
def _log1pexp(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def run(beta, phi, theta, delta, alpha, gamma, k, X, U, y, zi,
        idx_phi, idx_theta, idx_alpha, idx_gamma, n_free,
        s_hat, use_s, W, M, Z, V, e, lam, pi, ll_t, grad, flags, grad_t):
    """One forward pass. ``n_free == 0`` skips derivatives.

    Returns the summed log-likelihood (or Q when ``use_s``); ``grad`` holds the
    derivative with respect to the free vector on the natural ``k`` scale.
    When ``grad_t`` has N rows it receives the per-observation score rows.
    """
    n = y.shape[0]
    P = n_free
    kidx = P - 1
    n1 = beta.shape[0]
    n2 = delta.shape[0]
    p1 = phi.shape[0]
    q1 = theta.shape[0]
    p2 = alpha.shape[0]
    q2 = gamma.shape[0]
    doff = 0
    if P > 0:
        # delta columns follow beta, phi and theta free slots
        doff = n1
        for i in range(p1):
            if idx_phi[i] >= 0:
                doff += 1
        for j in range(q1):
            if idx_theta[j] >= 0:
                doff += 1
    dZ = np.zeros((n, P))
    dV = np.zeros((n, P))
    de = np.zeros((n, P))
    dW = np.zeros(P)
    dM = np.zeros(P)
    dlam = np.zeros(P)
    dpi = np.zeros(P)
    dLam = np.zeros(P)
    dA = np.zeros(P)
    for g in range(P):
        grad[g] = 0.0
    flags[0] = 0
    flags[1] = 0
    lgk = math.lgamma(k)
    dgk = digamma(k)
    logk = math.log(k)
    C = LINK_CLAMP
    total = 0.0
    keep_t = P > 0 and grad_t.shape[0] == n

    for t in range(n):
        # ---- W_t ----
        for g in range(P):
            dW[g] = 0.0
        z = 0.0
        for i in range(p1):
            s = t - 1 - i
            if s < 0:
                break
            z += phi[i] * (Z[s] + e[s])
            for g in range(P):
                dW[g] += phi[i] * (dZ[s, g] + de[s, g])
            j = idx_phi[i] if P > 0 else -1
            if j >= 0:
                dW[j] += Z[s] + e[s]
        for jj in range(q1):
            s = t - 1 - jj
            if s < 0:
                break
            z += theta[jj] * e[s]
            for g in range(P):
                dW[g] += theta[jj] * de[s, g]
            j = idx_theta[jj] if P > 0 else -1
            if j >= 0:
                dW[j] += e[s]
        Z[t] = z
        for g in range(P):
            dZ[t, g] = dW[g]
        w = z
        for i in range(n1):
            w += X[t, i] * beta[i]
            if P > 0:
                dW[i] += X[t, i]
        W[t] = w
        wc = w
        if w > C or w < -C:
            wc = C if w > C else -C
            flags[0] += 1
            for g in range(P):
                dW[g] = 0.0

        # ---- M_t ----
        mc = 0.0
        if zi:
            for g in range(P):
                dM[g] = 0.0
            v = 0.0
            for i in range(p2):
                s = t - 1 - i
                if s < 0:
                    break
                v += alpha[i] * (V[s] + e[s])
                for g in range(P):
                    dM[g] += alpha[i] * (dV[s, g] + de[s, g])
                j = idx_alpha[i] if P > 0 else -1
                if j >= 0:
                    dM[j] += V[s] + e[s]
            for jj in range(q2):
                s = t - 1 - jj
                if s < 0:
                    break
                v += gamma[jj] * e[s]
                for g in range(P):
                    dM[g] += gamma[jj] * de[s, g]
                j = idx_gamma[jj] if P > 0 else -1
                if j >= 0:
                    dM[j] += e[s]
            V[t] = v
            for g in range(P):
                dV[t, g] = dM[g]
            m = v
            for i in range(n2):
                m += U[t, i] * delta[i]
                if P > 0:
                    dM[doff + i] += U[t, i]
            M[t] = m
            mc = m
            if m > C or m < -C:
                mc = C if m > C else -C
                flags[0] += 1
                for g in range(P):
                    dM[g] = 0.0

        # ---- link functions ----
        lt_ = math.exp(wc)
        if zi:
            pt = 1.0 / (1.0 + math.exp(-mc))
            log_pi = -_log1pexp(-mc)
            log_1m = -_log1pexp(mc)
        else:
            pt = 0.0
            log_pi = -np.inf
            log_1m = 0.0
        lam[t] = lt_
        pi[t] = pt

        # ---- log-likelihood contribution ----
        yt = y[t]
        kl = k + lt_
        log_kl = math.log(kl)
        logpt = logk - log_kl
        nb = k * logpt
        nbk = logpt + (lt_ - yt) / kl
        if yt > 0:
            nb += math.lgamma(k + yt) - lgk - math.lgamma(yt + 1.0) + yt * (wc - log_kl)
            nbk += digamma(k + yt) - dgk
        nbW = yt - lt_ * (k + yt) / kl
        r = 0.0
        if yt == 0 and zi:
            a = log_pi
            b = log_1m + nb
            mx = a if a > b else b
            l0 = mx + math.log(math.exp(a - mx) + math.exp(b - mx))
            if use_s:
                r = s_hat[t]
                lt = r * log_pi + (1.0 - r) * b
            else:
                r = math.exp(a - l0)
                lt = l0
        else:
            lt = log_1m + nb
        ll_t[t] = lt
        total += lt

        # ---- score accumulation ----
        if P > 0:
            lW = (1.0 - r) * nbW
            lM = r - pt
            for g in range(P):
                grad[g] += lW * dW[g]
            if zi:
                for g in range(P):
                    grad[g] += lM * dM[g]
            grad[kidx] += (1.0 - r) * nbk
            if keep_t:
                for g in range(P):
                    grad_t[t, g] = lW * dW[g] + (lM * dM[g] if zi else 0.0)
                grad_t[t, kidx] += (1.0 - r) * nbk

        # ---- moments and standardized error ----
        Lam = lt_ * (1.0 - pt)
        A = 1.0 + lt_ * pt + lt_ / k
        Psi = Lam * A
        if Psi < PSI_FLOOR:
            e[t] = 0.0
            flags[1] += 1
            for g in range(P):
                de[t, g] = 0.0
        else:
            sq = math.sqrt(Psi)
            et = (yt - Lam) / sq
            e[t] = et
            if P > 0:
                for g in range(P):
                    dlam[g] = lt_ * dW[g]
                    dpi[g] = pt * (1.0 - pt) * dM[g] if zi else 0.0
                    dLam[g] = (1.0 - pt) * dlam[g] - lt_ * dpi[g]
                    dA[g] = pt * dlam[g] + lt_ * dpi[g] + dlam[g] / k
                dA[kidx] -= lt_ / (k * k)
                for g in range(P):
                    dPsi = A * dLam[g] + Lam * dA[g]
                    de[t, g] = -dLam[g] / sq - et * dPsi / (2.0 * Psi)
    return total


_EMPTY_2D = np.zeros((0, 0))


def states(beta, phi, theta, delta, alpha, gamma, k, X, U, y, zi, W, M, Z, V, e, lam, pi):
    n = y.shape[0]
    flags = np.zeros(2, dtype=np.int64)
    run(beta, phi, theta, delta, alpha, gamma, float(k), X, U, y, bool(zi),
        np.full(phi.size, -1, np.int64), np.full(theta.size, -1, np.int64),
        np.full(alpha.size, -1, np.int64), np.full(gamma.size, -1, np.int64), 0,
        np.zeros(n), False, W, M, Z, V, e, lam, pi, np.zeros(n), np.zeros(0), flags, _EMPTY_2D)
    return flags
