"""Hot inner loops, each in two flavours.

``*_loops`` functions are written as explicit loops and compiled with
numba; ``*_numpy`` functions are the vectorized fallback. The public
names at the bottom dispatch on :data:`sprdm._accel.USE_NUMBA`. Both
flavours agree to rounding error, not bit-for-bit.

Array conventions: ``U`` holds augmented inputs u_1..u_T as rows, ``S``
holds states s_2..s_{T+1} as rows, weights are stored so that a layer is
``x @ W`` (the transpose form ``W^T x``).
"""
import numpy as np

from . import _accel
from ._accel import njit

CLAMP = 709.0


# --------------------------------------------------------------------------
# numba flavour
# --------------------------------------------------------------------------

@njit
def _sig(z):
    if z > CLAMP:
        z = CLAMP
    elif z < -CLAMP:
        z = -CLAMP
    return 1.0 / (1.0 + np.exp(-z))


@njit
def _spr_states_loops(A, bA, B1, B2, bB, U):
    T, p = U.shape
    h = A.shape[1]
    S = np.empty((T, h))
    for j in range(h):
        z = bA[j]
        for i in range(p):
            z += U[0, i] * A[i, j]
        S[0, j] = _sig(z)
    for t in range(1, T):
        for j in range(h):
            z = bB[j]
            for i in range(p):
                z += U[t, i] * B1[i, j]
            for i in range(h):
                z += S[t - 1, i] * B2[i, j]
            S[t, j] = _sig(z)
    return S


@njit
def _spr_bptt_loops(A, bA, B1, B2, bB, C, a, U, X):
    T, p = U.shape
    h = A.shape[1]
    d = C.shape[1]
    S = _spr_states_loops(A, bA, B1, B2, bB, U[: T - 1])
    gA = np.zeros_like(A)
    gbA = np.zeros(h)
    gB1 = np.zeros_like(B1)
    gB2 = np.zeros_like(B2)
    gbB = np.zeros(h)
    gC = np.zeros_like(C)
    ga = np.zeros(d)
    carry = np.zeros(h)
    g = np.empty(d)
    dz = np.empty(h)
    loss = 0.0
    # time index t (1-based) runs T..2; state s_t lives in S[t - 2]
    for t in range(T, 1, -1):
        k = t - 2
        for m in range(d):
            pred = a[m]
            for j in range(h):
                pred += S[k, j] * C[j, m]
            r = pred - X[t - 1, m]
            loss += r * r
            g[m] = 2.0 * r
            ga[m] += g[m]
        for j in range(h):
            sj = S[k, j]
            ds = carry[j]
            for m in range(d):
                gC[j, m] += sj * g[m]
                ds += C[j, m] * g[m]
            dz[j] = ds * sj * (1.0 - sj)
        if t >= 3:
            for i in range(p):
                ui = U[t - 2, i]
                for j in range(h):
                    gB1[i, j] += ui * dz[j]
            for i in range(h):
                si = S[k - 1, i]
                acc = 0.0
                for j in range(h):
                    gB2[i, j] += si * dz[j]
                    acc += B2[i, j] * dz[j]
                carry[i] = acc
            for j in range(h):
                gbB[j] += dz[j]
        else:
            for i in range(p):
                ui = U[0, i]
                for j in range(h):
                    gA[i, j] += ui * dz[j]
            for j in range(h):
                gbA[j] += dz[j]
    return loss, gA, gbA, gB1, gB2, gbB, gC, ga


@njit
def _stage_sgd_loops(W, R, b, C, a, V, Sp, X, order, lr, losses):
    n_up = order.shape[0]
    p = W.shape[0]
    h = W.shape[1]
    d = C.shape[1]
    s = np.empty(h)
    g = np.empty(d)
    dz = np.empty(h)
    for it in range(n_up):
        i = order[it]
        for j in range(h):
            z = b[j]
            for k in range(p):
                z += V[i, k] * W[k, j]
            for k in range(h):
                z += Sp[i, k] * R[k, j]
            s[j] = _sig(z)
        loss = 0.0
        for m in range(d):
            pred = a[m]
            for j in range(h):
                pred += s[j] * C[j, m]
            r = pred - X[i, m]
            loss += r * r
            g[m] = 2.0 * r
        losses[it] = loss
        if not np.isfinite(loss):
            return it
        for j in range(h):
            ds = 0.0
            for m in range(d):
                ds += C[j, m] * g[m]
            dz[j] = ds * s[j] * (1.0 - s[j])
        for k in range(p):
            vk = V[i, k]
            if vk != 0.0:
                for j in range(h):
                    W[k, j] -= lr * vk * dz[j]
        for k in range(h):
            sk = Sp[i, k]
            for j in range(h):
                R[k, j] -= lr * sk * dz[j]
        for j in range(h):
            b[j] -= lr * dz[j]
            for m in range(d):
                C[j, m] -= lr * s[j] * g[m]
        for m in range(d):
            a[m] -= lr * g[m]
    return n_up


@njit
def _hmm_forward_loops(logE, pi, P):
    T, n = logE.shape
    alpha = np.empty((T, n))
    c = np.empty(T)
    lv = np.empty(n)
    for t in range(T):
        # work in logs: a state with tiny prior may carry all the likelihood
        for j in range(n):
            if t == 0:
                v = pi[j]
            else:
                v = 0.0
                for i in range(n):
                    v += alpha[t - 1, i] * P[i, j]
            lv[j] = np.log(v) + logE[t, j]
        mx = lv[0]
        for j in range(1, n):
            if lv[j] > mx:
                mx = lv[j]
        tot = 0.0
        for j in range(n):
            alpha[t, j] = np.exp(lv[j] - mx)
            tot += alpha[t, j]
        for j in range(n):
            alpha[t, j] /= tot
        c[t] = np.log(tot) + mx
    return alpha, c


@njit
def _hmm_forward_backward_loops(logE, pi, P):
    T, n = logE.shape
    alpha, c = _hmm_forward_loops(logE, pi, P)
    beta = np.ones((T, n))
    xi = np.zeros((n, n))
    w = np.empty(n)
    for t in range(T - 2, -1, -1):
        for j in range(n):
            w[j] = np.exp(logE[t + 1, j] - c[t + 1]) * beta[t + 1, j]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += P[i, j] * w[j]
                xi[i, j] += alpha[t, i] * P[i, j] * w[j]
            beta[t, i] = acc
    gamma = alpha * beta
    loglik = 0.0
    for t in range(T):
        loglik += c[t]
    return gamma, xi, loglik


# --------------------------------------------------------------------------
# numpy flavour
# --------------------------------------------------------------------------

def _sig_np(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -CLAMP, CLAMP)))


def _spr_states_numpy(A, bA, B1, B2, bB, U):
    T = U.shape[0]
    S = np.empty((T, A.shape[1]))
    S[0] = _sig_np(U[0] @ A + bA)
    if T > 1:
        drive = U[1:] @ B1 + bB
        for t in range(1, T):
            S[t] = _sig_np(drive[t - 1] + S[t - 1] @ B2)
    return S


def _spr_bptt_numpy(A, bA, B1, B2, bB, C, a, U, X):
    T = U.shape[0]
    S = _spr_states_numpy(A, bA, B1, B2, bB, U[: T - 1])
    R = S @ C + a - X[1:]
    G = 2.0 * R
    loss = float(np.sum(R * R))
    gC = S.T @ G
    ga = G.sum(axis=0)
    direct = G @ C.T
    dZ = np.empty_like(S)
    carry = np.zeros(S.shape[1])
    for k in range(T - 2, -1, -1):
        s = S[k]
        dZ[k] = (direct[k] + carry) * s * (1.0 - s)
        carry = B2 @ dZ[k]
    gA = np.outer(U[0], dZ[0])
    gbA = dZ[0].copy()
    gB1 = U[1:T - 1].T @ dZ[1:]
    gB2 = S[:-1].T @ dZ[1:]
    gbB = dZ[1:].sum(axis=0)
    return loss, gA, gbA, gB1, gB2, gbB, gC, ga


def _stage_sgd_numpy(W, R, b, C, a, V, Sp, X, order, lr, losses):
    for it, i in enumerate(order):
        s = _sig_np(V[i] @ W + Sp[i] @ R + b)
        r = s @ C + a - X[i]
        loss = float(r @ r)
        losses[it] = loss
        if not np.isfinite(loss):
            return it
        g = 2.0 * r
        dz = (C @ g) * s * (1.0 - s)
        W -= lr * np.outer(V[i], dz)
        R -= lr * np.outer(Sp[i], dz)
        b -= lr * dz
        C -= lr * np.outer(s, g)
        a -= lr * g
    return len(order)


def _hmm_forward_numpy(logE, pi, P):
    T, n = logE.shape
    alpha = np.empty((T, n))
    c = np.empty(T)
    with np.errstate(divide="ignore"):
        for t in range(T):
            lv = np.log(pi if t == 0 else alpha[t - 1] @ P) + logE[t]
            mx = lv.max()
            v = np.exp(lv - mx)
            tot = v.sum()
            alpha[t] = v / tot
            c[t] = np.log(tot) + mx
    return alpha, c


def _hmm_forward_backward_numpy(logE, pi, P):
    T, n = logE.shape
    alpha, c = _hmm_forward_numpy(logE, pi, P)
    beta = np.ones((T, n))
    xi = np.zeros((n, n))
    for t in range(T - 2, -1, -1):
        w = np.exp(logE[t + 1] - c[t + 1]) * beta[t + 1]
        beta[t] = P @ w
        xi += np.outer(alpha[t], w) * P
    return alpha * beta, xi, float(c.sum())


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def spr_states(A, bA, B1, B2, bB, U):
    """States s_2..s_{T+1} for inputs u_1..u_T, shape (T, h)."""
    f = _spr_states_loops if _accel.USE_NUMBA else _spr_states_numpy
    return f(_c(A), _c(bA), _c(B1), _c(B2), _c(bB), _c(U))


def spr_bptt(A, bA, B1, B2, bB, C, a, U, X):
    """Loss sum_{t=2..T} ||C's_t + a - x_t||^2 and its exact gradient."""
    f = _spr_bptt_loops if _accel.USE_NUMBA else _spr_bptt_numpy
    loss, *grads = f(_c(A), _c(bA), _c(B1), _c(B2), _c(bB), _c(C), _c(a), _c(U), _c(X))
    return float(loss), tuple(grads)


def stage_sgd(W, R, b, C, a, V, Sp, X, order, lr):
    """Run SGD in place on one logistic layer plus affine decoder.

    Returns the per-update sample losses (taken before each update); a
    shorter array means a non-finite loss stopped the loop.
    """
    for arr in (W, R, b, C, a):
        assert arr.flags.c_contiguous and arr.dtype == np.float64
    order = np.ascontiguousarray(order, dtype=np.int64)
    losses = np.empty(len(order))
    f = _stage_sgd_loops if _accel.USE_NUMBA else _stage_sgd_numpy
    done = f(W, R, b, C, a, _c(V), _c(Sp), _c(X), order, float(lr), losses)
    return losses[: int(done) + (int(done) < len(order))]


def hmm_forward(logE, pi, P):
    """Normalized filtering posteriors (T, n) and per-step log normalizers."""
    f = _hmm_forward_loops if _accel.USE_NUMBA else _hmm_forward_numpy
    return f(_c(logE), _c(pi), _c(P))


def hmm_forward_backward(logE, pi, P):
    """Smoothed posteriors, summed pairwise posteriors and log-likelihood."""
    f = _hmm_forward_backward_loops if _accel.USE_NUMBA else _hmm_forward_backward_numpy
    gamma, xi, ll = f(_c(logE), _c(pi), _c(P))
    return gamma, xi, float(ll)
