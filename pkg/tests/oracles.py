"""Reference implementations used only by the tests.

Each one takes a different route from the library code it checks: a dense
LP over all n*m variables instead of the support-restricted one, a textbook
Sinkhorn loop without stabilization, a DFT written out as a matrix product,
and brute-force loops for the mappings.
"""

import numpy as np
from scipy.optimize import linprog


def dense_exact_ot(a, b, C):
    """Unrestricted transport LP solved with the interior-point backend."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    m, n = C.shape
    rows = np.kron(np.eye(m), np.ones((1, n)))
    cols = np.kron(np.ones((1, m)), np.eye(n))
    res = linprog(np.ravel(C), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs-ipm")
    assert res.status == 0, res.message
    return res.fun, res.x.reshape(m, n)


def plain_sinkhorn(a, b, C, gamma, n_iter=20000):
    """Unstabilized alternating scaling; fine for moderate ``C / gamma``."""
    K = np.exp(-C / gamma)
    v = np.ones(len(b))
    for _ in range(n_iter):
        u = a / (K @ v)
        v = b / (K.T @ u)
    u = a / (K @ v)
    return u[:, None] * K * v[None, :]


def plain_sinkhorn_values(a, B, C, gamma, n_iter=5000):
    """Regularized OT values from ``a`` to every column of ``B`` (same loop, batched)."""
    K = np.exp(-C / gamma)
    V = np.ones_like(B)
    for _ in range(n_iter):
        U = a[:, None] / (K @ V)
        V = B / (K.T @ U)
    U = a[:, None] / (K @ V)
    T = U.T[:, :, None] * K[None] * V.T[:, None, :]
    logs = np.log(T, where=T > 0, out=np.zeros_like(T))
    return (T * C[None]).sum(axis=(1, 2)) + gamma * (T * logs).sum(axis=(1, 2))


def entropic_value(T, C, gamma):
    logs = np.log(T, where=T > 0, out=np.zeros_like(T))
    return float((T * C).sum() + gamma * (T * logs).sum())


def central_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def dft_stft(x, N, hop):
    """Centred Hann STFT via an explicit DFT matrix."""
    half = N // 2
    n_frames = 1 + -(-(len(x) + half) // hop)
    padded = np.zeros((n_frames - 1) * hop + N)
    padded[half:half + len(x)] = x
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(N) / N)
    F = np.exp(-2j * np.pi * np.outer(np.arange(half + 1), np.arange(N)) / N)
    return np.column_stack([F @ (padded[i * hop:i * hop + N] * w) for i in range(n_frames)])


def nearest_log_bin(source, target, lam):
    """Index of the closest target bin in ``log(lam + f)``, lowest index on ties."""
    out = []
    for f in source:
        d = [abs(np.log(lam + f) - np.log(lam + g)) for g in target]
        out.append(int(np.argmin(d)))
    return out


def sdr(ref, est):
    return 10 * np.log10(np.sum(ref ** 2) / np.sum((ref - est) ** 2))
