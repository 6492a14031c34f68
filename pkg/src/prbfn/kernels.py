"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``pgd_run``, ``ring_average``, ``lag_sums``) point at the
numba versions unless ``PRBFN_DISABLE_NUMBA`` is set. Both flavours
implement the same arithmetic; they agree to floating-point rounding, not
bit for bit.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

#: Gram entries with modulus below this get a zero sign factor.
SGN_FLOOR = 1e-12


# --------------------------------------------------------------------------
# projected gradient descent on unit-norm columns


@njit(cache=True)
def pgd_run_numba(B, C, eta, tol, k0, max_iter):
    """Run PGD iterations in place on ``B``.

    Returns ``(f, k, zero_col)``: the objective at the current iterate, the
    iteration counter, and the index of a column that collapsed to zero
    (-1 if none). A collapsed column is left for the caller to re-seed.
    """
    na, n = B.shape
    G = np.empty((n, n), dtype=np.complex128)
    Wt = np.empty((n, n), dtype=np.complex128)
    step = np.empty((na, n), dtype=np.complex128)
    k = k0
    while True:
        f = 0.0
        for i in range(n):
            for j in range(i, n):
                s = 0j
                for m in range(na):
                    s += np.conj(B[m, i]) * B[m, j]
                G[i, j] = s
                G[j, i] = np.conj(s)
        for i in range(n):
            for j in range(n):
                a = abs(G[i, j])
                r = a - C[i, j]
                f += r * r
                if a < SGN_FLOOR:
                    Wt[i, j] = 0j
                else:
                    Wt[i, j] = r * (G[i, j] / a)
        if f < tol or k >= max_iter:
            return f, k, -1
        for m in range(na):
            for j in range(n):
                s = 0j
                for i in range(n):
                    s += B[m, i] * Wt[i, j]
                step[m, j] = 2.0 * s
        k += 1
        for j in range(n):
            nrm = 0.0
            for m in range(na):
                B[m, j] = B[m, j] - eta * step[m, j]
                nrm += B[m, j].real ** 2 + B[m, j].imag ** 2
            nrm = np.sqrt(nrm)
            if nrm == 0.0:
                return f, k, j
            for m in range(na):
                B[m, j] = B[m, j] / nrm


def pgd_run_numpy(B, C, eta, tol, k0, max_iter):
    """Vectorized twin of :func:`pgd_run_numba`."""
    k = k0
    while True:
        G = B.conj().T @ B
        a = np.abs(G)
        r = a - C
        f = float(np.sum(r * r))
        if f < tol or k >= max_iter:
            return f, k, -1
        with np.errstate(divide="ignore", invalid="ignore"):
            sgn = np.where(a < SGN_FLOOR, 0.0, G / a)
        B -= eta * (2.0 * (B @ (r * sgn)))
        k += 1
        nrm = np.sqrt(np.sum(B.real ** 2 + B.imag ** 2, axis=0))
        zero = np.flatnonzero(nrm == 0.0)
        if zero.size:
            good = nrm != 0.0
            B[:, good] /= nrm[good]
            return f, k, int(zero[0])
        B /= nrm


# --------------------------------------------------------------------------
# Monte-Carlo ring average of exp(-j 2 pi d cos(phi))


@njit(cache=True)
def ring_average_numba(phi, d_over_lambda):
    acc_re = 0.0
    acc_im = 0.0
    w = 2.0 * np.pi * d_over_lambda
    for t in range(phi.shape[0]):
        arg = w * np.cos(phi[t])
        acc_re += np.cos(arg)
        acc_im -= np.sin(arg)
    return complex(acc_re / phi.shape[0], acc_im / phi.shape[0])


def ring_average_numpy(phi, d_over_lambda):
    return complex(np.mean(np.exp(-2j * np.pi * d_over_lambda * np.cos(phi))))


# --------------------------------------------------------------------------
# lagged autocorrelation sums over port index


@njit(cache=True)
def lag_sums_numba(h, max_lag):
    """For a T x N block return (R, S) over lags 0..max_lag-1.

    ``R[i] = sum_j <h[:, j], h[:, i+j]>`` and
    ``S[i] = sum_j ||h[:, j]|| * ||h[:, i+j]||``.
    """
    T, n = h.shape
    norms = np.empty(n)
    for j in range(n):
        s = 0.0
        for t in range(T):
            s += h[t, j].real ** 2 + h[t, j].imag ** 2
        norms[j] = np.sqrt(s)
    R = np.zeros(max_lag, dtype=np.complex128)
    S = np.zeros(max_lag)
    for i in range(max_lag):
        for j in range(n - i):
            s = 0j
            for t in range(T):
                s += h[t, j] * np.conj(h[t, i + j])
            R[i] += s
            S[i] += norms[j] * norms[i + j]
    return R, S


def lag_sums_numpy(h, max_lag):
    n = h.shape[1]
    norms = np.sqrt(np.sum(h.real ** 2 + h.imag ** 2, axis=0))
    gram = h.T @ h.conj()  # gram[j, l] = sum_t h[t, j] conj(h[t, l])
    R = np.array([np.trace(gram, offset=i) for i in range(max_lag)], dtype=complex)
    S = np.array([np.dot(norms[: n - i], norms[i:]) for i in range(max_lag)])
    return R, S


if USE_NUMBA:
    pgd_run = pgd_run_numba
    ring_average = ring_average_numba
    lag_sums = lag_sums_numba
else:
    pgd_run = pgd_run_numpy
    ring_average = ring_average_numpy
    lag_sums = lag_sums_numpy
