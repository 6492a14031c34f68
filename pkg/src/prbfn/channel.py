"""Rich-scattering channel simulation for verifying a designed beam matrix.

Port voltages are circularly symmetric complex Gaussian with covariance
``Sigma = B^H K B``. The module draws seeded ensembles, estimates their
correlations, selects the port with maximum signal-to-interference ratio,
and evaluates a lag-based measured correlation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

#: Eigenvalues of a covariance down to ``-PSD_TOL * max(1, lambda_max)`` are clipped to zero.
PSD_TOL = 1e-10
#: Draws per independently seeded block; fixed so results never depend on chunking.
BLOCK = 4096


def check_antenna_correlation(K, n_a: int | None = None) -> np.ndarray:
    """Validate a Hermitian PSD antenna correlation matrix (identity when ``None``)."""
    if K is None:
        if n_a is None:
            raise ValueError("need n_a to build a default antenna correlation")
        return np.eye(n_a, dtype=complex)
    K = np.asarray(K, dtype=complex)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or (n_a is not None and K.shape[0] != n_a):
        raise ValueError(f"antenna correlation has shape {K.shape}, expected {(n_a, n_a)}")
    if np.max(np.abs(K - K.conj().T)) > 1e-12:
        raise ValueError("antenna correlation must be Hermitian")
    if np.linalg.eigvalsh(K).min() < -PSD_TOL:
        raise ValueError("antenna correlation must be positive semidefinite")
    return K


def port_covariance(B, K=None) -> np.ndarray:
    """Complex port covariance ``B^H K B``."""
    B = np.asarray(B, dtype=complex)
    K = check_antenna_correlation(K, B.shape[0])
    return B.conj().T @ K @ B


def pattern_correlation(B, K=None) -> np.ndarray:
    """``|B^H K B|`` normalized to a unit diagonal."""
    sigma = port_covariance(B, K)
    d = np.real(np.diag(sigma))
    if np.any(d <= 0):
        raise ValueError("zero pattern power at some port")
    s = np.sqrt(d)
    C = np.abs(sigma) / np.outer(s, s)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def spatial_corr_mc(d_over_lambda: float, samples: int, seed: int = 0) -> complex:
    """Monte Carlo mean of ``exp(-j 2 pi (d/lambda) cos(phi))`` with ``phi`` uniform."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    phi = np.random.default_rng(seed).uniform(0.0, 2 * np.pi, int(samples))
    return complex(kernels.ring_average(phi, float(d_over_lambda)))


@dataclass
class ChannelEnsemble:
    """Port voltages ``h[k, u, t, n]`` for location ``k``, user ``u``, draw ``t``, port ``n``."""

    h: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        if self.h.ndim != 4:
            raise ValueError("channel array must have shape (K, U, T, N)")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel array has non-finite entries")

    @property
    def locations(self) -> int:
        return self.h.shape[0]

    @property
    def users(self) -> int:
        return self.h.shape[1]

    @property
    def T(self) -> int:
        return self.h.shape[2]

    @property
    def N(self) -> int:
        return self.h.shape[3]


def covariance_factor(sigma) -> np.ndarray:
    """``L`` with ``L L^H = sigma`` from an eigendecomposition."""
    sigma = np.asarray(sigma, dtype=complex)
    sigma = 0.5 * (sigma + sigma.conj().T)
    lam, V = np.linalg.eigh(sigma)
    if lam.min() < -PSD_TOL * max(1.0, lam.max()):
        raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {lam.min():.3g})")
    return V * np.sqrt(np.clip(lam, 0.0, None))


def generate_channels(B, K=None, T: int = 10_000, users: int = 1, locations: int = 1,
                      seed: int = 0) -> ChannelEnsemble:
    """Draw ``T`` covariance-``B^H K B`` vectors per user and location.

    Every block of :data:`BLOCK` draws has its own seed derived from
    ``(seed, location, user, block)``, so the output depends only on the seed.
    """
    if T < 1 or users < 1 or locations < 1:
        raise ValueError("T, users and locations must be >= 1")
    L = covariance_factor(port_covariance(B, K))
    N = L.shape[0]
    h = np.empty((locations, users, T, N), dtype=complex)
    for k in range(locations):
        for u in range(users):
            for b, s in enumerate(range(0, T, BLOCK)):
                n = min(BLOCK, T - s)
                rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(k, u, b)))
                z = rng.standard_normal((n, N, 2))
                w = (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2)
                h[k, u, s:s + n] = w @ L.T
    return ChannelEnsemble(h=h, seed=int(seed))


def empirical_correlation(h) -> np.ndarray:
    """``|E[h h^H]|`` normalized to a unit diagonal, for draws along axis 0."""
    h = np.asarray(h)
    cov = h.T @ h.conj() / h.shape[0]
    d = np.sqrt(np.real(np.diag(cov)))
    return np.abs(cov) / np.outer(d, d)


@dataclass
class FamaResult:
    """``port`` is 1-based; ``sir_db`` is ``+inf`` where the interferer vanishes."""

    port: np.ndarray
    sir_db: np.ndarray

    @property
    def infinite(self) -> np.ndarray:
        return np.isposinf(self.sir_db)

    def summary(self) -> dict:
        finite = self.sir_db[np.isfinite(self.sir_db)]
        return {
            "median_sir_db": float(np.median(self.sir_db)),
            "mean_sir_db": float(np.mean(finite)) if finite.size else float("nan"),
            "p_sir_gt_10db": float(np.mean(self.sir_db > 10.0)),
            "infinite_count": int(self.infinite.sum()),
            "realizations": int(self.sir_db.size),
        }


def port_sir(h_user, h_interferer) -> np.ndarray:
    """Linear SIR per draw and port; ``+inf`` at zero interferer power."""
    p1 = np.abs(np.asarray(h_user)) ** 2
    p2 = np.abs(np.asarray(h_interferer)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p2 == 0, np.inf, p1 / np.where(p2 == 0, 1.0, p2))


def fama_select(h_user, h_interferer) -> FamaResult:
    """Per draw, the port maximizing SIR (first port on ties)."""
    h_user, h_interferer = np.atleast_2d(h_user), np.atleast_2d(h_interferer)
    if h_user.shape != h_interferer.shape:
        raise ValueError("user and interferer channels must have equal shape")
    sir = port_sir(h_user, h_interferer)
    best = np.argmax(sir, axis=-1)
    top = np.take_along_axis(sir, best[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        return FamaResult(port=best + 1, sir_db=10.0 * np.log10(top))


def fama_ensemble(ens: ChannelEnsemble) -> list:
    """FAMA rows ``(t, user, best_port, sir_db)``; user ``u`` is interfered by user ``u+1 mod U``.

    ``t`` runs over all locations (``location * T + draw``); users are 1-based.
    """
    if ens.users < 2:
        raise ValueError("FAMA needs at least two users")
    rows = []
    for k in range(ens.locations):
        for u in range(ens.users):
            res = fama_select(ens.h[k, u], ens.h[k, (u + 1) % ens.users])
            for t in range(ens.T):
                rows.append((k * ens.T + t, u + 1, int(res.port[t]), float(res.sir_db[t])))
    return rows


def measured_correlation(ens, max_lag: int | None = None, centered: bool = False) -> np.ndarray:
    """Lag correlation averaged over users and locations.

    For each block the port sequence ``h_j`` (a length-``T`` vector) gives
    ``R(i) = sum_j <h_j, h_{j+i}>`` and ``s(i) = sum_j |h_j| |h_{j+i}|``;
    the block value is ``|R(i)| / s(i)``. Lag 0 is exactly 1. With
    ``centered`` every port sequence has its mean removed first.
    """
    h = ens.h if isinstance(ens, ChannelEnsemble) else np.asarray(ens, dtype=complex)
    if h.ndim == 2:
        h = h[None, None]
    N = h.shape[-1]
    max_lag = N if max_lag is None else int(max_lag)
    if not 1 <= max_lag <= N:
        raise ValueError(f"lags must be < N={N}")
    acc = np.zeros(max_lag)
    for k in range(h.shape[0]):
        for u in range(h.shape[1]):
            blk = h[k, u]
            if centered:
                blk = blk - blk.mean(axis=0)
            R, S = kernels.lag_sums(np.ascontiguousarray(blk), max_lag)
            with np.errstate(divide="ignore", invalid="ignore"):
                acc += np.where(S > 0, np.abs(R) / np.where(S > 0, S, 1.0), 0.0)
    out = acc / (h.shape[0] * h.shape[1])
    out[0] = 1.0
    return out


def mean_diagonals(M) -> np.ndarray:
    """Mean of the ``i``-th superdiagonal of ``M`` for ``i = 0..N-1``."""
    M = np.asarray(M)
    return np.array([np.mean(np.diagonal(M, offset=i)) for i in range(M.shape[0])])


def phase_gauge(B, starts: int = 20, seed: int = 0) -> np.ndarray:
    """Rephase the columns of ``B`` to align the lag diagonals of its Gram.

    ``|B^H B|`` does not depend on column phases, but the lag sums in
    :func:`measured_correlation` do. This picks phases maximizing
    ``sum_i |sum_j G[j, j+i]|`` (multi-start L-BFGS, first start at the
    input phases) and returns the rephased copy.
    """
    from scipy.optimize import minimize

    B = np.asarray(B, dtype=complex)
    G = B.conj().T @ B
    N = G.shape[0]
    rng = np.random.default_rng(seed)

    def neg_total(th):
        S = G * np.exp(1j * (th[None, :] - th[:, None]))
        total, grad = 0.0, np.zeros(N)
        for i in range(1, N):
            d = np.diagonal(S, offset=i)
            s = d.sum()
            a = abs(s)
            if a == 0:
                continue
            total += a
            ds = np.real(np.conj(s) * 1j * d) / a
            grad[i:] += ds
            grad[:N - i] -= ds
        return -total, -grad

    best = None
    for r in range(starts):
        th0 = rng.uniform(-np.pi, np.pi, N) if r else np.zeros(N)
        res = minimize(neg_total, th0, jac=True, method="L-BFGS-B")
        if best is None or res.fun < best.fun:
            best = res
    return B * np.exp(1j * (best.x - best.x[0]))
