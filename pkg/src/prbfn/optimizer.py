"""Beamforming current matrix optimization.

Finds a complex ``N_A x N`` matrix ``B`` with unit-norm columns whose Gram
magnitude ``|B^H B|`` approximates a target correlation matrix, by
projected gradient descent with multiple seeded restarts.

Gradient convention
-------------------
:func:`gradient` returns the Wirtinger derivative ``df/dB*``. For a real
objective the gradient with respect to the real coordinates satisfies
``df/dRe(B) + 1j * df/dIm(B) = REAL_GRADIENT_SCALE * gradient(B)``.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fas import FasParams, make_target_correlation

#: Ratio between the real-coordinate gradient and the Wirtinger gradient.
REAL_GRADIENT_SCALE = 2.0


@dataclass(frozen=True)
class PgdOptions:
    """Options for :func:`pgd_solve` and :func:`multi_restart`.

    ``tolerance`` is an absolute threshold on the objective. When left as
    ``None`` it is derived from ``epsilon0`` and the target, so that the
    solver stops once the relative error drops below ``epsilon0``.
    """

    eta: float = 0.05
    tolerance: float | None = None
    max_iter: int = 20000
    restarts: int = 30
    seed: int = 0
    epsilon0: float = 0.01

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.epsilon0 > 0:
            raise ValueError("epsilon0 must be > 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def resolved_tolerance(self, C_obj) -> float:
        if self.tolerance is not None:
            return float(self.tolerance)
        return self.epsilon0 * baseline_error(C_obj)


@dataclass
class SolveReport:
    best: np.ndarray
    objective: float
    epsilon: float
    iterations: int
    converged: bool
    phase_spread: float
    seed: int
    per_restart: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "objective": float(self.objective),
            "epsilon": float(self.epsilon),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "phase_spread_rad": float(self.phase_spread),
            "seed": int(self.seed),
            "shape": list(self.best.shape),
            "B_real": [float(v) for v in self.best.real.ravel()],
            "B_imag": [float(v) for v in self.best.imag.ravel()],
            "per_restart": [{"objective": float(f), "iterations": int(k)}
                            for f, k in self.per_restart],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SolveReport":
        shape = tuple(doc["shape"])
        B = (np.asarray(doc["B_real"], dtype=float)
             + 1j * np.asarray(doc["B_imag"], dtype=float)).reshape(shape)
        return cls(best=B, objective=doc["objective"], epsilon=doc["epsilon"],
                   iterations=doc["iterations"], converged=doc["converged"],
                   phase_spread=doc["phase_spread_rad"], seed=doc.get("seed", 0),
                   per_restart=[(r["objective"], r["iterations"])
                                for r in doc.get("per_restart", [])])


def _check_dims(B, C_obj):
    B = np.asarray(B, dtype=complex)
    C_obj = np.asarray(C_obj, dtype=float)
    if B.ndim != 2 or C_obj.shape != (B.shape[1], B.shape[1]):
        raise ValueError(f"dimension mismatch: B is {B.shape}, C_obj is {C_obj.shape}")
    return B, C_obj


def objective(B, C_obj) -> float:
    """Squared Frobenius distance between ``|B^H B|`` and ``C_obj``."""
    B, C_obj = _check_dims(B, C_obj)
    r = np.abs(B.conj().T @ B) - C_obj
    return float(np.sum(r * r))


def gradient(B, C_obj) -> np.ndarray:
    """Wirtinger gradient ``2 B [(|G| - C_obj) o sgn(G)]`` with ``G = B^H B``.

    The sign factor is zeroed where ``|G| < 1e-12``.
    """
    B, C_obj = _check_dims(B, C_obj)
    G = B.conj().T @ B
    a = np.abs(G)
    with np.errstate(divide="ignore", invalid="ignore"):
        sgn = np.where(a < kernels.SGN_FLOOR, 0.0, G.conj().T / a)
    return 2.0 * (B @ ((a - C_obj) * sgn))


def random_unit_columns(n_a: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Real and imaginary parts uniform on [-1, 1], columns normalized."""
    while True:
        B = rng.uniform(-1, 1, (n_a, n)) + 1j * rng.uniform(-1, 1, (n_a, n))
        nrm = np.linalg.norm(B, axis=0)
        if np.all(nrm > 0):
            return B / nrm


def project_columns(B, rng: np.random.Generator | None = None) -> np.ndarray:
    """Scale every column to unit norm; zero columns get a random unit vector."""
    B = np.array(B, dtype=complex, copy=True)
    if B.ndim == 1:
        B = B[:, None]
    nrm = np.linalg.norm(B, axis=0)
    for j in np.flatnonzero(nrm == 0):
        if rng is None:
            rng = np.random.default_rng()
        B[:, j] = random_unit_columns(B.shape[0], 1, rng)[:, 0]
        nrm[j] = 1.0
    return B / nrm


def baseline_error(C_obj) -> float:
    """Objective of a single antenna: ``||1 - C_obj||_F^2``."""
    C_obj = np.asarray(C_obj, dtype=float)
    return float(np.sum((1.0 - C_obj) ** 2))


def relative_error(C, C_obj) -> float:
    """``||C - C_obj||_F^2 / ||1 - C_obj||_F^2``."""
    C = np.asarray(C, dtype=float)
    C_obj = np.asarray(C_obj, dtype=float)
    if C.shape != C_obj.shape:
        raise ValueError(f"dimension mismatch: {C.shape} vs {C_obj.shape}")
    den = baseline_error(C_obj)
    if den == 0:
        raise ValueError("C_obj is the all-one matrix; relative error is undefined")
    return float(np.sum((C - C_obj) ** 2)) / den


def phase_spread(B) -> float:
    """Mean over columns of the spread of port phases relative to port 1.

    Each phase ``angle(i_m / i_1)`` is taken in (-pi, pi]; the spread of a
    column is max minus min over ports.
    """
    B = np.asarray(B, dtype=complex)
    rel = np.angle(B * B[0:1].conj())
    rel = np.where(rel == -np.pi, np.pi, rel)
    return float(np.mean(rel.max(axis=0) - rel.min(axis=0)))


def derive_seed(master: int, index: int) -> int:
    """Seed of restart ``index``: the ``index``-th child of ``SeedSequence(master)``."""
    child = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return int(child.generate_state(1, dtype=np.uint64)[0])


def pgd_solve(C_obj, n_a: int, opts: PgdOptions = PgdOptions(), B0=None) -> SolveReport:
    """Single projected-gradient solve seeded by ``opts.seed``.

    Non-convergence is reported through ``converged=False``, never raised.
    """
    C_obj = np.asarray(C_obj, dtype=float)
    n = C_obj.shape[0]
    if n_a < 1:
        raise ValueError("n_a must be >= 1")
    rng = np.random.default_rng(int(opts.seed))
    if B0 is None:
        B = random_unit_columns(n_a, n, rng)
    else:
        B = project_columns(B0, rng)
        if B.shape != (n_a, n):
            raise ValueError(f"B0 has shape {B.shape}, expected {(n_a, n)}")
    B = np.ascontiguousarray(B, dtype=np.complex128)
    C = np.ascontiguousarray(C_obj)
    tol = opts.resolved_tolerance(C_obj)
    k = 0
    while True:
        f, k, zero_col = kernels.pgd_run(B, C, float(opts.eta), tol, k, int(opts.max_iter))
        if zero_col < 0:
            break
        B[:, zero_col] = random_unit_columns(n_a, 1, rng)[:, 0]
    den = baseline_error(C_obj)
    eps = f / den if den > 0 else float("nan")
    return SolveReport(best=B, objective=f, epsilon=eps, iterations=k,
                       converged=f < tol, phase_spread=phase_spread(B),
                       seed=int(opts.seed), per_restart=[(f, k)])


def _restart_job(args):
    C_obj, n_a, opts, r = args
    return pgd_solve(C_obj, n_a, dataclasses.replace(opts, seed=derive_seed(opts.seed, r)))


def select_restart(reports: list, tol: float) -> int:
    """Index of the chosen restart.

    Among converged restarts, the smallest phase spread wins (first index on
    ties). With none converged, the lowest objective wins.
    """
    ok = [r for r, rep in enumerate(reports) if rep.objective < tol]
    if ok:
        return min(ok, key=lambda r: (reports[r].phase_spread, r))
    return min(range(len(reports)), key=lambda r: (reports[r].objective, r))


def multi_restart(C_obj, n_a: int, opts: PgdOptions = PgdOptions(), workers: int = 1) -> SolveReport:
    """Run ``opts.restarts`` seeded solves and select one.

    Results do not depend on ``workers``: every restart has its own derived
    seed and the selection is order-independent.
    """
    C_obj = np.asarray(C_obj, dtype=float)
    jobs = [(C_obj, n_a, opts, r) for r in range(opts.restarts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_restart_job, jobs))
    else:
        reports = [_restart_job(j) for j in jobs]
    tol = opts.resolved_tolerance(C_obj)
    best = reports[select_restart(reports, tol)]
    return dataclasses.replace(best, per_restart=[(rep.objective, rep.iterations)
                                                  for rep in reports])


def na_sweep(W: float, N: int, na_range, opts: PgdOptions = PgdOptions()) -> list:
    """Relative error of the selected solution for each ``N_A`` in ``na_range``."""
    na_range = list(na_range)
    if not na_range:
        raise ValueError("na_range must be nonempty")
    C_obj = make_target_correlation(FasParams(W, N))
    out = []
    for n_a in na_range:
        if n_a == 1:
            # any unit-modulus row has an all-one Gram magnitude; skip the rounding
            out.append((1, relative_error(np.ones_like(C_obj), C_obj)))
            continue
        rep = multi_restart(C_obj, n_a, opts)
        out.append((int(n_a), relative_error(np.abs(rep.best.conj().T @ rep.best), C_obj)))
    return out
