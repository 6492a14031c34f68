"""Binary-tree cascade of 1-in/2-out unit cells.

Stage ``m`` (1-based, ``m = 1..M``) holds ``2**(m-1)`` units; the stage
transmission ``H_m`` for one state is block-diagonal with one unit-norm
2-vector per unit, so ``H_m^H H_m = I`` and a target column can be peeled
backwards one stage at a time.

Each unit's 2-vector is stored with the phase of its second entry set to
zero; the per-column phase that this discards is kept in
``CascadePlan.global_phases``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Equal power divider output vector.
SPLITTER = np.array([1.0, 1.0]) * (math.sqrt(2) / 2)
#: Insertion loss of one SPDT switch, dB.
SPDT_LOSS_DB = 0.7
#: SPDT hops in every RF path of the mirror-split 4-port network.
SPDT_PER_PATH = 2
#: Mirror mismatch above this is flagged in the plan.
MIRROR_FLAG_TOL = 1e-6


class SynthesisError(ValueError):
    """A two-row sub-vector was exactly zero, so no unit target exists."""

    def __init__(self, stage, unit, state):
        self.stage, self.unit, self.state = stage, unit, state
        super().__init__(f"zero sub-vector at stage {stage}, unit {unit + 1}, state {state + 1}")


def wrap_phase(x):
    """Wrap angles to (-pi, pi]."""
    w = np.angle(np.exp(1j * np.asarray(x, dtype=float)))
    return np.where(w <= -np.pi, np.pi, w)


@dataclass
class UnitTarget:
    """Per-state amplitude pair and phase difference (angle i1 - angle i2)."""

    amp1: np.ndarray
    amp2: np.ndarray
    dphase: np.ndarray

    def __post_init__(self):
        self.amp1 = np.atleast_1d(np.asarray(self.amp1, dtype=float))
        self.amp2 = np.atleast_1d(np.asarray(self.amp2, dtype=float))
        self.dphase = np.atleast_1d(np.asarray(self.dphase, dtype=float))
        if not (self.amp1.shape == self.amp2.shape == self.dphase.shape):
            raise ValueError("amp1, amp2 and dphase must have equal length")
        if np.any(np.abs(self.amp1 ** 2 + self.amp2 ** 2 - 1) > 1e-12):
            raise ValueError("amp1**2 + amp2**2 must equal 1")
        if np.any(self.dphase <= -np.pi) or np.any(self.dphase > np.pi):
            raise ValueError("dphase must lie in (-pi, pi]")

    @property
    def n_states(self) -> int:
        return self.amp1.size

    def vectors(self) -> np.ndarray:
        """2 x n_states output currents with the second entry's phase at zero."""
        return np.vstack([self.amp1 * np.exp(1j * self.dphase), self.amp2 + 0j])

    def state(self, n: int) -> tuple:
        return float(self.amp1[n]), float(self.amp2[n]), float(self.dphase[n])

    def subset(self, idx) -> "UnitTarget":
        return UnitTarget(self.amp1[idx], self.amp2[idx], self.dphase[idx])

    def mirrored(self) -> "UnitTarget":
        """Outputs interchanged: amplitudes swapped, phase difference negated."""
        return UnitTarget(self.amp2.copy(), self.amp1.copy(), wrap_phase(-self.dphase))

    @classmethod
    def from_vectors(cls, V, stage=0, unit=0) -> "UnitTarget":
        V = np.asarray(V, dtype=complex)
        nrm = np.linalg.norm(V, axis=0)
        zero = np.flatnonzero(nrm == 0)
        if zero.size:
            raise SynthesisError(stage, unit, int(zero[0]))
        a = np.abs(V) / nrm
        # renormalize so the unit-power invariant holds to rounding
        s = np.sqrt(a[0] ** 2 + a[1] ** 2)
        return cls(a[0] / s, a[1] / s, wrap_phase(np.angle(V[0] * V[1].conj())))


def _check_pow2_rows(n_rows):
    if n_rows < 2 or n_rows & (n_rows - 1):
        raise ValueError(f"row count must be a power of two >= 2, got {n_rows}")


def stage_targets(Bs, stage: int = 0) -> list:
    """Unit targets for the last stage of a ``2**m x N`` current matrix."""
    Bs = np.asarray(Bs, dtype=complex)
    if Bs.ndim == 1:
        Bs = Bs[:, None]
    _check_pow2_rows(Bs.shape[0])
    return [UnitTarget.from_vectors(Bs[2 * k:2 * k + 2], stage, k)
            for k in range(Bs.shape[0] // 2)]


def stage_matrix(vectors) -> np.ndarray:
    """Block-diagonal ``H`` (2K x K) from K unit 2-vectors."""
    K = len(vectors)
    H = np.zeros((2 * K, K), dtype=complex)
    for k, v in enumerate(vectors):
        H[2 * k:2 * k + 2, k] = v
    return H


def backward_reduce(i_n, H, tol: float = 1e-9) -> np.ndarray:
    """``H^H i_n``: the input current of the stage that ``H`` describes."""
    H = np.asarray(H, dtype=complex)
    i_n = np.asarray(i_n, dtype=complex)
    K = H.shape[1]
    if H.shape[0] != 2 * K or i_n.shape[0] != 2 * K:
        raise ValueError(f"incompatible shapes H {H.shape}, i_n {i_n.shape}")
    mask = np.zeros_like(H, dtype=bool)
    for k in range(K):
        mask[2 * k:2 * k + 2, k] = True
    if np.any(np.abs(H[~mask]) > tol):
        raise ValueError("H is not block-diagonal")
    norms = np.linalg.norm(H, axis=0)
    if np.any(np.abs(norms - 1) > tol):
        raise ValueError(f"block norms deviate from 1: {norms}")
    return H.conj().T @ i_n


def reduce_columns(Bs, units: list) -> np.ndarray:
    """Apply :func:`backward_reduce` to every state with the given unit targets.

    ``units`` may hold :class:`UnitTarget` objects or raw 2 x N arrays
    (realized outputs); raw arrays are normalized per state first.
    """
    Bs = np.asarray(Bs, dtype=complex)
    N = Bs.shape[1]
    vecs = []
    for u in units:
        V = u.vectors() if isinstance(u, UnitTarget) else np.asarray(u, dtype=complex)
        vecs.append(V / np.linalg.norm(V, axis=0))
    out = np.empty((len(units), N), dtype=complex)
    for n in range(N):
        out[:, n] = backward_reduce(Bs[:, n], stage_matrix([V[:, n] for V in vecs]))
    return out


@dataclass
class MirrorSplit:
    I1: np.ndarray
    I2: np.ndarray
    routing: list
    residual: float
    amp_residual: float

    @property
    def flagged(self) -> bool:
        return max(self.residual, self.amp_residual) > MIRROR_FLAG_TOL


def mirror_split(Bhat) -> MirrorSplit:
    """Split a 4-row target into halves for the SPDT mirror architecture.

    State ``n`` in the second half reuses the configurations of state
    ``N - n + 1``, with the two stage-2 units swapped between the upper and
    lower output pairs. The mismatch of ``Bhat`` against that relation is
    measured and returned, not corrected.
    """
    Bhat = np.asarray(Bhat, dtype=complex)
    n_a, N = Bhat.shape
    if n_a != 4:
        raise ValueError("mirror split needs N_A = 4")
    if N % 2:
        raise ValueError("mirror split needs an even number of states")
    half = N // 2
    routing = []
    for n in range(1, N + 1):
        if n <= half:
            up, low, st = "unit1", "unit2", n
        else:
            up, low, st = "unit2", "unit1", N - n + 1
        routing.append({"state": n, "half": 1 if n <= half else 2,
                        "upper": {"unit": up, "unit_state": st},
                        "lower": {"unit": low, "unit_state": st},
                        "spdt_per_path": SPDT_PER_PATH})
    res = 0.0
    amp_res = 0.0
    for n in range(N):
        m = N - 1 - n
        a, b = Bhat[0:2, n], Bhat[2:4, m]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        amp_res = max(amp_res, abs(na - nb))
        if na > 0 and nb > 0:
            phi = np.angle(np.vdot(b, a))
            res = max(res, float(np.linalg.norm(a / na - np.exp(1j * phi) * b / nb)))
    return MirrorSplit(Bhat[:, :half].copy(), Bhat[:, half:].copy(), routing, res, amp_res)


@dataclass
class CascadePlan:
    """Unit targets per stage (``units[m-1][k]``) plus routing metadata."""

    M: int
    units: list
    global_phases: np.ndarray
    splitter: np.ndarray = field(default_factory=lambda: SPLITTER.copy())
    spdt_routing: list = field(default_factory=list)
    spdt_loss_db: float = SPDT_LOSS_DB
    mirror_residual: float | None = None
    mirror_amp_residual: float | None = None

    @property
    def n_states(self) -> int:
        return self.units[0][0].n_states

    def all_units(self):
        """Yield ``(stage, index, UnitTarget)``, stage and index 1-based."""
        for m, stage in enumerate(self.units, start=1):
            for k, u in enumerate(stage, start=1):
                yield m, k, u

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "n_states": self.n_states,
            "splitter": [[float(z.real), float(z.imag)] for z in np.asarray(self.splitter, complex)],
            "units": [{"stage": m, "index": k,
                       "states": [{"amp1": float(a1), "amp2": float(a2), "dphase_rad": float(dp)}
                                  for a1, a2, dp in zip(u.amp1, u.amp2, u.dphase)]}
                      for m, k, u in self.all_units()],
            "spdt_routing": self.spdt_routing,
            "spdt_loss_db": self.spdt_loss_db,
            "global_phases": [float(p) for p in self.global_phases],
            "mirror_residual": self.mirror_residual,
            "mirror_amp_residual": self.mirror_amp_residual,
            "mirror_flagged": (None if self.mirror_residual is None else
                               max(self.mirror_residual, self.mirror_amp_residual) > MIRROR_FLAG_TOL),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CascadePlan":
        M = int(doc["M"])
        units = [[None] * 2 ** (m - 1) for m in range(1, M + 1)]
        for u in doc["units"]:
            st = u["states"]
            units[u["stage"] - 1][u["index"] - 1] = UnitTarget(
                [s["amp1"] for s in st], [s["amp2"] for s in st], [s["dphase_rad"] for s in st])
        if any(u is None for stage in units for u in stage):
            raise ValueError("plan is missing unit targets")
        return cls(M=M, units=units, global_phases=np.asarray(doc["global_phases"], dtype=float),
                   splitter=np.array([complex(*p) for p in doc["splitter"]]),
                   spdt_routing=doc.get("spdt_routing", []),
                   spdt_loss_db=doc.get("spdt_loss_db", SPDT_LOSS_DB),
                   mirror_residual=doc.get("mirror_residual"),
                   mirror_amp_residual=doc.get("mirror_amp_residual"))


def synthesize_plan(Bhat, spdt: bool | None = None) -> CascadePlan:
    """Backward synthesis of all unit targets from a ``2**M x N`` matrix.

    ``spdt=None`` attaches the mirror-split routing whenever ``N_A = 4`` and
    ``N`` is even.
    """
    Bhat = np.asarray(Bhat, dtype=complex)
    n_a, N = Bhat.shape
    _check_pow2_rows(n_a)
    M = n_a.bit_length() - 1
    units = [None] * M
    current = Bhat
    for m in range(M, 0, -1):
        units[m - 1] = stage_targets(current, stage=m)
        current = reduce_columns(current, units[m - 1])
    plan = CascadePlan(M=M, units=units, global_phases=np.angle(current[0]))
    if spdt is None:
        spdt = n_a == 4 and N % 2 == 0
    if spdt:
        ms = mirror_split(Bhat)
        plan.spdt_routing = ms.routing
        plan.mirror_residual = ms.residual
        plan.mirror_amp_residual = ms.amp_residual
    return plan


def compose_vectors(stage_vectors: list) -> np.ndarray:
    """Forward product ``H_M ... H_1`` for every state.

    ``stage_vectors[m-1]`` is a list of 2 x N arrays, one per unit of stage m.
    """
    N = stage_vectors[0][0].shape[1]
    out = np.ones((1, N), dtype=complex)
    for vecs in stage_vectors:
        nxt = np.empty((2 * len(vecs), N), dtype=complex)
        for k, V in enumerate(vecs):
            nxt[2 * k:2 * k + 2] = V * out[k]
        out = nxt
    return out


def forward_compose(plan: CascadePlan) -> np.ndarray:
    """Output current matrix ``B`` realized by the plan's unit targets."""
    return compose_vectors([[u.vectors() for u in stage] for stage in plan.units])
