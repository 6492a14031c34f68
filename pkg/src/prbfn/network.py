"""Multiport impedance networks with switch-loaded internal ports.

A :class:`PixelNetwork` holds the full ``(n_feed + Q)``-port impedance
matrix per frequency. Terminating the ``Q`` internal ports with switch
loads and eliminating them leaves the feed-port matrix ``Z_PR``.

Conditioning is measured with the 1-norm condition number, which comes for
free once the inverse is formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Reductions with a worse 1-norm condition number are refused.
COND_LIMIT = 1e12
#: Candidates reduced per batch in :func:`reduce_batch`.
BATCH = 256


class SingularNetworkError(ValueError):
    def __init__(self, freq, bits=None, cond=None):
        self.freq, self.bits, self.cond = freq, bits, cond
        where = f" in switch state {''.join(map(str, bits))}" if bits is not None else ""
        super().__init__(f"singular inner matrix at {freq:.6g} Hz{where} (cond={cond:.3g})")


def default_freq_grid(center_hz: float = 2.6e9, band_fraction: float = 0.05, n: int = 21):
    """``n`` points evenly spread over ``center * (1 +/- band_fraction / 2)``."""
    if n == 1:
        return np.array([float(center_hz)])
    return np.linspace(center_hz * (1 - band_fraction / 2), center_hz * (1 + band_fraction / 2), n)


@dataclass
class PixelNetwork:
    """``z[f]`` is the full impedance matrix at ``freqs[f]``; feed ports first."""

    z: np.ndarray
    freqs: np.ndarray
    n_feed: int = 3
    z0: float = 50.0
    reciprocal: bool = True

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=complex)
        self.freqs = np.atleast_1d(np.asarray(self.freqs, dtype=float))
        if self.z.ndim == 2:
            self.z = self.z[None]
        F, P, P2 = self.z.shape
        if P != P2:
            raise ValueError("impedance matrices must be square")
        if F != self.freqs.size:
            raise ValueError(f"{F} matrices for {self.freqs.size} frequencies")
        if not 1 <= self.n_feed <= P:
            raise ValueError("n_feed must be between 1 and the port count")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if self.reciprocal:
            scale = max(1.0, float(np.max(np.abs(self.z))))
            if np.max(np.abs(self.z - np.swapaxes(self.z, 1, 2))) > 1e-9 * scale:
                raise ValueError("network flagged reciprocal but Z != Z^T")

    @property
    def Q(self) -> int:
        return self.z.shape[1] - self.n_feed

    @property
    def n_ports(self) -> int:
        return self.z.shape[1]

    def blocks(self, f_index):
        """``(Z_FF, Z_FI, Z_IF, Z_II)`` at one frequency index (or a slice)."""
        z = self.z[f_index]
        F = self.n_feed
        return z[..., :F, :F], z[..., :F, F:], z[..., F:, :F], z[..., F:, F:]

    def to_json(self) -> dict:
        return {"n_feed": self.n_feed, "z0": self.z0, "reciprocal": self.reciprocal,
                "freqs_hz": [float(f) for f in self.freqs],
                "z_real": self.z.real.tolist(), "z_imag": self.z.imag.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "PixelNetwork":
        z = np.asarray(doc["z_real"]) + 1j * np.asarray(doc["z_imag"])
        return cls(z=z, freqs=doc["freqs_hz"], n_feed=doc["n_feed"], z0=doc["z0"],
                   reciprocal=doc["reciprocal"])


@dataclass(frozen=True)
class SwitchModel:
    """Series R-L for the on state, series R-C for the off state.

    The defaults are placeholder values, not data for any specific diode.
    """

    r_on: float = 1.5
    l_on: float = 0.7e-9
    r_off: float = 1.5
    c_off: float = 0.15e-12

    def __post_init__(self):
        if min(self.r_on, self.r_off, self.l_on) < 0 or not self.c_off > 0:
            raise ValueError("switch model needs r_on, r_off, l_on >= 0 and c_off > 0")

    def on_impedance(self, f):
        w = 2 * np.pi * np.asarray(f, dtype=float)
        return self.r_on + 1j * w * self.l_on

    def off_impedance(self, f):
        w = 2 * np.pi * np.asarray(f, dtype=float)
        return self.r_off + 1.0 / (1j * w * self.c_off)

    def loads(self, bits, freqs):
        """Load impedances with shape ``bits.shape[:-1] + (F, Q)``."""
        bits = np.asarray(bits, dtype=bool)
        on = self.on_impedance(freqs)[:, None]
        off = self.off_impedance(freqs)[:, None]
        return np.where(bits[..., None, :], on, off)


def _as_bits(x, Q):
    x = np.asarray(x).astype(np.int8)
    if x.shape[-1:] != (Q,):
        raise ValueError(f"switch state must have length Q={Q}, got shape {x.shape}")
    if np.any((x != 0) & (x != 1)):
        raise ValueError("switch state must be binary")
    return x


def _inv_checked(A, cond_limit=COND_LIMIT):
    """Batched inverse plus 1-norm condition numbers; raises LinAlgError on exact singularity."""
    Ainv = np.linalg.inv(A)
    cond = np.abs(A).sum(axis=-2).max(axis=-1) * np.abs(Ainv).sum(axis=-2).max(axis=-1)
    return Ainv, cond


def reduce_network(net: PixelNetwork, x, sw: SwitchModel, f_index: int) -> np.ndarray:
    """``Z_PR = Z_FF - Z_FI (Z_II + Z_L(x))^-1 Z_IF`` at one frequency."""
    x = _as_bits(x, net.Q)
    Zff, Zfi, Zif, Zii = net.blocks(f_index)
    if net.Q == 0:
        return Zff.copy()
    A = Zii + np.diag(sw.loads(x, net.freqs[f_index:f_index + 1])[0])
    freq = float(net.freqs[f_index])
    try:
        Ainv, cond = _inv_checked(A)
    except np.linalg.LinAlgError:
        raise SingularNetworkError(freq, x.tolist(), np.inf) from None
    if not cond <= COND_LIMIT:
        raise SingularNetworkError(freq, x.tolist(), float(cond))
    return Zff - Zfi @ (Ainv @ Zif)


def reduce_batch(net: PixelNetwork, X, sw: SwitchModel) -> np.ndarray:
    """Reduced feed matrices for many switch states at every frequency.

    Returns shape ``(K, F, n_feed, n_feed)``.
    """
    X = _as_bits(np.atleast_2d(X), net.Q)
    K, F = X.shape[0], net.freqs.size
    Zff, Zfi, Zif, Zii = net.blocks(slice(None))
    out = np.empty((K, F, net.n_feed, net.n_feed), dtype=complex)
    if net.Q == 0:
        out[:] = Zff
        return out
    idx = np.arange(net.Q)
    for s in range(0, K, BATCH):
        xb = X[s:s + BATCH]
        A = np.broadcast_to(Zii, (xb.shape[0],) + Zii.shape).copy()
        A[..., idx, idx] += sw.loads(xb, net.freqs)
        try:
            Ainv, cond = _inv_checked(A)
        except np.linalg.LinAlgError:
            for k in range(xb.shape[0]):
                for f in range(F):
                    reduce_network(net, xb[k], sw, f)
            raise
        bad = np.argwhere(~(cond <= COND_LIMIT))
        if bad.size:
            k, f = bad[0]
            raise SingularNetworkError(float(net.freqs[f]), xb[k].tolist(), float(cond[k, f]))
        out[s:s + BATCH] = Zff - Zfi @ (Ainv @ Zif)
    return out


def z_to_s(Z, z0: float = 50.0) -> np.ndarray:
    """``S = (Z - z0 I)(Z + z0 I)^-1``, batched over leading axes."""
    Z = np.asarray(Z, dtype=complex)
    eye = np.eye(Z.shape[-1])
    try:
        Ainv, cond = _inv_checked(Z + z0 * eye)
    except np.linalg.LinAlgError:
        raise ValueError("singular Z to S conversion") from None
    if np.any(~(cond <= COND_LIMIT)):
        raise ValueError("ill-conditioned Z to S conversion")
    return (Z - z0 * eye) @ Ainv


def s_to_z(S, z0: float = 50.0) -> np.ndarray:
    """``Z = z0 (I + S)(I - S)^-1``, batched over leading axes."""
    S = np.asarray(S, dtype=complex)
    eye = np.eye(S.shape[-1])
    try:
        Ainv, cond = _inv_checked(eye - S)
    except np.linalg.LinAlgError:
        raise ValueError("singular S to Z conversion") from None
    if np.any(~(cond <= COND_LIMIT)):
        raise ValueError("ill-conditioned S to Z conversion")
    return z0 * (eye + S) @ Ainv


def transmissions(S):
    """``(S21, S31)`` of a 3-port with port 1 as input (batched)."""
    S = np.asarray(S)
    if S.shape[-2:] != (3, 3):
        raise ValueError(f"expected 3x3 scattering matrices, got {S.shape[-2:]}")
    return S[..., 1, 0], S[..., 2, 0]


def mirror_port_permutation(n_feed: int, perm) -> np.ndarray:
    """Full-port permutation swapping feed ports 2 and 3 and internal ports by ``perm``."""
    perm = np.asarray(perm, dtype=int)
    feed = np.arange(n_feed)
    if n_feed >= 3:
        feed[[1, 2]] = [2, 1]
    return np.concatenate([feed, n_feed + perm])


def _random_hermitian(rng, P):
    A = rng.normal(size=(P, P)) + 1j * rng.normal(size=(P, P))
    return (A + A.conj().T) / (2 * np.sqrt(P))


def _divider_base(n_feed: int, P: int) -> np.ndarray:
    """Matched, isolated equal split from port 1 to ports 2 and 3; other ports reflect."""
    S0 = -np.eye(P, dtype=complex)
    S0[:n_feed, :n_feed] = 0
    if n_feed >= 3:
        S0[0, 1] = S0[1, 0] = S0[0, 2] = S0[2, 0] = np.sqrt(0.5)
    return S0


def surrogate_cell(Q: int, coupling_scale: float = 1.0, loss_scale: float = 0.1, seed: int = 0,
                   freqs=None, n_feed: int = 3, dispersion: float = 0.3, mirror_perm=None,
                   z0: float = 50.0, base: str = "random") -> PixelNetwork:
    """Seeded stand-in for an EM-simulated pixel cell.

    Per frequency ``S = g * U S0 U^T`` with ``U = exp(j*coupling_scale*H(f))``,
    ``H`` a random Hermitian matrix drifting linearly over the band by
    ``dispersion``, and ``g = sqrt(1 - loss_scale)``. With ``base="random"``
    ``S0`` is the identity, so ``U S0 U^T`` is a random symmetric unitary.
    With ``base="divider"`` ``S0`` is an ideal matched split from port 1 to
    ports 2 and 3 with reflecting internal ports, and ``coupling_scale`` sets
    how strongly the switches can perturb it.

    With ``mirror_perm`` the scattering matrix is averaged with its image
    under :func:`mirror_port_permutation`, giving an exactly mirror-symmetric
    network.
    """
    if Q < 0:
        raise ValueError("Q must be >= 0")
    if not 0 <= loss_scale < 1:
        raise ValueError("loss_scale must be in [0, 1)")
    if base not in ("random", "divider"):
        raise ValueError("base must be 'random' or 'divider'")
    freqs = default_freq_grid() if freqs is None else np.atleast_1d(np.asarray(freqs, float))
    P = n_feed + Q
    rng = np.random.default_rng(seed)
    H0 = _random_hermitian(rng, P)
    H1 = _random_hermitian(rng, P)
    S0 = np.eye(P, dtype=complex) if base == "random" else _divider_base(n_feed, P)
    fc = 0.5 * (freqs[0] + freqs[-1])
    half_band = max(0.5 * (freqs[-1] - freqs[0]), 1e-300)
    pi = None if mirror_perm is None else mirror_port_permutation(n_feed, mirror_perm)
    gain = np.sqrt(1.0 - loss_scale)
    S = np.empty((freqs.size, P, P), dtype=complex)
    for k, f in enumerate(freqs):
        drift = (f - fc) / half_band if freqs.size > 1 else 0.0
        lam, V = np.linalg.eigh(coupling_scale * (H0 + dispersion * drift * H1))
        U = (V * np.exp(1j * lam)) @ V.conj().T
        Sk = gain * (U @ S0 @ U.T)
        if pi is not None:
            Sk = 0.5 * (Sk + Sk[np.ix_(pi, pi)])
        S[k] = 0.5 * (Sk + Sk.T)
    smax = np.linalg.svd(S, compute_uv=False).max()
    if smax > 1 + 1e-12:  # pragma: no cover - guaranteed by construction
        raise AssertionError(f"surrogate not passive: sigma_max = {smax}")
    Z = s_to_z(S, z0)
    Z = 0.5 * (Z + np.swapaxes(Z, 1, 2))
    return PixelNetwork(z=Z, freqs=freqs, n_feed=n_feed, z0=z0, reciprocal=True)
