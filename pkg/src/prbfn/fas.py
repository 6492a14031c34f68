"""FAS design parameters and the Bessel target correlation.

Port indices are 1-based wherever they are shown to a user (reports,
CSV files) and 0-based inside arrays. The conversion happens here and in
the report writers, nowhere else.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

#: Port density below which a :class:`LowDensityWarning` is emitted.
DENSITY_RULE = 10.0
#: Apertures above this are accepted with a warning.
MAX_VALIDATED_W = 5.0


class LowDensityWarning(UserWarning):
    """N/W is below the recommended density; accepted, but flagged."""


class ApertureWarning(UserWarning):
    """W exceeds the range the toolkit has been validated over."""


@dataclass(frozen=True)
class FasParams:
    """Aperture ``W`` (in wavelengths) and number of ports ``N``."""

    W: float
    N: int

    def __post_init__(self):
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 2):
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        if not (math.isfinite(self.W) and self.W > 0):
            raise ValueError(f"W must be finite and > 0, got {self.W!r}")
        if self.density < DENSITY_RULE:
            warnings.warn(
                f"port density N/W = {self.density:g} is below {DENSITY_RULE:g}",
                LowDensityWarning, stacklevel=3)
        if self.W > MAX_VALIDATED_W:
            warnings.warn(f"W = {self.W:g} exceeds the validated range (<= {MAX_VALIDATED_W:g})",
                          ApertureWarning, stacklevel=3)

    @property
    def density(self) -> float:
        return self.N / self.W


def bessel_j0(x):
    """Bessel function of the first kind, order zero.

    Accepts a scalar or an array; non-finite input raises ``ValueError``.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("bessel_j0 requires finite input")
    out = special.j0(arr)
    if np.ndim(out) == 0:
        return float(out)
    return out


def make_target_correlation(p: FasParams) -> np.ndarray:
    """Target correlation ``|J0(2*pi*|i-j|*W/(N-1))|`` as an N x N array."""
    if p.N < 2:
        raise ValueError("N must be >= 2")
    lags = np.arange(p.N)
    row = np.abs(bessel_j0(2.0 * np.pi * lags * p.W / (p.N - 1)))
    row[0] = 1.0
    idx = np.abs(lags[:, None] - lags[None, :])
    return row[idx]


def check_correlation(C, atol: float = 1e-12) -> np.ndarray:
    """Validate a correlation matrix: square, symmetric, unit diagonal, in [0, 1]."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"correlation matrix must be square, got shape {C.shape}")
    if not np.allclose(C, C.T, rtol=0, atol=atol):
        raise ValueError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(C), 1.0, rtol=0, atol=atol):
        raise ValueError("correlation matrix must have a unit diagonal")
    if C.min() < -atol or C.max() > 1 + atol:
        raise ValueError("correlation entries must lie in [0, 1]")
    return C


def min_output_ports(W: float) -> int:
    """Smallest power of two that is at least ``floor(W / 0.5) + 1``."""
    if not (W > 0):
        raise ValueError(f"W must be > 0, got {W!r}")
    need = math.floor(W / 0.5) + 1
    n = 1
    while n < need:
        n *= 2
    return n
