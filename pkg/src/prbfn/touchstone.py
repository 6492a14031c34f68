"""Touchstone version 1 reader and writer.

Supports n-port S and Z data in RI, MA and DB number formats. Z data in a
file is normalized by the reference resistance, as in the version 1 format.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import PixelNetwork, s_to_z, z_to_s

FREQ_UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}
FORMATS = ("RI", "MA", "DB")
PARAMETERS = ("S", "Z")
_UNSUPPORTED = ("Y", "H", "G")


class TouchstoneError(ValueError):
    pass


@dataclass
class TouchstoneData:
    freqs: np.ndarray  # Hz
    data: np.ndarray  # (F, n, n), unnormalized (ohms for Z)
    parameter: str = "S"
    z0: float = 50.0
    fmt: str = "RI"
    freq_unit: str = "GHZ"

    @property
    def n_ports(self) -> int:
        return self.data.shape[1]

    def to_network(self, n_feed: int = 3, reciprocal: bool = False) -> PixelNetwork:
        z = self.data if self.parameter == "Z" else s_to_z(self.data, self.z0)
        return PixelNetwork(z=z, freqs=self.freqs, n_feed=min(n_feed, self.n_ports),
                            z0=self.z0, reciprocal=reciprocal)


def _parse_options(line: str, lineno: int) -> dict:
    opts = {"freq_unit": "GHZ", "parameter": "S", "fmt": "MA", "z0": 50.0}
    seen = set()
    toks = line[1:].split()
    i = 0
    while i < len(toks):
        t = toks[i].upper()
        if t in FREQ_UNITS:
            key, val = "freq_unit", t
        elif t in PARAMETERS:
            key, val = "parameter", t
        elif t in FORMATS:
            key, val = "fmt", t
        elif t == "R":
            if i + 1 >= len(toks):
                raise TouchstoneError(f"line {lineno}: R without a value")
            try:
                val = float(toks[i + 1])
            except ValueError:
                raise TouchstoneError(f"line {lineno}: bad reference resistance {toks[i + 1]!r}") from None
            if not val > 0:
                raise TouchstoneError(f"line {lineno}: reference resistance must be > 0")
            key = "z0"
            i += 1
        elif t in _UNSUPPORTED:
            raise TouchstoneError(f"line {lineno}: {t}-parameters are not supported")
        else:
            raise TouchstoneError(f"line {lineno}: unknown option token {toks[i]!r}")
        if key in seen:
            raise TouchstoneError(f"line {lineno}: option {key} given twice")
        seen.add(key)
        opts[key] = val
        i += 1
    return opts


def _to_complex(a, b, fmt):
    if fmt == "RI":
        return a + 1j * b
    mag = a if fmt == "MA" else 10.0 ** (a / 20.0)
    return mag * np.exp(1j * np.radians(b))


def parse_touchstone(text: str) -> TouchstoneData:
    """Parse Touchstone v1 text. Comments are discarded."""
    opts = None
    lines = []  # (lineno, tokens)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("#"):
            if opts is None:
                opts = _parse_options(line, lineno)
            continue
        if opts is None:
            raise TouchstoneError(f"line {lineno}: data before the option line")
        try:
            lines.append((lineno, [float(t) for t in line.split()]))
        except ValueError:
            raise TouchstoneError(f"line {lineno}: non-numeric data") from None
    if opts is None:
        raise TouchstoneError("missing option line")
    if not lines:
        raise TouchstoneError("no data")

    # A record starts on a line with an odd token count (frequency + pairs);
    # continuation lines always hold whole pairs.
    records = []
    for lineno, toks in lines:
        if len(toks) % 2 == 1:
            records.append((lineno, list(toks)))
        elif not records:
            raise TouchstoneError(f"line {lineno}: record does not start with a frequency")
        else:
            records[-1][1].extend(toks)
    size = len(records[0][1])
    n = math.isqrt((size - 1) // 2)
    if n < 1 or 1 + 2 * n * n != size:
        raise TouchstoneError(f"line {records[0][0]}: {size} values do not form an n-port record")
    for lineno, rec in records:
        if len(rec) != size:
            raise TouchstoneError(f"line {lineno}: expected {size} values, found {len(rec)}")

    arr = np.asarray([r for _, r in records])
    freqs = arr[:, 0] * FREQ_UNITS[opts["freq_unit"]]
    if np.any(np.diff(freqs) <= 0):
        raise TouchstoneError("frequencies must be strictly increasing")
    vals = _to_complex(arr[:, 1::2], arr[:, 2::2], opts["fmt"]).reshape(-1, n, n)
    if n == 2:
        vals = np.swapaxes(vals, 1, 2)  # 2-port order is 11 21 12 22
    if opts["parameter"] == "Z":
        vals = vals * opts["z0"]
    return TouchstoneData(freqs=freqs, data=vals, parameter=opts["parameter"], z0=opts["z0"],
                          fmt=opts["fmt"], freq_unit=opts["freq_unit"])


def _pair(z, fmt):
    if fmt == "RI":
        return z.real, z.imag
    mag = abs(z)
    ang = math.degrees(math.atan2(z.imag, z.real))
    if fmt == "MA":
        return mag, ang
    return 20.0 * math.log10(max(mag, 1e-300)), ang


def write_touchstone(data, fmt: str = "RI", parameter: str | None = None,
                     freq_unit: str = "GHz", comments=()) -> str:
    """Serialize a :class:`TouchstoneData` or :class:`PixelNetwork`.

    A network is written as S-parameters unless ``parameter="Z"``.
    ``comments`` become ``!`` header lines.
    """
    fmt = fmt.upper()
    unit = freq_unit.upper()
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if unit not in FREQ_UNITS:
        raise ValueError(f"frequency unit must be one of {tuple(FREQ_UNITS)}")
    if isinstance(data, PixelNetwork):
        parameter = (parameter or "S").upper()
        vals = data.z if parameter == "Z" else z_to_s(data.z, data.z0)
        z0, freqs = data.z0, data.freqs
    else:
        if parameter is not None and parameter.upper() != data.parameter:
            raise ValueError("parameter conversion is only supported for PixelNetwork input")
        parameter, vals, z0, freqs = data.parameter, data.data, data.z0, data.freqs
    if parameter not in PARAMETERS:
        raise ValueError(f"parameter must be one of {PARAMETERS}")
    if parameter == "Z":
        vals = vals / z0
    n = vals.shape[1]
    out = [f"! {c}" for c in comments]
    out.append(f"# {unit} {parameter} {fmt} R {z0!r}")
    scale = FREQ_UNITS[unit]
    for f, m in zip(freqs, vals):
        fstr = repr(float(f / scale))
        if n <= 2:
            order = m.T.ravel() if n == 2 else m.ravel()
            nums = [repr(float(v)) for z in order for v in _pair(z, fmt)]
            out.append(" ".join([fstr] + nums))
            continue
        for r, row in enumerate(m):
            for c0 in range(0, n, 4):
                nums = [repr(float(v)) for z in row[c0:c0 + 4] for v in _pair(z, fmt)]
                lead = [fstr] if (r == 0 and c0 == 0) else []
                out.append(" ".join(lead + nums))
    return "\n".join(out) + "\n"
