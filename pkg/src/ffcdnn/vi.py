"""Photochemical pre-filter: canopy-structure and chlorophyll proxies.

Two scalar agents are computed per observation and used as the network's
input channels:

* ``vi_lai`` - WDVI (Clevers 1989), ``NIR - a*Red`` with soil-line slope
  ``a``, inverted to a leaf-area proxy with the CLAIR model
  ``-(1/alpha) * ln(1 - WDVI/WDVI_inf)``.
* ``vi_lcc`` - TCARI/OSAVI (Haboudane et al. 2002), a chlorophyll-sensitive,
  soil-resistant ratio computed from the 550/670/700/800 nm bands.

Irregular per-pixel observation series are then linearly interpolated onto
a uniform day grid and assembled into k x k spatial patches with
clamp-to-border edge handling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputDataError, NumericFailure, SaturationError

__all__ = [
    "VIPair",
    "AgentPatch",
    "wdvi",
    "tcari_osavi",
    "vi_lai",
    "vi_pair_from_bands",
    "build_patches",
    "DEFAULT_BAND_MAPPING",
]

# Sentinel-2 bands standing in for the 550/670/700/800 nm reference
# wavelengths of the index formulas.
DEFAULT_BAND_MAPPING = {"green": "B3", "red": "B4", "rededge": "B5", "nir": "B8"}


@dataclass(frozen=True)
class VIPair:
    """One observation's (vi_lai, vi_lcc) agent values."""

    vi_lai: float
    vi_lcc: float

    def __post_init__(self):
        if not (math.isfinite(self.vi_lai) and math.isfinite(self.vi_lcc)):
            raise NumericFailure("vegetation-index values must be finite")
        if self.vi_lai < 0 or self.vi_lcc < 0:
            raise NumericFailure("vegetation-index proxies must be non-negative")


@dataclass(frozen=True)
class AgentPatch:
    """Network input: k x k x time_steps x 2 values, channels (LAI, LCC)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4 or v.shape[0] != v.shape[1] or v.shape[3] != 2:
            raise InputDataError(f"patch must be (k, k, T, 2), got {v.shape}")
        if v.shape[2] % 2 != 0:
            raise InputDataError("patch time length must be even")
        if not np.all(np.isfinite(v)):
            raise InputDataError("patch contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def time_steps(self) -> int:
        return self.values.shape[2]


def wdvi(nir, red, soil_slope: float = 1.0):
    """Weighted Difference Vegetation Index: ``NIR - a * Red``."""
    if soil_slope <= 0:
        raise InputDataError("soil_slope must be positive")
    nir = np.asarray(nir, dtype=np.float64)
    red = np.asarray(red, dtype=np.float64)
    for name, band in (("nir", nir), ("red", red)):
        if np.any(band < 0) or np.any(band > 1.5):
            raise InputDataError(f"{name} reflectance outside [0, 1.5]")
    out = nir - soil_slope * red
    return float(out) if out.ndim == 0 else out


def tcari_osavi(r550, r670, r700, r800):
    """TCARI/OSAVI chlorophyll proxy.

    TCARI = 3*[(r700 - r670) - 0.2*(r700 - r550)*(r700/r670)]
    OSAVI = 1.16*(r800 - r670) / (r800 + r670 + 0.16)
    """
    r550 = np.asarray(r550, dtype=np.float64)
    r670 = np.asarray(r670, dtype=np.float64)
    r700 = np.asarray(r700, dtype=np.float64)
    r800 = np.asarray(r800, dtype=np.float64)
    if np.any(r670 <= 0):
        raise NumericFailure("tcari_osavi requires r670 > 0")
    tcari = 3.0 * ((r700 - r670) - 0.2 * (r700 - r550) * (r700 / r670))
    osavi = 1.16 * (r800 - r670) / (r800 + r670 + 0.16)
    if np.any(np.abs(osavi) <= 1e-6):
        raise NumericFailure("OSAVI is degenerate (|OSAVI| <= 1e-6)")
    out = tcari / osavi
    return float(out) if out.ndim == 0 else out


def vi_lai(wdvi_value, alpha: float = 0.4, wdvi_inf: float = 0.6):
    """CLAIR inversion of WDVI to a leaf-area proxy.

    ``-(1/alpha) * ln(1 - WDVI/WDVI_inf)``; maps 0 to 0 and is strictly
    increasing on [0, wdvi_inf).  Values at or past the asymptote raise
    :class:`SaturationError` rather than clamping silently.
    """
    if alpha <= 0 or wdvi_inf <= 0:
        raise InputDataError("alpha and wdvi_inf must be positive")
    w = np.asarray(wdvi_value, dtype=np.float64)
    if np.any(w < 0):
        raise InputDataError("vi_lai requires wdvi >= 0")
    if np.any(w >= wdvi_inf):
        raise SaturationError(
            f"wdvi value reaches the asymptote wdvi_inf={wdvi_inf:g}; saturated"
        )
    out = -np.log1p(-w / wdvi_inf) / alpha
    return float(out) if out.ndim == 0 else out


def vi_pair_from_bands(
    bands: dict,
    soil_slope: float = 1.0,
    clair_alpha: float = 0.4,
    wdvi_inf: float = 0.6,
    band_mapping: dict = None,
) -> VIPair:
    """Compute the (vi_lai, vi_lcc) agents from one record's band values."""
    mapping = dict(DEFAULT_BAND_MAPPING, **(band_mapping or {}))
    nir = float(bands[mapping["nir"]])
    red = float(bands[mapping["red"]])
    green = float(bands[mapping["green"]])
    rededge = float(bands[mapping["rededge"]])
    w = wdvi(nir, red, soil_slope)
    if w < 0:
        raise NumericFailure(
            f"negative WDVI ({w:g}): pixel lies below the configured soil line"
        )
    lai = vi_lai(w, clair_alpha, wdvi_inf)
    lcc = tcari_osavi(green, red, rededge, nir)
    if lcc < 0:
        raise NumericFailure(f"negative TCARI/OSAVI ratio ({lcc:g})")
    return VIPair(lai, lcc)


def _interp_series(days, values, grid) -> np.ndarray:
    # np.interp clamps beyond the observed range, which doubles as the
    # edge rule for grid days outside the observation window.
    return np.interp(grid, days, values)


def build_patches(
    series: dict,
    k: int,
    time_steps: int,
    grid=None,
    soil_slope: float = 1.0,
    clair_alpha: float = 0.4,
    wdvi_inf: float = 0.6,
    band_mapping: dict = None,
) -> dict:
    """Assemble AgentPatch inputs from per-pixel observation series.

    ``series`` maps (row, col) to date-sorted Sentinel2Record lists covering
    a dense raster.  Each pixel's VI pair series is interpolated onto the
    uniform ``grid`` of ``time_steps`` days (default: spanning the observed
    date range), then k x k neighborhoods are cut with indices clamped to
    the raster border.  Returns {(row, col): AgentPatch} in row-major order.
    """
    if k < 1 or k % 2 == 0:
        raise InputDataError("patch side k must be odd and >= 1")
    if time_steps < 2 or time_steps % 2 != 0:
        raise InputDataError("time_steps must be even and >= 2")
    if not series:
        raise InputDataError("empty series")

    rows = max(key[0] for key in series) + 1
    cols = max(key[1] for key in series) + 1
    missing = [(r, c) for r in range(rows) for c in range(cols) if (r, c) not in series]
    if missing:
        raise InputDataError(f"raster is not dense; missing pixels: {missing[:8]}")

    all_days = sorted({rec.date for recs in series.values() for rec in recs})
    if grid is None:
        grid = np.linspace(all_days[0], all_days[-1], time_steps)
    else:
        grid = np.asarray(grid, dtype=np.float64)
        if grid.size != time_steps or np.any(np.diff(grid) <= 0):
            raise InputDataError("grid must be an increasing array of length time_steps")

    vi_grid = np.empty((rows, cols, time_steps, 2), dtype=np.float64)
    for (r, c), recs in series.items():
        if len(recs) < 2:
            raise InputDataError(f"pixel ({r}, {c}): need >= 2 observations, got {len(recs)}")
        days = np.array([rec.date for rec in recs], dtype=np.float64)
        if np.any(np.diff(days) <= 0):
            raise InputDataError(f"pixel ({r}, {c}): observation dates must be distinct")
        pairs = [
            vi_pair_from_bands(rec.bands, soil_slope, clair_alpha, wdvi_inf, band_mapping)
            for rec in recs
        ]
        vi_grid[r, c, :, 0] = _interp_series(days, [p.vi_lai for p in pairs], grid)
        vi_grid[r, c, :, 1] = _interp_series(days, [p.vi_lcc for p in pairs], grid)

    half = k // 2
    patches = {}
    for r in range(rows):
        for c in range(cols):
            ri = np.clip(np.arange(r - half, r + half + 1), 0, rows - 1)
            ci = np.clip(np.arange(c - half, c + half + 1), 0, cols - 1)
            patches[(r, c)] = AgentPatch(vi_grid[np.ix_(ri, ci)])
    return patches
