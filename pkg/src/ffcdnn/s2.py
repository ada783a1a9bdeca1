"""Sentinel-2 band simulation and raster/series ingestion.

Ground hyperspectra are integrated against per-band relative spectral
response (RSR) curves with the trapezoidal rule on the union wavelength
grid, which is exact for the piecewise-linear data model:

    band = integral(R_ground * RSR) / integral(RSR)

20 m red-edge rasters are homogenized to the 10 m grid by nearest-neighbour
block duplication.  File formats (all CSV, UTF-8):

    spectra:  wavelength_nm,reflectance
    rsr:      band,wavelength_nm,response
    series:   row,col,date,B2,B3,B4,B5,B6,B7,B8
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CoverageError, InputDataError

__all__ = [
    "S2_BANDS",
    "HyperSpectrum",
    "RSRCurve",
    "Sentinel2Record",
    "simulate_band",
    "simulate_all_bands",
    "resample_nearest",
    "load_spectrum",
    "load_rsr_curves",
    "load_series",
    "write_series",
    "bundled_rsr_path",
]

S2_BANDS = ("B2", "B3", "B4", "B5", "B6", "B7", "B8")

_trapz = getattr(np, "trapezoid", np.trapz)


@dataclass(frozen=True)
class HyperSpectrum:
    """Ground reflectance over 400-1000 nm on a (possibly irregular) grid."""

    wavelengths: np.ndarray
    reflectance: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=np.float64)
        r = np.asarray(self.reflectance, dtype=np.float64)
        if w.ndim != 1 or w.size < 2 or w.size != r.size:
            raise InputDataError("spectrum needs matching wavelength/reflectance arrays")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(r)):
            raise InputDataError("spectrum values must be finite")
        if np.any(np.diff(w) <= 0):
            raise InputDataError("wavelengths must be strictly increasing")
        if w[0] < 400.0 - 1e-9 or w[-1] > 1000.0 + 1e-9:
            raise InputDataError("wavelengths must lie within [400, 1000] nm")
        if np.any(r < 0) or np.any(r > 1.5):
            raise InputDataError("reflectance must lie within [0, 1.5]")
        object.__setattr__(self, "wavelengths", w)
        object.__setattr__(self, "reflectance", r)


@dataclass(frozen=True)
class RSRCurve:
    """Relative spectral response of one sensor band."""

    band: str
    wavelengths: np.ndarray
    response: np.ndarray
    lambda_start: float = field(init=False)
    lambda_end: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=np.float64)
        r = np.asarray(self.response, dtype=np.float64)
        if w.ndim != 1 or w.size < 2 or w.size != r.size:
            raise InputDataError(f"RSR {self.band}: malformed curve arrays")
        if np.any(np.diff(w) <= 0):
            raise InputDataError(f"RSR {self.band}: wavelengths must increase")
        if not np.all(np.isfinite(r)) or np.any(r < 0) or np.any(r > 1.0 + 1e-9):
            raise InputDataError(f"RSR {self.band}: response must lie in [0, 1]")
        object.__setattr__(self, "wavelengths", w)
        object.__setattr__(self, "response", r)
        object.__setattr__(self, "lambda_start", float(w[0]))
        object.__setattr__(self, "lambda_end", float(w[-1]))
        if _trapz(r, w) <= 0:
            raise InputDataError(f"RSR {self.band}: zero integral (degenerate band)")


@dataclass(frozen=True)
class Sentinel2Record:
    """One pixel observation: day-of-season date and B2..B8 reflectances."""

    row: int
    col: int
    date: int
    bands: dict

    def __post_init__(self):
        missing = [b for b in S2_BANDS if b not in self.bands]
        if missing:
            raise InputDataError(f"record missing bands: {missing}")
        for b in S2_BANDS:
            v = float(self.bands[b])
            if not np.isfinite(v) or v < 0:
                raise InputDataError(f"band {b}: reflectance must be finite and >= 0")


def simulate_band(spectrum: HyperSpectrum, rsr: RSRCurve) -> float:
    """RSR-weighted mean reflectance of ``spectrum`` over one sensor band.

    Both curves are linearly interpolated onto the union of their wavelength
    grids restricted to [lambda_start, lambda_end]; numerator and
    denominator use the same trapezoidal weights, so the result is bounded
    by the spectrum's min/max over the band and is invariant to uniform
    rescaling of the response.
    """
    lo, hi = rsr.lambda_start, rsr.lambda_end
    if spectrum.wavelengths[0] > lo + 1e-9 or spectrum.wavelengths[-1] < hi - 1e-9:
        raise CoverageError(
            f"spectrum [{spectrum.wavelengths[0]:g}, {spectrum.wavelengths[-1]:g}] nm "
            f"does not cover band {rsr.band} [{lo:g}, {hi:g}] nm"
        )
    inside = spectrum.wavelengths[(spectrum.wavelengths > lo) & (spectrum.wavelengths < hi)]
    grid = np.union1d(rsr.wavelengths, inside)
    refl = np.interp(grid, spectrum.wavelengths, spectrum.reflectance)
    resp = np.interp(grid, rsr.wavelengths, rsr.response)
    denom = _trapz(resp, grid)
    if denom <= 0:
        raise InputDataError(f"RSR {rsr.band}: zero integral over band support")
    return float(_trapz(refl * resp, grid) / denom)


def simulate_all_bands(spectrum: HyperSpectrum, curves: dict) -> dict:
    """Simulate every band in ``curves`` (a mapping band id -> RSRCurve)."""
    return {band: simulate_band(spectrum, curve) for band, curve in sorted(curves.items())}


def resample_nearest(grid: np.ndarray, factor: int = 2) -> np.ndarray:
    """Duplicate each cell of a raster into a factor x factor block."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise InputDataError("resample_nearest expects a non-empty 2-D raster")
    return np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1)


# ---------------------------------------------------------------------------
# CSV ingestion


def _open_rows(path):
    path = Path(path)
    if not path.exists():
        raise InputDataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        yield from csv.reader(fh)


def _parse_float(text: str, path, lineno: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputDataError(f"{path}:{lineno}: bad value for {column!r}: {text!r}") from None


def load_spectrum(path) -> HyperSpectrum:
    """Read a ``wavelength_nm,reflectance`` CSV into a HyperSpectrum."""
    rows = iter(_open_rows(path))
    header = next(rows, None)
    if header is None or [h.strip() for h in header[:2]] != ["wavelength_nm", "reflectance"]:
        raise InputDataError(f"{path}:1: expected header 'wavelength_nm,reflectance'")
    wl, refl = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) < 2:
            raise InputDataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        wl.append(_parse_float(row[0], path, lineno, "wavelength_nm"))
        refl.append(_parse_float(row[1], path, lineno, "reflectance"))
    if not wl:
        raise InputDataError(f"{path}: spectrum file has no data rows")
    return HyperSpectrum(np.array(wl), np.array(refl))


def load_rsr_curves(path) -> dict:
    """Read a ``band,wavelength_nm,response`` CSV into {band: RSRCurve}."""
    rows = iter(_open_rows(path))
    header = next(rows, None)
    if header is None or [h.strip() for h in header[:3]] != ["band", "wavelength_nm", "response"]:
        raise InputDataError(f"{path}:1: expected header 'band,wavelength_nm,response'")
    points: dict = {}
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) < 3:
            raise InputDataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        band = row[0].strip()
        wl = _parse_float(row[1], path, lineno, "wavelength_nm")
        resp = _parse_float(row[2], path, lineno, "response")
        points.setdefault(band, []).append((wl, resp))
    if not points:
        raise InputDataError(f"{path}: RSR file has no data rows")
    curves = {}
    for band, pts in points.items():
        pts.sort()
        wl = np.array([p[0] for p in pts])
        resp = np.array([p[1] for p in pts])
        curves[band] = RSRCurve(band, wl, resp)
    return curves


def load_series(path) -> dict:
    """Read a pixel time-series CSV into {(row, col): [Sentinel2Record, ...]}.

    Records are grouped per pixel and sorted by date; a duplicate
    (pixel, date) pair is rejected with its line number.
    """
    rows = iter(_open_rows(path))
    header = next(rows, None)
    expected = ["row", "col", "date"] + list(S2_BANDS)
    if header is None or [h.strip() for h in header] != expected:
        raise InputDataError(f"{path}:1: expected header '{','.join(expected)}'")
    seen: dict = {}
    series: dict = {}
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise InputDataError(
                f"{path}:{lineno}: expected {len(expected)} columns, got {len(row)}"
            )
        try:
            r, c, date = int(row[0]), int(row[1]), int(row[2])
        except ValueError:
            raise InputDataError(f"{path}:{lineno}: row/col/date must be integers") from None
        key = (r, c)
        if (key, date) in seen:
            raise InputDataError(
                f"{path}:{lineno}: duplicate observation for pixel {key} at date {date} "
                f"(first seen at line {seen[(key, date)]})"
            )
        seen[(key, date)] = lineno
        bands = {
            b: _parse_float(row[3 + i], path, lineno, b) for i, b in enumerate(S2_BANDS)
        }
        series.setdefault(key, []).append(Sentinel2Record(r, c, date, bands))
    for key in series:
        series[key].sort(key=lambda rec: rec.date)
    return dict(sorted(series.items()))


def write_series(path, records) -> None:
    """Write Sentinel2Record rows in the series CSV format (sorted, stable)."""
    records = sorted(records, key=lambda rec: (rec.row, rec.col, rec.date))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "date"] + list(S2_BANDS))
        for rec in records:
            writer.writerow(
                [rec.row, rec.col, rec.date]
                + [format(float(rec.bands[b]), ".10g") for b in S2_BANDS]
            )


def bundled_rsr_path() -> Path:
    """Path of the vendored synthetic RSR fixture set (B2..B8)."""
    return Path(__file__).parent / "data" / "rsr_sentinel2_fixture.csv"
