"""Discrete Fourier transforms for arbitrary sequence lengths.

The forward transform carries a 1/N factor:

    X[j] = (1/N) * sum_n x[n] * exp(-2*pi*i*j*n/N)

and the inverse is unnormalized, so ``idft(dft(x)) == x``.  Power-of-two
lengths go through an iterative radix-2 butterfly; every other length is
handled exactly (no zero padding) with Bluestein's chirp trick, which
re-expresses the transform as a circular convolution of power-of-two size.
Under this convention the convolution dual of a spectrum product is the
1/N-scaled circular convolution (see :func:`circular_convolve`).

All kernels are vectorized over leading axes: the transform always acts on
the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputDataError, SpectrumSymmetryError

__all__ = [
    "Spectrum",
    "dft",
    "idft",
    "dft_batch",
    "idft_batch",
    "rdft_bins",
    "circular_convolve",
    "circular_convolve_direct",
    "circular_convolve_fft",
]


def _bit_reverse_indices(n: int) -> np.ndarray:
    """Index permutation that orders a length-n array bit-reversed (n = 2**m)."""
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.intp)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_pow2(a: np.ndarray) -> np.ndarray:
    """Unnormalized forward FFT along the last axis; length must be 2**m."""
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    a = np.ascontiguousarray(a[..., _bit_reverse_indices(n)])
    lead = a.shape[:-1]
    m = 1
    while m < n:
        half = m
        m *= 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = a.reshape(*lead, n // m, m)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
    return a


def _ifft_pow2_unnormalized(a: np.ndarray) -> np.ndarray:
    """Unnormalized inverse FFT along the last axis (conjugation trick)."""
    return np.conj(_fft_pow2(np.conj(a)))


def _bluestein(a: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT of arbitrary length via chirp-z.

    Uses jn = (j^2 + n^2 - (j-n)^2) / 2 to turn the transform into a linear
    convolution with the chirp exp(+i*pi*m^2/N), evaluated through a
    power-of-two FFT of length >= 2N-1.  Chirp exponents are reduced mod 2N
    in exact integer arithmetic so large N stays accurate.
    """
    n = a.shape[-1]
    ks = np.arange(n, dtype=np.int64)
    expo = (ks * ks) % (2 * n)
    chirp = np.exp(-1j * np.pi * expo / n)

    m = 1 << (2 * n - 1).bit_length()
    pre = a * chirp
    apad = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    apad[..., :n] = pre

    # Convolution kernel: conj(chirp) laid out for indices -(n-1)..(n-1).
    bpad = np.zeros(m, dtype=np.complex128)
    bpad[:n] = np.conj(chirp)
    bpad[m - n + 1:] = np.conj(chirp[1:])[::-1]

    conv = _ifft_pow2_unnormalized(_fft_pow2(apad) * _fft_pow2(bpad)) / m
    return conv[..., :n] * chirp


def _core_forward(a: np.ndarray) -> np.ndarray:
    """Unnormalized DFT along the last axis (any length)."""
    n = a.shape[-1]
    a = np.asarray(a, dtype=np.complex128)
    if n & (n - 1) == 0:
        return _fft_pow2(a)
    return _bluestein(a)


def dft_batch(signal: np.ndarray) -> np.ndarray:
    """Forward transform with the 1/N factor, applied along the last axis."""
    signal = np.asarray(signal)
    n = signal.shape[-1]
    if n < 1:
        raise InputDataError("dft requires at least one sample")
    if not np.all(np.isfinite(signal)):
        raise InputDataError("dft input contains non-finite values")
    return _core_forward(signal) / n


def idft_batch(bins: np.ndarray) -> np.ndarray:
    """Unnormalized inverse transform along the last axis; returns complex."""
    bins = np.asarray(bins, dtype=np.complex128)
    if bins.shape[-1] < 1:
        raise InputDataError("idft requires at least one bin")
    return np.conj(_core_forward(np.conj(bins)))


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT bins of a sequence, tagged with the 1/N convention.

    For a real input of length N the bins are conjugate symmetric:
    ``bins[N-j] == conj(bins[j])`` for 1 <= j < N.
    """

    bins: np.ndarray
    forward_normalized: bool = field(default=True)

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 1 or bins.size < 1:
            raise InputDataError("Spectrum requires a non-empty 1-D bin array")
        if not np.all(np.isfinite(bins)):
            raise InputDataError("Spectrum bins must be finite")
        object.__setattr__(self, "bins", bins)

    def __len__(self) -> int:
        return self.bins.size

    def is_conjugate_symmetric(self, tol: float = 1e-9) -> bool:
        b = self.bins
        scale = max(float(np.max(np.abs(b))), 1e-300)
        return bool(np.max(np.abs(b - np.conj(b[(-np.arange(len(b))) % len(b)]))) <= tol * scale)


def dft(signal) -> Spectrum:
    """Forward DFT of a real (or complex) 1-D sequence, 1/N normalized.

    Works for any length, including primes; length 52 is exact.
    """
    signal = np.asarray(signal)
    if signal.ndim != 1:
        raise InputDataError("dft expects a 1-D sequence")
    return Spectrum(dft_batch(signal))


def idft(spectrum, real: bool = True, tol: float = 1e-9):
    """Unnormalized inverse DFT.

    With ``real=True`` (the default) the spectrum must be conjugate
    symmetric, otherwise :class:`SpectrumSymmetryError` is raised; the
    returned sequence is real.  With ``real=False`` the complex sequence is
    returned unchecked.
    """
    bins = spectrum.bins if isinstance(spectrum, Spectrum) else np.asarray(spectrum, dtype=np.complex128)
    if bins.ndim != 1:
        raise InputDataError("idft expects a 1-D spectrum")
    out = idft_batch(bins)
    if not real:
        return out
    spec = spectrum if isinstance(spectrum, Spectrum) else Spectrum(bins)
    if not spec.is_conjugate_symmetric(tol):
        raise SpectrumSymmetryError(
            "spectrum is not conjugate symmetric; real output is undefined"
        )
    return out.real


def rdft_bins(signal: np.ndarray) -> np.ndarray:
    """Non-redundant bins 0..N//2 of the 1/N-normalized transform (last axis)."""
    n = np.asarray(signal).shape[-1]
    return dft_batch(signal)[..., : n // 2 + 1]


def circular_convolve_direct(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """1/N-scaled circular convolution by direct O(N^2) summation."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = x.shape[-1]
    if w.shape[-1] != n:
        raise InputDataError("circular convolution requires equal lengths")
    shifts = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return (x[..., None, :] * w[..., shifts]).sum(axis=-1) / n


def circular_convolve_fft(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same result as :func:`circular_convolve_direct` via the transform pair."""
    x = np.asarray(x)
    w = np.asarray(w)
    if w.shape[-1] != x.shape[-1]:
        raise InputDataError("circular convolution requires equal lengths")
    out = idft_batch(dft_batch(x) * dft_batch(w))
    if np.isrealobj(x) and np.isrealobj(w):
        return out.real
    return out


def circular_convolve(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """1/N-scaled circular convolution, the dual of bin-wise spectrum products.

    With the forward 1/N convention, ``dft(circular_convolve(x, w)) ==
    dft(x) * dft(w)`` holds exactly.
    """
    return circular_convolve_fft(x, w)
