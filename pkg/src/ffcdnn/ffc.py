"""Frequency-domain convolution layer.

Per spatial position the pixel's time series is transformed (1/N forward
DFT, non-redundant bins 0..N/2), multiplied bin-wise by a learnable complex
kernel of the same size, passed through ``relu(|spectrum * kernel| + bias)``
inside a configured medium-frequency band (zero outside it), and reduced to
one channel per pooling band by a max over that band's bins.  Bins 0..1
(phenology/background) and the high-frequency tail never reach the output,
which is the layer's denoising role.

The transform is applied along time only; the k x k spatial extent passes
through untouched and is mixed later by the capsule encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter
from .errors import InputDataError
from .fourier import idft_batch, rdft_bins

__all__ = ["BandMask", "FourierKernel", "FFCFeatures", "FFCLayer", "ffc_forward", "single_bin_bands"]


@dataclass(frozen=True)
class BandMask:
    """Inclusive bin range [low_bin, high_bin] within 0..n_bins-1."""

    low_bin: int
    high_bin: int

    def __post_init__(self):
        if not (0 <= self.low_bin <= self.high_bin):
            raise InputDataError(f"invalid band mask [{self.low_bin}, {self.high_bin}]")

    def validate_against(self, n_bins: int):
        if self.high_bin >= n_bins:
            raise InputDataError(
                f"band mask [{self.low_bin}, {self.high_bin}] outside bin range 0..{n_bins - 1}"
            )


def single_bin_bands(mask: BandMask) -> tuple:
    """One pooling band per bin of the mask (the default partition)."""
    return tuple((b, b) for b in range(mask.low_bin, mask.high_bin + 1))


def _validate_bands(bands, mask: BandMask) -> tuple:
    bands = tuple((int(lo), int(hi)) for lo, hi in bands)
    if not bands:
        raise InputDataError("pool bands must not be empty")
    expected = mask.low_bin
    for lo, hi in bands:
        if lo > hi:
            raise InputDataError(f"empty pool band ({lo}, {hi})")
        if lo != expected:
            raise InputDataError(
                f"pool bands must partition [{mask.low_bin}, {mask.high_bin}] contiguously"
            )
        expected = hi + 1
    if expected != mask.high_bin + 1:
        raise InputDataError(
            f"pool bands must end at mask bin {mask.high_bin}, got {bands[-1][1]}"
        )
    return bands


@dataclass(frozen=True)
class FourierKernel:
    """Complex bin-wise weights (k, k, n_bins) plus a real bias per position."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] != w.shape[1]:
            raise InputDataError(f"kernel weights must be (k, k, n_bins), got {w.shape}")
        if b.shape != w.shape:
            raise InputDataError("kernel bias must match the weight shape")
        if not (np.all(np.isfinite(w.view(np.float64))) and np.all(np.isfinite(b))):
            raise InputDataError("kernel parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @staticmethod
    def initial(k: int, n_bins: int, rng: np.random.Generator) -> "FourierKernel":
        """Unit-magnitude weights with uniform random phase; zero bias."""
        phase = rng.uniform(-np.pi, np.pi, size=(k, k, n_bins))
        return FourierKernel(np.exp(1j * phase), np.zeros((k, k, n_bins)))


@dataclass(frozen=True)
class FFCFeatures:
    """Pooled non-negative responses (k, k, n_bands) with band provenance."""

    values: np.ndarray
    bands: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != len(self.bands):
            raise InputDataError("feature block/band provenance mismatch")
        if np.any(v < 0):
            raise InputDataError("pooled features must be non-negative")
        object.__setattr__(self, "values", v)


class FFCLayer:
    """Trainable frequency-domain convolution over one input channel.

    ``forward`` consumes precomputed half-spectra, which lets a trainer
    transform the (fixed) inputs once per dataset; ``forward_time`` is the
    convenience path from time-domain patches.
    """

    def __init__(self, k: int, time_steps: int, mask: BandMask, pool_bands=None,
                 rng: np.random.Generator = None, name: str = "ffc"):
        if time_steps % 2 != 0:
            raise InputDataError("time_steps must be even")
        self.k = k
        self.time_steps = time_steps
        self.n_bins = time_steps // 2 + 1
        mask.validate_against(self.n_bins)
        self.mask = mask
        self.pool_bands = _validate_bands(
            single_bin_bands(mask) if pool_bands is None else pool_bands, mask
        )
        rng = rng or np.random.default_rng(0)
        init = FourierKernel.initial(k, self.n_bins, rng)
        self.weights = Parameter(init.weights, f"{name}.weights")
        self.bias = Parameter(init.bias, f"{name}.bias")
        self._cache = None

    @property
    def n_bands(self) -> int:
        return len(self.pool_bands)

    def params(self):
        return [self.weights, self.bias]

    def spectra(self, x_time: np.ndarray) -> np.ndarray:
        """Half-spectra (..., n_bins) of time patches (..., time_steps)."""
        if x_time.shape[-1] != self.time_steps:
            raise InputDataError(
                f"expected {self.time_steps} time steps, got {x_time.shape[-1]}"
            )
        return rdft_bins(x_time)

    def forward(self, spectra: np.ndarray) -> np.ndarray:
        """(B, k, k, n_bins) complex -> (B, k, k, n_bands) pooled features."""
        if spectra.shape[-3:] != (self.k, self.k, self.n_bins):
            raise InputDataError(
                f"expected spectra (..., {self.k}, {self.k}, {self.n_bins}), got {spectra.shape}"
            )
        z = spectra * self.weights.value
        mag = np.abs(z)
        pre = mag + self.bias.value
        active = np.zeros(z.shape, dtype=bool)
        lo, hi = self.mask.low_bin, self.mask.high_bin
        active[..., lo:hi + 1] = pre[..., lo:hi + 1] > 0
        gated = np.where(active, pre, 0.0)

        pooled = np.empty(z.shape[:-1] + (self.n_bands,), dtype=np.float64)
        argmax = np.empty(pooled.shape, dtype=np.intp)
        for q, (blo, bhi) in enumerate(self.pool_bands):
            window = gated[..., blo:bhi + 1]
            idx = np.argmax(window, axis=-1)  # ties resolve to the lowest bin
            pooled[..., q] = np.take_along_axis(window, idx[..., None], axis=-1)[..., 0]
            argmax[..., q] = idx + blo
        self._cache = (spectra, z, mag, active, argmax)
        return pooled

    def forward_time(self, x_time: np.ndarray) -> np.ndarray:
        return self.forward(self.spectra(x_time))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads; return the spectral input gradient.

        The returned array is complex: real/imag parts are the derivatives
        with respect to the real/imag parts of the input half-spectrum.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        spectra, z, mag, active, argmax = self._cache
        dgated = np.zeros(z.shape, dtype=np.float64)
        for q in range(self.n_bands):
            np.put_along_axis(
                dgated, argmax[..., q:q + 1],
                np.take_along_axis(dgated, argmax[..., q:q + 1], axis=-1)
                + dout[..., q:q + 1],
                axis=-1,
            )
        dpre = np.where(active, dgated, 0.0)

        self.bias.grad += dpre.sum(axis=tuple(range(dpre.ndim - 3)))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(mag > 0, z / np.where(mag > 0, mag, 1.0), 0.0)
        dmag = dpre
        self.weights.grad += (dmag * np.conj(spectra) * unit).sum(
            axis=tuple(range(dmag.ndim - 3))
        )
        return dmag * np.conj(self.weights.value) * unit

    def input_time_gradient(self, dspectra: np.ndarray) -> np.ndarray:
        """Pull a half-spectrum gradient back to the real time domain."""
        n = self.time_steps
        padded = np.zeros(dspectra.shape[:-1] + (n,), dtype=np.complex128)
        padded[..., : self.n_bins] = dspectra
        return idft_batch(padded).real / n


def ffc_forward(patch_channel: np.ndarray, kernel: FourierKernel, mask: BandMask,
                pool_bands) -> FFCFeatures:
    """One-shot functional form for a single (k, k, time_steps) channel."""
    patch_channel = np.asarray(patch_channel, dtype=np.float64)
    if patch_channel.ndim != 3 or patch_channel.shape[0] != patch_channel.shape[1]:
        raise InputDataError(f"expected (k, k, T) channel, got {patch_channel.shape}")
    k, _, t = patch_channel.shape
    layer = FFCLayer(k, t, mask, pool_bands)
    if kernel.weights.shape != (k, k, t // 2 + 1):
        raise InputDataError("kernel size must equal (k, k, T//2 + 1)")
    layer.weights.value = np.asarray(kernel.weights, dtype=np.complex128)
    layer.bias.value = np.asarray(kernel.bias, dtype=np.float64)
    values = layer.forward_time(patch_channel[None])[0]
    return FFCFeatures(values, layer.pool_bands)
