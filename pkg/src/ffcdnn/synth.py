"""Labeled synthetic patch generator with controlled spectral signatures.

Each sample is a seasonal double-logistic base curve (green-up then
senescence; the LCC channel is a scaled copy), plus class-specific
sinusoids whose bin positions come from the class signature and whose
amplitude scales with severity, plus white noise and a slow background
drift occupying bins 0-1.  The stress signal and drift are shared across
the k x k patch (spatial correlation); noise is per pixel.

Default class signatures put yellow-rust energy in bins 2-4 of both
channels and nitrogen-deficiency energy in LAI bins 5-15 / LCC bins 6-13
of the 52-step season grid, whose Nyquist bin is 26.  Severity is the
0-100 disease index for yellow rust and the fertilizer deficit
(percent short of the 200 kg/ha control rate) for nitrogen deficiency.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .errors import InputDataError
from .model import StressClass
from .vi import AgentPatch

__all__ = [
    "ClassSignature",
    "SynthSample",
    "DEFAULT_SIGNATURES",
    "label_di",
    "label_fertilizer",
    "generate",
    "split_dataset",
    "stack_patches",
    "vi_pair_to_bands",
]

HEALTHY_RATE_KG_HA = 200.0
SURVEY_DEFICIENT_BELOW_KG_HA = 150.0
DI_HEALTHY_BELOW = 20.0


@dataclass(frozen=True)
class ClassSignature:
    """Stress fingerprint: per-channel bin ranges and a severity gain factor."""

    label: StressClass
    lai_band: Optional[tuple]
    lcc_band: Optional[tuple]
    gain_scale: float = 1.0

    def band(self, channel: str) -> Optional[tuple]:
        return self.lai_band if channel == "lai" else self.lcc_band

    def validate(self, nyquist: int):
        for band in (self.lai_band, self.lcc_band):
            if band is None:
                continue
            lo, hi = band
            if not (1 <= lo <= hi <= nyquist):
                raise InputDataError(
                    f"signature band {band} outside 1..{nyquist} for {self.label.label}"
                )


DEFAULT_SIGNATURES = {
    StressClass.HEALTHY: ClassSignature(StressClass.HEALTHY, None, None),
    StressClass.YELLOW_RUST: ClassSignature(StressClass.YELLOW_RUST, (2, 4), (2, 4)),
    StressClass.NITROGEN_DEFICIENCY: ClassSignature(
        StressClass.NITROGEN_DEFICIENCY, (5, 15), (6, 13)
    ),
}


@dataclass(frozen=True)
class SynthSample:
    patch: AgentPatch
    label: StressClass
    severity: float

    def __post_init__(self):
        if not (0.0 <= self.severity <= 100.0):
            raise InputDataError("severity must lie in [0, 100]")


def label_di(di: float) -> StressClass:
    """Disease-index rule: DI < 20 reads healthy, DI >= 20 reads yellow rust."""
    if not (0.0 <= di <= 100.0):
        raise InputDataError(f"disease index {di!r} outside [0, 100]")
    return StressClass.HEALTHY if di < DI_HEALTHY_BELOW else StressClass.YELLOW_RUST


def label_fertilizer(rate_kg_ha: float, mode: str = "controlled") -> StressClass:
    """Fertilization rule.

    ``controlled``: the 200 kg/ha treatment group is healthy, anything less
    is nitrogen deficient.  ``survey``: reported application below
    150 kg/ha is nitrogen deficient.
    """
    if rate_kg_ha < 0:
        raise InputDataError("fertilizer rate must be >= 0")
    if mode == "controlled":
        return (StressClass.HEALTHY if rate_kg_ha >= HEALTHY_RATE_KG_HA
                else StressClass.NITROGEN_DEFICIENCY)
    if mode == "survey":
        return (StressClass.NITROGEN_DEFICIENCY
                if rate_kg_ha < SURVEY_DEFICIENT_BELOW_KG_HA
                else StressClass.HEALTHY)
    raise InputDataError(f"unknown labeling mode {mode!r}")


def _class_counts(n: int, mix) -> np.ndarray:
    """Largest-remainder apportionment; off by at most one sample per class."""
    mix = np.asarray(mix, dtype=np.float64)
    if mix.size != 3 or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-6:
        raise InputDataError("class mix needs 3 non-negative proportions summing to 1")
    exact = mix * n
    counts = np.floor(exact).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    for i in range(remainder):
        counts[order[i]] += 1
    return counts


def _double_logistic(t: np.ndarray, base: float, peak: float,
                     t_up: float, w_up: float, t_down: float, w_down: float) -> np.ndarray:
    rise = 1.0 / (1.0 + np.exp(-(t - t_up) / w_up))
    fall = 1.0 / (1.0 + np.exp(-(t - t_down) / w_down))
    return base + (peak - base) * (rise - fall)


def _stress_wave(rng: np.random.Generator, t: np.ndarray, band: tuple,
                 amplitude: float, n_waves: int, time_steps: int) -> np.ndarray:
    lo, hi = band
    bins = np.arange(lo, hi + 1)
    chosen = rng.choice(bins, size=min(n_waves, bins.size), replace=False)
    wave = np.zeros_like(t)
    for b in chosen:
        amp = amplitude * rng.uniform(0.75, 1.25)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave += amp * np.cos(2.0 * np.pi * b * t / time_steps + phase)
    return wave


def _severity(rng: np.random.Generator, cfg: PipelineConfig) -> float:
    draw = rng.beta(cfg.severity_shape_a, cfg.severity_shape_b)
    return float(cfg.severity_min + (cfg.severity_max - cfg.severity_min) * draw)


def generate(config: PipelineConfig, n: int = None, class_mix=None,
             noise_sigma: float = None, seed: int = None,
             signatures: dict = None) -> list:
    """Generate ``n`` labeled SynthSamples, deterministic under ``seed``.

    Per-sample seeds are spawned from the root seed, so generation order
    (or parallel evaluation) cannot change any sample's content.
    """
    config.validate()
    n = n if n is not None else config.n_samples
    if n < 1:
        raise InputDataError("need n >= 1 samples")
    mix = class_mix if class_mix is not None else config.class_mix_tuple()
    sigma = config.noise_sigma if noise_sigma is None else float(noise_sigma)
    seed = config.seed if seed is None else int(seed)
    signatures = {**DEFAULT_SIGNATURES, **(signatures or {})}
    nyquist = config.K1 // 2
    for sig in signatures.values():
        sig.validate(nyquist)

    counts = _class_counts(n, mix)
    labels = np.repeat(np.arange(3, dtype=int), counts)
    labels = labels[np.random.default_rng([seed, 4]).permutation(n)]

    t = np.arange(config.K1, dtype=np.float64)
    children = np.random.SeedSequence([seed, 5]).spawn(n)
    gains = {"lai": config.lai_stress_gain, "lcc": config.lcc_stress_gain}
    samples = []
    for i in range(n):
        rng = np.random.default_rng(children[i])
        label = StressClass(int(labels[i]))
        sig = signatures[label]

        if label is StressClass.HEALTHY:
            severity = 0.0
        else:
            severity = _severity(rng, cfg=config)

        peak = rng.uniform(config.pheno_peak_low, config.pheno_peak_high)
        t_up = rng.uniform(0.15, 0.30) * config.K1
        t_down = rng.uniform(0.65, 0.85) * config.K1
        w_up = rng.uniform(config.pheno_width_low, config.pheno_width_high)
        w_down = rng.uniform(config.pheno_width_low, config.pheno_width_high)
        base_lai = _double_logistic(t, config.pheno_base, peak, t_up, w_up, t_down, w_down)
        base_lcc = config.lcc_scale * base_lai

        shared = np.empty((config.K1, 2))
        for ci, (channel, base) in enumerate((("lai", base_lai), ("lcc", base_lcc))):
            curve = base.copy()
            band = sig.band(channel)
            if band is not None and severity > 0:
                amplitude = gains[channel] * sig.gain_scale * severity / 100.0
                curve += _stress_wave(rng, t, band, amplitude, config.stress_waves, config.K1)
            drift_dc = rng.normal(0.0, config.drift_gain)
            drift_amp = abs(rng.normal(0.0, config.drift_gain))
            drift_phase = rng.uniform(0.0, 2.0 * np.pi)
            curve += drift_dc + drift_amp * np.cos(2.0 * np.pi * t / config.K1 + drift_phase)
            shared[:, ci] = curve

        jitter = 1.0 + rng.normal(0.0, config.pixel_jitter, size=(config.k, config.k, 1, 1))
        noise = rng.normal(0.0, sigma, size=(config.k, config.k, config.K1, 2))
        values = shared[None, None, :, :] * jitter + noise
        sample = SynthSample(AgentPatch(values), label, severity)
        _check_label_consistency(sample)
        samples.append(sample)
    return samples


def _check_label_consistency(sample: SynthSample):
    if sample.label is StressClass.YELLOW_RUST:
        if label_di(sample.severity) is not StressClass.YELLOW_RUST:
            raise InputDataError(
                f"yellow-rust severity {sample.severity:.1f} is below the DI "
                f"labeling threshold {DI_HEALTHY_BELOW}; raise severity_min"
            )
    elif sample.label is StressClass.NITROGEN_DEFICIENCY:
        rate = HEALTHY_RATE_KG_HA * (1.0 - sample.severity / 100.0)
        if label_fertilizer(rate, "controlled") is not StressClass.NITROGEN_DEFICIENCY:
            raise InputDataError("nitrogen-deficiency severity must be > 0")


def stack_patches(samples) -> tuple:
    """(patches (n,k,k,T,2), labels (n,), severities (n,)) from SynthSamples."""
    patches = np.stack([s.patch.values for s in samples])
    labels = np.array([int(s.label) for s in samples], dtype=np.intp)
    severities = np.array([s.severity for s in samples], dtype=np.float64)
    return patches, labels, severities


def split_dataset(samples, n_train: int):
    """Leading n_train samples train, the rest test (order is already shuffled)."""
    if not (0 < n_train < len(samples)):
        raise InputDataError("n_train must split the dataset into two non-empty parts")
    return samples[:n_train], samples[n_train:]


def vi_pair_to_bands(vi_lai_value: float, vi_lcc_value: float,
                     config: PipelineConfig) -> dict:
    """Map a (vi_lai, vi_lcc) pair to a consistent synthetic band vector.

    The anchor reflectances (red = red-edge = 0.2) make the index
    computation exactly invertible: running the returned bands back through
    the pre-filter reproduces the pair.  Inputs are clamped to the
    representable domain (small positive proxies).
    """
    lai = max(float(vi_lai_value), 1e-3)
    lcc = max(float(vi_lcc_value), 1e-3)
    red = 0.2
    wdvi = config.wdvi_inf * (1.0 - np.exp(-config.clair_alpha * lai))
    nir = wdvi + config.soil_slope * red
    osavi = 1.16 * (nir - red) / (nir + red + 0.16)
    green = red + lcc * osavi / 0.6
    return {
        "B2": 0.05,
        "B3": float(green),
        "B4": red,
        "B5": red,
        "B6": float(nir * 0.95),
        "B7": float(nir * 0.98),
        "B8": float(nir),
    }
