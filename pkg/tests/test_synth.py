"""Generator and labeling rules; spectral content checked by direct summation."""

import numpy as np
import pytest

from ffcdnn.config import PipelineConfig
from ffcdnn.errors import InputDataError
from ffcdnn.model import StressClass
from ffcdnn.synth import (
    DEFAULT_SIGNATURES,
    ClassSignature,
    SynthSample,
    generate,
    label_di,
    label_fertilizer,
    stack_patches,
)


def dft_matrix(n):
    """Direct-summation transform matrix built with explicit loops."""
    m = np.zeros((n, n), dtype=complex)
    for j in range(n):
        for t in range(n):
            m[j, t] = np.exp(-2j * np.pi * j * t / n) / n
    return m


def band_energy(samples, lo, hi, channel):
    """Mean spectral energy in bins [lo, hi] of one channel, per sample."""
    patches, _, _ = stack_patches(samples)
    n, k, _, t, _ = patches.shape
    fwd = dft_matrix(t)
    series = patches[..., channel].reshape(n * k * k, t)
    bins = series @ fwd.T
    energy = np.abs(bins[:, lo:hi + 1]) ** 2
    return energy.sum(axis=1).reshape(n, k * k).mean(axis=1)


def cfg(**kw):
    base = dict(k=3, K1=52, n_samples=60)
    base.update(kw)
    return PipelineConfig(**base).validate()


class TestLabelRules:
    def test_di_threshold(self):
        assert label_di(19.9) is StressClass.HEALTHY
        assert label_di(20.0) is StressClass.YELLOW_RUST
        assert label_di(0.0) is StressClass.HEALTHY
        assert label_di(100.0) is StressClass.YELLOW_RUST

    def test_di_out_of_range(self):
        with pytest.raises(InputDataError):
            label_di(-0.1)
        with pytest.raises(InputDataError):
            label_di(100.1)

    def test_fertilizer_controlled(self):
        assert label_fertilizer(200.0, "controlled") is StressClass.HEALTHY
        assert label_fertilizer(250.0, "controlled") is StressClass.HEALTHY
        assert label_fertilizer(100.0, "controlled") is StressClass.NITROGEN_DEFICIENCY
        assert label_fertilizer(0.0, "controlled") is StressClass.NITROGEN_DEFICIENCY

    def test_fertilizer_survey(self):
        assert label_fertilizer(149.0, "survey") is StressClass.NITROGEN_DEFICIENCY
        assert label_fertilizer(150.0, "survey") is StressClass.HEALTHY

    def test_fertilizer_negative_rejected(self):
        with pytest.raises(InputDataError):
            label_fertilizer(-1.0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(InputDataError):
            label_fertilizer(100.0, "other")


class TestGenerate:
    def test_class_proportions_within_one(self):
        for mix in ((0.34, 0.33, 0.33), (0.5, 0.25, 0.25), (0.1, 0.2, 0.7)):
            samples = generate(cfg(), n=97, class_mix=mix, seed=5)
            counts = np.bincount([int(s.label) for s in samples], minlength=3)
            for count, p in zip(counts, mix):
                assert abs(count - 97 * p) <= 1.0

    def test_all_healthy_mix(self):
        samples = generate(cfg(), n=20, class_mix=(1.0, 0.0, 0.0), seed=1)
        assert all(s.label is StressClass.HEALTHY for s in samples)
        assert all(s.severity == 0.0 for s in samples)

    def test_deterministic_under_seed(self):
        a = generate(cfg(), n=12, seed=9)
        b = generate(cfg(), n=12, seed=9)
        for sa, sb in zip(a, b):
            assert sa.label == sb.label and sa.severity == sb.severity
            assert np.array_equal(sa.patch.values, sb.patch.values)

    def test_patch_shape_and_finiteness(self):
        samples = generate(cfg(), n=6, seed=2)
        for s in samples:
            assert s.patch.values.shape == (3, 3, 52, 2)
            assert np.all(np.isfinite(s.patch.values))

    def test_severity_bounds_respected(self):
        samples = generate(cfg(severity_min=40, severity_max=90), n=60, seed=3)
        for s in samples:
            if s.label is not StressClass.HEALTHY:
                assert 40.0 <= s.severity <= 90.0

    def test_label_consistency_guard(self):
        # A yellow-rust sample below the DI threshold is a contradiction.
        with pytest.raises(InputDataError, match="severity_min"):
            generate(cfg(severity_min=5.0, severity_max=10.0), n=30,
                     class_mix=(0.0, 1.0, 0.0), seed=4)


class TestSpectralContent:
    N = 100

    def _mean_diff_sigma(self, a, b):
        diff = a.mean() - b.mean()
        stderr = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        return diff, stderr

    def test_yellow_rust_energy_in_low_band(self):
        c = cfg(severity_min=80, severity_max=80)
        healthy = generate(c, n=self.N, class_mix=(1, 0, 0), seed=11)
        rust = generate(c, n=self.N, class_mix=(0, 1, 0), seed=12)
        for channel in (0, 1):
            e_h = band_energy(healthy, 2, 4, channel)
            e_r = band_energy(rust, 2, 4, channel)
            diff, stderr = self._mean_diff_sigma(e_r, e_h)
            assert diff >= 5.0 * stderr, f"channel {channel}: {diff:.2e} vs {stderr:.2e}"

    def test_nitrogen_energy_in_mid_band_not_low(self):
        c = cfg(severity_min=80, severity_max=80)
        healthy = generate(c, n=self.N, class_mix=(1, 0, 0), seed=13)
        nitrogen = generate(c, n=self.N, class_mix=(0, 0, 1), seed=14)
        e_h = band_energy(healthy, 5, 15, 0)
        e_n = band_energy(nitrogen, 5, 15, 0)
        diff, stderr = self._mean_diff_sigma(e_n, e_h)
        assert diff >= 5.0 * stderr

        e_h = band_energy(healthy, 6, 13, 1)
        e_n = band_energy(nitrogen, 6, 13, 1)
        diff, stderr = self._mean_diff_sigma(e_n, e_h)
        assert diff >= 5.0 * stderr

        # and no excess where yellow rust lives
        for channel in (0, 1):
            e_h = band_energy(healthy, 2, 4, channel)
            e_n = band_energy(nitrogen, 2, 4, channel)
            diff, stderr = self._mean_diff_sigma(e_n, e_h)
            assert abs(diff) <= 3.0 * stderr

    def test_near_zero_severity_indistinguishable(self):
        # Nitrogen deficiency at (effectively) zero severity carries no
        # in-band energy beyond the shared construction.
        c = cfg(severity_min=1e-9, severity_max=1e-9)
        healthy = generate(c, n=self.N, class_mix=(1, 0, 0), seed=15)
        faint = generate(c, n=self.N, class_mix=(0, 0, 1), seed=16)
        e_h = band_energy(healthy, 5, 15, 0)
        e_f = band_energy(faint, 5, 15, 0)
        diff, stderr = self._mean_diff_sigma(e_f, e_h)
        assert abs(diff) <= 3.0 * stderr

    def test_in_band_energy_monotone_in_severity(self):
        grid = [0.001, 20.0, 40.0, 60.0, 80.0, 100.0]
        means = []
        for s in grid:
            c = cfg(severity_min=s, severity_max=s)
            batch = generate(c, n=50, class_mix=(0, 0, 1), seed=17)
            means.append(band_energy(batch, 5, 15, 0).mean())
        assert np.all(np.diff(means) >= 0), means


class TestTypes:
    def test_signature_band_validation(self):
        sig = ClassSignature(StressClass.YELLOW_RUST, (2, 30), (2, 4))
        with pytest.raises(InputDataError):
            sig.validate(nyquist=26)
        DEFAULT_SIGNATURES[StressClass.NITROGEN_DEFICIENCY].validate(nyquist=26)

    def test_sample_severity_range(self):
        patch = np.zeros((1, 1, 4, 2))
        from ffcdnn.vi import AgentPatch
        with pytest.raises(InputDataError):
            SynthSample(AgentPatch(patch), StressClass.HEALTHY, 120.0)
