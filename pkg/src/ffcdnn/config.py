"""Flat key-value run configuration.

One dataclass carries every tunable of the pipeline; the file format is
plain ``key = value`` lines (diffable, language neutral).  Key names follow
the module interfaces: ``k``/``K1`` patch side and time steps, ``band_low``/
``band_high``/``pool_bands``/``K2`` for the frequency layer, ``d_p``/``d_c``/
``K3``/``routing_iters`` for the capsule encoder, plus vegetation-index,
trainer, and generator settings.  The CLAIR/WDVI constants are calibration
placeholders and deliberately configurable.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import InputDataError
from .ffc import BandMask

__all__ = ["PipelineConfig", "DEFAULT_CONFIG"]


@dataclass
class PipelineConfig:
    # patch geometry and temporal grid
    k: int = 3
    K1: int = 52

    # frequency-layer band mask and pooling (bins index the K1-point DFT)
    band_low: int = 2
    band_high: int = 15
    pool_bands: str = "single"
    K2: int = 14

    # capsule encoder
    d_p: int = 8
    d_c: int = 16
    K3: int = 32
    routing_iters: int = 3

    # vegetation-index pre-filter
    soil_slope: float = 1.0
    clair_alpha: float = 0.4
    wdvi_inf: float = 0.6
    s2_band_mapping: str = "green:B3,red:B4,rededge:B5,nir:B8"

    # loss margins and trainer
    m_plus: float = 0.9
    m_minus: float = 0.1
    lambda_down: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 40
    seed: int = 7

    # synthetic data generator (amplitudes/widths calibrated on the standard
    # benchmark: seed 7, 5000/1000 split, severity >= 40)
    n_samples: int = 1000
    class_mix: str = "0.34,0.33,0.33"
    noise_sigma: float = 0.2
    severity_min: float = 40.0
    severity_max: float = 100.0
    severity_shape_a: float = 2.0
    severity_shape_b: float = 3.0
    lai_stress_gain: float = 0.28
    lcc_stress_gain: float = 0.2
    stress_waves: int = 2
    drift_gain: float = 0.15
    pixel_jitter: float = 0.05
    pheno_base: float = 0.35
    pheno_peak_low: float = 1.8
    pheno_peak_high: float = 3.8
    pheno_width_low: float = 0.5
    pheno_width_high: float = 2.5
    lcc_scale: float = 0.5

    # ------------------------------------------------------------------
    # parsed views

    def band_mask(self) -> BandMask:
        return BandMask(self.band_low, self.band_high)

    def pool_band_list(self) -> tuple:
        if self.pool_bands.strip() == "single":
            return tuple((b, b) for b in range(self.band_low, self.band_high + 1))
        bands = []
        for part in self.pool_bands.split(","):
            part = part.strip()
            try:
                lo, hi = (int(x) for x in part.split("-"))
            except ValueError:
                raise InputDataError(f"bad pool band {part!r}; expected 'lo-hi'") from None
            bands.append((lo, hi))
        return tuple(bands)

    def class_mix_tuple(self) -> tuple:
        try:
            mix = tuple(float(x) for x in self.class_mix.split(","))
        except ValueError:
            raise InputDataError(f"bad class_mix {self.class_mix!r}") from None
        return mix

    def band_mapping_dict(self) -> dict:
        mapping = {}
        for part in self.s2_band_mapping.split(","):
            try:
                role, band = part.strip().split(":")
            except ValueError:
                raise InputDataError(f"bad s2_band_mapping entry {part!r}") from None
            mapping[role.strip()] = band.strip()
        return mapping

    @property
    def n_bins(self) -> int:
        return self.K1 // 2 + 1

    @property
    def n_features(self) -> int:
        return 2 * self.k * self.k * self.K2

    # ------------------------------------------------------------------

    def validate(self) -> "PipelineConfig":
        if self.k < 1 or self.k % 2 == 0:
            raise InputDataError("k must be odd and >= 1")
        if self.K1 < 2 or self.K1 % 2 != 0:
            raise InputDataError("K1 must be even and >= 2")
        if not (0 <= self.band_low <= self.band_high <= self.K1 // 2):
            raise InputDataError("band mask must satisfy 0 <= band_low <= band_high <= K1/2")
        bands = self.pool_band_list()
        if len(bands) != self.K2:
            raise InputDataError(f"K2={self.K2} but pool_bands defines {len(bands)} bands")
        if self.d_p < 1 or self.d_c < 1:
            raise InputDataError("capsule dimensions must be >= 1")
        expected_k3 = math.ceil(self.n_features / self.d_p)
        if self.K3 != expected_k3:
            raise InputDataError(
                f"K3={self.K3} inconsistent with 2*k*k*K2/d_p (expected {expected_k3})"
            )
        if self.routing_iters < 1:
            raise InputDataError("routing_iters must be >= 1")
        if not (0 < self.m_minus < self.m_plus < 1):
            raise InputDataError("need 0 < m_minus < m_plus < 1")
        if self.lambda_down < 0:
            raise InputDataError("lambda_down must be >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise InputDataError("bad trainer settings")
        if self.soil_slope <= 0 or self.clair_alpha <= 0 or self.wdvi_inf <= 0:
            raise InputDataError("vegetation-index constants must be positive")
        mix = self.class_mix_tuple()
        if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-6:
            raise InputDataError("class_mix needs 3 non-negative proportions summing to 1")
        if not (0 <= self.severity_min <= self.severity_max <= 100):
            raise InputDataError("severity bounds must satisfy 0 <= min <= max <= 100")
        if self.noise_sigma < 0 or self.drift_gain < 0 or self.pixel_jitter < 0:
            raise InputDataError("noise settings must be >= 0")
        if self.stress_waves < 1:
            raise InputDataError("stress_waves must be >= 1")
        if self.n_samples < 1:
            raise InputDataError("n_samples must be >= 1")
        return self

    # ------------------------------------------------------------------
    # flat text round trip

    def to_text(self) -> str:
        lines = []
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            lines.append(f"{field.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputDataError(f"{source}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in fields:
                raise InputDataError(f"{source}:{lineno}: unknown config key {key!r}")
            ftype = fields[key].type
            try:
                if ftype == "int":
                    values[key] = int(val)
                elif ftype == "float":
                    values[key] = float(val)
                else:
                    values[key] = val
            except ValueError:
                raise InputDataError(
                    f"{source}:{lineno}: bad {ftype} value for {key}: {val!r}"
                ) from None
        return cls(**values).validate()

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise InputDataError(f"no such config file: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), source=str(path))

    def replace(self, **updates) -> "PipelineConfig":
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


DEFAULT_CONFIG = PipelineConfig()
