"""Model zoo and trainer.

``FFCDNN`` is the full two-branch architecture: per-channel frequency
convolution (LAI branch / LCC branch), feature normalization, primary
capsule encoding, dynamic routing to three class capsules, and a
length-based classifier.  Ablation variants strip it down (``base``:
flattened series -> affine -> softmax; ``ffc``: frequency features ->
affine -> softmax) and ``cnn`` is the conventional baseline with four
temporal convolution layers and two fully connected layers.

Training is mini-batch gradient descent with adaptive moment estimates,
deterministic under a fixed seed.  The capsule model trains on a margin
loss over class-capsule lengths; the softmax models use cross-entropy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .autodiff import Parameter
from .capsule import (
    ClassCapsules,
    FeatureNorm,
    FeatureProvenance,
    PrimaryCapsuleEncoder,
    RoutingLayer,
)
from .config import PipelineConfig
from .errors import InputDataError, NumericFailure
from .ffc import FFCLayer
from .vi import AgentPatch

__all__ = [
    "StressClass",
    "Prediction",
    "classify",
    "classify_batch",
    "activation_lengths",
    "activation_lengths_vjp",
    "margin_loss",
    "margin_loss_batch",
    "Adam",
    "FFCDNN",
    "BaseMLP",
    "FFCSoftmax",
    "CNNBaseline",
    "build_model",
    "ablation_variant",
    "TrainHistory",
    "train",
    "stratified_folds",
    "cross_validate",
]


class StressClass(IntEnum):
    HEALTHY = 0
    YELLOW_RUST = 1
    NITROGEN_DEFICIENCY = 2

    @property
    def label(self) -> str:
        return {0: "Healthy", 1: "YellowRust", 2: "NitrogenDeficiency"}[int(self)]

    @staticmethod
    def from_label(text: str) -> "StressClass":
        table = {
            "healthy": StressClass.HEALTHY,
            "yellowrust": StressClass.YELLOW_RUST,
            "nitrogendeficiency": StressClass.NITROGEN_DEFICIENCY,
        }
        key = text.strip().lower()
        if key not in table:
            raise InputDataError(f"unknown class label {text!r}")
        return table[key]


@dataclass(frozen=True)
class Prediction:
    """Classifier output: winning class, activation lengths, runner-up margin."""

    label: StressClass
    lengths: tuple
    margin: float
    tie: bool = field(default=False)


def activation_lengths(vectors: np.ndarray) -> np.ndarray:
    """Classifier activation: squash-compressed lengths |V|^2 / (1 + |V|^2).

    Monotone in the capsule length, so the winning class is unchanged by
    the compression; values land in [0, 1) and read as class memberships.
    """
    norms = np.linalg.norm(vectors, axis=-1)
    return norms * norms / (1.0 + norms * norms)


def activation_lengths_vjp(dout: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`activation_lengths`: d(n^2/(1+n^2)) = 2 V/(1+n^2)^2."""
    norms_sq = np.sum(vectors * vectors, axis=-1, keepdims=True)
    return dout[..., None] * 2.0 * vectors / (1.0 + norms_sq) ** 2


def classify_batch(vectors: np.ndarray) -> np.ndarray:
    """Argmax class per sample from capsule vectors (..., 3, class_dim)."""
    return np.argmax(activation_lengths(vectors), axis=-1)


def classify(capsules: ClassCapsules) -> Prediction:
    """Classify one sample; ties break to the lowest class index and are flagged."""
    vectors = capsules.vectors
    if vectors.ndim != 2:
        raise InputDataError("classify expects a single sample's class capsules")
    acts = activation_lengths(vectors)
    order = np.argsort(acts)[::-1]
    best = int(np.argmax(acts))  # first maximum == lowest index on ties
    runner = acts[order[1]] if acts.size > 1 else 0.0
    tie = bool(np.isclose(acts[best], runner, rtol=0.0, atol=0.0) or acts[best] == runner)
    return Prediction(
        label=StressClass(best),
        lengths=tuple(float(a) for a in acts),
        margin=float(acts[best] - runner),
        tie=tie,
    )


def margin_loss_batch(vectors: np.ndarray, labels: np.ndarray,
                      m_plus: float = 0.9, m_minus: float = 0.1,
                      lambda_down: float = 0.5):
    """Mean margin loss over a batch; returns (loss, dvectors, n_correct).

    Per sample: sum_h [ T_h relu(m+ - |V_h|)^2
                        + lambda (1 - T_h) relu(|V_h| - m-)^2 ].
    """
    labels = np.asarray(labels, dtype=np.intp)
    if np.any(labels < 0) or np.any(labels >= vectors.shape[-2]):
        raise InputDataError("label index out of range")
    batch = vectors.shape[0]
    lengths = np.linalg.norm(vectors, axis=-1)
    onehot = np.zeros_like(lengths)
    onehot[np.arange(batch), labels] = 1.0

    pos = np.maximum(0.0, m_plus - lengths)
    neg = np.maximum(0.0, lengths - m_minus)
    loss = float(np.sum(onehot * pos**2 + lambda_down * (1 - onehot) * neg**2) / batch)

    dlengths = (-2.0 * onehot * pos + 2.0 * lambda_down * (1 - onehot) * neg) / batch
    safe = np.where(lengths > 0, lengths, 1.0)
    dvectors = np.where(lengths[..., None] > 0,
                        dlengths[..., None] * vectors / safe[..., None], 0.0)
    n_correct = int(np.sum(np.argmax(lengths, axis=-1) == labels))
    return loss, dvectors, n_correct


def margin_loss(capsules: ClassCapsules, label,
                m_plus: float = 0.9, m_minus: float = 0.1,
                lambda_down: float = 0.5) -> float:
    """Margin loss of a single sample's class capsules."""
    loss, _, _ = margin_loss_batch(
        capsules.vectors[None], np.array([int(label)]), m_plus, m_minus, lambda_down
    )
    return loss


def _softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy; returns (loss, dlogits, n_correct)."""
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    picked = probs[np.arange(batch), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    n_correct = int(np.sum(np.argmax(logits, axis=1) == labels))
    return loss, dlogits, n_correct


# ---------------------------------------------------------------------------
# small trainable stages


class Affine:
    def __init__(self, n_in: int, n_out: int, rng=None, scale: float = None, name="affine"):
        if rng is None or scale == 0.0:
            weights = np.zeros((n_in, n_out))
        else:
            scale = scale if scale is not None else 1.0 / np.sqrt(n_in)
            weights = rng.standard_normal((n_in, n_out)) * scale
        self.weights = Parameter(weights, f"{name}.weights")
        self.bias = Parameter(np.zeros(n_out), f"{name}.bias")
        self._cache = None

    def params(self):
        return [self.weights, self.bias]

    def forward(self, x):
        self._cache = x
        return x @ self.weights.value + self.bias.value

    def backward(self, dout):
        x = self._cache
        self.weights.grad += x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weights.value.T


class ReLUStage:
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class Conv1dTemporal:
    """Same-padded temporal convolution, kernel length 3."""

    KERNEL = 3

    def __init__(self, c_in: int, c_out: int, rng, name="conv"):
        scale = np.sqrt(2.0 / (self.KERNEL * c_in))
        self.weights = Parameter(
            rng.standard_normal((self.KERNEL, c_in, c_out)) * scale, f"{name}.weights"
        )
        self.bias = Parameter(np.zeros(c_out), f"{name}.bias")
        self._cache = None

    def params(self):
        return [self.weights, self.bias]

    def forward(self, x):
        """(B, T, c_in) -> (B, T, c_out)."""
        b, t, c = x.shape
        padded = np.zeros((b, t + 2, c))
        padded[:, 1:-1, :] = x
        cols = np.stack([padded[:, s:s + t, :] for s in range(self.KERNEL)], axis=2)
        self._cache = (cols, t)
        return np.einsum("btkc,kco->bto", cols, self.weights.value) + self.bias.value

    def backward(self, dout):
        cols, t = self._cache
        self.weights.grad += np.einsum("btkc,bto->kco", cols, dout)
        self.bias.grad += dout.sum(axis=(0, 1))
        dcols = np.einsum("bto,kco->btkc", dout, self.weights.value)
        dpadded = np.zeros((dout.shape[0], t + 2, cols.shape[-1]))
        for s in range(self.KERNEL):
            dpadded[:, s:s + t, :] += dcols[:, :, s, :]
        return dpadded[:, 1:-1, :]


class Adam:
    """Adaptive-moment mini-batch updates; complex parameters update per
    real component through an interleaved float view."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros(self._view(p.value).shape) for p in self.params]
        self._v = [np.zeros(self._view(p.value).shape) for p in self.params]

    @staticmethod
    def _view(arr):
        if np.iscomplexobj(arr):
            return arr.view(np.float64)
        return arr

    def step(self):
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = self._view(p.grad)
            m[...] = self.beta1 * m + (1 - self.beta1) * g
            v[...] = self.beta2 * v + (1 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            self._view(p.value)[...] -= self.lr * update

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# models


def _check_patches(x: np.ndarray, k: int, t: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[1:] != (k, k, t, 2):
        raise InputDataError(f"expected patches (n, {k}, {k}, {t}, 2), got {x.shape}")
    return x


class FFCDNN:
    """Two frequency-convolution branches, capsule encoder, length classifier."""

    kind = "full"

    def __init__(self, config: PipelineConfig, rng: np.random.Generator = None):
        config.validate()
        self.config = config
        rng = rng or np.random.default_rng([config.seed, 0])
        mask = config.band_mask()
        bands = config.pool_band_list()
        self.branch_lai = FFCLayer(config.k, config.K1, mask, bands, rng, "lai")
        self.branch_lcc = FFCLayer(config.k, config.K1, mask, bands, rng, "lcc")
        n_features = config.n_features
        self.norm = FeatureNorm(n_features)
        self.encoder = PrimaryCapsuleEncoder(
            n_features, config.d_p, self._source_map(config.k, bands)
        )
        if self.encoder.n_capsules != config.K3:
            raise InputDataError(
                f"K3={config.K3} does not match encoder capsule count {self.encoder.n_capsules}"
            )
        self.routing = RoutingLayer(config.K3, config.d_p, config.d_c,
                                    config.routing_iters, rng)
        self._feature_split = None

    @staticmethod
    def _source_map(k: int, bands):
        entries = []
        for branch in ("lai", "lcc"):
            for row in range(k):
                for col in range(k):
                    for lo, hi in bands:
                        entries.append(FeatureProvenance(branch, row, col, lo, hi))
        return tuple(entries)

    @property
    def source_map(self):
        return self.encoder.source_map

    def params(self):
        return (self.branch_lai.params() + self.branch_lcc.params()
                + self.norm.params() + self.routing.params())

    def prepare(self, x: np.ndarray):
        """Precompute per-branch half-spectra once; they are input-only."""
        x = _check_patches(x, self.config.k, self.config.K1)
        return (self.branch_lai.spectra(x[..., 0]), self.branch_lcc.spectra(x[..., 1]))

    def forward(self, prepared, training: bool = False) -> np.ndarray:
        spec_lai, spec_lcc = prepared
        f_lai = self.branch_lai.forward(spec_lai)
        f_lcc = self.branch_lcc.forward(spec_lcc)
        batch = f_lai.shape[0]
        features = np.concatenate(
            [f_lai.reshape(batch, -1), f_lcc.reshape(batch, -1)], axis=1
        )
        self._feature_split = (f_lai.shape, f_lcc.shape)
        normed = self.norm.forward(features, training=training)
        u = self.encoder.forward(normed)
        vectors, self.routing_state = self.routing.forward(u)
        return vectors

    def backward(self, dvectors: np.ndarray, want_input_grad: bool = False):
        du = self.routing.backward(dvectors)
        dnormed = self.encoder.backward(du)
        dfeatures = self.norm.backward(dnormed)
        shape_lai, shape_lcc = self._feature_split
        n_lai = int(np.prod(shape_lai[1:]))
        d_lai = dfeatures[:, :n_lai].reshape(shape_lai)
        d_lcc = dfeatures[:, n_lai:].reshape(shape_lcc)
        dspec_lai = self.branch_lai.backward(d_lai)
        dspec_lcc = self.branch_lcc.backward(d_lcc)
        if not want_input_grad:
            return None
        dx_lai = self.branch_lai.input_time_gradient(dspec_lai)
        dx_lcc = self.branch_lcc.input_time_gradient(dspec_lcc)
        return np.stack([dx_lai, dx_lcc], axis=-1)

    def loss_and_grad(self, prepared, labels, want_input_grad: bool = False,
                      training: bool = True):
        vectors = self.forward(prepared, training=training)
        cfg = self.config
        loss, dvectors, n_correct = margin_loss_batch(
            vectors, labels, cfg.m_plus, cfg.m_minus, cfg.lambda_down
        )
        dx = self.backward(dvectors, want_input_grad)
        if want_input_grad:
            return loss, n_correct, dx
        return loss, n_correct

    def predict(self, prepared) -> np.ndarray:
        return classify_batch(self.forward(prepared, training=False))

    def classify_patch(self, patch: AgentPatch):
        """Single-patch inference: returns (ClassCapsules, Prediction)."""
        prepared = self.prepare(patch.values[None])
        vectors = self.forward(prepared, training=False)[0]
        capsules = ClassCapsules(vectors)
        return capsules, classify(capsules)

    def feature_analysis(self, prepared) -> dict:
        """Intermediate representations for the interpretability pipeline."""
        spec_lai, spec_lcc = prepared
        f_lai = self.branch_lai.forward(spec_lai)
        f_lcc = self.branch_lcc.forward(spec_lcc)
        batch = f_lai.shape[0]
        features = np.concatenate(
            [f_lai.reshape(batch, -1), f_lcc.reshape(batch, -1)], axis=1
        )
        normed = self.norm.forward(features, training=False)
        u = self.encoder.forward(normed)
        vectors, state = self.routing.forward(u)
        return {
            "ffc_features": features,
            "capsule_components": normed,
            "primary_capsules": u,
            "class_vectors": vectors,
            "coupling": state.coupling,
            "provenance": self.source_map[: features.shape[1]],
        }

    def state_items(self):
        return [
            ("lai.weights", self.branch_lai.weights.value),
            ("lai.bias", self.branch_lai.bias.value),
            ("lcc.weights", self.branch_lcc.weights.value),
            ("lcc.bias", self.branch_lcc.bias.value),
            ("norm.scale", self.norm.scale.value),
            ("norm.shift", self.norm.shift.value),
            ("norm.running_mean", self.norm.running_mean),
            ("norm.running_var", self.norm.running_var),
            ("routing.transforms", self.routing.transforms.value),
        ]

    def load_state(self, arrays: dict):
        self.branch_lai.weights.value = arrays["lai.weights"]
        self.branch_lai.bias.value = arrays["lai.bias"]
        self.branch_lcc.weights.value = arrays["lcc.weights"]
        self.branch_lcc.bias.value = arrays["lcc.bias"]
        self.norm.scale.value = arrays["norm.scale"]
        self.norm.shift.value = arrays["norm.shift"]
        self.norm.running_mean = arrays["norm.running_mean"]
        self.norm.running_var = arrays["norm.running_var"]
        self.routing.transforms.value = arrays["routing.transforms"]


class BaseMLP:
    """Ablation floor: flattened series -> zero-initialized affine -> softmax."""

    kind = "base"

    def __init__(self, config: PipelineConfig, rng: np.random.Generator = None):
        config.validate()
        self.config = config
        n_in = config.k * config.k * config.K1 * 2
        self.affine = Affine(n_in, 3, name="base.affine")

    def params(self):
        return self.affine.params()

    def prepare(self, x):
        x = _check_patches(x, self.config.k, self.config.K1)
        return (x.reshape(x.shape[0], -1),)

    def forward(self, prepared, training: bool = False):
        return self.affine.forward(prepared[0])

    def loss_and_grad(self, prepared, labels):
        logits = self.forward(prepared, training=True)
        loss, dlogits, n_correct = _softmax_cross_entropy(logits, labels)
        self.affine.backward(dlogits)
        return loss, n_correct

    def predict(self, prepared):
        return np.argmax(self.forward(prepared), axis=1)

    def probabilities(self, prepared):
        logits = self.forward(prepared)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)

    def state_items(self):
        return [("affine.weights", self.affine.weights.value),
                ("affine.bias", self.affine.bias.value)]

    def load_state(self, arrays):
        self.affine.weights.value = arrays["affine.weights"]
        self.affine.bias.value = arrays["affine.bias"]


class FFCSoftmax:
    """Middle ablation rung: frequency features -> affine -> softmax."""

    kind = "ffc"

    def __init__(self, config: PipelineConfig, rng: np.random.Generator = None):
        config.validate()
        self.config = config
        rng = rng or np.random.default_rng([config.seed, 0])
        mask = config.band_mask()
        bands = config.pool_band_list()
        self.branch_lai = FFCLayer(config.k, config.K1, mask, bands, rng, "lai")
        self.branch_lcc = FFCLayer(config.k, config.K1, mask, bands, rng, "lcc")
        self.affine = Affine(config.n_features, 3, name="head.affine")

    def params(self):
        return self.branch_lai.params() + self.branch_lcc.params() + self.affine.params()

    def prepare(self, x):
        x = _check_patches(x, self.config.k, self.config.K1)
        return (self.branch_lai.spectra(x[..., 0]), self.branch_lcc.spectra(x[..., 1]))

    def forward(self, prepared, training: bool = False):
        f_lai = self.branch_lai.forward(prepared[0])
        f_lcc = self.branch_lcc.forward(prepared[1])
        batch = f_lai.shape[0]
        self._shapes = (f_lai.shape, f_lcc.shape)
        features = np.concatenate(
            [f_lai.reshape(batch, -1), f_lcc.reshape(batch, -1)], axis=1
        )
        return self.affine.forward(features)

    def loss_and_grad(self, prepared, labels):
        logits = self.forward(prepared, training=True)
        loss, dlogits, n_correct = _softmax_cross_entropy(logits, labels)
        dfeatures = self.affine.backward(dlogits)
        shape_lai, shape_lcc = self._shapes
        n_lai = int(np.prod(shape_lai[1:]))
        self.branch_lai.backward(dfeatures[:, :n_lai].reshape(shape_lai))
        self.branch_lcc.backward(dfeatures[:, n_lai:].reshape(shape_lcc))
        return loss, n_correct

    def predict(self, prepared):
        return np.argmax(self.forward(prepared), axis=1)

    def state_items(self):
        return [
            ("lai.weights", self.branch_lai.weights.value),
            ("lai.bias", self.branch_lai.bias.value),
            ("lcc.weights", self.branch_lcc.weights.value),
            ("lcc.bias", self.branch_lcc.bias.value),
            ("affine.weights", self.affine.weights.value),
            ("affine.bias", self.affine.bias.value),
        ]

    def load_state(self, arrays):
        self.branch_lai.weights.value = arrays["lai.weights"]
        self.branch_lai.bias.value = arrays["lai.bias"]
        self.branch_lcc.weights.value = arrays["lcc.weights"]
        self.branch_lcc.bias.value = arrays["lcc.bias"]
        self.affine.weights.value = arrays["affine.weights"]
        self.affine.bias.value = arrays["affine.bias"]


class CNNBaseline:
    """Four temporal convolutions (widths 16/32/32/64) + two affine layers."""

    kind = "cnn"
    WIDTHS = (16, 32, 32, 64)
    HIDDEN = 64

    def __init__(self, config: PipelineConfig, rng: np.random.Generator = None):
        config.validate()
        self.config = config
        rng = rng or np.random.default_rng([config.seed, 0])
        widths = (2,) + self.WIDTHS
        self.convs = [
            Conv1dTemporal(widths[i], widths[i + 1], rng, f"conv{i + 1}")
            for i in range(4)
        ]
        self.relus = [ReLUStage() for _ in range(5)]
        n_flat = config.k * config.k * config.K1 * self.WIDTHS[-1]
        self.fc1 = Affine(n_flat, self.HIDDEN, rng, name="fc1")
        self.fc2 = Affine(self.HIDDEN, 3, rng, name="fc2")

    def params(self):
        out = []
        for conv in self.convs:
            out.extend(conv.params())
        return out + self.fc1.params() + self.fc2.params()

    def prepare(self, x):
        x = _check_patches(x, self.config.k, self.config.K1)
        return (x,)

    def forward(self, prepared, training: bool = False):
        x = prepared[0]
        batch = x.shape[0]
        k, t = self.config.k, self.config.K1
        z = x.reshape(batch * k * k, t, 2)
        for conv, relu in zip(self.convs, self.relus[:4]):
            z = relu.forward(conv.forward(z))
        self._conv_out_shape = z.shape
        flat = z.reshape(batch, -1)
        hidden = self.relus[4].forward(self.fc1.forward(flat))
        return self.fc2.forward(hidden)

    def loss_and_grad(self, prepared, labels, want_input_grad: bool = False):
        logits = self.forward(prepared, training=True)
        loss, dlogits, n_correct = _softmax_cross_entropy(logits, labels)
        dhidden = self.relus[4].backward(self.fc2.backward(dlogits))
        dflat = self.fc1.backward(dhidden)
        dz = dflat.reshape(self._conv_out_shape)
        for conv, relu in zip(reversed(self.convs), reversed(self.relus[:4])):
            dz = conv.backward(relu.backward(dz))
        if want_input_grad:
            batch = prepared[0].shape[0]
            k, t = self.config.k, self.config.K1
            return loss, n_correct, dz.reshape(batch, k, k, t, 2)
        return loss, n_correct

    def predict(self, prepared):
        return np.argmax(self.forward(prepared), axis=1)

    def state_items(self):
        items = []
        for i, conv in enumerate(self.convs, start=1):
            items.append((f"conv{i}.weights", conv.weights.value))
            items.append((f"conv{i}.bias", conv.bias.value))
        items += [("fc1.weights", self.fc1.weights.value),
                  ("fc1.bias", self.fc1.bias.value),
                  ("fc2.weights", self.fc2.weights.value),
                  ("fc2.bias", self.fc2.bias.value)]
        return items

    def load_state(self, arrays):
        for i, conv in enumerate(self.convs, start=1):
            conv.weights.value = arrays[f"conv{i}.weights"]
            conv.bias.value = arrays[f"conv{i}.bias"]
        self.fc1.weights.value = arrays["fc1.weights"]
        self.fc1.bias.value = arrays["fc1.bias"]
        self.fc2.weights.value = arrays["fc2.weights"]
        self.fc2.bias.value = arrays["fc2.bias"]


_MODEL_KINDS = {
    "full": FFCDNN,
    "base": BaseMLP,
    "ffc": FFCSoftmax,
    "ffc_only": FFCSoftmax,
    "cnn": CNNBaseline,
}


def build_model(kind: str, config: PipelineConfig, rng: np.random.Generator = None):
    if kind not in _MODEL_KINDS:
        raise InputDataError(f"unknown model kind {kind!r}; expected one of {sorted(_MODEL_KINDS)}")
    return _MODEL_KINDS[kind](config, rng)


def ablation_variant(kind: str, config: PipelineConfig, rng: np.random.Generator = None):
    """The ablation ladder: 'base', 'ffc'/'ffc_only', or 'full'."""
    if kind == "cnn":
        raise InputDataError("'cnn' is the baseline, not an ablation rung")
    return build_model(kind, config, rng)


# ---------------------------------------------------------------------------
# trainer


@dataclass
class TrainHistory:
    """Per-epoch training record; wall-clock entries are cumulative seconds."""

    losses: list = field(default_factory=list)
    train_oa: list = field(default_factory=list)
    val_oa: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def append(self, loss, train_acc, val_acc, elapsed):
        self.losses.append(float(loss))
        self.train_oa.append(float(train_acc))
        self.val_oa.append(None if val_acc is None else float(val_acc))
        self.wall_clock.append(float(elapsed))

    @property
    def epochs(self) -> int:
        return len(self.losses)

    @property
    def total_seconds(self) -> float:
        return self.wall_clock[-1] if self.wall_clock else 0.0

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "train_oa": self.train_oa,
            "val_oa": self.val_oa,
            "wall_clock_seconds": self.wall_clock,
        }


def _take(prepared, idx):
    return tuple(a[idx] for a in prepared)


def train(model, x, labels, config: PipelineConfig = None,
          val_x=None, val_labels=None, epochs: int = None) -> TrainHistory:
    """Mini-batch training, deterministic under the config seed."""
    config = config or model.config
    labels = np.asarray(labels, dtype=np.intp)
    counts = np.bincount(labels, minlength=3)
    if np.any(counts == 0):
        raise InputDataError(
            f"every class needs at least one training sample; counts={counts.tolist()}"
        )
    epochs = epochs or config.epochs
    rng = np.random.default_rng([config.seed, 1])
    optimizer = Adam(model.params(), learning_rate=config.learning_rate)
    prepared = model.prepare(x)
    prepared_val = model.prepare(val_x) if val_x is not None else None
    n = labels.size

    history = TrainHistory()
    start = time.perf_counter()
    for _ in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            optimizer.zero_grad()
            loss, n_correct = model.loss_and_grad(_take(prepared, idx), labels[idx])
            if not np.isfinite(loss):
                raise NumericFailure(f"training loss became non-finite ({loss})")
            optimizer.step()
            epoch_loss += loss * idx.size
            epoch_correct += n_correct
        val_acc = None
        if prepared_val is not None:
            val_acc = float(np.mean(model.predict(prepared_val) == val_labels))
        history.append(epoch_loss / n, epoch_correct / n, val_acc,
                       time.perf_counter() - start)
    return history


def stratified_folds(labels, n_folds: int, seed: int):
    """Per-class round-robin assignment into n_folds index arrays."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 2])
    folds = [[] for _ in range(n_folds)]
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < n_folds:
            raise InputDataError(
                f"class {cls} has {members.size} samples; need >= {n_folds} for {n_folds}-fold CV"
            )
        members = rng.permutation(members)
        for i, idx in enumerate(members):
            folds[i % n_folds].append(idx)
    return [np.sort(np.array(f, dtype=np.intp)) for f in folds]


def cross_validate(kind: str, x, labels, config: PipelineConfig, n_folds: int = 5):
    """Stratified k-fold protocol; returns per-fold histories and accuracies."""
    labels = np.asarray(labels, dtype=np.intp)
    folds = stratified_folds(labels, n_folds, config.seed)
    results = []
    for i, hold in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        model = build_model(kind, config)
        history = train(model, x[train_idx], labels[train_idx], config,
                        val_x=x[hold], val_labels=labels[hold])
        predictions = model.predict(model.prepare(x[hold]))
        results.append({
            "fold": i,
            "history": history,
            "val_oa": float(np.mean(predictions == labels[hold])),
            "val_indices": hold,
            "val_predictions": predictions,
        })
    return results
