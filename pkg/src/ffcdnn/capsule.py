"""Capsule encoding of pooled frequency features and dynamic routing.

The two branches' pooled features are standardized per channel (batch
statistics while training, running statistics at inference) and rescaled by
learnable affine weights, grouped into contiguous runs of ``primary_dim``
scalars (zero-padded to a whole number of capsules, provenance preserved),
squashed, and routed to the three class capsules by iterative agreement:

    u_hat[i, h] = transform[i, h] @ u[i]
    repeat r times:
        c = softmax(b) over classes
        s[h] = sum_i c[i, h] * u_hat[i, h]
        V[h] = squash(s[h])
        b[i, h] += <u_hat[i, h], V[h]>

The squash nonlinearity keeps every capsule length inside [0, 1):

    squash(u) = (|u|^2 / (1 + |u|^2)) * u / |u|,  squash(0) = 0.

Routing logits are transient per-forward state; the trainable pieces are
the normalization weights and the per-(capsule, class) transform maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter
from .errors import InputDataError

__all__ = [
    "squash",
    "squash_backward",
    "FeatureNorm",
    "FeatureProvenance",
    "PrimaryCapsules",
    "PrimaryCapsuleEncoder",
    "RoutingState",
    "ClassCapsules",
    "RoutingLayer",
    "route",
]

N_CLASSES = 3


def squash(u: np.ndarray, axis: int = -1) -> np.ndarray:
    """Norm-compressing nonlinearity; output direction equals input direction.

    (|u|^2/(1+|u|^2)) * u/|u| == u * |u|/(1+|u|^2), which needs no special
    case at the origin: the scale itself vanishes there.
    """
    u = np.asarray(u, dtype=np.float64)
    norm = np.linalg.norm(u, axis=axis, keepdims=True)
    return u * norm / (1.0 + norm * norm)


def squash_backward(dv: np.ndarray, u: np.ndarray, axis: int = -1) -> np.ndarray:
    """Adjoint of :func:`squash` at input ``u`` (zero at the origin).

    With v = a(n) u for n = |u| and a(n) = n/(1+n^2):
    du = a(n) dv + (a'(n)/n) <u, dv> u,  a'(n) = (1-n^2)/(1+n^2)^2.
    """
    norm = np.linalg.norm(u, axis=axis, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    alpha = norm / (1.0 + norm * norm)
    alpha_prime = (1.0 - norm * norm) / (1.0 + norm * norm) ** 2
    radial = np.sum(u * dv, axis=axis, keepdims=True)
    return np.where(norm > 0, alpha * dv + (alpha_prime / safe) * radial * u, 0.0)


class FeatureNorm:
    """Per-channel standardization with learnable affine weights.

    Zero-variance channels are stabilized with a 1e-8 epsilon instead of
    failing.  Running statistics (momentum 0.1) serve inference.
    """

    EPS = 1e-8

    def __init__(self, n_features: int, momentum: float = 0.1, name: str = "norm"):
        self.scale = Parameter(np.ones(n_features), f"{name}.scale")
        self.shift = Parameter(np.zeros(n_features), f"{name}.shift")
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.momentum = momentum
        self._cache = None

    def params(self):
        return [self.scale, self.shift]

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.scale.value.size:
            raise InputDataError(
                f"expected (batch, {self.scale.value.size}) features, got {x.shape}"
            )
        if training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std, training, x.shape[0])
        return self.scale.value * x_hat + self.shift.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x_hat, inv_std, training, batch = self._cache
        self.scale.grad += np.sum(dy * x_hat, axis=0)
        self.shift.grad += np.sum(dy, axis=0)
        dx_hat = dy * self.scale.value
        if not training:
            return dx_hat * inv_std
        term = dx_hat - dx_hat.mean(axis=0) - x_hat * np.mean(dx_hat * x_hat, axis=0)
        return term * inv_std


@dataclass(frozen=True)
class FeatureProvenance:
    """Where one primary-capsule scalar came from (None slots are padding)."""

    branch: str
    row: int
    col: int
    band_low: int
    band_high: int


@dataclass(frozen=True)
class PrimaryCapsules:
    """Squashed primary capsule vectors plus their per-scalar source map."""

    vectors: np.ndarray  # (..., n_capsules, primary_dim)
    source_map: tuple     # length n_capsules*primary_dim of FeatureProvenance|None

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim < 2 or v.shape[-2] < 1:
            raise InputDataError("primary capsules need >= 1 capsule vector")
        if not np.all(np.isfinite(v)):
            raise InputDataError("primary capsules must be finite")
        if len(self.source_map) != v.shape[-1] * v.shape[-2]:
            raise InputDataError("source map length must match capsule scalars")
        object.__setattr__(self, "vectors", v)


class PrimaryCapsuleEncoder:
    """Group a flat feature block into squashed primary capsules."""

    def __init__(self, n_features: int, primary_dim: int, source_map=None):
        if primary_dim < 1:
            raise InputDataError("primary_dim must be >= 1")
        self.n_features = n_features
        self.primary_dim = primary_dim
        self.n_capsules = -(-n_features // primary_dim)  # ceil division
        self.padding = self.n_capsules * primary_dim - n_features
        if source_map is None:
            source_map = (None,) * n_features
        if len(source_map) != n_features:
            raise InputDataError("source map must describe every input feature")
        self.source_map = tuple(source_map) + (None,) * self.padding
        self._cache = None

    def forward(self, features: np.ndarray) -> np.ndarray:
        batch = features.shape[0]
        padded = np.zeros((batch, self.n_capsules * self.primary_dim))
        padded[:, : self.n_features] = features
        grouped = padded.reshape(batch, self.n_capsules, self.primary_dim)
        self._cache = grouped
        return squash(grouped)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        dgrouped = squash_backward(dout, self._cache)
        return dgrouped.reshape(dout.shape[0], -1)[:, : self.n_features]

    def as_primary(self, vectors: np.ndarray) -> PrimaryCapsules:
        return PrimaryCapsules(vectors, self.source_map)


@dataclass(frozen=True)
class RoutingState:
    """Final routing logits and coupling coefficients (softmax over classes)."""

    logits: np.ndarray       # (..., n_capsules, n_classes)
    coupling: np.ndarray     # same shape; rows sum to 1 over the class axis
    per_iteration: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.coupling, dtype=np.float64)
        if np.any(c < 0):
            raise InputDataError("coupling coefficients must be non-negative")
        sums = c.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            raise InputDataError("coupling coefficients must sum to 1 per capsule")
        object.__setattr__(self, "coupling", c)


@dataclass(frozen=True)
class ClassCapsules:
    """The three class capsule vectors; every length lies in [0, 1)."""

    vectors: np.ndarray  # (..., N_CLASSES, class_dim)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.shape[-2] != N_CLASSES:
            raise InputDataError(f"expected {N_CLASSES} class capsules, got {v.shape[-2]}")
        if not np.all(np.isfinite(v)):
            raise InputDataError("class capsules must be finite")
        norms = np.linalg.norm(v, axis=-1)
        if np.any(norms >= 1.0):
            raise InputDataError("class capsule lengths must lie in [0, 1)")
        object.__setattr__(self, "vectors", v)

    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=-1)


def _softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class RoutingLayer:
    """Dynamic routing from primary capsules to the class capsules."""

    def __init__(self, n_capsules: int, primary_dim: int, class_dim: int,
                 iterations: int = 3, rng: np.random.Generator = None,
                 name: str = "routing"):
        if iterations < 1:
            raise InputDataError("routing needs at least one iteration")
        self.n_capsules = n_capsules
        self.primary_dim = primary_dim
        self.class_dim = class_dim
        self.iterations = iterations
        rng = rng or np.random.default_rng(0)
        init = rng.standard_normal((n_capsules, N_CLASSES, primary_dim, class_dim))
        init *= 1.0 / np.sqrt(primary_dim)
        self.transforms = Parameter(init, f"{name}.transforms")
        self._cache = None

    def params(self):
        return [self.transforms]

    def forward(self, u: np.ndarray):
        """(B, n_capsules, primary_dim) -> (V, RoutingState)."""
        if u.shape[-2:] != (self.n_capsules, self.primary_dim):
            raise InputDataError(
                f"expected (batch, {self.n_capsules}, {self.primary_dim}) capsules, got {u.shape}"
            )
        u_hat = np.einsum("bip,izpq->bizq", u, self.transforms.value)
        batch = u.shape[0]
        logits = np.zeros((batch, self.n_capsules, N_CLASSES))
        steps = []
        coupling_history = []
        for _ in range(self.iterations):
            c = _softmax(logits, axis=2)
            s = np.einsum("biz,bizq->bzq", c, u_hat)
            v = squash(s)
            logits = logits + np.einsum("bizq,bzq->biz", u_hat, v)
            steps.append((c, s, v))
            coupling_history.append(c)
        self._cache = (u, u_hat, steps)
        state = RoutingState(logits, _softmax(logits, axis=2), tuple(coupling_history))
        return v, state

    def backward(self, dv: np.ndarray) -> np.ndarray:
        """Unrolled adjoint through all routing iterations."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        u, u_hat, steps = self._cache
        du_hat = np.zeros_like(u_hat)
        dlogits = np.zeros(u_hat.shape[:2] + (N_CLASSES,))
        dv_t = dv
        for c, s, v in reversed(steps):
            # logits update b_t = b_{t-1} + <u_hat, V_t>: the incoming logit
            # gradient feeds the agreement term AND passes through to b_{t-1}.
            du_hat += dlogits[..., None] * v[:, None, :, :]
            dv_t = dv_t + np.einsum("biz,bizq->bzq", dlogits, u_hat)
            ds = squash_backward(dv_t, s)
            dc = np.einsum("bzq,bizq->biz", ds, u_hat)
            du_hat += c[..., None] * ds[:, None, :, :]
            dlogits = dlogits + c * (dc - np.sum(c * dc, axis=2, keepdims=True))
            dv_t = np.zeros_like(dv)
        self.transforms.grad += np.einsum("bip,bizq->izpq", u, du_hat)
        return np.einsum("bizq,izpq->bip", du_hat, self.transforms.value)


def route(primary: PrimaryCapsules, transforms: np.ndarray, iterations: int = 3):
    """Functional routing of one batch of primary capsules.

    ``transforms`` has shape (n_capsules, n_classes, primary_dim,
    class_dim).  Returns (ClassCapsules, RoutingState).
    """
    u = primary.vectors
    squeeze = u.ndim == 2
    if squeeze:
        u = u[None]
    n_capsules, primary_dim = u.shape[-2:]
    transforms = np.asarray(transforms, dtype=np.float64)
    if transforms.shape[:3] != (n_capsules, N_CLASSES, primary_dim):
        raise InputDataError(
            f"transforms must be ({n_capsules}, {N_CLASSES}, {primary_dim}, class_dim)"
        )
    layer = RoutingLayer(n_capsules, primary_dim, transforms.shape[3], iterations)
    layer.transforms.value = transforms
    v, state = layer.forward(u)
    if squeeze:
        v = v[0]
        state = RoutingState(state.logits[0], state.coupling[0],
                             tuple(c[0] for c in state.per_iteration))
    return ClassCapsules(v), state
