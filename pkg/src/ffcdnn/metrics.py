"""Classification metrics, discriminant projections, per-component R², timing.

Confusion matrices are oriented rows = predicted, columns = actual, so
user's accuracy (U%) is the row-wise diagonal share and producer's accuracy
(P%) the column-wise one.  Per-class entries whose denominator is zero are
flagged as undefined rather than propagated as NaN.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InputDataError

__all__ = [
    "ConfusionMatrix",
    "MetricReport",
    "confusion_metrics",
    "confusion_from_predictions",
    "CDAProjection",
    "cda_project",
    "r2_by_component",
    "TimingResult",
    "time_run",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; rows are predicted classes, columns actual."""

    counts: np.ndarray
    class_names: tuple = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise InputDataError("confusion matrix must be square")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise InputDataError("confusion matrix must hold integer counts")
            counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise InputDataError("confusion matrix counts must be non-negative")
        if counts.sum() <= 0:
            raise InputDataError("confusion matrix total must be positive")
        names = self.class_names or tuple(f"class{i}" for i in range(counts.shape[0]))
        if len(names) != counts.shape[0]:
            raise InputDataError("class_names length must match matrix size")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_names", tuple(names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricReport:
    """Overall accuracy, per-class user/producer accuracy, kappa, timing."""

    oa_percent: float
    ua_percent: tuple          # per predicted-class row; None where undefined
    pa_percent: tuple          # per actual-class column; None where undefined
    kappa: float
    ct_seconds: Optional[float] = None
    class_names: tuple = ()

    def to_dict(self) -> dict:
        return {
            "oa_percent": self.oa_percent,
            "ua_percent": list(self.ua_percent),
            "pa_percent": list(self.pa_percent),
            "kappa": self.kappa,
            "ct_seconds": self.ct_seconds,
            "class_names": list(self.class_names),
        }

    def table(self) -> str:
        """Aligned text table: one row per class plus summary lines."""
        names = self.class_names or tuple(
            f"class{i}" for i in range(len(self.ua_percent))
        )
        width = max(len(n) for n in names) + 2
        fmt = lambda v: "   n/a" if v is None else f"{v:6.1f}"
        lines = [f"{'':{width}}  U(%)   P(%)"]
        for name, ua, pa in zip(names, self.ua_percent, self.pa_percent):
            lines.append(f"{name:{width}}{fmt(ua)} {fmt(pa)}")
        lines.append(f"OA(%)  {self.oa_percent:.1f}")
        lines.append(f"Kappa  {self.kappa:.3f}")
        if self.ct_seconds is not None:
            lines.append(f"CT(s)  {self.ct_seconds:.1f}")
        return "\n".join(lines)


def confusion_metrics(matrix: ConfusionMatrix, ct_seconds: float = None) -> MetricReport:
    """OA / UA / PA / kappa from a predicted-by-actual count matrix."""
    counts = matrix.counts.astype(np.float64)
    total = counts.sum()
    diag = np.diag(counts)
    row_sums = counts.sum(axis=1)
    col_sums = counts.sum(axis=0)

    oa = float(diag.sum() / total)
    ua = tuple(
        None if row_sums[i] == 0 else float(100.0 * diag[i] / row_sums[i])
        for i in range(len(diag))
    )
    pa = tuple(
        None if col_sums[i] == 0 else float(100.0 * diag[i] / col_sums[i])
        for i in range(len(diag))
    )
    p_expected = float(np.dot(row_sums, col_sums) / (total * total))
    if p_expected >= 1.0:
        kappa = 1.0 if oa >= 1.0 else 0.0
    else:
        kappa = (oa - p_expected) / (1.0 - p_expected)
    return MetricReport(
        oa_percent=100.0 * oa,
        ua_percent=ua,
        pa_percent=pa,
        kappa=float(kappa),
        ct_seconds=ct_seconds,
        class_names=matrix.class_names,
    )


def confusion_from_predictions(predicted, actual, n_classes: int = 3,
                               class_names: tuple = ()) -> ConfusionMatrix:
    predicted = np.asarray(predicted, dtype=np.intp)
    actual = np.asarray(actual, dtype=np.intp)
    if predicted.shape != actual.shape:
        raise InputDataError("prediction/label length mismatch")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (predicted, actual), 1)
    return ConfusionMatrix(counts, class_names)


# ---------------------------------------------------------------------------
# canonical discriminant analysis


@dataclass(frozen=True)
class CDAProjection:
    """Top-2 discriminant axes, projected scores, and scatter ratios."""

    basis: np.ndarray    # (2, n_features), unit-length rows
    scores: np.ndarray   # (n_samples, 2)
    ratios: tuple        # between/within scatter ratio per axis, descending


def cda_project(features: np.ndarray, labels) -> CDAProjection:
    """Project onto the two directions maximizing between/within scatter.

    Solves the generalized eigenproblem of the between-class scatter
    against the (epsilon-regularized) within-class scatter via Cholesky
    whitening; axes come back ordered by decreasing Fisher ratio.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.size:
        raise InputDataError("features must be (n_samples, n_features) matching labels")
    classes = np.unique(labels)
    if classes.size < 2:
        raise InputDataError("canonical discriminant analysis needs >= 2 classes")
    n, d = x.shape

    grand = x.mean(axis=0)
    s_within = np.zeros((d, d))
    s_between = np.zeros((d, d))
    for cls in classes:
        members = x[labels == cls]
        if members.shape[0] < 2:
            raise InputDataError(f"class {cls!r} needs >= 2 samples")
        mu = members.mean(axis=0)
        centered = members - mu
        s_within += centered.T @ centered
        offset = (mu - grand)[:, None]
        s_between += members.shape[0] * (offset @ offset.T)

    eps = 1e-6 * np.trace(s_within) / d
    s_within_reg = s_within + eps * np.eye(d)

    chol = np.linalg.cholesky(s_within_reg)
    inv_chol = np.linalg.inv(chol)
    whitened = inv_chol @ s_between @ inv_chol.T
    eigvals, eigvecs = np.linalg.eigh((whitened + whitened.T) / 2.0)
    order = np.argsort(eigvals)[::-1][:2]

    axes = []
    ratios = []
    for idx in order:
        v = inv_chol.T @ eigvecs[:, idx]
        v = v / np.linalg.norm(v)
        # deterministic sign: largest-magnitude component positive
        lead = np.argmax(np.abs(v))
        if v[lead] < 0:
            v = -v
        axes.append(v)
        ratios.append(float((v @ s_between @ v) / (v @ s_within_reg @ v)))
    while len(axes) < 2:   # single-feature degenerate case
        axes.append(np.zeros(d))
        ratios.append(0.0)
    basis = np.vstack(axes[:2])
    return CDAProjection(basis=basis, scores=x @ basis.T, ratios=tuple(ratios[:2]))


# ---------------------------------------------------------------------------
# per-component determination coefficients


def r2_by_component(features: np.ndarray, severity) -> np.ndarray:
    """R-squared of a univariate least-squares fit per feature column.

    Fits ``component ~ a*severity + b`` and reports ``1 - SS_res/SS_tot``,
    clamped into [0, 1] for reporting.  Affine rescaling of a component
    leaves its value unchanged.
    """
    x = np.asarray(features, dtype=np.float64)
    s = np.asarray(severity, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != s.size:
        raise InputDataError("features must be (n_samples, n_components) matching severity")
    if s.size < 3:
        raise InputDataError("need >= 3 samples for a meaningful fit")
    s_var = s.var()
    if s_var <= 0:
        raise InputDataError("severity variance is zero")

    s_centered = s - s.mean()
    x_centered = x - x.mean(axis=0)
    cov = (s_centered @ x_centered) / s.size
    comp_var = x_centered.var(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(comp_var > 0, cov * cov / (s_var * comp_var), 0.0)
    return np.clip(r2, 0.0, 1.0)


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingResult:
    seconds: float
    reference_name: str = ""
    reference_seconds: Optional[float] = None
    ratio: Optional[float] = field(default=None)

    def to_dict(self) -> dict:
        return {
            "seconds": self.seconds,
            "reference_name": self.reference_name or None,
            "reference_seconds": self.reference_seconds,
            "ratio": self.ratio,
        }


def time_run(task: Callable, reference: Callable = None,
             reference_name: str = "reference") -> TimingResult:
    """Monotonic wall-clock duration of ``task``; optional relative ratio."""
    start = time.perf_counter()
    task()
    seconds = time.perf_counter() - start
    if reference is None:
        return TimingResult(seconds=seconds)
    ref_start = time.perf_counter()
    reference()
    ref_seconds = time.perf_counter() - ref_start
    ratio = seconds / ref_seconds if ref_seconds > 0 else float("inf")
    return TimingResult(seconds=seconds, reference_name=reference_name,
                        reference_seconds=ref_seconds, ratio=ratio)
