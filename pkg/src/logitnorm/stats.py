"""Per-class logit statistics accumulated over a training-set pass.

Two estimation modes are provided: an exponential-moving-average pass over
mini-batches (the production path) and an exact single-pass streaming
estimator (the oracle path).  Both compute, for every class slot, the mean
and population variance of that slot's logit column over all records.
A positive-only variant restricted to each record's own class is kept for
comparison; it is deliberately not used for calibration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyStreamError,
    InvalidLabelError,
    NonFiniteLogitError,
)

MOMENTUM_DEFAULT = 0.01
EPS_DEFAULT = 1e-5
GROUP_THRESHOLDS_DEFAULT = (10, 100)

GROUP_NAMES = ("rare", "common", "frequent")


@dataclass
class LogitRecord:
    """One sample: its full logit vector plus the ground-truth class index."""

    label: int
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)


@dataclass
class RunningStats:
    """Per-class running mean and population variance with sample count.

    ``bg_index`` marks the class slot reserved for background proposals
    (``None`` in pure-classification mode).  ``per_slot_count`` is only
    populated by :func:`positive_only_stats`, where a slot may legitimately
    receive zero samples; such slots carry mean/var 0 and are flagged via
    :meth:`empty_slots`.
    """

    mean: np.ndarray
    var: np.ndarray
    count: int = 0
    momentum: float = MOMENTUM_DEFAULT
    eps: float = EPS_DEFAULT
    bg_index: int | None = None
    initialized: bool = False
    per_slot_count: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise DimensionMismatchError(
                f"mean/var must be 1-d and same length, got {self.mean.shape} and {self.var.shape}"
            )
        if np.any(self.var < 0):
            raise ValueError("variance entries must be nonnegative")
        if not 0.0 < self.momentum <= 1.0:
            raise ValueError(f"momentum must be in (0, 1], got {self.momentum}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.bg_index is not None and not 0 <= self.bg_index < self.num_slots:
            raise ValueError(f"bg_index {self.bg_index} out of range for {self.num_slots} slots")
        if self.initialized and self.count <= 0:
            raise ValueError("initialized stats must have count > 0")

    @classmethod
    def empty(
        cls,
        num_slots: int,
        momentum: float = MOMENTUM_DEFAULT,
        eps: float = EPS_DEFAULT,
        bg_index: int | None = None,
    ) -> "RunningStats":
        """A fresh accumulator awaiting its first batch."""
        return cls(
            mean=np.zeros(num_slots),
            var=np.zeros(num_slots),
            count=0,
            momentum=momentum,
            eps=eps,
            bg_index=bg_index,
            initialized=False,
        )

    @property
    def num_slots(self) -> int:
        return self.mean.shape[0]

    def foreground_indices(self) -> np.ndarray:
        return foreground_indices(self.num_slots, self.bg_index)

    def empty_slots(self) -> np.ndarray:
        """Boolean mask of slots that received no samples (positive-only mode)."""
        if self.per_slot_count is None:
            return np.zeros(self.num_slots, dtype=bool)
        return self.per_slot_count == 0


def foreground_indices(num_slots: int, bg_index: int | None) -> np.ndarray:
    """Class slots in ascending order with the background slot removed."""
    idx = np.arange(num_slots)
    if bg_index is None:
        return idx
    return idx[idx != bg_index]


def records_to_matrix(batch: Sequence[LogitRecord], num_slots: int | None = None):
    """Stack a batch of records into (labels, logit matrix), validating as we go.

    Raises ``DimensionMismatchError`` on inconsistent vector lengths and
    ``NonFiniteLogitError`` (with the record's batch position) on NaN/inf.
    """
    if len(batch) == 0:
        raise EmptyStreamError("batch must be nonempty")
    if num_slots is None:
        num_slots = batch[0].logits.shape[0]
    labels = np.empty(len(batch), dtype=np.int64)
    X = np.empty((len(batch), num_slots), dtype=np.float64)
    for i, rec in enumerate(batch):
        if rec.logits.shape != (num_slots,):
            raise DimensionMismatchError(
                f"record {i} has {rec.logits.shape[0]} logits, expected {num_slots}"
            )
        if not np.all(np.isfinite(rec.logits)):
            raise NonFiniteLogitError(i)
        if not 0 <= rec.label < num_slots:
            raise InvalidLabelError(rec.label, num_slots)
        labels[i] = rec.label
        X[i] = rec.logits
    return labels, X


def update_ema(stats: RunningStats, batch: Sequence[LogitRecord]) -> RunningStats:
    """Fold one batch into the EMA accumulator; returns a new RunningStats.

    The batch statistics are the per-slot mean and population variance over
    every logit entry of every record.  The first batch initializes the
    running values directly; afterwards
    ``running <- (1 - momentum) * running + momentum * batch``.
    """
    _, X = records_to_matrix(batch, stats.num_slots if stats.initialized else None)
    if stats.initialized and X.shape[1] != stats.num_slots:
        raise DimensionMismatchError(
            f"batch has {X.shape[1]} slots, accumulator has {stats.num_slots}"
        )
    batch_mean = X.mean(axis=0)
    batch_var = X.var(axis=0)  # population variance, ddof=0
    if not stats.initialized:
        new_mean, new_var = batch_mean, batch_var
    else:
        m = stats.momentum
        new_mean = (1.0 - m) * stats.mean + m * batch_mean
        new_var = (1.0 - m) * stats.var + m * batch_var
    return replace(
        stats,
        mean=new_mean,
        var=new_var,
        count=stats.count + X.shape[0],
        initialized=True,
    )


def _chunks(records: Iterable[LogitRecord], size: int) -> Iterator[list[LogitRecord]]:
    buf: list[LogitRecord] = []
    for rec in records:
        buf.append(rec)
        if len(buf) >= size:
            yield buf
            buf = []
    if buf:
        yield buf


def compute_exact(
    records: Iterable[LogitRecord],
    eps: float = EPS_DEFAULT,
    bg_index: int | None = None,
    chunk_size: int = 4096,
) -> RunningStats:
    """Exact per-class mean and population variance over the whole stream.

    Single pass; chunks are reduced with the pairwise mean/M2 combine, so the
    result is numerically stable on long streams and permutation-invariant up
    to float rounding.  Returned stats carry momentum 1.0 (no smoothing was
    applied).
    """
    n_total = 0
    mean = m2 = None
    for chunk in _chunks(records, chunk_size):
        _, X = records_to_matrix(chunk, None if mean is None else mean.shape[0])
        if mean is not None and X.shape[1] != mean.shape[0]:
            raise DimensionMismatchError(
                f"chunk has {X.shape[1]} slots, stream started with {mean.shape[0]}"
            )
        n = X.shape[0]
        c_mean = X.mean(axis=0)
        c_m2 = ((X - c_mean) ** 2).sum(axis=0)
        if mean is None:
            mean, m2, n_total = c_mean, c_m2, n
        else:
            delta = c_mean - mean
            tot = n_total + n
            mean = mean + delta * (n / tot)
            m2 = m2 + c_m2 + delta**2 * (n_total * n / tot)
            n_total = tot
    if mean is None:
        raise EmptyStreamError("cannot compute statistics of an empty stream")
    return RunningStats(
        mean=mean,
        var=np.maximum(m2 / n_total, 0.0),
        count=n_total,
        momentum=1.0,
        eps=eps,
        bg_index=bg_index,
        initialized=True,
    )


def merge_exact(a: RunningStats, b: RunningStats) -> RunningStats:
    """Combine two exact-mode accumulators computed on disjoint stream shards.

    Uses the parallel mean/variance combine; only valid for stats produced by
    :func:`compute_exact` (EMA stats are order-dependent and must not be
    merged).
    """
    if a.num_slots != b.num_slots:
        raise DimensionMismatchError(
            f"cannot merge stats with {a.num_slots} and {b.num_slots} slots"
        )
    if not (a.initialized and b.initialized):
        raise ValueError("both stats must be initialized")
    n, m = a.count, b.count
    tot = n + m
    delta = b.mean - a.mean
    mean = a.mean + delta * (m / tot)
    m2 = a.var * n + b.var * m + delta**2 * (n * m / tot)
    return RunningStats(
        mean=mean,
        var=np.maximum(m2 / tot, 0.0),
        count=tot,
        momentum=1.0,
        eps=a.eps,
        bg_index=a.bg_index,
        initialized=True,
    )


def positive_only_stats(
    records: Iterable[LogitRecord],
    eps: float = EPS_DEFAULT,
    bg_index: int | None = None,
) -> RunningStats:
    """Per-class stats using, for class c, only logit c of records labeled c.

    Classes that never appear get mean/var 0 and are flagged through
    ``per_slot_count`` / ``empty_slots()`` rather than raising.
    """
    n_total = 0
    counts = mean = m2 = None
    for chunk in _chunks(records, 4096):
        _, X = records_to_matrix(chunk, None if mean is None else mean.shape[0])
        if mean is None:
            k = X.shape[1]
            counts = np.zeros(k, dtype=np.int64)
            mean = np.zeros(k)
            m2 = np.zeros(k)
        for rec in chunk:
            c = rec.label
            x = rec.logits[c]
            counts[c] += 1
            delta = x - mean[c]
            mean[c] += delta / counts[c]
            m2[c] += delta * (x - mean[c])
        n_total += X.shape[0]
    if mean is None:
        raise EmptyStreamError("cannot compute statistics of an empty stream")
    var = np.zeros_like(mean)
    nonzero = counts > 0
    var[nonzero] = np.maximum(m2[nonzero] / counts[nonzero], 0.0)
    return RunningStats(
        mean=mean,
        var=var,
        count=n_total,
        momentum=1.0,
        eps=eps,
        bg_index=bg_index,
        initialized=True,
        per_slot_count=counts,
    )


@dataclass
class LabelDistribution:
    """Per-class sample counts with rare/common/frequent grouping.

    Boundary semantics: count <= low threshold -> rare, <= high -> common,
    else frequent.  Counts index foreground classes only.
    """

    counts: np.ndarray
    thresholds: tuple[int, int] = GROUP_THRESHOLDS_DEFAULT
    groups: np.ndarray = field(init=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        low, high = self.thresholds
        if not 0 < low < high:
            raise ValueError(f"thresholds must satisfy 0 < low < high, got {self.thresholds}")
        groups = np.full(self.counts.shape[0], "frequent", dtype="<U8")
        groups[self.counts <= high] = "common"
        groups[self.counts <= low] = "rare"
        self.groups = groups

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def group_of(self, cls: int) -> str:
        return str(self.groups[cls])

    def classes_in_group(self, name: str) -> np.ndarray:
        if name not in GROUP_NAMES:
            raise ValueError(f"unknown group {name!r}")
        return np.flatnonzero(self.groups == name)


def build_label_distribution(
    labels: Iterable[int],
    num_classes: int,
    thresholds: tuple[int, int] = GROUP_THRESHOLDS_DEFAULT,
) -> LabelDistribution:
    """Tally foreground labels into counts and assign frequency groups."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for label in labels:
        label = int(label)
        if not 0 <= label < num_classes:
            raise InvalidLabelError(label, num_classes)
        counts[label] += 1
    return LabelDistribution(counts=counts, thresholds=thresholds)
