"""Snippet datasets, validation and evaluation grids."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .exceptions import EmptyDataset, LengthMismatch, TimeOutOfDomain

DEFAULT_GRID_SIZE = 51


class DuplicateTimesWarning(UserWarning):
    """A subject has repeated observation times; they are kept as-is."""


@dataclass(frozen=True)
class Subject:
    id: str
    times: np.ndarray
    values: np.ndarray

    @property
    def m(self) -> int:
        return len(self.times)

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0]) if self.m > 1 else 0.0


@dataclass(frozen=True)
class SnippetDataset:
    """Subjects observed on short windows of a common domain ``[domain_lo, domain_hi]``.

    Use :func:`validate_dataset` (or :meth:`from_arrays`) to build one; the
    constructor itself does not check invariants.
    """

    domain_lo: float
    domain_hi: float
    subjects: tuple = field(default_factory=tuple)

    @classmethod
    def from_arrays(
        cls,
        t: Sequence[Sequence[float]],
        y: Sequence[Sequence[float]],
        ids: Optional[Sequence[str]] = None,
        domain: Optional[tuple] = None,
    ) -> "SnippetDataset":
        """Build and validate a dataset from per-subject time and value lists.

        When ``domain`` is omitted it is taken to be the range of all times.
        """
        if len(t) != len(y):
            raise LengthMismatch(f"{len(t)} time arrays but {len(y)} value arrays")
        if ids is None:
            ids = [str(i) for i in range(len(t))]
        subjects = [
            Subject(str(sid), np.asarray(ti, dtype=float), np.asarray(yi, dtype=float))
            for sid, ti, yi in zip(ids, t, y)
        ]
        if domain is None:
            if not subjects or all(s.m == 0 for s in subjects):
                raise EmptyDataset("no observations")
            all_t = np.concatenate([s.times for s in subjects])
            domain = (float(all_t.min()), float(all_t.max()))
        return validate_dataset(cls(float(domain[0]), float(domain[1]), tuple(subjects)))

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def m(self) -> np.ndarray:
        """Observation counts per subject."""
        return np.array([s.m for s in self.subjects], dtype=int)

    @cached_property
    def times(self) -> np.ndarray:
        """All observation times, concatenated in subject order."""
        return _concat([s.times for s in self.subjects])

    @cached_property
    def values(self) -> np.ndarray:
        return _concat([s.values for s in self.subjects])

    @cached_property
    def subject_index(self) -> np.ndarray:
        """For every observation, the position of its subject."""
        return np.repeat(np.arange(self.n), self.m)

    @cached_property
    def pairs(self) -> "PairIndex":
        """Ordered within-subject observation pairs (see :func:`within_subject_pairs`)."""
        return within_subject_pairs(self)

    @property
    def n_obs(self) -> int:
        return int(self.m.sum())

    @property
    def width(self) -> float:
        return self.domain_hi - self.domain_lo

    def subset(self, idx) -> "SnippetDataset":
        """Dataset restricted to the subjects at positions ``idx`` (order kept)."""
        return SnippetDataset(self.domain_lo, self.domain_hi, tuple(self.subjects[i] for i in idx))

    def with_values(self, values: np.ndarray) -> "SnippetDataset":
        """Same design, new flattened observation values."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_obs,):
            raise LengthMismatch(f"expected {self.n_obs} values, got {values.shape}")
        bounds = np.concatenate([[0], np.cumsum(self.m)])
        subjects = tuple(
            Subject(s.id, s.times, values[bounds[i]:bounds[i + 1]].copy())
            for i, s in enumerate(self.subjects)
        )
        return SnippetDataset(self.domain_lo, self.domain_hi, subjects)

    def to_lists(self):
        return [s.times for s in self.subjects], [s.values for s in self.subjects]


def _concat(arrays):
    if not arrays:
        return np.empty(0)
    return np.concatenate(arrays)


def validate_dataset(raw: SnippetDataset) -> SnippetDataset:
    """Check invariants and return a copy with times sorted within each subject.

    Duplicate times within a subject are kept and reported through a
    :class:`DuplicateTimesWarning`.
    """
    lo, hi = float(raw.domain_lo), float(raw.domain_hi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
        raise ValueError(f"invalid domain [{lo}, {hi}]")
    if len(raw.subjects) == 0:
        raise EmptyDataset("dataset has no subjects")
    subjects = []
    dup = []
    for s in raw.subjects:
        times = np.asarray(s.times, dtype=float).ravel()
        values = np.asarray(s.values, dtype=float).ravel()
        if times.shape != values.shape:
            raise LengthMismatch(f"subject {s.id!r}: {times.size} times but {values.size} values")
        if times.size == 0:
            raise EmptyDataset(f"subject {s.id!r} has no observations")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"subject {s.id!r} has non-finite values")
        bad = ~np.isfinite(times) | (times < lo) | (times > hi)
        if bad.any():
            raise TimeOutOfDomain(s.id, float(times[bad][0]))
        order = np.argsort(times, kind="stable")
        times, values = times[order], values[order]
        if np.any(np.diff(times) == 0):
            dup.append(s.id)
        times.flags.writeable = False
        values.flags.writeable = False
        subjects.append(Subject(str(s.id), times, values))
    if dup:
        warnings.warn(
            f"duplicate observation times within subjects {dup[:5]}{'...' if len(dup) > 5 else ''}",
            DuplicateTimesWarning,
            stacklevel=2,
        )
    return SnippetDataset(lo, hi, tuple(subjects))


@dataclass(frozen=True)
class SnippetSpan:
    delta_hat: float
    per_subject_spans: np.ndarray


def estimate_span(ds: SnippetDataset) -> SnippetSpan:
    """Largest within-subject time range; single-observation subjects count as 0."""
    spans = np.array([s.span for s in ds.subjects])
    return SnippetSpan(float(spans.max()) if spans.size else 0.0, spans)


def eval_grid(lo: float, hi: float, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    if size < 2:
        raise ValueError("grid needs at least 2 points")
    return np.linspace(lo, hi, size)


def check_grid(grid, lo: float, hi: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("evaluation grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("evaluation grid must be strictly increasing")
    if grid[0] < lo or grid[-1] > hi:
        raise ValueError(f"evaluation grid leaves the domain [{lo}, {hi}]")
    return grid


def trapezoid(values, grid) -> float:
    """Trapezoid rule of ``values`` over ``grid`` (1-D)."""
    return float(integrate.trapezoid(values, grid))


def trapezoid_2d(values, grid) -> float:
    return float(integrate.trapezoid(integrate.trapezoid(values, grid, axis=1), grid))


@dataclass(frozen=True)
class PairIndex:
    """All ordered within-subject pairs ``j != l``, in subject, then j, then l order.

    ``first`` and ``second`` index the flattened observations; ``weight`` is
    ``1 / (m_i (m_i - 1))`` for the pair's subject.
    """

    first: np.ndarray
    second: np.ndarray
    subject: np.ndarray
    weight: np.ndarray
    n_eligible: int


def within_subject_pairs(ds: SnippetDataset) -> PairIndex:
    offsets = np.concatenate([[0], np.cumsum(ds.m)[:-1]])
    first, second, subj, weight = [], [], [], []
    for i, m in enumerate(ds.m):
        if m < 2:
            continue
        jj, ll = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        keep = jj != ll
        first.append(offsets[i] + jj[keep])
        second.append(offsets[i] + ll[keep])
        subj.append(np.full(m * (m - 1), i))
        weight.append(np.full(m * (m - 1), 1.0 / (m * (m - 1))))
    if not first:
        empty_i = np.empty(0, dtype=int)
        return PairIndex(empty_i, empty_i, empty_i, np.empty(0), 0)
    return PairIndex(
        np.concatenate(first),
        np.concatenate(second),
        np.concatenate(subj),
        np.concatenate(weight),
        int(np.sum(ds.m >= 2)),
    )
