"""Time-restricted concordance estimation from right-censored data.

The three estimators share one definition of a usable pair: subject ``i``
has the shorter observed time (strictly), ``T_i <= tau`` and, except for the
relative frequency, ``i`` is an observed event. They differ only in the
weight attached to ``i``:

=====================  ===========================
relative frequency     1 (requires no censoring)
Harrell                event indicator
Uno (squared)          event / G(T_i)^2
Uno (Gerds)            event / (G(T_i) * G(T_i-))
=====================  ===========================

``G`` is the Kaplan-Meier estimate of the censoring survival function.
Pairs with tied scores count one half in the numerator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import (
    AllResamplesFailed,
    CensoringPresent,
    EmptySample,
    InvalidSample,
    NoComparablePairs,
    TiedTimes,
    ZeroCensoringSurvival,
)

__all__ = [
    "Estimator",
    "UnoVariant",
    "SurvivalSample",
    "StepFunction",
    "CIndexEstimate",
    "BootstrapResult",
    "km_censoring_survival",
    "c_relative_frequency",
    "c_harrell",
    "c_uno",
    "concordance",
    "bootstrap_variance",
    "estimate_cindex",
    "jitter_ties",
]


class Estimator(str, Enum):
    RELATIVE_FREQUENCY = "rf"
    HARRELL = "harrell"
    UNO = "uno"


class UnoVariant(str, Enum):
    SQUARED = "squared"
    GERDS = "gerds"


def _mode(estimator: Estimator, variant: UnoVariant) -> int:
    estimator = Estimator(estimator)
    if estimator is Estimator.RELATIVE_FREQUENCY:
        return _kernels.RELATIVE_FREQUENCY
    if estimator is Estimator.HARRELL:
        return _kernels.HARRELL
    if UnoVariant(variant) is UnoVariant.SQUARED:
        return _kernels.UNO_SQUARED
    return _kernels.UNO_GERDS


@dataclass(frozen=True)
class SurvivalSample:
    """Subject-level validation data of one study.

    Observed times must be positive and finite. Tied times are rejected when
    at least one of the tied subjects has an event; ties among censored
    subjects only (typical for administrative censoring at the end of
    follow-up) are accepted because such subjects never form the shorter
    member of a usable pair. Use :func:`jitter_ties` to break event ties.
    """

    observed_time: np.ndarray
    event: np.ndarray
    score: np.ndarray

    def __post_init__(self):
        t = np.array(self.observed_time, dtype=float).ravel()
        e = np.array(self.event).ravel()
        s = np.array(self.score, dtype=float).ravel()
        if t.size == 0:
            raise EmptySample("sample has no subjects")
        if not (t.size == e.size == s.size):
            raise InvalidSample(
                f"length mismatch: time={t.size}, event={e.size}, score={s.size}"
            )
        if t.size < 2:
            raise InvalidSample("at least two subjects are required")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise InvalidSample("observed times must be finite and > 0")
        if not np.all(np.isin(e, (0, 1))):
            raise InvalidSample("event indicators must be 0 or 1")
        if not np.all(np.isfinite(s)):
            raise InvalidSample("scores must be finite")
        e = e.astype(np.int8)
        order = np.argsort(t, kind="stable")
        ts = t[order]
        tied = np.flatnonzero(ts[1:] == ts[:-1])
        if tied.size:
            es = e[order]
            bad = tied[(es[tied] == 1) | (es[tied + 1] == 1)]
            if bad.size:
                raise TiedTimes(
                    f"{bad.size} tied observed time(s) involving events, "
                    f"first at t={ts[bad[0]]!r}"
                )
        for arr in (t, e, s):
            arr.setflags(write=False)
        object.__setattr__(self, "observed_time", t)
        object.__setattr__(self, "event", e)
        object.__setattr__(self, "score", s)

    @property
    def n(self) -> int:
        return int(self.observed_time.size)

    @property
    def censored_fraction(self) -> float:
        return float(1.0 - self.event.mean())

    @cached_property
    def _prepared(self):
        order = np.argsort(self.observed_time, kind="stable")
        _, rank = np.unique(self.score[order], return_inverse=True)
        rank = rank.astype(np.int64).ravel()
        return (
            np.ascontiguousarray(self.observed_time[order]),
            np.ascontiguousarray(self.event[order]),
            rank,
            int(rank.max()) + 1,
        )


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous nonincreasing step function equal to 1 before the first jump."""

    jump_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if jt.shape != v.shape:
            raise ValueError("jump_times and values must have equal length")
        if jt.size and (np.any(np.diff(jt) <= 0) or jt[0] <= 0):
            raise ValueError("jump_times must be positive and strictly increasing")
        if v.size and (np.any(np.diff(v) > 0) or v[0] > 1 or v[-1] < 0):
            raise ValueError("values must be nonincreasing within [0, 1]")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "values", v)

    def _lookup(self, idx):
        padded = np.concatenate(([1.0], self.values))
        return padded[idx]

    def evaluate(self, t):
        """Value at ``t`` (right-continuous)."""
        idx = np.searchsorted(self.jump_times, t, side="right")
        out = self._lookup(idx)
        return float(out) if np.ndim(out) == 0 else out

    def evaluate_left(self, t):
        """Left limit at ``t``."""
        idx = np.searchsorted(self.jump_times, t, side="left")
        out = self._lookup(idx)
        return float(out) if np.ndim(out) == 0 else out

    __call__ = evaluate


@dataclass(frozen=True)
class CIndexEstimate:
    tau: float
    c_hat: float
    var_hat: float | None
    n: int
    estimator: Estimator
    bootstrap_reps: int | None = None
    bootstrap_dropped: int = 0


@dataclass(frozen=True)
class BootstrapResult:
    variance: float
    reps: int
    dropped: int

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


def km_censoring_survival(sample: SurvivalSample) -> StepFunction:
    """Kaplan-Meier estimate of the censoring survival function P(C > t).

    Censorings play the role of events. At a time shared by events and
    censorings, the risk set contains every subject with observed time at or
    after that time.
    """
    if sample is None or sample.n == 0:
        raise EmptySample("sample has no subjects")
    time, event, _, _ = sample._prepared
    g_at, _ = _kernels.censoring_km(time, event)
    cens = event == 0
    if not np.any(cens):
        return StepFunction(np.empty(0), np.empty(0))
    jt, first = np.unique(time[cens], return_index=True)
    return StepFunction(jt, g_at[cens][first])


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau!r}")
    return tau


def _raise_status(status: int, tau: float):
    if status == _kernels.NO_PAIRS:
        raise NoComparablePairs(f"no comparable pairs with shorter time <= tau={tau!r}")
    if status == _kernels.ZERO_G:
        raise ZeroCensoringSurvival(
            f"estimated censoring survival is zero at a required event time (tau={tau!r} "
            "too large for the follow-up of this sample)"
        )


def _estimate(sample: SurvivalSample, tau: float, mode: int) -> float:
    tau = _check_tau(tau)
    if mode == _kernels.RELATIVE_FREQUENCY and np.any(sample.event == 0):
        raise CensoringPresent("relative frequency requires a sample without censoring")
    time, event, rank, n_ranks = sample._prepared
    num, den, status = _kernels.weighted_concordance(time, event, rank, n_ranks, tau, mode)
    _raise_status(status, tau)
    return num / den


def c_relative_frequency(sample: SurvivalSample, tau: float = math.inf) -> float:
    """Relative frequency of concordant pairs; only defined without censoring."""
    return _estimate(sample, tau, _kernels.RELATIVE_FREQUENCY)


def c_harrell(sample: SurvivalSample, tau: float = math.inf) -> float:
    """Harrell's C restricted to shorter times at or below ``tau``."""
    return _estimate(sample, tau, _kernels.HARRELL)


def c_uno(
    sample: SurvivalSample,
    tau: float = math.inf,
    variant: UnoVariant = UnoVariant.SQUARED,
) -> float:
    """Uno's inverse-probability-of-censoring weighted C.

    ``variant="gerds"`` replaces G(T_i)^2 by G(T_i) * G(T_i-); the two agree
    unless an event time coincides with a censoring time.
    """
    return _estimate(sample, tau, _mode(Estimator.UNO, variant))


def concordance(
    sample: SurvivalSample,
    tau: float = math.inf,
    estimator: Estimator = Estimator.UNO,
    variant: UnoVariant = UnoVariant.SQUARED,
) -> float:
    return _estimate(sample, tau, _mode(estimator, variant))


def bootstrap_variance(
    sample: SurvivalSample,
    tau: float,
    estimator: Estimator = Estimator.UNO,
    reps: int = 1000,
    seed=None,
    variant: UnoVariant = UnoVariant.SQUARED,
) -> BootstrapResult:
    """Subject-level nonparametric bootstrap variance of a concordance estimator.

    All resample indices are drawn up front from one generator seeded by
    ``seed``, so the result does not depend on how replicates are evaluated.
    Resamples on which the estimator is undefined are dropped and counted.
    The censoring distribution is re-estimated within every resample.
    """
    reps = int(reps)
    if reps < 2:
        raise ValueError("reps must be >= 2")
    tau = _check_tau(tau)
    mode = _mode(estimator, variant)
    if mode == _kernels.RELATIVE_FREQUENCY and np.any(sample.event == 0):
        raise CensoringPresent("relative frequency requires a sample without censoring")
    rng = np.random.default_rng(seed)
    time, event, rank, n_ranks = sample._prepared
    idx = rng.integers(0, sample.n, size=(reps, sample.n))
    values = _kernels.bootstrap_concordance(time, event, rank, n_ranks, tau, mode, idx)
    ok = values[np.isfinite(values)]
    if ok.size < 2:
        raise AllResamplesFailed(
            f"estimator failed on {reps - ok.size} of {reps} bootstrap resamples"
        )
    return BootstrapResult(float(np.var(ok, ddof=1)), reps, int(reps - ok.size))


def estimate_cindex(
    sample: SurvivalSample,
    tau: float,
    estimator: Estimator = Estimator.UNO,
    variant: UnoVariant = UnoVariant.SQUARED,
    bootstrap_reps: int | None = 1000,
    seed=None,
) -> CIndexEstimate:
    """Point estimate plus (optionally) its bootstrap variance."""
    c_hat = concordance(sample, tau, estimator, variant)
    var_hat = None
    dropped = 0
    if bootstrap_reps:
        boot = bootstrap_variance(sample, tau, estimator, bootstrap_reps, seed, variant)
        var_hat, dropped = boot.variance, boot.dropped
    return CIndexEstimate(
        tau=float(tau),
        c_hat=float(c_hat),
        var_hat=var_hat,
        n=sample.n,
        estimator=Estimator(estimator),
        bootstrap_reps=bootstrap_reps or None,
        bootstrap_dropped=dropped,
    )


def jitter_ties(time, seed=None, fraction: float = 1e-3) -> np.ndarray:
    """Break tied times with small, rank-preserving offsets.

    Members of a tied group are spread over ``fraction`` of the gap to the
    next distinct time, in an order drawn from ``seed``. The ordering
    relative to all other distinct times is unchanged.
    """
    t = np.array(time, dtype=float)
    uniq, inverse, counts = np.unique(t, return_inverse=True, return_counts=True)
    if np.all(counts == 1):
        return t
    gaps = np.diff(uniq)
    min_gap = gaps.min() if gaps.size else max(abs(uniq[0]), 1.0)
    step_room = np.append(gaps, min_gap) * fraction
    rng = np.random.default_rng(seed)
    out = t.copy()
    for g in np.flatnonzero(counts > 1):
        members = np.flatnonzero(inverse == g)
        members = members[rng.permutation(members.size)]
        m = members.size
        out[members] = uniq[g] + step_room[g] * np.arange(m) / m
    return out
