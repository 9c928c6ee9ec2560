"""Scale transformations for concordance estimates.

Each transform has a forward map ``g``, its inverse and the derivative used
for delta-method variances. Estimates at the boundary of the logit or arcsine
domain can be pulled inward with :func:`clamp`.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DomainViolation

__all__ = [
    "TransformTag",
    "apply",
    "invert",
    "derivative",
    "transform_variance",
    "clamp",
    "clamp_epsilon",
]

_HALF_PI = np.pi / 2


class TransformTag(str, Enum):
    IDENTITY = "id"
    LOGIT = "logit"
    ARCSINE_SQRT = "asin"


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def apply(tag: TransformTag, c):
    """Forward transform of probabilities ``c``."""
    tag = TransformTag(tag)
    c = np.asarray(c, dtype=float)
    if np.any(np.isnan(c)) or np.any(c < 0) or np.any(c > 1):
        raise DomainViolation(f"{tag.value}: values must lie in [0, 1]")
    if tag is TransformTag.IDENTITY:
        out = c.copy()
    elif tag is TransformTag.LOGIT:
        if np.any((c <= 0) | (c >= 1)):
            raise DomainViolation("logit: values must lie strictly inside (0, 1)")
        out = np.log(c) - np.log1p(-c)
    else:
        out = np.arcsin(np.sqrt(c))
    return _scalar_or_array(out)


def invert(tag: TransformTag, y):
    """Inverse transform back to the probability scale."""
    tag = TransformTag(tag)
    y = np.asarray(y, dtype=float)
    if np.any(np.isnan(y)):
        raise DomainViolation(f"{tag.value}: NaN input")
    if tag is TransformTag.IDENTITY:
        if np.any((y < 0) | (y > 1)):
            raise DomainViolation("id: values must lie in [0, 1]")
        out = y.copy()
    elif tag is TransformTag.LOGIT:
        # numerically stable logistic
        ey = np.exp(-np.abs(y))
        out = np.where(y >= 0, 1.0 / (1.0 + ey), ey / (1.0 + ey))
    else:
        if np.any((y < 0) | (y > _HALF_PI)):
            raise DomainViolation("asin: values must lie in [0, pi/2]")
        out = np.sin(y) ** 2
    return _scalar_or_array(out)


def derivative(tag: TransformTag, c):
    """Derivative g'(c) of the forward transform."""
    tag = TransformTag(tag)
    c = np.asarray(c, dtype=float)
    if tag is TransformTag.IDENTITY:
        return _scalar_or_array(np.ones_like(c))
    if np.any((c <= 0) | (c >= 1)):
        raise DomainViolation(f"{tag.value}: derivative needs c strictly inside (0, 1)")
    if tag is TransformTag.LOGIT:
        out = 1.0 / (c * (1.0 - c))
    else:
        out = 0.5 / np.sqrt(c * (1.0 - c))
    return _scalar_or_array(out)


def transform_variance(tag: TransformTag, c, var):
    """Delta-method variance ``var * g'(c)^2`` on the transformed scale."""
    var = np.asarray(var, dtype=float)
    if np.any(var < 0) or np.any(np.isnan(var)):
        raise DomainViolation("variance must be nonnegative")
    tag = TransformTag(tag)
    if tag is TransformTag.IDENTITY:
        return _scalar_or_array(var.copy())
    c = np.asarray(c, dtype=float)
    if np.any((c <= 0) | (c >= 1)):
        raise DomainViolation(f"{tag.value}: variance needs c strictly inside (0, 1)")
    if tag is TransformTag.LOGIT:
        out = var / (c * (1.0 - c)) ** 2
    else:
        out = var / (4.0 * c * (1.0 - c))
    return _scalar_or_array(out)


def clamp_epsilon(n=None) -> float:
    """Boundary margin: ``1/(2n)`` when the study size is known, else 1e-6."""
    if n is None:
        return 1e-6
    n = np.asarray(n, dtype=float)
    if np.any(~(n > 0)):
        raise ValueError("n must be positive")
    return _scalar_or_array(1.0 / (2.0 * n))


def clamp(c, n=None):
    """Pull ``c`` into ``[eps, 1 - eps]``.

    Returns the clamped values and a boolean (array) flagging which entries
    were moved.
    """
    c = np.asarray(c, dtype=float)
    eps = np.asarray(clamp_epsilon(n), dtype=float)
    lo, hi = eps, 1.0 - eps
    out = np.clip(c, lo, hi)
    moved = out != c
    return _scalar_or_array(out), (bool(moved) if moved.ndim == 0 else moved)
