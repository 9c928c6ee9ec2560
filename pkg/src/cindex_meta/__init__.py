"""Time-restricted concordance estimation and time-aware meta-regression.

Modules
-------
survival    Relative-frequency, Harrell and Uno estimators of C(τ), bootstrap variances.
transforms  Identity, logit and arcsine-square-root scales with delta-method variances.
meta        REML random-effects meta-analysis and meta-regression on τ.
sim         Simulation of multi-study validation data and evaluation criteria.
cli         ``cindex-meta`` command-line interface.
"""

from . import errors, meta, sim, survival, transforms
from .meta import MetaFit, MetaModelSpec, StudySummary, fit, predict
from .survival import SurvivalSample, c_harrell, c_relative_frequency, c_uno

__version__ = "0.1.0"

__all__ = [
    "errors",
    "meta",
    "sim",
    "survival",
    "transforms",
    "MetaFit",
    "MetaModelSpec",
    "StudySummary",
    "SurvivalSample",
    "c_harrell",
    "c_relative_frequency",
    "c_uno",
    "fit",
    "predict",
]
