"""Random-effects meta-analysis and meta-regression of C-index estimates on τ.

Study estimates are transformed (``transforms``), then modelled as

    y_k = f(τ_k; γ) + a_k + ε_k,   a_k ~ N(0, σ_a²),   ε_k ~ N(0, v_k)

with known within-study variances ``v_k``. The mean function ``f`` is a
constant (MA), a line, a restricted cubic spline, a second-degree fractional
polynomial, or the exponential-decay curve

    f = θ + a + (R0 − θ − a) · exp(−exp(β) τ)

in which the random effect enters nonlinearly. σ_a² is estimated by REML
and coefficient intervals use the Hartung–Knapp adjustment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations_with_replacement

import numpy as np
from scipy import optimize, stats

from . import transforms
from .errors import (
    CIndexMetaError,
    DegenerateDesign,
    DomainViolation,
    InsufficientStudies,
    NonConvergence,
    NotConverged,
)
from .transforms import TransformTag

__all__ = [
    "Family",
    "Subset",
    "Status",
    "FP_POWERS",
    "StudySummary",
    "MetaModelSpec",
    "MetaFit",
    "GridRow",
    "rcs_auto_knots",
    "design_matrix",
    "subset_by_tau",
    "prepare",
    "reml_profile",
    "fit_reml",
    "fit_exp_decay",
    "fit",
    "predict",
    "fp2_power_grid",
]

FP_POWERS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)

_BOUNDARY_ZERO = 1e-12
_REML_GRID = 60


class Family(str, Enum):
    MA = "ma"
    LINEAR = "linear"
    RCS = "rcs"
    FP2 = "fp2"
    EXPDECAY = "expdecay"


class Subset(str, Enum):
    ALL = "all"
    LAST50 = "last50"
    LAST30 = "last30"


class Status(str, Enum):
    OK = "ok"
    WARNING = "warning"
    FAILED = "failed"


@dataclass(frozen=True)
class StudySummary:
    study_id: str
    tau: float
    c_hat: float
    var_hat: float
    n: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "study_id", str(self.study_id))
        tau, c, v = float(self.tau), float(self.c_hat), float(self.var_hat)
        if not (math.isfinite(tau) and tau > 0):
            raise DomainViolation(f"study {self.study_id}: tau must be finite and > 0")
        if not 0.0 <= c <= 1.0:
            raise DomainViolation(f"study {self.study_id}: c_hat must lie in [0, 1]")
        if not (math.isfinite(v) and v > 0):
            raise DomainViolation(f"study {self.study_id}: var_hat must be finite and > 0")
        if self.n is not None:
            n = int(self.n)
            if n < 1 or n != self.n:
                raise DomainViolation(f"study {self.study_id}: n must be a positive integer")
            object.__setattr__(self, "n", n)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "c_hat", c)
        object.__setattr__(self, "var_hat", v)


@dataclass(frozen=True)
class MetaModelSpec:
    """Transform, mean-function family and its parameters, and study subset."""

    family: Family = Family.MA
    transform: TransformTag = TransformTag.IDENTITY
    subset: Subset = Subset.ALL
    rcs_knots: tuple | None = None
    fp_powers: tuple = (-0.5, 0.5)
    hk_floor: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "transform", TransformTag(self.transform))
        object.__setattr__(self, "subset", Subset(self.subset))
        p = tuple(sorted(float(x) for x in self.fp_powers))
        if len(p) != 2 or any(x not in FP_POWERS for x in p):
            raise ValueError(f"fp_powers must be two values from {FP_POWERS}, got {self.fp_powers}")
        object.__setattr__(self, "fp_powers", p)
        if self.rcs_knots is not None:
            k = tuple(float(x) for x in self.rcs_knots)
            if len(k) < 3 or any(b <= a for a, b in zip(k, k[1:])):
                raise ValueError("rcs_knots needs >= 3 strictly increasing values")
            object.__setattr__(self, "rcs_knots", k)

    @property
    def label(self) -> str:
        """Compact name, e.g. ``fp2(logit)`` or ``ma(id)/last30``."""
        name = f"{self.family.value}({self.transform.value})"
        if self.family is Family.FP2 and self.fp_powers != (-0.5, 0.5):
            name = f"fp2[{_fmt_power(self.fp_powers[0])},{_fmt_power(self.fp_powers[1])}]({self.transform.value})"
        if self.subset is not Subset.ALL:
            name += f"/{self.subset.value}"
        return name

    @classmethod
    def parse(cls, label: str) -> "MetaModelSpec":
        """Inverse of :attr:`label`."""
        text = label.strip()
        subset = Subset.ALL
        if "/" in text:
            text, sub = text.split("/", 1)
            subset = Subset(sub)
        if not text.endswith(")") or "(" not in text:
            raise ValueError(f"cannot parse model label {label!r}")
        head, tr = text[:-1].split("(", 1)
        powers = (-0.5, 0.5)
        if head.startswith("fp2[") and head.endswith("]"):
            powers = tuple(float(x) for x in head[4:-1].split(","))
            head = "fp2"
        return cls(family=Family(head), transform=TransformTag(tr), subset=subset, fp_powers=powers)


def _fmt_power(p: float) -> str:
    return str(int(p)) if p == int(p) else repr(p)


@dataclass(frozen=True)
class MetaFit:
    spec: MetaModelSpec
    status: Status
    message: str = ""
    gamma: np.ndarray | None = None
    sigma_a2: float = math.nan
    cov_gamma: np.ndarray | None = None
    q_stat: float = math.nan
    q_df: int = 0
    q_pvalue: float = math.nan
    k_used: int = 0
    knots: tuple | None = None
    tau: np.ndarray | None = field(default=None, repr=False)
    y: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    n_clamped: int = 0
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status is not Status.FAILED

    @property
    def sigma_a(self) -> float:
        return math.sqrt(self.sigma_a2) if self.sigma_a2 >= 0 else math.nan

    @property
    def df(self) -> int:
        return self.k_used - (0 if self.gamma is None else len(self.gamma))

    @property
    def se_gamma(self):
        return None if self.cov_gamma is None else np.sqrt(np.diag(self.cov_gamma))


@dataclass(frozen=True)
class GridRow:
    powers: tuple
    rmse: float
    status: Status
    message: str = ""


# ---------------------------------------------------------------- design

def rcs_auto_knots(taus) -> tuple:
    """Knots at τ quantiles: 4 knots when K >= 30, else 3."""
    taus = np.asarray(taus, dtype=float)
    k = taus.size
    if k < 3:
        raise InsufficientStudies(f"automatic spline knots need K >= 3, got {k}")
    probs = (0.05, 0.35, 0.65, 0.95) if k >= 30 else (0.10, 0.50, 0.90)
    knots = np.quantile(taus, probs)
    if np.any(np.diff(knots) <= 0):
        raise DegenerateDesign(f"spline knots not distinct: {knots.tolist()}")
    return tuple(float(x) for x in knots)


def _rcs_basis(x, knots):
    t = np.asarray(knots, dtype=float)
    k = t.size
    scale = (t[-1] - t[0]) ** 2
    span = t[-1] - t[-2]
    cube = lambda u: np.maximum(u, 0.0) ** 3
    cols = []
    for j in range(k - 2):
        b = (
            cube(x - t[j])
            - cube(x - t[-2]) * (t[-1] - t[j]) / span
            + cube(x - t[-1]) * (t[-2] - t[j]) / span
        )
        cols.append(b / scale)
    return cols


def _fp_term(x, p):
    return np.log(x) if p == 0 else x ** p


def design_matrix(family: Family, taus, *, knots=None, powers=(-0.5, 0.5)) -> np.ndarray:
    """Fixed-effects design for the linear-in-parameters families.

    The rank check is done by the fitting routines, which know how many
    rows they need; this function only builds the columns.
    """
    family = Family(family)
    x = np.asarray(taus, dtype=float).ravel()
    if x.size == 0:
        raise InsufficientStudies("no τ values")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise DomainViolation("τ values must be finite and > 0")
    one = np.ones_like(x)
    if family is Family.MA:
        cols = [one]
    elif family is Family.LINEAR:
        cols = [one, x]
    elif family is Family.RCS:
        if knots is None:
            knots = rcs_auto_knots(x)
        cols = [one, x, *_rcs_basis(x, knots)]
    elif family is Family.FP2:
        p1, p2 = sorted(float(p) for p in powers)
        f1 = _fp_term(x, p1)
        cols = [one, f1, f1 * np.log(x) if p1 == p2 else _fp_term(x, p2)]
    else:
        raise ValueError("the exponential-decay family has no linear design")
    return np.column_stack(cols)


def subset_by_tau(studies, rule: Subset = Subset.ALL) -> list:
    """Studies with the largest τ: ceil(K/2) for last50, ceil(0.3 K) for last30.

    Ties in τ are broken by study_id; the input order is preserved.
    """
    rule = Subset(rule)
    studies = list(studies)
    k = len(studies)
    if rule is Subset.ALL:
        return studies
    keep = (k + 1) // 2 if rule is Subset.LAST50 else (3 * k + 9) // 10
    ranked = sorted(range(k), key=lambda i: (-studies[i].tau, studies[i].study_id))
    chosen = set(ranked[:keep])
    return [s for i, s in enumerate(studies) if i in chosen]


@dataclass(frozen=True)
class _Prepared:
    tau: np.ndarray
    y: np.ndarray
    v: np.ndarray
    n: np.ndarray
    n_clamped: int


def prepare(spec: MetaModelSpec, studies) -> _Prepared:
    """Subset, clamp and transform study summaries.

    Studies are put in a canonical order (τ, then study_id) so that fits do
    not depend on the input order down to floating point summation.
    """
    used = sorted(subset_by_tau(studies, spec.subset),
                  key=lambda s: (s.tau, s.study_id, s.c_hat, s.var_hat))
    if not used:
        raise InsufficientStudies("no studies")
    tau = np.array([s.tau for s in used])
    c = np.array([s.c_hat for s in used])
    var = np.array([s.var_hat for s in used])
    n = np.array([np.nan if s.n is None else s.n for s in used], dtype=float)
    n_clamped = 0
    if spec.transform is not TransformTag.IDENTITY:
        eps = np.where(np.isnan(n), transforms.clamp_epsilon(None), 1.0 / (2.0 * np.where(np.isnan(n), 1.0, n)))
        clamped = np.clip(c, eps, 1.0 - eps)
        n_clamped = int(np.count_nonzero(clamped != c))
        c = clamped
    y = np.asarray(transforms.apply(spec.transform, c), dtype=float)
    v = np.asarray(transforms.transform_variance(spec.transform, c, var), dtype=float)
    if np.any(~(v > 0)) or np.any(~np.isfinite(v)):
        raise DomainViolation("transformed variances must be finite and > 0")
    return _Prepared(tau, y, v, n, n_clamped)


# ---------------------------------------------------------------- REML

def _gls(X, y, var):
    """Weighted least squares with weights 1/var; returns (gamma, XtWX, resid)."""
    w = 1.0 / var
    xtw = X.T * w
    xtwx = xtw @ X
    try:
        chol = np.linalg.cholesky(xtwx)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesign("weighted cross-product matrix is singular") from exc
    gamma = np.linalg.solve(chol.T, np.linalg.solve(chol, xtw @ y))
    return gamma, xtwx, chol, y - X @ gamma


def _restricted_loglik(s, X, y, v, z2):
    var = v + s * z2
    _, _, chol, r = _gls(X, y, var)
    return -0.5 * (np.sum(np.log(var)) + 2.0 * np.sum(np.log(np.diag(chol))) + np.sum(r * r / var))


def _restricted_loglik_grid(grid, X, y, v, z2):
    """Vectorized :func:`_restricted_loglik` over an array of σ_a² values."""
    var = v[None, :] + grid[:, None] * z2[None, :]
    w = 1.0 / var
    xtwx = np.einsum("gk,ki,kj->gij", w, X, X)
    xtwy = np.einsum("gk,ki,k->gi", w, X, y)
    try:
        chol = np.linalg.cholesky(xtwx)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesign("weighted cross-product matrix is singular") from exc
    gamma = np.linalg.solve(xtwx, xtwy[..., None])[..., 0]
    r = y[None, :] - gamma @ X.T
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    return -0.5 * (np.sum(np.log(var), axis=1) + logdet + np.sum(r * r * w, axis=1))


def _check_rank(X):
    p = X.shape[1]
    # scale columns so the rank test is about collinearity, not units
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0) or np.linalg.matrix_rank(X / norms) < p:
        raise DegenerateDesign(f"design matrix has rank < {p}")


def reml_profile(X, y, v, z2=None):
    """Maximize the restricted log-likelihood over σ_a² in [0, 10·Var(y)].

    A geometric coarse grid (plus zero) locates the global maximum, which is
    refined by bounded Brent search between the neighbouring grid points.
    Returns ``(sigma_a2, at_upper_bound)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    z2 = np.ones_like(y) if z2 is None else np.asarray(z2, dtype=float)
    upper = 10.0 * float(np.var(y, ddof=1)) if y.size > 1 else 0.0
    if not upper > 0:
        return 0.0, False

    def nll(s):
        return -_restricted_loglik(s, X, y, v, z2)

    grid = np.concatenate(([0.0], upper * np.geomspace(1e-10, 1.0, _REML_GRID)))
    vals = -_restricted_loglik_grid(grid, X, y, v, z2)
    if not np.all(np.isfinite(vals)):
        raise NonConvergence("restricted likelihood not finite on the search grid")
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    best_s, best_v = grid[i], vals[i]
    if hi > lo:
        res = optimize.minimize_scalar(
            nll, bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-10 * max(hi, 1e-300), "maxiter": 200},
        )
        if not np.isfinite(res.fun):
            raise NonConvergence("restricted likelihood optimizer returned a non-finite value")
        if res.fun < best_v:
            best_s, best_v = float(res.x), float(res.fun)
    if best_s < _BOUNDARY_ZERO:
        best_s = 0.0
    at_upper = best_s >= upper * (1.0 - 1e-6)
    return float(best_s), bool(at_upper)


def _q_test(X, y, v):
    _, _, _, r = _gls(X, y, v)
    q = float(np.sum(r * r / v))
    df = y.size - X.shape[1]
    return q, df, float(stats.chi2.sf(q, df))


def _hk_cov(xtwx_chol, r, var, df, floor):
    q = float(np.sum(r * r / var)) / df
    if floor:
        q = max(q, 1.0)
    inv = np.linalg.inv(xtwx_chol @ xtwx_chol.T)
    cov = q * inv
    return 0.5 * (cov + cov.T)


def fit_reml(spec: MetaModelSpec, studies, *, sigma_a2: float | None = None) -> MetaFit:
    """REML fit of the MA, linear, RCS or FP2 model.

    ``sigma_a2`` pins the between-study variance (0 gives the common-effect
    fit); it is meant for checks, not analysis.
    """
    if spec.family is Family.EXPDECAY:
        return fit_exp_decay(spec, studies)
    prep = prepare(spec, studies)
    knots = None
    if spec.family is Family.RCS:
        knots = spec.rcs_knots if spec.rcs_knots is not None else rcs_auto_knots(prep.tau)
    X = design_matrix(spec.family, prep.tau, knots=knots, powers=spec.fp_powers)
    k, p = X.shape
    if k < p + 1:
        raise InsufficientStudies(f"{spec.label} needs K >= {p + 1} studies, got {k}")
    _check_rank(X)
    status, message = Status.OK, ""
    if sigma_a2 is None:
        s, at_upper = reml_profile(X, prep.y, prep.v)
        if at_upper:
            status, message = Status.WARNING, "between-study variance at upper search bound"
    else:
        s = float(sigma_a2)
    var = prep.v + s
    gamma, _, chol, r = _gls(X, prep.y, var)
    cov = _hk_cov(chol, r, var, k - p, spec.hk_floor)
    q, df, pval = _q_test(X, prep.y, prep.v)
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(cov))):
        raise NonConvergence("non-finite coefficients")
    return MetaFit(
        spec=spec, status=status, message=message, gamma=gamma, sigma_a2=s,
        cov_gamma=cov, q_stat=q, q_df=df, q_pvalue=pval, k_used=k, knots=knots,
        tau=prep.tau, y=prep.y, v=prep.v, n_clamped=prep.n_clamped,
    )


# ---------------------------------------------------------------- exponential decay

_MAX_ITER = 100
_TOL = 1e-8
_MAX_BETA = 25.0
_MIN_STEP = 1.0 / 1024.0


def _decay_mean(phi, a, tau):
    theta, beta, r0 = phi
    e = np.exp(-np.exp(beta) * tau)
    return theta + a + (r0 - theta - a) * e


def _decay_jacobian(phi, a, tau):
    """Columns d/dθ, d/dβ, d/dR0 and the random-effect direction z."""
    theta, beta, r0 = phi
    rate = np.exp(beta)
    e = np.exp(-rate * tau)
    d_beta = (r0 - theta - a) * (-tau * rate * e)
    return np.column_stack((1.0 - e, d_beta, e)), 1.0 - e


def _prss(phi, a, s, y, v, tau):
    r = y - _decay_mean(phi, a, tau)
    pen = float(np.sum(a * a) / s) if s > 0 else 0.0
    return float(np.sum(r * r / v)) + pen


def fit_exp_decay(spec: MetaModelSpec, studies) -> MetaFit:
    """Exponential-decay model by alternating linearization.

    Each iteration linearizes the mean around the current fixed effects and
    random-effect modes, estimates σ_a² by REML on the working linear mixed
    model, updates the fixed effects by GLS and the modes by BLUP, and
    applies step halving on the penalized residual sum of squares. Any
    numerical breakdown yields a ``Failed`` fit instead of an exception.
    """
    if spec.family is not Family.EXPDECAY:
        raise ValueError("fit_exp_decay needs the expdecay family")
    prep = prepare(spec, studies)
    tau, y, v = prep.tau, prep.y, prep.v
    k = y.size
    if k < 4:
        raise InsufficientStudies(f"{spec.label} needs K >= 4 studies, got {k}")
    base = dict(spec=spec, k_used=k, tau=tau, y=y, v=v, n_clamped=prep.n_clamped)

    def failed(msg, it):
        return MetaFit(status=Status.FAILED, message=msg, iterations=it, **base)

    phi = np.array([y.min(), math.log(1.0 / float(np.median(tau))), y.max()])
    a = np.zeros(k)
    s = 0.0
    at_upper = False
    converged = False
    it = 0
    with np.errstate(all="ignore"):
        for it in range(1, _MAX_ITER + 1):
            X, z = _decay_jacobian(phi, a, tau)
            w = y - _decay_mean(phi, a, tau) + X @ phi + z * a
            try:
                _check_rank(X)
                s_new, at_upper = reml_profile(X, w, v, z * z)
                var = v + s_new * z * z
                phi_new, _, _, r = _gls(X, w, var)
            except CIndexMetaError as exc:
                return failed(f"{exc.name}: {exc}", it)
            if np.linalg.cond(X / np.linalg.norm(X, axis=0)) > 1e10:
                return failed("ill-conditioned linearized design", it)
            a_new = s_new * z * r / var
            if not (np.all(np.isfinite(phi_new)) and np.all(np.isfinite(a_new))):
                return failed("non-finite update", it)
            old = _prss(phi, a, s_new, y, v, tau)
            step = 1.0
            while True:
                phi_t = phi + step * (phi_new - phi)
                a_t = a + step * (a_new - a)
                cand = _prss(phi_t, a_t, s_new, y, v, tau)
                if (np.isfinite(cand) and cand <= old) or step <= _MIN_STEP:
                    break
                step *= 0.5
            if abs(phi_t[1]) > _MAX_BETA:
                return failed(f"decay rate parameter diverged (beta={phi_t[1]:.3g})", it)
            if not np.isfinite(cand):
                return failed("non-finite penalized residual sum of squares", it)
            dphi = np.max(np.abs(phi_t - phi) / np.maximum(np.abs(phi), 1e-3))
            ds = abs(s_new - s) / max(s, 1e-3 * float(np.mean(v)))
            phi, a, s = phi_t, a_t, s_new
            if dphi < _TOL and ds < _TOL:
                converged = True
                break
    if not converged:
        return failed(f"no convergence within {_MAX_ITER} iterations", it)

    X, z = _decay_jacobian(phi, np.zeros(k), tau)
    w = y - _decay_mean(phi, np.zeros(k), tau) + X @ phi
    try:
        var = v + s * z * z
        _, _, chol, r = _gls(X, w, var)
        cov = _hk_cov(chol, r, var, k - 3, spec.hk_floor)
        q, df, pval = _q_test(X, w, v)
    except CIndexMetaError as exc:
        return failed(f"{exc.name}: {exc}", it)
    if not (np.all(np.isfinite(cov)) and math.isfinite(q)):
        return failed("non-finite covariance", it)
    status, message = Status.OK, ""
    if at_upper:
        status, message = Status.WARNING, "between-study variance at upper search bound"
    base.update(
        status=status, message=message, gamma=phi, sigma_a2=s, cov_gamma=cov,
        q_stat=q, q_df=df, q_pvalue=pval, iterations=it,
    )
    return MetaFit(**base)


def fit(spec: MetaModelSpec, studies) -> MetaFit:
    """Fit any family; every modelling error becomes a ``Failed`` fit."""
    try:
        if spec.family is Family.EXPDECAY:
            return fit_exp_decay(spec, studies)
        return fit_reml(spec, studies)
    except CIndexMetaError as exc:
        return MetaFit(spec=spec, status=Status.FAILED, message=f"{exc.name}: {exc}")


# ---------------------------------------------------------------- prediction

def _row_and_grad(fit_: MetaFit, tau):
    spec = fit_.spec
    if spec.family is Family.EXPDECAY:
        g = fit_.gamma
        point = _decay_mean(g, 0.0, tau)
        grad, _ = _decay_jacobian(g, 0.0, tau)
        return point, grad
    X = design_matrix(spec.family, tau, knots=fit_.knots, powers=spec.fp_powers)
    return X @ fit_.gamma, X


def _to_probability(tag: TransformTag, y):
    if tag is TransformTag.IDENTITY:
        y = np.clip(y, 0.0, 1.0)
    elif tag is TransformTag.ARCSINE_SQRT:
        y = np.clip(y, 0.0, np.pi / 2)
    return np.asarray(transforms.invert(tag, y), dtype=float)


def predict(fit_: MetaFit, tau, level: float = 0.95, *, scale: str = "probability"):
    """Pooled C(τ) with Hartung–Knapp interval.

    Returns ``(point, low, high)``; on the probability scale values outside
    the transform's range are clipped before back-transformation. Use
    ``scale="transformed"`` to skip the back-transformation.
    """
    if fit_.status is Status.FAILED or fit_.gamma is None:
        raise NotConverged(f"{fit_.spec.label}: {fit_.message or 'fit failed'}")
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(~(tau_arr > 0)):
        raise DomainViolation("tau must be > 0")
    point, X = _row_and_grad(fit_, tau_arr)
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, fit_.cov_gamma, X), 0.0))
    tq = stats.t.ppf(0.5 + level / 2.0, fit_.df)
    lo, hi = point - tq * se, point + tq * se
    if scale != "transformed":
        tag = fit_.spec.transform
        point, lo, hi = (_to_probability(tag, u) for u in (point, lo, hi))
    if np.ndim(tau) == 0:
        return float(point[0]), float(lo[0]), float(hi[0])
    return point, lo, hi


# ---------------------------------------------------------------- FP2 grid

def fp2_power_grid(studies, transform: TransformTag = TransformTag.LOGIT, loss_studies=None,
                   subset: Subset = Subset.ALL) -> list:
    """Fit FP2 for all 36 power pairs and rank them by weighted RMSE.

    The RMSE is ``sqrt(sum_k (n_k / n) (C_k - C_fit(τ_k))^2)`` over
    ``loss_studies`` (default: the fitted studies), with equal weights when
    study sizes are missing. Failed pairs carry ``nan`` and sort last.
    """
    studies = list(studies)
    loss = studies if loss_studies is None else list(loss_studies)
    if len(studies) < 6:
        raise InsufficientStudies(f"power grid needs >= 6 studies, got {len(studies)}")
    ns = np.array([np.nan if s.n is None else s.n for s in loss], dtype=float)
    weights = np.ones(len(loss)) if np.any(np.isnan(ns)) else ns
    weights = weights / weights.sum()
    taus = np.array([s.tau for s in loss])
    cs = np.array([s.c_hat for s in loss])
    rows = []
    for pair in combinations_with_replacement(FP_POWERS, 2):
        spec = MetaModelSpec(Family.FP2, transform, subset, fp_powers=pair)
        f = fit(spec, studies)
        if f.status is Status.FAILED:
            rows.append(GridRow(pair, math.nan, f.status, f.message))
            continue
        pred, _, _ = predict(f, taus)
        rmse = float(np.sqrt(np.sum(weights * (cs - pred) ** 2)))
        rows.append(GridRow(pair, rmse, f.status, f.message))
    order = sorted(range(len(rows)), key=lambda i: (math.isnan(rows[i].rmse), rows[i].rmse if not math.isnan(rows[i].rmse) else 0.0, i))
    return [rows[i] for i in order]
