"""Simulation of multi-study validation data and operating characteristics.

Each replication draws K studies with random size and truncation time,
simulates Weibull survival data with exponential censoring, estimates the
restricted C-index with a bootstrap variance, optionally perturbs the
estimates with between-study heterogeneity and fits every configured model.
Random streams are derived from ``(seed, replication)`` and
``(seed, replication, study)``, so results do not depend on execution order.
"""

from __future__ import annotations

import configparser
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache

import numpy as np
from scipy import stats

from . import _kernels, survival
from .errors import CIndexMetaError, ConfigError, NoComparablePairs, NotConverged
from .io import rows_to_csv
from .meta import Family, MetaModelSpec, Status, StudySummary, Subset, fit, predict
from .survival import Estimator, SurvivalSample, UnoVariant
from .transforms import TransformTag

__all__ = [
    "ScenarioConfig",
    "ModelOutcome",
    "ReplicationResult",
    "TrueCurve",
    "default_models",
    "replication_rng",
    "sample_truncated_gamma",
    "gen_weibull_study",
    "gen_nonmonotone_study",
    "true_curve",
    "true_c_oracle",
    "simulate_studies",
    "run_replication",
    "run_scenario",
    "enclosed_area",
    "eval_enclosed_area",
    "eval_failure_rate",
    "eval_coverage",
    "eval_bias",
    "eval_area",
    "replications_csv",
    "summary_csv",
]

_ORACLE_KEY = 2**31
_AREA_POINTS = 1000
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def default_models() -> tuple:
    """The five families under each transform, plus MA on the last 30% / 50%."""
    out = []
    for fam in (Family.MA, Family.LINEAR, Family.RCS, Family.FP2, Family.EXPDECAY):
        for tr in TransformTag:
            out.append(MetaModelSpec(fam, tr).label)
    for sub in (Subset.LAST30, Subset.LAST50):
        for tr in TransformTag:
            out.append(MetaModelSpec(Family.MA, tr, sub).label)
    return tuple(out)


def _int_grid(text: str) -> tuple:
    text = text.strip()
    if ":" in text:
        start, stop, step = (int(x) for x in text.split(":"))
        return tuple(range(start, stop + 1, step))
    return tuple(int(x) for x in text.split(","))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario; field names double as config-file keys."""

    K: int = 30
    tau_max: float = 2.0
    sigma_a: float = 0.0
    n_grid: tuple = tuple(range(100, 1001, 10))
    censor_rate: float = 0.5
    tau_dist: str = "gamma"
    tau_shape: float = 1.5
    tau_rate: float = 1.0
    tau_lower: float = 0.1
    weibull_sigma: float = 0.5
    score_sd: float = 0.5
    replications: int = 1000
    bootstrap_reps: int = 1000
    seed: int = 0
    n_mc: int = 1_000_000
    eval_fraction: float = 0.8
    estimator: str = "uno"
    uno_variant: str = "gerds"
    models: tuple = field(default_factory=default_models)
    name: str = "scenario"

    def __post_init__(self):
        coerce = {
            "K": int, "replications": int, "bootstrap_reps": int, "seed": int, "n_mc": int,
            "tau_max": float, "sigma_a": float, "censor_rate": float, "tau_shape": float,
            "tau_rate": float, "tau_lower": float, "weibull_sigma": float,
            "score_sd": float, "eval_fraction": float,
        }
        for key, kind in coerce.items():
            object.__setattr__(self, key, kind(getattr(self, key)))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "models", tuple(self.models))
        if self.K < 1 or self.replications < 1 or self.bootstrap_reps < 2:
            raise ConfigError("K and replications must be >= 1 and bootstrap_reps >= 2")
        if not self.n_grid or min(self.n_grid) < 2:
            raise ConfigError("n_grid must contain sizes >= 2")
        for key in ("tau_max", "censor_rate", "tau_shape", "tau_rate", "tau_lower",
                    "weibull_sigma", "score_sd"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be > 0")
        if self.sigma_a < 0:
            raise ConfigError("sigma_a must be >= 0")
        if not self.tau_lower < self.tau_max:
            raise ConfigError("tau_lower must be < tau_max")
        if self.tau_dist not in ("gamma", "uniform"):
            raise ConfigError("tau_dist must be gamma or uniform")
        if not 0 < self.eval_fraction <= 1:
            raise ConfigError("eval_fraction must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        Estimator(self.estimator)
        UnoVariant(self.uno_variant)
        if not self.models:
            raise ConfigError("at least one model is required")
        for label in self.models:
            try:
                MetaModelSpec.parse(label)
            except ValueError as exc:
                raise ConfigError(f"bad model label {label!r}: {exc}") from None

    @property
    def eval_tau(self) -> float:
        return self.eval_fraction * self.tau_max

    @property
    def model_specs(self) -> tuple:
        return tuple(MetaModelSpec.parse(m) for m in self.models)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        merged = {f.name: getattr(self, f.name) for f in fields(self)}
        merged.update(kw)
        return ScenarioConfig(**merged)

    @classmethod
    def from_mapping(cls, raw: dict) -> "ScenarioConfig":
        """Build from string values as found in a config file."""
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "n_grid":
                kw[key] = _int_grid(value)
            elif key == "models":
                kw[key] = tuple(m.strip() for m in value.split(",") if m.strip())
            else:
                kw[key] = value
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path, **overrides) -> "ScenarioConfig":
        """Read ``key = value`` lines (``#`` comments allowed)."""
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_string("[scenario]\n" + fh.read())
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc.message}") from None
        raw = dict(parser["scenario"])
        raw.update({k: str(v) for k, v in overrides.items() if v is not None})
        return cls.from_mapping(raw)

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if key == "n_grid":
                value = ",".join(str(n) for n in value)
            elif key == "models":
                value = ",".join(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- generators

def replication_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def sample_truncated_gamma(rng, size, shape, rate, lower, upper) -> np.ndarray:
    """Inverse-CDF draws from a gamma distribution restricted to [lower, upper]."""
    dist = stats.gamma(shape, scale=1.0 / rate)
    lo, hi = dist.cdf(lower), dist.cdf(upper)
    u = rng.random(size)
    return np.clip(dist.ppf(lo + u * (hi - lo)), lower, upper)


def _sample_tau(cfg: ScenarioConfig, rng, size):
    if cfg.tau_dist == "uniform":
        return rng.uniform(cfg.tau_lower, cfg.tau_max, size)
    return sample_truncated_gamma(rng, size, cfg.tau_shape, cfg.tau_rate, cfg.tau_lower, cfg.tau_max)


def _weibull_times(n, score_sd, sigma, rng):
    eta = rng.normal(0.0, score_sd, n)
    gumbel = -np.log(-np.log(rng.random(n)))
    return eta, np.exp(eta - sigma * gumbel)


def gen_weibull_study(n: int, tau_k: float, cfg: ScenarioConfig, rng) -> SurvivalSample:
    """Weibull event times with exponential and administrative censoring.

    log T = η − σ W with η ~ N(0, score_sd²) and W standard Gumbel. The stored
    score is −η so that higher scores mean earlier events.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    eta, t = _weibull_times(n, cfg.score_sd, cfg.weibull_sigma, rng)
    c = rng.exponential(1.0 / cfg.censor_rate, n)
    obs = np.minimum(t, c)
    event = (t <= c).astype(np.int8)
    late = obs > tau_k
    obs[late] = tau_k
    event[late] = 0
    try:
        return SurvivalSample(obs, event, -eta)
    except survival.TiedTimes:
        return SurvivalSample(survival.jitter_ties(obs, rng), event, -eta)


def gen_nonmonotone_study(n: int, rng) -> SurvivalSample:
    """Exponential(1) event times, no censoring, score −sin(8T)²."""
    if n < 2:
        raise ValueError("n must be >= 2")
    t = rng.exponential(1.0, n)
    return SurvivalSample(t, np.ones(n, np.int8), -np.sin(8.0 * t) ** 2)


@dataclass(frozen=True)
class TrueCurve:
    """C(τ) of one large uncensored sample, exact at every τ.

    ``time`` holds the sorted event times; ``num`` and ``den`` the cumulative
    concordant and usable pair counts of subjects up to each time.
    """

    time: np.ndarray
    num: np.ndarray
    den: np.ndarray

    @classmethod
    def from_sample(cls, time, score) -> "TrueCurve":
        order = np.argsort(time, kind="stable")
        t = np.ascontiguousarray(time[order])
        _, rank = np.unique(score[order], return_inverse=True)
        rank = rank.astype(np.int64).ravel()
        less, equal, later = _kernels.pair_counts(t, rank, int(rank.max()) + 1)
        return cls(t, np.cumsum(less + 0.5 * equal), np.cumsum(later.astype(float)))

    def __call__(self, tau):
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        idx = np.searchsorted(self.time, tau_arr, side="right") - 1
        if np.any(idx < 0) or np.any(self.den[np.maximum(idx, 0)] == 0):
            raise NoComparablePairs("τ below the first usable event time")
        out = self.num[idx] / self.den[idx]
        return float(out[0]) if np.ndim(tau) == 0 else out


@lru_cache(maxsize=8)
def _true_curve_cached(weibull_sigma, score_sd, n_mc, seed):
    rng = replication_rng(seed, _ORACLE_KEY)
    eta, t = _weibull_times(n_mc, score_sd, weibull_sigma, rng)
    return TrueCurve.from_sample(t, -eta)


def true_curve(cfg: ScenarioConfig, n_mc: int | None = None, seed: int | None = None) -> TrueCurve:
    """Oracle C(τ) curve of the scenario's event-time model (cached)."""
    n_mc = cfg.n_mc if n_mc is None else int(n_mc)
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    seed = cfg.seed if seed is None else int(seed)
    return _true_curve_cached(cfg.weibull_sigma, cfg.score_sd, n_mc, seed)


def true_c_oracle(cfg: ScenarioConfig, tau: float, n_mc: int = 1_000_000, rng=None) -> float:
    """Relative-frequency C(τ) of one uncensored sample of size ``n_mc``.

    ``rng`` may be a seed or a Generator; by default the scenario seed is
    used, which shares the cached curve with :func:`true_curve`.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        return true_curve(cfg, n_mc, cfg.seed if rng is None else int(rng))(tau)
    eta, t = _weibull_times(int(n_mc), cfg.score_sd, cfg.weibull_sigma, rng)
    return TrueCurve.from_sample(t, -eta)(tau)


# ---------------------------------------------------------------- replications

@dataclass(frozen=True)
class ModelOutcome:
    model: str
    status: Status
    message: str
    sigma_a2: float
    point: float
    ci_low: float
    ci_high: float
    area: float


@dataclass(frozen=True)
class ReplicationResult:
    scenario: str
    replication: int
    seed: int
    studies: tuple
    study_failure: str
    outcomes: tuple

    def outcome(self, model: str) -> ModelOutcome:
        for o in self.outcomes:
            if o.model == model:
                return o
        raise KeyError(model)


def simulate_studies(cfg: ScenarioConfig, replication: int):
    """Study summaries of one replication, or ``(None, reason)`` on failure."""
    rng = replication_rng(cfg.seed, replication)
    k = cfg.K
    ns = rng.choice(np.asarray(cfg.n_grid), size=k)
    taus = _sample_tau(cfg, rng, k)
    noise = rng.normal(0.0, cfg.sigma_a, k) if cfg.sigma_a > 0 else np.zeros(k)
    estimator = Estimator(cfg.estimator)
    variant = UnoVariant(cfg.uno_variant)
    studies = []
    for j in range(k):
        srng = replication_rng(cfg.seed, replication, j)
        sample = gen_weibull_study(int(ns[j]), float(taus[j]), cfg, srng)
        try:
            est = survival.estimate_cindex(
                sample, float(taus[j]), estimator, variant, cfg.bootstrap_reps, srng
            )
        except CIndexMetaError as exc:
            return None, f"study {j}: {exc.name}: {exc}"
        if not est.var_hat > 0:
            return None, f"study {j}: zero bootstrap variance"
        c = est.c_hat + noise[j]
        eps = 1.0 / (2.0 * sample.n)
        c = min(max(c, eps), 1.0 - eps)
        studies.append(StudySummary(str(j + 1), est.tau, c, est.var_hat, sample.n))
    return tuple(studies), ""


def enclosed_area(curve_a, curve_b, lo: float, hi: float, points: int = _AREA_POINTS) -> float:
    """Mean absolute distance between two curves on [lo, hi] (trapezoid rule)."""
    if not hi > lo:
        raise ValueError("need lo < hi")
    grid = np.linspace(lo, hi, points)
    diff = np.abs(np.asarray(curve_a(grid), float) - np.asarray(curve_b(grid), float))
    return float(_trapezoid(diff, grid) / (hi - lo))


def eval_enclosed_area(fit_, tau_min: float, tau_max_obs: float, oracle_curve,
                       points: int = _AREA_POINTS) -> float:
    """Normalized area between the back-transformed fitted curve and the truth."""
    if fit_.status is Status.FAILED:
        raise NotConverged(f"{fit_.spec.label}: {fit_.message}")
    return enclosed_area(lambda g: predict(fit_, g)[0], oracle_curve, tau_min, tau_max_obs, points)


def run_replication(cfg: ScenarioConfig, replication: int, oracle: TrueCurve | None = None
                    ) -> ReplicationResult:
    oracle = true_curve(cfg) if oracle is None else oracle
    studies, reason = simulate_studies(cfg, replication)
    outcomes = []
    for spec in cfg.model_specs:
        label = spec.label
        if studies is None:
            outcomes.append(ModelOutcome(label, Status.FAILED, reason, *([math.nan] * 5)))
            continue
        f = fit(spec, studies)
        if f.status is Status.FAILED:
            outcomes.append(ModelOutcome(label, f.status, f.message, *([math.nan] * 5)))
            continue
        point, lo, hi = predict(f, cfg.eval_tau)
        taus = [s.tau for s in studies]
        area = eval_enclosed_area(f, min(taus), max(taus), oracle)
        outcomes.append(ModelOutcome(label, f.status, f.message, f.sigma_a2, point, lo, hi, area))
    return ReplicationResult(cfg.name, replication, cfg.seed, studies or (), reason, tuple(outcomes))


def _run_one(args):
    cfg, r = args
    return run_replication(cfg, r)


def run_scenario(cfg: ScenarioConfig, models=None, *, workers: int = 1, start: int = 0,
                 progress=None) -> list:
    """Run replications ``start .. start + cfg.replications - 1``.

    ``models`` (specs or labels) overrides ``cfg.models``. With
    ``workers > 1`` replications run in separate processes; results are
    identical to a serial run.
    """
    if models is not None:
        labels = tuple(m.label if isinstance(m, MetaModelSpec) else str(m) for m in models)
        cfg = cfg.with_overrides(models=labels)
    reps = range(start, start + cfg.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [(cfg, r) for r in reps], chunksize=4))
    else:
        oracle = true_curve(cfg)
        results = []
        for r in reps:
            results.append(run_replication(cfg, r, oracle))
            if progress is not None:
                progress(r)
    return results


# ---------------------------------------------------------------- evaluation

def _by_model(results):
    table = {}
    for res in results:
        for o in res.outcomes:
            table.setdefault(o.model, []).append(o)
    return table


def eval_failure_rate(results) -> dict:
    """Percent of replications whose fit status is not Ok, per model."""
    if not results:
        raise ValueError("no replications")
    return {m: 100.0 * sum(o.status is not Status.OK for o in os_) / len(os_)
            for m, os_ in _by_model(results).items()}


def eval_coverage(results, true_value: float) -> dict:
    """Per model: (coverage, lower, upper) with normal binomial limits.

    Failed fits are excluded; models without any usable fit get NaNs.
    """
    out = {}
    for m, os_ in _by_model(results).items():
        ok = [o for o in os_ if o.status is not Status.FAILED]
        if not ok:
            out[m] = (math.nan, math.nan, math.nan)
            continue
        p = sum(o.ci_low <= true_value <= o.ci_high for o in ok) / len(ok)
        half = 1.96 * math.sqrt(p * (1.0 - p) / len(ok))
        out[m] = (p, p - half, p + half)
    return out


def eval_bias(results, true_value: float) -> dict:
    """Mean prediction at the evaluation time minus the true value."""
    out = {}
    for m, os_ in _by_model(results).items():
        pts = [o.point for o in os_ if o.status is not Status.FAILED]
        out[m] = float(np.mean(pts)) - true_value if pts else math.nan
    return out


def eval_area(results) -> dict:
    """Per model: (mean, sd) of the normalized enclosed area."""
    out = {}
    for m, os_ in _by_model(results).items():
        a = np.array([o.area for o in os_ if o.status is not Status.FAILED])
        out[m] = (float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else math.nan) if a.size else (math.nan, math.nan)
    return out


REPLICATION_COLUMNS = ("scenario", "replication", "model", "status", "sigma_a2", "point",
                       "ci_low", "ci_high", "area", "message")
SUMMARY_COLUMNS = ("scenario", "model", "replications", "failure_rate_pct", "mean_point",
                   "true_c", "bias", "coverage", "coverage_low", "coverage_high",
                   "area_x1000_mean", "area_x1000_sd")


def replications_csv(results) -> str:
    rows = []
    for res in results:
        for o in res.outcomes:
            rows.append((res.scenario, res.replication, o.model, o.status.value, o.sigma_a2,
                         o.point, o.ci_low, o.ci_high, o.area, o.message))
    return rows_to_csv(REPLICATION_COLUMNS, rows)


def summary_csv(cfg: ScenarioConfig, results, true_value: float | None = None) -> str:
    if true_value is None:
        true_value = true_curve(cfg)(cfg.eval_tau)
    fail = eval_failure_rate(results)
    cov = eval_coverage(results, true_value)
    bias = eval_bias(results, true_value)
    area = eval_area(results)
    rows = []
    for m in cfg.models:
        rows.append((cfg.name, m, len(results), fail[m], true_value + bias[m], true_value,
                     bias[m], *cov[m], 1000.0 * area[m][0], 1000.0 * area[m][1]))
    return rows_to_csv(SUMMARY_COLUMNS, rows)
