"""Equivalence testing of model accuracies via clustered logistic regression.

Each (item, model) observation is a binary match against the reference label.
A logistic regression of match on model dummies (one model as baseline)
recovers, because the design is saturated, exactly

    intercept = logit(accuracy_baseline)
    coef_j    = logit(accuracy_j) - logit(accuracy_baseline)

so a coefficient is the log-odds shift of model j's accuracy against the
baseline.  Standard errors are cluster-robust over items, since the J
observations of one item share its difficulty.  A model is called equivalent
to the baseline when the 95% CI of its coefficient contains 0, better/worse
when the CI clears 0.  A likelihood-ratio test against the intercept-only
model asks whether the models differ at all; its value does not depend on
which model is the baseline.

Perfect (or zero) accuracy makes the log-odds unbounded; such models are
flagged and judged by exact binomial confidence intervals instead, which keeps
the report total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from .core import LabelValue, ValidationError

__all__ = [
    "MatchMatrix",
    "ModelComparison",
    "EquivalenceReport",
    "build_match_matrix",
    "fit_equivalence",
]

_MAX_ITER = 100
_DEV_TOL = 1e-10
_Z95 = 1.96


@dataclass(frozen=True)
class MatchMatrix:
    """items x models binary matches against a shared reference."""

    items: tuple[str, ...]
    models: tuple[str, ...]
    matches: np.ndarray          # shape (len(items), len(models)), values {0, 1}
    baseline_model: str
    separation_flag: bool = False

    def __post_init__(self):
        m = np.asarray(self.matches)
        if m.shape != (len(self.items), len(self.models)):
            raise ValidationError("match matrix shape disagrees with items/models")
        if len(self.models) < 2:
            raise ValidationError("need at least 2 models")
        if len(self.items) < 2:
            raise ValidationError("need at least 2 items")
        if len(set(self.models)) != len(self.models) or len(set(self.items)) != len(self.items):
            raise ValidationError("duplicate model or item names")
        if not np.isin(m, (0, 1)).all():
            raise ValidationError("matches must be 0/1")
        if self.baseline_model not in self.models:
            raise ValidationError(f"baseline {self.baseline_model!r} not among models")
        object.__setattr__(self, "matches", m.astype(float))
        object.__setattr__(
            self, "separation_flag",
            bool(m.min() == m.max() or any(
                m[:, j].min() == m[:, j].max() for j in range(len(self.models))
            )),
        )

    def accuracy(self, model: str) -> float:
        return float(self.matches[:, self.models.index(model)].mean())


def build_match_matrix(
    model_labels: Mapping[str, Mapping[str, LabelValue]],
    reference: Mapping[str, LabelValue],
    baseline_model: str | None = None,
) -> MatchMatrix:
    """Exact-equality matches of each model against the reference, item by item.

    Every model must cover every reference item (coverage gaps are an error,
    not silently dropped).  Label sets match only when identical.
    """
    models = tuple(model_labels)
    if len(models) < 2:
        raise ValidationError("need at least 2 models")
    items = tuple(sorted(reference))
    if len(items) < 2:
        raise ValidationError("need at least 2 reference items")
    missing = {
        name: [i for i in items if i not in labels]
        for name, labels in model_labels.items()
        if any(i not in labels for i in items)
    }
    if missing:
        detail = "; ".join(f"{name}: {ids[:5]!r}" for name, ids in missing.items())
        raise ValidationError(f"models missing reference items ({detail})")
    matches = np.zeros((len(items), len(models)))
    for j, name in enumerate(models):
        labels = model_labels[name]
        for i, item in enumerate(items):
            matches[i, j] = 1.0 if labels[item] == reference[item] else 0.0
    return MatchMatrix(
        items=items,
        models=models,
        matches=matches,
        baseline_model=baseline_model or models[0],
    )


@dataclass(frozen=True)
class ModelComparison:
    model: str
    accuracy: float
    coefficient: float           # log-odds of accuracy vs baseline; +/-inf if separated
    se: float
    ci_low: float
    ci_high: float
    wald_z: float
    wald_p: float
    verdict: str                 # "equivalent" | "better" | "worse"
    separated: bool = False
    method: str = "wald"         # "wald" | "binomial"
    tost_equivalent: bool | None = None

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "accuracy": self.accuracy,
            "coefficient": self.coefficient,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "wald_z": self.wald_z,
            "wald_p": self.wald_p,
            "verdict": self.verdict,
            "separated": self.separated,
            "method": self.method,
            "tost_equivalent": self.tost_equivalent,
        }


@dataclass(frozen=True)
class EquivalenceReport:
    baseline_model: str
    baseline_accuracy: float
    intercept: float
    intercept_se: float
    comparisons: tuple[ModelComparison, ...]
    lr_stat: float
    lr_df: int
    lr_p: float
    n_items: int
    n_obs: int
    converged: bool
    n_iter: int
    cluster_correction: str
    separation_flag: bool

    def to_json(self) -> dict:
        return {
            "baseline_model": self.baseline_model,
            "baseline_accuracy": self.baseline_accuracy,
            "intercept": self.intercept,
            "intercept_se": self.intercept_se,
            "comparisons": [c.to_json() for c in self.comparisons],
            "lr_stat": self.lr_stat,
            "lr_df": self.lr_df,
            "lr_p": self.lr_p,
            "n_items": self.n_items,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "cluster_correction": self.cluster_correction,
            "separation_flag": self.separation_flag,
        }


def _log_likelihood(y: np.ndarray, mu: np.ndarray) -> float:
    mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
    return float(np.sum(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))


def _irls(x: np.ndarray, y: np.ndarray):
    """Newton with step halving on the binomial deviance. Returns (beta, converged, iters)."""
    beta = np.zeros(x.shape[1])
    dev = -2.0 * _log_likelihood(y, np.full_like(y, 0.5))
    converged = False
    it = 0
    for it in range(1, _MAX_ITER + 1):
        eta = x @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(mu * (1.0 - mu), 1e-10, None)
        # weighted least squares step on the working response
        z = eta + (y - mu) / w
        xtw = x.T * w
        direction = np.linalg.solve(xtw @ x, xtw @ z) - beta
        step = 1.0
        new_dev = dev
        for _ in range(40):
            cand = beta + step * direction
            new_dev = -2.0 * _log_likelihood(y, 1.0 / (1.0 + np.exp(-(x @ cand))))
            if new_dev <= dev + 1e-14:
                break
            step *= 0.5
        beta = beta + step * direction
        if abs(dev - new_dev) < _DEV_TOL:
            dev = new_dev
            converged = True
            break
        dev = new_dev
    return beta, converged, it


def _cluster_sandwich(x, y, beta, cluster_sizes, correction: str) -> np.ndarray:
    mu = 1.0 / (1.0 + np.exp(-(x @ beta)))
    w = mu * (1.0 - mu)
    bread = np.linalg.inv((x.T * w) @ x)
    resid = (y - mu)[:, None] * x
    meat = np.zeros((x.shape[1], x.shape[1]))
    start = 0
    for size in cluster_sizes:
        g = resid[start:start + size].sum(axis=0)
        meat += np.outer(g, g)
        start += size
    if correction == "CR1":
        n_clusters = len(cluster_sizes)
        n_obs, n_par = x.shape
        meat *= (n_clusters / (n_clusters - 1)) * ((n_obs - 1) / (n_obs - n_par))
    elif correction != "CR0":
        raise ValidationError(f"unknown cluster correction {correction!r}")
    return bread @ meat @ bread


def _exact_ci(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - level
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(
        stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes)
    )
    return lo, hi


def _binomial_comparison(model, acc, base_acc, n_items, tost) -> ModelComparison:
    ci_m = _exact_ci(round(acc * n_items), n_items)
    ci_b = _exact_ci(round(base_acc * n_items), n_items)
    if ci_m[0] > ci_b[1]:
        verdict = "better"
    elif ci_m[1] < ci_b[0]:
        verdict = "worse"
    else:
        verdict = "equivalent"
    if acc == base_acc:
        coef = 0.0
    else:
        coef = float("inf") if acc > base_acc else float("-inf")
    return ModelComparison(
        model=model, accuracy=acc, coefficient=coef, se=float("nan"),
        ci_low=ci_m[0], ci_high=ci_m[1], wald_z=float("nan"), wald_p=float("nan"),
        verdict=verdict, separated=True, method="binomial", tost_equivalent=tost,
    )


def fit_equivalence(
    matrix: MatchMatrix,
    correction: str = "CR0",
    tost_margin: float | None = None,
) -> EquivalenceReport:
    """Fit the model-dummy logistic regression with item-clustered errors.

    Observations are ordered item-major so each item forms one cluster of J
    rows.  Models whose match column is constant (separation) are excluded
    from the fit and judged by exact binomial CIs; if the baseline itself is
    constant no regression is possible and every model takes the binomial
    route.  tost_margin, when given, additionally runs two one-sided tests at
    5% against a +/-margin log-odds band (reported per model, not the primary
    verdict).
    """
    models = matrix.models
    baseline = matrix.baseline_model
    n_items = len(matrix.items)
    accs = {m: matrix.accuracy(m) for m in models}
    separated = {m for m in models if accs[m] in (0.0, 1.0)}
    others = [m for m in models if m != baseline]

    fit_models = [baseline] + [m for m in others if m not in separated]
    can_fit = baseline not in separated and len(fit_models) >= 2

    intercept = intercept_se = float("nan")
    lr_stat = lr_p = float("nan")
    lr_df = 0
    converged = False
    n_iter = 0
    n_obs = 0
    coef = {}
    se = {}
    if can_fit:
        j = len(fit_models)
        y = matrix.matches[:, [models.index(m) for m in fit_models]].reshape(-1)  # item-major
        n_obs = y.size
        # observation r belongs to item r // j and model fit_models[r % j]
        x = np.zeros((n_obs, j))
        x[:, 0] = 1.0
        model_of = np.arange(n_obs) % j
        for col in range(1, j):
            x[model_of == col, col] = 1.0
        beta, converged, n_iter = _irls(x, y)
        cov = _cluster_sandwich(x, y, beta, [j] * n_items, correction)
        ses = np.sqrt(np.diag(cov))
        intercept, intercept_se = float(beta[0]), float(ses[0])
        for col in range(1, j):
            coef[fit_models[col]] = float(beta[col])
            se[fit_models[col]] = float(ses[col])
        mu = 1.0 / (1.0 + np.exp(-(x @ beta)))
        ll_full = _log_likelihood(y, mu)
        p_bar = float(y.mean())
        ll_null = _log_likelihood(y, np.full_like(y, p_bar))
        lr_stat = 2.0 * (ll_full - ll_null)
        lr_df = j - 1
        lr_p = float(stats.chi2.sf(lr_stat, lr_df))

    comparisons = []
    for m in others:
        tost = None
        if m in coef and tost_margin is not None:
            z_lo = (coef[m] + tost_margin) / se[m]
            z_hi = (tost_margin - coef[m]) / se[m]
            tost = bool(min(z_lo, z_hi) > stats.norm.ppf(0.95))
        if m in coef:
            lo = coef[m] - _Z95 * se[m]
            hi = coef[m] + _Z95 * se[m]
            if se[m] > 0:
                z = coef[m] / se[m]
            elif coef[m] == 0.0:
                z = 0.0  # identical columns: no evidence either way
            else:
                z = math.copysign(float("inf"), coef[m])
            verdict = "equivalent" if lo <= 0.0 <= hi else ("better" if lo > 0 else "worse")
            comparisons.append(ModelComparison(
                model=m, accuracy=accs[m], coefficient=coef[m], se=se[m],
                ci_low=lo, ci_high=hi, wald_z=float(z),
                wald_p=float(2.0 * stats.norm.sf(abs(z))), verdict=verdict,
                tost_equivalent=tost,
            ))
        else:
            comparisons.append(
                _binomial_comparison(m, accs[m], accs[baseline], n_items, tost)
            )

    return EquivalenceReport(
        baseline_model=baseline,
        baseline_accuracy=accs[baseline],
        intercept=intercept,
        intercept_se=intercept_se,
        comparisons=tuple(comparisons),
        lr_stat=lr_stat,
        lr_df=lr_df,
        lr_p=lr_p,
        n_items=n_items,
        n_obs=n_obs,
        converged=converged,
        n_iter=n_iter,
        cluster_correction=correction,
        separation_flag=matrix.separation_flag or bool(separated),
    )
