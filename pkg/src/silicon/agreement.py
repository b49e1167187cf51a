"""Chance-corrected agreement between annotators.

Single-label agreement is Cohen's kappa,

    kappa = (p_o - p_e) / (1 - p_e),    p_e = sum_k pa(k) * pb(k),

with annotator-specific marginals.  Set-valued (multilabel) agreement uses the
distance-weighted form

    kappa = 1 - sum_ij w_ij x_ij / sum_ij w_ij m_ij,

where x_ij counts observed label-set pairs, m_ij = n * pa(i) * pb(j) is the
chance-expected count, and w is the set-disagreement weight below.  Categories
are the distinct label sets actually observed, never the power set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .core import LabelValue, TaskKind, TaskSpec, ValidationError

__all__ = [
    "set_weight",
    "cohen_kappa",
    "weighted_kappa",
    "mean_pairwise_kappa",
    "kappa_for_kind",
    "AgreementReport",
    "PairKappa",
]


def set_weight(p, q) -> float:
    """Disagreement weight between two non-empty label sets: w = 1 - J * M.

    J is the Jaccard overlap |P & Q| / |P | Q|.  M scores the set relation:
    1 identical, 2/3 one a proper subset of the other, 1/3 overlapping with
    material on both sides, 0 disjoint.  Identical sets get w = 0, disjoint
    sets w = 1, and e.g. {a} vs {a, b} gets w = 1 - (1/2)(2/3) = 2/3.
    """
    ps = p.as_set() if isinstance(p, LabelValue) else frozenset(p)
    qs = q.as_set() if isinstance(q, LabelValue) else frozenset(q)
    if not ps or not qs:
        raise ValidationError("set_weight requires non-empty sets")
    inter = ps & qs
    if not inter:
        return 1.0
    # exact rational arithmetic so anchor weights like 2/3 come out bit-exact
    jaccard = Fraction(len(inter), len(ps | qs))
    if ps == qs:
        m = Fraction(1)
    elif ps <= qs or qs <= ps:
        m = Fraction(2, 3)
    else:
        m = Fraction(1, 3)
    return float(1 - jaccard * m)


@dataclass(frozen=True)
class PairKappa:
    source_a: str
    source_b: str
    kappa: float
    n_items: int


@dataclass(frozen=True)
class AgreementReport:
    """Agreement result with its contingency evidence.

    kappa = (p_o - p_e) / (1 - p_e) always holds; in the weighted case p_o and
    p_e are 1 minus the mean weighted observed/expected disagreement, which
    reduces to raw agreement rates when all cross-category weights are 1.
    observed/expected are over `categories`, the distinct labels seen in this
    comparison (None for multi-pair summaries).
    """

    kappa: float
    p_o: float
    p_e: float
    n_items: int
    degenerate: bool = False
    weighted: bool = False
    categories: tuple[LabelValue, ...] = ()
    observed: np.ndarray | None = None
    expected: np.ndarray | None = None
    weights: np.ndarray | None = None
    pairwise: tuple[PairKappa, ...] = field(default_factory=tuple)
    mean_kappa: float | None = None


def _tabulate(a: Sequence[LabelValue], b: Sequence[LabelValue]):
    if len(a) != len(b):
        raise ValidationError(f"annotator lengths differ: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValidationError("need at least 2 items to measure agreement")
    cats = sorted(set(a) | set(b))
    index = {lab: i for i, lab in enumerate(cats)}
    observed = np.zeros((len(cats), len(cats)))
    for la, lb in zip(a, b):
        observed[index[la], index[lb]] += 1.0
    marg_a = observed.sum(axis=1) / n
    marg_b = observed.sum(axis=0) / n
    expected = n * np.outer(marg_a, marg_b)
    return cats, observed, expected, n


def _finish(cats, observed, expected, weights, n, weighted_flag) -> AgreementReport:
    num = float((weights * observed).sum())
    den = float((weights * expected).sum())
    p_o = 1.0 - num / n
    p_e = 1.0 - den / n
    if den <= 0.0:
        # all mass on one category for both annotators: chance agreement is total
        kappa = 1.0 if num <= 0.0 else 0.0
        return AgreementReport(
            kappa=kappa, p_o=p_o, p_e=p_e, n_items=n, degenerate=True,
            weighted=weighted_flag, categories=tuple(cats),
            observed=observed, expected=expected, weights=weights,
        )
    return AgreementReport(
        kappa=1.0 - num / den, p_o=p_o, p_e=p_e, n_items=n,
        weighted=weighted_flag, categories=tuple(cats),
        observed=observed, expected=expected, weights=weights,
    )


def cohen_kappa(a: Sequence[LabelValue], b: Sequence[LabelValue],
                spec: TaskSpec | None = None) -> AgreementReport:
    """Unweighted kappa for single-label annotations, aligned by position."""
    for lab in list(a) + list(b):
        if len(lab.indices) != 1:
            raise ValidationError("cohen_kappa takes single labels; use weighted_kappa for sets")
        if spec is not None:
            spec.validate_label(lab)
    cats, observed, expected, n = _tabulate(a, b)
    weights = 1.0 - np.eye(len(cats))
    return _finish(cats, observed, expected, weights, n, weighted_flag=False)


def weighted_kappa(a: Sequence[LabelValue], b: Sequence[LabelValue],
                   spec: TaskSpec | None = None) -> AgreementReport:
    """Set-weighted kappa for label-set annotations, aligned by position.

    On singleton sets every off-diagonal weight is 1 and the result equals
    cohen_kappa exactly.
    """
    if spec is not None:
        for lab in list(a) + list(b):
            spec.validate_label(lab)
    cats, observed, expected, n = _tabulate(a, b)
    k = len(cats)
    weights = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            weights[i, j] = weights[j, i] = set_weight(cats[i], cats[j])
    return _finish(cats, observed, expected, weights, n, weighted_flag=True)


def kappa_for_kind(a: Sequence[LabelValue], b: Sequence[LabelValue],
                   kind: TaskKind, spec: TaskSpec | None = None) -> AgreementReport:
    if kind is TaskKind.MULTILABEL:
        return weighted_kappa(a, b, spec)
    return cohen_kappa(a, b, spec)


def mean_pairwise_kappa(
    sources: Mapping[str, Mapping[str, LabelValue]],
    kind: TaskKind,
    spec: TaskSpec | None = None,
    min_common: int = 2,
) -> AgreementReport:
    """Mean kappa over all annotator pairs, pairwise-deleting items either side lacks.

    `sources` maps annotator name -> {item_id -> label}.  With exactly two
    annotators the full pair report is returned (mean equals the pair kappa);
    with more, the summary carries the pair list and the unweighted mean.
    """
    names = list(sources)
    if len(names) < 2:
        raise ValidationError("need at least 2 annotators")
    pair_reports = []
    pairs = []
    for na, nb in combinations(names, 2):
        common = sorted(set(sources[na]) & set(sources[nb]))
        if len(common) < min_common:
            raise ValidationError(
                f"annotators {na!r} and {nb!r} share only {len(common)} items "
                f"(need >= {min_common})"
            )
        la = [sources[na][i] for i in common]
        lb = [sources[nb][i] for i in common]
        rep = kappa_for_kind(la, lb, kind, spec)
        pair_reports.append(rep)
        pairs.append(PairKappa(na, nb, rep.kappa, len(common)))
    mean = float(np.mean([p.kappa for p in pairs]))
    if len(pairs) == 1:
        rep = pair_reports[0]
        return AgreementReport(
            kappa=rep.kappa, p_o=rep.p_o, p_e=rep.p_e, n_items=rep.n_items,
            degenerate=rep.degenerate, weighted=rep.weighted,
            categories=rep.categories, observed=rep.observed,
            expected=rep.expected, weights=rep.weights,
            pairwise=tuple(pairs), mean_kappa=mean,
        )
    n_union = len({i for m in sources.values() for i in m})
    return AgreementReport(
        kappa=mean, p_o=float("nan"), p_e=float("nan"), n_items=n_union,
        weighted=kind is TaskKind.MULTILABEL,
        pairwise=tuple(pairs), mean_kappa=mean,
    )
