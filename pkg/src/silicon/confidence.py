"""First-second distance: margin between the two most frequent answers.

Resampling the same item several times at temperature 1 and measuring how far
the modal answer outruns the runner-up gives a self-consistency score in
[0, 1]: 1 means unanimous, 0 means the top two answers tied.  The probability
variant reads the margin off a renormalized option distribution instead; for
two options it reduces to |2p - 1|.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import LabelValue, ValidationError

__all__ = ["FsdScore", "fsd_from_samples", "fsd_from_probabilities"]


@dataclass(frozen=True)
class FsdScore:
    fsd: float
    top_label: LabelValue
    second_label: LabelValue | None
    n_samples: int
    method: str  # "sampling" | "probability"

    def __post_init__(self):
        if not 0.0 <= self.fsd <= 1.0:
            raise ValidationError(f"fsd out of range: {self.fsd}")


def fsd_from_samples(samples: Sequence[LabelValue]) -> FsdScore:
    """(count of mode - count of runner-up) / n over repeated generations.

    Unanimous samples give 1.0 (missing runner-up counts 0), a tied mode gives
    0.0.  Ties for either rank are broken toward the lexicographically smallest
    label so the reported labels are deterministic; the score itself is
    tie-order invariant.
    """
    n = len(samples)
    if n < 2:
        raise ValidationError("need at least 2 samples")
    counts = Counter(samples)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    top_label, top = ranked[0]
    if len(ranked) == 1:
        return FsdScore(fsd=1.0, top_label=top_label, second_label=None,
                        n_samples=n, method="sampling")
    second_label, second = ranked[1]
    return FsdScore(fsd=(top - second) / n, top_label=top_label,
                    second_label=second_label, n_samples=n, method="sampling")


def fsd_from_probabilities(option_probs: Mapping[LabelValue, float]) -> FsdScore:
    """Margin between the two largest option probabilities after renormalization.

    The mass may sum below 1 when the option list was truncated; it is scaled
    back to 1 before taking the difference.  Sums above 1 (beyond fp slack),
    negative entries, and all-zero mass are errors.
    """
    if len(option_probs) < 2:
        raise ValidationError("need at least 2 options")
    total = float(sum(option_probs.values()))
    if any(p < 0 for p in option_probs.values()):
        raise ValidationError("option probabilities must be non-negative")
    if total <= 0.0:
        raise ValidationError("option probabilities sum to zero")
    if total > 1.0 + 1e-6:
        raise ValidationError(f"option probabilities sum to {total} > 1")
    ranked = sorted(option_probs.items(), key=lambda kv: (-kv[1], kv[0]))
    (top_label, top), (second_label, second) = ranked[0], ranked[1]
    return FsdScore(
        fsd=min(1.0, (top - second) / total),
        top_label=top_label,
        second_label=second_label,
        n_samples=0,
        method="probability",
    )
