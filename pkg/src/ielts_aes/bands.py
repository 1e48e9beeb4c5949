"""Band-score value system: the 19-class half-band scale, the four scoring
criteria, and the criterion-to-overall aggregation rule.

Band scores are stored as integer half-steps (0..18) so equality, ordering
and class indexing are exact; 6.5 is half-step 13, never 6.4999...
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

HALF_STEP_COUNT = 19  # 0.0, 0.5, ..., 9.0
MAX_HALF_STEPS = HALF_STEP_COUNT - 1


class BandError(ValueError):
    """Base error for inadmissible band values."""


class OutOfRangeError(BandError):
    pass


class NotHalfStepError(BandError):
    pass


@dataclass(frozen=True, order=True)
class BandScore:
    """A band value on the 19-point half-band scale, held as half-steps 0..18."""

    half_steps: int

    def __post_init__(self) -> None:
        if not isinstance(self.half_steps, int):
            raise NotHalfStepError(f"half_steps must be an int, got {self.half_steps!r}")
        if not 0 <= self.half_steps <= MAX_HALF_STEPS:
            raise OutOfRangeError(f"half_steps {self.half_steps} outside 0..{MAX_HALF_STEPS}")

    @property
    def value(self) -> float:
        return self.half_steps / 2.0

    @classmethod
    def from_value(cls, x: float) -> "BandScore":
        return band_validate(x)

    def __str__(self) -> str:
        return f"{self.value:.1f}"


class Criterion(enum.Enum):
    """The four analytic scoring criteria."""

    TR = "TR"
    CC = "CC"
    LR = "LR"
    GRA = "GRA"

    def __str__(self) -> str:
        return self.value


CRITERIA: tuple[Criterion, ...] = (Criterion.TR, Criterion.CC, Criterion.LR, Criterion.GRA)

CRITERION_NAMES = {
    Criterion.TR: "Task Response",
    Criterion.CC: "Coherence and Cohesion",
    Criterion.LR: "Lexical Resource",
    Criterion.GRA: "Grammatical Range and Accuracy",
}


@dataclass(frozen=True)
class CriterionSet:
    """The four analytic band scores with optional per-criterion comments."""

    tr: BandScore
    cc: BandScore
    lr: BandScore
    gra: BandScore
    comments: dict[Criterion, str] = field(default_factory=dict, compare=False)

    def score(self, criterion: Criterion) -> BandScore:
        return getattr(self, criterion.value.lower())

    def scores(self) -> tuple[BandScore, BandScore, BandScore, BandScore]:
        return (self.tr, self.cc, self.lr, self.gra)

    def mean_value(self) -> float:
        # Sum of half-steps divided by 8 is exact in binary floating point.
        return sum(s.half_steps for s in self.scores()) / 8.0


class RoundingRule(enum.Enum):
    """How a non-admissible real is mapped back onto the half-band grid."""

    NEAREST_TIES_UP = "nearest-half-ties-up"
    NEAREST_TIES_DOWN = "nearest-half-ties-down"
    TRUNCATE = "truncate-to-half"

    @classmethod
    def parse(cls, name: str) -> "RoundingRule":
        for rule in cls:
            if rule.value == name:
                return rule
        raise ValueError(f"unknown rounding rule {name!r}")


DEFAULT_ROUNDING = RoundingRule.NEAREST_TIES_UP

# Tolerance under which a real is accepted as an exact half step.
EXACT_HALF_STEP_TOL = 1e-9


def band_validate(x: float, tol: float = EXACT_HALF_STEP_TOL) -> BandScore:
    """Accept x only if it is an admissible half-band within [0, 9]."""
    x = float(x)
    if math.isnan(x) or x < 0.0 - tol or x > 9.0 + tol:
        raise OutOfRangeError(f"band {x!r} outside [0, 9]")
    doubled = x * 2.0
    half_steps = round(doubled)
    if abs(doubled - half_steps) > 2.0 * tol:
        raise NotHalfStepError(f"band {x!r} is not a half step")
    return BandScore(int(min(max(half_steps, 0), MAX_HALF_STEPS)))


def band_snap(x: float, rule: RoundingRule = DEFAULT_ROUNDING) -> BandScore:
    """Snap a real in [0, 9] to the nearest admissible half-band under `rule`.

    Idempotent on admissible values for every rule.
    """
    x = float(x)
    if math.isnan(x) or x < 0.0 or x > 9.0:
        raise OutOfRangeError(f"band {x!r} outside [0, 9]")
    doubled = x * 2.0
    if rule is RoundingRule.NEAREST_TIES_UP:
        half_steps = math.floor(doubled + 0.5)
    elif rule is RoundingRule.NEAREST_TIES_DOWN:
        half_steps = math.ceil(doubled - 0.5)
    else:
        half_steps = math.floor(doubled)
    return BandScore(int(min(max(half_steps, 0), MAX_HALF_STEPS)))


@dataclass(frozen=True)
class AggregateScore:
    """Aggregation result: the snapped overall band plus the pre-snap mean."""

    band: BandScore
    mean: float


def overall_from_criteria(
    criteria: CriterionSet, rule: RoundingRule = DEFAULT_ROUNDING
) -> AggregateScore:
    """Overall band = the four criterion scores' arithmetic mean, snapped to the grid."""
    mean = criteria.mean_value()
    return AggregateScore(band=band_snap(mean, rule), mean=mean)
