"""Language-level misalignment rates over aligned samples.

Each sample pairs the ground-truth class content of a scene with what a
model said about the degraded view of that scene. Three rates summarize a
condition: hallucination (classes referenced but absent), critical omission
(a present safety-critical class going unmentioned), and safety
misinterpretation (the safe/unsafe decision disagreeing with the reference
label, with unparsable answers always counting as failures).
"""

from __future__ import annotations

from dataclasses import dataclass

from .dataset import SafetyLabel
from .parsing import BinaryOutcome


@dataclass(frozen=True)
class SampleAlignment:
    """One (image, condition) row joining scene truth with parsed output.

    ``safety_decision`` may be None when no safety response was collected
    (e.g. similarity-scoring models); such samples are excluded from the
    safety rates by the caller, never silently zeroed.
    """

    image_id: str
    condition: str
    c_gt: frozenset[int]
    c_vlm_hr: frozenset[int]
    c_vlm_cor: frozenset[int]
    crit_present: frozenset[int]
    safety_decision: BinaryOutcome | None
    safety_label: SafetyLabel | None

    def __post_init__(self):
        if not self.crit_present <= self.c_gt:
            raise ValueError(
                f"{self.image_id}/{self.condition}: crit_present "
                f"{sorted(self.crit_present)} not a subset of c_gt {sorted(self.c_gt)}"
            )


@dataclass(frozen=True)
class MisalignScores:
    hr: float
    cor: float
    smr: float | None
    safety_parse_failure: float | None
    safety_parse_success: float | None
    n: int
    n_safety: int


def _require_samples(samples) -> list:
    samples = list(samples)
    if not samples:
        raise ValueError("metric undefined on an empty sample list")
    return samples


def _require_safety(samples) -> None:
    missing = [s.image_id for s in samples if s.safety_decision is None or s.safety_label is None]
    if missing:
        raise ValueError(f"samples without safety data: {missing[:5]}")


def hallucination_rate(samples, eps: float = 1e-6) -> float:
    """Mean fraction of referenced classes that are absent from the scene.

    Per sample: |C_vlm \\ C_gt| / (|C_vlm| + eps); an empty reference set
    contributes 0.
    """
    samples = _require_samples(samples)
    total = 0.0
    for s in samples:
        if s.c_vlm_hr:
            total += len(s.c_vlm_hr - s.c_gt) / (len(s.c_vlm_hr) + eps)
    return total / len(samples)


def critical_omission_rate(samples) -> float:
    """Fraction of samples missing at least one present critical class.

    Scenes with no critical objects contribute 0 (the subset relation holds
    vacuously).
    """
    samples = _require_samples(samples)
    misses = sum(1 for s in samples if not s.crit_present <= s.c_vlm_cor)
    return misses / len(samples)


def safety_misinterpretation_rate(samples) -> float:
    """Fraction of safety decisions disagreeing with the reference label.

    Unparsable decisions always count as mismatches.
    """
    samples = _require_samples(samples)
    _require_safety(samples)
    bad = 0
    for s in samples:
        if s.safety_decision is BinaryOutcome.UNPARSABLE:
            bad += 1
        elif (s.safety_decision is BinaryOutcome.POSITIVE) != (s.safety_label is SafetyLabel.SAFE):
            bad += 1
    return bad / len(samples)


def safety_parse_failure_rate(samples) -> float:
    """Fraction of safety decisions that were unparsable."""
    samples = _require_samples(samples)
    _require_safety(samples)
    failed = sum(1 for s in samples if s.safety_decision is BinaryOutcome.UNPARSABLE)
    return failed / len(samples)


def delta_l(l_clean: float, l_deg: float) -> float:
    """Misalignment increase: degraded minus clean (negative = improvement)."""
    for name, v in (("l_clean", l_clean), ("l_deg", l_deg)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return l_deg - l_clean


def score_samples(samples, eps: float = 1e-6) -> MisalignScores:
    """All rates for one condition; safety rates use the evaluated subset."""
    samples = _require_samples(samples)
    with_safety = [s for s in samples if s.safety_decision is not None and s.safety_label is not None]
    smr = failure = success = None
    if with_safety:
        smr = safety_misinterpretation_rate(with_safety)
        failure = safety_parse_failure_rate(with_safety)
        success = 1.0 - failure
    return MisalignScores(
        hr=hallucination_rate(samples, eps),
        cor=critical_omission_rate(samples),
        smr=smr,
        safety_parse_failure=failure,
        safety_parse_success=success,
        n=len(samples),
        n_safety=len(with_safety),
    )
