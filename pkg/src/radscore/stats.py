"""Pearson correlation machinery for judge-vs-human validation.

Vectors are keyed by finding id; pairwise-complete deletion drops pairs where
either value is absent (a NotApplicable grade).  p-values come from the
two-sided t-test via the regularized incomplete beta function and are
rendered as "<0.001" below threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import betainc

__all__ = [
    "ScoreVector",
    "CorrelationStat",
    "CorrelationMatrix",
    "InsufficientDataError",
    "UndefinedCorrelationError",
    "pearson",
    "correlation_matrix",
    "agreement_summary",
    "summarize_aspect_correlations",
    "format_p_value",
]


class InsufficientDataError(ValueError):
    """Fewer than 3 pairwise-complete observations."""


class UndefinedCorrelationError(ValueError):
    """Both vectors constant over the joined pairs; r has no value."""


@dataclass(frozen=True)
class ScoreVector:
    label: str
    values: dict[str, float]  # finding_id -> score; absent ids mean no observation

    def __post_init__(self) -> None:
        for fid, v in self.values.items():
            if not math.isfinite(v):
                raise ValueError(f"{self.label}: non-finite value for {fid}")


@dataclass(frozen=True)
class CorrelationStat:
    r: float
    p_value: float
    n: int


def format_p_value(p: float, threshold: float = 0.001) -> str:
    return f"<{threshold}" if p < threshold else f"{p:.3f}"


def _t_sf_two_sided(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the incomplete beta."""
    if df <= 0:
        return float("nan")
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def pearson(x: ScoreVector, y: ScoreVector) -> CorrelationStat:
    """Pearson r and two-sided p after inner-joining on finding id.

    Raises :class:`InsufficientDataError` when fewer than 3 complete pairs
    remain and :class:`UndefinedCorrelationError` when either vector is
    constant (never silently 0).
    """
    ids = sorted(set(x.values) & set(y.values))
    if len(ids) < 3:
        raise InsufficientDataError(
            f"{x.label} vs {y.label}: only {len(ids)} pairwise-complete observations")
    xv = np.array([x.values[i] for i in ids], dtype=float)
    yv = np.array([y.values[i] for i in ids], dtype=float)
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sx = float(np.dot(dx, dx))
    sy = float(np.dot(dy, dy))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError(f"{x.label} vs {y.label}: constant vector")
    r = float(np.dot(dx, dy) / math.sqrt(sx * sy))
    r = max(-1.0, min(1.0, r))

    n = len(ids)
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = abs(r) * math.sqrt((n - 2) / (1 - r * r))
        p = _t_sf_two_sided(t, n - 2)
    return CorrelationStat(r=r, p_value=p, n=n)


@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple[str, ...]
    cells: dict[tuple[str, str], Optional[CorrelationStat]]

    def cell(self, a: str, b: str) -> Optional[CorrelationStat]:
        return self.cells[(a, b)]


def correlation_matrix(vectors: Sequence[ScoreVector]) -> CorrelationMatrix:
    """All pairwise Pearson stats; undefined/insufficient cells are None.

    The diagonal is exact r = 1 with n = the vector's observation count.
    """
    if len(vectors) < 2:
        raise ValueError("correlation matrix needs at least 2 vectors")
    labels = tuple(v.label for v in vectors)
    if len(set(labels)) != len(labels):
        raise ValueError("vector labels must be unique")

    cells: dict[tuple[str, str], Optional[CorrelationStat]] = {}
    for i, a in enumerate(vectors):
        cells[(a.label, a.label)] = CorrelationStat(r=1.0, p_value=0.0, n=len(a.values))
        for b in vectors[i + 1:]:
            try:
                stat = pearson(a, b)
            except (InsufficientDataError, UndefinedCorrelationError):
                stat = None
            cells[(a.label, b.label)] = stat
            cells[(b.label, a.label)] = stat
    return CorrelationMatrix(labels=labels, cells=cells)


def summarize_aspect_correlations(rs: Sequence[float]) -> tuple[float, float]:
    """Average and sample standard deviation (ddof = 1) of per-aspect r values."""
    arr = np.asarray(rs, dtype=float)
    avg = float(arr.mean())
    stdev = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return avg, stdev


def agreement_summary(
    human: Sequence,  # GradeSheet-like: finding_id, model_name, scenario, per-aspect Grade
    verdicts: Sequence,  # JudgeVerdict
    aspects: Sequence[str] = ("location", "body_part", "type"),
) -> dict:
    """Per-aspect clinician-vs-judge Pearson r plus avg +/- sample stdev.

    Sheets and verdicts are joined on (finding_id, model, scenario); grades
    enter via the 1.0/0.5/0.0 numeric mapping with NotApplicable dropped
    pairwise.  Aspects with fewer than 3 joinable pairs are marked
    insufficient.
    """
    from .judge import to_numeric  # late import to avoid a cycle

    def key(item) -> tuple:
        return (item.finding_id, item.model_name, item.scenario.tag)

    verdict_by_key = {key(v): v for v in verdicts}

    per_aspect: dict[str, Optional[CorrelationStat]] = {}
    for aspect in aspects:
        hvals: dict[str, float] = {}
        jvals: dict[str, float] = {}
        for sheet in human:
            v = verdict_by_key.get(key(sheet))
            if v is None:
                continue
            joined = "|".join(key(sheet))
            hg = getattr(sheet, aspect if aspect != "type" else "lesion_type", None)
            ja = v.aspect(aspect)
            hnum = to_numeric(hg) if hg is not None else None
            jnum = to_numeric(ja.grade) if ja is not None else None
            if hnum is not None:
                hvals[joined] = hnum
            if jnum is not None:
                jvals[joined] = jnum
        try:
            per_aspect[aspect] = pearson(
                ScoreVector(label=f"clinician.{aspect}", values=hvals),
                ScoreVector(label=f"judge.{aspect}", values=jvals),
            )
        except (InsufficientDataError, UndefinedCorrelationError):
            per_aspect[aspect] = None

    defined = [s for s in per_aspect.values() if s is not None]
    summary: dict = {"per_aspect": per_aspect, "avg": None, "stdev": None, "max_p": None}
    if len(defined) == len(aspects):
        avg, stdev = summarize_aspect_correlations([s.r for s in defined])
        summary.update(avg=avg, stdev=stdev, max_p=max(s.p_value for s in defined))
    return summary
