"""Balancing weights from overlap scores, with clipping and overlap checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ClipRule:
    """``none``, ``absolute`` (cap at ``value``) or ``quantile`` (cap at the ``value`` quantile)."""

    kind: str = "none"
    value: float | None = None

    def __post_init__(self):
        if self.kind == "none":
            return
        if self.kind not in ("absolute", "quantile"):
            raise ValueError(f"unknown clip rule {self.kind!r}")
        if self.value is None:
            raise ValueError(f"clip rule {self.kind!r} needs a value")
        if self.kind == "absolute" and not self.value > 0:
            raise ValueError("absolute clip value must be positive")
        if self.kind == "quantile" and not 0.5 < self.value <= 1.0:
            raise ValueError("clip quantile must lie in (0.5, 1]")

    @classmethod
    def parse(cls, text: str) -> "ClipRule":
        """Parse ``none``, ``absolute:C`` or ``quantile:Q``."""
        text = text.strip()
        if text == "none":
            return cls()
        kind, _, val = text.partition(":")
        if not val:
            raise ValueError(f"clip rule {text!r} needs a value, e.g. {kind}:0.99")
        return cls(kind.strip(), float(val))

    def __str__(self):
        return "none" if self.kind == "none" else f"{self.kind}:{self.value:g}"


@dataclass(frozen=True)
class BalancingWeights:
    raw: np.ndarray
    final: np.ndarray
    clip_rule: ClipRule
    ess: float
    cap: float | None = None


def balancing_weights(scores) -> np.ndarray:
    """Inverse odds ``(1 - p) / p`` of the overlap scores."""
    p = np.asarray(scores, dtype=float)
    if not ((p > 0) & (p < 1)).all():
        raise ValueError("overlap scores must lie strictly inside (0, 1)")
    return (1.0 - p) / p


def clip_cap(raw, rule: ClipRule) -> float | None:
    raw = np.asarray(raw, dtype=float)
    if rule.kind == "none":
        return None
    if rule.kind == "absolute":
        return float(rule.value)
    # type 7: linear interpolation at 1 + (n - 1) q
    return float(np.quantile(raw, rule.value, method="linear"))


def clip_weights(raw, rule: ClipRule) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    cap = clip_cap(raw, rule)
    return raw.copy() if cap is None else np.minimum(raw, cap)


def normalize_weights(clipped) -> np.ndarray:
    """Rescale to mean one."""
    w = np.asarray(clipped, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("all weights are zero")
    return w * (len(w) / total)


def ess(w) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(w, dtype=float)
    if (w < 0).any() or not w.sum() > 0:
        raise ValueError("weights must be nonnegative and not all zero")
    w = w / w.max()  # scale-free; avoids underflow in w @ w
    return float(w.sum() ** 2 / (w @ w))


def make_weights(scores, rule: ClipRule = ClipRule()) -> BalancingWeights:
    """Scores to raw, clipped and normalized weights in one step."""
    raw = balancing_weights(scores)
    final = normalize_weights(clip_weights(raw, rule))
    return BalancingWeights(raw=raw, final=final, clip_rule=rule, ess=ess(final), cap=clip_cap(raw, rule))


def unit_weights(n: int) -> BalancingWeights:
    one = np.ones(n)
    return BalancingWeights(raw=one, final=one.copy(), clip_rule=ClipRule(), ess=float(n))


DECILE_EDGES = np.linspace(0.0, 1.0, 11)


def decile_histogram(scores) -> list[int]:
    counts, _ = np.histogram(np.asarray(scores, dtype=float), bins=DECILE_EDGES)
    return counts.tolist()


@dataclass
class OverlapReport:
    score_hist_source: list[int]
    score_hist_target: list[int]
    frac_source_high: float
    frac_target_low: float
    ess: float | None
    positivity_floor: float
    positivity_flag: bool
    positivity_violations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "score_hist_source": self.score_hist_source,
            "score_hist_target": self.score_hist_target,
            "frac_source_above_0.95": self.frac_source_high,
            "frac_target_below_0.05": self.frac_target_low,
            "ess": self.ess,
            "positivity_floor": self.positivity_floor,
            "positivity_flag": self.positivity_flag,
            "positivity_violations": self.positivity_violations,
        }


def overlap_report(
    scores_source,
    scores_target,
    *,
    target_ids=None,
    weights=None,
    floor: float = 0.01,
) -> OverlapReport:
    """Summarize overlap-score distributions on both sides.

    The positivity flag is raised when any target score falls below
    ``floor``; the offending target row ids are listed. ``ess`` is computed
    from ``weights`` when given, else from the inverse odds of the source
    scores.
    """
    ss = np.asarray(scores_source, dtype=float)
    st = np.asarray(scores_target, dtype=float)
    if ss.size == 0 or st.size == 0:
        raise ValueError("score vectors must be non-empty")
    if target_ids is None:
        target_ids = [str(i) for i in range(st.size)]
    low = np.flatnonzero(st < floor)
    w = np.asarray(weights, dtype=float) if weights is not None else balancing_weights(np.clip(ss, 1e-12, 1 - 1e-12))
    return OverlapReport(
        score_hist_source=decile_histogram(ss),
        score_hist_target=decile_histogram(st),
        frac_source_high=float((ss > 0.95).mean()),
        frac_target_low=float((st < 0.05).mean()),
        ess=ess(w),
        positivity_floor=floor,
        positivity_flag=bool(low.size),
        positivity_violations=[str(target_ids[i]) for i in low],
    )
