"""Detector evaluation: ROC-AUC, AUG, GREEN labelling and threshold sweeps.

Internally every metric is a fraction in ``[0, 1]``; renderers multiply by
100.

AUG is read as the area under the accuracy-rejection curve: samples are
rejected most-suspect first, one at a time, and AUG is the mean accuracy
(fraction not hallucinated) of the retained set over rejection counts
``k = 0 .. N-1``. Ties in score are rejected in ascending ``sample_id`` order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CoverageError, DegenerateLabelsError, RangeError, ValidationError
from .scoring import (
    DEFAULT_LAMBDA_GRID,
    DETECTORS,
    DetectorScores,
    SamplePair,
    cebag_lambda_scores,
    score_sample,
)

DEFAULT_GREEN_THRESHOLD = 1.0
DEFAULT_STABILITY_THRESHOLDS = (0.4, 0.5, 0.6, 0.7, 0.8)
DEGENERATE = "degenerate"
AUG_DEFINITION = (
    "AUG = mean retained accuracy over rejection counts k=0..N-1, "
    "rejecting highest scores first (ties by sample_id)"
)


@dataclass(frozen=True)
class LabeledScore:
    sample_id: str
    score: float
    label: bool
    green_score: float | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValidationError(f"score for {self.sample_id!r} is not finite: {self.score!r}")


@dataclass
class EvalReport:
    detector_name: str
    auc: float
    aug: float
    n_positive: int
    n_negative: int
    stability: list[tuple[float, float | str]] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "detector": self.detector_name,
            "auc": self.auc,
            "aug": self.aug,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "stability": [[t, a] for t, a in self.stability],
            "config": self.config_echo,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(
            detector_name=d["detector"],
            auc=d["auc"],
            aug=d["aug"],
            n_positive=d["n_positive"],
            n_negative=d["n_negative"],
            stability=[(t, a) for t, a in d.get("stability", [])],
            config_echo=dict(d.get("config", {})),
        )


def _check_threshold(threshold: float) -> None:
    if not (0.0 < threshold <= 1.0):
        raise RangeError(f"green threshold {threshold!r} not in (0, 1]")


def green_labels(
    green_scores: Iterable[tuple[str, float]], threshold: float = DEFAULT_GREEN_THRESHOLD
) -> list[tuple[str, bool]]:
    """Flag a response as hallucinated when its GREEN score is strictly below ``threshold``."""
    _check_threshold(threshold)
    out = []
    for sid, g in green_scores:
        if not (0.0 <= g <= 1.0):
            raise RangeError(f"green_score {g!r} for {sid!r} not in [0, 1]")
        out.append((sid, g < threshold))
    return out


def _split(items: Sequence[LabeledScore]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.fromiter((it.score for it in items), dtype=np.float64, count=len(items))
    labels = np.fromiter((bool(it.label) for it in items), dtype=bool, count=len(items))
    return scores, labels


def _require_both_classes(n_pos: int, n_neg: int) -> None:
    if n_pos == 0:
        raise DegenerateLabelsError("no positive labels (no sample is flagged hallucinated)")
    if n_neg == 0:
        raise DegenerateLabelsError("no negative labels (every sample is flagged hallucinated)")


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their mean rank."""
    order = np.argsort(values, kind="mergesort")
    ranked = values[order]
    n = len(values)
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, ranked[1:] != ranked[:-1]])
    ends = np.r_[starts[1:], n]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def roc_auc(items: Sequence[LabeledScore]) -> float:
    """P(pos > neg) + 0.5 P(pos == neg), via the Mann-Whitney rank sum."""
    scores, labels = _split(items)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    _require_both_classes(n_pos, n_neg)
    rank_sum = float(average_ranks(scores)[labels].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def rejection_curve(items: Sequence[LabeledScore]) -> np.ndarray:
    """Retained accuracy after rejecting the ``k`` most suspect samples, for k = 0..N-1."""
    if not items:
        raise ValidationError("rejection curve needs at least one sample")
    ordered = sorted(items, key=lambda it: (-it.score, it.sample_id))
    clean = np.fromiter((not it.label for it in ordered), dtype=np.float64, count=len(ordered))
    # retained after k rejections = ordered[k:]
    clean_retained = np.cumsum(clean[::-1])[::-1]
    retained = np.arange(len(ordered), 0, -1, dtype=np.float64)
    return clean_retained / retained


def aug(items: Sequence[LabeledScore]) -> float:
    return float(np.mean(rejection_curve(items)))


def _labels_by_id(green: Sequence[tuple[str, float]], threshold: float) -> dict[str, bool]:
    return dict(green_labels(green, threshold))


def stability_sweep(
    scores: Sequence[tuple[str, float]],
    green: Sequence[tuple[str, float]],
    thresholds: Sequence[float] = DEFAULT_STABILITY_THRESHOLDS,
) -> list[tuple[float, float | str]]:
    """AUC of fixed detector scores under labels re-derived at each GREEN threshold.

    Thresholds that leave only one class are reported as ``DEGENERATE``.
    """
    thresholds = list(thresholds)
    for t in thresholds:
        _check_threshold(t)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValidationError(f"thresholds must be strictly increasing: {thresholds}")
    score_ids = {sid for sid, _ in scores}
    green_ids = {sid for sid, _ in green}
    if score_ids != green_ids:
        missing_green = sorted(score_ids - green_ids)
        missing_scores = sorted(green_ids - score_ids)
        raise CoverageError(
            f"no green score for {missing_green}; no detector score for {missing_scores}"
        )
    out: list[tuple[float, float | str]] = []
    for t in thresholds:
        labels = _labels_by_id(green, t)
        items = [LabeledScore(sid, s, labels[sid]) for sid, s in scores]
        try:
            out.append((t, roc_auc(items)))
        except DegenerateLabelsError:
            out.append((t, DEGENERATE))
    return out


def stability_spread(sweep: Sequence[tuple[float, float | str]]) -> float:
    """Max minus min AUC over the non-degenerate thresholds (0.0 if fewer than two)."""
    vals = [a for _, a in sweep if a != DEGENERATE]
    return max(vals) - min(vals) if len(vals) > 1 else 0.0


def derive_labels(scores: Sequence[DetectorScores], threshold: float) -> dict[str, bool]:
    """Label each sample from its GREEN score when present, else its explicit label."""
    _check_threshold(threshold)
    out = {}
    missing = []
    for s in scores:
        if s.green_score is not None:
            out[s.sample_id] = s.green_score < threshold
        elif s.label is not None:
            out[s.sample_id] = bool(s.label)
        else:
            missing.append(s.sample_id)
    if missing:
        raise CoverageError(f"no green_score or label for {missing}")
    return out


def _labeled(pairs: Sequence[tuple[str, float]], labels: Mapping[str, bool]) -> list[LabeledScore]:
    return [LabeledScore(sid, float(v), labels[sid]) for sid, v in pairs]


def lambda_sweep(
    scores: Sequence[DetectorScores],
    labels: Mapping[str, bool],
    grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
) -> list[tuple[float, float, float]]:
    """``(lambda, auc, aug)`` for every lambda in ``grid``."""
    out = []
    for lam in grid:
        items = _labeled(cebag_lambda_scores(scores, lam), labels)
        out.append((float(lam), roc_auc(items), aug(items)))
    return out


def best_lambda(sweep: Sequence[tuple[float, float, float]]) -> tuple[float, float, float]:
    """Row with the highest AUC; the first such row on ties."""
    best = sweep[0]
    for row in sweep[1:]:
        if row[1] > best[1]:
            best = row
    return best


def _report(
    name: str,
    pairs: Sequence[tuple[str, float]],
    labels: Mapping[str, bool],
    green: list[tuple[str, float]] | None,
    thresholds: Sequence[float],
    config: dict,
) -> EvalReport:
    items = _labeled(pairs, labels)
    n_pos = sum(it.label for it in items)
    stability = stability_sweep(pairs, green, thresholds) if green is not None else []
    return EvalReport(
        detector_name=name,
        auc=roc_auc(items),
        aug=aug(items),
        n_positive=n_pos,
        n_negative=len(items) - n_pos,
        stability=stability,
        config_echo=config,
    )


def evaluate_scores(
    scores: Sequence[DetectorScores],
    external: Mapping[str, Sequence[tuple[str, float]]] | None = None,
    *,
    green_threshold: float = DEFAULT_GREEN_THRESHOLD,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    stability_thresholds: Sequence[float] = DEFAULT_STABILITY_THRESHOLDS,
    detectors: Sequence[str] | None = None,
) -> list[EvalReport]:
    """One report per detector, sorted by name.

    ``detectors`` restricts the output (built-in or external names); ``None``
    keeps all of them.
    """
    if not scores:
        raise ValidationError("cannot evaluate an empty corpus")
    external = dict(external or {})
    clash = sorted(set(external) & (set(DETECTORS) | {"cebag_lambda"}))
    if clash:
        raise ValidationError(f"external detector names clash with built-ins: {clash}")
    ids = [s.sample_id for s in scores]
    gaps = {}
    for name, ext in external.items():
        have = {sid for sid, _ in ext}
        missing = [sid for sid in ids if sid not in have]
        if missing:
            gaps[name] = missing
    if gaps:
        raise CoverageError("; ".join(f"{n}: {m}" for n, m in sorted(gaps.items())))

    labels = derive_labels(scores, green_threshold)
    n_pos = sum(labels.values())
    _require_both_classes(n_pos, len(labels) - n_pos)

    green = None
    if all(s.green_score is not None for s in scores):
        green = [(s.sample_id, s.green_score) for s in scores]
    base_config = {
        "green_threshold": green_threshold,
        "stability_thresholds": list(stability_thresholds) if green is not None else [],
        "aug_definition": AUG_DEFINITION,
    }

    wanted = set(detectors) if detectors is not None else None
    known = set(DETECTORS) | {"cebag_lambda"} | set(external)
    if wanted is not None and wanted - known:
        raise ValidationError(f"unknown detectors: {sorted(wanted - known)}")

    reports = []
    for name, get in DETECTORS.items():
        if wanted is None or name in wanted:
            pairs = [(s.sample_id, get(s)) for s in scores]
            reports.append(_report(name, pairs, labels, green, stability_thresholds, dict(base_config)))
    if wanted is None or "cebag_lambda" in wanted:
        sweep = lambda_sweep(scores, labels, lambda_grid)
        lam = best_lambda(sweep)[0]
        cfg = dict(base_config, lambda_grid=[float(x) for x in lambda_grid], best_lambda=lam)
        reports.append(
            _report("cebag_lambda", cebag_lambda_scores(scores, lam), labels, green, stability_thresholds, cfg)
        )
    for name, ext in external.items():
        if wanted is None or name in wanted:
            lookup = dict(ext)
            pairs = [(sid, float(lookup[sid])) for sid in ids]
            reports.append(_report(name, pairs, labels, green, stability_thresholds, dict(base_config, external=True)))
    reports.sort(key=lambda r: r.detector_name)
    return reports


def compare_detectors(
    corpus: Sequence[SamplePair],
    external: Mapping[str, Sequence[tuple[str, float]]] | None = None,
    **kwargs,
) -> list[EvalReport]:
    return evaluate_scores([score_sample(p) for p in corpus], external, **kwargs)
