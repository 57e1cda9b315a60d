"""Hallucination detection from paired log-probability traces."""

from .errors import DegenerateLabelsError, ValidationError
from .metrics import EvalReport, LabeledScore, aug, compare_detectors, green_labels, roc_auc, stability_sweep
from .scoring import (
    Condition,
    DetectorScores,
    SamplePair,
    TokenTrace,
    avgprob_score,
    cebag_lambda_scores,
    cebag_score,
    evidence_gain,
    evidence_magnitude,
    score_sample,
    sequence_logprob,
    token_variance,
)
from .traceio import read_corpus, read_scores, write_corpus, write_scores

__version__ = "0.1.0"
