import math
import statistics
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cebag.errors import (
    EmptyTraceError,
    LengthMismatchError,
    NonFiniteLogprobError,
    PositiveLogprobError,
    RangeError,
    ValidationError,
)
from cebag.scoring import (
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

logprob = st.floats(min_value=-30.0, max_value=0.0, allow_nan=False, allow_infinity=False)


@st.composite
def pairs(draw, max_len=40):
    n = draw(st.integers(1, max_len))
    mm = draw(st.lists(logprob, min_size=n, max_size=n))
    text = draw(st.lists(logprob, min_size=n, max_size=n))
    return SamplePair.from_logprobs("s", mm, text)


def trace(values, condition=Condition.MULTIMODAL):
    return TokenTrace.from_logprobs(values, condition)


def pair(mm, text, sid="s"):
    return SamplePair.from_logprobs(sid, mm, text)


class TestTokenTrace:
    def test_rejects_empty(self):
        with pytest.raises(EmptyTraceError):
            TokenTrace((), ())

    def test_rejects_positive(self):
        with pytest.raises(PositiveLogprobError):
            trace([-1.0, 0.1])

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(NonFiniteLogprobError):
            trace([-1.0, bad])

    def test_accepts_forced_token(self):
        assert trace([0.0]).logprobs == (0.0,)

    def test_token_count_must_match(self):
        with pytest.raises(LengthMismatchError):
            TokenTrace(("a",), (-1.0, -2.0))

    def test_pair_length_mismatch(self):
        with pytest.raises(LengthMismatchError, match="5 tokens.*4"):
            pair([-1.0] * 5, [-1.0] * 4)

    def test_pair_green_range(self):
        with pytest.raises(RangeError):
            SamplePair.from_logprobs("s", [-1.0], [-1.0], green_score=1.5)

    def test_pair_conditions(self):
        mm = trace([-1.0])
        with pytest.raises(ValidationError):
            SamplePair("s", mm, mm)


class TestSequenceLogprob:
    def test_hand_sum(self):
        assert sequence_logprob(trace([-1.0, -2.0, -0.5])) == -3.5

    def test_forced_token(self):
        assert sequence_logprob(trace([0.0])) == 0.0

    def test_uniform(self):
        assert sequence_logprob(trace([-0.1] * 10)) == -1.0

    @given(st.lists(logprob, min_size=1, max_size=60))
    def test_matches_exact_rational_sum(self, xs):
        exact = float(sum(Fraction(x) for x in xs))
        assert sequence_logprob(trace(xs)) == exact


class TestEvidence:
    def test_identical_traces(self):
        assert evidence_gain(pair([-1.0, -2.5], [-1.0, -2.5])) == 0.0

    def test_hand_difference(self):
        assert evidence_gain(pair([-1.0, -2.0], [-2.0, -3.0])) == 2.0

    def test_magnitude_zero(self):
        assert evidence_magnitude(0.0, 7) == 0.0

    def test_magnitude_negative_gain(self):
        assert evidence_magnitude(-6.0, 3) == 2.0

    def test_magnitude_illustrative(self):
        assert evidence_magnitude(38.5, 77) == 0.5

    def test_magnitude_bad_length(self):
        with pytest.raises(ValidationError):
            evidence_magnitude(1.0, 0)


class TestTokenVariance:
    def test_constant(self):
        assert token_variance(trace([-1.3] * 9)) == 0.0

    def test_two_points(self):
        assert token_variance(trace([-1.0, -3.0])) == 1.0

    def test_three_points(self):
        assert token_variance(trace([-1.0, -2.0, -3.0])) == pytest.approx(math.sqrt(2 / 3), abs=1e-15)

    @given(logprob)
    def test_single_token_is_zero(self, x):
        assert token_variance(trace([x])) == 0.0

    @given(st.lists(logprob, min_size=1, max_size=60))
    def test_matches_statistics_pstdev(self, xs):
        # statistics.pvariance accumulates in exact fractions
        assert token_variance(trace(xs)) == pytest.approx(statistics.pstdev(xs), rel=1e-12, abs=1e-12)


class TestCebagAndAvgProb:
    def test_zero_sigma(self):
        assert cebag_score(0.0, 5.0) == 0.0

    def test_identity_weight(self):
        assert cebag_score(1.0, 0.0) == 1.0

    def test_hand(self):
        assert cebag_score(2.0, 2.0) == 6.0

    @given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
    def test_monotone(self, s1, s2, e1, e2):
        lo_s, hi_s = sorted((s1, s2))
        lo_e, hi_e = sorted((e1, e2))
        assert cebag_score(lo_s, lo_e) <= cebag_score(hi_s, lo_e) <= cebag_score(hi_s, hi_e)

    def test_avgprob_certain(self):
        assert avgprob_score(trace([0.0, 0.0, 0.0])) == -1.0

    def test_avgprob_half(self):
        assert avgprob_score(trace([math.log(0.5)] * 2)) == pytest.approx(-0.5, abs=1e-15)

    def test_avgprob_mixed(self):
        assert avgprob_score(trace([0.0, math.log(0.25)])) == pytest.approx(-0.625, abs=1e-15)


class TestScoreSample:
    def test_degenerate_pair(self):
        s = score_sample(pair([-1.0, -1.0], [-1.0, -1.0]))
        assert (s.sigma, s.gain, s.evidence, s.cebag) == (0.0, 0.0, 0.0, 0.0)
        assert s.avgprob_neg == pytest.approx(-math.exp(-1.0), abs=1e-15)
        assert s.length == 2

    def test_hand_composition(self):
        s = score_sample(pair([-1.0, -3.0], [-2.0, -3.0]))
        assert (s.sigma, s.gain, s.evidence, s.cebag) == (1.0, 1.0, 0.5, 1.5)

    @given(pairs())
    def test_deterministic(self, p):
        assert score_sample(p) == score_sample(p)

    @given(pairs())
    def test_composition_identities(self, p):
        s = score_sample(p)
        assert s.evidence == abs(s.gain) / s.length
        assert s.cebag == s.sigma * (1.0 + s.evidence)
        assert -1.0 <= s.avgprob_neg <= 0.0

    @given(pairs())
    def test_cebag_at_least_sigma(self, p):
        s = score_sample(p)
        assert s.cebag >= s.sigma
        if s.gain == 0.0:
            assert s.cebag == s.sigma
        elif s.sigma > 0.0:
            assert s.cebag > s.sigma

    @settings(max_examples=200)
    @given(pairs(), st.floats(-5.0, 0.0), st.randoms(use_true_random=False))
    def test_shift_and_permutation_invariance(self, p, c, rnd):
        base = score_sample(p)
        mm, text = list(p.multimodal.logprobs), list(p.text_only.logprobs)
        shifted = score_sample(pair([x + c for x in mm], [x + c for x in text]))
        assert shifted.sigma == pytest.approx(base.sigma, abs=1e-12)
        assert shifted.gain == pytest.approx(base.gain, abs=1e-12)
        assert shifted.cebag == pytest.approx(base.cebag, abs=1e-12)
        order = list(range(len(mm)))
        rnd.shuffle(order)
        permuted = score_sample(pair([mm[i] for i in order], [text[i] for i in order]))
        assert permuted == base


def _ds(sid, sigma, evidence):
    return DetectorScores(sid, sigma, evidence, evidence, sigma * (1 + evidence), -0.5, 1)


class TestCebagLambda:
    def test_empty(self):
        with pytest.raises(ValidationError):
            cebag_lambda_scores([], 1.0)

    def test_negative_lambda(self):
        with pytest.raises(RangeError):
            cebag_lambda_scores([_ds("a", 1, 1)], -0.1)

    def test_hand_tie(self):
        out = cebag_lambda_scores([_ds("a", 1.0, 0.0), _ds("b", 0.0, 1.0)], 1.0)
        assert out == [("a", 1.0), ("b", 1.0)]

    def test_constant_sigma_zeroes_feature(self):
        corpus = [_ds("a", 2.0, 0.5), _ds("b", 2.0, 3.0), _ds("c", 2.0, 1.0)]
        out = dict(cebag_lambda_scores(corpus, 0.5))
        assert out == {"a": 0.0, "b": 0.5, "c": 0.5 * (0.5 / 2.5)}

    @given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=30))
    def test_lambda_zero_is_sigma_ranking(self, feats):
        corpus = [_ds(f"s{i}", s, e) for i, (s, e) in enumerate(feats)]
        lam0 = dict(cebag_lambda_scores(corpus, 0.0))
        ids = [c.sample_id for c in corpus]
        by_sigma = sorted(ids, key=lambda i: (corpus[ids.index(i)].sigma, i))
        by_lam = sorted(ids, key=lambda i: (lam0[i], i))
        assert by_sigma == by_lam
