"""Synthetic labelled corpora and brute-force oracles.

The generator draws per-token multimodal log-probabilities from a Gaussian
clamped at 0 and derives the text-only pass by subtracting a per-token
evidence gain. Grounded samples get tight log-probabilities and a large gain;
hallucinated ones get a wide spread and a gain near zero. Nothing here is
meant to look like a real model.

Randomness comes from ``numpy.random.Generator(PCG64)`` seeded with
``SyntheticSpec.seed``. Every sample consumes the same number of draws
whatever the class parameters are, so two specs that differ only in a scale
parameter see identical noise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Hashable, Sequence

import numpy as np

from .errors import DegenerateLabelsError, RangeError, ValidationError
from .scoring import SamplePair

PRNG = "numpy.random.PCG64"
# GREEN scores of flagged responses ~ Beta(1, GREEN_BETA): mostly well below 0.4.
GREEN_BETA = 8.0
GREEN_CAP = 0.99


@dataclass(frozen=True)
class ClassParams:
    logprob_mean: float
    logprob_std: float
    gain_per_token_mean: float
    gain_per_token_std: float = 0.0

    def validate(self, name: str) -> None:
        for key, v in asdict(self).items():
            if not math.isfinite(v):
                raise ValidationError(f"{name}.{key} must be finite, got {v!r}")
        if self.logprob_mean > 0:
            raise RangeError(f"{name}.logprob_mean must be <= 0, got {self.logprob_mean!r}")
        if self.logprob_std < 0 or self.gain_per_token_std < 0:
            raise RangeError(f"{name} standard deviations must be >= 0")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    n_grounded: int
    n_hallucinated: int
    length_range: tuple[int, int]
    grounded_params: ClassParams
    hallucinated_params: ClassParams
    green_coupling: float = 1.0

    def validate(self) -> None:
        if not (0 <= self.seed < 2**64):
            raise RangeError(f"seed must fit in 64 unsigned bits, got {self.seed!r}")
        if self.n_grounded < 1 or self.n_hallucinated < 1:
            raise RangeError("both class counts must be >= 1")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise RangeError(f"length_range must satisfy 1 <= min <= max, got {self.length_range!r}")
        if not (0.0 <= self.green_coupling <= 1.0):
            raise RangeError(f"green_coupling must be in [0, 1], got {self.green_coupling!r}")
        self.grounded_params.validate("grounded_params")
        self.hallucinated_params.validate("hallucinated_params")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_range"] = list(self.length_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        try:
            return cls(
                seed=int(d["seed"]),
                n_grounded=int(d["n_grounded"]),
                n_hallucinated=int(d["n_hallucinated"]),
                length_range=tuple(int(x) for x in d["length_range"]),
                grounded_params=ClassParams(**d["grounded_params"]),
                hallucinated_params=ClassParams(**d["hallucinated_params"]),
                green_coupling=float(d.get("green_coupling", 1.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad synthetic spec: {exc}") from None


PRESETS = {
    # CEBaG and sigma separate the classes; mean probability is matched so AvgProb cannot.
    "separable": SyntheticSpec(
        seed=20240611,
        n_grounded=200,
        n_hallucinated=200,
        length_range=(6, 30),
        grounded_params=ClassParams(-1.2, 0.35, 1.2, 0.8),
        hallucinated_params=ClassParams(-1.75, 1.3, 0.05, 0.8),
        green_coupling=1.0,
    ),
    "hard": SyntheticSpec(
        seed=7,
        n_grounded=200,
        n_hallucinated=200,
        length_range=(3, 20),
        grounded_params=ClassParams(-1.0, 0.7, 0.5, 1.0),
        hallucinated_params=ClassParams(-1.1, 0.9, 0.2, 1.0),
        green_coupling=0.95,
    ),
    "label-noise": SyntheticSpec(
        seed=11,
        n_grounded=200,
        n_hallucinated=200,
        length_range=(6, 30),
        grounded_params=ClassParams(-1.2, 0.35, 1.2, 0.8),
        hallucinated_params=ClassParams(-1.75, 1.3, 0.05, 0.8),
        green_coupling=0.7,
    ),
}


def get_preset(name: str) -> SyntheticSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def generate_corpus(spec: SyntheticSpec) -> list[SamplePair]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_grounded + spec.n_hallucinated
    is_halluc = np.array([False] * spec.n_grounded + [True] * spec.n_hallucinated)
    is_halluc = is_halluc[rng.permutation(n)]

    n_flip = int(round((1.0 - spec.green_coupling) * n))
    flipped = np.zeros(n, dtype=bool)
    flipped[rng.choice(n, size=n_flip, replace=False)] = True
    green_draw = rng.beta(1.0, GREEN_BETA, size=n)

    lo, hi = spec.length_range
    width = len(str(n - 1))
    pairs = []
    for i in range(n):
        p = spec.hallucinated_params if is_halluc[i] else spec.grounded_params
        length = int(rng.integers(lo, hi + 1))
        z = rng.standard_normal(length)
        w = rng.standard_normal(length)
        mm = np.minimum(p.logprob_mean + p.logprob_std * z, 0.0)
        gain = p.gain_per_token_mean + p.gain_per_token_std * w
        text = np.minimum(mm - gain, 0.0)
        flagged = bool(is_halluc[i] ^ flipped[i])
        green = min(float(green_draw[i]), GREEN_CAP) if flagged else 1.0
        pairs.append(SamplePair.from_logprobs(
            f"syn-{i:0{width}d}",
            [float(x) for x in mm],
            [float(x) for x in text],
            tokens=[f"t{j}" for j in range(length)],
            green_score=green,
            label=bool(is_halluc[i]),
            meta={"source": "synthetic", "seed": str(spec.seed)},
        ))
    return pairs


@dataclass
class DiscreteBayesModel:
    """Finite joint distribution over (image, response)."""

    images: tuple[Hashable, ...]
    responses: tuple[Hashable, ...]
    joint: np.ndarray
    p_image: np.ndarray = field(init=False, repr=False)
    p_response: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.images = tuple(self.images)
        self.responses = tuple(self.responses)
        self.joint = np.asarray(self.joint, dtype=np.float64)
        if self.joint.shape != (len(self.images), len(self.responses)):
            raise ValidationError(
                f"joint has shape {self.joint.shape}, expected {(len(self.images), len(self.responses))}"
            )
        if not np.all(np.isfinite(self.joint)) or np.any(self.joint < 0):
            raise RangeError("joint entries must be finite and >= 0")
        total = math.fsum(self.joint.ravel())
        if abs(total - 1.0) > 1e-12:
            raise RangeError(f"joint sums to {total!r}, not 1")
        self.p_image = np.array([math.fsum(row) for row in self.joint])
        self.p_response = np.array([math.fsum(col) for col in self.joint.T])
        if np.any(self.p_image <= 0) or np.any(self.p_response <= 0):
            raise RangeError("every marginal must be strictly positive")


def pmi_check(model: DiscreteBayesModel, image, response) -> tuple[float, float]:
    """Return ``(gain, pmi)`` for one cell.

    gain = log P(response | image) - log P(response)
    pmi  = log P(image | response) - log P(image)

    The two are equal by Bayes' rule; each is computed from its own
    conditional table so the comparison is not a tautology.
    """
    i = model.images.index(image)
    j = model.responses.index(response)
    cell = model.joint[i, j]
    if cell <= 0:
        raise RangeError(f"cell ({image!r}, {response!r}) has zero mass")
    p_r_given_v = cell / model.p_image[i]
    p_v_given_r = cell / model.p_response[j]
    gain = math.log(p_r_given_v) - math.log(model.p_response[j])
    pmi = math.log(p_v_given_r) - math.log(model.p_image[i])
    return gain, pmi


def random_joint(rows: int, cols: int, rng: np.random.Generator) -> DiscreteBayesModel:
    """Strictly positive joint table with weights spread over ~9 orders of magnitude."""
    w = np.exp(rng.uniform(-20.0, 0.0, size=(rows, cols)))
    joint = w / math.fsum(w.ravel())
    return DiscreteBayesModel(tuple(range(rows)), tuple(range(cols)), joint)


@dataclass
class PmiTrialResult:
    trials: int
    cells: int
    max_abs_diff: float
    violations: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def run_pmi_trials(
    max_size: int,
    trials: int,
    seed: int,
    *,
    tolerance: float = 1e-12,
    corrupt: float = 0.0,
) -> PmiTrialResult:
    """Check gain == pmi on every cell of ``trials`` random tables.

    Each table has a random shape with both sides in ``[1, max_size]``.
    ``corrupt`` is added to every pmi value; it exists only as a negative
    control for the checker itself.
    """
    if max_size < 1 or trials < 1:
        raise RangeError("max_size and trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    cells = violations = 0
    for _ in range(trials):
        rows, cols = (int(x) for x in rng.integers(1, max_size + 1, size=2))
        model = random_joint(rows, cols, rng)
        for v, r in itertools.product(model.images, model.responses):
            gain, pmi = pmi_check(model, v, r)
            diff = abs(gain - (pmi + corrupt))
            worst = max(worst, diff)
            cells += 1
            violations += diff > tolerance
    return PmiTrialResult(trials, cells, worst, violations, tolerance)


def brute_force_auc(items: Sequence) -> float:
    """Pairwise AUC over all positive/negative pairs, ties worth one half."""
    pos = [it.score for it in items if it.label]
    neg = [it.score for it in items if not it.label]
    if not pos or not neg:
        raise DegenerateLabelsError("need at least one positive and one negative")
    wins = 0
    ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    # numerator kept in integer half-units so the only rounding is the final division
    return (2 * wins + ties) / (2 * len(pos) * len(neg))


def with_coupling(spec: SyntheticSpec, coupling: float) -> SyntheticSpec:
    return replace(spec, green_coupling=coupling)
