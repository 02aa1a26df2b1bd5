"""Subset-restriction KL machinery and its brute-force verification.

For a finite base distribution and a nonempty subset S with mass
Z_S = sum of base probabilities over S, the distribution that renormalizes
the base onto S has KL divergence to the base of exactly -ln(Z_S). Hence
minimizing that KL over all size-k subsets is the same as maximizing Z_S,
which the top-k-by-probability subset does. verify_theorem1 checks all of
this exhaustively on small supports.

All KL values are natural-log.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from .errors import DistError
from .scoring import ScoredResponse

PROB_SUM_TOLERANCE = 1e-12
CLOSED_FORM_TOLERANCE = 1e-10


@dataclass(frozen=True)
class FiniteDistribution:
    support: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.probs):
            raise DistError("support and probs lengths differ")
        if len(self.support) == 0:
            raise DistError("empty support")
        if len(set(self.support)) != len(self.support):
            raise DistError("support ids must be unique")
        if any(p < 0 for p in self.probs):
            raise DistError("probabilities must be nonnegative")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_SUM_TOLERANCE:
            raise DistError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_weights(cls, support: Sequence[str], weights: Sequence[float]) -> "FiniteDistribution":
        total = math.fsum(weights)
        if total <= 0:
            raise DistError("weights must have positive total")
        return cls(tuple(support), tuple(w / total for w in weights))

    def prob_of(self, outcome: str) -> float:
        return self.probs[self.support.index(outcome)]


@dataclass(frozen=True)
class RestrictedDistribution:
    base: FiniteDistribution
    subset: frozenset[str]
    z: float
    probs_on_subset: tuple[float, ...]  # in base support order, restricted to subset

    def as_distribution(self) -> FiniteDistribution:
        """The restriction expressed over the full base support (zeros off S)."""
        probs = tuple(
            (p / self.z if s in self.subset else 0.0)
            for s, p in zip(self.base.support, self.base.probs)
        )
        return FiniteDistribution(self.base.support, probs)


def restrict(base: FiniteDistribution, subset: Iterable[str]) -> RestrictedDistribution:
    """Renormalize the base onto a nonempty, positive-mass subset."""
    sub = frozenset(subset)
    if not sub:
        raise DistError("subset is empty")
    unknown = sub - set(base.support)
    if unknown:
        raise DistError(f"subset contains outcomes outside the support: {sorted(unknown)}")
    z = math.fsum(p for s, p in zip(base.support, base.probs) if s in sub)
    if z <= 0.0:
        raise DistError("subset has zero probability mass under the base")
    probs_on_subset = tuple(p / z for s, p in zip(base.support, base.probs) if s in sub)
    return RestrictedDistribution(base=base, subset=sub, z=z, probs_on_subset=probs_on_subset)


def kl(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """KL(p || q) over a shared support ordering; p(r)=0 terms contribute 0."""
    if p.support != q.support:
        raise DistError("distributions must share one support ordering")
    terms = []
    for pp, qq in zip(p.probs, q.probs):
        if pp == 0.0:
            continue
        if qq == 0.0:
            raise DistError("absolute continuity violated: p(r) > 0 where q(r) = 0")
        terms.append(pp * math.log(pp / qq))
    return math.fsum(terms)


def kl_restricted_closed_form(base: FiniteDistribution, subset: Iterable[str]) -> float:
    """KL of the renormalized subset distribution to its base: -ln(Z_S)."""
    return -math.log(restrict(base, subset).z)


def optimal_subset(base: FiniteDistribution, k: int) -> frozenset[str]:
    """The k outcomes with the largest base probability (support-order ties)."""
    n = len(base.support)
    if not (1 <= k <= n):
        raise DistError(f"k must be in [1, {n}], got {k}")
    order = sorted(range(n), key=lambda i: (-base.probs[i], i))
    return frozenset(base.support[i] for i in order[:k])


@dataclass
class TrialResult:
    ok: bool
    closed_vs_direct: float  # |kl(restrict, base) - (-ln Z_S)| on the optimal subset
    optimality_violation: float  # KL(optimal) - min over all k-subsets (<= tol if ok)
    strictness_ok: bool  # non-top-Z subsets had strictly larger KL
    gap_to_next: float | None  # margin to the best subset with smaller Z, if any


@dataclass
class VerificationReport:
    trials: int
    passes: int
    max_abs_error: float
    worst_subset_gap: float | None

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "passes": self.passes,
            "max_abs_error": self.max_abs_error,
            "worst_subset_gap": self.worst_subset_gap,
        }


def check_distribution(base: FiniteDistribution, k: int, *, tol: float = CLOSED_FORM_TOLERANCE) -> TrialResult:
    """Exhaustively verify subset-KL optimality for one distribution.

    Checks:
      (a) closed form -ln Z_S equals the directly computed KL within tol;
      (b) the top-k subset attains the minimum KL over all k-subsets;
      (c) every subset with strictly smaller Z has strictly larger KL
          (subsets tying the k-th probability may tie the optimum).
    """
    best = optimal_subset(base, k)
    closed = kl_restricted_closed_form(base, best)
    direct = kl(restrict(base, best).as_distribution(), base)
    closed_vs_direct = abs(closed - direct)

    z_best = restrict(base, best).z
    min_kl = math.inf
    gap_to_next: float | None = None
    strictness_ok = True
    for combo in combinations(base.support, k):
        z = math.fsum(p for s, p in zip(base.support, base.probs) if s in combo)
        if z <= 0.0:
            continue  # zero-mass subsets admit no renormalized distribution
        val = -math.log(z)
        min_kl = min(min_kl, val)
        if z < z_best - 1e-15:
            margin = val - closed
            if margin <= 0:
                strictness_ok = False
            if gap_to_next is None or margin < gap_to_next:
                gap_to_next = margin
    optimality_violation = closed - min_kl
    ok = closed_vs_direct <= tol and optimality_violation <= tol and strictness_ok
    return TrialResult(
        ok=ok,
        closed_vs_direct=closed_vs_direct,
        optimality_violation=optimality_violation,
        strictness_ok=strictness_ok,
        gap_to_next=gap_to_next,
    )


def _dirichlet(n: int, rng: random.Random, alpha: float = 1.0) -> FiniteDistribution:
    weights = [rng.gammavariate(alpha, 1.0) for _ in range(n)]
    # gammavariate can underflow to 0 for tiny alpha; nudge to keep support full
    weights = [w if w > 0 else 1e-300 for w in weights]
    return FiniteDistribution.from_weights([f"r{i}" for i in range(n)], weights)


def verify_theorem1(
    base: FiniteDistribution | None = None,
    k: int = 1,
    trials: int = 1,
    *,
    n: int | None = None,
    seed: int = 0,
    tol: float = CLOSED_FORM_TOLERANCE,
) -> VerificationReport:
    """Run the exhaustive subset-KL check over one or many distributions.

    If base is given it is trial 1 and any remaining trials are sampled
    Dirichlet(1,...,1) over the same support size; otherwise n is required
    and all trials are sampled. Supports must stay small (enumeration).

    Failures are reported, not raised.
    """
    if base is None and n is None:
        raise DistError("verify_theorem1 needs a base distribution or a support size n")
    size = len(base.support) if base is not None else int(n)  # type: ignore[arg-type]
    if size > 20:
        raise DistError("support too large for exhaustive verification (max 20)")
    rng = random.Random(seed)
    passes = 0
    max_abs_error = 0.0
    worst_gap: float | None = None
    for trial in range(trials):
        dist = base if (trial == 0 and base is not None) else _dirichlet(size, rng)
        result = check_distribution(dist, k, tol=tol)
        if result.ok:
            passes += 1
        max_abs_error = max(max_abs_error, result.closed_vs_direct, max(result.optimality_violation, 0.0))
        if result.gap_to_next is not None:
            worst_gap = result.gap_to_next if worst_gap is None else min(worst_gap, result.gap_to_next)
    return VerificationReport(
        trials=trials,
        passes=passes,
        max_abs_error=max_abs_error,
        worst_subset_gap=worst_gap,
    )


def pool_distribution(scores: Sequence[ScoredResponse]) -> FiniteDistribution:
    """Softmax of normalized logprobs as a distribution over a pool's responses.

    An analysis convention for bridging pool scores to the subset-KL
    machinery: the induced top-k subset coincides with the lowest-perplexity
    k-selection because softmax is monotone.
    """
    if not scores:
        raise DistError("cannot build a distribution from zero scores")
    ids = tuple(s.response_id for s in scores)
    vals = [s.normalized_logprob for s in scores]
    peak = max(vals)
    weights = [math.exp(v - peak) for v in vals]
    return FiniteDistribution.from_weights(ids, weights)


def analyze_pools(
    pools_scores: Sequence[tuple[str, Sequence[ScoredResponse]]],
    k: int,
    *,
    tol: float = CLOSED_FORM_TOLERANCE,
) -> VerificationReport:
    """Run the subset-KL check on each pool's softmax distribution.

    pools_scores pairs an instruction_id with that pool's scores; pools
    with fewer than k candidates are checked at k = pool size.
    """
    passes = 0
    max_abs_error = 0.0
    worst_gap: float | None = None
    trials = 0
    for _iid, scores in pools_scores:
        dist = pool_distribution(scores)
        kk = min(k, len(dist.support))
        result = check_distribution(dist, kk, tol=tol)
        trials += 1
        if result.ok:
            passes += 1
        max_abs_error = max(max_abs_error, result.closed_vs_direct, max(result.optimality_violation, 0.0))
        if result.gap_to_next is not None:
            worst_gap = result.gap_to_next if worst_gap is None else min(worst_gap, result.gap_to_next)
    return VerificationReport(trials=trials, passes=passes, max_abs_error=max_abs_error, worst_subset_gap=worst_gap)
