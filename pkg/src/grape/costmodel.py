"""Symbolic cost accounting for data-selection methods.

Every method's cost splits into two parts: training of additional models
(opaque C(...) scalars supplied by the user) and per-sample feature
computation (counted in forward passes of the target or a reference
model). A gradient pass costs 3 forward passes (one forward plus a
backward at roughly twice a forward). Costs are unitless.

Method table (training, feature):
    grape                     0                          N*F_theta
    gradient_influence_less   C(theta_lora,D_warmup,T)   3*T*N*F_theta
    inrun_influence           C(theta,D,1)               0
    gradient_matching         C(theta_lora,D_warmup,T)   3*T*N*F_theta
    gradient_norm             m*C(theta,D,1)             3*m*N*F_theta
    embedding                 0                          N*F_theta
    uncertainty               0                          N*F_theta
    perplexity_ref            C(theta_ref,D_ref,1)       N*F_ref
    learnability              C(theta,D,1)               2*N*F_theta
    loss_trajectory_s2l       C(theta_ref,D,T)           T*N*F_ref
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .errors import CostError

# training-run descriptors, used as c_train keys and in the printed table
TRAIN_LORA_WARMUP = "C(theta_lora,D_warmup,T)"
TRAIN_FULL_1 = "C(theta,D,1)"
TRAIN_REF_DREF_1 = "C(theta_ref,D_ref,1)"
TRAIN_REF_FULL_T = "C(theta_ref,D,T)"

GRADIENT_PASS_FORWARDS = 3


@dataclass(frozen=True)
class CostParams:
    n: int  # dataset size
    f_theta: float  # forward-pass cost of the target model
    f_ref: float = 1.0  # forward-pass cost of a reference model
    t: int = 1  # epochs / checkpoints
    m: int = 1  # weight initializations
    c_train: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n < 1 or self.t < 1 or self.m < 1:
            raise CostError("n, t, and m must be positive integers")
        if self.f_theta <= 0 or self.f_ref <= 0:
            raise CostError("forward-pass costs must be positive")
        for key, val in self.c_train.items():
            if val < 0:
                raise CostError(f"training cost {key} must be nonnegative")

    def train_cost(self, descriptor: str) -> float:
        if descriptor not in self.c_train:
            raise CostError(f"missing training-cost entry for descriptor {descriptor!r}")
        return float(self.c_train[descriptor])


@dataclass(frozen=True)
class TrainingTerm:
    descriptor: str
    multiplier_symbol: str  # "1" or "m"
    multiplier: Callable[[CostParams], float]

    def symbol(self) -> str:
        if self.multiplier_symbol == "1":
            return self.descriptor
        return f"{self.multiplier_symbol}*{self.descriptor}"


@dataclass(frozen=True)
class FeatureTerm:
    passes_symbol: str  # forward-pass count, e.g. "3*T*N"
    model: str  # "theta", "theta_ref", or "" when zero
    passes: Callable[[CostParams], float]

    def symbol(self) -> str:
        if self.model == "":
            return "0"
        f = "F_theta" if self.model == "theta" else "F_ref"
        return f"{self.passes_symbol}*{f}"

    def value(self, params: CostParams) -> float:
        if self.model == "":
            return 0.0
        f = params.f_theta if self.model == "theta" else params.f_ref
        return self.passes(params) * f


@dataclass(frozen=True)
class MethodCost:
    method: str
    training_terms: tuple[TrainingTerm, ...]
    feature_term: FeatureTerm
    notes: str = ""

    def training_cost(self, params: CostParams) -> float:
        return math.fsum(t.multiplier(params) * params.train_cost(t.descriptor) for t in self.training_terms)

    def feature_cost(self, params: CostParams) -> float:
        return self.feature_term.value(params)

    def training_symbol(self) -> str:
        if not self.training_terms:
            return "0"
        return " + ".join(t.symbol() for t in self.training_terms)


def _one(desc: str) -> TrainingTerm:
    return TrainingTerm(desc, "1", lambda p: 1.0)


METHODS: dict[str, MethodCost] = {
    "grape": MethodCost(
        method="grape",
        training_terms=(),
        feature_term=FeatureTerm("N", "theta", lambda p: p.n),
        notes="one forward pass per candidate under the target model; no training",
    ),
    "gradient_influence_less": MethodCost(
        method="gradient_influence_less",
        training_terms=(_one(TRAIN_LORA_WARMUP),),
        feature_term=FeatureTerm("3*T*N", "theta", lambda p: GRADIENT_PASS_FORWARDS * p.t * p.n),
        notes="per-sample gradient at each of T warmup checkpoints",
    ),
    "inrun_influence": MethodCost(
        method="inrun_influence",
        training_terms=(_one(TRAIN_FULL_1),),
        feature_term=FeatureTerm("0", "", lambda p: 0.0),
        notes="scores are taken mid-training, so they track the model's preference at that iteration, not at initialization",
    ),
    "gradient_matching": MethodCost(
        method="gradient_matching",
        training_terms=(_one(TRAIN_LORA_WARMUP),),
        feature_term=FeatureTerm("3*T*N", "theta", lambda p: GRADIENT_PASS_FORWARDS * p.t * p.n),
        notes="same warmup-and-gradient pipeline as influence; clustering cost omitted",
    ),
    "gradient_norm": MethodCost(
        method="gradient_norm",
        training_terms=(TrainingTerm(TRAIN_FULL_1, "m", lambda p: float(p.m)),),
        feature_term=FeatureTerm("3*m*N", "theta", lambda p: GRADIENT_PASS_FORWARDS * p.m * p.n),
        notes="per-sample gradient norms averaged over m weight initializations",
    ),
    "embedding": MethodCost(
        method="embedding",
        training_terms=(),
        feature_term=FeatureTerm("N", "theta", lambda p: p.n),
        notes="last-layer embeddings from the pretrained target model",
    ),
    "uncertainty": MethodCost(
        method="uncertainty",
        training_terms=(),
        feature_term=FeatureTerm("N", "theta", lambda p: p.n),
        notes="entropy/confidence/margin indicators from one forward pass",
    ),
    "perplexity_ref": MethodCost(
        method="perplexity_ref",
        training_terms=(_one(TRAIN_REF_DREF_1),),
        feature_term=FeatureTerm("N", "theta_ref", lambda p: p.n),
        notes="perplexity under a separately trained reference model",
    ),
    "learnability": MethodCost(
        method="learnability",
        training_terms=(_one(TRAIN_FULL_1),),
        feature_term=FeatureTerm("2*N", "theta", lambda p: 2 * p.n),
        notes="loss before and after full training: two forward passes per sample",
    ),
    "loss_trajectory_s2l": MethodCost(
        method="loss_trajectory_s2l",
        training_terms=(_one(TRAIN_REF_FULL_T),),
        feature_term=FeatureTerm("T*N", "theta_ref", lambda p: p.t * p.n),
        notes="per-sample loss recorded across T epochs of a reference run",
    ),
}

METHOD_NAMES = tuple(METHODS)


def cost_of(method: str, params: CostParams) -> tuple[float, float]:
    """(training_cost, feature_cost) of a method under concrete parameters."""
    if method not in METHODS:
        raise CostError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")
    spec = METHODS[method]
    return spec.training_cost(params), spec.feature_cost(params)


def compare(methods: Sequence[str], params: CostParams) -> list[dict]:
    """Evaluate methods and rank them by total cost ascending.

    Each row carries the symbolic expressions next to the numeric values so
    the table is reproducible textually. Rows cheaper than grape (possible
    when reference-model forwards are cheap) are flagged as crossovers
    rather than assumed away.
    """
    rows = []
    grape_total: float | None = None
    if "grape" in methods:
        tr, fe = cost_of("grape", params)
        grape_total = tr + fe
    for method in methods:
        training, feature = cost_of(method, params)
        spec = METHODS[method]
        rows.append(
            {
                "method": method,
                "training_cost": training,
                "feature_cost": feature,
                "total_cost": training + feature,
                "training_expr": spec.training_symbol(),
                "feature_expr": spec.feature_term.symbol(),
                "cheaper_than_grape": (grape_total is not None and training + feature < grape_total),
                "notes": spec.notes,
            }
        )
    rows.sort(key=lambda r: (r["total_cost"], r["method"]))
    return rows


def compare_csv(rows: Sequence[dict]) -> str:
    header = "method,training_cost,feature_cost,total_cost,training_expr,feature_expr,cheaper_than_grape,notes"
    out = [header]
    for r in rows:
        notes = str(r["notes"]).replace('"', '""')
        out.append(
            f'{r["method"]},{r["training_cost"]!r},{r["feature_cost"]!r},{r["total_cost"]!r},'
            f'"{r["training_expr"]}","{r["feature_expr"]}",{str(r["cheaper_than_grape"]).lower()},"{notes}"'
        )
    return "\n".join(out) + "\n"
