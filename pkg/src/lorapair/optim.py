"""Per-factor learning rates for LoRA updates, and the ablation switches.

The update is plain gradient descent with a separate rate for each factor::

    A ← A − alpha·∇A        B ← B − beta·∇B

How alpha and beta are chosen is an :class:`AdaptationPolicy`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .lora import inject_adapters, match_targets


@dataclass(frozen=True)
class AdapterLearningRates:
    alpha: float
    beta: float


class PolicyKind(str, enum.Enum):
    FIXED = "fixed"
    GRAD_NORM = "grad_norm"
    GRID = "grid"


@dataclass(frozen=True)
class AdaptationPolicy:
    kind: PolicyKind = PolicyKind.FIXED
    base_alpha: float = 0.05
    base_beta: float = 0.05
    grid: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not (self.base_alpha > 0 and self.base_beta > 0):
            raise ConfigError("base learning rates must be positive")
        if self.kind is PolicyKind.GRID:
            if not self.grid:
                raise ConfigError("grid policy needs at least one (alpha, beta) candidate")
            if any(a <= 0 or b <= 0 for a, b in self.grid):
                raise ConfigError("grid learning rates must be positive")


def step_lora(adapter, grad_A, grad_B, rates: AdapterLearningRates):
    """One descent step on A and B in place; W0 is never touched."""
    if adapter.merged:
        raise StateError(f"adapter {adapter.target!r} is merged; cannot update it")
    gA = np.asarray(grad_A.data if hasattr(grad_A, "data") else grad_A, dtype=np.float64)
    gB = np.asarray(grad_B.data if hasattr(grad_B, "data") else grad_B, dtype=np.float64)
    if gA.shape != adapter.A.shape or gB.shape != adapter.B.shape:
        raise ShapeError(
            f"gradient shapes {gA.shape}/{gB.shape} do not match A {adapter.A.shape} / B {adapter.B.shape}"
        )
    adapter.A.data = adapter.A.data - rates.alpha * gA
    adapter.B.data = adapter.B.data - rates.beta * gB
    return adapter


def adapt_rates(policy: AdaptationPolicy, grad_A=None, grad_B=None, validation_scorer=None) -> AdapterLearningRates:
    """Rates for the next step.

    ``grad_norm`` divides each base rate by one plus the Frobenius norm of the
    matching gradient. ``grid`` asks ``validation_scorer(rates)`` for the
    validation accuracy of every candidate and keeps the first best one.
    """
    if policy.kind is PolicyKind.FIXED:
        return AdapterLearningRates(policy.base_alpha, policy.base_beta)
    if policy.kind is PolicyKind.GRAD_NORM:
        na = float(np.linalg.norm(np.asarray(grad_A)))
        nb = float(np.linalg.norm(np.asarray(grad_B)))
        return AdapterLearningRates(policy.base_alpha / (1.0 + na), policy.base_beta / (1.0 + nb))
    if validation_scorer is None:
        raise ConfigError("grid policy needs a validation scorer")
    best, best_score = None, -np.inf
    for alpha, beta in policy.grid:
        cand = AdapterLearningRates(float(alpha), float(beta))
        s = validation_scorer(cand)
        if s > best_score:
            best, best_score = cand, s
    return best


@dataclass(frozen=True)
class AblationConfig:
    use_adaptive_rates: bool = True
    use_lowrank: bool = True

    @property
    def row_name(self):
        return ROW_NAMES[(self.use_adaptive_rates, self.use_lowrank)]


ROW_NAMES = {
    (True, True): "Ours",
    (False, True): "Remove adaptive learning rate",
    (True, False): "Remove low-rank matrix updates",
    (False, False): "LORA",
}


@dataclass
class TrainingMode:
    """What trains and with which rates, as decided by :func:`apply_ablation`."""

    ablation: AblationConfig
    policy: AdaptationPolicy
    base_lr: float
    dense_names: list = field(default_factory=list)
    rate_calls: int = 0
    _grid_choice: AdapterLearningRates | None = None

    @property
    def lowrank(self):
        return not self.dense_names

    @property
    def adaptive(self):
        return self.ablation.use_adaptive_rates

    def rates(self, grad_A, grad_B, scorer=None) -> AdapterLearningRates:
        if not self.adaptive:
            return AdapterLearningRates(self.base_lr, self.base_lr)
        if self.policy.kind is PolicyKind.GRID and self._grid_choice is not None:
            return self._grid_choice
        self.rate_calls += 1
        r = adapt_rates(self.policy, grad_A, grad_B, scorer)
        if self.policy.kind is PolicyKind.GRID:
            self._grid_choice = r
        return r

    def dense_rate(self, grad, scorer=None) -> float:
        # a dense layer has one matrix; it takes the A-side rate
        return self.rates(grad, grad, scorer).alpha


def apply_ablation(config: AblationConfig, model, base_lr: float, *, policy=None,
                   targets=("query", "value", "head"), rank=4, scale=1.0, rng=None) -> TrainingMode:
    """Prepare a frozen model for one of the four ablation settings.

    Only "remove low-rank updates" (adaptive rates on, low-rank off) trains the
    target weights densely; every other setting gives the targets adapters.
    Plain LoRA (both off) is adapters with one shared fixed rate.
    """
    if not base_lr > 0:
        raise ConfigError("base learning rate must be positive")
    policy = AdaptationPolicy() if policy is None else policy
    model.freeze()
    mode = TrainingMode(config, policy, float(base_lr))
    if config.use_adaptive_rates and not config.use_lowrank:
        mode.dense_names = match_targets(model.linear_names(), targets)
        model.unfreeze(mode.dense_names)
    else:
        inject_adapters(model, targets, rank, scale=scale, rng=rng)
    return mode
