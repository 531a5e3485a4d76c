"""Sensitivity functions and Gaussian-mechanism calibration.

The shared message of agent i at iteration k is M_i = x_i - lambda_k g_i plus
the scaled noise -lambda_k n_i. Three protection targets are supported, each
with its worst-case l1 sensitivity under a unit l1 change of the protected
quantity:

    sample    S = nu * lambda_k / n_i   (one data sample changes one summand
                                         of the per-agent empirical gradient)
    gradient  S = lambda_k              (the gradient enters M scaled by it)
    variable  S = 1                     (x_i enters M directly)

Calibration uses the standard Gaussian-mechanism bound
sigma^2 >= 2 ln(1.25/delta) S^2 / eps^2 for eps, delta in (0, 1), stated for
the variance of the raw per-coordinate noise n_i; for the `variable` target
the noise reaches x_i scaled by lambda_k, hence the extra lambda_k^2 in the
denominator. Budgets are per-iteration only; no composition across iterations
is computed or implied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .optimizer import StepsizeSchedule, stepsize

TARGETS = ("sample", "gradient", "variable")


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) pair with the protection target; both parameters must
    lie in (0, 1), the range for which the Gaussian-mechanism bound holds."""

    epsilon: float
    delta: float
    target: str

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise PrivacyError(f"epsilon must be in (0,1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise PrivacyError(f"delta must be in (0,1), got {self.delta}")
        if self.target not in TARGETS:
            raise PrivacyError(f"target must be one of {TARGETS}, got {self.target!r}")


@dataclass(frozen=True)
class SensitivityInputs:
    """nu: gradient Lipschitz constant; lambda_k: stepsize at the iteration in
    question; n_i: sample count of the protected agent."""

    nu: float
    lambda_k: float
    n_i: int = 1

    def __post_init__(self):
        if self.nu <= 0 or self.lambda_k <= 0 or self.n_i < 1:
            raise PrivacyError("sensitivity inputs require nu, lambda_k > 0 and n_i >= 1")


def sensitivity(target: str, inputs: SensitivityInputs) -> float:
    """Worst-case l1 change of the shared message per unit change of target."""
    if target == "sample":
        return inputs.nu * inputs.lambda_k / inputs.n_i
    if target == "gradient":
        return inputs.lambda_k
    if target == "variable":
        return 1.0
    raise PrivacyError(f"target must be one of {TARGETS}, got {target!r}")


def _effective_lambda_power(target: str, inputs: SensitivityInputs) -> float:
    # the noise reaching the protected quantity is n_i scaled by lambda for
    # the variable target, unscaled otherwise
    return inputs.lambda_k**2 if target == "variable" else 1.0


def variance_for_budget(budget: PrivacyBudget, inputs: SensitivityInputs) -> float:
    """Minimal per-coordinate variance of the raw noise n_i meeting the budget.

    sample:   2 nu^2 lambda^2 ln(1.25/delta) / (n_i^2 eps^2)
    gradient: 2 lambda^2 ln(1.25/delta) / eps^2
    variable: 2 ln(1.25/delta) / (lambda^2 eps^2)
    """
    s = sensitivity(budget.target, inputs)
    var_effective = 2.0 * math.log(1.25 / budget.delta) * s * s / budget.epsilon**2
    return var_effective / _effective_lambda_power(budget.target, inputs)


@dataclass(frozen=True)
class BudgetResult:
    epsilon: float
    warning: str | None = None


def budget_for_variance(variance: float, target: str, inputs: SensitivityInputs,
                        delta: float) -> BudgetResult:
    """Invert variance_for_budget: the epsilon achieved at a fixed variance.

    Values epsilon >= 1 fall outside the range of the calibration bound; they
    are returned with a warning rather than rejected.
    """
    if variance <= 0:
        raise PrivacyError(f"variance must be positive, got {variance}")
    if not 0.0 < delta < 1.0:
        raise PrivacyError(f"delta must be in (0,1), got {delta}")
    s = sensitivity(target, inputs)
    var_effective = variance * _effective_lambda_power(target, inputs)
    eps = s * math.sqrt(2.0 * math.log(1.25 / delta) / var_effective)
    warning = None
    if eps >= 1.0:
        warning = (
            f"epsilon = {eps:.4g} >= 1 lies outside the (0,1) range of the "
            "Gaussian-mechanism guarantee"
        )
    return BudgetResult(epsilon=eps, warning=warning)


@dataclass(frozen=True)
class IterationBudget:
    k: int
    lam: float
    eps_sample: float
    eps_gradient: float
    eps_variable: float


def per_iteration_report(schedule: StepsizeSchedule, variance: float, nu: float,
                         n_i: int, delta: float, horizon: int) -> list[IterationBudget]:
    """Per-iteration epsilons achieved by a fixed noise variance, k = 1..horizon.

    Budgets are not composed across iterations. With a non-increasing stepsize
    the sample/gradient epsilons are non-increasing while the variable epsilon
    is non-decreasing (the noise reaching x_i shrinks with lambda_k).
    """
    if horizon < 1:
        raise PrivacyError(f"horizon must be >= 1, got {horizon}")
    rows = []
    for k in range(1, horizon + 1):
        lam = stepsize(schedule, k)
        inputs = SensitivityInputs(nu=nu, lambda_k=lam, n_i=n_i)
        rows.append(
            IterationBudget(
                k=k,
                lam=lam,
                eps_sample=budget_for_variance(variance, "sample", inputs, delta).epsilon,
                eps_gradient=budget_for_variance(variance, "gradient", inputs, delta).epsilon,
                eps_variable=budget_for_variance(variance, "variable", inputs, delta).epsilon,
            )
        )
    return rows
