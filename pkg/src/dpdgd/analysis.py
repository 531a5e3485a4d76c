"""Trace metrics, the per-step contraction check, and coupled saddle-escape runs.

The contraction check asserts the norm inequality that drives consensus:
one mixing step shrinks disagreement by the spectral gap eta and injects at
most eta * lambda_k ||g + N||. The coupling experiment drives paired
trajectories from a strict saddle whose noises are mirror images along the
most unstable Hessian direction e1; with noise the pair separates and escapes,
without noise both stay put.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import optimizer
from .problems import classify_stationary_point
from .topology import WeightMatrix

_COUPLING_STREAM = 3


class AnalysisError(ValueError):
    pass


class MissingPerAgentData(AnalysisError):
    pass


class NotAStrictSaddle(AnalysisError):
    pass


@dataclass(frozen=True)
class MetricRow:
    k: int
    consensus_error: float
    opt_error_mean: float
    opt_error_max: float
    grad_norm_mean: float


def consensus_error(state) -> float:
    """Stacked Euclidean norm of per-agent deviations from the agent mean."""
    x = state.x if isinstance(state, optimizer.AgentState) else np.asarray(state, dtype=float)
    return float(np.linalg.norm(x - x.mean(axis=0)))


def compute_metrics(trace: optimizer.RunTrace, problem) -> list[MetricRow]:
    """Re-derive metric rows from recorded per-agent states; grad_norm_mean is
    the aggregated gradient norm at the agent mean."""
    rows = []
    for rec in trace.records:
        if rec.x is None:
            raise MissingPerAgentData("trace was recorded without per-agent states")
        errs = problem.optimization_errors(rec.x)
        rows.append(
            MetricRow(
                k=rec.k,
                consensus_error=consensus_error(rec.x),
                opt_error_mean=float(errs.mean()),
                opt_error_max=float(errs.max()),
                grad_norm_mean=float(
                    np.linalg.norm(problem.aggregated_gradient(rec.x.mean(axis=0)))
                ),
            )
        )
    return rows


@dataclass(frozen=True)
class ContractionViolation:
    k: int
    lhs: float
    rhs: float


@dataclass(frozen=True)
class ContractionReport:
    pairs_checked: int
    violations: tuple
    eta: float
    tolerance: float

    @property
    def ok(self):
        return len(self.violations) == 0


def assert_contraction(trace: optimizer.RunTrace, w: WeightMatrix, tol=1e-9) -> ContractionReport:
    """Check ||x^{k+1} - mean|| <= eta ||x^k - mean|| + eta lambda ||g + N|| + tol
    over every adjacent recorded pair.

    Needs a trace recorded with record_every=1 and record_state=True; raises
    MissingPerAgentData otherwise.
    """
    eta = w.eta
    recs = trace.records
    if any(r.x is None for r in recs):
        raise MissingPerAgentData("contraction check needs per-agent states at every row")
    pairs = [
        (a, b) for a, b in zip(recs[:-1], recs[1:]) if b.k == a.k + 1
    ]
    if not pairs:
        raise MissingPerAgentData("contraction check needs consecutive iterations in the trace")
    violations = []
    for a, b in pairs:
        lhs = consensus_error(b.x)
        rhs = eta * consensus_error(a.x) + eta * b.lam * b.gn_norm + tol
        if lhs > rhs:
            violations.append(ContractionViolation(k=b.k, lhs=lhs, rhs=rhs))
    return ContractionReport(
        pairs_checked=len(pairs), violations=tuple(violations), eta=eta, tolerance=tol
    )


def min_eigvec(h) -> np.ndarray:
    """Unit eigenvector of the smallest eigenvalue, sign-fixed so the first
    nonzero component is positive."""
    h = np.asarray(h, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (h + h.T))
    v = vecs[:, int(np.argmin(vals))]
    for comp in v:
        if comp != 0.0:
            if comp < 0:
                v = -v
            break
    return v / np.linalg.norm(v)


def mirror_noise(n, e1) -> np.ndarray:
    """Negate every agent's component along e1 (flips the aggregate too)."""
    return n - 2.0 * (n @ e1)[:, None] * e1[None, :]


@dataclass
class CouplingResult:
    total_runs: int
    escape_count: int
    iterations_to_escape: list
    escape_radius: float
    e1: np.ndarray
    seed: int


def run_coupling_experiment(problem, w: WeightMatrix, saddle, schedule, variance,
                            runs, horizon, escape_radius, seed) -> CouplingResult:
    """Paired runs from all-agents-at-saddle with e1-mirrored noises.

    A run escapes at the first iteration where either trajectory's mean
    iterate leaves the escape_radius ball around the saddle; censored runs
    record None. The starting point is polished to a numerical fixed point of
    the noise-free update when one exists, so variance 0 yields no escapes.
    """
    saddle = np.asarray(saddle, dtype=float)
    kind = classify_stationary_point(problem, saddle, grad_tol=1e-6, eig_tol=1e-6)
    if kind != "strict_saddle":
        raise NotAStrictSaddle(f"initial point classifies as {kind!r}")
    if variance < 0:
        raise AnalysisError("variance must be >= 0")
    e1 = min_eigvec(problem.aggregated_hessian(saddle))
    start = optimizer.polish_fixed_point(problem, w, optimizer.stepsize(schedule, 1), saddle)
    m, d = problem.m, problem.d
    sig = np.sqrt(variance)
    iterations = []
    for r in range(runs):
        rngs = [
            np.random.Generator(
                np.random.Philox(np.random.SeedSequence((int(seed), _COUPLING_STREAM, r, j)))
            )
            for j in range(m)
        ]
        xa = np.tile(start, (m, 1))
        xb = xa.copy()
        hit = None
        for k in range(1, horizon + 1):
            lam = optimizer.stepsize(schedule, k)
            if variance > 0:
                n = np.stack([rngs[j].standard_normal(d) for j in range(m)]) * sig
            else:
                n = np.zeros((m, d))
            ga = problem.agent_gradients(xa)
            gb = problem.agent_gradients(xb)
            xa = problem.retract(optimizer.mixing_update(w.w, xa, ga + n, lam))
            xb = problem.retract(optimizer.mixing_update(w.w, xb, gb + mirror_noise(n, e1), lam))
            if (
                np.linalg.norm(xa.mean(axis=0) - saddle) > escape_radius
                or np.linalg.norm(xb.mean(axis=0) - saddle) > escape_radius
            ):
                hit = k
                break
        iterations.append(hit)
    return CouplingResult(
        total_runs=runs,
        escape_count=sum(1 for it in iterations if it is not None),
        iterations_to_escape=iterations,
        escape_radius=escape_radius,
        e1=e1,
        seed=seed,
    )


def escape_iterations_vs_stepsize(problem, w: WeightMatrix, saddle, variances,
                                  stepsizes, runs, horizon, escape_radius, seed):
    """Median escape iteration on a (variance, constant-stepsize) grid.

    Used for the qualitative check that a larger stable stepsize escapes
    faster (the escape time scales like 1/lambda up to logs). Cells where more
    than half the runs are censored report None. The stable range is
    lambda <= 1/nu with nu the gradient Lipschitz constant.
    """
    rows = []
    for vi, variance in enumerate(variances):
        for si, lam in enumerate(stepsizes):
            cell_seed = int(
                np.random.SeedSequence((int(seed), 4, vi, si)).generate_state(1)[0]
            )
            res = run_coupling_experiment(
                problem, w, saddle, optimizer.StepsizeSchedule.constant(lam),
                variance, runs, horizon, escape_radius, cell_seed,
            )
            vals = [it if it is not None else np.inf for it in res.iterations_to_escape]
            med = float(np.median(vals))
            rows.append(
                {
                    "variance": variance,
                    "stepsize": lam,
                    "escapes": res.escape_count,
                    "runs": runs,
                    "median_escape_iteration": None if np.isinf(med) else med,
                }
            )
    return rows
