"""Single-variable-sharing decentralized gradient descent with gradient noise.

Each iteration, agent j forms v_ij = w_ij (x_j - lambda_k (g_j + n_j)) and
sends it to its neighbors; agent i sums what it receives. Stacked over agents
this is

    x^{k+1} = (W kron I_d) (x^k - lambda_k (g^k + N^k)),

where N^k stacks the per-agent Gaussian noise used both for differential
privacy and for escaping non-minimum stationary points. Because W is doubly
stochastic the agent mean follows plain noisy gradient descent on the
aggregated objective, while disagreement contracts at the spectral gap eta.

Noise discipline: the master seed spawns one counter-based Philox substream
per agent, so the draw for agent j at iteration k depends only on
(seed, j, k) and runs are reproducible regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import WeightMatrix

SCHEDULE_KINDS = ("constant", "harmonic", "piecewise_paper")

_NOISE_STREAM = 1
_INIT_STREAM = 2


class InvalidConfig(ValueError):
    pass


class NonFiniteState(RuntimeError):
    """Iterates left the representable range; carries the failing iteration."""

    def __init__(self, iteration):
        super().__init__(f"non-finite state at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class StepsizeSchedule:
    """lambda_k sequences: constant, harmonic scale/k, or a constant phase
    followed by a scale/k tail (switching at switch_k)."""

    kind: str
    lambda0: float = 0.0
    switch_k: int = 0
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidConfig(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.lambda0 <= 0:
            raise InvalidConfig("constant schedule needs lambda0 > 0")
        if self.kind == "harmonic" and self.scale <= 0:
            raise InvalidConfig("harmonic schedule needs scale > 0")
        if self.kind == "piecewise_paper":
            if self.lambda0 <= 0 or self.scale <= 0 or self.switch_k < 1:
                raise InvalidConfig("piecewise schedule needs lambda0, scale > 0 and switch_k >= 1")
            if self.scale / (self.switch_k + 1) > self.lambda0:
                raise InvalidConfig(
                    "piecewise schedule would increase at the switch "
                    f"(scale/(switch_k+1) = {self.scale / (self.switch_k + 1):.3g} "
                    f"> lambda0 = {self.lambda0:.3g})"
                )

    @classmethod
    def constant(cls, lambda0):
        return cls(kind="constant", lambda0=lambda0)

    @classmethod
    def harmonic(cls, scale):
        return cls(kind="harmonic", scale=scale)

    @classmethod
    def piecewise_paper(cls, lambda0, switch_k, scale):
        return cls(kind="piecewise_paper", lambda0=lambda0, switch_k=switch_k, scale=scale)


def stepsize(schedule: StepsizeSchedule, k: int) -> float:
    """lambda_k for the step producing state k (iterations are 1-indexed;
    k = 0 is clamped to the first stepsize)."""
    if k < 0:
        raise InvalidConfig(f"iteration index must be >= 0, got {k}")
    k_eff = max(k, 1)
    if schedule.kind == "constant":
        return schedule.lambda0
    if schedule.kind == "harmonic":
        return schedule.scale / k_eff
    if k_eff <= schedule.switch_k:
        return schedule.lambda0
    return schedule.scale / k_eff


@dataclass(frozen=True)
class NoiseSpec:
    """Per-coordinate Gaussian variance of the gradient noise; 0 disables
    noise entirely (no RNG draws are consumed)."""

    variance: float
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise InvalidConfig(f"noise variance must be >= 0, got {self.variance}")


@dataclass
class AgentState:
    x: np.ndarray  # (m, d)
    k: int = 0


@dataclass
class TraceRecord:
    k: int
    lam: float
    consensus_error: float
    opt_error_mean: float
    opt_error_max: float
    noise_norm: float
    gn_norm: float
    x: np.ndarray | None = None
    mean_gn: np.ndarray | None = None


@dataclass
class RunTrace:
    records: list
    final_state: AgentState
    seed: int
    eta: float
    config_fingerprint: str = ""

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


@dataclass
class RunConfig:
    problem: object
    weights: WeightMatrix
    schedule: StepsizeSchedule
    noise_variance: float
    iterations: int
    seed: int
    init_mode: str = "random_box"  # random_box | explicit | at_saddle
    init_coords: np.ndarray | None = None
    record_every: int = 1
    record_state: bool = False
    fingerprint: str = ""

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidConfig(f"iterations must be >= 1, got {self.iterations}")
        if self.record_every < 1:
            raise InvalidConfig(f"record_every must be >= 1, got {self.record_every}")
        if self.init_mode not in ("random_box", "explicit", "at_saddle"):
            raise InvalidConfig(f"unknown init mode {self.init_mode!r}")
        if self.weights.m != self.problem.m:
            raise InvalidConfig(
                f"topology has {self.weights.m} agents but problem has {self.problem.m}"
            )
        if not (0 <= self.seed < 2**64):
            raise InvalidConfig("seed must be an unsigned 64-bit integer")


def noise_streams(seed, m):
    """One Philox substream per agent; draw j at iteration k is a pure
    function of (seed, j, k)."""
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), _NOISE_STREAM, j))))
        for j in range(m)
    ]


def init_rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), _INIT_STREAM))))


def _draw_noise(rngs, variance, m, d):
    if variance == 0.0:
        return np.zeros((m, d))
    sig = np.sqrt(variance)
    return np.stack([rngs[j].standard_normal(d) for j in range(m)]) * sig


def mixing_update(w_arr, x, gn, lam):
    """One stacked update W (x - lam * gn); gn is the (m, d) array g + N."""
    return w_arr @ (x - lam * gn)


def _advance(problem, w_arr, x, k_next, lam, variance, rngs):
    g = problem.agent_gradients(x)
    n = _draw_noise(rngs, variance, x.shape[0], x.shape[1])
    gn = g + n
    x_new = problem.retract(mixing_update(w_arr, x, gn, lam))
    if not np.isfinite(x_new).all():
        raise NonFiniteState(k_next)
    return x_new, n, gn


def step(state: AgentState, w: WeightMatrix, problem, schedule: StepsizeSchedule,
         noise: NoiseSpec, rngs=None) -> AgentState:
    """Advance one iteration. Pass the rngs returned by noise_streams to get
    the run-loop noise sequence; omitting them re-creates fresh streams, which
    reproduces iteration 1 only."""
    if rngs is None:
        rngs = noise_streams(noise.seed, w.m)
    k_next = state.k + 1
    lam = stepsize(schedule, k_next)
    x_new, _, _ = _advance(problem, w.w, state.x, k_next, lam, noise.variance, rngs)
    return AgentState(x=x_new, k=k_next)


def _uses_retraction(problem):
    from .problems.base import Problem

    return type(problem).retract is not Problem.retract


def polish_fixed_point(problem, w: WeightMatrix, lam: float, theta) -> np.ndarray:
    """Nudge theta (a refined stationary point) to a bitwise fixed point of the
    noise-free update, when one exists within +/-64 ULP per coordinate.

    Rationale: near a strict saddle the noise-free dynamics amplify any
    residual, including float rounding, at rate (1 + lambda |lambda_min|)^k, so
    "stays at the saddle" only holds numerically if the update map literally
    reproduces its input. With identical agents and an exactly-averaging W the
    fixed point exists within a few ULP of the Newton root; on heterogeneous
    topologies the agents move structurally (per-agent gradients differ at a
    stationary point of the mean) and theta is returned unchanged.
    """
    theta = np.asarray(theta, dtype=float)
    if _uses_retraction(problem) or problem.d > 3:
        return theta
    m, d = problem.m, problem.d

    def drift(th):
        x = np.tile(th, (m, 1))
        g = problem.agent_gradients(x)
        return mixing_update(w.w, x, g + np.zeros((m, d)), lam) - x

    center_drift = drift(theta)
    if not center_drift.any():
        return theta
    if np.abs(center_drift).max() > 1e-8:
        return theta  # structural motion; no bitwise fixed point exists
    ulp = np.spacing(np.abs(theta))
    offsets = np.arange(-64, 65)
    grids = np.meshgrid(*([offsets] * d), indexing="ij")
    cand = np.stack([g_.ravel() for g_ in grids], axis=1)
    order = np.argsort((cand.astype(float) ** 2).sum(axis=1), kind="stable")
    for idx in order:
        th = theta + cand[idx] * ulp
        if not drift(th).any():
            return th
    return theta


def resolve_at_saddle_init(problem, w: WeightMatrix, schedule: StepsizeSchedule) -> np.ndarray:
    """Initial point for at_saddle runs: the problem's refined saddle, polished
    to a numerical fixed point of this run's first-step update when possible."""
    return polish_fixed_point(problem, w, stepsize(schedule, 1), problem.known_saddle())


def _initial_state(config: RunConfig) -> np.ndarray:
    p = config.problem
    if config.init_mode == "explicit":
        if config.init_coords is None:
            raise InvalidConfig("explicit init requires coordinates")
        coords = np.asarray(config.init_coords, dtype=float)
        if coords.shape == (p.d,):
            coords = np.tile(coords, (p.m, 1))
        if coords.shape != (p.m, p.d):
            raise InvalidConfig(f"init coords must have shape ({p.m}, {p.d}) or ({p.d},)")
        return coords.copy()
    if config.init_mode == "at_saddle":
        theta = resolve_at_saddle_init(p, config.weights, config.schedule)
        return np.tile(theta, (p.m, 1))
    return p.sample_init(init_rng(config.seed))


def _record(problem, x, k, lam, noise_norm, gn_norm, keep_state, mean_gn):
    errs = problem.optimization_errors(x)
    return TraceRecord(
        k=k,
        lam=lam,
        consensus_error=float(np.linalg.norm(x - x.mean(axis=0))),
        opt_error_mean=float(errs.mean()),
        opt_error_max=float(errs.max()),
        noise_norm=noise_norm,
        gn_norm=gn_norm,
        x=x.copy() if keep_state else None,
        mean_gn=mean_gn,
    )


def run(config: RunConfig) -> RunTrace:
    """Execute the private algorithm, recording rows at k = 0, every
    record_every iterations, and the final step."""
    p = config.problem
    w_arr = config.weights.w
    x = _initial_state(config)
    rngs = noise_streams(config.seed, p.m)
    records = [
        _record(p, x, 0, stepsize(config.schedule, 1), 0.0, 0.0, config.record_state, None)
    ]
    for k in range(1, config.iterations + 1):
        lam = stepsize(config.schedule, k)
        x, n, gn = _advance(p, w_arr, x, k, lam, config.noise_variance, rngs)
        if k % config.record_every == 0 or k == config.iterations:
            records.append(
                _record(
                    p, x, k, lam,
                    float(np.linalg.norm(n)), float(np.linalg.norm(gn)),
                    config.record_state,
                    gn.mean(axis=0) if config.record_state else None,
                )
            )
    return RunTrace(
        records=records,
        final_state=AgentState(x=x, k=config.iterations),
        seed=config.seed,
        eta=config.weights.eta,
        config_fingerprint=config.fingerprint,
    )


def run_conventional_dgd(config: RunConfig) -> RunTrace:
    """Baseline x^{k+1} = W x^k - lambda_k (g^k + N^k): mixes states instead of
    state-minus-gradient messages. Kept for comparison traces only."""
    p = config.problem
    w_arr = config.weights.w
    x = _initial_state(config)
    rngs = noise_streams(config.seed, p.m)
    records = [
        _record(p, x, 0, stepsize(config.schedule, 1), 0.0, 0.0, config.record_state, None)
    ]
    for k in range(1, config.iterations + 1):
        lam = stepsize(config.schedule, k)
        g = p.agent_gradients(x)
        n = _draw_noise(rngs, config.noise_variance, p.m, p.d)
        gn = g + n
        x = p.retract(w_arr @ x - lam * gn)
        if not np.isfinite(x).all():
            raise NonFiniteState(k)
        if k % config.record_every == 0 or k == config.iterations:
            records.append(
                _record(
                    p, x, k, lam,
                    float(np.linalg.norm(n)), float(np.linalg.norm(gn)),
                    config.record_state,
                    gn.mean(axis=0) if config.record_state else None,
                )
            )
    return RunTrace(
        records=records,
        final_state=AgentState(x=x, k=config.iterations),
        seed=config.seed,
        eta=config.weights.eta,
        config_fingerprint=config.fingerprint,
    )
