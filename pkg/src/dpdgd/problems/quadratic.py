"""Diagonal quadratic test problem with known closed-form structure.

Used as an oracle: with positive curvatures the minimum is the mean of the
per-agent offsets; with mixed signs the origin is a strict saddle. Keeps the
optimizer and analysis test surfaces independent of the benchmark problems.
"""

from __future__ import annotations

import numpy as np

from .base import KnownPoint, Problem, ProblemConstants


class QuadraticProblem(Problem):
    name = "custom_quadratic"

    def __init__(self, diag, m=1, offsets=None, init_half_width=3.0):
        self.c = np.array(diag, dtype=float)
        self.d = self.c.size
        self.m = int(m)
        if offsets is None:
            offsets = np.zeros((self.m, self.d))
        self.offsets = np.array(offsets, dtype=float)
        if self.offsets.shape != (self.m, self.d):
            raise ValueError(f"offsets must have shape ({self.m}, {self.d})")
        self.init_half_width = float(init_half_width)
        reach = self.init_half_width + np.abs(self.offsets).max(initial=0.0)
        self.constants = ProblemConstants(
            nu=2.0 * float(np.abs(self.c).max()),
            rho=1e-12,  # exactly quadratic; constant kept positive for the interface
            G=2.0 * float(np.abs(self.c).max()) * reach * np.sqrt(self.d),
            n_i=tuple([1] * self.m),
        )
        if (self.c > 0).any() and (self.c < 0).any() and not self.offsets.any():
            self.known_points = (KnownPoint(coords=tuple(np.zeros(self.d)), kind="strict_saddle"),)

    def agent_objective(self, agent, theta):
        self._check_agent(agent)
        theta = self._check_theta(theta)
        return float(self.c @ (theta - self.offsets[agent]) ** 2)

    def agent_gradient(self, agent, theta):
        self._check_agent(agent)
        theta = self._check_theta(theta)
        return 2.0 * self.c * (theta - self.offsets[agent])

    def agent_gradients(self, x):
        x = self._check_state(x)
        return 2.0 * self.c[None, :] * (x - self.offsets)

    def aggregated_hessian(self, theta):
        self._check_theta(theta)
        return 2.0 * np.diag(self.c)

    def sample_init(self, rng):
        w = self.init_half_width
        return rng.uniform(-w, w, size=(self.m, self.d))

    def known_saddle(self):
        if not ((self.c > 0).any() and (self.c < 0).any()) or self.offsets.any():
            return super().known_saddle()
        return np.zeros(self.d)

    def reference_minimum(self):
        if (self.c > 0).all():
            return self.offsets.mean(axis=0)
        return None
