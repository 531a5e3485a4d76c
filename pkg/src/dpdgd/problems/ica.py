"""Independent component analysis as a fourth-moment contrast problem.

Observations are y = A z with A orthonormal and z a vector of independent
Rademacher entries (fourth moment 1 < 3, i.e. sub-Gaussian), so recovering a
column of A amounts to

    min_{||u|| = 1}  E[(u^T y)^4]

over the sphere. Minimizers are +/- columns of A; the points A v with
v = d^{-1/2}(+/-1, ..., +/-1) are stationary with negative tangent curvature,
which is what the noise-driven escape experiments start from. The unit-norm
constraint is handled by projecting gradients onto the tangent space and
renormalizing after every mixing step.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize

from .base import KnownPoint, NotUnitNorm, Problem, ProblemConstants

UNIT_NORM_TOL = 1e-8


class IcaProblem(Problem):
    name = "ica"

    def __init__(self, mixing, samples, sign_factor=1.0):
        self.A = np.array(mixing, dtype=float)
        self.samples = np.array(samples, dtype=float)  # (m, n, d)
        if self.samples.ndim != 3 or self.samples.shape[2] != self.A.shape[0]:
            raise ValueError("samples must be (agents, per-agent count, d)")
        self.d = self.A.shape[0]
        self.m = self.samples.shape[0]
        self.n_per_agent = self.samples.shape[1]
        self.sign_factor = float(sign_factor)
        ortho_err = np.abs(self.A.T @ self.A - np.eye(self.d)).max()
        if ortho_err > 1e-10:
            raise ValueError(f"mixing matrix not orthonormal (error {ortho_err:.2e})")
        self.constants = self._estimate_constants()
        self._refined_saddle = None
        self.known_points = (
            KnownPoint(coords=tuple(self.nominal_saddle()), kind="strict_saddle"),
        )

    def _estimate_constants(self):
        rng = np.random.default_rng(0x1CA)
        us = rng.standard_normal((64, self.d))
        us /= np.linalg.norm(us, axis=1, keepdims=True)
        flat = self.samples.reshape(-1, self.d)
        nu = 0.0
        gmax = 0.0
        for u in us:
            proj = flat @ u
            # euclidean Hessian 12 * mean (u^T y)^2 y y^T; spectral norm bound
            h = 12.0 * (flat * (proj**2)[:, None]).T @ flat / flat.shape[0]
            nu = max(nu, float(np.abs(np.linalg.eigvalsh(h)).max()))
            g = 4.0 * (proj**3) @ flat / flat.shape[0]
            gmax = max(gmax, float(np.linalg.norm(g)))
        # crude Hessian-Lipschitz estimate by secants between sampled sphere points
        rho = 0.0
        for a, b in zip(us[:-1], us[1:]):
            pa, pb = flat @ a, flat @ b
            ha = 12.0 * (flat * (pa**2)[:, None]).T @ flat / flat.shape[0]
            hb = 12.0 * (flat * (pb**2)[:, None]).T @ flat / flat.shape[0]
            rho = max(rho, float(np.abs(np.linalg.eigvalsh(ha - hb)).max() / np.linalg.norm(a - b)))
        # 5% headroom over the sphere sample, same caveat as the other problems
        return ProblemConstants(
            nu=1.05 * nu, rho=max(1.05 * rho, 1e-12), G=1.05 * gmax,
            n_i=tuple([self.n_per_agent] * self.m),
        )

    # -- objective / gradients -----------------------------------------------

    def agent_objective(self, agent, u):
        self._check_agent(agent)
        u = self._check_theta(u)
        proj = self.samples[agent] @ u
        sq = proj * proj  # explicit squaring keeps f(u) == f(-u) bitwise
        return float(self.sign_factor * np.mean(sq * sq))

    def _euclidean_gradient(self, agent, u):
        ys = self.samples[agent]
        proj = ys @ u
        return self.sign_factor * 4.0 * (proj * proj * proj) @ ys / ys.shape[0]

    def agent_gradient(self, agent, u):
        """Tangent-space projection of the sample-average gradient."""
        self._check_agent(agent)
        u = self._check_theta(u)
        g = self._euclidean_gradient(agent, u)
        return g - (u @ g) * u

    def agent_gradients(self, x):
        x = self._check_state(x)
        proj = np.einsum("mnd,md->mn", self.samples, x)
        g = self.sign_factor * 4.0 * np.einsum("mn,mnd->md", proj * proj * proj, self.samples)
        g /= self.n_per_agent
        radial = np.einsum("md,md->m", x, g)
        return g - radial[:, None] * x

    def aggregated_euclidean_gradient(self, u):
        u = self._check_theta(u)
        flat = self.samples.reshape(-1, self.d)
        proj = flat @ u
        return self.sign_factor * 4.0 * (proj * proj * proj) @ flat / flat.shape[0]

    # -- optimizer hooks ----------------------------------------------------------

    def retract(self, x):
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def sample_init(self, rng):
        x = rng.standard_normal((self.m, self.d))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def nominal_saddle(self):
        """A v with v = d^{-1/2}(1, ..., 1): stationary for the population
        objective, close to (but not exactly) stationary for the sampled one."""
        return self.A @ (np.ones(self.d) / np.sqrt(self.d))

    def known_saddle(self):
        """Stationary point of the *sampled* objective nearest the nominal
        saddle, found by root-finding on the Lagrangian system."""
        if self._refined_saddle is None:
            u0 = self.nominal_saddle()
            lam0 = float(u0 @ self.aggregated_euclidean_gradient(u0))

            def system(w):
                u, lam = w[: self.d], w[self.d]
                g = self.aggregated_euclidean_gradient(u)
                return np.concatenate([g - lam * u, [u @ u - 1.0]])

            sol = optimize.fsolve(system, np.concatenate([u0, [lam0]]), xtol=1e-13)
            u = sol[: self.d] / np.linalg.norm(sol[: self.d])
            resid = np.linalg.norm(self.aggregated_gradient(u))
            if resid > 1e-10:
                raise RuntimeError(f"saddle refinement did not converge (residual {resid:.2e})")
            self._refined_saddle = u
        return self._refined_saddle.copy()

    # -- metrics ---------------------------------------------------------------------

    def reconstruction_error(self, u):
        """min over columns a_j of A and signs of ||u -+ a_j||."""
        u = self._check_theta(u)
        nu_ = np.linalg.norm(u)
        if abs(nu_ - 1.0) > UNIT_NORM_TOL:
            raise NotUnitNorm(f"||u|| = {nu_:.10f} is not 1 within {UNIT_NORM_TOL:.0e}")
        dminus = np.linalg.norm(u[:, None] - self.A, axis=0)
        dplus = np.linalg.norm(u[:, None] + self.A, axis=0)
        return float(min(dminus.min(), dplus.min()))

    def optimization_errors(self, x):
        x = self._check_state(x)
        return np.array([self.reconstruction_error(row) for row in x])


def make_ica_problem(d, m, samples_per_agent, seed) -> IcaProblem:
    """Random instance: Haar-ish orthonormal A (QR with R-diagonal sign fix),
    Rademacher sources Z, observations Y = A Z split evenly across agents.

    Rademacher entries have fourth moment 1, so -sign(mu - 3) = +1 and the
    contrast is minimized (not maximized).
    """
    if d < 2 or m < 1 or samples_per_agent < 1:
        raise ValueError("need d >= 2, m >= 1, samples_per_agent >= 1")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    a = q * signs[None, :]
    z = rng.choice(np.array([-1.0, 1.0]), size=(m, samples_per_agent, d))
    y = z @ a.T
    p = IcaProblem(mixing=a, samples=y, sign_factor=1.0)
    p.Z = z
    return p
