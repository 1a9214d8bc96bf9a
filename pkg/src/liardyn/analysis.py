"""Closed-form oracles for the controlled dynamics: convergence half-lives,
regularisation bounds, the oscillation threshold, the bounded-confidence
consensus guarantee, kinetic moment laws and stationary densities.

These are the analytic counterparts checked against simulation by the test
suite; they are deliberately independent of the simulation code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import (
    DEFAULT_INTERVAL,
    HardBoundedKernel,
    InvalidSpeedupError,
    TrivialReachError,
)


@dataclass(frozen=True)
class TwoParticleParams:
    """Reduced system of one aggregated truth-teller facing the deceiver."""

    dt: float
    n_agents: int
    reg_weight: float
    x0: float = 1.0
    goal: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_agents < 2:
            raise ValueError("need at least two agents")
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")


@dataclass(frozen=True)
class KineticParams:
    """Parameters of the binary-interaction / quasi-invariant descriptions.

    ``alpha`` is the binary interaction weight (dt/2 by convention),
    ``p_const`` the constant kernel value, ``reg_weight`` the raw (nu) or
    rescaled (kappa) regularisation weight depending on the formula,
    ``volume`` the deceiver's relative mass and ``liar_rate``/``c_l``/``c_t``
    the interaction rate constants.  ``zeta`` is the rescaled noise variance.
    """

    alpha: float = 0.05
    p_const: float = 1.0
    reg_weight: float = 1.0
    volume: float = 0.5
    liar_rate: float = 1.0
    c_l: float = 1.0
    c_t: float = 1.0
    zeta: float = 0.1
    goal: float = 0.0


def half_life(params: TwoParticleParams, truthful_only: bool = False) -> float:
    """Time for the aggregated truth-teller to halve its distance to the goal.

    With ``truthful_only`` the deceiver presents its true opinion (the
    infinite-regularisation limit) and the decay comes from ordinary
    interaction alone.
    """
    dt, n = params.dt, params.n_agents
    if not dt / n < 1:
        raise ValueError("requires dt/N < 1")
    shrink = math.log1p(-dt / n)
    if truthful_only:
        return -dt * math.log(2.0) / shrink
    gain = math.log1p(dt**2 / (params.reg_weight * n**2))
    return -dt * math.log(2.0) / (shrink - gain)


def simulate_half_life_steps(params: TwoParticleParams, truthful_only: bool = False) -> int:
    """Step count until |x - goal| first drops below half its initial value.

    Iterates the reduced two-particle dynamics with the per-step implicit
    control solve; independent of the closed form in ``half_life``.
    """
    dt, n, nu = params.dt, params.n_agents, params.reg_weight
    beta = dt / n
    e = params.x0 - params.goal
    target = abs(e) / 2.0
    steps = 0
    while abs(e) >= target:
        if truthful_only:
            # lie equals the truth: e' = e + beta*(0 - e)
            e = e * (1.0 - beta)
        else:
            # y - goal = -(dt/(nu N)) (e'), e' = e + beta*((y-goal) - e)
            e = e * (1.0 - beta) / (1.0 + beta * dt / (nu * n))
        steps += 1
        if steps > 10_000_000:
            raise RuntimeError("half-life iteration did not terminate")
    return steps


def nu_for_speedup(dt: float, n_agents: int, k: float) -> float:
    """Largest regularisation weight that shrinks the half-life k-fold."""
    if k <= 1:
        raise InvalidSpeedupError("speedup factor must exceed 1")
    base = 1.0 - dt / n_agents
    return (dt**2 / n_agents**2) / (base ** (1.0 - k) - 1.0)


def oscillation_threshold(dt: float, n_agents: int) -> float:
    """Regularisation weight below which time-consistent lies oscillate."""
    if not dt / n_agents < 1:
        raise ValueError("requires dt/N < 1")
    return 4.0 * dt**2 * (1.0 - dt / n_agents)


def simulate_two_particle_time_consistent(
    dt: float,
    n_agents: int,
    reg_weight: float,
    x0: float,
    y0: float,
    goal: float = 0.0,
    steps: int = 10_000,
):
    """Iterate the unconstrained time-consistent reduced dynamics.

    Returns the (x, y) sequences including the initial values.  Each step
    solves the implicit pair
        x' = x + (dt/N)(y - x),   y = y_prev - (dt^3/(nu N))(x' - goal)
    exactly (it is linear).
    """
    beta = dt / n_agents
    c = dt**3 / (reg_weight * n_agents)
    xs = np.empty(steps + 1)
    ys = np.empty(steps + 1)
    xs[0], ys[0] = x0, y0
    x, y_prev = x0, y0
    for n in range(1, steps + 1):
        x_new = ((1.0 - beta) * x + beta * (y_prev + c * goal)) / (1.0 + beta * c)
        y = y_prev - c * (x_new - goal)
        xs[n], ys[n] = x_new, y
        x, y_prev = x_new, y
    return xs, ys


def count_sign_changes(values, reference: float = 0.0, skip: int = 0) -> int:
    """Number of strict sign flips of (values - reference) after ``skip``."""
    signs = np.sign(np.asarray(values, dtype=float)[skip:] - reference)
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0
    return int(np.count_nonzero(np.diff(signs) != 0))


def prop1_nu_bound(alpha: float, goal: float) -> float:
    """Regularisation weight keeping every unprojected binary lie admissible.

    Returns +inf for |goal| = 1, where only the truth is admissible.
    """
    a = abs(goal)
    if a > 1:
        raise ValueError("goal must lie in [-1, 1]")
    if a == 1.0:
        return math.inf
    return alpha * (1.0 + a) / (1.0 - a)


def binary_lie_unprojected(x, alpha: float, reg_weight: float, goal: float, p):
    """Closed-form unprojected lie told during a binary encounter.

    ``p`` is the kernel weight P(x) evaluated at the truth-teller's opinion;
    scalar or array.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    nu = reg_weight
    return ((nu + alpha * p) * goal - alpha * p * (1.0 - alpha * p) * x) / (nu + alpha**2 * p**2)


def nu_tilde(x0, radius: float, dt: float, n_agents: int, goal: float) -> float:
    """Regularisation threshold guaranteeing the deceiver reaches every agent.

    Below the returned weight, lying onto the edge of the most extreme
    agent's confidence band is always worth its cost at time zero, which
    guarantees consensus at the goal under the bounded-confidence control.
    Raises TrivialReachError when the deceiver already reaches everyone.
    """
    x0 = np.asarray(x0, dtype=float)
    if not dt < 2.0 * n_agents / (2.0 * n_agents + 1.0):
        raise ValueError("requires dt < 2N/(2N+1)")
    k = int(np.argmax(np.abs(x0 - goal)))
    e = x0[k] - goal
    if abs(e) <= radius:
        raise TrivialReachError("most extreme agent already inside the confidence band")
    kernel = HardBoundedKernel(radius)
    a_k = float(np.sum(kernel.weight(x0[k], x0) * (x0 - x0[k])))
    beta = dt / n_agents
    num = radius * abs(e) - beta * radius * (0.5 * radius - math.copysign(1.0, e) * a_k)
    return beta * num / (radius - abs(e)) ** 2


def mean_const_p(t, m0: float, params: KineticParams):
    """Mean truth-teller opinion under a constant kernel at time t."""
    p = params.p_const
    if p <= 0:
        raise ValueError("requires a positive constant kernel")
    nu, a = params.reg_weight, params.alpha
    rate = params.volume * params.liar_rate * (nu * a * p + a**2 * p**2) / (nu + a**2 * p**2)
    return (m0 - params.goal) * np.exp(-rate * np.asarray(t, dtype=float)) + params.goal


def quasi_mean_rate(params: KineticParams) -> float:
    """Exponential decay rate of the mean in the quasi-invariant limit."""
    kappa, p = params.reg_weight, params.p_const
    if kappa <= 0:
        raise ValueError("rescaled regularisation weight must be positive")
    return params.volume / params.c_l * (kappa * p + p**2) / kappa


def _log_ratio_power(x, exponent):
    # ((1+x)/(1-x))^exponent computed in log space for stability near +-1
    return np.exp(exponent * (np.log1p(x) - np.log1p(-x)))


def steady_state_const_p(x, params: KineticParams):
    """Unnormalised stationary density for a constant kernel, D = 1 - x^2.

    Zero outside the open interval by convention.  Pass reg_weight=inf for
    the truthful limit.
    """
    x = np.asarray(x, dtype=float)
    p, zeta = params.p_const, params.zeta
    kappa = params.reg_weight
    if math.isinf(kappa):
        a_exp = p / zeta
    else:
        a_exp = p / zeta + p**2 / (kappa * zeta) * (
            params.volume / (params.c_l / params.c_t + params.volume)
        )
    inside = np.abs(x) < 1.0
    xs = np.where(inside, x, 0.0)
    one_m = 1.0 - xs**2
    val = (
        one_m**-2
        * _log_ratio_power(xs, a_exp * params.goal / 2.0)
        * np.exp(-a_exp * (1.0 - params.goal * xs) / one_m)
    )
    return np.where(inside, val, 0.0)


def steady_state_quad_p(x, params: KineticParams):
    """Unnormalised stationary density for P(x) = D(x) = 1 - x^2.

    Pass reg_weight=inf for the limit free of the rate constants.  The
    deceiver exponent carries the relative volume; integrating the
    stationary flux balance directly confirms this factor, and the density
    solver reproduces the resulting profile to discretisation error at a
    symmetric goal.  Away from a symmetric goal no closed form exists
    because ordinary interactions with this kernel shift the stationary
    mean off the goal.
    """
    x = np.asarray(x, dtype=float)
    zeta = params.zeta
    inside = np.abs(x) < 1.0
    xs = np.where(inside, x, 0.0)
    one_m = 1.0 - xs**2
    val = one_m ** (1.0 / zeta - 2.0) * _log_ratio_power(xs, params.goal / zeta)
    kappa = params.reg_weight
    if not math.isinf(kappa):
        b = 1.0 / params.c_t + params.volume / params.c_l
        val = val * np.exp(
            -(xs**2 - 2.0 * params.goal * xs)
            * params.volume / (b * params.c_l * kappa * zeta)
        )
    return np.where(inside, val, 0.0)


_QUAD_CUTOFF = 1e-12


def density_normaliser(density, params: KineticParams, tol: float = 1e-10) -> float:
    """Normalising constant so the given stationary family integrates to 1."""
    total, _ = integrate.quad(
        lambda s: density(s, params),
        DEFAULT_INTERVAL.lo + _QUAD_CUTOFF,
        DEFAULT_INTERVAL.hi - _QUAD_CUTOFF,
        epsabs=tol,
        limit=200,
    )
    return 1.0 / total


def normalised_steady_state(density, x, params: KineticParams):
    """Evaluate a stationary family normalised to unit mass."""
    return density_normaliser(density, params) * density(x, params)


def variance_decay_condition(params: KineticParams) -> bool:
    """Sufficient condition for the long-time second moment to contract."""
    a, p = params.alpha, params.p_const
    nu = params.reg_weight
    gamma = (nu + a * p) / (nu + a**2 * p**2)
    return a * p <= 1.0 and a * p * gamma <= 2.0


def multi_liar_mean_limit(liars) -> float:
    """Long-time mean under several deceivers with equal regularisation.

    ``liars`` is a sequence of (volume, rate, goal) triples; the limit is the
    rate-and-volume weighted average of the goals.
    """
    liars = list(liars)
    if not liars:
        raise ValueError("need at least one deceiver")
    weights = np.array([rho * eta for rho, eta, _ in liars], dtype=float)
    goals = np.array([g for _, _, g in liars], dtype=float)
    return float(np.sum(weights * goals) / np.sum(weights))
