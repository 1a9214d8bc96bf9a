"""Binary-interaction Monte Carlo for the large-population description.

Each step every truth-teller meets either a random peer or the deceiver and
applies the corresponding collision rule with bounded noise; updates read
the frozen pre-step ensemble.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BoundViolationError,
    ConstantKernel,
    DEFAULT_INTERVAL,
    OpinionInterval,
    QuadraticDiffusion,
    SelfDependentKernel,
    ZeroDiffusion,
    eval_kernel,
)


@dataclass(frozen=True)
class NoiseBounds:
    """Admissible noise intervals for peer and deceiver collisions."""

    tt_lo: float
    tt_hi: float
    tl_lo: float
    tl_hi: float

    def __post_init__(self):
        if not (self.tt_lo <= 0.0 <= self.tt_hi and self.tl_lo <= 0.0 <= self.tl_hi):
            raise ValueError("noise bounds must contain zero")


def _diffusion_extremes(diffusion):
    """d+- = +-min over x of (1 -+ x)/D(x) restricted to D(x) != 0."""
    if isinstance(diffusion, ZeroDiffusion):
        return -math.inf, math.inf
    if isinstance(diffusion, QuadraticDiffusion):
        # (1-x)/(1-x^2) = 1/(1+x) with infimum 1/2 on the interval
        return -0.5, 0.5
    xs = np.linspace(DEFAULT_INTERVAL.lo, DEFAULT_INTERVAL.hi, 1_000_001)
    d = diffusion(xs)
    mask = d != 0.0
    d_plus = float(np.min((1.0 - xs[mask]) / d[mask]))
    d_minus = -float(np.min((1.0 + xs[mask]) / d[mask]))
    return d_minus, d_plus


def noise_bounds(diffusion, alpha: float, reg_weight: float) -> NoiseBounds:
    """Noise box that keeps both collision rules inside the interval."""
    if not alpha < 1.0:
        raise ValueError("requires alpha < 1")
    d_minus, d_plus = _diffusion_extremes(diffusion)
    tt = 1.0 - alpha
    tl = 1.0 - alpha * (reg_weight + alpha) / (reg_weight + alpha**2)
    return NoiseBounds(tt * d_minus, tt * d_plus, tl * d_minus, tl * d_plus)


def _check_bounds(value, interval: OpinionInterval, what: str):
    lo = np.min(value)
    hi = np.max(value)
    if lo < interval.lo or hi > interval.hi:
        raise BoundViolationError(f"{what} left the interval: range [{lo:.6g}, {hi:.6g}]")


def tt_interaction(x, x_other, alpha: float, kernel, theta1, theta2, diffusion):
    """Collision of two truth-tellers; returns both post-interaction opinions."""
    x = np.asarray(x, dtype=float)
    x_other = np.asarray(x_other, dtype=float)
    x_star = x + alpha * eval_kernel(kernel, x, x_other) * (x_other - x) + theta1 * diffusion(x)
    x_other_star = (
        x_other
        + alpha * eval_kernel(kernel, x_other, x) * (x - x_other)
        + theta2 * diffusion(x_other)
    )
    _check_bounds(x_star, DEFAULT_INTERVAL, "truth-teller opinion")
    _check_bounds(x_other_star, DEFAULT_INTERVAL, "truth-teller opinion")
    return x_star, x_other_star


def liar_gain(p, alpha: float, reg_weight: float):
    """Contraction factor gamma = (nu + alpha P)/(nu + alpha^2 P^2)."""
    return (reg_weight + alpha * p) / (reg_weight + alpha**2 * p**2)


def tl_interaction(x, alpha: float, reg_weight: float, goal: float, kernel, theta, diffusion):
    """Collision of a truth-teller with the deceiver.

    Valid for kernels that only depend on the truth-teller's opinion; the
    implicit lie is then available in closed form.
    """
    if not isinstance(kernel, (ConstantKernel, SelfDependentKernel)):
        raise ValueError("deceiver collisions need a kernel independent of the presented opinion")
    x = np.asarray(x, dtype=float)
    p = eval_kernel(kernel, x, x)
    x_star = x + alpha * p * liar_gain(p, alpha, reg_weight) * (goal - x) + theta * diffusion(x)
    _check_bounds(x_star, DEFAULT_INTERVAL, "truth-teller opinion")
    return x_star


def sample_noise(rng, sigma2: float, bounds, size=None):
    """Zero-mean uniform noise with variance at most sigma2, inside bounds.

    The half-width is min(hi, -lo, sqrt(3 sigma2)); when the admissible box
    is tighter than the requested variance the variance shrinks accordingly.
    """
    lo, hi = bounds
    if not lo <= 0.0 <= hi:
        raise ValueError("noise bounds must contain zero")
    w = min(hi, -lo, math.sqrt(3.0 * sigma2))
    if w <= 0.0:
        return 0.0 if size is None else np.zeros(size)
    return rng.uniform(-w, w, size=size)


@dataclass
class McConfig:
    """Inputs of a binary-interaction run.

    ``liar_prob`` defaults to 1/N (the population-size based scheduling); a
    rate-weighted override is exposed because the mapping between per-step
    probabilities and the kinetic rate constants is a modelling choice.
    """

    n_samples: int
    alpha: float
    reg_weight: float
    goal: float
    kernel: object = field(default_factory=lambda: ConstantKernel(1.0))
    diffusion: object = field(default_factory=ZeroDiffusion)
    sigma2: float = 0.0
    dt: float = 0.1
    steps: int = 100
    seed: int = 0
    n_agents: int | None = None
    liar_prob: float | None = None
    x0: np.ndarray | None = None
    interval: OpinionInterval = field(default_factory=OpinionInterval)

    def resolved_liar_prob(self) -> float:
        if self.liar_prob is not None:
            return self.liar_prob
        n = self.n_agents if self.n_agents is not None else self.n_samples + 1
        return 1.0 / n


@dataclass
class McResult:
    times: np.ndarray
    means: np.ndarray
    second_moments: np.ndarray
    final_samples: np.ndarray


def mc_run(config: McConfig) -> McResult:
    """Run the per-agent Bernoulli collision scheme and track moments.

    Every sample independently either meets a random other truth-teller
    (probability 1 - liar_prob) or the deceiver; partner opinions are read
    from the frozen pre-step ensemble.
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    if config.x0 is not None:
        x = np.asarray(config.x0, dtype=float).copy()
    else:
        x = rng.uniform(config.interval.lo, config.interval.hi, config.n_samples)
    n = x.size
    p_liar = config.resolved_liar_prob()
    bounds = noise_bounds(config.diffusion, config.alpha, config.reg_weight)
    means = np.empty(config.steps + 1)
    seconds = np.empty(config.steps + 1)
    means[0] = np.mean(x)
    seconds[0] = np.mean(x**2)
    for step in range(1, config.steps + 1):
        meets_liar = rng.uniform(size=n) < p_liar
        partners = rng.integers(0, n - 1, size=n)
        partners = partners + (partners >= np.arange(n))  # exclude self
        theta_tt = sample_noise(rng, config.sigma2, (bounds.tt_lo, bounds.tt_hi), size=n)
        theta_tl = sample_noise(rng, config.sigma2, (bounds.tl_lo, bounds.tl_hi), size=n)
        x_prev = x
        peer = x_prev + config.alpha * eval_kernel(config.kernel, x_prev, x_prev[partners]) * (
            x_prev[partners] - x_prev
        ) + np.asarray(theta_tt) * config.diffusion(x_prev)
        p = eval_kernel(config.kernel, x_prev, x_prev)
        gamma = liar_gain(p, config.alpha, config.reg_weight)
        liar = x_prev + config.alpha * p * gamma * (config.goal - x_prev) + np.asarray(
            theta_tl
        ) * config.diffusion(x_prev)
        x = np.where(meets_liar, liar, peer)
        _check_bounds(x, config.interval, "ensemble")
        means[step] = np.mean(x)
        seconds[step] = np.mean(x**2)
    times = config.dt * np.arange(config.steps + 1)
    return McResult(times, means, seconds, x)


def effective_liar_rate(config: McConfig) -> float:
    """Continuous rate rho*eta_L whose mean law the discrete scheme matches.

    Defined through exact exponential matching of the per-step mean
    contraction, so the closed-form mean applies at the step times without
    time-discretisation bias.  Only meaningful for constant kernels.
    """
    if not isinstance(config.kernel, ConstantKernel):
        raise ValueError("rate matching requires a constant kernel")
    p = config.kernel.p
    contraction = (
        config.resolved_liar_prob()
        * config.alpha
        * p
        * liar_gain(p, config.alpha, config.reg_weight)
    )
    big_gamma = (
        config.alpha * p * (config.reg_weight + config.alpha * p)
        / (config.reg_weight + config.alpha**2 * p**2)
    )
    return -math.log1p(-contraction) / (big_gamma * config.dt)


def export_moments_csv(result: McResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mean", "second_moment"])
        for t, m, v in zip(result.times, result.means, result.second_moments):
            writer.writerow([f"{t:.17g}", f"{m:.17g}", f"{v:.17g}"])


def ensemble_histogram(samples, bins: int = 200, interval: OpinionInterval = DEFAULT_INTERVAL):
    """Fixed-grid density histogram of an ensemble (unit mass)."""
    hist, edges = np.histogram(samples, bins=bins, range=(interval.lo, interval.hi), density=True)
    return hist, edges
