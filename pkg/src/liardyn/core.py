"""Shared domain types: opinion interval, interaction kernels, diffusion
coefficients and the uncontrolled consensus drift.

All types are immutable value objects and all operations are pure, so
everything here is safe to share between threads or processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LiardynError(Exception):
    """Base class for errors raised by this package."""


class NotDifferentiableError(LiardynError):
    """The requested derivative does not exist for this kernel."""


class FixedPointDivergedError(LiardynError):
    """An implicit control equation failed to converge."""


class StateEscapedIntervalError(LiardynError):
    """An opinion left the admissible interval by more than roundoff."""


class BoundViolationError(LiardynError):
    """A binary interaction produced an opinion outside the interval."""


class StabilityViolationError(LiardynError):
    """The explicit finite-volume step produced significant negative mass."""


class TrivialReachError(LiardynError):
    """The deceiver already reaches every agent's confidence band."""


class InvalidSpeedupError(LiardynError):
    """Speedup factors below 1 do not define a regularisation bound."""


@dataclass(frozen=True)
class OpinionInterval:
    """Closed interval of admissible opinions."""

    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


DEFAULT_INTERVAL = OpinionInterval(-1.0, 1.0)


def project_interval(v, interval: OpinionInterval = DEFAULT_INTERVAL):
    """Clamp a value (or array) onto the opinion interval."""
    return np.clip(v, interval.lo, interval.hi)


@dataclass
class OpinionState:
    """Opinions of the truth-telling agents plus the deceiver's goal.

    ``x`` has length N-1 where N counts all agents including the deceiver,
    whose own (fixed) opinion is ``goal``.
    """

    x: np.ndarray
    goal: float
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)

    @property
    def n_agents(self) -> int:
        """Total population size N, deceiver included."""
        return self.x.size + 1


# --- smoothstep blends for the smoothed bounded-confidence kernel ---------

def _quintic(t):
    return 1.0 - 10.0 * t**3 + 15.0 * t**4 - 6.0 * t**5


def _quintic_d1(t):
    return -30.0 * t**2 * (1.0 - t) ** 2


def _quintic_d2(t):
    return -60.0 * t + 180.0 * t**2 - 120.0 * t**3


def _cubic(t):
    return 1.0 - 3.0 * t**2 + 2.0 * t**3


def _cubic_d1(t):
    return -6.0 * t + 6.0 * t**2


def _cubic_d2(t):
    return -6.0 + 12.0 * t


_BLENDS = {
    "quintic": (_quintic, _quintic_d1, _quintic_d2),
    "cubic": (_cubic, _cubic_d1, _cubic_d2),
}


@dataclass(frozen=True)
class ConstantKernel:
    """Interaction weight that is the same constant for every pair."""

    p: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("constant weight must lie in [0, 1]")

    differentiable = True

    def weight(self, x, y):
        return np.broadcast_to(np.float64(self.p), np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

    def influence_dy(self, x, y):
        # d/dy of p*(y - x) is just p.
        return self.weight(x, y)


@dataclass(frozen=True)
class SelfDependentKernel:
    """Weight 1 - x^2 depending only on the listening agent's opinion."""

    differentiable = True

    def weight(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return 1.0 - x**2

    def influence_dy(self, x, y):
        return self.weight(x, y)


@dataclass(frozen=True)
class HardBoundedKernel:
    """Indicator weight: 1 when |y - x| <= radius, else 0."""

    radius: float

    def __post_init__(self):
        if not 0.0 < self.radius <= DEFAULT_INTERVAL.width:
            raise ValueError("confidence radius must lie in (0, |interval|]")

    differentiable = False

    def weight(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return (np.abs(y - x) <= self.radius).astype(float)

    def influence_dy(self, x, y):
        raise NotDifferentiableError(
            "hard bounded-confidence kernel has no derivative; use the smoothed kernel"
        )


@dataclass(frozen=True)
class SmoothedBoundedKernel:
    """Bounded-confidence weight interpolating smoothly from 1 to 0.

    The weight is 1 for |y - x| < inner_radius, 0 for |y - x| > outer_radius
    and follows the chosen smoothstep blend in between.  The quintic blend is
    twice continuously differentiable; the cubic blend is provided for
    comparison and is only C^1.
    """

    inner_radius: float
    outer_radius: float
    blend: str = "quintic"

    def __post_init__(self):
        if not 0.0 < self.inner_radius < self.outer_radius <= DEFAULT_INTERVAL.width:
            raise ValueError("radii must satisfy 0 < inner < outer <= |interval|")
        if self.blend not in _BLENDS:
            raise ValueError(f"unknown blend {self.blend!r}")

    differentiable = True

    def _band_t(self, s_abs):
        return (s_abs - self.inner_radius) / (self.outer_radius - self.inner_radius)

    def weight(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        s = np.abs(y - x)
        t = np.clip(self._band_t(s), 0.0, 1.0)
        blend, _, _ = _BLENDS[self.blend]
        out = blend(t)
        return np.where(s < self.inner_radius, 1.0, np.where(s > self.outer_radius, 0.0, out))

    def weight_ds(self, x, y):
        """d/ds of the weight evaluated at s = y - x (odd in s)."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        s = y - x
        s_abs = np.abs(s)
        width = self.outer_radius - self.inner_radius
        t = np.clip(self._band_t(s_abs), 0.0, 1.0)
        _, d1, _ = _BLENDS[self.blend]
        inside = (s_abs >= self.inner_radius) & (s_abs <= self.outer_radius)
        return np.where(inside, d1(t) / width * np.sign(s), 0.0)

    def weight_dss(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        s_abs = np.abs(y - x)
        width = self.outer_radius - self.inner_radius
        t = np.clip(self._band_t(s_abs), 0.0, 1.0)
        _, _, d2 = _BLENDS[self.blend]
        inside = (s_abs >= self.inner_radius) & (s_abs <= self.outer_radius)
        return np.where(inside, d2(t) / width**2, 0.0)

    def influence_dy(self, x, y):
        # d/dy { P(y - x) (y - x) } = P(s) + s P'(s)
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        s = y - x
        return self.weight(x, y) + s * self.weight_ds(x, y)

    def influence_dyy(self, x, y):
        # second derivative, used by Newton sweeps on the control curve
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        s = y - x
        return 2.0 * self.weight_ds(x, y) + s * self.weight_dss(x, y)

    def peak_influence(self):
        """Max of P(s)*s over s > 0 and its location (strongest pull)."""
        s = np.linspace(self.inner_radius, self.outer_radius, 20001)
        vals = self.weight(0.0, s) * s
        i = int(np.argmax(vals))
        return float(vals[i]), float(s[i])


InteractionKernel = (
    ConstantKernel | SelfDependentKernel | HardBoundedKernel | SmoothedBoundedKernel
)


def eval_kernel(kernel, x, y):
    """Interaction weight P(x, y) for any kernel variant."""
    return kernel.weight(x, y)


def eval_influence_dy(kernel, x, y):
    """Derivative in y of the deceiver's influence term P(x, y)(y - x).

    For kernels that do not depend on y this is simply P(x).  The hard
    bounded-confidence kernel raises NotDifferentiableError.
    """
    return kernel.influence_dy(x, y)


# --- diffusion coefficients -----------------------------------------------

@dataclass(frozen=True)
class ZeroDiffusion:
    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class QuadraticDiffusion:
    """D(x) = 1 - x^2, vanishing at the interval endpoints."""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 - x**2


DiffusionFn = ZeroDiffusion | QuadraticDiffusion


# --- regularisation variants and deceiver description ---------------------

@dataclass(frozen=True)
class NoRegularisation:
    pass


@dataclass(frozen=True)
class ClassicPenalty:
    """Quadratic cost on deviating from the true opinion."""

    reg_weight: float

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")


@dataclass(frozen=True)
class ConsistencyPenalty:
    """Quadratic cost on presenting different opinions to different agents."""

    reg_weight: float

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")


@dataclass(frozen=True)
class TimeConsistencyPenalty:
    """Quadratic cost on changing the presented opinion between steps.

    ``init`` names the regularisation used to produce the step-0 lie:
    one of "no_reg", "classic", "consistent".
    """

    reg_weight: float
    init: str = "no_reg"

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")
        if self.init not in ("no_reg", "classic", "consistent"):
            raise ValueError(f"unknown init controller {self.init!r}")


@dataclass(frozen=True)
class VariantTimeConsistencyPenalty:
    """Cost on updating the presented opinion unlike a genuine agent would."""

    reg_weight: float
    init: str = "no_reg"

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")
        if self.init not in ("no_reg", "classic", "consistent"):
            raise ValueError(f"unknown init controller {self.init!r}")


@dataclass(frozen=True)
class SparsePenalty:
    """l1 (or l2, for comparison) cost on lie magnitudes, solved by NMPC."""

    reg_weight: float
    norm: str = "l1"

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")
        if self.norm not in ("l1", "l2"):
            raise ValueError("norm must be 'l1' or 'l2'")


Regularisation = (
    NoRegularisation
    | ClassicPenalty
    | ConsistencyPenalty
    | TimeConsistencyPenalty
    | VariantTimeConsistencyPenalty
    | SparsePenalty
)


@dataclass(frozen=True)
class LiarSpec:
    """Goal opinion and strategy of the deceiving agent.

    ``volume`` (relative mass) and ``rate`` only matter in the kinetic
    descriptions; microscopic simulations ignore them.
    """

    goal: float
    regularisation: Regularisation = field(default_factory=NoRegularisation)
    volume: float = 0.0
    rate: float = 1.0

    def __post_init__(self):
        if not DEFAULT_INTERVAL.lo <= self.goal <= DEFAULT_INTERVAL.hi:
            raise ValueError("goal opinion must lie in the opinion interval")
        if self.volume < 0:
            raise ValueError("relative volume must be nonnegative")
        if self.rate <= 0:
            raise ValueError("rate constant must be positive")


# --- uncontrolled drift ----------------------------------------------------

def hk_drift(state: OpinionState, kernel, lies):
    """Right-hand side of the consensus dynamics for every truth-teller.

    dx_i/dt = (1/N) [ P(x_i, y_i)(y_i - x_i) + sum_j P(x_i, x_j)(x_j - x_i) ]
    where the sum runs over truth-tellers (the self term vanishes) and y_i is
    the opinion the deceiver presents to agent i.
    """
    x = state.x
    lies = np.asarray(lies, dtype=float)
    if lies.shape != x.shape:
        raise ValueError(f"expected {x.shape[0]} lies, got {lies.shape}")
    n = state.n_agents
    w = eval_kernel(kernel, x[:, None], x[None, :])
    peer = np.sum(w * (x[None, :] - x[:, None]), axis=1)
    liar = eval_kernel(kernel, x, lies) * (lies - x)
    return (peer + liar) / n


def peer_drift_sum(x: np.ndarray, kernel) -> np.ndarray:
    """Un-normalised peer interaction sum S_i = sum_j P(x_i, x_j)(x_j - x_i)."""
    w = eval_kernel(kernel, x[:, None], x[None, :])
    return np.sum(w * (x[None, :] - x[:, None]), axis=1)
