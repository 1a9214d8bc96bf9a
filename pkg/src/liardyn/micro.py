"""Receding-horizon controllers for the deceiving agent, the forward-Euler
stepper and full microscopic trajectory simulation.

Each controller solves the one-step reduced optimisation of its
regularisation: closed form when the kernel carries no dependence on the
presented opinion, damped fixed-point iteration otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_INTERVAL,
    ClassicPenalty,
    ConsistencyPenalty,
    FixedPointDivergedError,
    HardBoundedKernel,
    LiarSpec,
    NoRegularisation,
    OpinionInterval,
    OpinionState,
    SmoothedBoundedKernel,
    StateEscapedIntervalError,
    TimeConsistencyPenalty,
    VariantTimeConsistencyPenalty,
    eval_influence_dy,
    eval_kernel,
    hk_drift,
    peer_drift_sum,
    project_interval,
)

_CLIP_TOL = 1e-12
_ESCAPE_TOL = 1e-9
_FP_DAMPING = 0.5
_FP_MAX_ITER = 200
_FP_TOL = 1e-12


@dataclass
class ControlRecord:
    """Projected lies for one step, plus the unprojected solutions."""

    y: np.ndarray
    y_raw: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.y_raw = np.asarray(self.y_raw, dtype=float)


@dataclass
class Trajectory:
    """Simulated path: states at M+1 times and the M controls between them."""

    times: np.ndarray
    states: list[OpinionState]
    controls: list[ControlRecord]

    def opinions(self) -> np.ndarray:
        """Truth-teller opinions as an (M+1, N-1) array."""
        return np.array([s.x for s in self.states])

    def lies(self) -> np.ndarray:
        """Projected lies as an (M, N-1) array."""
        return np.array([c.y for c in self.controls]).reshape(len(self.controls), -1)


def _is_y_independent(kernel) -> bool:
    return not isinstance(kernel, (HardBoundedKernel, SmoothedBoundedKernel))


def _damped_fixed_point(update, y0, label):
    """Damped iteration y <- (1-d) y + d update(y) until the residual is tiny."""
    y = np.array(y0, dtype=float, copy=True)
    for _ in range(_FP_MAX_ITER):
        target = update(y)
        residual = np.max(np.abs(target - y))
        y = (1.0 - _FP_DAMPING) * y + _FP_DAMPING * target
        if residual < _FP_TOL:
            return y
    raise FixedPointDivergedError(f"{label} controller failed to converge")


def control_no_reg(state: OpinionState, kernel, dt: float) -> ControlRecord:
    """Unregularised control: put each agent on the goal in one step if possible.

    Per agent, in order of preference: the lie achieving x_i' = goal exactly;
    the stationary point of the influence term (largest possible push); the
    projection of the exact-consensus solution onto the interval.
    """
    x, goal = state.x, state.goal
    n = state.n_agents
    beta = dt / n
    s = peer_drift_sum(x, kernel)
    target = (goal - x) / beta - s  # required value of P(x, y)(y - x)
    if _is_y_independent(kernel):
        p = eval_kernel(kernel, x, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            y_raw = np.where(np.abs(p) > 1e-15, x + target / np.where(p == 0, 1.0, p), goal)
        # the stationary-point equation P(x) = 0 has no root for these kernels,
        # so the fallback is directly the projected consensus solution
        return ControlRecord(project_interval(y_raw), y_raw)
    # smoothed bounded confidence: P(s)s is bounded, solve or saturate
    peak, s_peak = kernel.peak_influence()
    y_raw = np.empty_like(x)
    for i in range(x.size):
        ti = target[i]
        if abs(ti) <= peak:
            y_raw[i] = x[i] + np.sign(ti) * _invert_influence(kernel, abs(ti), s_peak)
        else:
            y_raw[i] = x[i] + np.sign(ti) * s_peak
    return ControlRecord(project_interval(y_raw), y_raw)


def _invert_influence(kernel, value, s_peak):
    """Smallest s >= 0 with P(s)*s = value (bisection on the rising branch)."""
    lo, hi = 0.0, s_peak
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kernel.weight(0.0, mid) * mid < value:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _one_step_with_lie(x, beta, peers, kernel, y):
    return x + beta * (eval_kernel(kernel, x, y) * (y - x) + peers)


def control_classic(state: OpinionState, kernel, dt: float, reg_weight: float) -> ControlRecord:
    """Control penalised for deviating from the true opinion."""
    x, goal = state.x, state.goal
    n = state.n_agents
    beta = dt / n
    c = dt / (reg_weight * n)
    s = peer_drift_sum(x, kernel)
    if _is_y_independent(kernel):
        p = eval_kernel(kernel, x, x)
        y_raw = (goal - c * p * (x * (1.0 - beta * p) + beta * s - goal)) / (1.0 + c * beta * p**2)
    else:
        def update(y):
            x_next = _one_step_with_lie(x, beta, s, kernel, y)
            return goal - c * (x_next - goal) * eval_influence_dy(kernel, x, y)

        y_raw = _damped_fixed_point(update, np.full_like(x, goal), "classic")
    return ControlRecord(project_interval(y_raw), y_raw)


def control_consistent(state: OpinionState, kernel, dt: float, reg_weight: float) -> ControlRecord:
    """Control penalised for telling different lies to different agents."""
    x, goal = state.x, state.goal
    n = state.n_agents
    if n < 3:
        raise ValueError("consistency control needs at least two truth-tellers")
    beta = dt / n
    c = dt / (reg_weight * (n - 1))
    s = peer_drift_sum(x, kernel)
    if _is_y_independent(kernel):
        # y_i = ybar - c_i (x_i' - goal) P_i is linear; eliminate ybar first
        p = eval_kernel(kernel, x, x)
        e = 1.0 + c * p * beta * p
        d = c * p * (x * (1.0 - beta * p) + beta * s - goal)
        denom = (n - 1) - np.sum(1.0 / e)
        if abs(denom) < 1e-14:
            y_raw = np.full_like(x, goal)
        else:
            ybar = -np.sum(d / e) / denom
            y_raw = (ybar - d) / e
    else:
        def update(y):
            x_next = _one_step_with_lie(x, beta, s, kernel, y)
            ybar = np.mean(y)
            return ybar - c * (x_next - goal) * eval_influence_dy(kernel, x, y)

        y_raw = _damped_fixed_point(update, np.full_like(x, goal), "consistent")
    return ControlRecord(project_interval(y_raw), y_raw)


def control_time_consistent(
    state: OpinionState, kernel, dt: float, reg_weight: float, y_prev
) -> ControlRecord:
    """Control penalised for changing the presented opinion between steps."""
    x, goal = state.x, state.goal
    y_prev = np.asarray(y_prev, dtype=float)
    n = state.n_agents
    beta = dt / n
    c = dt**3 / (reg_weight * n)
    s = peer_drift_sum(x, kernel)
    if _is_y_independent(kernel):
        p = eval_kernel(kernel, x, x)
        y_raw = (y_prev - c * p * (x * (1.0 - beta * p) + beta * s - goal)) / (
            1.0 + c * beta * p**2
        )
    else:
        def update(y):
            x_next = _one_step_with_lie(x, beta, s, kernel, y)
            return y_prev - c * (x_next - goal) * eval_influence_dy(kernel, x, y)

        y_raw = _damped_fixed_point(update, y_prev, "time-consistent")
    return ControlRecord(project_interval(y_raw), y_raw)


def control_variant_tc(
    state: OpinionState,
    prev_state: OpinionState,
    kernel,
    dt: float,
    reg_weight: float,
    y_prev,
) -> ControlRecord:
    """Control penalised for updating unlike a genuine agent would.

    The expected drift of a virtual agent sitting at the previous lie is
    evaluated with the full two-argument kernel against the previous state.
    """
    x, goal = state.x, state.goal
    y_prev = np.asarray(y_prev, dtype=float)
    n = state.n_agents
    beta = dt / n
    c = dt**2 / (reg_weight * n)
    s = peer_drift_sum(x, kernel)
    xp = prev_state.x
    w = eval_kernel(kernel, y_prev[:, None], xp[None, :])
    virtual_drift = np.sum(w * (xp[None, :] - y_prev[:, None]), axis=1) / n
    base = y_prev + dt * virtual_drift
    if _is_y_independent(kernel):
        p = eval_kernel(kernel, x, x)
        y_raw = (base - dt * c * p * (x * (1.0 - beta * p) + beta * s - goal)) / (
            1.0 + dt * c * beta * p**2
        )
    else:
        def update(y):
            x_next = _one_step_with_lie(x, beta, s, kernel, y)
            return base - dt * c * (x_next - goal) * eval_influence_dy(kernel, x, y)

        y_raw = _damped_fixed_point(update, y_prev, "variant time-consistent")
    return ControlRecord(project_interval(y_raw), y_raw)


def control_bounded_confidence(
    state: OpinionState, radius: float, dt: float, reg_weight: float
) -> ControlRecord:
    """Classic-regularisation control under a hard confidence kernel.

    The candidate lie is the unconstrained solution projected onto the
    agent's confidence band; it is adopted only when the one-step gain beats
    the quadratic cost of telling it, otherwise the deceiver tells the truth.
    """
    x, goal = state.x, state.goal
    n = state.n_agents
    beta = dt / n
    kernel = HardBoundedKernel(radius)
    s = peer_drift_sum(x, kernel)
    # inside the band P = 1, so the implicit equation is linear in the lie
    c = dt / (reg_weight * n)
    y_raw = (goal - c * (x * (1.0 - beta) + beta * s - goal)) / (1.0 + c * beta)
    candidate = project_interval(np.clip(y_raw, x - radius, x + radius))
    x_lie = x + beta * ((candidate - x) + s)
    x_truth = x + beta * s
    lie_cost = (x_lie - goal) ** 2 + 2.0 * reg_weight * (candidate - goal) ** 2
    adopt = lie_cost < (x_truth - goal) ** 2
    y = np.where(adopt, candidate, goal)
    return ControlRecord(y, y_raw)


def step_micro(
    state: OpinionState,
    ctrl: ControlRecord,
    kernel,
    dt: float,
    interval: OpinionInterval = DEFAULT_INTERVAL,
) -> OpinionState:
    """One forward-Euler step of the controlled dynamics.

    Lies outside an agent's confidence band contribute nothing because the
    kernel weight vanishes there.  Opinions may leave the interval only by
    roundoff; anything beyond 1e-9 signals a too-large dt and raises.
    """
    x_new = state.x + dt * hk_drift(state, kernel, ctrl.y)
    escape = max(np.max(x_new - interval.hi, initial=0.0), np.max(interval.lo - x_new, initial=0.0))
    if escape > _ESCAPE_TOL:
        raise StateEscapedIntervalError(
            f"opinion left the interval by {escape:.2e}; decrease dt"
        )
    if escape > 0.0:
        x_new = np.clip(x_new, interval.lo, interval.hi)
    return OpinionState(x_new, state.goal, state.t + dt)


@dataclass
class MicroConfig:
    """Inputs of a microscopic run.

    Initial opinions come from ``x0`` when given, otherwise they are drawn
    uniformly on the interval from a counter-based generator seeded with
    ``seed``.
    """

    n_agents: int
    dt: float
    t_final: float
    kernel: object
    liar: LiarSpec
    x0: np.ndarray | None = None
    seed: int = 0
    interval: OpinionInterval = field(default_factory=OpinionInterval)

    def initial_state(self) -> OpinionState:
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float)
            if x0.size != self.n_agents - 1:
                raise ValueError("x0 must have length N-1")
        else:
            rng = np.random.Generator(np.random.Philox(self.seed))
            x0 = rng.uniform(self.interval.lo, self.interval.hi, self.n_agents - 1)
        return OpinionState(x0, self.liar.goal, 0.0)


_INIT_CONTROLLERS = {
    "no_reg": lambda state, kernel, dt, nu: control_no_reg(state, kernel, dt),
    "classic": control_classic,
    "consistent": control_consistent,
}


def _controller_for(config: MicroConfig):
    reg = config.liar.regularisation
    kernel, dt = config.kernel, config.dt

    if isinstance(reg, NoRegularisation):
        return lambda state, step, prev_state, y_prev: control_no_reg(state, kernel, dt)
    if isinstance(reg, ClassicPenalty):
        if isinstance(kernel, HardBoundedKernel):
            return lambda state, step, prev_state, y_prev: control_bounded_confidence(
                state, kernel.radius, dt, reg.reg_weight
            )
        return lambda state, step, prev_state, y_prev: control_classic(
            state, kernel, dt, reg.reg_weight
        )
    if isinstance(reg, ConsistencyPenalty):
        return lambda state, step, prev_state, y_prev: control_consistent(
            state, kernel, dt, reg.reg_weight
        )
    if isinstance(reg, TimeConsistencyPenalty):
        init = _INIT_CONTROLLERS[reg.init]

        def ctrl(state, step, prev_state, y_prev):
            if step == 0:
                return init(state, kernel, dt, reg.reg_weight)
            return control_time_consistent(state, kernel, dt, reg.reg_weight, y_prev)

        return ctrl
    if isinstance(reg, VariantTimeConsistencyPenalty):
        init = _INIT_CONTROLLERS[reg.init]

        def ctrl(state, step, prev_state, y_prev):
            if step == 0:
                return init(state, kernel, dt, reg.reg_weight)
            return control_variant_tc(state, prev_state, kernel, dt, reg.reg_weight, y_prev)

        return ctrl
    raise ValueError(f"no instantaneous controller for {type(reg).__name__}; use the NMPC module")


def simulate_micro(config: MicroConfig) -> Trajectory:
    """Alternate controller calls and Euler steps for ceil(T/dt) steps."""
    steps = int(np.ceil(config.t_final / config.dt - 1e-12)) if config.t_final > 0 else 0
    state = config.initial_state()
    controller = _controller_for(config)
    states = [state]
    controls: list[ControlRecord] = []
    prev_state = state
    y_prev = None
    for n in range(steps):
        record = controller(state, n, prev_state, y_prev)
        record.step = n
        new_state = step_micro(state, record, config.kernel, config.dt, config.interval)
        controls.append(record)
        prev_state = state
        state = new_state
        states.append(state)
        y_prev = record.y
    times = config.dt * np.arange(steps + 1)
    return Trajectory(times, states, controls)


def export_trajectory_csv(traj: Trajectory, path) -> None:
    """Write `t, x_1..x_{N-1}, y_1..y_{N-1}` rows; the final row has no lies."""
    n_minus_1 = traj.states[0].x.size
    header = (
        ["t"]
        + [f"x_{i}" for i in range(1, n_minus_1 + 1)]
        + [f"y_{i}" for i in range(1, n_minus_1 + 1)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, (t, state) in enumerate(zip(traj.times, traj.states)):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in state.x]
            if i < len(traj.controls):
                row += [f"{v:.17g}" for v in traj.controls[i].y]
            else:
                row += [""] * n_minus_1
            writer.writerow(row)
