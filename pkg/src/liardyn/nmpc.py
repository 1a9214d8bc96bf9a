"""Predictive control of the lie pattern with an l1 (sparse) or l2 penalty.

The per-step minimisation over the whole horizon is non-smooth, so it is
solved by particle swarm optimisation; only the first horizon slice is
applied before re-optimising.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import (
    DEFAULT_INTERVAL,
    OpinionInterval,
    OpinionState,
    eval_kernel,
)
from .micro import ControlRecord, Trajectory, step_micro


@dataclass(frozen=True)
class PsoParams:
    """Swarm hyperparameters.

    The velocity update keeps a contracting inertia factor; without it the
    swarm never settles and the optimiser cannot resolve minima to useful
    precision.  Set inertia=1.0 to recover the undamped update.
    """

    n_particles: int = 50
    max_iter: int = 200
    tol: float = 1e-8
    c1: float = 1.5
    c2: float = 1.5
    warm_start_var: float = 0.01
    inertia: float = 0.729
    velocity_init: float = 0.1

    def __post_init__(self):
        if self.n_particles < 2 or self.max_iter < 1:
            raise ValueError("need at least 2 particles and 1 iteration")
        if self.tol < 0 or self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("invalid swarm coefficients")


@dataclass
class LieMagnitudeMatrix:
    """|y_i^n - goal| per agent (rows) and time step (columns)."""

    values: np.ndarray
    goal: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class SparsityMetrics:
    fraction_zero: float
    l1_total: float
    max_entry: float


def pso_minimize(cost, dim: int, params: PsoParams, rng, bounds=(-1.0, 1.0), init_positions=None):
    """Global-best particle swarm minimisation over a box.

    ``cost`` must accept a (K, dim) array of candidate positions and return a
    (K,) array of costs.  Returns the best position found and its cost; the
    global best is monotone by construction and ties resolve to the lowest
    particle index.
    """
    lo, hi = bounds
    k = params.n_particles
    if init_positions is None:
        pos = rng.uniform(lo, hi, size=(k, dim))
    else:
        pos = np.clip(np.asarray(init_positions, dtype=float), lo, hi).copy()
        if pos.shape != (k, dim):
            raise ValueError("init_positions must have shape (n_particles, dim)")
    vel = rng.uniform(-params.velocity_init, params.velocity_init, size=(k, dim))
    pbest_pos = pos.copy()
    pbest_val = np.asarray(cost(pos), dtype=float)
    g = int(np.argmin(pbest_val))
    gbest_pos = pbest_pos[g].copy()
    gbest_val = float(pbest_val[g])
    for _ in range(params.max_iter):
        if gbest_val < params.tol:
            break
        r1 = rng.uniform(size=(k, dim))
        r2 = rng.uniform(size=(k, dim))
        vel = (
            params.inertia * vel
            + params.c1 * r1 * (pbest_pos - pos)
            + params.c2 * r2 * (gbest_pos[None, :] - pos)
        )
        pos = np.clip(pos + vel, lo, hi)
        val = np.asarray(cost(pos), dtype=float)
        better = val < pbest_val
        pbest_pos[better] = pos[better]
        pbest_val[better] = val[better]
        g = int(np.argmin(pbest_val))
        if pbest_val[g] < gbest_val:
            gbest_val = float(pbest_val[g])
            gbest_pos = pbest_pos[g].copy()
    return gbest_pos, gbest_val


def _penalty(y, goal, norm):
    dev = np.abs(y - goal)
    return dev if norm == "l1" else dev**2


def horizon_cost(y, state: OpinionState, kernel, dt: float, reg_weight: float, norm: str = "l1"):
    """Discrete cost of a candidate lie schedule over the horizon.

    ``y`` has shape (H+1, N-1) or batched (K, H+1, N-1); the dynamics are
    rolled forward one Euler step per horizon slice.
    """
    y = np.asarray(y, dtype=float)
    batched = y.ndim == 3
    if not batched:
        y = y[None, :, :]
    n = state.n_agents
    if y.shape[2] != n - 1:
        raise ValueError("lie schedule has the wrong number of agents")
    beta = dt / n
    x = np.broadcast_to(state.x, (y.shape[0], n - 1)).copy()
    total = np.zeros(y.shape[0])
    for h in range(y.shape[1]):
        yh = y[:, h, :]
        w = eval_kernel(kernel, x[:, :, None], x[:, None, :])
        peer = np.sum(w * (x[:, None, :] - x[:, :, None]), axis=2)
        liar = eval_kernel(kernel, x, yh) * (yh - x)
        x = x + beta * (liar + peer)
        total += (dt / n) * (
            0.5 * np.sum((x - state.goal) ** 2, axis=1)
            + reg_weight * np.sum(_penalty(yh, state.goal, norm), axis=1)
        )
    return total if batched else float(total[0])


def _reduced_cost(y, x_bar, goal, n, kernel, dt, reg_weight, norm):
    """Horizon cost after relative consensus: one truth-teller of weight N-1."""
    y = np.asarray(y, dtype=float)  # (K, H+1)
    beta = dt / n
    x = np.full(y.shape[0], x_bar)
    total = np.zeros(y.shape[0])
    for h in range(y.shape[1]):
        yh = y[:, h]
        x = x + beta * eval_kernel(kernel, x, yh) * (yh - x)
        total += (dt / n) * (n - 1) * (
            0.5 * (x - goal) ** 2 + reg_weight * _penalty(yh, goal, norm)
        )
    return total


@dataclass
class NmpcConfig:
    n_agents: int
    dt: float
    t_final: float
    kernel: object
    goal: float
    reg_weight: float
    norm: str = "l1"
    horizon: int = 3
    pso: PsoParams = field(default_factory=PsoParams)
    x0: np.ndarray | None = None
    seed: int = 0
    consensus_tol: float = 1e-3
    interval: OpinionInterval = field(default_factory=OpinionInterval)

    def __post_init__(self):
        if self.norm not in ("l1", "l2"):
            raise ValueError("norm must be 'l1' or 'l2'")
        steps = int(np.ceil(self.t_final / self.dt - 1e-12))
        if not 1 <= self.horizon <= max(steps - 1, 1):
            raise ValueError("horizon must lie in {1, ..., M-1}")

    def initial_state(self) -> OpinionState:
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float)
        else:
            rng = np.random.Generator(np.random.Philox(self.seed))
            x0 = rng.uniform(self.interval.lo, self.interval.hi, self.n_agents - 1)
        return OpinionState(x0, self.goal, 0.0)


def nmpc_simulate(config: NmpcConfig):
    """Receding-horizon loop: optimise the horizon, apply the first slice.

    Once the truth-tellers reach relative consensus the optimisation
    collapses to a single weighted agent, which is both faster and more
    accurate.  Returns the trajectory and the lie-magnitude matrix.
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    state = config.initial_state()
    n = config.n_agents
    h1 = config.horizon + 1
    steps = int(np.ceil(config.t_final / config.dt - 1e-12))
    lo, hi = config.interval.lo, config.interval.hi
    heat = np.zeros((n - 1, steps))
    states = [state]
    controls: list[ControlRecord] = []
    y_applied = None
    sigma = float(np.sqrt(config.pso.warm_start_var))
    for step in range(steps):
        spread = float(np.max(state.x) - np.min(state.x))
        if spread < config.consensus_tol:
            x_bar = float(np.mean(state.x))

            def cost(cand):
                return _reduced_cost(
                    cand, x_bar, config.goal, n, config.kernel, config.dt,
                    config.reg_weight, config.norm,
                )

            warm = None
            if y_applied is not None:
                base = float(np.mean(y_applied))
                warm = np.clip(
                    base + sigma * rng.standard_normal((config.pso.n_particles, h1)), lo, hi
                )
            best, _ = pso_minimize(cost, h1, config.pso, rng, (lo, hi), warm)
            y_step = np.full(n - 1, best[0])
        else:
            def cost(cand):
                return horizon_cost(
                    cand.reshape(-1, h1, n - 1), state, config.kernel, config.dt,
                    config.reg_weight, config.norm,
                )

            warm = None
            if y_applied is not None:
                base = np.tile(y_applied, h1)
                warm = np.clip(
                    base[None, :]
                    + sigma * rng.standard_normal((config.pso.n_particles, h1 * (n - 1))),
                    lo, hi,
                )
            best, _ = pso_minimize(cost, h1 * (n - 1), config.pso, rng, (lo, hi), warm)
            y_step = best.reshape(h1, n - 1)[0]
        record = ControlRecord(y_step, y_step, step)
        heat[:, step] = np.abs(y_step - config.goal)
        state = step_micro(state, record, config.kernel, config.dt, config.interval)
        controls.append(record)
        states.append(state)
        y_applied = y_step
    times = config.dt * np.arange(steps + 1)
    return Trajectory(times, states, controls), LieMagnitudeMatrix(heat, config.goal)


def sparsity_metrics(matrix: LieMagnitudeMatrix, zero_tol: float) -> SparsityMetrics:
    """Fraction of near-zero lie magnitudes plus aggregate size statistics."""
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    v = matrix.values
    return SparsityMetrics(
        fraction_zero=float(np.mean(v < zero_tol)),
        l1_total=float(np.sum(v)),
        max_entry=float(np.max(v)) if v.size else 0.0,
    )


def export_heatmap_csv(matrix: LieMagnitudeMatrix, path, metadata: dict | None = None) -> None:
    """Rows = agents, columns = time steps; metadata goes to a JSON sidecar."""
    v = matrix.values
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent"] + [f"step_{n}" for n in range(v.shape[1])])
        for i in range(v.shape[0]):
            writer.writerow([i + 1] + [f"{val:.17g}" for val in v[i]])
    if metadata is not None:
        sidecar = str(path) + ".meta.json"
        with open(sidecar, "w") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True, default=str)


def pso_params_dict(params: PsoParams) -> dict:
    return asdict(params)
