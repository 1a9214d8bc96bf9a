"""Quasi-invariant-limit PDE layer: the kinetic control curve, an explicit
finite-volume solver with no-flux boundaries for the drift-diffusion density
equation, moment tracking and the Lyapunov diagnostic.

The solver works directly on the opinion interval [-1, 1].  Interior face
fluxes are exponentially fitted (Scharfetter-Gummel) in the variable
w = D^2 u: plain centred differences are von-Neumann unstable wherever the
drift dominates the vanishing boundary diffusion, while the fitted flux
reduces to the centred form at small cell Peclet number, upwinds smoothly at
large ones, conserves mass identically and keeps the density nonnegative
under the stability rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConstantKernel,
    DEFAULT_INTERVAL,
    HardBoundedKernel,
    NotDifferentiableError,
    OpinionInterval,
    QuadraticDiffusion,
    SelfDependentKernel,
    SmoothedBoundedKernel,
    StabilityViolationError,
    eval_influence_dy,
    eval_kernel,
)

_NEG_TOL = 1e-9


@dataclass(frozen=True)
class Moments:
    mass: float
    mean: float
    second_moment: float


@dataclass
class DensityGrid:
    """Cell-averaged density over a uniform partition of the interval."""

    u: np.ndarray
    interval: OpinionInterval = field(default_factory=OpinionInterval)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)

    @property
    def n_cells(self) -> int:
        return self.u.size

    @property
    def dx(self) -> float:
        return self.interval.width / self.n_cells

    @property
    def midpoints(self) -> np.ndarray:
        return self.interval.lo + self.dx * (np.arange(self.n_cells) + 0.5)

    @property
    def faces(self) -> np.ndarray:
        """Interior cell boundaries (the no-flux boundary faces excluded)."""
        return self.interval.lo + self.dx * np.arange(1, self.n_cells)


def density_moments(grid: DensityGrid) -> Moments:
    """Midpoint-rule quadrature of 1, x and x^2 against the cell averages."""
    mids = grid.midpoints
    dx = grid.dx
    return Moments(
        mass=float(np.sum(grid.u) * dx),
        mean=float(np.sum(grid.u * mids) * dx),
        second_moment=float(np.sum(grid.u * mids**2) * dx),
    )


# --- kinetic control curve --------------------------------------------------

@dataclass
class ControlCurve:
    """Lie presented to an agent at each grid opinion, with root residuals."""

    xs: np.ndarray
    ys: np.ndarray
    residuals: np.ndarray
    reg_weight: float
    goal: float

    def drift(self, kernel) -> np.ndarray:
        """Deceiver drift P(y(x) - x)(y(x) - x) along the grid."""
        return eval_kernel(kernel, self.xs, self.ys) * (self.ys - self.xs)


def g_residual(y, x, reg_weight: float, goal: float, kernel) -> float:
    """Stationarity residual of the pointwise lie optimisation.

    g(y; x) = kappa (y - goal) + (x - goal) d/dy{ P(y - x)(y - x) }; the lie
    y(x) is a valid control at x exactly when |g| is below tolerance.
    """
    return reg_weight * (np.asarray(y, float) - goal) + (np.asarray(x, float) - goal) * (
        eval_influence_dy(kernel, x, y)
    )


def _scalar_residual_fns(kernel: SmoothedBoundedKernel, reg_weight: float, goal: float):
    """Pure-scalar g and g' closures; the fine sweep calls these millions of
    times, so they bypass the vectorised kernel machinery."""
    r1, r2 = kernel.inner_radius, kernel.outer_radius
    width = r2 - r1
    quintic = kernel.blend == "quintic"

    def g_and_dg(y, x):
        s = y - x
        a = abs(s)
        if a < r1:
            e, de = 1.0, 0.0
        elif a > r2:
            e, de = 0.0, 0.0
        else:
            t = (a - r1) / width
            if quintic:
                p = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
                p1 = -30.0 * t * t * (1.0 - t) ** 2 / width
                p2 = (-60.0 * t + 180.0 * t * t - 120.0 * t**3) / width**2
            else:
                p = 1.0 - 3.0 * t * t + 2.0 * t**3
                p1 = (-6.0 * t + 6.0 * t * t) / width
                p2 = (-6.0 + 12.0 * t) / width**2
            sgn = 1.0 if s >= 0 else -1.0
            dp = p1 * sgn
            e = p + s * dp
            de = 2.0 * dp + s * p2
        xg = x - goal
        return reg_weight * (y - goal) + xg * e, reg_weight + xg * de

    return g_and_dg


def _newton_root(g_and_dg, x, y0, tol, max_iter=50):
    y = y0
    g = math.inf
    for _ in range(max_iter):
        g, dg = g_and_dg(y, x)
        if abs(g) < tol:
            return y
        if dg == 0.0 or not math.isfinite(dg):
            return None
        y = y - g / dg
        if not math.isfinite(y):
            return None
    g, _ = g_and_dg(y, x)
    return y if abs(g) < tol else None


def _bisect_band(g_and_dg, kernel, x, goal, tol):
    """Bracketing scan over the transition band on the side facing the goal."""
    side = -math.copysign(1.0, x - goal) if x != goal else 1.0
    n_scan = 512
    r1, r2 = kernel.inner_radius, kernel.outer_radius
    ss = [r1 + (r2 - r1) * i / (n_scan - 1) for i in range(n_scan)]
    prev_y = x + side * ss[0]
    prev_g, _ = g_and_dg(prev_y, x)
    bracket = None
    for s in ss[1:]:
        y = x + side * s
        g, _ = g_and_dg(y, x)
        if prev_g * g < 0:
            bracket = (prev_y, y) if prev_y < y else (y, prev_y)
            break
        prev_y, prev_g = y, g
    if bracket is None:
        return None
    lo, hi = bracket
    g_lo, _ = g_and_dg(lo, x)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g_mid, _ = g_and_dg(mid, x)
        if g_lo * g_mid <= 0:
            hi = mid
        else:
            lo, g_lo = mid, g_mid
    y = 0.5 * (lo + hi)
    g, _ = g_and_dg(y, x)
    return y if abs(g) < tol else None


def control_curve(
    kernel: SmoothedBoundedKernel,
    reg_weight: float,
    goal: float,
    n_cells: int = 501,
    refine_k: int = 7,
    tol: float = 1e-8,
    interval: OpinionInterval = DEFAULT_INTERVAL,
) -> ControlCurve:
    """Sweep the lie curve outward from the goal on a refined grid.

    A fine grid of 2^refine_k * n_cells + 1 uniform points is solved by
    Newton continuation in both directions, each point initialised at its
    inward neighbour's solution.  Points within the inner closed-form region
    use the exact expression; where Newton and a bisection fallback both fail
    the residual test the deceiver tells the truth.  The returned curve is
    the coarse subsample at the n_cells + 1 grid points.

    Parameters
    ----------
    kernel : smoothed bounded-confidence kernel (the hard kernel has no
        usable derivative here)
    reg_weight : rescaled regularisation weight, > 0
    goal : the deceiver's true opinion
    n_cells : coarse resolution; the curve is returned at n_cells + 1 points
    refine_k : fine grid refinement exponent
    tol : residual magnitude below which a root is accepted
    """
    if not isinstance(kernel, SmoothedBoundedKernel):
        raise NotDifferentiableError("control curve needs the smoothed kernel")
    if reg_weight <= 0:
        raise ValueError("reg_weight must be positive")
    m = 2**refine_k * n_cells
    xs_fine = np.linspace(interval.lo, interval.hi, m + 1)
    ys_fine = np.empty(m + 1)
    inner_halfwidth = kernel.inner_radius * reg_weight / (reg_weight + 1.0)
    j_star = int(np.argmin(np.abs(xs_fine - goal)))
    g_and_dg = _scalar_residual_fns(kernel, reg_weight, goal)

    def solve_direction(indices):
        y_prev = goal
        for j in indices:
            x = float(xs_fine[j])
            if abs(x - goal) < inner_halfwidth:
                y = goal - (x - goal) / reg_weight
            else:
                y = _newton_root(g_and_dg, x, y_prev, tol)
                if y is None:
                    y = _bisect_band(g_and_dg, kernel, x, goal, tol)
                if y is None:
                    y = goal
            y = min(max(y, interval.lo), interval.hi)
            ys_fine[j] = y
            y_prev = y

    solve_direction(range(j_star, -1, -1))
    solve_direction(range(j_star, m + 1))
    sub = 2**refine_k
    xs = xs_fine[::sub]
    ys = ys_fine[::sub]
    residuals = np.abs(g_residual(ys, xs, reg_weight, goal, kernel))
    return ControlCurve(xs, ys, residuals, reg_weight, goal)


# --- finite volume solver ---------------------------------------------------

@dataclass(frozen=True)
class FpLiar:
    """One deceiver population in the density description."""

    reg_weight: float
    volume: float
    goal: float
    c_l: float = 1.0

    def __post_init__(self):
        if self.reg_weight <= 0 or self.volume < 0 or self.c_l <= 0:
            raise ValueError("invalid deceiver parameters")


@dataclass
class FpConfig:
    kernel: object
    liars: list[FpLiar]
    c_t: float = 1.0
    zeta: float = 0.1
    diffusion: object = field(default_factory=QuadraticDiffusion)
    n_cells: int = 501
    t_final: float = 1.0
    dt: float | None = None
    init: object = "uniform"
    record_every: int | None = None
    curve_refine_k: int = 7
    curve_tol: float = 1e-8
    interval: OpinionInterval = field(default_factory=OpinionInterval)

    def __post_init__(self):
        if self.n_cells < 3:
            raise ValueError("need at least 3 cells")
        if self.zeta < 0 or self.c_t <= 0:
            raise ValueError("zeta must be nonnegative, c_t positive")
        if isinstance(self.kernel, HardBoundedKernel):
            raise NotDifferentiableError(
                "the density solver needs the smoothed bounded-confidence kernel"
            )


def two_cluster_mixture(x):
    """Bimodal initial profile: Gaussian bumps at 0.7 and -0.6 (unnormalised)."""
    x = np.asarray(x, dtype=float)
    return np.exp(-100.0 * (0.7 - x) ** 2) + np.exp(-100.0 * (-0.6 - x) ** 2)


def initial_density(config: FpConfig) -> DensityGrid:
    """Build the cell-averaged initial density with exactly unit mass."""
    grid = DensityGrid(np.zeros(config.n_cells), config.interval)
    mids = grid.midpoints
    init = config.init
    if isinstance(init, str):
        if init == "uniform":
            u = np.ones(config.n_cells)
        elif init == "two_cluster_mixture":
            u = two_cluster_mixture(mids)
        else:
            raise ValueError(f"unknown initial density {init!r}")
    elif callable(init):
        u = np.asarray(init(mids), dtype=float)
    else:
        u = np.asarray(init, dtype=float)
        if u.size != config.n_cells:
            raise ValueError("initial density array must have n_cells entries")
    if np.any(u < 0):
        raise ValueError("initial density must be nonnegative")
    u = u / (np.sum(u) * grid.dx)
    grid.u = u
    return grid


@dataclass
class _FpOperators:
    faces: np.ndarray
    mids: np.ndarray
    dx: float
    h_face: object  # callable(u) -> peer drift at faces
    k_face: np.ndarray  # summed rho/c_l weighted deceiver drift at faces
    d_sq: np.ndarray  # D^2 at cell midpoints
    d_sq_face: np.ndarray  # D^2 at interior faces
    diff_coeff: float  # (1/c_t + sum rho/c_l) * zeta / 2
    c_t: float
    drift_bound: float


def _convolution_matrix(kernel, faces, mids, dx):
    """Pi[i, j] = integral over cell j of P(x_i, x')(x' - x_i) dx' (Gauss 4pt)."""
    gl_x, gl_w = np.polynomial.legendre.leggauss(4)
    # map nodes into each cell
    nodes = mids[None, :] + 0.5 * dx * gl_x[:, None]  # (4, L)
    pi = np.zeros((faces.size, mids.size))
    for q in range(gl_x.size):
        w = eval_kernel(kernel, faces[:, None], nodes[q][None, :])
        pi += 0.5 * dx * gl_w[q] * w * (nodes[q][None, :] - faces[:, None])
    return pi


def build_operators(config: FpConfig, curves: list[ControlCurve] | None = None) -> _FpOperators:
    """Precompute drift structures; curves may be supplied to avoid resolving."""
    grid = DensityGrid(np.zeros(config.n_cells), config.interval)
    faces, mids, dx = grid.faces, grid.midpoints, grid.dx
    kernel = config.kernel

    if isinstance(kernel, (ConstantKernel, SelfDependentKernel)):
        p_face = eval_kernel(kernel, faces, faces)

        def h_face(u, _p=p_face, _mids=mids, _dx=dx, _faces=faces):
            m = np.sum(u * _mids) * _dx
            mass = np.sum(u) * _dx
            return _p * (m - mass * _faces)

        h_bound = np.abs(p_face) * np.maximum(
            faces - config.interval.lo, config.interval.hi - faces
        )
        k_face = np.zeros(faces.size)
        for liar in config.liars:
            k_face += (
                liar.volume / liar.c_l
                * p_face * (1.0 + p_face / liar.reg_weight) * (liar.goal - faces)
            )
    elif isinstance(kernel, SmoothedBoundedKernel):
        pi = _convolution_matrix(kernel, faces, mids, dx)

        def h_face(u, _pi=pi):
            return _pi @ u

        h_bound = np.max(np.abs(pi), axis=1) / dx
        if curves is None:
            curves = [
                control_curve(
                    kernel, liar.reg_weight, liar.goal, config.n_cells,
                    config.curve_refine_k, config.curve_tol, config.interval,
                )
                for liar in config.liars
            ]
        if len(curves) != len(config.liars):
            raise ValueError("need one control curve per deceiver")
        k_face = np.zeros(faces.size)
        for liar, curve in zip(config.liars, curves):
            k_face += liar.volume / liar.c_l * curve.drift(kernel)[1:-1]
    else:
        raise NotDifferentiableError(f"unsupported kernel {type(kernel).__name__}")

    d_sq = config.diffusion(mids) ** 2
    d_sq_face = config.diffusion(faces) ** 2
    b = 1.0 / config.c_t + sum(l.volume / l.c_l for l in config.liars)
    diff_coeff = b * config.zeta / 2.0
    drift_bound = h_bound / config.c_t + np.abs(k_face)
    return _FpOperators(
        faces, mids, dx, h_face, k_face, d_sq, d_sq_face, diff_coeff, config.c_t, drift_bound
    )


def stable_dt(config: FpConfig, ops: _FpOperators | None = None) -> float:
    """Explicit-step size obeying diffusion, drift and positivity limits.

    On top of the usual dx^2 and CFL rules this enforces a nonnegative
    update diagonal for the fitted flux, using an a priori per-face drift
    bound, so the density stays nonnegative for the whole run.
    """
    if ops is None:
        ops = build_operators(config)
    dx = ops.dx
    candidates = []
    max_dsq = float(np.max(ops.d_sq))
    max_drift = float(np.max(ops.drift_bound, initial=0.0))
    if ops.diff_coeff > 0 and max_dsq > 0:
        candidates.append(0.4 * dx**2 / (2.0 * ops.diff_coeff * max_dsq))
        # positivity of the update diagonal: faces i-1 and i both feed cell i
        peclet = ops.drift_bound * dx / (ops.diff_coeff * ops.d_sq_face)
        b_worst = _bernoulli(-peclet)  # the larger of B(+-peclet)
        load = np.zeros(ops.mids.size)
        load[:-1] += b_worst
        load[1:] += b_worst
        diag = ops.diff_coeff * ops.d_sq * load / dx**2
        max_diag = float(np.max(diag))
        if max_diag > 0:
            candidates.append(0.9 / max_diag)
    if max_drift > 0:
        candidates.append(0.4 * dx / max_drift)
    if not candidates:
        return config.t_final
    return min(candidates)


def _bernoulli(z):
    """B(z) = z / (e^z - 1), stable for small and large arguments."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    out[small] = 1.0 - 0.5 * z[small]
    big = z > 500.0
    out[big] = 0.0
    rest = ~(small | big)
    out[rest] = z[rest] / np.expm1(z[rest])
    return out


def _step(u, ops: _FpOperators, dt):
    drift = ops.h_face(u) / ops.c_t + ops.k_face
    if ops.diff_coeff > 0.0 and np.any(ops.d_sq_face > 0.0):
        # exponentially fitted flux in w = D^2 u; peclet = drift*dx/(diffc*D^2)
        w = ops.d_sq * u
        peclet = drift * ops.dx / (ops.diff_coeff * ops.d_sq_face)
        flux = (ops.diff_coeff / ops.dx) * (
            _bernoulli(peclet) * w[1:] - _bernoulli(-peclet) * w[:-1]
        )
    else:
        # no diffusion: pure upwind transport
        flux = -(np.maximum(drift, 0.0) * u[:-1] + np.minimum(drift, 0.0) * u[1:])
    du = np.diff(np.concatenate(([0.0], flux, [0.0])))
    u_new = u + (dt / ops.dx) * du
    if np.min(u_new) < -_NEG_TOL:
        raise StabilityViolationError(
            f"negative density {np.min(u_new):.3e}; decrease dt"
        )
    return u_new


def fv_step(
    grid: DensityGrid,
    config: FpConfig,
    curves: list[ControlCurve] | None = None,
    dt: float | None = None,
) -> DensityGrid:
    """One explicit finite-volume step with no-flux boundary faces."""
    ops = build_operators(config, curves)
    if dt is None:
        dt = config.dt if config.dt is not None else stable_dt(config, ops)
    return DensityGrid(_step(grid.u, ops, dt), grid.interval)


@dataclass
class FpResult:
    times: np.ndarray
    mass: np.ndarray
    mean: np.ndarray
    second_moment: np.ndarray
    lyapunov: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    grid: DensityGrid
    goal_ref: float
    dt: float


def fv_solve(config: FpConfig, curves: list[ControlCurve] | None = None) -> FpResult:
    """Time-step the density to t_final, recording moments every step.

    The Lyapunov series is (mean - goal)^2 against the single deceiver's
    goal, or against the volume-weighted goal average when several deceivers
    are present.
    """
    ops = build_operators(config, curves)
    dt = config.dt if config.dt is not None else stable_dt(config, ops)
    auto_limit = stable_dt(config, ops)
    if dt > auto_limit * 1.0000001:
        raise StabilityViolationError(
            f"dt={dt:.3e} exceeds the stability limit {auto_limit:.3e}"
        )
    grid = initial_density(config)
    steps = int(np.ceil(config.t_final / dt - 1e-12)) if config.t_final > 0 else 0
    if len(config.liars) == 1:
        goal_ref = config.liars[0].goal
    else:
        w = np.array([l.volume / l.c_l for l in config.liars])
        g = np.array([l.goal for l in config.liars])
        goal_ref = float(np.sum(w * g) / np.sum(w)) if np.sum(w) > 0 else 0.0
    record_every = config.record_every or max(steps // 50, 1)

    times = np.empty(steps + 1)
    mass = np.empty(steps + 1)
    mean = np.empty(steps + 1)
    second = np.empty(steps + 1)
    snap_times = [0.0]
    snaps = [grid.u.copy()]

    u = grid.u
    mids, dx = ops.mids, ops.dx
    for n in range(steps + 1):
        times[n] = n * dt
        mass[n] = np.sum(u) * dx
        mean[n] = np.sum(u * mids) * dx
        second[n] = np.sum(u * mids**2) * dx
        if n == steps:
            break
        u = _step(u, ops, dt)
        if (n + 1) % record_every == 0 or n + 1 == steps:
            snap_times.append((n + 1) * dt)
            snaps.append(u.copy())
    grid.u = u
    lyapunov = (mean - goal_ref) ** 2
    return FpResult(
        times, mass, mean, second, lyapunov,
        np.asarray(snap_times), np.asarray(snaps), grid, goal_ref, dt,
    )


def export_density_csv(result: FpResult, path, config: FpConfig) -> None:
    """Snapshots as `t, u_1..u_L` rows below a grid-descriptor comment."""
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# liardyn-density v1 n_cells={config.n_cells} "
            f"lo={config.interval.lo} hi={config.interval.hi}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"u_{i}" for i in range(1, config.n_cells + 1)])
        for t, u in zip(result.snapshot_times, result.snapshots):
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in u])


def export_moments_csv(result: FpResult, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# liardyn-moments v1\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "mass", "mean", "V"])
        for t, m, mu, v in zip(result.times, result.mass, result.mean, result.lyapunov):
            writer.writerow([f"{t:.17g}", f"{m:.17g}", f"{mu:.17g}", f"{v:.17g}"])
