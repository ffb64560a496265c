"""Free and winding-class-constrained minimization of the discrete energy.

Both solvers are line-search Newton methods on banded Hessians (a permitted
acceleration of plain descent): indefinite Hessians get a diagonal shift until
the banded Cholesky succeeds, steps are accepted by Armijo backtracking, and
every accepted iterate has energy no larger than the previous one.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from .core import TWO_PI, ComplexField, Grid, ModelParams, PolarField, make_grid, to_cartesian
from .energy import (
    BANDWIDTH,
    EnergyBreakdown,
    energy_eps,
    energy_eps_polar,
    energy_polar_values,
    energy_values,
    gradient_values,
    hessian_banded,
    polar_gradient_values,
    polar_hessian_banded,
)
from .errors import Cholesteric1DError, DivergenceError, InvalidParameterError
from .lifting import extract_jump_map, winding_number

logger = logging.getLogger(__name__)

# consecutive steps with energy change below roundoff before giving up
STALL_COUNT = 5
STALL_RTOL = 1e-15


@dataclass(frozen=True)
class SolverOptions:
    """Stopping and line-search settings.

    ``grad_tol`` of None means ``1e-8 * n`` for the grid in use.
    """

    max_iters: int = 200_000
    grad_tol: float | None = None
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    seed: int = 0
    min_step: float = 1e-14

    def __post_init__(self):
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise InvalidParameterError("grad_tol must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise InvalidParameterError("shrink must lie in (0, 1)")
        if not 0.0 < self.sufficient_decrease <= 0.5:
            raise InvalidParameterError("sufficient_decrease must lie in (0, 0.5]")
        if self.max_iters < 0:
            raise InvalidParameterError("max_iters must be nonnegative")

    def tolerance(self, n: int) -> float:
        return 1e-8 * n if self.grad_tol is None else self.grad_tol

    def to_dict(self) -> dict:
        return dict(
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            initial_step=self.initial_step,
            shrink=self.shrink,
            sufficient_decrease=self.sufficient_decrease,
            seed=self.seed,
        )


@dataclass(frozen=True, eq=False)
class MinimizeReport:
    field: ComplexField | PolarField
    breakdown: EnergyBreakdown
    iterations: int
    final_grad_norm: float
    constraint_active: bool
    winding: int | None
    converged: bool
    energies: tuple = ()
    label: str = ""

    @property
    def energy(self) -> float:
        return self.breakdown.total

    def cartesian(self) -> ComplexField:
        return to_cartesian(self.field) if isinstance(self.field, PolarField) else self.field

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "breakdown": self.breakdown.to_dict(),
            "iterations": self.iterations,
            "final_grad_norm": self.final_grad_norm,
            "constraint_active": self.constraint_active,
            "winding": self.winding,
            "converged": self.converged,
            "representation": "polar" if isinstance(self.field, PolarField) else "cartesian",
            "n": self.field.grid.n,
        }


# ---------------------------------------------------------------- linear algebra


def _solve_shifted(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(H + mu I) d = rhs`` with the smallest tried shift that makes H + mu I SPD."""
    diag = ab[BANDWIDTH]
    scale = max(float(np.max(np.abs(diag))), 1e-300)
    mu = 0.0
    while True:
        shifted = ab.copy()
        shifted[BANDWIDTH] += mu
        try:
            factor = cholesky_banded(shifted, lower=False, check_finite=False)
            return cho_solve_banded((factor, False), rhs, check_finite=False)
        except LinAlgError:
            mu = 1e-10 * scale if mu == 0.0 else 10.0 * mu
            if mu > 1e6 * scale:
                raise


def _winding_or_none(u: ComplexField):
    try:
        return winding_number(u)
    except Cholesteric1DError:
        return None


# ---------------------------------------------------------------- free minimization


def minimize_free(init: ComplexField, params: ModelParams, opts: SolverOptions | None = None) -> MinimizeReport:
    """Minimize over interior node values with the end nodes held fixed."""
    opts = opts or SolverOptions()
    grid = init.grid
    h = grid.h
    tol = opts.tolerance(grid.n)
    z = np.array(init.values, dtype=float)
    energy = energy_values(z, h, params)
    if not math.isfinite(energy):
        raise DivergenceError("initial energy is not finite", last_iterate=init)
    trace = [energy]
    converged = False
    stalled = 0
    gnorm = math.inf
    it = 0
    for it in range(opts.max_iters + 1):
        g = gradient_values(z, h, params)[1:-1].ravel()
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            converged = True
            break
        if it == opts.max_iters:
            break
        d = -_solve_shifted(hessian_banded(z, h, params), g)
        slope = float(g @ d)
        if not slope < 0:
            d, slope = -g, -float(g @ g)
        step = opts.initial_step
        while True:
            trial = z.copy()
            trial[1:-1] += step * d.reshape(-1, 2)
            e_trial = energy_values(trial, h, params)
            if math.isfinite(e_trial) and e_trial <= energy + opts.sufficient_decrease * step * slope:
                break
            step *= opts.shrink
            if step < opts.min_step:
                break
        if step < opts.min_step:
            if not math.isfinite(e_trial):
                raise DivergenceError("energy became non-finite", last_iterate=init.with_values(z))
            logger.warning("line search stalled at gradient norm %.3e", gnorm)
            break
        assert e_trial <= energy
        stalled = stalled + 1 if energy - e_trial <= STALL_RTOL * max(1.0, abs(energy)) else 0
        z, energy = trial, e_trial
        trace.append(energy)
        if stalled >= STALL_COUNT:
            logger.warning("energy stagnated at gradient norm %.3e", gnorm)
            break
    u = init.with_values(z)
    return MinimizeReport(
        field=u,
        breakdown=energy_eps(u, params),
        iterations=it,
        final_grad_norm=gnorm,
        constraint_active=False,
        winding=_winding_or_none(u),
        converged=converged,
        energies=tuple(trace),
    )


# ---------------------------------------------------------------- constrained polar minimization


def _interleave(rho, theta):
    return np.column_stack([rho, theta])


def minimize_winding_class(
    M: int,
    rho0: float,
    params: ModelParams,
    opts: SolverOptions | None = None,
    grid: Grid | None = None,
    init: PolarField | None = None,
) -> MinimizeReport:
    """Minimize over ``rho >= rho0`` and ``theta`` with ``theta(1) = 2 pi M + alpha``.

    Projected Newton with an epsilon-active set for the lower bound on rho;
    stops when the projected gradient max-norm is below tolerance.
    """
    if not 0.0 < rho0 < 1.0:
        raise InvalidParameterError("rho0 must lie in (0, 1)")
    opts = opts or SolverOptions()
    grid = grid or (init.grid if init is not None else make_grid(4001))
    h = grid.h
    tol = opts.tolerance(grid.n)
    if init is None:
        rho = np.ones(grid.n)
        theta = (TWO_PI * M + params.alpha) * grid.x
    else:
        rho = np.maximum(np.array(init.rho, dtype=float), rho0)
        theta = np.array(init.theta, dtype=float)
    rho[0] = rho[-1] = 1.0
    theta[0], theta[-1] = 0.0, TWO_PI * M + params.alpha

    def total(r, t):
        return energy_polar_values(r, t, h, params).total

    energy = total(rho, theta)
    trace = [energy]
    converged = False
    stalled = 0
    pgnorm = math.inf
    it = 0
    for it in range(opts.max_iters + 1):
        g_rho, g_theta = polar_gradient_values(rho, theta, h, params)
        g_rho, g_theta = g_rho[1:-1], g_theta[1:-1]
        r_in = rho[1:-1]
        proj_step = r_in - np.maximum(r_in - g_rho, rho0)
        pgnorm = max(float(np.max(np.abs(proj_step))), float(np.max(np.abs(g_theta))))
        if pgnorm <= tol:
            converged = True
            break
        if it == opts.max_iters:
            break
        margin = min(1e-3, pgnorm)
        active = (r_in <= rho0 + margin) & (g_rho > 0)
        ab = polar_hessian_banded(rho, theta, h, params)
        g = _interleave(g_rho, g_theta).ravel()
        fixed = np.zeros(g.size, dtype=bool)
        fixed[0::2] = active
        if fixed.any():
            size = g.size
            for k in range(BANDWIDTH):
                off = BANDWIDTH - k
                cols = np.arange(off, size)
                kill = fixed[cols] | fixed[cols - off]
                ab[k, off:][kill] = 0.0
            ab[BANDWIDTH, fixed] = 1.0
        d = -_solve_shifted(ab, g)
        d[fixed] = -g[fixed]
        if not float(g[~fixed] @ d[~fixed]) < 0:
            d = -g
        d_rho, d_theta = d[0::2], d[1::2]
        step = opts.initial_step
        while True:
            r_trial = rho.copy()
            t_trial = theta.copy()
            r_trial[1:-1] = np.maximum(r_in + step * d_rho, rho0)
            t_trial[1:-1] += step * d_theta
            e_trial = total(r_trial, t_trial)
            moved = _interleave(r_in - r_trial[1:-1], -step * d_theta).ravel()
            decrease = step * float(-(g[~fixed] @ d[~fixed])) + float(g[fixed] @ moved[fixed])
            if math.isfinite(e_trial) and e_trial <= energy - opts.sufficient_decrease * decrease:
                break
            step *= opts.shrink
            if step < opts.min_step:
                break
        if step < opts.min_step:
            if not math.isfinite(e_trial):
                raise DivergenceError(
                    "energy became non-finite",
                    last_iterate=PolarField(grid, rho, theta, M, params.alpha),
                )
            logger.warning("projected line search stalled at %.3e", pgnorm)
            break
        assert e_trial <= energy
        stalled = stalled + 1 if energy - e_trial <= STALL_RTOL * max(1.0, abs(energy)) else 0
        rho, theta, energy = r_trial, t_trial, e_trial
        trace.append(energy)
        if stalled >= STALL_COUNT:
            logger.warning("energy stagnated at projected gradient norm %.3e", pgnorm)
            break

    p = PolarField(grid, rho, theta, M, params.alpha)
    return MinimizeReport(
        field=p,
        breakdown=energy_eps_polar(p, params),
        iterations=it,
        final_grad_norm=pgnorm,
        constraint_active=bool(np.any(p.rho[1:-1] <= rho0 + 1e-12)),
        winding=_winding_or_none(to_cartesian(p)),
        converged=converged,
        energies=tuple(trace),
    )


# ---------------------------------------------------------------- multistart


@dataclass(frozen=True)
class UniformTwist:
    """Start from ``exp(i (2 pi M + alpha) x)``."""

    M: int

    @property
    def label(self) -> str:
        return f"uniform_twist({self.M})"

    def build(self, params: ModelParams, grid: Grid) -> ComplexField:
        phase = (TWO_PI * self.M + params.alpha) * grid.x
        return ComplexField(grid, np.column_stack([np.cos(phase), np.sin(phase)]), params.alpha)


@dataclass(frozen=True)
class SeededDip:
    """Uniform twist with a Gaussian modulus dip at ``x0`` and a phase step across it.

    The phase is ``(2 pi M + alpha - step) x + step * ramp(x)`` with a tanh ramp
    of width ``sqrt(eps)`` normalised to run from 0 to 1, so it ends at
    ``2 pi M + alpha``. The dip has depth 0.95 and width ``4 sqrt(eps)``.
    """

    M: int
    step: float
    x0: float = 0.5
    depth: float = 0.95

    @property
    def label(self) -> str:
        return f"seeded_dip({self.M},{self.step:.6g},{self.x0:.6g})"

    def build(self, params: ModelParams, grid: Grid) -> ComplexField:
        x = grid.x
        root = math.sqrt(params.eps)
        rho = 1.0 - self.depth * np.exp(-(((x - self.x0) / (4.0 * root)) ** 2))
        raw = np.tanh((x - self.x0) / root)
        ramp = (raw - raw[0]) / (raw[-1] - raw[0])
        phase = (TWO_PI * self.M + params.alpha - self.step) * x + self.step * ramp
        return ComplexField(grid, np.column_stack([rho * np.cos(phase), rho * np.sin(phase)]), params.alpha)


def default_strategies(params: ModelParams) -> list:
    """Starts covering the three candidate minimizer families."""
    N = params.N
    return [
        UniformTwist(N - 1),
        UniformTwist(N),
        SeededDip(N, params.alpha),
        SeededDip(N - 1, params.alpha - TWO_PI),
    ]


def _run_start(args):
    strategy, params, opts, grid = args
    try:
        report = minimize_free(strategy.build(params, grid), params, opts)
    except Cholesteric1DError as exc:
        return strategy.label, exc
    jm = extract_jump_map(report.field)
    return strategy.label, (report, jm.jump_count)


def run_starts(params, strategies, opts=None, grid=None, jobs: int = 1):
    """Run every start; returns ``[(label, (report, jumps) or exception)]`` in order."""
    opts = opts or SolverOptions()
    grid = grid or make_grid(4001)
    tasks = [(s, params, opts, grid) for s in strategies]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_start, tasks))
    return [_run_start(t) for t in tasks]


def multistart_global(
    params: ModelParams,
    strategies: list,
    opts: SolverOptions | None = None,
    grid: Grid | None = None,
    jobs: int = 1,
) -> MinimizeReport:
    """Lowest-energy result over all starts.

    Energies within 1e-10 tie; ties go to fewer jumps, then lower winding.
    """
    if not strategies:
        raise InvalidParameterError("at least one strategy is required")
    results = run_starts(params, strategies, opts, grid, jobs)
    good = [(label, r) for label, r in results if not isinstance(r, Exception)]
    if not good:
        raise results[0][1]
    best_energy = min(r[0].energy for _, r in good)
    tied = [(label, r) for label, r in good if r[0].energy <= best_energy + 1e-10]

    def key(item):
        report, jumps = item[1]
        winding = report.winding if report.winding is not None else math.inf
        return (jumps, winding, report.energy)

    label, (report, _) = min(tied, key=key)
    return MinimizeReport(
        field=report.field,
        breakdown=report.breakdown,
        iterations=report.iterations,
        final_grad_norm=report.final_grad_norm,
        constraint_active=report.constraint_active,
        winding=report.winding,
        converged=report.converged,
        energies=report.energies,
        label=label,
    )
