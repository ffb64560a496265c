"""Closed-form predictions for the small-eps limit and the tools that test them.

Covers minimizer classification for the limit energies, predicted local and
saddle energies, recovery-sequence construction, the first integral for the
phase of constrained minimizers, the microscale variable of the
unbounded-twist regime, eps-extrapolation and phase-diagram sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    JUMP_COST,
    TWO_PI,
    ComplexField,
    Grid,
    JumpMap,
    ModelParams,
    PolarField,
    jump_map_from_function,
    make_grid,
    wrap_to_pi,
)
from .energy import _polar_local_gradient, energy_eps
from .errors import (
    InvalidParameterError,
    NoFitError,
    OverlapError,
    ResolutionError,
    VanishingModulusError,
)

# twice the jump cost: the threshold in the no-jump conditions
JUMP_THRESHOLD = 2.0 * JUMP_COST
TIE_TOL = 1e-12

NO_JUMP_AT_N = "NoJumpAtN"
NO_JUMP_AT_N_MINUS_1 = "NoJumpAtNminus1"
ONE_JUMP = "OneJumpFamily"
TIE = "Tie"
KINDS = (NO_JUMP_AT_N, NO_JUMP_AT_N_MINUS_1, ONE_JUMP, TIE)


@dataclass(frozen=True)
class Classification:
    """Minimizer family of a limit energy.

    ``branches`` lists every family attaining the minimum (more than one only
    for ties). ``winding`` is the no-jump winding relative to the reference
    count (N, or the integer part of the twist in the rescaled regime) when a
    no-jump family wins uniquely. ``boundary_distance`` is the Euclidean
    distance of ``(L, alpha)`` to the nearest classification boundary; it is
    nonnegative on both sides of a boundary.
    """

    kind: str
    predicted_energy: float
    boundary_distance: float
    branches: tuple = ()
    winding: int | None = None

    def accepts(self, observed: str) -> bool:
        return observed in (self.branches or (self.kind,))


# ---------------------------------------------------------------- classification boundaries


def _boundary_polylines() -> list[np.ndarray]:
    """Boundary curves in the ``(L, y)`` plane with ``y`` the wrapped twist mismatch.

    No-jump versus jump: ``L y^2 = 4 sqrt(2)/3`` for ``|y| <= pi``; the two
    no-jump windings exchange along ``y = +-pi`` where both beat a jump.
    """
    L_corner = JUMP_THRESHOLD / math.pi**2
    y = np.geomspace(math.pi, 1e-3, 6000)
    L = JUMP_THRESHOLD / y**2
    vertical_L = np.linspace(0.0, L_corner, 400)
    lines = []
    for sign in (1.0, -1.0):
        lines.append(np.column_stack([L, sign * y]))
        lines.append(np.column_stack([vertical_L, np.full_like(vertical_L, sign * math.pi)]))
    return lines


_BOUNDARIES = _boundary_polylines()


def _point_polyline_distance(point: np.ndarray, line: np.ndarray) -> float:
    a, b = line[:-1], line[1:]
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", point - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.hypot(*(closest - point).T)))


def boundary_distance(L: float, alpha: float, A: float = 0.0) -> float:
    """Distance in the ``(L, alpha)`` plane to the classification boundary of the limit energy."""
    best = math.inf
    for k in (-1, 0, 1, 2):
        shift = TWO_PI * (A + k)
        point = np.array([L, alpha - shift])
        for line in _BOUNDARIES:
            best = min(best, _point_polyline_distance(point, line))
    return best


def _pick(candidates: dict) -> tuple[str, float, tuple]:
    """Argmin over named energies with ties inside ``TIE_TOL``."""
    low = min(candidates.values())
    winners = tuple(k for k, v in candidates.items() if v <= low + TIE_TOL)
    return (winners[0] if len(winners) == 1 else TIE), low, winners


def classify_e0(L: float, alpha: float) -> Classification:
    """Global minimizer family of the limit energy with integer preferred twist."""
    if not L > 0:
        raise InvalidParameterError("L must be positive")
    candidates = {
        NO_JUMP_AT_N: 0.5 * L * alpha**2,
        NO_JUMP_AT_N_MINUS_1: 0.5 * L * (TWO_PI - alpha) ** 2,
        ONE_JUMP: JUMP_COST,
    }
    kind, energy, winners = _pick(candidates)
    winding = {NO_JUMP_AT_N: 0, NO_JUMP_AT_N_MINUS_1: -1}.get(kind)
    return Classification(kind, energy, boundary_distance(L, alpha), winners, winding)


def classify_e0A(L: float, alpha: float, A: float) -> Classification:
    """Global minimizer family of the rescaled limit energy with fractional twist ``A``.

    The no-jump winding is the nearest integer to ``A - alpha / 2 pi``; an exact
    half-integer is reported as a two-branch tie. ``NoJumpAtN`` here means the
    no-jump state with that winding, recorded in ``winding``.
    """
    if not L > 0:
        raise InvalidParameterError("L must be positive")
    if not 0.0 <= A <= 1.0:
        raise InvalidParameterError("A must lie in [0, 1]")
    target = A - alpha / TWO_PI
    lower = math.floor(target)
    if target - lower == 0.5:
        windings = (lower, lower + 1)
    else:
        windings = (int(round(target)),)
    no_jump = [0.5 * L * (TWO_PI * (w - A) + alpha) ** 2 for w in windings]
    dist = boundary_distance(L, alpha, A)
    e_no_jump = min(no_jump)
    if JUMP_COST < e_no_jump - TIE_TOL:
        return Classification(ONE_JUMP, JUMP_COST, dist, (ONE_JUMP,), None)
    if abs(JUMP_COST - e_no_jump) <= TIE_TOL:
        return Classification(TIE, JUMP_COST, dist, (NO_JUMP_AT_N, ONE_JUMP), windings[0])
    if len(windings) == 2:
        return Classification(TIE, e_no_jump, dist, (NO_JUMP_AT_N,), None)
    return Classification(NO_JUMP_AT_N, e_no_jump, dist, (NO_JUMP_AT_N,), windings[0])


# ---------------------------------------------------------------- predicted values


def predicted_local_energy(M: int, params: ModelParams) -> float:
    """Limit energy of the constant-twist state in winding class ``M``."""
    return 0.5 * params.L * (TWO_PI * (M - params.N) + params.alpha) ** 2


def predicted_saddle_energy(M: int, params: ModelParams) -> float:
    """Limit mountain-pass level leaving winding class ``M``."""
    return 2.0 * math.pi**2 * params.L * (params.N - M - params.alpha / TWO_PI) ** 2 + JUMP_COST


def predicted_constant(M: int, params: ModelParams) -> float:
    """Limit of the first-integral constant for winding class ``M``."""
    return TWO_PI * params.L * (M - params.N) + params.L * params.alpha


def barrier_lower_bound(M: int, params: ModelParams, slack: float) -> float:
    """Energy level every path leaving class ``M`` must exceed, less ``slack``."""
    return predicted_saddle_energy(M, params) - slack


# ---------------------------------------------------------------- first integral


def _cell_rho_squared(rho: np.ndarray) -> np.ndarray:
    """Cell value of rho^2 consistent with the polar cell rule: rho_i rho_{i+1}."""
    return rho[:-1] * rho[1:]


def predicted_theta_profile(rho, M: int, params: ModelParams) -> np.ndarray:
    """Cell values of theta' from the first integral, with its constant chosen so
    that the phase reaches ``2 pi M + alpha`` exactly."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise VanishingModulusError("the first-integral profile needs rho > 0")
    h = 1.0 / (rho.size - 1)
    P = _cell_rho_squared(rho)
    denom = params.L * P**2 + params.eps * P
    C = predicted_profile_constant(rho, M, params)
    return (params.preferred_twist * params.L * P + C) / denom


def predicted_profile_constant(rho, M: int, params: ModelParams) -> float:
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise VanishingModulusError("the first-integral profile needs rho > 0")
    h = 1.0 / (rho.size - 1)
    P = _cell_rho_squared(rho)
    denom = params.L * P**2 + params.eps * P
    total = TWO_PI * M + params.alpha
    return float((total - h * np.sum(params.preferred_twist * params.L * P / denom)) / (h * np.sum(1.0 / denom)))


def first_integral_flux(p: PolarField, params: ModelParams) -> np.ndarray:
    """Derivative of each cell energy with respect to its phase increment.

    Interior phase stationarity says consecutive fluxes agree, so the flux is
    the discrete constant of integration.
    """
    _, _, dD, _ = _polar_local_gradient(p.rho, p.theta, p.grid.h, params)
    return dD


def fit_constant(p: PolarField, params: ModelParams) -> float:
    """Cell-averaged first-integral constant of a converged field."""
    return float(np.mean(first_integral_flux(p, params)))


def theta_profile_residual(p: PolarField, params: ModelParams) -> float:
    """Max deviation of the cell phase slope from the first-integral profile with fitted constant."""
    C = fit_constant(p, params)
    P = _cell_rho_squared(p.rho)
    profile = (params.preferred_twist * params.L * P + C) / (params.L * P**2 + params.eps * P)
    slope = np.diff(p.theta) / p.grid.h
    return float(np.max(np.abs(slope - profile)))


# ---------------------------------------------------------------- recovery sequences


def _dip_profile(distance: np.ndarray, eps: float) -> np.ndarray:
    """Modulus at ``distance`` from a dip centre: zero plateau of half-width
    eps^2, then a tanh layer normalised to reach 1 after sqrt(eps)."""
    width = math.sqrt(eps)
    s = distance - eps**2
    scale = math.sqrt(2.0) * eps
    rho = np.tanh(np.clip(s, 0.0, width) / scale) / math.tanh(width / scale)
    rho[s <= 0] = 0.0
    return rho


def _piece_phase(x_piece: np.ndarray, th_piece: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.interp(x, x_piece, th_piece)
    left_slope = (th_piece[1] - th_piece[0]) / (x_piece[1] - x_piece[0])
    right_slope = (th_piece[-1] - th_piece[-2]) / (x_piece[-1] - x_piece[-2])
    lo, hi = x < x_piece[0], x > x_piece[-1]
    out[lo] = th_piece[0] + left_slope * (x[lo] - x_piece[0])
    out[hi] = th_piece[-1] + right_slope * (x[hi] - x_piece[-1])
    return out


def recovery_resolution_ok(eps: float, grid: Grid) -> bool:
    return grid.h <= eps / 8.0


def build_recovery_sequence(j: JumpMap, eps: float, grid: Grid) -> ComplexField:
    """Field approximating ``j`` at parameter ``eps``.

    Each jump becomes a modulus dip: zero on ``|x - c| <= eps^2`` (always
    including the grid node nearest the jump), a tanh layer of width
    ``sqrt(eps)`` on either side, and the phase switching pieces at ``c``.
    A jump at 0 or 1 is realised by a dip centred ``sqrt(eps) + eps^2`` inside
    the interval, with the boundary phase on the outer side.
    """
    if not recovery_resolution_ok(eps, grid):
        raise ResolutionError(f"grid spacing {grid.h:.3g} exceeds eps/8 = {eps / 8:.3g}")
    x = grid.x
    reach = math.sqrt(eps) + eps**2
    centers = []
    for t in j.jumps:
        if t == 0.0:
            c = reach
        elif t == 1.0:
            c = 1.0 - reach
        else:
            c = t
        centers.append(x[int(np.argmin(np.abs(x - c)))])
    for a, b in zip(centers[:-1], centers[1:]):
        if b - a < 4.0 * math.sqrt(eps):
            raise OverlapError(f"jumps at {a:.4g} and {b:.4g} are closer than 4 sqrt(eps)")
    for t, c in zip(j.jumps, centers):
        if 0.0 < t < 1.0 and (c - reach < 0.0 or c + reach > 1.0):
            raise OverlapError(f"jump at {t:.4g} is within sqrt(eps) of the boundary")

    rho = np.ones(grid.n)
    for c in centers:
        rho = np.minimum(rho, _dip_profile(np.abs(x - c), eps))

    interior_centers = [c for t, c in zip(j.jumps, centers) if 0.0 < t < 1.0]
    piece_index = np.searchsorted(np.asarray(interior_centers), x, side="right")
    theta = np.empty(grid.n)
    for k, (xp, thp) in enumerate(j.pieces):
        mask = piece_index == k
        theta[mask] = _piece_phase(xp, thp, x[mask])
    if j.jumps and j.jumps[0] == 0.0:
        theta[x <= centers[0]] = 0.0
    if j.jumps and j.jumps[-1] == 1.0:
        theta[x > centers[-1]] = j.alpha
    values = np.column_stack([rho * np.cos(theta), rho * np.sin(theta)])
    return ComplexField(grid, values, j.alpha)


def one_jump_map(grid: Grid, N: float, alpha: float, x0: float = 0.5) -> JumpMap:
    """Twist ``2 pi N`` on both sides of one jump at ``x0`` that absorbs ``alpha``."""
    integer = float(N).is_integer()

    def phase(xs, k):
        base = TWO_PI * N * xs
        if k == 0:
            return base
        return base + alpha - (0.0 if integer else TWO_PI * N)

    return jump_map_from_function(grid, [x0], phase, alpha)


def no_jump_map(grid: Grid, slope: float, alpha: float) -> JumpMap:
    return jump_map_from_function(grid, [], lambda xs, k: slope * xs, alpha)


# ---------------------------------------------------------------- unbounded twist


def rescale_to_w(u: ComplexField, params: ModelParams) -> ComplexField:
    """Remove the integer part of the fast twist: ``w = u exp(-2 pi i K x)``."""
    K = params.twist_floor
    z = u.as_complex * np.exp(-1j * TWO_PI * K * u.grid.x)
    return ComplexField.from_complex(u.grid, z, u.alpha, enforced=False)


def rescale_from_w(w: ComplexField, params: ModelParams) -> ComplexField:
    K = params.twist_floor
    z = w.as_complex * np.exp(1j * TWO_PI * K * w.grid.x)
    return ComplexField.from_complex(w.grid, z, w.alpha, enforced=False)


def microscale_v(theta, eps: float, beta: float) -> np.ndarray:
    return eps**beta * np.asarray(theta, dtype=float) / TWO_PI


def h1_error(v, grid: Grid, window: tuple[float, float] = (0.2, 0.8)) -> float:
    """``(sum over cells inside window of h (v' - 1)^2)^(1/2)``."""
    v = np.asarray(v, dtype=float)
    mid = grid.cell_midpoints
    inside = (mid >= window[0]) & (mid <= window[1])
    slope = np.diff(v) / grid.h
    return float(math.sqrt(np.sum(grid.h * (slope[inside] - 1.0) ** 2)))


def weak_probe(u: ComplexField, test_function) -> float:
    """``|int u conj(phi)|`` by the trapezoid rule."""
    phi = np.asarray(test_function(u.grid.x), dtype=complex)
    return float(abs(np.trapezoid(u.as_complex * np.conj(phi), u.grid.x)))


def eps_for_fraction(K: int, A: float, beta: float) -> float:
    """The eps with ``eps^(-beta) = K + A``."""
    return (K + A) ** (-1.0 / beta)


# ---------------------------------------------------------------- extrapolation


def extrapolate_eps(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Fit ``value = limit + c eps^order`` and return ``(limit, order)``.

    The order comes from a log-log regression of successive differences
    against eps; limit and c then follow by linear least squares.
    """
    if len(pairs) < 3:
        raise NoFitError("need at least 3 (eps, value) pairs", data=list(pairs))
    eps = np.array([p[0] for p in pairs], dtype=float)
    vals = np.array([p[1] for p in pairs], dtype=float)
    if np.any(np.diff(eps) >= 0) or np.any(eps <= 0):
        raise NoFitError("eps must be positive and strictly decreasing", data=list(pairs))
    diffs = np.diff(vals)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.all(np.abs(diffs) <= 1e-14 * scale):
        return float(vals[-1]), math.inf
    signs = np.sign(diffs)
    if np.any(signs == 0) or np.any(signs != signs[0]):
        raise NoFitError("successive differences change sign", data=list(pairs))
    mags = np.abs(diffs)
    if np.any(np.diff(mags) >= 0):
        raise NoFitError("successive differences do not shrink", data=list(pairs))
    order = float(np.polyfit(np.log(eps[:-1]), np.log(mags), 1)[0])
    if not order > 0:
        raise NoFitError("fitted order is not positive", data=list(pairs))
    design = np.column_stack([np.ones_like(eps), eps**order])
    (limit, _), *_ = np.linalg.lstsq(design, vals, rcond=None)
    return float(limit), order


def observed_order(eps: Sequence[float], errors: Sequence[float]) -> float:
    """Slope of log(error) against log(eps)."""
    return float(np.polyfit(np.log(np.asarray(eps)), np.log(np.abs(np.asarray(errors))), 1)[0])


# ---------------------------------------------------------------- sweeps

PHASE_TABLE_COLUMNS = (
    "L",
    "alpha",
    "predicted",
    "observed",
    "energy",
    "jumps",
    "winding",
    "boundary_distance",
    "status",
)
INTERIOR_DISTANCE = 0.2


def observed_kind(jumps: int, relative_winding: int | None) -> str:
    """Family of a computed minimizer from its jump count and winding relative to N."""
    if jumps > 0:
        return ONE_JUMP
    if relative_winding == 0:
        return NO_JUMP_AT_N
    if relative_winding == -1:
        return NO_JUMP_AT_N_MINUS_1
    return f"NoJumpWinding{relative_winding}"


def recovery_competitor_energy(params: ModelParams, grid: Grid) -> float:
    """Lowest energy among recovery fields of the three candidate limit minimizers."""
    candidates = [
        no_jump_map(grid, TWO_PI * params.N + params.alpha, params.alpha),
        no_jump_map(grid, TWO_PI * (params.N - 1) + params.alpha, params.alpha),
        one_jump_map(grid, params.N, params.alpha),
    ]
    return min(energy_eps(build_recovery_sequence(j, params.eps, grid), params).total for j in candidates)


def phase_diagram_cell(L: float, alpha: float, template: ModelParams, opts=None, grid=None) -> dict:
    """One sweep cell: global minimization, observed family and the prediction."""
    from .lifting import extract_jump_map
    from .minimize import default_strategies, multistart_global

    grid = grid or make_grid(4001)
    params = template.replace(L=float(L), alpha=float(alpha))
    pred = classify_e0(params.L, params.alpha)
    row = {
        "L": params.L,
        "alpha": params.alpha,
        "predicted": pred.kind,
        "observed": "",
        "energy": math.nan,
        "jumps": -1,
        "winding": "",
        "boundary_distance": pred.boundary_distance,
        "status": "failed",
    }
    try:
        report = multistart_global(params, default_strategies(params), opts, grid)
    except Exception as exc:  # recorded per cell, not raised
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    jm = extract_jump_map(report.field)
    relative = None if report.winding is None else report.winding - params.N
    row["observed"] = observed_kind(jm.jump_count, relative)
    row["energy"] = report.energy
    row["jumps"] = jm.jump_count
    row["winding"] = "" if report.winding is None else report.winding
    row["status"] = "agree" if pred.accepts(row["observed"]) else "disagree"
    row["jump_locations"] = list(jm.jumps)
    row["recovery_energy"] = recovery_competitor_energy(params, grid)
    row["converged"] = report.converged
    row["start"] = report.label
    return row


def _cell_task(args):
    return phase_diagram_cell(*args)


def phase_diagram_sweep(
    L_values: Iterable[float],
    alpha_values: Iterable[float],
    template: ModelParams,
    opts=None,
    grid: Grid | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Rows in L-major order; see ``PHASE_TABLE_COLUMNS`` for the table schema."""
    tasks = [(L, a, template, opts, grid) for L in L_values for a in alpha_values]
    return _map(_cell_task, tasks, jobs)


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def sweep_summary(rows: list[dict], threshold: float = INTERIOR_DISTANCE) -> dict:
    interior = [r for r in rows if r["boundary_distance"] > threshold]
    agree = sum(r["status"] == "agree" for r in interior)
    return {
        "cells": len(rows),
        "interior_cells": len(interior),
        "interior_agree": agree,
        "interior_agreement": agree / len(interior) if interior else math.nan,
        "failed": sum(r["status"] == "failed" for r in rows),
    }


def flip_location(rows: list[dict], L: float) -> tuple[float, float] | None:
    """Bracket ``(alpha_lo, alpha_hi)`` of the first no-jump to jump change along column ``L``."""
    col = sorted((r for r in rows if math.isclose(r["L"], L)), key=lambda r: r["alpha"])
    for a, b in zip(col[:-1], col[1:]):
        if a["jumps"] == 0 and b["jumps"] > 0:
            return a["alpha"], b["alpha"]
    return None


def twist_strategies(params: ModelParams) -> list:
    """Starts for the unbounded-twist regime around the integer part K of the twist."""
    from .minimize import SeededDip, UniformTwist

    K = params.twist_floor
    A = params.twist_fraction
    starts = [UniformTwist(K + m) for m in (-1, 0, 1)]
    for m in (-1, 0, 1):
        step = TWO_PI * (K + m) + params.alpha - TWO_PI * (K + A)
        if abs(step) < TWO_PI:
            starts.append(SeededDip(K + m, step))
    return starts


def twist_cell(L: float, alpha: float, A: float, K: int, beta: float, opts=None, n: int | None = None) -> dict:
    """Global minimization in the unbounded-twist regime at ``eps^(-beta) = K + A``."""
    from .lifting import extract_jump_map
    from .minimize import multistart_global

    eps = eps_for_fraction(K, A, beta)
    params = ModelParams(eps, float(L), 0, float(alpha), beta=beta)
    grid = make_grid(n or max(4001, int(math.ceil(4.0 / eps)) + 1))
    pred = classify_e0A(params.L, params.alpha, params.twist_fraction)
    row = {
        "L": params.L,
        "alpha": params.alpha,
        "A": params.twist_fraction,
        "eps": eps,
        "predicted": pred.kind,
        "predicted_winding": pred.winding,
        "boundary_distance": pred.boundary_distance,
        "status": "failed",
    }
    try:
        report = multistart_global(params, twist_strategies(params), opts, grid)
    except Exception as exc:  # recorded per cell
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    jm = extract_jump_map(report.field)
    relative = None if report.winding is None else report.winding - params.twist_floor
    if jm.jump_count > 0:
        observed = ONE_JUMP
    else:
        observed = NO_JUMP_AT_N
    ok = pred.accepts(observed)
    if ok and observed == NO_JUMP_AT_N and pred.winding is not None:
        ok = relative == pred.winding
    row.update(
        observed=observed,
        observed_winding=relative,
        energy=report.energy,
        jumps=jm.jump_count,
        status="agree" if ok else "disagree",
    )
    return row


def _twist_task(args):
    return twist_cell(*args)


def twist_sweep(L_values, alpha_values, A_values, K: int, beta: float, opts=None, jobs: int = 1) -> list[dict]:
    tasks = [(L, a, A, K, beta, opts) for L in L_values for a in alpha_values for A in A_values]
    return _map(_twist_task, tasks, jobs)
