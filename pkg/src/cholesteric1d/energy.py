"""Discrete energies, exact gradients and banded Hessians.

Every energy is a sum over cells ``[x_c, x_{c+1}]`` of ``h * f(a, b)`` where
``a``, ``b`` are the Cartesian values at the two cell ends:

    f = eps/2 |(b - a)/h|^2 + (|(a + b)/2|^2 - 1)^2 / (4 eps) + L/2 (t - tau)^2

with twist density ``t = (a1 b2 - a2 b1) / h``, which equals the midpoint rule
``ubar_1 u_2' - ubar_2 u_1'`` exactly. The polar and rescaled energies are the
same cell rule evaluated on rotated cell arguments, so all three agree to
rounding on corresponding fields.

Hessians are returned in LAPACK upper-banded storage over interleaved node
unknowns ``(z_0, z_0', z_1, z_1', ...)`` with the two boundary nodes removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import JUMP_COST, ComplexField, JumpMap, ModelParams, PolarField
from .errors import InvalidJumpMapError, InvalidParameterError

BANDWIDTH = 3


@dataclass(frozen=True)
class EnergyBreakdown:
    gradient_term: float
    potential_term: float
    twist_term: float
    total: float

    @classmethod
    def from_terms(cls, gradient_term, potential_term, twist_term) -> "EnergyBreakdown":
        g, p, t = float(gradient_term), float(potential_term), float(twist_term)
        return cls(g, p, t, g + p + t)

    def to_dict(self) -> dict:
        return {
            "gradient": self.gradient_term,
            "potential": self.potential_term,
            "twist": self.twist_term,
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnergyBreakdown":
        return cls(data["gradient"], data["potential"], data["twist"], data["total"])


# ---------------------------------------------------------------- cell kernel


def _cell_terms(a, b, h, eps, L, tau):
    diff = b - a
    s = 0.25 * np.sum((a + b) ** 2, axis=1)
    t = (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) / h
    grad = eps / (2.0 * h) * np.sum(diff**2)
    pot = h / (4.0 * eps) * np.sum((s - 1.0) ** 2)
    twist = 0.5 * L * h * np.sum((t - tau) ** 2)
    return grad, pot, twist


def _cell_gradient(a, b, h, eps, L, tau):
    """Derivatives of ``h f`` with respect to ``a`` and ``b``, shape (cells, 2) each."""
    m = a + b
    s = 0.25 * np.sum(m**2, axis=1)
    t = (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) / h
    d = (eps / h) * (b - a)
    pot = (h * (s - 1.0) / (4.0 * eps))[:, None] * m
    tw = L * (t - tau)
    ga = -d + pot + tw[:, None] * np.column_stack([b[:, 1], -b[:, 0]])
    gb = d + pot + tw[:, None] * np.column_stack([-a[:, 1], a[:, 0]])
    return ga, gb


_EYE_PAIR = np.block([[np.eye(2), -np.eye(2)], [-np.eye(2), np.eye(2)]])
_SUM_PAIR = 0.5 * np.block([[np.eye(2), np.eye(2)], [np.eye(2), np.eye(2)]])
_TWIST_CURV = np.zeros((4, 4))
_TWIST_CURV[0, 3] = _TWIST_CURV[3, 0] = 1.0
_TWIST_CURV[1, 2] = _TWIST_CURV[2, 1] = -1.0


def _cell_hessian(a, b, h, eps, L, tau, gauss_newton=False):
    """4x4 Hessians of ``h f`` in ``(a1, a2, b1, b2)``, shape (cells, 4, 4).

    ``gauss_newton`` drops the curvature of ``s`` and ``t``; the remainder is
    positive semidefinite.
    """
    m = a + b
    s = 0.25 * np.sum(m**2, axis=1)
    t = (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) / h
    grad_s = 0.5 * np.concatenate([m, m], axis=1)
    w = np.column_stack([b[:, 1], -b[:, 0], -a[:, 1], a[:, 0]])
    H = (eps / h) * np.broadcast_to(_EYE_PAIR, (a.shape[0], 4, 4)).copy()
    H += (h / (2.0 * eps)) * grad_s[:, :, None] * grad_s[:, None, :]
    H += (L / h) * w[:, :, None] * w[:, None, :]
    if not gauss_newton:
        H += (h * (s - 1.0) / (2.0 * eps))[:, None, None] * _SUM_PAIR
        H += (L * (t - tau))[:, None, None] * _TWIST_CURV
    return H


def _banded_from_cells(blocks: np.ndarray) -> np.ndarray:
    """Assemble cell 4x4 blocks into upper-banded storage with boundary nodes removed."""
    cells = blocks.shape[0]
    size = 2 * (cells + 1)
    ab = np.zeros((BANDWIDTH + 1, size))
    for i in range(4):
        for j in range(i, 4):
            cols = 2 * np.arange(cells) + j
            np.add.at(ab[BANDWIDTH + i - j], cols, blocks[:, i, j])
    ab = ab[:, 2:-2].copy()
    # entries that referred to the dropped first node
    for k in range(BANDWIDTH + 1):
        ab[k, : BANDWIDTH - k] = 0.0
    return ab


def _check_beta(params: ModelParams):
    if params.beta is None or not (0.0 < params.beta < 0.5):
        raise InvalidParameterError("the rescaled energy needs 0 < beta < 1/2")


def _pairs(values):
    return values[:-1], values[1:]


# ---------------------------------------------------------------- Cartesian


def energy_eps(u: ComplexField, params: ModelParams) -> EnergyBreakdown:
    a, b = _pairs(u.values)
    return EnergyBreakdown.from_terms(
        *_cell_terms(a, b, u.grid.h, params.eps, params.L, params.preferred_twist)
    )


def energy_values(values: np.ndarray, h: float, params: ModelParams) -> float:
    """Total energy of raw ``(n, 2)`` node values; used by the solvers."""
    a, b = _pairs(values)
    return sum(_cell_terms(a, b, h, params.eps, params.L, params.preferred_twist))


def gradient_values(values: np.ndarray, h: float, params: ModelParams) -> np.ndarray:
    a, b = _pairs(values)
    ga, gb = _cell_gradient(a, b, h, params.eps, params.L, params.preferred_twist)
    g = np.zeros_like(values)
    g[:-1] += ga
    g[1:] += gb
    g[0] = g[-1] = 0.0
    return g


def grad_energy_eps(u: ComplexField, params: ModelParams) -> np.ndarray:
    """Derivative of the total energy with respect to each node value; end rows are zero."""
    return gradient_values(u.values, u.grid.h, params)


def hessian_banded(values: np.ndarray, h: float, params: ModelParams, gauss_newton=False) -> np.ndarray:
    a, b = _pairs(values)
    blocks = _cell_hessian(a, b, h, params.eps, params.L, params.preferred_twist, gauss_newton)
    return _banded_from_cells(blocks)


# ---------------------------------------------------------------- polar

# Each polar cell is rotated so that its left value lies on the positive real
# axis: a = (p, 0), b = (q cos D, q sin D) with p = rho_i, q = rho_{i+1},
# D = theta_{i+1} - theta_i. The cell rule is rotation invariant.


def _polar_cells(rho, theta):
    p, q = rho[:-1], rho[1:]
    delta = np.diff(theta)
    c, s = np.cos(delta), np.sin(delta)
    a = np.column_stack([p, np.zeros_like(p)])
    b = np.column_stack([q * c, q * s])
    return a, b, q, c, s


def energy_polar_values(rho, theta, h, params: ModelParams) -> EnergyBreakdown:
    a, b, *_ = _polar_cells(rho, theta)
    return EnergyBreakdown.from_terms(
        *_cell_terms(a, b, h, params.eps, params.L, params.preferred_twist)
    )


def energy_eps_polar(p: PolarField, params: ModelParams) -> EnergyBreakdown:
    return energy_polar_values(p.rho, p.theta, p.grid.h, params)


def _polar_local_gradient(rho, theta, h, params):
    """Gradient in local cell variables ``(p, q, D)``."""
    a, b, q, c, s = _polar_cells(rho, theta)
    ga, gb = _cell_gradient(a, b, h, params.eps, params.L, params.preferred_twist)
    dp = ga[:, 0]
    dq = gb[:, 0] * c + gb[:, 1] * s
    dD = q * (-gb[:, 0] * s + gb[:, 1] * c)
    return dp, dq, dD, (a, b, q, c, s, gb)


def polar_gradient_values(rho, theta, h, params: ModelParams):
    dp, dq, dD, _ = _polar_local_gradient(rho, theta, h, params)
    g_rho = np.zeros_like(rho)
    g_theta = np.zeros_like(theta)
    g_rho[:-1] += dp
    g_rho[1:] += dq
    g_theta[1:] += dD
    g_theta[:-1] -= dD
    for g in (g_rho, g_theta):
        g[0] = g[-1] = 0.0
    return g_rho, g_theta


def grad_energy_eps_polar(p: PolarField, params: ModelParams):
    """Return ``(grad_rho, grad_theta)``; boundary entries are zero."""
    return polar_gradient_values(p.rho, p.theta, p.grid.h, params)


# local (p, q, D) -> node unknowns (rho_i, theta_i, rho_{i+1}, theta_{i+1})
_LOCAL_TO_NODES = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0, 1.0],
    ]
)


def polar_hessian_banded(rho, theta, h, params: ModelParams) -> np.ndarray:
    """Exact Hessian in interleaved ``(rho_i, theta_i)`` unknowns, banded."""
    dp, dq, dD, (a, b, q, c, s, gb) = _polar_local_gradient(rho, theta, h, params)
    H4 = _cell_hessian(a, b, h, params.eps, params.L, params.preferred_twist)
    cells = a.shape[0]
    J = np.zeros((cells, 4, 3))
    J[:, 0, 0] = 1.0
    J[:, 2, 1] = c
    J[:, 2, 2] = -q * s
    J[:, 3, 1] = s
    J[:, 3, 2] = q * c
    H3 = np.einsum("kia,kij,kjb->kab", J, H4, J)
    # curvature of b1 = q cos D and b2 = q sin D
    H3[:, 1, 2] += -gb[:, 0] * s + gb[:, 1] * c
    H3[:, 2, 1] += -gb[:, 0] * s + gb[:, 1] * c
    H3[:, 2, 2] += -gb[:, 0] * q * c - gb[:, 1] * q * s
    H = np.einsum("ai,kab,bj->kij", _LOCAL_TO_NODES, H3, _LOCAL_TO_NODES)
    return _banded_from_cells(H)


# ---------------------------------------------------------------- rescaled

# F(w) = E(w exp(2 pi i K x)) with K = floor(eps^-beta). Rotating each cell by
# -2 pi K x_c turns its arguments into (w_c, R w_{c+1}) with R the rotation by
# 2 pi K h, so the rescaled energy needs no large phases.


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _rescaled_cells(values, h, params):
    R = _rotation(2.0 * math.pi * params.twist_floor * h)
    a = values[:-1]
    b = values[1:] @ R.T
    return a, b, R


def energy_rescaled(w: ComplexField, params: ModelParams) -> EnergyBreakdown:
    _check_beta(params)
    a, b, _ = _rescaled_cells(w.values, w.grid.h, params)
    return EnergyBreakdown.from_terms(
        *_cell_terms(a, b, w.grid.h, params.eps, params.L, params.preferred_twist)
    )


def grad_energy_rescaled(w: ComplexField, params: ModelParams) -> np.ndarray:
    _check_beta(params)
    h = w.grid.h
    a, b, R = _rescaled_cells(w.values, h, params)
    ga, gb = _cell_gradient(a, b, h, params.eps, params.L, params.preferred_twist)
    g = np.zeros_like(w.values)
    g[:-1] += ga
    g[1:] += gb @ R
    g[0] = g[-1] = 0.0
    return g


# ---------------------------------------------------------------- limit energy


def twist_integral(x, theta, target: float) -> float:
    """Cell-rule integral of ``(theta' - target)^2`` over one piece."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.size < 2:
        raise InvalidJumpMapError("a piece needs at least 2 samples")
    dx = np.diff(x)
    slope = np.diff(theta) / dx
    return float(np.sum((slope - target) ** 2 * dx))


def energy_gamma(j: JumpMap, L: float, target: float) -> float:
    """Limit energy: twist penalty on the pieces plus the jump cost per jump."""
    twist = sum(twist_integral(x, th, target) for x, th in j.pieces)
    return 0.5 * L * twist + JUMP_COST * len(j.jumps)


def transition_cost(u: ComplexField, params: ModelParams) -> float:
    """Gradient plus potential part of the energy (the modulus-layer cost)."""
    e = energy_eps(u, params)
    return e.gradient_term + e.potential_term
