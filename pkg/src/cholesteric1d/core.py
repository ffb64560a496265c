"""Grids, parameters, field representations and their CSV/JSON forms.

All value types are frozen dataclasses holding read-only numpy arrays, so they
can be shared freely between threads and worker processes.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidGridError, InvalidJumpMapError, InvalidParameterError

TWO_PI = 2.0 * math.pi
JUMP_COST = 2.0 * math.sqrt(2.0) / 3.0
JUMP_TOL = 1e-6
INTEGER_SNAP = 1e-12


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def wrap_to_pi(angle):
    """Map angles to [-pi, pi)."""
    return (np.asarray(angle) + math.pi) % TWO_PI - math.pi


def snapped_floor(value: float) -> tuple[int, float]:
    """Return ``(floor, fractional part)`` with near-integers snapped."""
    nearest = round(value)
    if abs(value - nearest) <= INTEGER_SNAP:
        return int(nearest), 0.0
    k = math.floor(value)
    return int(k), value - k


@dataclass(frozen=True)
class Grid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise InvalidGridError(f"grid needs at least 3 nodes, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def cell_midpoints(self) -> np.ndarray:
        x = self.x
        return 0.5 * (x[:-1] + x[1:])


def make_grid(n: int) -> Grid:
    return Grid(n)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the energy.

    With ``beta`` set the preferred twist is ``2*pi*eps**(-beta)`` and ``N``
    is ignored; otherwise it is ``2*pi*N``.
    """

    eps: float
    L: float
    N: int = 0
    alpha: float = 0.0
    beta: float | None = None

    def __post_init__(self):
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise InvalidParameterError(f"eps must be positive, got {self.eps}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise InvalidParameterError(f"L must be positive, got {self.L}")
        if not (0.0 <= self.alpha < TWO_PI):
            raise InvalidParameterError(f"alpha must lie in [0, 2pi), got {self.alpha}")
        if self.beta is None:
            if int(self.N) != self.N or self.N < 0:
                raise InvalidParameterError(f"N must be a nonnegative integer, got {self.N}")
            object.__setattr__(self, "N", int(self.N))
        elif not (0.0 < self.beta < 0.5):
            raise InvalidParameterError(f"beta must lie in (0, 1/2), got {self.beta}")

    @property
    def rescaled(self) -> bool:
        return self.beta is not None

    @property
    def twist_count(self) -> float:
        """N, or eps**(-beta) in the unbounded-twist regime."""
        if self.beta is None:
            return float(self.N)
        return self.eps ** (-self.beta)

    @property
    def preferred_twist(self) -> float:
        return TWO_PI * self.twist_count

    @property
    def twist_floor(self) -> int:
        """Integer part of eps**(-beta), snapped near integers."""
        self._require_beta()
        return snapped_floor(self.twist_count)[0]

    @property
    def twist_fraction(self) -> float:
        """Fractional part A of eps**(-beta), snapped near integers."""
        self._require_beta()
        return snapped_floor(self.twist_count)[1]

    def _require_beta(self):
        if self.beta is None:
            raise InvalidParameterError("beta is not set")

    def replace(self, **changes) -> "ModelParams":
        data = dict(eps=self.eps, L=self.L, N=self.N, alpha=self.alpha, beta=self.beta)
        data.update(changes)
        return ModelParams(**data)

    def to_dict(self) -> dict:
        return dict(eps=self.eps, L=self.L, N=self.N, alpha=self.alpha, beta=self.beta)


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Node values ``(u1, u2)`` on a grid.

    With ``enforced`` the end nodes are overwritten by the boundary data
    ``u(0) = 1`` and ``u(1) = exp(i alpha)``.
    """

    grid: Grid
    values: np.ndarray
    alpha: float = 0.0
    enforced: bool = True

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1, 2)
        if vals.shape[0] != self.grid.n:
            raise InvalidGridError(f"expected {self.grid.n} nodes, got {vals.shape[0]}")
        if self.enforced:
            vals[0] = (1.0, 0.0)
            vals[-1] = (math.cos(self.alpha), math.sin(self.alpha))
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def modulus(self) -> np.ndarray:
        return np.hypot(self.values[:, 0], self.values[:, 1])

    @property
    def as_complex(self) -> np.ndarray:
        return self.values[:, 0] + 1j * self.values[:, 1]

    @classmethod
    def from_complex(cls, grid: Grid, z, alpha: float = 0.0, enforced: bool = True) -> "ComplexField":
        z = np.asarray(z, dtype=complex)
        return cls(grid, np.column_stack([z.real, z.imag]), alpha, enforced)

    def with_values(self, values) -> "ComplexField":
        return ComplexField(self.grid, values, self.alpha, self.enforced)


@dataclass(frozen=True, eq=False)
class PolarField:
    """Modulus and lifted phase on a grid, in winding class ``M``."""

    grid: Grid
    rho: np.ndarray
    theta: np.ndarray
    M: int = 0
    alpha: float = 0.0
    enforced: bool = True

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float, copy=True).ravel()
        theta = np.array(self.theta, dtype=float, copy=True).ravel()
        if rho.shape[0] != self.grid.n or theta.shape[0] != self.grid.n:
            raise InvalidGridError("rho and theta must have one entry per node")
        if np.any(rho < 0):
            raise InvalidParameterError("rho must be nonnegative")
        if self.enforced:
            rho[0] = rho[-1] = 1.0
            theta[0] = 0.0
            theta[-1] = TWO_PI * self.M + self.alpha
        rho.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "M", int(self.M))


def to_cartesian(p: PolarField) -> ComplexField:
    values = np.column_stack([p.rho * np.cos(p.theta), p.rho * np.sin(p.theta)])
    return ComplexField(p.grid, values, p.alpha, p.enforced)


def uniform_twist_field(M: int, params: ModelParams, grid: Grid) -> ComplexField:
    """``exp(i (2 pi M + alpha) x)`` sampled on the grid."""
    phase = (TWO_PI * M + params.alpha) * grid.x
    return ComplexField(grid, np.column_stack([np.cos(phase), np.sin(phase)]), params.alpha)


def uniform_twist_polar(M: int, params: ModelParams, grid: Grid) -> PolarField:
    theta = (TWO_PI * M + params.alpha) * grid.x
    return PolarField(grid, np.ones(grid.n), theta, M, params.alpha)


# ---------------------------------------------------------------- jump maps


def _trace(x: np.ndarray, theta: np.ndarray, at: float) -> float:
    """Linear extrapolation of a piece's phase to the point ``at``."""
    if at <= x[0]:
        slope = (theta[1] - theta[0]) / (x[1] - x[0])
        return float(theta[0] + slope * (at - x[0]))
    slope = (theta[-1] - theta[-2]) / (x[-1] - x[-2])
    return float(theta[-1] + slope * (at - x[-1]))


def _gap(value: float) -> float:
    return abs(float(wrap_to_pi(value)))


@dataclass(frozen=True, eq=False)
class JumpMap:
    """Piecewise S^1-valued limit object.

    ``pieces`` lists ``(x, theta)`` sample arrays for each maximal subinterval
    between consecutive interior jumps, left to right. Construction merges
    interior jumps with phase gap below ``JUMP_TOL`` (mod 2 pi) and decides
    endpoint membership from the traces: 0 is a jump iff the left trace is not
    a multiple of 2 pi, 1 is a jump iff the right trace differs from ``alpha``.
    """

    jumps: tuple
    pieces: tuple
    alpha: float = 0.0

    def __post_init__(self):
        pieces = []
        for x, theta in self.pieces:
            x = np.asarray(x, dtype=float).ravel()
            theta = np.asarray(theta, dtype=float).ravel()
            if x.shape != theta.shape or x.size < 2:
                raise InvalidJumpMapError("each piece needs at least 2 phase samples")
            if np.any(np.diff(x) <= 0):
                raise InvalidJumpMapError("piece abscissae must be strictly increasing")
            pieces.append((x, theta))
        if not pieces:
            raise InvalidJumpMapError("a jump map needs at least one piece")
        interior = sorted(float(t) for t in self.jumps if 0.0 < float(t) < 1.0)
        if len(set(interior)) != len(interior):
            raise InvalidJumpMapError("jump points must be distinct")
        if len(interior) != len(pieces) - 1:
            raise InvalidJumpMapError(
                f"{len(interior)} interior jumps need {len(interior) + 1} pieces, got {len(pieces)}"
            )
        for k, t in enumerate(interior):
            if not (pieces[k][0][-1] <= t <= pieces[k + 1][0][0]):
                raise InvalidJumpMapError(f"jump at {t} is not between its pieces")

        kept_jumps = []
        merged = [pieces[0]]
        for t, (x, theta) in zip(interior, pieces[1:]):
            px, ptheta = merged[-1]
            gap = _trace(x, theta, t) - _trace(px, ptheta, t)
            if _gap(gap) < JUMP_TOL:
                shift = TWO_PI * round(gap / TWO_PI)
                merged[-1] = (np.concatenate([px, x]), np.concatenate([ptheta, theta - shift]))
            else:
                kept_jumps.append(t)
                merged.append((x, theta))

        jumps = list(kept_jumps)
        if _gap(_trace(*merged[0], 0.0)) >= JUMP_TOL:
            jumps.insert(0, 0.0)
        if _gap(_trace(*merged[-1], 1.0) - self.alpha) >= JUMP_TOL:
            jumps.append(1.0)

        frozen = []
        for x, theta in merged:
            frozen.append((_frozen(x), _frozen(theta)))
        object.__setattr__(self, "jumps", tuple(jumps))
        object.__setattr__(self, "pieces", tuple(frozen))

    @property
    def interior_jumps(self) -> tuple:
        return tuple(t for t in self.jumps if 0.0 < t < 1.0)

    @property
    def jump_count(self) -> int:
        return len(self.jumps)

    def to_dict(self) -> dict:
        return {
            "jumps": list(self.jumps),
            "pieces": [{"x": x.tolist(), "theta": th.tolist()} for x, th in self.pieces],
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "JumpMap":
        pieces = [(p["x"], p["theta"]) for p in data["pieces"]]
        return cls(tuple(data["jumps"]), tuple(pieces), float(data.get("alpha", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "JumpMap":
        return cls.from_dict(json.loads(text))


def jump_map_from_function(grid: Grid, jumps: Sequence[float], phase, alpha: float = 0.0) -> JumpMap:
    """Sample ``phase(x, piece_index)`` on the grid nodes of each subinterval."""
    x = grid.x
    interior = sorted(t for t in jumps if 0.0 < t < 1.0)
    edges = [0.0, *interior, 1.0]
    pieces = []
    for k in range(len(edges) - 1):
        lo, hi = edges[k], edges[k + 1]
        lo_ok = x >= lo if k == 0 else x > lo
        hi_ok = x <= hi if k == len(edges) - 2 else x < hi
        xs = x[lo_ok & hi_ok]
        pieces.append((xs, np.asarray(phase(xs, k), dtype=float)))
    return JumpMap(tuple(interior), tuple(pieces), alpha)


# ---------------------------------------------------------------- CSV I/O

_CSV_FMT = "%.17g"


def write_field_csv(f: ComplexField | PolarField, path) -> None:
    path = Path(path)
    if isinstance(f, PolarField):
        header, cols = "x,rho,theta", [f.grid.x, f.rho, f.theta]
    else:
        header, cols = "x,u1,u2", [f.grid.x, f.values[:, 0], f.values[:, 1]]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt=_CSV_FMT)


def read_field_csv(path, alpha: float = 0.0, M: int | None = None, enforced: bool = False):
    """Read a field CSV; the header decides Cartesian versus polar.

    Boundary data are not stored in the CSV, so ``enforced`` defaults to False
    and node values are returned exactly as written.
    """
    path = Path(path)
    with path.open() as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = Grid(data.shape[0])
    if header == ["x", "rho", "theta"]:
        if M is None:
            M = int(round((data[-1, 2] - data[0, 2] - alpha) / TWO_PI))
        return PolarField(grid, data[:, 1], data[:, 2], M, alpha, enforced)
    if header == ["x", "u1", "u2"]:
        return ComplexField(grid, data[:, 1:3], alpha, enforced)
    raise InvalidGridError(f"unrecognised field header {header}")
