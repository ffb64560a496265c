"""Phase lifting, winding numbers, bad intervals and jump-map extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TWO_PI, ComplexField, Grid, JumpMap, PolarField
from .errors import AliasingError, UndefinedWindingError, VanishingModulusError

ALIAS_GUARD = math.pi - 0.1
DEFAULT_Q = 4


def _lift(z: np.ndarray, start: float) -> np.ndarray:
    """Continuous phase of the complex samples ``z`` starting from ``start``."""
    steps = np.angle(z[1:] * np.conj(z[:-1]))
    bad = np.flatnonzero(np.abs(steps) >= ALIAS_GUARD)
    if bad.size:
        i = int(bad[0])
        raise AliasingError(
            f"phase step {steps[i]:.3f} between nodes {i} and {i + 1} exceeds the aliasing guard"
        )
    return start + np.concatenate([[0.0], np.cumsum(steps)])


def unwrap_phase(u: ComplexField, min_modulus: float = 1e-8) -> PolarField:
    """Lift ``u`` to modulus and continuous phase with ``theta_0`` in ``[0, 2 pi)``."""
    rho = u.modulus
    low = np.flatnonzero(rho < min_modulus)
    if low.size:
        raise VanishingModulusError(
            f"modulus {rho[low[0]]:.3g} at node {low[0]} is below {min_modulus}"
        )
    z = u.as_complex
    theta = _lift(z, float(np.angle(z[0]) % TWO_PI))
    M = int(round((theta[-1] - theta[0] - u.alpha) / TWO_PI))
    return PolarField(u.grid, rho, theta, M, u.alpha, enforced=u.enforced)


def winding_number(u: ComplexField, min_modulus: float = 1e-12) -> int:
    """Winding of ``exp(-i alpha x) u`` over the interval."""
    z = u.as_complex
    rho = np.abs(z)
    if np.any(rho < min_modulus):
        raise UndefinedWindingError("winding number undefined: the field vanishes")
    v = z * np.exp(-1j * u.alpha * u.grid.x)
    theta = _lift(v, 0.0)
    return int(round(theta[-1] / TWO_PI))


@dataclass(frozen=True)
class BadIntervalReport:
    """Maximal index ranges ``(first, last)`` (inclusive) where the modulus
    stays at or below ``1 - 2^-q`` and somewhere reaches ``2^-q``."""

    q: int
    intervals: tuple

    @property
    def count(self) -> int:
        return len(self.intervals)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), stops.tolist()))


def detect_bad_intervals(u: ComplexField, q: int) -> BadIntervalReport:
    if q < 2:
        raise ValueError("q must be at least 2")
    rho = u.modulus
    upper, lower = 1.0 - 2.0**-q, 2.0**-q
    runs = [(i, j) for i, j in _runs(rho <= upper) if np.min(rho[i : j + 1]) <= lower]
    return BadIntervalReport(int(q), tuple(runs))


def count_bound(energy: float, q: int) -> float:
    """Largest bad-interval count compatible with the given total energy.

    Each bad interval costs at least ``sqrt(2) * int_{2^-q}^{1-2^-q} (1 - z^2) dz``.
    """
    lo, hi = 2.0**-q, 1.0 - 2.0**-q
    primitive = lambda z: z - z**3 / 3.0  # noqa: E731
    return energy / (math.sqrt(2.0) * (primitive(hi) - primitive(lo)))


def _merge_short_gaps(intervals, n):
    """Absorb good segments with fewer than 2 nodes into neighbouring bad intervals."""
    merged: list[list[int]] = []
    for i, j in intervals:
        if merged and i - merged[-1][1] - 1 < 2:
            merged[-1][1] = j
        else:
            merged.append([i, j])
    if merged and merged[0][0] < 2:
        merged[0][0] = 0
    if merged and (n - 1) - merged[-1][1] < 2:
        merged[-1][1] = n - 1
    return [tuple(m) for m in merged]


def extract_jump_map(u: ComplexField, q: int = DEFAULT_Q, params=None) -> JumpMap:
    """Collapse bad intervals to midpoints and lift the phase between them.

    Each piece is shifted by a multiple of 2 pi so that it starts as close as
    possible to the linear extrapolation of the previous piece. Removable
    jumps and endpoint membership are then settled by ``JumpMap``.
    """
    alpha = u.alpha if params is None else params.alpha
    x = u.grid.x
    n = u.grid.n
    z = u.as_complex
    bad = _merge_short_gaps(detect_bad_intervals(u, q).intervals, n)

    segments = []
    cursor = 0
    jumps = []
    for i, j in bad:
        if i > cursor:
            segments.append((cursor, i - 1))
        if i > 0 and j < n - 1:
            jumps.append(0.5 * (x[i] + x[j]))
        cursor = j + 1
    if cursor <= n - 1:
        segments.append((cursor, n - 1))
    if not segments:
        # the whole field is one dip; keep a two-node stub so the map is well formed
        segments = [(0, 1)]
        jumps = []

    pieces = []
    for k, (i, j) in enumerate(segments):
        zs = z[i : j + 1]
        theta = _lift(zs, float(np.angle(zs[0])))
        if pieces:
            px, pth = pieces[-1]
            predicted = pth[-1] + (pth[-1] - pth[-2]) / (px[-1] - px[-2]) * (x[i] - px[-1])
        else:
            predicted = 0.0
        theta = theta + TWO_PI * round((predicted - theta[0]) / TWO_PI)
        pieces.append((x[i : j + 1], theta))
    return JumpMap(tuple(jumps), tuple(pieces), alpha)
