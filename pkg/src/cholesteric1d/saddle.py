"""String method between winding-class minimizers and barrier estimation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .core import TWO_PI, ComplexField, ModelParams, write_field_csv
from .energy import energy_values, gradient_values, hessian_banded
from .errors import DegeneratePathError, DivergenceError, InvalidParameterError
from .lifting import unwrap_phase, winding_number
from .minimize import SolverOptions

logger = logging.getLogger(__name__)

MIN_IMAGES = 8
DEFAULT_IMAGES = 33
# per-sweep image displacement cap, as a fraction of the nearest-neighbour distance
MOVE_FRACTION = 0.5


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Ordered images sharing one grid; the two end images are never modified.

    ``arclength`` holds the normalised cumulative discrete L2 arclength of the
    images, ``history`` the per-image energies recorded after each sweep.
    """

    images: tuple
    arclength: np.ndarray
    history: tuple = ()

    def __post_init__(self):
        if len(self.images) < MIN_IMAGES:
            raise InvalidParameterError(f"a path needs at least {MIN_IMAGES} images")
        grid = self.images[0].grid
        if any(im.grid != grid for im in self.images):
            raise InvalidParameterError("all images must share one grid")
        if not all(im.enforced for im in self.images):
            raise InvalidParameterError("all images must satisfy the boundary conditions")
        arc = np.array(self.arclength, dtype=float)
        arc.setflags(write=False)
        object.__setattr__(self, "arclength", arc)

    @property
    def K(self) -> int:
        return len(self.images)

    @property
    def grid(self):
        return self.images[0].grid

    def energies(self, params: ModelParams) -> np.ndarray:
        h = self.grid.h
        return np.array([energy_values(im.values, h, params) for im in self.images])


def _distance(a: np.ndarray, b: np.ndarray, h: float) -> float:
    return math.sqrt(h * float(np.sum((b - a) ** 2)))


def _arclength(values: list[np.ndarray], h: float) -> np.ndarray:
    steps = [_distance(a, b, h) for a, b in zip(values[:-1], values[1:])]
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    return arc / arc[-1] if arc[-1] > 0 else arc


def _dip(x: np.ndarray, center: float, eps: float) -> np.ndarray:
    """Modica-Mortola profile vanishing at ``center``."""
    return np.tanh(np.abs(x - center) / (math.sqrt(2.0) * eps))


def init_path(uA: ComplexField, uB: ComplexField, K: int, params: ModelParams) -> PathEnsemble:
    """Three-stage path from ``uA`` to ``uB``.

    Stage one depresses the modulus to a Modica-Mortola dip vanishing at the
    node nearest 1/2, stage two interpolates the phases with a removable
    2 pi D step placed at that zero, stage three raises the modulus again.
    """
    if K < MIN_IMAGES:
        raise InvalidParameterError(f"K must be at least {MIN_IMAGES}")
    wA, wB = winding_number(uA), winding_number(uB)
    if wA == wB:
        raise DegeneratePathError(f"both endpoints have winding {wA}; no barrier to cross")
    grid = uA.grid
    x = grid.x
    center_index = int(np.argmin(np.abs(x - 0.5)))
    dip = _dip(x, x[center_index], params.eps)
    dip[center_index] = 0.0

    pa, pb = unwrap_phase(uA), unwrap_phase(uB)
    theta_a = pa.theta - pa.theta[0]
    theta_b = pb.theta - pb.theta[0]
    shift = TWO_PI * (wB - wA) * (x > x[center_index])
    theta_b_shifted = theta_b - shift

    i1 = (K - 1) // 3
    i2 = 2 * (K - 1) // 3
    images = []
    for i in range(K):
        if i <= i1:
            s = i / i1
            rho = pa.rho * ((1.0 - s) + s * dip)
            theta = theta_a
        elif i <= i2:
            s = (i - i1) / (i2 - i1)
            rho = ((1.0 - s) * pa.rho + s * pb.rho) * dip
            theta = (1.0 - s) * theta_a + s * theta_b_shifted
        else:
            s = (i - i2) / (K - 1 - i2)
            rho = pb.rho * ((1.0 - s) * dip + s)
            theta = theta_b_shifted
        images.append(np.column_stack([rho * np.cos(theta), rho * np.sin(theta)]))
    fields = [uA] + [ComplexField(grid, v, uA.alpha) for v in images[1:-1]] + [uB]
    return PathEnsemble(tuple(fields), _arclength([f.values for f in fields], grid.h))


def _reparametrize(values: list[np.ndarray], h: float) -> list[np.ndarray]:
    """Resample interior images to equal arclength by linear interpolation."""
    arc = _arclength(values, h)
    K = len(values)
    targets = np.linspace(0.0, 1.0, K)
    out = [values[0]]
    for t in targets[1:-1]:
        k = int(np.clip(np.searchsorted(arc, t, side="right") - 1, 0, K - 2))
        span = arc[k + 1] - arc[k]
        w = 0.0 if span <= 0 else (t - arc[k]) / span
        out.append((1.0 - w) * values[k] + w * values[k + 1])
    out.append(values[-1])
    return out


def _image_step(z, tangent, max_move, h, params, opts, energy):
    """One descent step perpendicular to the path in the Gauss-Newton metric.

    The step is shortened so the image moves at most ``max_move`` in the
    discrete L2 norm, which keeps neighbouring images in one basin.
    """
    g = gradient_values(z, h, params)[1:-1].ravel()
    ab = hessian_banded(z, h, params, gauss_newton=True)
    factor = cholesky_banded(ab, lower=False, check_finite=False)
    d = -cho_solve_banded((factor, False), g, check_finite=False)
    t = tangent[1:-1].ravel()
    ut = _upper_times(factor, t)
    tpt = float(ut @ ut)
    if tpt > 0:
        d = d + (float(g @ t) / tpt) * t
    slope = float(g @ d)
    if not slope < 0:
        return z, energy
    length = math.sqrt(h * float(d @ d))
    step = opts.initial_step
    if length * step > max_move:
        step = max_move / length
    while step * length >= 1e-14:
        trial = z.copy()
        trial[1:-1] += step * d.reshape(-1, 2)
        e = energy_values(trial, h, params)
        if math.isfinite(e) and e <= energy + opts.sufficient_decrease * step * slope:
            return trial, e
        step *= opts.shrink
    return z, energy


def _upper_times(factor: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``U v`` for an upper-banded Cholesky factor ``U`` (so ``v^T P v = |U v|^2``)."""
    u = factor.shape[0] - 1
    n = v.size
    out = factor[u] * v
    for k in range(1, u + 1):
        out[: n - k] += factor[u - k, k:] * v[k:]
    return out


def relax_path(
    p: PathEnsemble,
    params: ModelParams,
    opts: SolverOptions | None = None,
    max_sweeps: int = 3000,
    tol: float = 1e-8,
    window: int = 100,
) -> PathEnsemble:
    """String-method relaxation.

    Each sweep takes one perpendicular descent step per interior image, then
    resamples to equal arclength. The descent steps never raise an image
    energy; the resampling can raise the path maximum slightly, since linear
    interpolation between images cuts across curved level sets. Stops once the
    maximum image energy changed by less than ``tol`` over ``window`` sweeps.
    """
    opts = opts or SolverOptions()
    h = p.grid.h
    values = [np.array(im.values) for im in p.images]
    energies = [energy_values(v, h, params) for v in values]
    history = [tuple(energies)]
    max_trace = [max(energies)]
    for sweep in range(max_sweeps):
        new_values = list(values)
        new_energies = list(energies)
        for i in range(1, len(values) - 1):
            tangent = values[i + 1] - values[i - 1]
            gap = min(_distance(values[i], values[i - 1], h), _distance(values[i], values[i + 1], h))
            new_values[i], new_energies[i] = _image_step(
                values[i], tangent, MOVE_FRACTION * gap, h, params, opts, energies[i]
            )
            if not math.isfinite(new_energies[i]):
                raise DivergenceError("image energy became non-finite")
        values = _reparametrize(new_values, h)
        energies = [energy_values(v, h, params) for v in values]
        history.append(tuple(energies))
        max_trace.append(max(energies))
        if len(max_trace) > window and abs(max_trace[-1] - max_trace[-1 - window]) < tol:
            break
    else:
        logger.warning("string method hit max_sweeps=%d", max_sweeps)
    grid = p.grid
    alpha = p.images[0].alpha
    fields = (p.images[0],) + tuple(ComplexField(grid, v, alpha) for v in values[1:-1]) + (p.images[-1],)
    return PathEnsemble(fields, _arclength(values, h), p.history + tuple(history))


@dataclass(frozen=True, eq=False)
class BarrierResult:
    value: float
    argmax_index: int
    saddle_field: ComplexField
    gradient_norm: float

    def __iter__(self):
        return iter((self.value, self.argmax_index, self.saddle_field))


def barrier(p: PathEnsemble, params: ModelParams) -> BarrierResult:
    """Maximum image energy, its index, the image and its gradient max-norm."""
    energies = p.energies(params)
    k = int(np.argmax(energies))
    saddle = p.images[k]
    g = gradient_values(saddle.values, p.grid.h, params)
    return BarrierResult(float(energies[k]), k, saddle, float(np.max(np.abs(g))))


def write_path(p: PathEnsemble, params: ModelParams, directory) -> None:
    """Per-image CSV files plus ``path.json`` with energies per image per sweep."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, im in enumerate(p.images):
        write_field_csv(im, directory / f"image_{k:03d}.csv")
    payload = {
        "K": p.K,
        "n": p.grid.n,
        "params": params.to_dict(),
        "arclength": p.arclength.tolist(),
        "energies": p.energies(params).tolist(),
        "history": [list(e) for e in p.history],
    }
    (directory / "path.json").write_text(json.dumps(payload))
