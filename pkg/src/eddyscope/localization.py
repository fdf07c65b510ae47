"""MUSIC-type localization and the two-target resolution study."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import BisectionFailure, DomainError, RankError, SingularPoint
from .forward import (SINGULAR_DISTANCE, MsrMatrix, SensorArray, TargetInstance,
                      add_noise, green_hessian_batch, msr_superpose, noise_for_level)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.1


@dataclass(frozen=True, eq=False)
class SearchGrid:
    """Regular grid of trial points.

    ``shape`` gives the number of points per axis so that maps can be
    reshaped for plotting; ``points`` are in C order over ``shape``.
    """

    points: np.ndarray
    shape: tuple
    step: float
    axes: tuple = field(default=())

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise DomainError("search grid is empty")
        if not self.step > 0:
            raise DomainError("search grid step must be positive")
        if int(np.prod(self.shape)) != len(pts):
            raise DomainError("grid shape does not match the number of points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def plane(cls, xlim=(-1.0, 1.0), ylim=(-1.0, 1.0), step: float = 0.02,
              z: float = 0.0) -> "SearchGrid":
        """Points of the horizontal plane at height ``z``."""
        if not step > 0:
            raise DomainError("search grid step must be positive")
        xs = _axis(xlim, step)
        ys = _axis(ylim, step)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, z)])
        return cls(pts, (len(xs), len(ys)), step, (xs, ys))

    @classmethod
    def box(cls, lo, hi, step: float) -> "SearchGrid":
        if not step > 0:
            raise DomainError("search grid step must be positive")
        axes = tuple(_axis((a, b), step) for a, b in zip(lo, hi))
        P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        return cls(P, tuple(len(a) for a in axes), step, axes)

    def excluding(self, array: SensorArray) -> "SearchGrid":
        """Same grid, checked to contain no sensor position."""
        sensors = np.vstack([array.sources, array.receivers])
        for chunk in np.array_split(self.points, max(1, len(self.points) // 4096)):
            d = np.linalg.norm(chunk[:, None, :] - sensors[None], axis=2)
            if np.any(d < SINGULAR_DISTANCE):
                raise SingularPoint("search grid contains a sensor position")
        return self


def _axis(lim, step):
    n = int(np.floor((lim[1] - lim[0]) / step + 1e-9)) + 1
    return lim[0] + step * np.arange(n)


@dataclass(frozen=True, eq=False)
class NoiseProjector:
    """``P = I - Vs Vs^T`` onto the right noise space of an MSR matrix."""

    basis: np.ndarray  # M x r orthonormal signal basis
    singular_values: np.ndarray

    @property
    def signal_rank(self) -> int:
        return self.basis.shape[1]

    @property
    def M(self) -> int:
        return self.basis.shape[0]

    @property
    def P(self) -> np.ndarray:
        return np.eye(self.M) - self.basis @ self.basis.T

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Project the rows of ``g`` (..., M)."""
        return g - (g @ self.basis) @ self.basis.T


def rank_fixed(r: int):
    return ("fixed", int(r))


def rank_threshold(tau: float = DEFAULT_THRESHOLD):
    return ("threshold", float(tau))


def noise_projector(A: MsrMatrix | np.ndarray, rank_rule=("fixed", 3)) -> NoiseProjector:
    """Noise-space projector of ``A`` under a fixed or relative-threshold rank."""
    mat = A.A if isinstance(A, MsrMatrix) else np.asarray(A, float)
    if mat.size == 0:
        raise DomainError("empty MSR matrix")
    _, s, vt = np.linalg.svd(mat, full_matrices=False)
    kind, value = rank_rule
    if kind == "fixed":
        r = int(value)
    elif kind == "threshold":
        r = int(np.sum(s > value * s[0])) if s[0] > 0 else 0
    else:
        raise DomainError(f"unknown rank rule {kind!r}")
    if r < 0 or r >= min(mat.shape):
        raise RankError(f"signal rank {r} leaves no noise space in a "
                        f"{mat.shape[0]}x{mat.shape[1]} matrix")
    return NoiseProjector(vt[:r].T.copy(), s)


def steering(points, sources, p) -> np.ndarray:
    """Vectors ``g_i(z)[m] = (D2G(z, s_m) p)_i``, shape (n_points, 3, M)."""
    points = np.atleast_2d(points)
    H = green_hessian_batch(points[:, None, :], np.asarray(sources)[None, :, :])
    return np.einsum("nmij,j->nim", H, np.asarray(p, float))


def music_values(projector: NoiseProjector, g: np.ndarray) -> np.ndarray:
    """Functional from precomputed steering vectors (n, 3, M)."""
    total = np.einsum("nim,nim->n", g, g)
    c = g @ projector.basis
    residual = total - np.einsum("nir,nir->n", c, c)
    # Clipping guards the subtraction against tiny negative round-off.
    residual = np.maximum(residual, np.finfo(float).tiny + 1e-300 * total)
    return 1.0 / np.sqrt(residual)


def music_functional(projector: NoiseProjector, zS, sources, p) -> float:
    """``[sum_i |P g_i(zS)|^2]^(-1/2)``."""
    return float(music_values(projector, steering(np.reshape(zS, (1, 3)), sources, p))[0])


def music_map(projector: NoiseProjector, grid: SearchGrid, sources, p,
              chunk: int = 4096) -> np.ndarray:
    out = np.empty(len(grid.points))
    for start in range(0, len(out), chunk):
        sl = slice(start, start + chunk)
        out[sl] = music_values(projector, steering(grid.points[sl], sources, p))
    return out


@dataclass(frozen=True, eq=False)
class Localization:
    z_hat: np.ndarray
    values: np.ndarray
    grid: SearchGrid
    projector: NoiseProjector

    @property
    def image(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


def locate(A: MsrMatrix, grid: SearchGrid, array: SensorArray,
           rank_rule=("fixed", 3)) -> Localization:
    """Grid point maximizing the imaging functional, with the whole map.

    Ties go to the first point in grid order.
    """
    proj = noise_projector(A, rank_rule)
    values = music_map(proj, grid, array.sources, array.p)
    best = int(np.argmax(values))
    return Localization(grid.points[best].copy(), values, grid, proj)


def local_maxima(image: np.ndarray, rel: float = 0.5) -> np.ndarray:
    """Indices of 2-D local maxima above ``rel`` times the global maximum."""
    peak = maximum_filter(image, size=3, mode="nearest")
    mask = (image == peak) & (image >= rel * image.max())
    return np.argwhere(mask)


@dataclass(frozen=True)
class Criterion:
    """Thresholds of the two-target "differentiated" test."""

    peak_rel: float = 0.5
    dip_rel: float = 0.75
    radius_steps: float = 2.0
    radius_frac: float = 0.25


def differentiated(loc: Localization, centers, array: SensorArray,
                   criterion: Criterion = Criterion()) -> bool:
    """Two separated peaks, one near each true center, with a dip between.

    The map must have exactly two local maxima above ``peak_rel`` of its
    maximum, each within ``max(radius_steps * h, radius_frac * d)`` of a
    distinct center, and the functional at the midpoint of the centers must
    stay below ``dip_rel`` times the smaller peak.
    """
    c = np.asarray(centers, float)
    grid = loc.grid
    if len(grid.shape) != 2:
        raise DomainError("the criterion is defined on planar maps")
    image = loc.image
    peaks = local_maxima(image, criterion.peak_rel)
    if len(peaks) != 2:
        return False
    flat = np.ravel_multi_index(peaks.T, grid.shape)
    pos = grid.points[flat]
    d = np.linalg.norm(c[0] - c[1])
    tol = max(criterion.radius_steps * grid.step, criterion.radius_frac * d)
    dist = np.linalg.norm(pos[:, None, :] - c[None], axis=2)
    if not ((dist[0, 0] <= tol and dist[1, 1] <= tol)
            or (dist[0, 1] <= tol and dist[1, 0] <= tol)):
        return False
    mid = music_functional(loc.projector, c.mean(axis=0), array.sources, array.p)
    return bool(mid < criterion.dip_rel * image.ravel()[flat].min())


@dataclass(frozen=True, eq=False)
class ResolutionResult:
    L: float
    noise_levels: np.ndarray
    d_min: np.ndarray
    snr: np.ndarray
    trials: int
    monotone: bool

    def slope(self) -> float:
        """Least-squares exponent of ``d_min`` against SNR in log-log axes.

        NaN when fewer than two noise levels were run.
        """
        if len(self.snr) < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.snr), np.log(self.d_min), 1)[0])


class ResolutionStudy:
    """Bisection on the separation of two identical targets.

    The targets sit at ``(+-d/2, 0, 0)`` between the plates at ``+-L``; the
    planar search grid with step ``grid_step`` covers every separation of
    the bracket ``[grid_step, 4L]``.  Each
    trial draws its own Gaussian matrix from ``seed_base + trial``; the same
    draws are reused across separations and noise levels, which keeps the
    bisection decisions coherent.
    """

    def __init__(self, cpt, config, array: SensorArray, grid_step: float,
                 window: float | None = None, trials: int = 20,
                 seed_base: int = 0, rank_rule=("fixed", 6),
                 criterion: Criterion = Criterion(), iterations: int = 8):
        self.cpt = cpt
        self.config = config
        self.array = array
        self.h = float(grid_step)
        L = float(np.max(array.sources[:, 2]))
        self.L = L
        half = window if window is not None else 2.5 * L
        self.grid = SearchGrid.plane((-half, half), (-half / 2, half / 2), self.h)
        self.g = steering(self.grid.points, array.sources, array.p)
        self.trials = trials
        self.seed_base = seed_base
        self.rank_rule = rank_rule
        self.criterion = criterion
        self.iterations = iterations
        self._clean = {}

    def clean(self, d: float) -> MsrMatrix:
        if d not in self._clean:
            centers = self.centers(d)
            targets = [TargetInstance(c, self.cpt, self.config) for c in centers]
            self._clean[d] = msr_superpose(targets, self.array)
        return self._clean[d]

    @staticmethod
    def centers(d: float) -> np.ndarray:
        return np.array([[-d / 2, 0.0, 0.0], [d / 2, 0.0, 0.0]])

    def vote(self, d: float, level: float) -> float:
        """Fraction of trials in which the targets are differentiated."""
        A = self.clean(d)
        sigma = noise_for_level(A, level)
        wins = 0
        for t in range(self.trials):
            noisy = add_noise(A, sigma, self.seed_base + t)
            proj = noise_projector(noisy, self.rank_rule)
            values = music_values(proj, self.g)
            best = int(np.argmax(values))
            loc = Localization(self.grid.points[best], values, self.grid, proj)
            wins += differentiated(loc, self.centers(d), self.array, self.criterion)
        return wins / self.trials

    def d_min(self, level: float) -> float:
        lo, hi = self.h, 4 * self.L
        if self.vote(hi, level) < 0.5:
            raise BisectionFailure(f"targets not differentiated at d = {hi:g} "
                                   f"with noise level {level:g}")
        for _ in range(self.iterations):
            mid = 0.5 * (lo + hi)
            if self.vote(mid, level) >= 0.5:
                hi = mid
            else:
                lo = mid
        log.info("L=%g level=%g d_min=%.4f", self.L, level, hi)
        return hi

    def run(self, noise_levels) -> ResolutionResult:
        levels = np.asarray(noise_levels, float)
        if np.any((levels <= 0) | (levels >= 1)):
            raise DomainError("noise levels must lie in (0, 1)")
        dmins = np.array([self.d_min(lv) for lv in levels])
        order = np.argsort(levels)
        monotone = bool(np.all(np.diff(dmins[order]) >= -1e-12))
        if not monotone:
            log.warning("d_min is not monotone in the noise level: %s", dmins)
        return ResolutionResult(self.L, levels, dmins, 1.0 / levels,
                                self.trials, monotone)


def default_grid_step(L: float) -> float:
    """Search step used by the resolution study at plate distance ``L``."""
    return L / 40.0


def resolution_study(L: float, noise_levels, trials: int = 20, cpt=None,
                     config=None, n_side: int = 16, grid_step: float | None = None,
                     seed_base: int = 0, rank_rule=("fixed", 6),
                     criterion: Criterion = Criterion()) -> ResolutionResult:
    """``d_min`` per noise level for two ellipsoids at plate distance ``L``."""
    from .forward import plates
    from .tensor_core import PhysicalConfig

    if not L > 0:
        raise DomainError("L must be positive")
    config = config or PhysicalConfig()
    if cpt is None:
        from .solver.shapes import ShapeSpec
        from .solver.vie import cpt_sweep
        cpt = cpt_sweep(ShapeSpec("ellipsoid"), 0.2, config, [config.omega])[0]
    study = ResolutionStudy(cpt, config, plates(L, n_side),
                            grid_step or default_grid_step(L), trials=trials,
                            seed_base=seed_base, rank_rule=rank_rule,
                            criterion=criterion)
    return study.run(noise_levels)
