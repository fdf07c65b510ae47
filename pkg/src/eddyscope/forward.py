"""Dipole fields and the leading-order multistatic response matrix.

The response of a small conductive target at ``z`` to a dipole source at
``s_m`` with moment ``p``, recorded at ``r_n`` along ``q``, is

    A[n, m] = sum_{l, l'} D2G(r_n, z)[l, l'] q^T (k alpha^5 Re M[l][l']) D2G(z, s_m) p,

which factors as ``A = U @ Mq @ Vp`` with ``U`` (N x 9), ``Mq`` (9 x 3) and
``Vp`` (3 x M).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GeometryError, SingularPoint, ModelValidityWarning
from .tensor_core import CptTensor, PhysicalConfig

SINGULAR_DISTANCE = 1e-12


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise DomainError(f"{name} must be a unit vector")
    return v


@dataclass(frozen=True, eq=False)
class SensorArray:
    """Point dipole sources and point receivers.

    Parameters
    ----------
    sources : (M, 3) array
    receivers : (N, 3) array
    p : (3,) array
        Unit moment of every source dipole.
    q : (3,) array
        Unit measurement direction at every receiver.
    """

    sources: np.ndarray
    receivers: np.ndarray
    p: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        s = np.array(self.sources, dtype=float).reshape(-1, 3)
        r = np.array(self.receivers, dtype=float).reshape(-1, 3)
        if len(s) < 1 or len(r) < 1:
            raise DomainError("need at least one source and one receiver")
        gap = np.min(np.linalg.norm(s[:, None, :] - r[None, :, :], axis=2))
        if gap < SINGULAR_DISTANCE:
            raise GeometryError("a source coincides with a receiver")
        for name, arr in (("sources", s), ("receivers", r)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("p", "q"):
            v = _unit(getattr(self, name), name)
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def M(self) -> int:
        return len(self.sources)

    @property
    def N(self) -> int:
        return len(self.receivers)

    def with_q(self, q) -> "SensorArray":
        """Same sensors measuring along ``q``; positions are not re-checked."""
        q = _unit(q, "q")
        q.setflags(write=False)
        new = object.__new__(SensorArray)
        for name in ("sources", "receivers", "p"):
            object.__setattr__(new, name, getattr(self, name))
        object.__setattr__(new, "q", q)
        return new

    def swapped(self) -> "SensorArray":
        """Sources and receivers exchanged along with ``p`` and ``q``."""
        return SensorArray(self.receivers, self.sources, self.q, self.p)


def plates(L: float = 1.0, n_side: int = 16, half_width: float = 2.0,
           p=(0.0, 0.0, 1.0), q=(0.0, 0.0, 1.0)) -> SensorArray:
    """Sources on a square grid at height ``+L``, receivers at ``-L``."""
    if not L > 0 or n_side < 1:
        raise DomainError("plates need L > 0 and n_side >= 1")
    t = np.linspace(-half_width, half_width, n_side)
    X, Y = np.meshgrid(t, t, indexing="ij")
    xy = np.column_stack([X.ravel(), Y.ravel()])
    src = np.column_stack([xy, np.full(len(xy), L)])
    rcv = np.column_stack([xy, np.full(len(xy), -L)])
    return SensorArray(src, rcv, np.asarray(p, float), np.asarray(q, float))


def green(x, y) -> float:
    """Laplace fundamental solution ``1 / (4 pi |x - y|)``."""
    r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float))
    if r < SINGULAR_DISTANCE:
        raise SingularPoint("green evaluated at coincident points")
    return 1.0 / (4 * np.pi * r)


def green_hessian_batch(x, y) -> np.ndarray:
    """Hessians ``(3 rr^T - I) / (4 pi |r|^3)`` for broadcast rows of ``x - y``.

    Returns an array of shape ``(..., 3, 3)``.
    """
    r = np.asarray(x, float) - np.asarray(y, float)
    d = np.linalg.norm(r, axis=-1)
    if np.any(d < SINGULAR_DISTANCE):
        raise SingularPoint("green_hessian evaluated at coincident points")
    rhat = r / d[..., None]
    H = 3 * rhat[..., :, None] * rhat[..., None, :] - np.eye(3)
    return H / (4 * np.pi * d[..., None, None] ** 3)


def green_hessian(x, y) -> np.ndarray:
    """Hessian of ``green`` with respect to ``x``."""
    return green_hessian_batch(np.asarray(x, float).reshape(3),
                               np.asarray(y, float).reshape(3))


def background_field(x, s, p) -> np.ndarray:
    """Field ``D2G(x, s) p`` of a unit dipole at ``s`` with moment ``p``."""
    return green_hessian(x, s) @ np.asarray(p, float)


def assemble_U(z, receivers) -> np.ndarray:
    """N x 9 matrix whose row n is ``D2G(r_n, z)`` flattened row-major."""
    H = green_hessian_batch(np.atleast_2d(receivers), np.asarray(z, float))
    return H.reshape(-1, 9)


def assemble_Vp(z, sources, p) -> np.ndarray:
    """3 x M matrix whose column m is ``D2G(z, s_m) p``."""
    H = green_hessian_batch(np.asarray(z, float), np.atleast_2d(sources))
    return (H @ np.asarray(p, float)).T


def assemble_Mq(cpt: CptTensor, q, config: PhysicalConfig) -> np.ndarray:
    """9 x 3 matrix with row ``3l + l'`` equal to ``k alpha^5 q^T Re M[l][l']``."""
    q = np.asarray(q, float)
    B = cpt.blocks.real  # [l, l', a, i]
    return config.scale * np.einsum("a,lkai->lki", q, B).reshape(9, 3)


@dataclass(frozen=True, eq=False)
class TargetInstance:
    """A target centered at ``z`` with CPT ``cpt`` under ``config``."""

    z: np.ndarray
    cpt: CptTensor
    config: PhysicalConfig = field(default_factory=PhysicalConfig)

    def __post_init__(self):
        z = np.array(self.z, dtype=float).reshape(3)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


@dataclass(frozen=True, eq=False)
class MsrMatrix:
    """N x M real response matrix at one frequency and one ``q``."""

    A: np.ndarray
    omega: float
    q: np.ndarray
    sigma_noise: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        a = np.array(self.A, dtype=float)
        if a.ndim != 2 or a.size == 0:
            raise DomainError("MSR matrix must be a nonempty 2-D array")
        if not np.all(np.isfinite(a)):
            raise DomainError("MSR matrix has non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "A", a)
        q = np.array(self.q, dtype=float).reshape(3)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def shape(self) -> tuple:
        return self.A.shape

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.A, compute_uv=False)

    def __add__(self, other: "MsrMatrix") -> "MsrMatrix":
        if self.shape != other.shape or self.omega != other.omega \
                or not np.array_equal(self.q, other.q):
            raise DomainError("MSR matrices do not share geometry and frequency")
        return MsrMatrix(self.A + other.A, self.omega, self.q)


def msr_forward(target: TargetInstance, array: SensorArray) -> MsrMatrix:
    """Leading-order response ``U Mq Vp`` of one target."""
    gap = min(np.min(np.linalg.norm(array.sources - target.z, axis=1)),
              np.min(np.linalg.norm(array.receivers - target.z, axis=1)))
    if gap < SINGULAR_DISTANCE:
        raise GeometryError("target coincides with a sensor")
    if not target.config.valid:
        warnings.warn(f"nu = {target.config.nu:.3g} exceeds NU_MAX; the "
                      "asymptotic model is unreliable", ModelValidityWarning,
                      stacklevel=2)
    U = assemble_U(target.z, array.receivers)
    Vp = assemble_Vp(target.z, array.sources, array.p)
    Mq = assemble_Mq(target.cpt, array.q, target.config)
    return MsrMatrix(U @ Mq @ Vp, target.config.omega, array.q)


def msr_superpose(targets, array: SensorArray) -> MsrMatrix:
    """Response of several targets, the sum of the individual responses."""
    targets = list(targets)
    if not targets:
        raise DomainError("need at least one target")
    total = msr_forward(targets[0], array)
    for t in targets[1:]:
        total = total + msr_forward(t, array)
    return total


def add_noise(A: MsrMatrix, sigma_noise: float, seed: int) -> MsrMatrix:
    """Add ``sigma_noise / sqrt(M) * W`` with ``W`` standard Gaussian."""
    if not sigma_noise >= 0:
        raise DomainError("sigma_noise must be non-negative")
    N, M = A.shape
    W = np.random.default_rng(seed).standard_normal((N, M))
    return MsrMatrix(A.A + sigma_noise / np.sqrt(M) * W, A.omega, A.q,
                     float(sigma_noise), int(seed))


def snr(A_clean: MsrMatrix, sigma_noise: float) -> float:
    """Top singular value of the clean data over ``sigma_noise``."""
    if not sigma_noise > 0:
        raise DomainError("sigma_noise must be positive")
    return float(A_clean.singular_values()[0] / sigma_noise)


def noise_for_level(A_clean: MsrMatrix, level: float) -> float:
    """``sigma_noise`` giving noise level ``level`` (the reciprocal SNR)."""
    if not level >= 0:
        raise DomainError("noise level must be non-negative")
    return float(level * A_clean.singular_values()[0])
