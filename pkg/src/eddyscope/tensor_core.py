"""Conductive polarization tensors, their transform laws and descriptors.

The nine 3x3 tensors ``M[l][l']`` are stored as one 9x9 complex matrix whose
block ``(l, l')`` occupies rows ``3l:3l+3`` and columns ``3l':3l'+3``
(0-based).  Inside a block, entry ``(a, i)`` is component ``a`` of column
``i``.  Because every column of ``M[l][l']`` is a cross product with ``e_l``,
row ``l`` of block ``(l, l')`` vanishes identically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateTensor, DomainError, ZeroRowViolation

NU_MAX = 4.0

# Physical setup of the numerical experiments: k * alpha**2 is ~1 at 133.5 rad/s.
REFERENCE_MU0 = 1.2566e-6
REFERENCE_SIGMA = 5.97e7
REFERENCE_ALPHA = 0.01
REFERENCE_OMEGA = 133.5

ZERO_ROW_RTOL = 1e-10


@dataclass(frozen=True)
class PhysicalConfig:
    """Material and frequency parameters of one target.

    Only non-magnetic contrast is supported, so ``mu_star`` must equal
    ``mu0`` (it defaults to it).
    """

    mu0: float = REFERENCE_MU0
    sigma_star: float = REFERENCE_SIGMA
    alpha: float = REFERENCE_ALPHA
    omega: float = REFERENCE_OMEGA
    mu_star: float | None = None
    nu_max: float = NU_MAX

    def __post_init__(self):
        if self.mu_star is None:
            object.__setattr__(self, "mu_star", self.mu0)
        for name in ("mu0", "mu_star", "sigma_star", "alpha", "omega"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f"{name} must be positive, got {value}")
        if self.mu_star != self.mu0:
            raise DomainError("only mu_star == mu0 is supported")

    @property
    def k(self) -> float:
        return self.omega * self.mu0 * self.sigma_star

    @property
    def nu(self) -> float:
        return self.k * self.alpha**2

    @property
    def valid(self) -> bool:
        """False once the induction number leaves the asymptotic regime."""
        return self.nu <= self.nu_max

    @property
    def scale(self) -> float:
        """Prefactor k * alpha**5 multiplying Re M in the measurements."""
        return self.k * self.alpha**5

    def with_omega(self, omega: float) -> "PhysicalConfig":
        return PhysicalConfig(self.mu0, self.sigma_star, self.alpha, omega,
                              self.mu_star, self.nu_max)

    def nu_at(self, omega: float) -> float:
        return omega * self.mu0 * self.sigma_star * self.alpha**2


def zero_row_mask() -> np.ndarray:
    """Boolean 9x9 mask of the entries forced to zero by the cross product."""
    mask = np.zeros((9, 9), dtype=bool)
    for l in range(3):
        mask[3 * l + l, :] = True
    return mask


_ZERO_ROWS = zero_row_mask()

_LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI_CIVITA[_i, _j, _k], _LEVI_CIVITA[_i, _k, _j] = 1.0, -1.0


def zero_row_defect(matrix: np.ndarray) -> float:
    """Largest magnitude among the structurally-zero entries."""
    return float(np.max(np.abs(np.asarray(matrix)[_ZERO_ROWS])))


@dataclass(frozen=True, eq=False)
class CptTensor:
    """The 9x9 block matrix of conductive polarization tensors.

    Parameters
    ----------
    matrix : array_like, shape (9, 9)
        Complex block matrix in the layout described in the module docstring.
    omega : float, optional
        Angular frequency the tensor was computed at.
    nu : float, optional
        Induction number used by the solver, if known.
    """

    matrix: np.ndarray
    omega: float | None = None
    nu: float | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (9, 9):
            raise ValueError(f"CPT matrix must be 9x9, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("CPT matrix has non-finite entries")
        norm = np.linalg.norm(m)
        if zero_row_defect(m) > ZERO_ROW_RTOL * max(norm, 1e-300):
            raise ZeroRowViolation(
                f"zero-row entries reach {zero_row_defect(m):.3e} "
                f"(|M|_F = {norm:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_blocks(cls, blocks, omega=None, nu=None) -> "CptTensor":
        """Build from a (3, 3, 3, 3) array indexed ``[l, l', a, i]``."""
        b = np.asarray(blocks, dtype=complex)
        return cls(b.transpose(0, 2, 1, 3).reshape(9, 9), omega, nu)

    @classmethod
    def random(cls, rng: np.random.Generator, omega=None) -> "CptTensor":
        """Random tensor of the cross-product form ``e_l x T[:, l', i]``.

        ``T`` has Gaussian complex entries.  This family is closed under
        ``rotate_cpt``, unlike arbitrary matrices with the zero rows imposed.
        """
        T = rng.standard_normal((3, 3, 3)) + 1j * rng.standard_normal((3, 3, 3))
        blocks = np.einsum("alb,bki->lkai", _LEVI_CIVITA, T)
        return cls.from_blocks(blocks, omega)

    @classmethod
    def zeros(cls, omega=None) -> "CptTensor":
        return cls(np.zeros((9, 9), dtype=complex), omega)

    @property
    def blocks(self) -> np.ndarray:
        """View indexed ``[l, l', a, i]`` (0-based)."""
        return self.matrix.reshape(3, 3, 3, 3).transpose(0, 2, 1, 3)

    def block(self, l: int, lp: int) -> np.ndarray:
        return self.matrix[3 * l:3 * l + 3, 3 * lp:3 * lp + 3]

    @property
    def real(self) -> np.ndarray:
        return self.matrix.real.copy()

    def singular_values(self, part: str = "real") -> np.ndarray:
        """Singular values of Re M (default), of M, or of |M|."""
        if part == "real":
            m = self.matrix.real
        elif part == "complex":
            m = self.matrix
        elif part == "abs":
            m = np.abs(self.matrix)
        else:
            raise ValueError(f"unknown part {part!r}")
        return np.linalg.svd(m, compute_uv=False)

    def scaled(self, factor: complex) -> "CptTensor":
        return CptTensor(self.matrix * factor, self.omega, self.nu)

    def allclose(self, other: "CptTensor", rtol=1e-10) -> bool:
        scale = max(np.linalg.norm(self.matrix), np.linalg.norm(other.matrix))
        return np.linalg.norm(self.matrix - other.matrix) <= rtol * scale

    def to_dict(self) -> dict:
        blocks = [[[float(v.real), float(v.imag)] for v in row]
                  for row in self.matrix]
        d = {"omega": self.omega, "blocks": blocks}
        if self.nu is not None:
            d["nu"] = self.nu
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CptTensor":
        arr = np.asarray(d["blocks"], dtype=float)
        if arr.shape != (9, 9, 2):
            raise ValueError(f"'blocks' must be 9x9 pairs, got {arr.shape}")
        return cls(arr[..., 0] + 1j * arr[..., 1], d.get("omega"), d.get("nu"))


@dataclass(frozen=True, eq=False)
class Rotation:
    """Proper rotation of R^3."""

    O: np.ndarray

    def __post_init__(self):
        o = np.array(self.O, dtype=float)
        if o.shape != (3, 3):
            raise DomainError("rotation must be 3x3")
        if np.linalg.norm(o.T @ o - np.eye(3)) > 1e-12:
            raise DomainError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(o) - 1.0) > 1e-12:
            raise DomainError("rotation matrix must have determinant +1")
        o.setflags(write=False)
        object.__setattr__(self, "O", o)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0:
            if angle == 0:
                return cls.identity()
            raise DomainError("rotation axis must be nonzero")
        x, y, z = axis / n
        K = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
        O = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
        # Re-orthonormalize away the last bits of round-off.
        u, _, vt = np.linalg.svd(O)
        return cls(u @ vt)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        """Haar-distributed rotation from the QR factorization of a Gaussian."""
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return cls(q)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.O @ other.O)


def build_O1(rotation: Rotation) -> np.ndarray:
    """Block-diagonal ``diag(O, O, O)``."""
    return np.kron(np.eye(3), rotation.O)


def build_O2(rotation: Rotation) -> np.ndarray:
    """Blocks ``O[i, j] * I3``, i.e. ``O`` Kronecker ``I3``."""
    return np.kron(rotation.O, np.eye(3))


def rotate_cpt(cpt: CptTensor, rotation: Rotation) -> CptTensor:
    """CPT of the rotated shape, ``O2 O1 M O1^T O2^T``."""
    R = build_O2(rotation) @ build_O1(rotation)
    out = R @ cpt.matrix @ R.T
    norm = np.linalg.norm(cpt.matrix)
    if zero_row_defect(out) > ZERO_ROW_RTOL * max(norm, 1e-300):
        raise ZeroRowViolation("rotated tensor lost the zero-row structure; "
                               "input tensor is malformed")
    # Round-off residue on the structural zeros is removed once it is known
    # to be negligible.
    out[_ZERO_ROWS] = 0.0
    return CptTensor(out, cpt.omega, cpt.nu)


def scaling_map(s: float, omega_sigma: float) -> tuple[float, float]:
    """Factor and remapped frequency of ``M[ws, sB] = s**5 M[ws s**2, B]``."""
    if not s > 0:
        raise DomainError(f"scale must be positive, got {s}")
    return s**5, omega_sigma * s**2


@dataclass(frozen=True, eq=False)
class Descriptor:
    """Normalized multi-frequency singular values, frequency-major."""

    values: np.ndarray
    frequencies: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size == 0 or v.size % 3:
            raise ValueError("descriptor length must be a positive multiple of 3")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("descriptor entries must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "frequencies",
                           tuple(float(w) for w in self.frequencies))

    def __len__(self):
        return self.values.size

    @property
    def n_frequencies(self) -> int:
        return self.values.size // 3

    def to_dict(self) -> dict:
        return {"frequencies": list(self.frequencies),
                "values": [float(v) for v in self.values]}

    @classmethod
    def from_dict(cls, d: dict) -> "Descriptor":
        return cls(np.asarray(d["values"], dtype=float),
                   tuple(d.get("frequencies", ())))


def normalize_singular_values(S, frequencies=()) -> Descriptor:
    """Divide a (F, 3) stack of singular values by its global maximum."""
    S = np.asarray(S, dtype=float).reshape(-1, 3)
    top = S.max()
    if not top >= 1e-14:
        raise DegenerateTensor("all singular values vanish")
    values = S / top
    # The maximum is exactly one, not one up to division round-off.
    values[S == top] = 1.0
    return Descriptor(values.ravel(), tuple(frequencies))


def top_singular_values(matrix: np.ndarray, count: int = 3) -> np.ndarray:
    return np.linalg.svd(np.asarray(matrix), compute_uv=False)[:count]


def descriptor_from_cpts(cpts: Sequence[CptTensor],
                         omegas: Sequence[float]) -> Descriptor:
    """Three largest singular values of Re M per frequency, max-normalized."""
    if len(cpts) == 0 or len(cpts) != len(omegas):
        raise ValueError("need one tensor per frequency")
    S = np.array([top_singular_values(c.matrix.real) for c in cpts])
    return normalize_singular_values(S, omegas)
