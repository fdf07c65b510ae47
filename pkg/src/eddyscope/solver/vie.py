"""Voxel volume-integral solver for conductive polarization tensors.

With equal permeabilities the induced current ``J = i nu U`` of the cell
problem is supported on the shape.  ``U = theta_i + e_i x xi`` solves

    U - i nu N[U] - grad(phi) = e_i x xi   in B,
    div U = 0 in B,  U . n = 0 on the boundary,

where ``N`` is the Newtonian potential over ``B``.  ``U`` is discretized by
its normal component on the wetted part of interior voxel faces (boundary
faces carry none), so the discrete divergence-free constraint is exact.
Each face owns the dual volume ``aperture * h^3``, which is the mass used
for the projection and the moments; per-voxel vectors are the averages of
opposite faces.  ``phi`` lives on voxels and acts as the Lagrange
multiplier of the constraint.

Working with ``U`` rather than ``J`` keeps the system regular as
``nu -> 0``; the static limit is a plain projection of ``e_i x xi``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import DomainError, GridMismatch, NoConvergence
from ..tensor_core import CptTensor, PhysicalConfig, zero_row_mask
from .shapes import ShapeSpec
from .voxel import VoxelGrid, voxelize

log = logging.getLogger(__name__)

# Integral of 1/|x| over the unit cube centered at the origin.
CUBE_SELF_INTEGRAL = 2.380077363979553

DEFAULT_TOL = 1e-8
DEFAULT_MAXITER = 2000


class NewtonPotential:
    """Collocated Newtonian potential on the voxels of a grid.

    ``apply(u)[v] = sum_w K(v - w) u[w]`` with ``K = h^3 G(x_v, x_w)`` off the
    diagonal and the exact integral of ``G`` over the cell at its own center
    on the diagonal.  The sum is a discrete convolution on the bounding box
    and is evaluated by zero-padded FFT; ``apply_direct`` is the O(n^2)
    reference.
    """

    def __init__(self, grid: VoxelGrid):
        self.grid = grid
        self.shape = grid.box_shape
        self.lo = grid.index.min(axis=0)
        self.rel = grid.index - self.lo
        self.pad = tuple(sfft.next_fast_len(2 * s - 1, real=True) for s in self.shape)
        h = grid.h
        axes = [np.arange(p) for p in self.pad]
        dist = []
        for ax, p, s in zip(axes, self.pad, self.shape):
            # Wrapped offsets: 0..s-1 then negative offsets at the end.
            d = np.where(ax < s, ax, ax - p).astype(float)
            d[(ax >= s) & (ax <= p - s)] = np.nan
            dist.append(d)
        dx, dy, dz = np.meshgrid(*dist, indexing="ij")
        r = np.sqrt(dx**2 + dy**2 + dz**2)
        with np.errstate(divide="ignore", invalid="ignore"):
            kernel = h**2 / (4 * np.pi * r)
        kernel[np.isnan(kernel)] = 0.0
        kernel[0, 0, 0] = h**2 * CUBE_SELF_INTEGRAL / (4 * np.pi)
        self.self_term = kernel[0, 0, 0]
        self.kernel_hat = sfft.rfftn(kernel)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Potential of per-voxel values ``u`` with shape (n,) or (n, c)."""
        u = np.asarray(u)
        squeeze = u.ndim == 1
        if squeeze:
            u = u[:, None]
        if np.iscomplexobj(u):
            out = self.apply(u.real) + 1j * self.apply(u.imag)
            return out[:, 0] if squeeze else out
        c = u.shape[1]
        box = np.zeros((c,) + self.shape)
        r = self.rel
        box[:, r[:, 0], r[:, 1], r[:, 2]] = u.T
        spec = sfft.rfftn(box, s=self.pad, axes=(1, 2, 3))
        spec *= self.kernel_hat[None]
        full = sfft.irfftn(spec, s=self.pad, axes=(1, 2, 3))
        out = full[:, r[:, 0], r[:, 1], r[:, 2]].T
        return out[:, 0] if squeeze else out

    def apply_direct(self, u: np.ndarray) -> np.ndarray:
        """Same operator by explicit pairwise summation (reference path)."""
        u = np.asarray(u)
        x = self.grid.centers
        h = self.grid.h
        out = np.zeros_like(u, dtype=np.result_type(u, float))
        for v in range(len(x)):
            r = np.linalg.norm(x - x[v], axis=1)
            w = np.empty_like(r)
            far = r > 0
            w[far] = h**3 / (4 * np.pi * r[far])
            w[~far] = self.self_term
            out[v] = w @ u
        return out


@dataclass(frozen=True, eq=False)
class CurrentField:
    """Solution of one cell problem.

    ``flux`` holds ``U = theta_i + e_i x xi`` as normal components on the
    interior faces; the induced current density is ``J = i nu U``.
    """

    grid: VoxelGrid
    nu: float
    axis: int
    flux: np.ndarray
    residual: float
    iterations: int

    @property
    def U(self) -> np.ndarray:
        """Per-voxel vectors of ``theta_i + e_i x xi``, shape (n, 3)."""
        return (self.grid.averaging @ self.flux).reshape(-1, 3)

    @property
    def J(self) -> np.ndarray:
        """Per-voxel induced current density, shape (n, 3)."""
        return 1j * self.nu * self.U

    def divergence_ratio(self) -> float:
        div = self.grid.divergence @ self.flux
        return float(np.linalg.norm(div) * self.grid.h / max(np.linalg.norm(self.flux), 1e-300))


class CellProblem:
    """Assembled operators of the saddle system on one grid."""

    def __init__(self, grid: VoxelGrid):
        self.grid = grid
        self.potential = NewtonPotential(grid)
        self.D = grid.divergence.tocsr()
        self.Dt = self.D.T.tocsr()
        self.Avg = grid.averaging.tocsr()
        self.AvgT = self.Avg.T.tocsr()
        self.nf = grid.n_faces
        self.nv = grid.n
        self.mass = grid.face_aperture

    @cached_property
    def _laplace_lu(self):
        # Weighted graph Laplacian D W^-1 D^T has the constants as kernel (no
        # flux leaves the shape); pinning one node gives an invertible matrix
        # whose solutions differ from the pseudo-inverse ones by a constant,
        # which D^T kills.
        L = (self.D @ sp.diags(1.0 / self.mass) @ self.Dt).tolil()
        L[0, 0] += 1.0 / self.grid.h**2
        return spla.splu(L.tocsc())

    def laplace_solve(self, r: np.ndarray) -> np.ndarray:
        lu = self._laplace_lu
        if np.iscomplexobj(r):
            return lu.solve(np.ascontiguousarray(r.real)) + 1j * lu.solve(np.ascontiguousarray(r.imag))
        return lu.solve(np.ascontiguousarray(r))

    def project(self, flux: np.ndarray) -> np.ndarray:
        """Mass-orthogonal projection onto discretely divergence-free fluxes."""
        return flux - (self.Dt @ self.laplace_solve(self.D @ flux)) / self.mass

    def newton_faces(self, flux: np.ndarray) -> np.ndarray:
        cell = (self.Avg @ flux).reshape(-1, 3)
        return self.AvgT @ self.potential.apply(cell).ravel()

    def rhs(self, axis: int) -> np.ndarray:
        """Face components of ``e_i x (xi - centroid)``.

        The constant part ``e_i x centroid`` is an exact discrete gradient and
        is absorbed by ``phi`` without changing ``U``, so dropping it only
        improves the conditioning and makes translated grids produce the
        same linear system.
        """
        x = self.grid.face_centers - self.grid.centers.mean(axis=0)
        e = np.zeros(3)
        e[axis] = 1.0
        field = np.cross(e, x)
        return field[np.arange(self.nf), self.grid.face_axis]

    def solve(self, nu: float, axis: int, tol: float = DEFAULT_TOL,
              maxiter: int = DEFAULT_MAXITER, restart: int = 60) -> CurrentField:
        b = self.rhs(axis)
        if nu == 0:
            flux = self.project(b)
            return CurrentField(self.grid, 0.0, axis, flux, 0.0, 0)
        nf, nv = self.nf, self.nv
        coupling = 1j * nu

        def matvec(x):
            u, phi = x[:nf], x[nf:]
            top = self.mass * u - coupling * self.newton_faces(u) + self.Dt @ phi
            return np.concatenate([top, self.D @ u])

        def precond(x):
            return np.concatenate([x[:nf] / self.mass, self.laplace_solve(x[nf:])])

        n = nf + nv
        op = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
        M = spla.LinearOperator((n, n), matvec=precond, dtype=complex)
        rhs = np.concatenate([self.mass * b, np.zeros(nv)]).astype(complex)
        # Start from the static solution, which is exact as nu -> 0.
        x0 = np.concatenate([self.project(b), np.zeros(nv)]).astype(complex)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(op, rhs, x0=x0, rtol=tol, atol=0.0, restart=restart,
                             maxiter=max(1, maxiter // restart), M=M,
                             callback=cb, callback_type="pr_norm")
        res = np.linalg.norm(op @ x - rhs) / np.linalg.norm(rhs)
        if info != 0 and res > tol:
            raise NoConvergence(f"GMRES stopped after {count[0]} iterations "
                                f"with relative residual {res:.2e}", res)
        flux = self.project(x[:nf])
        log.debug("cell problem nu=%.4g axis=%d: %d its, residual %.2e",
                  nu, axis, count[0], res)
        return CurrentField(self.grid, float(nu), axis, flux, float(res), count[0])


def solve_current(grid: VoxelGrid, nu: float, axis: int, tol: float = DEFAULT_TOL,
                  maxiter: int = DEFAULT_MAXITER, problem: CellProblem | None = None
                  ) -> CurrentField:
    """Induced current of the cell problem for excitation ``e_axis``."""
    if nu < 0 or not np.isfinite(nu):
        raise DomainError(f"nu must be non-negative, got {nu}")
    if axis not in (0, 1, 2):
        raise DomainError("axis must be 0, 1 or 2")
    problem = problem or CellProblem(grid)
    return problem.solve(nu, axis, tol=tol, maxiter=maxiter)


_ZERO = zero_row_mask()


def compute_cpt(grid: VoxelGrid, nu: float, fields, omega: float | None = None
                ) -> CptTensor:
    """CPT from the three cell solutions.

    ``M[l][l']`` column ``i`` is ``1/2 e_l x sum_faces m_f xi_l' U_i`` with the
    dual volumes ``m_f = aperture * h^3`` as quadrature weights.
    """
    fields = list(fields)
    if len(fields) != 3 or sorted(f.axis for f in fields) != [0, 1, 2]:
        raise GridMismatch("need one field per excitation axis")
    for f in fields:
        if f.grid is not grid or f.nu != nu:
            raise GridMismatch("fields belong to a different grid or nu")
    fields.sort(key=lambda f: f.axis)
    w = grid.h**3 * grid.face_aperture
    xf = grid.face_centers
    ax = grid.face_axis
    # V[lp, d, i] = sum over axis-d faces of h^3 xi_lp U_i
    V = np.zeros((3, 3, 3), dtype=complex)
    for i, f in enumerate(fields):
        for d in range(3):
            sel = ax == d
            V[:, d, i] = xf[sel].T @ (w[sel] * f.flux[sel])
    blocks = np.zeros((3, 3, 3, 3), dtype=complex)
    for l in range(3):
        e = np.zeros(3)
        e[l] = 1.0
        for lp in range(3):
            blocks[l, lp] = 0.5 * np.cross(e, V[lp].T).T
    m = blocks.transpose(0, 2, 1, 3).reshape(9, 9)
    m[_ZERO] = 0.0
    return CptTensor(m, omega, nu)


def grid_cpt(grid: VoxelGrid, nu: float, tol: float = DEFAULT_TOL,
             problem: CellProblem | None = None, omega: float | None = None
             ) -> CptTensor:
    problem = problem or CellProblem(grid)
    fields = [problem.solve(nu, i, tol=tol) for i in range(3)]
    return compute_cpt(grid, nu, fields, omega)


def cpt_sweep(shape: ShapeSpec | VoxelGrid, h: float | None,
              config: PhysicalConfig, omegas, tol: float = DEFAULT_TOL,
              scale: float = 1.0) -> list:
    """One CPT per frequency for the shape ``scale * B``.

    Each tensor records its frequency and the induction number ``nu`` used.
    A non-unit ``scale`` is realized through ``M[ws, sB] = s^5 M[ws s^2, B]``.
    """
    grid = shape if isinstance(shape, VoxelGrid) else voxelize(shape, h)
    omegas = [float(w) for w in omegas]
    if any(w < 0 for w in omegas):
        raise DomainError("frequencies must be non-negative")
    nus = [config.nu_at(w) * scale**2 for w in omegas]
    if max(nus) > config.nu_max:
        raise DomainError(f"nu = {max(nus):.3g} exceeds NU_MAX = {config.nu_max}")
    problem = CellProblem(grid)
    out = []
    for w, nu in zip(omegas, nus):
        cpt = grid_cpt(grid, nu, tol=tol, problem=problem, omega=w)
        out.append(CptTensor(cpt.matrix * scale**5, w, nu))
    return out
