"""Least-squares recovery of the scaled CPT from MSR data.

For ``q = e_l`` the rows ``3l, 3l+1, 3l+2`` of ``Mq`` vanish, leaving 18
free entries.  ``U`` has rank 5 on the six free block rows (the Hessian is
symmetric), so the problem is rank deficient and the minimum-norm solution
picks the component orthogonal to the kernel of ``Mq -> U Mq Vp``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IllConditioned, InconsistentInputs
from .forward import MsrMatrix, SensorArray, assemble_U, assemble_Vp
from .tensor_core import Descriptor, normalize_singular_values, top_singular_values

DEFAULT_TAU = 1e-8
CONDITION_LIMIT = 1e10


def free_mask(q_index: int) -> np.ndarray:
    """Boolean 9 x 3 mask of the entries of ``Mq`` left free for ``q = e_l``."""
    if q_index not in (0, 1, 2):
        raise DomainError("q_index must be 0, 1 or 2")
    mask = np.ones((9, 3), dtype=bool)
    mask[3 * q_index:3 * q_index + 3] = False
    return mask


def q_index_of(q) -> int:
    """Index ``l`` with ``q == e_l``."""
    q = np.asarray(q, float)
    for l in range(3):
        if np.array_equal(q, np.eye(3)[l]):
            return l
    raise DomainError("recovery needs q to be a coordinate axis")


def vectorize_L(U: np.ndarray, Vp: np.ndarray, q_index: int) -> np.ndarray:
    """(N*M) x 18 design matrix of ``Mq -> vec(U Mq Vp)``.

    Columns run row-major over the free entries ``(i, j)``; column ``(i, j)``
    is the row-major vectorization of ``outer(U[:, i], Vp[j, :])``.
    """
    rows, cols = np.nonzero(free_mask(q_index))
    return np.stack([np.outer(U[:, i], Vp[j, :]).ravel()
                     for i, j in zip(rows, cols)], axis=1)


@dataclass(frozen=True, eq=False)
class RecoveryProblem:
    """Data and geometry for one ``q = e_l`` recovery."""

    A: MsrMatrix
    z_hat: np.ndarray
    array: SensorArray
    q_index: int

    def __post_init__(self):
        if self.A.shape != (self.array.N, self.array.M):
            raise InconsistentInputs("MSR shape does not match the sensor array")
        free_mask(self.q_index)
        z = np.array(self.z_hat, dtype=float).reshape(3)
        z.setflags(write=False)
        object.__setattr__(self, "z_hat", z)

    @property
    def U(self) -> np.ndarray:
        return assemble_U(self.z_hat, self.array.receivers)

    @property
    def Vp(self) -> np.ndarray:
        return assemble_Vp(self.z_hat, self.array.sources, self.array.p)


def _truncate_warn(s, keep):
    if keep.any():
        cond = s[keep].max() / s[keep].min()
        if cond > CONDITION_LIMIT:
            warnings.warn(f"retained condition number {cond:.2e}", IllConditioned,
                          stacklevel=3)


def recover_Mq_design(problem: RecoveryProblem, tau: float = DEFAULT_TAU):
    """Reference path: truncated SVD of the explicit design matrix."""
    D = vectorize_L(problem.U, problem.Vp, problem.q_index)
    b = problem.A.A.ravel()
    W, s, Zt = np.linalg.svd(D, full_matrices=False)
    keep = s > tau * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    _truncate_warn(s, keep)
    x = Zt[keep].T @ ((W[:, keep].T @ b) / s[keep])
    Mq = np.zeros((9, 3))
    Mq[free_mask(problem.q_index)] = x
    residual = float(np.linalg.norm(b - D @ x))
    return Mq, residual


class KroneckerSolver:
    """Truncated pseudo-inverse of ``X -> Uf X Vp`` from two small SVDs.

    The design matrix is the Kronecker product of the free columns ``Uf`` of
    ``U`` and of ``Vp``, so its singular values are the pairwise products of
    theirs; products below ``tau`` times the largest are discarded.
    """

    def __init__(self, U: np.ndarray, Vp: np.ndarray, q_index: int,
                 tau: float = DEFAULT_TAU):
        mask = free_mask(q_index)
        self.rows = np.nonzero(mask.any(axis=1))[0]
        self.Uf = U[:, self.rows]
        self.Vp = Vp
        self.P, su, self.Qt = np.linalg.svd(self.Uf, full_matrices=False)
        self.R, sv, self.Wt = np.linalg.svd(Vp, full_matrices=False)
        S = np.outer(su, sv)
        top = S.max()
        self.keep = S > tau * top if top > 0 else np.zeros_like(S, dtype=bool)
        _truncate_warn(S.ravel(), self.keep.ravel())
        self.inv = np.where(self.keep, 1.0 / np.where(self.keep, S, 1.0), 0.0)

    def solve(self, A: np.ndarray):
        C = self.P.T @ A @ self.Wt.T
        X = self.Qt.T @ (C * self.inv) @ self.R.T
        Mq = np.zeros((9, 3))
        Mq[self.rows] = X
        residual = float(np.linalg.norm(A - self.Uf @ X @ self.Vp))
        return Mq, residual


def recover_Mq(problem: RecoveryProblem, tau: float = DEFAULT_TAU):
    """Minimum-norm least-squares ``Mq`` and the residual ``|A - U Mq Vp|_F``."""
    solver = KroneckerSolver(problem.U, problem.Vp, problem.q_index, tau)
    return solver.solve(problem.A.A)


@dataclass(frozen=True, eq=False)
class RecoveredCpt:
    """Recovered ``k alpha^5 Re M`` (projected) at one frequency."""

    scaled_tensor: np.ndarray
    omega: float
    residual: float

    def __post_init__(self):
        t = np.array(self.scaled_tensor, dtype=float)
        if t.shape != (9, 9):
            raise DomainError("recovered tensor must be 9x9")
        t.setflags(write=False)
        object.__setattr__(self, "scaled_tensor", t)
        if not self.residual >= 0:
            raise DomainError("residual must be non-negative")

    def to_dict(self) -> dict:
        return {"omega": self.omega,
                "blocks": [[[float(v), 0.0] for v in row] for row in self.scaled_tensor],
                "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveredCpt":
        arr = np.asarray(d["blocks"], dtype=float)
        return cls(arr[..., 0], float(d["omega"]), float(d.get("residual", 0.0)))


def assemble_recovered_cpt(recoveries, omega: float | None = None) -> RecoveredCpt:
    """Merge the three ``q = e_l`` solutions into one 9 x 9 tensor.

    ``recoveries`` maps ``q_index`` to ``(Mq, residual)`` or is a sequence of
    ``(q_index, Mq, residual, omega)`` tuples; row ``3l' + l'' `` of the
    ``e_l`` solution becomes row ``l`` of block ``(l', l'')``.
    """
    if isinstance(recoveries, dict):
        items = [(k, *v) for k, v in recoveries.items()]
        items = [(k, mq, res, omega) for k, mq, res in items]
    else:
        items = list(recoveries)
    if sorted(it[0] for it in items) != [0, 1, 2]:
        raise InconsistentInputs("need exactly one recovery for each q = e_l")
    omegas = {it[3] for it in items if it[3] is not None}
    if len(omegas) > 1:
        raise InconsistentInputs(f"recoveries at different frequencies {sorted(omegas)}")
    w = omegas.pop() if omegas else omega
    out = np.zeros((9, 9))
    residual = 0.0
    for l, Mq, res, _ in items:
        Mq = np.asarray(Mq, float)
        for lp in range(3):
            for lpp in range(3):
                out[3 * lp + l, 3 * lpp:3 * lpp + 3] = Mq[3 * lp + lpp]
        residual = float(np.hypot(residual, res))
    return RecoveredCpt(out, w, residual)


def kronecker_solvers(z_hat, array: SensorArray, tau: float = DEFAULT_TAU) -> list:
    """The three ``q = e_l`` solvers at ``z_hat``, reusable across frequencies."""
    U = assemble_U(z_hat, array.receivers)
    Vp = assemble_Vp(z_hat, array.sources, array.p)
    return [KroneckerSolver(U, Vp, l, tau) for l in range(3)]


def recover_cpt(msrs, z_hat, array: SensorArray, tau: float = DEFAULT_TAU,
                solvers=None) -> RecoveredCpt:
    """Recover the scaled tensor from the three MSR matrices of one frequency."""
    solvers = solvers or kronecker_solvers(z_hat, array, tau)
    items = []
    for A in msrs:
        if A.shape != (array.N, array.M):
            raise InconsistentInputs("MSR shape does not match the sensor array")
        l = q_index_of(A.q)
        Mq, res = solvers[l].solve(A.A)
        items.append((l, Mq, res, A.omega))
    return assemble_recovered_cpt(items)


def recovered_descriptor(recoveries) -> Descriptor:
    """Descriptor of recovered tensors, each divided by its frequency first."""
    recoveries = list(recoveries)
    if not recoveries:
        raise DomainError("need at least one recovery")
    omegas = [r.omega for r in recoveries]
    if any(w is None or w <= 0 for w in omegas):
        raise DomainError("recoveries need positive frequencies")
    S = np.array([top_singular_values(r.scaled_tensor) / r.omega for r in recoveries])
    return normalize_singular_values(S, omegas)
