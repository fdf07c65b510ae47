"""Uniform cubic voxelization of unit-scale shapes.

Cells cut by the boundary carry the fraction of their volume inside the
shape, and every interior face carries its wetted area fraction
("aperture").  With one sample per cell both collapse to the plain
staircase voxelization.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..errors import DomainError, EmptyGrid
from .shapes import ShapeSpec

DEFAULT_SUBSAMPLES = 6


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Voxels of edge ``h`` with centers ``offset + h * index``.

    Parameters
    ----------
    h : float
        Voxel edge.
    index : (n, 3) int array
        Integer lattice coordinates, stored in lexicographic order.
    offset : (3,) array
        Lattice origin.  The default ``h/2`` puts the origin on a vertex,
        which keeps the lattice invariant under signed axis permutations.
    fraction : (n,) array, optional
        Volume fraction of each voxel inside the shape (default 1).
    aperture : (n, 3) array, optional
        Wetted fraction of the ``+axis`` face of each voxel (default 1 when
        the neighbour exists).  Faces with zero aperture carry no flux.
    """

    h: float
    index: np.ndarray
    offset: np.ndarray
    fraction: np.ndarray | None = None
    aperture: np.ndarray | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError("voxel size must be positive")
        idx = np.asarray(self.index, dtype=np.int64).reshape(-1, 3)
        if idx.shape[0] == 0:
            raise EmptyGrid("grid has no voxels")
        order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
        idx = idx[order]
        if np.any(np.all(np.diff(idx, axis=0) == 0, axis=1)):
            raise DomainError("duplicate voxels")
        frac = (np.ones(len(idx)) if self.fraction is None
                else np.asarray(self.fraction, dtype=float)[order])
        ap = (np.ones((len(idx), 3)) if self.aperture is None
              else np.asarray(self.aperture, dtype=float).reshape(-1, 3)[order])
        for name, arr in (("index", idx), ("fraction", frac), ("aperture", ap)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        off = np.array(self.offset, dtype=float).reshape(3)
        off.setflags(write=False)
        object.__setattr__(self, "offset", off)

    @property
    def n(self) -> int:
        return self.index.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.offset + self.h * self.index

    @property
    def volume(self) -> float:
        return float(self.fraction.sum() * self.h**3)

    @property
    def box_shape(self) -> tuple:
        return tuple(int(v) for v in self.index.max(axis=0) - self.index.min(axis=0) + 1)

    @cached_property
    def _lookup(self) -> np.ndarray:
        lo = self.index.min(axis=0)
        table = -np.ones(self.box_shape, dtype=np.int64)
        rel = self.index - lo
        table[rel[:, 0], rel[:, 1], rel[:, 2]] = np.arange(self.n)
        return table

    def ids_of(self, index: np.ndarray) -> np.ndarray:
        """Voxel numbers of lattice coordinates, -1 where absent."""
        index = np.atleast_2d(index)
        rel = index - self.index.min(axis=0)
        shape = np.array(self._lookup.shape)
        ok = np.all((rel >= 0) & (rel < shape), axis=1)
        out = -np.ones(len(index), dtype=np.int64)
        r = rel[ok]
        out[ok] = self._lookup[r[:, 0], r[:, 1], r[:, 2]]
        return out

    @cached_property
    def faces(self) -> list:
        """Interior faces per axis as (minus_voxel, plus_voxel) pairs."""
        out = []
        for d in range(3):
            step = np.zeros(3, dtype=np.int64)
            step[d] = 1
            plus = self.ids_of(self.index + step)
            keep = (plus >= 0) & (self.aperture[:, d] > 0)
            minus = np.nonzero(keep)[0]
            out.append(np.stack([minus, plus[keep]], axis=1))
        return out

    @property
    def n_faces(self) -> int:
        return sum(len(f) for f in self.faces)

    @cached_property
    def face_axis(self) -> np.ndarray:
        return np.concatenate([np.full(len(f), d) for d, f in enumerate(self.faces)])

    @cached_property
    def face_aperture(self) -> np.ndarray:
        return np.concatenate([self.aperture[f[:, 0], d] for d, f in enumerate(self.faces)])

    @cached_property
    def face_centers(self) -> np.ndarray:
        c = self.centers
        parts = []
        for d, pairs in enumerate(self.faces):
            fc = c[pairs[:, 0]].copy()
            fc[:, d] += 0.5 * self.h
            parts.append(fc)
        return np.concatenate(parts)

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        """Net wetted outflux per voxel divided by ``h``, voxels x faces."""
        rows, cols, vals = [], [], []
        start = 0
        for d, pairs in enumerate(self.faces):
            ids = np.arange(start, start + len(pairs))
            a = self.aperture[pairs[:, 0], d] / self.h
            rows += [pairs[:, 0], pairs[:, 1]]
            cols += [ids, ids]
            vals += [a, -a]
            start += len(pairs)
        return sp.csr_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n_faces))

    @cached_property
    def averaging(self) -> sp.csr_matrix:
        """Faces to per-voxel current moments divided by ``h^3``.

        Row ``3v + d`` collects half of the wetted dual volume of the two
        axis-``d`` faces of voxel ``v``; for full voxels it is the plain
        average of the opposite face values.
        """
        rows, cols, vals = [], [], []
        start = 0
        for d, pairs in enumerate(self.faces):
            ids = np.arange(start, start + len(pairs))
            a = 0.5 * self.aperture[pairs[:, 0], d]
            rows += [3 * pairs[:, 0] + d, 3 * pairs[:, 1] + d]
            cols += [ids, ids]
            vals += [a, a]
            start += len(pairs)
        return sp.csr_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(3 * self.n, self.n_faces))

    def translated(self, shift) -> "VoxelGrid":
        """Same voxel set moved by an integer number of cells per axis."""
        shift = np.asarray(shift)
        if not np.array_equal(shift, np.round(shift)):
            raise DomainError("lattice shifts must be integers")
        return VoxelGrid(self.h, self.index, self.offset + self.h * shift,
                         self.fraction, self.aperture)

    def rotated(self, O) -> "VoxelGrid":
        """Image under a signed permutation matrix about the origin."""
        O = np.asarray(O, dtype=float)
        if not (np.allclose(O, np.round(O))
                and np.allclose(np.abs(O).sum(axis=0), 1)
                and np.allclose(np.abs(O).sum(axis=1), 1)):
            raise DomainError("only lattice (signed permutation) rotations")
        O = np.round(O).astype(np.int64)
        new = self.centers @ O.T
        idx = np.rint((new - self.offset) / self.h).astype(np.int64)
        if not np.allclose(self.offset + self.h * idx, new, atol=1e-9 * self.h):
            raise DomainError("lattice is not invariant under this rotation")
        aperture = np.zeros((self.n, 3))
        lo = idx.min(axis=0)
        table = -np.ones(tuple(idx.max(axis=0) - lo + 1), dtype=np.int64)
        table[tuple((idx - lo).T)] = np.arange(self.n)
        for d in range(3):
            image = O[:, d]
            dp = int(np.nonzero(image)[0][0])
            if image[dp] > 0:
                aperture[:, dp] = self.aperture[:, d]
            else:
                # The +d face of v becomes the +dp face of the voxel below v'.
                below = idx.copy()
                below[:, dp] -= 1
                rel = below - lo
                ok = np.all((rel >= 0) & (rel < table.shape), axis=1)
                tgt = -np.ones(self.n, dtype=np.int64)
                tgt[ok] = table[tuple(rel[ok].T)]
                has = tgt >= 0
                aperture[tgt[has], dp] = self.aperture[has, d]
        return VoxelGrid(self.h, idx, self.offset, self.fraction, aperture)


def _subpoints(s: int) -> np.ndarray:
    """Midpoints of ``s`` equal sub-intervals of [-1/2, 1/2]."""
    return (np.arange(s) + 0.5) / s - 0.5


def voxelize(shape: ShapeSpec, h: float, offset=None,
             subsamples: int = DEFAULT_SUBSAMPLES) -> VoxelGrid:
    """Voxelize ``shape`` on a lattice of edge ``h``.

    ``subsamples == 1`` keeps the voxels whose centers satisfy the shape's
    inequality (staircase).  Larger values also keep cut voxels and sample
    ``subsamples**3`` points per cut voxel and ``subsamples**2`` per cut
    face to estimate volume fractions and apertures.
    """
    if not h > 0:
        raise DomainError("voxel size must be positive")
    if h > shape.min_width() / 4:
        raise DomainError(f"h = {h} too coarse for {shape.kind} "
                          f"(limit {shape.min_width() / 4})")
    offset = np.full(3, 0.5 * h) if offset is None else np.asarray(offset, float)
    box = shape.bounding_box()
    axes = []
    for d in range(3):
        lo = int(np.floor((box[d, 0] - offset[d]) / h)) - 1
        hi = int(np.ceil((box[d, 1] - offset[d]) / h)) + 1
        axes.append(np.arange(lo, hi + 1))
    dims = tuple(len(a) for a in axes)
    K = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = offset + h * K
    if subsamples == 1:
        inside = shape.contains(centers)
        if not inside.any():
            raise EmptyGrid(f"no voxel center falls inside the {shape.kind}")
        return VoxelGrid(h, K[inside], offset)

    # Corner classification: cells with all corners inside are full, all
    # outside are empty, the rest are sampled.
    corner_axes = [offset[d] + h * (np.append(axes[d], axes[d][-1] + 1) - 0.5)
                   for d in range(3)]
    C = np.stack(np.meshgrid(*corner_axes, indexing="ij"), axis=-1).reshape(-1, 3)
    cin = shape.contains(C).reshape(tuple(n + 1 for n in dims))
    count = sum(cin[i:i + dims[0], j:j + dims[1], k:k + dims[2]].astype(int)
                for i in (0, 1) for j in (0, 1) for k in (0, 1)).ravel()
    full = count == 8
    cut = (count > 0) & (count < 8)
    # A shape thinner than a voxel can hide between corners; fall back on
    # the center test for those cells.
    cut |= (count == 0) & shape.contains(centers)

    sub = _subpoints(subsamples)
    frac = full.astype(float)
    cut_ids = np.nonzero(cut)[0]
    if len(cut_ids):
        S = np.stack(np.meshgrid(sub, sub, sub, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = centers[cut_ids, None, :] + h * S[None]
        frac[cut_ids] = shape.contains(pts.reshape(-1, 3)).reshape(len(cut_ids), -1).mean(axis=1)
    keep = frac > 0
    if not keep.any():
        raise EmptyGrid(f"no voxel intersects the {shape.kind}")

    grid_frac = frac.reshape(dims)
    grid_full = full.reshape(dims)
    aperture = np.zeros(dims + (3,))
    F2 = np.stack(np.meshgrid(sub, sub, indexing="ij"), axis=-1).reshape(-1, 2)
    cgrid = centers.reshape(dims + (3,))
    for d in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[d] = slice(0, -1)
        b[d] = slice(1, None)
        both = (grid_frac[tuple(a)] > 0) & (grid_frac[tuple(b)] > 0)
        both_full = grid_full[tuple(a)] & grid_full[tuple(b)]
        ap = np.where(both_full, 1.0, 0.0)
        todo = np.argwhere(both & ~both_full)
        if len(todo):
            others = [e for e in range(3) if e != d]
            fpts = np.zeros((len(F2), 3))
            fpts[:, d] = 0.5 * h
            fpts[:, others[0]] = h * F2[:, 0]
            fpts[:, others[1]] = h * F2[:, 1]
            base = cgrid[tuple(todo.T)]
            pts = base[:, None, :] + fpts[None]
            ap[tuple(todo.T)] = shape.contains(pts.reshape(-1, 3)).reshape(len(todo), -1).mean(axis=1)
        view = aperture[tuple(a) + (d,)]
        view[...] = ap
    return VoxelGrid(h, K[keep], offset, frac[keep], aperture.reshape(-1, 3)[keep])
