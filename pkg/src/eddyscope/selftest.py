"""Fast invariant checks across all modules, run by ``eddyscope selftest``.

Each check returns ``(name, passed, detail)``.  The whole suite finishes in
a few seconds; the pytest suite covers the same ground far more thoroughly.
"""
from __future__ import annotations

import numpy as np

from .dictionary import REFERENCE_TABLE, REFERENCE_TABLE_NORMALIZED, match, table_dictionary
from .forward import TargetInstance, msr_forward, plates
from .localization import SearchGrid, locate
from .recovery import recover_cpt
from .solver.shapes import ShapeSpec
from .solver.vie import grid_cpt
from .solver.voxel import voxelize
from .tensor_core import (CptTensor, PhysicalConfig, Rotation, build_O1, build_O2,
                          rotate_cpt, zero_row_mask)


def _rotation_checks(rng):
    worst_o, worst_s = 0.0, 0.0
    for _ in range(20):
        r = Rotation.random(rng)
        for O in (build_O1(r), build_O2(r)):
            worst_o = max(worst_o, np.abs(O @ O.T - np.eye(9)).max())
        c = CptTensor.random(rng)
        s0 = c.singular_values()
        s1 = rotate_cpt(c, r).singular_values()
        worst_s = max(worst_s, np.abs(s1 - s0).max() / s0[0])
    yield "O1/O2 orthogonality", worst_o < 1e-12, f"max defect {worst_o:.1e}"
    yield "rotation keeps singular values", worst_s < 1e-10, f"max rel change {worst_s:.1e}"


def _forward_checks(rng):
    array = plates()
    cfg = PhysicalConfig()
    worst = 0.0
    for _ in range(5):
        z = rng.uniform(-0.5, 0.5, 3)
        s = msr_forward(TargetInstance(z, CptTensor.random(rng), cfg), array).singular_values()
        worst = max(worst, s[3] / s[0])
    yield "MSR rank three", worst < 1e-10, f"max s4/s1 {worst:.1e}"

    z = np.array([0.1, -0.2, 0.0])
    cpt = CptTensor.random(rng, cfg.omega)
    msrs = [msr_forward(TargetInstance(z, cpt, cfg), array.with_q(np.eye(3)[l]))
            for l in range(3)]
    rec = recover_cpt(msrs, z, array)
    again = [msr_forward(TargetInstance(z, _as_cpt(rec.scaled_tensor / cfg.scale), cfg),
                         array.with_q(np.eye(3)[l])) for l in range(3)]
    err = max(np.linalg.norm(a.A - b.A) / np.linalg.norm(a.A) for a, b in zip(msrs, again))
    zeros = np.abs(rec.scaled_tensor[zero_row_mask()]).max()
    yield "recovery reproduces data", err < 1e-7 and zeros == 0.0, \
        f"rel misfit {err:.1e}, zero rows {zeros:.1e}"

    grid = SearchGrid.plane((-1, 1), (-1, 1), 0.05)
    loc = locate(msrs[2], grid, array)
    dist = np.linalg.norm(loc.z_hat - z)
    yield "MUSIC peak at the target", dist <= 0.05 * np.sqrt(2), f"offset {dist:.3f}"


def _as_cpt(real):
    m = np.array(real, dtype=complex)
    m[zero_row_mask()] = 0.0
    return CptTensor(m)


def _dictionary_checks():
    d = table_dictionary()
    worst = 0.0
    for k, printed in REFERENCE_TABLE_NORMALIZED.items():
        raw = np.array(REFERENCE_TABLE[k])
        worst = max(worst, np.abs(raw / raw.max() - np.array(printed)).max())
    # The printed table is not self-consistent to the last digit; a few units
    # of 1e-4 is the honest bound.
    ok = worst < 5e-4
    yield "table descriptors normalize", ok, f"max deviation {worst:.1e}"
    ok = all(match(d[k].descriptor, d).best == k for k in d.labels)
    yield "dictionary self-match", ok, "each entry matches itself"


def _solver_checks():
    grid = voxelize(ShapeSpec("cube"), 0.25)
    cpt = grid_cpt(grid, 1.0)
    s = cpt.singular_values()[:3]
    spread = (s.max() - s.min()) / s.max()
    yield "cube solver symmetry", spread < 0.02, f"top singular values {np.round(s, 4)}"
    moved = grid_cpt(grid.translated((3, -2, 1)), 1.0)
    err = np.linalg.norm(moved.matrix - cpt.matrix) / np.linalg.norm(cpt.matrix)
    yield "solver translation invariance", err < 1e-10, f"rel change {err:.1e}"


def run_selftest(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    results = []
    for group in (_rotation_checks(rng), _forward_checks(rng), _dictionary_checks(),
                  _solver_checks()):
        results.extend(group)
    return results
