import numpy as np
import pytest
from scipy import integrate

from eddyscope.errors import DomainError, EmptyGrid, GridMismatch, NoConvergence
from eddyscope.solver.shapes import KINDS, ShapeSpec
from eddyscope.solver.vie import (CUBE_SELF_INTEGRAL, CellProblem, NewtonPotential,
                                  compute_cpt, cpt_sweep, grid_cpt, solve_current)
from eddyscope.solver.voxel import voxelize
from eddyscope.tensor_core import PhysicalConfig, Rotation, rotate_cpt, zero_row_mask

from conftest import solver_cpts

STATIC_SPHERE = 4 * np.pi / 15  # e_i x xi is already divergence free and tangential


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ---------------------------------------------------------------- shapes

@pytest.mark.parametrize("kind", [k for k in KINDS if k != "custom_implicit"])
def test_shape_defaults(kind):
    s = ShapeSpec(kind)
    assert s.contains(np.zeros((1, 3)))[0]
    box = s.bounding_box()
    pts = np.random.default_rng(0).uniform(box[:, 0], box[:, 1], (20000, 3))
    mc = s.contains(pts).mean() * np.prod(box[:, 1] - box[:, 0])
    assert mc == pytest.approx(s.exact_volume(), rel=0.03)


def test_shape_validation():
    with pytest.raises(DomainError):
        ShapeSpec("torus")
    with pytest.raises(DomainError):
        ShapeSpec("custom_implicit")
    with pytest.raises(DomainError):
        ShapeSpec("custom_implicit", {"bounds": 1}, lambda x: np.sum(x**2, axis=1) > 0.5)


# ---------------------------------------------------------------- voxelize

def test_aligned_cube_and_box():
    g = voxelize(ShapeSpec("cube"), 0.25)
    assert g.n == 512 and g.volume == pytest.approx(8.0, abs=1e-12)
    assert np.all(g.fraction == 1)
    box = voxelize(ShapeSpec("l_shape"), 0.25)
    assert box.volume == pytest.approx(2.0, abs=1e-12)


def test_sphere_volume_and_convergence():
    exact = 4 * np.pi / 3
    assert voxelize(ShapeSpec("sphere"), 0.1).volume == pytest.approx(exact, rel=0.03)
    stair = [abs(voxelize(ShapeSpec("sphere"), h, subsamples=1).volume - exact) for h in (0.2, 0.1)]
    assert voxelize(ShapeSpec("sphere"), 0.1, subsamples=1).volume == pytest.approx(exact, rel=0.03)
    assert stair[1] < stair[0]


def test_staircase_uses_center_test():
    g = voxelize(ShapeSpec("sphere"), 0.2, subsamples=1)
    assert np.all(np.sum(g.centers**2, axis=1) <= 1)
    assert np.all(g.fraction == 1)


def test_voxelize_errors():
    with pytest.raises(DomainError):
        voxelize(ShapeSpec("cylinder"), 0.3)  # height 1 allows h <= 0.25
    with pytest.raises(DomainError):
        voxelize(ShapeSpec("cube"), 0.0)
    tiny = ShapeSpec("custom_implicit", {"bounds": 1.0},
                     lambda x: np.all(np.abs(x) <= 1e-9, axis=1))
    with pytest.raises(EmptyGrid):
        voxelize(tiny, 0.2, subsamples=1)


def test_lattice_transforms_preserve_geometry():
    g = voxelize(ShapeSpec("prism"), 0.2)
    t = g.translated((2, -1, 3))
    np.testing.assert_allclose(t.centers, g.centers + 0.2 * np.array([2, -1, 3]))
    O = Rotation.from_axis_angle([0, 0, 1], np.pi / 2).O
    r = g.rotated(np.round(O))
    assert r.volume == pytest.approx(g.volume)
    assert r.face_aperture.sum() == pytest.approx(g.face_aperture.sum())
    with pytest.raises(DomainError):
        g.translated((0.5, 0, 0))
    with pytest.raises(DomainError):
        g.rotated(Rotation.from_axis_angle([0, 0, 1], 0.3).O)


# ---------------------------------------------------------------- operators

def test_cube_self_integral():
    # div(x/|x|) = 2/|x| turns the volume integral into one over the faces.
    face, _ = integrate.dblquad(lambda y, z: 1 / np.sqrt(0.25 + y * y + z * z),
                                -0.5, 0.5, -0.5, 0.5, epsabs=1e-13, epsrel=1e-13)
    assert CUBE_SELF_INTEGRAL == pytest.approx(1.5 * face, rel=1e-12)


def test_fft_potential_matches_direct(rng):
    g = voxelize(ShapeSpec("l_shape"), 0.25)
    pot = NewtonPotential(g)
    u = rng.standard_normal((g.n, 3)) + 1j * rng.standard_normal((g.n, 3))
    np.testing.assert_allclose(pot.apply(u), pot.apply_direct(u), rtol=1e-10, atol=1e-12)


def test_projection_is_idempotent_and_divergence_free(rng):
    g = voxelize(ShapeSpec("sphere"), 0.25)
    cp = CellProblem(g)
    f = cp.project(rng.standard_normal(g.n_faces))
    assert np.linalg.norm(g.divergence @ f) < 1e-10 * np.linalg.norm(f) / g.h
    np.testing.assert_allclose(cp.project(f), f, atol=1e-12 * np.abs(f).max())


# ---------------------------------------------------------------- currents

def test_static_sphere_matches_analytic():
    g = voxelize(ShapeSpec("sphere"), 0.1)
    s = grid_cpt(g, 0.0).singular_values()[:3]
    np.testing.assert_allclose(s, STATIC_SPHERE, rtol=5e-3)


def test_zero_nu_has_no_current_but_a_static_tensor():
    g = voxelize(ShapeSpec("cube"), 0.25)
    f = solve_current(g, 0.0, 2)
    assert not np.any(f.J)
    cpt = cpt_sweep(g, None, PhysicalConfig(), [0.0])[0]
    assert cpt.nu == 0 and np.linalg.norm(cpt.matrix) > 0


def test_current_is_linear_in_small_nu():
    g = voxelize(ShapeSpec("ellipsoid"), 0.25)
    cp = CellProblem(g)
    j1 = np.linalg.norm(cp.solve(1e-3, 0).J)
    j2 = np.linalg.norm(cp.solve(2e-3, 0).J)
    assert j2 / j1 == pytest.approx(2.0, rel=1e-3)


def test_discrete_charge_conservation():
    g = voxelize(ShapeSpec("prism"), 0.2)
    for axis in range(3):
        f = solve_current(g, 1.0, axis)
        assert f.divergence_ratio() < 1e-6
        assert f.residual < 1e-8


def test_no_convergence_reported():
    g = voxelize(ShapeSpec("sphere"), 0.2)
    with pytest.raises(NoConvergence) as info:
        solve_current(g, 3.0, 0, tol=1e-14, maxiter=2)
    assert info.value.residual > 1e-14


def test_solve_current_validation():
    g = voxelize(ShapeSpec("cube"), 0.5)
    with pytest.raises(DomainError):
        solve_current(g, -1.0, 0)
    with pytest.raises(DomainError):
        solve_current(g, 1.0, 3)


def test_sphere_current_is_azimuthal():
    g = voxelize(ShapeSpec("sphere"), 0.05)
    J = solve_current(g, PhysicalConfig().nu, 2).J
    x = g.centers
    rho = np.hypot(x[:, 0], x[:, 1])
    ok = rho > 1e-9
    er = np.zeros_like(x)
    er[ok, 0], er[ok, 1] = x[ok, 0] / rho[ok], x[ok, 1] / rho[ok]
    # L2 norms over the body, so cut voxels count by their inside volume.
    w = np.sqrt(g.fraction)
    radial = w * np.einsum("ni,ni->n", J, er)
    vertical = w * J[:, 2]
    norm = np.linalg.norm(w[:, None] * J)
    assert np.linalg.norm(radial) < 0.02 * norm
    assert np.linalg.norm(vertical) < 0.02 * norm


# ---------------------------------------------------------------- tensors

def test_compute_cpt_checks_inputs():
    g = voxelize(ShapeSpec("cube"), 0.5)
    cp = CellProblem(g)
    fields = [cp.solve(1.0, i) for i in range(3)]
    with pytest.raises(GridMismatch):
        compute_cpt(g, 1.0, fields[:2])
    with pytest.raises(GridMismatch):
        compute_cpt(g, 2.0, fields)
    other = voxelize(ShapeSpec("cube"), 0.5).translated((1, 0, 0))
    with pytest.raises(GridMismatch):
        compute_cpt(other, 1.0, fields)
    assert np.all(compute_cpt(g, 1.0, fields).matrix[zero_row_mask()] == 0)


def test_symmetry_patterns():
    cube = solver_cpts("cube", 0.1)[0].singular_values()[:3]
    assert (cube.max() - cube.min()) / cube.max() < 0.02
    s = solver_cpts("ellipsoid", 0.1)[0].singular_values()[:3]
    assert abs(s[1] - s[2]) / s[1] < 0.02
    assert (s[0] - s[1]) / s[0] > 0.05


def test_resolution_halving():
    for kind in ("ellipsoid", "cylinder"):
        coarse = solver_cpts(kind, 0.2)[0].matrix
        fine = solver_cpts(kind, 0.1)[0].matrix
        assert rel(coarse, fine) < 0.05


def test_translation_invariance():
    g = voxelize(ShapeSpec("prism"), 0.2)
    a = grid_cpt(g, 1.0)
    b = grid_cpt(g.translated((5, -3, 2)), 1.0)
    assert rel(b.matrix, a.matrix) < 1e-10


@pytest.mark.parametrize("axis", [[1, 0, 0], [0, 1, 0], [0, 0, 1]])
def test_lattice_rotation_covariance(axis):
    g = voxelize(ShapeSpec("prism"), 0.2)
    r = Rotation(np.round(Rotation.from_axis_angle(axis, np.pi / 2).O))
    a = rotate_cpt(grid_cpt(g, 1.0), r)
    b = grid_cpt(g.rotated(r.O), 1.0)
    assert rel(b.matrix, a.matrix) < 1e-8


def test_generic_rotation_within_discretization_error():
    r = Rotation.from_axis_angle([1, 2, 3], 0.7)
    inner = ShapeSpec("l_shape")
    rotated = ShapeSpec("custom_implicit", {"bounds": float(np.linalg.norm([1, .5, .5]))},
                        lambda x: inner.contains(x @ r.O))
    nu = PhysicalConfig().nu
    coarse, fine = (grid_cpt(voxelize(inner, h), nu) for h in (0.25, 0.125))
    err = rel(coarse.matrix, fine.matrix)
    got = grid_cpt(voxelize(rotated, 0.125), nu)
    assert rel(got.matrix, rotate_cpt(fine, r).matrix) < 2 * err


def test_scaling_law():
    cfg = PhysicalConfig()
    s = 0.5
    small = ShapeSpec("ellipsoid", {"semi_axes": (0.5, 0.5, 1.0)})
    direct = cpt_sweep(small, 0.05, cfg, [cfg.omega])[0]
    mapped = cpt_sweep(ShapeSpec("ellipsoid"), 0.125, cfg, [cfg.omega * s**2])[0]
    assert rel(direct.matrix, s**5 * mapped.matrix) < 0.05
    via_scale = cpt_sweep(ShapeSpec("ellipsoid"), 0.125, cfg, [cfg.omega], scale=s)[0]
    assert rel(via_scale.matrix, s**5 * mapped.matrix) < 1e-12
    assert via_scale.nu == pytest.approx(cfg.nu * s**2)


def test_frequency_sweep():
    cfg = PhysicalConfig()
    omegas = [73.5 + 10 * n for n in range(1, 20)]
    cpts = cpt_sweep(ShapeSpec("cube"), 0.5, cfg, omegas)
    nus = [c.nu for c in cpts]
    assert len(cpts) == 19
    assert nus[0] == pytest.approx(0.63, abs=0.01) and nus[-1] == pytest.approx(1.98, abs=0.01)
    steps = [np.linalg.norm(b.matrix - a.matrix) for a, b in zip(cpts, cpts[1:])]
    assert max(steps) < 2 * min(steps)
    with pytest.raises(DomainError):
        cpt_sweep(ShapeSpec("cube"), 0.5, cfg, [cfg.omega * 5])


def test_loose_golden_sphere():
    s = solver_cpts("sphere", 0.1)[0].singular_values()[0]
    assert s == pytest.approx(0.8282, rel=0.15)
