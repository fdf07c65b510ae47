import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eddyscope.errors import BisectionFailure, DomainError, RankError, SingularPoint
from eddyscope.forward import (MsrMatrix, TargetInstance, add_noise, msr_forward,
                               msr_superpose, noise_for_level, plates)
from eddyscope.localization import (Localization, NoiseProjector,
                                    ResolutionStudy, SearchGrid, differentiated,
                                    local_maxima, locate, music_functional, music_map,
                                    noise_projector, rank_fixed, rank_threshold, steering)
from eddyscope.tensor_core import PhysicalConfig

from conftest import solver_cpts

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture(scope="module")
def ellipsoid():
    return solver_cpts("ellipsoid", 0.1)[0]


def clean_msr(cpt, z, array=None):
    return msr_forward(TargetInstance(z, cpt, PhysicalConfig()), array or plates())


# ---------------------------------------------------------------- grid

def test_plane_grid():
    g = SearchGrid.plane((-1, 1), (-1, 1), 0.02)
    assert g.shape == (101, 101) and len(g.points) == 101**2
    np.testing.assert_allclose(g.points[0], [-1, -1, 0])
    np.testing.assert_allclose(g.points[-1], [1, 1, 0], atol=1e-12)
    with pytest.raises(DomainError):
        SearchGrid.plane(step=0.0)


def test_grid_excludes_sensors():
    a = plates()
    with pytest.raises(SingularPoint):
        SearchGrid(a.sources[:4], (4,), 0.1).excluding(a)
    SearchGrid.plane().excluding(a)


# ---------------------------------------------------------------- projector

@given(seeds)
@settings(max_examples=20, deadline=None)
def test_projector_properties(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((40, 30))
    proj = noise_projector(A, rank_fixed(4))
    P = proj.P
    assert np.linalg.norm(P @ P - P) < 1e-10
    assert np.linalg.norm(P - P.T) < 1e-12
    assert round(np.trace(P)) == 30 - 4
    _, _, vt = np.linalg.svd(A)
    assert np.abs(P @ vt[:4].T).max() < 1e-12


def test_projector_rank_errors():
    with pytest.raises(RankError):
        noise_projector(np.ones((5, 4)), rank_fixed(4))
    with pytest.raises(DomainError):
        noise_projector(np.ones((5, 4)), ("bogus", 1))


def test_two_targets_give_six_singular_values(ellipsoid):
    a = plates()
    A = msr_superpose([TargetInstance([-0.5, 0, 0], ellipsoid),
                       TargetInstance([0.5, 0, 0], ellipsoid)], a)
    s = A.singular_values()
    assert s[6] < 1e-10 * s[0]
    assert noise_projector(A, rank_threshold(0.1)).signal_rank == 6


def test_identity_projector_limit(rng):
    a = plates(n_side=4)
    proj = NoiseProjector(np.zeros((a.M, 0)), np.ones(1))
    z = np.array([0.1, 0.2, 0.0])
    g = steering(z[None], a.sources, a.p)[0]
    assert music_functional(proj, z, a.sources, a.p) == pytest.approx(
        1 / np.sqrt(np.sum(g**2)))


def test_functional_ignores_data_scale(ellipsoid):
    a = plates()
    A = clean_msr(ellipsoid, np.zeros(3), a)
    g = SearchGrid.plane((-0.5, 0.5), (-0.5, 0.5), 0.1)
    m1 = music_map(noise_projector(A), g, a.sources, a.p)
    m2 = music_map(noise_projector(MsrMatrix(1e6 * A.A, A.omega, A.q)), g, a.sources, a.p)
    np.testing.assert_allclose(m2, m1, rtol=1e-6)


# ---------------------------------------------------------------- localization

def test_clean_peak_at_center(ellipsoid):
    a = plates()
    grid = SearchGrid.plane((-1, 1), (-1, 1), 0.02)
    loc = locate(clean_msr(ellipsoid, np.zeros(3), a), grid, a)
    assert np.linalg.norm(loc.z_hat) <= 0.02
    assert loc.values.max() >= 10 * np.median(loc.values)
    assert loc.image.shape == grid.shape


def test_peak_follows_translation(ellipsoid):
    a = plates()
    z = np.array([0.3, -0.2, 0.0])
    loc = locate(clean_msr(ellipsoid, z, a), SearchGrid.plane(step=0.02), a)
    assert np.linalg.norm(loc.z_hat - z) <= 0.02


def test_peak_converges_under_refinement(ellipsoid):
    a = plates()
    z = np.array([0.0137, -0.0071, 0.0])
    A = clean_msr(ellipsoid, z, a)
    errs = [np.linalg.norm(locate(A, SearchGrid.plane((-0.4, 0.4), (-0.4, 0.4), h), a).z_hat - z)
            for h in (0.04, 0.02, 0.01)]
    assert errs[2] <= errs[0] / 2


def test_noisy_localization(ellipsoid):
    a = plates()
    A = clean_msr(ellipsoid, np.zeros(3), a)
    grid = SearchGrid.plane((-0.5, 0.5), (-0.5, 0.5), 0.02)
    sigma = noise_for_level(A, 0.01)
    hits = sum(np.linalg.norm(locate(add_noise(A, sigma, s), grid, a).z_hat) <= 2 * 0.02 * 1.5
               for s in range(20))
    assert hits >= 19


def test_noise_only_has_no_peak():
    a = plates()
    grid = SearchGrid.plane((-1, 1), (-1, 1), 0.05)
    for seed in range(20):
        W = np.random.default_rng(seed).standard_normal((a.N, a.M))
        loc = locate(MsrMatrix(W, 133.5, [0, 0, 1]), grid, a)
        assert loc.values.max() < 2 * np.median(loc.values)


# ---------------------------------------------------------------- criterion

def test_local_maxima():
    img = np.zeros((9, 9))
    img[2, 2], img[6, 6], img[6, 2] = 1.0, 0.8, 0.3
    assert sorted(map(tuple, local_maxima(img, 0.5))) == [(2, 2), (6, 6)]


def _loc(A, a, grid):
    proj = noise_projector(A, rank_fixed(6))
    values = music_map(proj, grid, a.sources, a.p)
    return Localization(grid.points[int(np.argmax(values))], values, grid, proj)


def test_differentiated_criterion(ellipsoid):
    a = plates()
    grid = SearchGrid.plane((-2.5, 2.5), (-1.25, 1.25), 0.025)

    def two(d):
        c = ResolutionStudy.centers(d)
        A = msr_superpose([TargetInstance(x, ellipsoid) for x in c], a)
        return _loc(A, a, grid), c

    loc, c = two(1.0)
    assert differentiated(loc, c, a)
    # Peaks away from the stated centers do not count.
    assert not differentiated(loc, c + [0.0, 0.6, 0.0], a)
    # A single target has a single peak.
    single = msr_forward(TargetInstance(c[0], ellipsoid), a)
    assert not differentiated(_loc(single, a, grid), c, a)


# ---------------------------------------------------------------- resolution

def test_resolution_study_small(ellipsoid):
    study = ResolutionStudy(solver_cpts("ellipsoid", 0.2)[0], PhysicalConfig(), plates(1.0),
                            grid_step=0.025, trials=5, seed_base=3)
    res = study.run([0.01, 0.05])
    assert res.monotone
    assert res.d_min[0] <= res.d_min[1]
    assert 0.2 < res.d_min[0] < 1.0
    np.testing.assert_allclose(res.snr, [100, 20])
    with pytest.raises(DomainError):
        study.run([0.0])


def test_resolution_bisection_failure():
    study = ResolutionStudy(solver_cpts("ellipsoid", 0.2)[0], PhysicalConfig(), plates(1.0),
                            grid_step=0.05, trials=3)
    with pytest.raises(BisectionFailure):
        study.d_min(0.9)
