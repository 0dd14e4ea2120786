import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fbm_cov, iterated_integral
from roughstab.errors import DomainError, StructuralError
from roughstab.gaussian_paths import (
    MAX_CHOLESKY_INCREMENTS,
    FbmSpec,
    RoughPath,
    SamplePath,
    TimeGrid,
    bracket,
    bracket_path,
    brownian_kernel,
    chen_defect,
    check_kernel,
    fbm_kernel,
    ito_lift,
    lift_piecewise_linear,
    rect_cov,
    sample_fbm,
    sample_fbm_batch,
    sample_fbm_indexed,
    stream,
    symmetry_defect,
    zero_rough_path,
)


def unit_grid(n):
    return TimeGrid.uniform(0.0, 1.0, n)


# --- grids and specs --------------------------------------------------------


def test_grid_rejects_non_increasing():
    with pytest.raises(StructuralError):
        TimeGrid(np.array([0.0, 0.5, 0.5]))
    with pytest.raises(StructuralError):
        TimeGrid(np.array([0.0]))


def test_uniform_flag_matches_points():
    assert unit_grid(17).uniform_spacing
    assert not TimeGrid(np.array([0.0, 0.1, 0.5, 1.0])).uniform_spacing


@pytest.mark.parametrize("h", [0.0, 1.0, 1.5, -0.2])
def test_hurst_domain(h):
    with pytest.raises(DomainError):
        FbmSpec(h)


def test_rough_regime_flag():
    FbmSpec(0.45).require_rough_regime()
    with pytest.raises(DomainError):
        FbmSpec(0.7).require_rough_regime()


def test_grid_size_limit():
    grid = TimeGrid.uniform(0, 1, MAX_CHOLESKY_INCREMENTS + 2)
    with pytest.raises(DomainError):
        sample_fbm(FbmSpec(0.45), grid, 0)


def test_grid_outside_horizon():
    with pytest.raises(DomainError):
        sample_fbm(FbmSpec(0.45, horizon=1.0), TimeGrid.uniform(0, 2, 5), 0)


# --- sampling law ---------------------------------------------------------------


def test_starts_at_origin_and_deterministic():
    spec = FbmSpec(0.4, 2)
    a = sample_fbm(spec, unit_grid(65), 11)
    b = sample_fbm(spec, unit_grid(65), 11)
    assert np.all(a.values[0] == 0)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_fbm(spec, unit_grid(65), 12).values)


def test_batch_matches_indexed_streams():
    spec = FbmSpec(0.45, 2)
    grid = unit_grid(33)
    batch = sample_fbm_batch(spec, grid, 5, 4)
    for i in range(4):
        np.testing.assert_allclose(batch[i], sample_fbm_indexed(spec, grid, 5, i).values,
                                   rtol=0, atol=1e-13)


def test_streams_are_independent():
    a = stream(3, 0).standard_normal(10_000)
    b = stream(3, 1).standard_normal(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_brownian_unit_variance():
    # Brownian special case: Var(x_1) = 1 per dimension.
    spec = FbmSpec(0.5, 2)
    vals = sample_fbm_batch(spec, TimeGrid(np.array([0.0, 1.0])), 0, 100_000)[:, 1, :]
    assert np.all(np.abs(vals.var(axis=0) - 1.0) < 0.02)


def test_unit_increment_second_moment():
    # E|x_1 - x_0|^2 = |1 - 0|^{2H} = 1.
    vals = sample_fbm_batch(FbmSpec(0.4), TimeGrid(np.array([0.0, 1.0])), 1, 100_000)[:, 1, 0]
    assert abs(np.mean(vals ** 2) - 1.0) < 0.02


def test_increment_correlation():
    # Corr of the two half increments is 2^{2H-1} - 1, about -0.1294 for H=0.4.
    h = 0.4
    vals = sample_fbm_batch(FbmSpec(h), TimeGrid(np.array([0.0, 0.5, 1.0])), 2, 100_000)[:, :, 0]
    inc = np.diff(vals, axis=1)
    corr = np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]
    expected = 2 ** (2 * h - 1) - 1
    # independent route: covariance function at the four corners
    direct = (fbm_cov(h, 1, 0.5) - fbm_cov(h, 1, 0) - fbm_cov(h, 0.5, 0.5) + fbm_cov(h, 0.5, 0)) / 0.5 ** (2 * h)
    assert abs(direct - expected) < 1e-12
    assert abs(corr - expected) < 0.01


def test_moment_scaling_across_dyadic_scales():
    h = 0.45
    n = 65
    vals = sample_fbm_batch(FbmSpec(h), unit_grid(n), 4, 10_000)[:, :, 0]
    ratios = []
    for step in (1, 2, 4, 8, 16, 32, 64):
        inc = vals[:, step] - vals[:, 0]
        ratios.append(np.sqrt(np.mean(inc ** 2)) / (step / (n - 1)) ** h)
    assert max(ratios) / min(ratios) < 3.0


# --- lifts ----------------------------------------------------------------------


def test_single_segment_area():
    path = SamplePath(TimeGrid(np.array([0.0, 1.0])), np.array([[0.0, 0.0], [2.0, -1.0]]))
    rp = lift_piecewise_linear(path)
    np.testing.assert_allclose(rp.area(0, 1), 0.5 * np.outer([2, -1], [2, -1]))


def test_scalar_area_is_half_square():
    rp = lift_piecewise_linear(sample_fbm(FbmSpec(0.4), unit_grid(20), 3))
    tab = rp.area_table()[:, :, 0, 0]
    x = rp.x[:, 0]
    for i in range(20):
        for j in range(i, 20):
            assert abs(tab[i, j] - 0.5 * (x[j] - x[i]) ** 2) < 1e-12


def test_triangle_signed_area():
    path = SamplePath(TimeGrid(np.array([0.0, 0.5, 1.0])),
                      np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]))
    a = lift_piecewise_linear(path).area(0, 2)
    oracle = iterated_integral(path.values, 0, 2, refine=50)
    np.testing.assert_allclose(a, oracle, atol=1e-12)
    anti = 0.5 * (a - a.T)
    assert abs(abs(anti[0, 1]) - 0.5) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 12), st.integers(1, 3), st.integers(0, 2 ** 31))
def test_assembly_matches_direct_iterated_integral(n, m, seed):
    vals = np.vstack([np.zeros(m), stream(seed).standard_normal((n - 1, m)).cumsum(axis=0)])
    rp = lift_piecewise_linear(SamplePath(unit_grid(n), vals))
    rng = stream(seed, 1)
    for _ in range(5):
        i, j = sorted(rng.integers(0, n, 2))
        np.testing.assert_allclose(rp.area(i, j), iterated_integral(vals, i, j), atol=1e-10)


@pytest.mark.parametrize("h", [0.35, 0.4, 0.45])
def test_chen_and_symmetry_exact_for_lift(h):
    for seed in range(5):
        rp = lift_piecewise_linear(sample_fbm(FbmSpec(h, 2), unit_grid(48), seed))
        assert chen_defect(rp) < 1e-12
        assert symmetry_defect(rp) < 1e-12


def test_chen_defect_of_zero_area():
    path = sample_fbm(FbmSpec(0.45, 2), unit_grid(12), 0)
    n = path.n
    rp = RoughPath(path, np.zeros((n - 1, 2, 2)), full=np.zeros((n, n, 2, 2)))
    x = path.values
    expected = max(np.linalg.norm(np.outer(x[t] - x[u], x[u] - x[s]))
                   for s in range(n) for u in range(s, n) for t in range(u, n))
    assert abs(chen_defect(rp) - expected) < 1e-12
    assert expected > 0


def test_chen_defect_detects_perturbation():
    rp = lift_piecewise_linear(sample_fbm(FbmSpec(0.45, 2), unit_grid(10), 1))
    tab = rp.area_table().copy()
    tab[2, 7, 0, 1] += 1e-3
    bad = RoughPath(rp.path, rp.steps, False, full=tab)
    assert chen_defect(bad) >= 1e-3 - 1e-15


def test_chen_random_triples_for_long_paths():
    rp = lift_piecewise_linear(sample_fbm(FbmSpec(0.4, 3), unit_grid(300), 2))
    assert chen_defect(rp, max_triples=5000) < 1e-10


def test_coarsen_preserves_areas():
    rp = lift_piecewise_linear(sample_fbm(FbmSpec(0.45, 2), unit_grid(33), 4))
    c = rp.coarsen(4)
    for i in range(c.n):
        for j in range(i, c.n):
            np.testing.assert_allclose(c.area(i, j), rp.area(4 * i, 4 * j), atol=1e-13)
    assert chen_defect(c) < 1e-12


# --- bracket --------------------------------------------------------------------


def test_bracket_vanishes_for_geometric_lift():
    rp = lift_piecewise_linear(sample_fbm(FbmSpec(0.4, 2), unit_grid(30), 0))
    assert max(np.abs(bracket(rp, i, j)).max() for i in range(30) for j in range(i, 30)) < 1e-10
    assert np.all(bracket_path(rp) == 0)


def test_bracket_of_ito_lift_is_time():
    path = sample_fbm(FbmSpec(0.5), unit_grid(21), 0)
    rp = ito_lift(path)
    t = path.times
    for i, j in [(0, 20), (3, 9), (5, 6)]:
        assert abs(bracket(rp, i, j)[0, 0] - (t[j] - t[i])) < 1e-12


def test_bracket_of_zero_path():
    rp = zero_rough_path(unit_grid(5), 2)
    assert np.all(bracket(rp, 0, 4) == 0)


# --- covariance ---------------------------------------------------------------


def test_rect_cov_brownian_disjoint_is_zero():
    k = brownian_kernel(2)
    np.testing.assert_allclose(rect_cov(k, 0.0, 0.3, 0.5, 0.9), 0.0, atol=1e-15)


def test_rect_cov_diagonal():
    h = 0.4
    k = fbm_kernel(h, 2)
    np.testing.assert_allclose(rect_cov(k, 0.2, 0.7, 0.2, 0.7), 0.5 ** (2 * h) * np.eye(2), atol=1e-14)


def test_rect_cov_adjacent_halves():
    r = rect_cov(fbm_kernel(0.4), 0.0, 0.5, 0.5, 1.0)[0, 0]
    direct = fbm_cov(0.4, 0.5, 1.0) - fbm_cov(0.4, 0.5, 0.5) - fbm_cov(0.4, 0.0, 1.0) + fbm_cov(0.4, 0.0, 0.5)
    assert abs(r - direct) < 1e-15
    # closed form 1/2 (1 - 2 * 2^{-2H}) = -0.0743 at H = 0.4
    assert abs(r - 0.5 * (1 - 2 * 2 ** (-0.8))) < 1e-12
    assert abs(r + 0.0743) < 1e-4


@pytest.mark.parametrize("h", [0.3, 0.45, 0.5, 0.7])
def test_kernel_symmetric_and_psd(h):
    sym, eig = check_kernel(fbm_kernel(h, 2), np.linspace(0.05, 1, 12))
    assert sym < 1e-12
    assert eig > -1e-8
