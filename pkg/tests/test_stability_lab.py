import json
import math

import numpy as np
import pytest

from oracles import fit_order
from roughstab.errors import DomainError, StructuralError
from roughstab.gaussian_paths import FbmSpec, TimeGrid, ito_lift, lift_piecewise_linear, sample_fbm_indexed
from roughstab.rde_solver import DiffusionSpec, DriftSpec, Trajectory, solve
from roughstab.rough_core import sewing_constant, young_constant
from roughstab.stability_lab import (
    NORM_FLOOR,
    Ensemble,
    angular_bound_check,
    angular_constant,
    angular_rhs,
    direction_derivative,
    ensemble_exponents,
    exponent_from_lognorms,
    gronwall_chain_check,
    is_nonincreasing,
    lyapunov_estimate,
    lyapunov_sweep,
    polar_decompose,
    step1_rde_residuals,
    sweep_report,
)
from roughstab.systems import fhn_2d, scalar_linear, sin_diffusion


def lift(n=257, h=0.45, m=1, index=0, horizon=1.0, seed=0):
    grid = TimeGrid.uniform(0, horizon, n)
    return lift_piecewise_linear(sample_fbm_indexed(FbmSpec(h, m, horizon), grid, seed, index))


def fake_traj(t, y):
    return Trajectory(TimeGrid(np.asarray(t, dtype=float)), np.asarray(y, dtype=float), np.zeros((len(t), 0)))


# --- polar decomposition ------------------------------------------------------


def test_polar_of_decaying_axis_path():
    t = np.linspace(0, 2, 21)
    pol = polar_decompose(fake_traj(t, np.stack([np.exp(-t), 0 * t], axis=1)))
    np.testing.assert_allclose(pol.lognorm, -t, atol=1e-15)
    np.testing.assert_array_equal(pol.theta, np.tile([1.0, 0.0], (21, 1)))
    assert pol.valid_mask.all() and pol.first_invalid is None


def test_polar_mask_flips_at_floor_crossing():
    t = np.arange(6.0)
    y = np.array([1.0, 1e-10, 1e-20, 1e-31, 1e-40, 0.0])[:, None]
    pol = polar_decompose(fake_traj(t, y))
    assert pol.valid_mask.tolist() == [True, True, True, False, False, False]
    assert pol.first_invalid == 3
    assert np.isnan(pol.theta[3:]).all()
    with pytest.raises(DomainError):
        polar_decompose(fake_traj(t[:2], np.zeros((2, 1))))


def test_polar_roundtrip_100_trajectories():
    worst = 0.0
    for k in range(100):
        rng = np.random.default_rng(k)
        y = rng.standard_normal((30, 3)) * np.exp(rng.uniform(-20, 20, (30, 1)))
        pol = polar_decompose(fake_traj(np.arange(30.0), y))
        assert np.all(np.abs(np.linalg.norm(pol.theta, axis=1) - 1) < 1e-10)
        rec = np.exp(pol.lognorm)[:, None] * pol.theta
        worst = max(worst, float(np.max(np.linalg.norm(rec - y, axis=1) / np.linalg.norm(y, axis=1))))
    assert worst < 1e-10


def test_lyapunov_estimate_is_endpoint_quotient():
    sys_ = scalar_linear(1.0, 0.2)
    rp = lift(513, horizon=8.0, index=1)
    traj = solve(sys_.drift, sys_.diff, rp, [2.0])
    pol = polar_decompose(traj)
    assert lyapunov_estimate(pol) == (pol.lognorm[-1] - pol.lognorm[0]) / (8.0 - 0.0)


def test_lyapunov_estimate_from_floor_crossing():
    t = np.arange(6.0)
    y = np.array([1.0, 1e-10, 1e-20, 1e-31, 1e-40, 0.0])[:, None]
    assert lyapunov_estimate(polar_decompose(fake_traj(t, y))) == math.log(NORM_FLOOR) / 3.0


def test_exponent_burn_in_window():
    t = np.linspace(0, 10, 101)
    logn = np.where(t < 2, 5 * t, 10 - (t - 2))[None, :]
    assert abs(exponent_from_lognorms(logn, t, 0.2)[0] + 1.0) < 1e-12
    assert abs(exponent_from_lognorms(logn, t, 0.0)[0] - (2 / 10)) < 1e-12
    # a path that reaches the floor after the burn-in window
    below = np.where(t < 5, -t, -1e3)[None, :]
    assert abs(exponent_from_lognorms(below, t, 0.2)[0] - (math.log(NORM_FLOOR) + 2) / 3) < 1e-12


# --- Step-1 residuals -------------------------------------------------------------


def test_scalar_direction_residual_vanishes():
    sys_ = sin_diffusion(1.0, 0.5)
    rp = lift(257, index=2)
    traj = solve(sys_.drift, sys_.diff, rp, [0.8])
    assert step1_rde_residuals(traj, sys_.drift, sys_.diff, rp)["theta"] < 1e-10


def test_pure_drift_log_norm():
    sys_ = scalar_linear(1.0, 0.0)
    n = 1025
    rp = lift(n, horizon=4.0)
    traj = solve(sys_.drift, sys_.diff, rp, [3.0])
    dt = 4.0 / (n - 1)
    res = step1_rde_residuals(traj, sys_.drift, sys_.diff, rp)
    # the drift rate of log||y|| is exactly -1; the only defect is Euler's
    assert res["log_norm"] <= 4.0 * dt
    np.testing.assert_allclose(np.log(traj.y[:, 0]), math.log(3.0) + np.arange(n) * math.log(1 - dt), atol=1e-11)


def test_residuals_shrink_under_refinement():
    sys_ = fhn_2d(0.3)
    fine = lift(4097, m=2, index=3, horizon=2.0)
    names = ("norm_sq", "norm", "log_norm", "theta")
    table = {k: [] for k in names}
    ns = []
    for st in (32, 16, 8, 4):
        rp = fine.coarsen(st)
        traj = solve(sys_.drift, sys_.diff, rp, [1.0, 0.0])
        res = step1_rde_residuals(traj, sys_.drift, sys_.diff, rp)
        ns.append(rp.n - 1)
        for k in names:
            table[k].append(res[k])
    for k in names:
        assert table[k][-1] < table[k][0], k
        assert fit_order(ns, table[k]) > 0.3, k


def test_geometric_lift_has_no_bracket_term():
    from roughstab.rough_core import change_of_variables_check
    sys_ = scalar_linear(1.0, 0.3)
    rp = lift(129)
    traj = solve(sys_.drift, sys_.diff, rp, [1.0])
    rep = change_of_variables_check(lambda y: y @ y, lambda y: 2 * y, lambda y: 2 * np.eye(1),
                                    traj, sys_.drift, sys_.diff, rp)
    assert "bracket" not in rep.terms
    ito = ito_lift(rp.path)
    rep2 = change_of_variables_check(lambda y: y @ y, lambda y: 2 * y, lambda y: 2 * np.eye(1),
                                     traj, sys_.drift, sys_.diff, ito)
    assert "bracket" in rep2.terms


# --- angular bound ----------------------------------------------------------------


def test_angular_constant_pins_young_and_sewing():
    sys_ = fhn_2d(0.05)
    k_a = young_constant(2.5, 1.25)
    c_a = sewing_constant(0.4)
    expected = max(2 * (0.05 + np.linalg.norm(sys_.drift.A, 2)), 96 * k_a * (1 + c_a) * 0.05 ** 2 * 1.05, 0.5)
    assert angular_constant(sys_.drift, 0.05, 2.5) == expected


def test_direction_derivative_is_tangent():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((10, 3))
    gy = rng.standard_normal((10, 3, 2))
    q = direction_derivative(y, gy)
    th = y / np.linalg.norm(y, axis=1)[:, None]
    assert np.max(np.abs(np.einsum("ni,nij->nj", th, q))) < 1e-12


def test_angular_scalar_lhs_is_zero():
    sys_ = scalar_linear(1.0, 0.05)
    rp = lift(129)
    traj = solve(sys_.drift, sys_.diff, rp, [1.0])
    rep = angular_bound_check(traj, sys_.drift, sys_.diff, rp, 0.5)
    assert rep.lhs == 0 and rep.holds


def test_angular_bound_50_samples():
    sys_ = fhn_2d(0.05)
    for k in range(50):
        rp = lift(129, m=2, index=k)
        traj = solve(sys_.drift, sys_.diff, rp, [1.0, 0.3])
        rep = angular_bound_check(traj, sys_.drift, sys_.diff, rp, 0.5)
        assert rep.details["applicable"] and rep.holds, k
        assert rep.lhs > 0


def test_angular_rhs_monotone_in_diffusion_scale():
    for yy in np.linspace(0, 3, 7):
        assert angular_rhs(1.0, 2.0, 0.5, 0.42, 2 * yy, 1.3) >= angular_rhs(1.0, 2.0, 0.5, 0.42, yy, 1.3)
    a, b = fhn_2d(0.1), fhn_2d(0.2)
    assert angular_constant(b.drift, 0.2, 2.5) >= angular_constant(a.drift, 0.1, 2.5)


def test_angular_domain_checks():
    sys_ = fhn_2d(0.05)
    rp = lift(65, m=2, horizon=2.0)
    traj = solve(sys_.drift, sys_.diff, rp, [1.0, 0.0])
    with pytest.raises(DomainError):
        angular_bound_check(traj, sys_.drift, sys_.diff, rp, 0.5)
    with pytest.raises(DomainError):
        angular_bound_check(traj, sys_.drift, sys_.diff, rp, 0.5, nu=0.3, interval=(0, 32))
    zero = solve(sys_.drift, sys_.diff, rp, [0.0, 0.0], (0, 32))
    rep = angular_bound_check(zero, sys_.drift, sys_.diff, rp, 0.5, interval=(0, 32))
    assert rep.details["applicable"] is False


# --- exponents and sweeps ---------------------------------------------------------


def test_deterministic_rate():
    ens = ensemble_exponents(scalar_linear(1.0, 0.0), FbmSpec(0.45, 1, 20.0), 2048, 3)
    assert np.all(np.abs(ens.full_horizon + 1.0) < 0.02)


def test_exponent_shift_invariance_for_linear_system():
    sys_ = fhn_2d(0.3, cubic=0.0)
    spec = FbmSpec(0.45, 2, 10.0)
    a = ensemble_exponents(sys_, spec, 512, 6, y0=[0.3, 0.4])
    b = ensemble_exponents(sys_, spec, 512, 6, y0=[3.0, 4.0])
    assert np.max(np.abs(a.exponents - b.exponents)) < 1e-12
    assert np.max(np.abs(a.full_horizon - b.full_horizon)) < 1e-12


def test_ensemble_chunking_and_merge():
    sys_ = sin_diffusion(1.0, 0.3)
    spec = FbmSpec(0.45, 1, 5.0)
    whole = ensemble_exponents(sys_, spec, 256, 7, seed=3, chunk=50)
    parts = Ensemble.merge([ensemble_exponents(sys_, spec, 256, 3, seed=3, chunk=2),
                            ensemble_exponents(sys_, spec, 256, 4, seed=3, start=3)])
    np.testing.assert_array_equal(whole.exponents, parts.exponents)
    assert whole.window_rates.shape == (7, 5)


def test_ensemble_validation():
    with pytest.raises(StructuralError):
        ensemble_exponents(fhn_2d(), FbmSpec(0.45, 1, 5.0), 64, 2)
    with pytest.raises(DomainError):
        ensemble_exponents(scalar_linear(), FbmSpec(0.45, 1, 5.0), 64, 0)


def test_divergent_members_count_as_unstable():
    ens = ensemble_exponents(scalar_linear(1.0, 40.0), FbmSpec(0.45, 1, 5.0), 256, 5)
    assert ens.diverged.any()
    assert np.all(np.isinf(ens.exponents[ens.diverged]))
    rep = sweep_report([40.0], [ens])
    assert rep.threshold_scan[0][2] < 1.0


def _ensemble(values):
    v = np.asarray(values, dtype=float)
    return Ensemble(v, v, np.zeros(v.size, bool), np.zeros((v.size, 5)), 1.0)


def test_sweep_threshold_logic():
    ens = [_ensemble([-1, -1]), _ensemble([-1, -0.5]), _ensemble([-1, 0.1]), _ensemble([-1, -1])]
    rep = sweep_report([0.1, 0.2, 0.4, 0.8], ens, h_fn=lambda r: min(r, 0.5))
    assert rep.threshold == 0.2
    assert [s[2] for s in rep.threshold_scan] == [1.0, 1.0, 0.5, 1.0]
    assert rep.h_at_zero == 0.0 and rep.h_realized_sup == 0.5
    assert rep.lyapunov_estimate == -1.0
    lines = rep.to_csv().splitlines()
    assert lines[0] == "cg,seed,exponent,stable" and len(lines) == 9
    assert json.loads(rep.to_json())["threshold"] == 0.2


def test_small_sweep_is_monotone():
    rep = lyapunov_sweep(lambda c: fhn_2d(c), [0.05, 0.4, 0.8], FbmSpec(0.45, 2, 50.0), 2048, 20)
    fractions = [s[2] for s in rep.threshold_scan]
    assert fractions[0] == 1.0
    assert is_nonincreasing(fractions)
    assert rep.h_at_zero == 0.0 and rep.h_realized_sup >= 0.0


def test_is_nonincreasing():
    assert is_nonincreasing([1, 1, 0.5, 0])
    assert not is_nonincreasing([1, 0.5, 0.6])


# --- Gronwall chain ---------------------------------------------------------------


def test_gronwall_without_noise():
    drift = scalar_linear(1.0).drift
    diff = DiffusionSpec(lambda y: np.zeros((1, 1)), lambda y: np.zeros((1, 1, 1)), C_g=0.0)
    rp = lift(1001, horizon=10.0)
    traj = solve(drift, diff, rp, [1.0])
    out = gronwall_chain_check(traj, drift, diff, rp, 0.9, 10)
    assert out["holds"] and out["dissipative"]
    assert np.all(np.array(out["integrals"]) == 0)
    assert min(out["margins"]) > 0
    assert out["rate_bound"] == -0.9 and out["rate_dominates"]


def test_gronwall_scalar_linear_seeds():
    sys_ = scalar_linear(1.0, 0.1)
    dominated = 0
    for k in range(20):
        rp = lift(1001, index=k, horizon=10.0)
        traj = solve(sys_.drift, sys_.diff, rp, [1.0])
        out = gronwall_chain_check(traj, sys_.drift, sys_.diff, rp, 1.0, 10)
        assert out["holds"] and out["dissipative"], k
        dominated += out["rate_dominates"]
    assert dominated >= 19


def test_gronwall_reports_non_dissipative_windows():
    sys_ = scalar_linear(1.0, 0.1)
    rp = lift(301, horizon=3.0)
    traj = solve(sys_.drift, sys_.diff, rp, [1.0])
    out = gronwall_chain_check(traj, sys_.drift, sys_.diff, rp, 1.5, 3)
    assert not out["dissipative"]
    assert out["non_dissipative_windows"] == [0, 1, 2]


def test_gronwall_preconditions():
    sys_ = scalar_linear(1.0, 0.1)
    rp = lift(101, horizon=1.0)
    traj = solve(sys_.drift, sys_.diff, rp, [1.0])
    with pytest.raises(DomainError):
        gronwall_chain_check(traj, sys_.drift, sys_.diff, rp, 0.0, 1)
    with pytest.raises(StructuralError):
        gronwall_chain_check(traj, sys_.drift, sys_.diff, ito_lift(rp.path), 1.0, 1)
    with pytest.raises(StructuralError):
        gronwall_chain_check(traj, sys_.drift, sys_.diff, rp, 1.0, 2)


def test_drift_spec_lambda_used_by_chain():
    drift = DriftSpec(np.array([[-2.0]]))
    assert drift.lambda_A == 2.0
