import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorkit.errors import ValidationError
from factorkit.estimators import apc, pc, rpc_closed_form
from factorkit.inference import (
    amse_ratio,
    avar,
    common_component_ci,
    default_hac_lags,
    regress,
    rotation_diagnostics,
)
from factorkit.panel import Panel, ScaledData, prepare
from oracles import factor_panel, ridge_direct


@pytest.fixture(scope="module")
def Z():
    return prepare(Panel.from_array(factor_panel(np.random.default_rng(5), 120, 60, 3)))


def psd(M, tol=1e-10):
    return np.allclose(M, M.T, atol=1e-12) and np.linalg.eigvalsh(M).min() >= -tol


# ---------------------------------------------------------------------------
# rotations


def test_rotation_identity_example(rng):
    T, N = 80, 30
    Q, _ = np.linalg.qr(rng.standard_normal((T, 3)))
    V, _ = np.linalg.qr(rng.standard_normal((N, 3)))
    F0 = math.sqrt(T) * Q
    L0 = math.sqrt(N) * V * np.array([3.0, 2.0, 1.0])
    fit = pc(ScaledData.from_array(F0 @ L0.T), 3)
    # align column signs with the estimate
    s = np.sign(np.sum(F0 * fit.U, axis=0))
    F0, L0 = F0 * s, L0 * s
    rot = rotation_diagnostics(fit, F0, L0)
    np.testing.assert_allclose(rot.H1, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(rot.H2, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(rot.H_tilde, rot.H1, atol=1e-10)


def test_rotation_hbar_gbar_identity(rng):
    T, N = 100, 50
    F0 = rng.standard_normal((T, 3))
    L0 = rng.standard_normal((N, 3)) * [2.0, 1.5, 1.0]
    Zs = prepare(Panel.from_array(F0 @ L0.T + rng.standard_normal((T, N))))
    g = 0.05
    fit = rpc_closed_form(Zs, 3, g)
    rot = rotation_diagnostics(fit, F0, L0)
    Hb = rot.H_bar
    lhs = Hb @ rot.G_bar
    rhs = np.eye(3) - g * Hb @ np.diag(1 / fit.d) @ np.linalg.inv(Hb)
    np.testing.assert_allclose(lhs, rhs, atol=1e-8)
    np.testing.assert_allclose(rot.Delta**2, np.diag(np.maximum(fit.d - g, 0) / fit.d), atol=1e-14)


def test_rotation_none_when_factor_dropped(Z):
    fit = rpc_closed_form(Z, 3, pc(Z, 3).d[2] + 1e-3)
    rot = rotation_diagnostics(fit, np.ones((Z.T, 3)) + np.eye(Z.T, 3), np.eye(Z.N, 3) + 1)
    assert rot.H_bar is None and rot.G_bar is None


# ---------------------------------------------------------------------------
# variances


def test_default_lags():
    assert default_hac_lags(100) == 4
    assert default_hac_lags(200) == 4
    assert default_hac_lags(1000) == 6


def test_gamma_zero_matches_pc(Z):
    a = avar(rpc_closed_form(Z, 3, 0.0), Z, 4, 7)
    b = avar(pc(Z, 3), Z, 4, 7)
    np.testing.assert_allclose(a.avar_F_t, b.avar_F_t, atol=1e-14)
    np.testing.assert_allclose(a.avar_Lambda_i, b.avar_Lambda_i, atol=1e-14)
    assert a.A_C_it == pytest.approx(b.A_C_it, rel=1e-12)


def test_apc_common_component_variance_matches_pc(Z):
    a = avar(apc(Z, 3), Z, 2, 11)
    b = avar(pc(Z, 3), Z, 2, 11)
    assert a.A_C_it == pytest.approx(b.A_C_it, rel=1e-10)


def test_loewner_shrinkage(Z):
    g = 0.05
    hat = avar(pc(Z, 3), Z, 1, 3)
    bar = avar(rpc_closed_form(Z, 3, g), Z, 1, 3)
    assert np.linalg.eigvalsh(hat.avar_F_t - bar.avar_F_t).min() >= -1e-12
    assert np.linalg.eigvalsh(hat.avar_Lambda_i - bar.avar_Lambda_i).min() >= -1e-12


def test_dropped_factors_shrink_dimension(Z):
    d = pc(Z, 4).d
    fit = rpc_closed_form(Z, 4, 0.5 * (d[2] + d[3]))
    av = avar(fit, Z, 0, 0)
    assert av.avar_F_t.shape == (3, 3)
    assert av.retained.tolist() == [0, 1, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 59), st.integers(0, 119), st.sampled_from([0.0, 0.02, 0.08]), st.integers(0, 8))
def test_avar_psd(i, t, g, lags):
    Zs = prepare(Panel.from_array(factor_panel(np.random.default_rng(5), 120, 60, 3)))
    av = avar(rpc_closed_form(Zs, 3, g), Zs, i, t, hac_lags=lags)
    for M in (av.Gamma_t, av.Phi_i, av.avar_F_t, av.avar_Lambda_i):
        assert psd(M)
    assert av.A_C_it >= -1e-10


def test_homoskedastic_gamma(rng):
    T, N, sigma = 200, 400, 0.7
    X = rng.standard_normal((T, 2)) @ rng.standard_normal((2, N)) * 2 + sigma * rng.standard_normal((T, N))
    Zs = ScaledData.from_array(X)
    fit = pc(Zs, 2)
    target = sigma**2 * fit.Lambda.T @ fit.Lambda / N
    avg = np.mean([avar(fit, Zs, 0, t).Gamma_t for t in range(T)], axis=0)
    np.testing.assert_allclose(np.diag(avg), np.diag(target), rtol=0.05)
    assert abs(avg[0, 1]) < 0.05 * math.sqrt(avg[0, 0] * avg[1, 1])


def test_avar_validation(Z):
    fit = pc(Z, 2)
    with pytest.raises(ValidationError):
        avar(fit, Z, Z.N, 0)
    with pytest.raises(ValidationError):
        avar(fit, Z, 0, 0, hac_lags=-1)


# ---------------------------------------------------------------------------
# confidence intervals


def test_ci_zero_bias_for_pc(Z):
    fit = pc(Z, 3)
    est, bias, hw = common_component_ci(fit, avar(fit, Z, 3, 5))
    assert bias == 0.0
    assert est == pytest.approx(fit.F[5] @ fit.Lambda[3])
    assert hw > 0


def test_ci_level_scaling(Z):
    fit = pc(Z, 3)
    av = avar(fit, Z, 3, 5)
    _, _, h95 = common_component_ci(fit, av, 0.95)
    _, _, h90 = common_component_ci(fit, av, 0.90)
    assert h95 / h90 == pytest.approx(1.959963984540054 / 1.6448536269514722, rel=1e-12)
    with pytest.raises(ValidationError):
        common_component_ci(fit, av, 1.0)


def test_bias_formula_and_continuity(Z):
    i, t = 2, 9
    biases = []
    for g in (0.04, 0.01, 1e-3, 1e-5, 1e-8):
        fit = rpc_closed_form(Z, 3, g)
        est, bias, _ = common_component_ci(fit, avar(fit, Z, i, t))
        expected = -g * np.sum(fit.F[t] * fit.Lambda[i] / fit.d_gamma)
        assert bias == pytest.approx(expected, rel=1e-12)
        biases.append(abs(bias))
    assert all(a >= b for a, b in zip(biases, biases[1:]))
    assert biases[-1] < 1e-6


def test_bias_correction_restores_pc_component(Z):
    # F_bar Lambda_bar' + gamma F_bar (D^g)^{-1} Lambda_bar' = F_hat Lambda_hat'
    g = 0.03
    fit = rpc_closed_form(Z, 3, g)
    hat = pc(Z, 3)
    est, bias, _ = common_component_ci(fit, avar(fit, Z, 0, 0))
    assert est - bias == pytest.approx(hat.F[0] @ hat.Lambda[0], rel=1e-10)


def test_bias_needs_positive_retained(Z):
    fit = rpc_closed_form(Z, 3, 10.0)
    with pytest.raises(ValidationError):
        avar(fit, Z, 0, 0)


# ---------------------------------------------------------------------------
# AMSE


def test_amse_examples():
    assert amse_ratio(1.0, 0.3, 2.0) == 1.0
    assert amse_ratio(0.0, 0.3, 2.0) == pytest.approx(0.09 / 2.0)
    assert amse_ratio(0.875, 0.1, 1.0) == pytest.approx(0.015625 * 0.01 + 0.765625)
    assert amse_ratio(0.875, 0.1, 1.0) < 1
    with pytest.raises(ValidationError):
        amse_ratio(1.2, 0.1, 1.0)
    with pytest.raises(ValidationError):
        amse_ratio(0.5, 0.1, 0.0)


# ---------------------------------------------------------------------------
# regression


@pytest.fixture(scope="module")
def y(Z):
    rng = np.random.default_rng(11)
    return pc(Z, 3).F @ np.array([0.5, -1.0, 0.2]) + rng.standard_normal(Z.T)


def test_regress_kappa_zero(Z, y):
    res = regress(y, rpc_closed_form(Z, 3, 0.02), 0.0)
    np.testing.assert_allclose(res.alpha_ridge, res.alpha_ols, atol=1e-14)


def test_regress_kappa_large(Z, y):
    res = regress(y, rpc_closed_form(Z, 3, 0.02), 1e15)
    assert np.abs(res.alpha_ridge).max() < 1e-8


@pytest.mark.parametrize("g", [0.0, 0.02])
def test_regress_ridge_matches_direct_solve(Z, y, g):
    fit = rpc_closed_form(Z, 3, g)
    for kappa in (0.5, 10.0, 300.0):
        res = regress(y, fit, kappa)
        np.testing.assert_allclose(res.alpha_ridge, ridge_direct(fit.F, y, kappa), atol=1e-10)


def test_regress_general_factors_direct_path(Z, y, rng):
    from dataclasses import replace
    fit = pc(Z, 3)
    mixed = replace(fit, F_z=fit.F_z @ np.array([[1.0, 0.3, 0.0], [0.0, 1.0, 0.2], [0.1, 0.0, 1.0]]))
    res = regress(y, mixed, 4.0)
    np.testing.assert_allclose(res.alpha_ridge, ridge_direct(mixed.F, y, 4.0), atol=1e-10)


def test_regress_identical_fit_across_normalizations(Z, y):
    fits = [apc(Z, 3), pc(Z, 3), rpc_closed_form(Z, 3, 0.03)]
    fitted = [regress(y, f).fitted for f in fits]
    for other in fitted[1:]:
        np.testing.assert_allclose(other, fitted[0], atol=1e-10)


def test_regress_retains_surviving_factors(Z, y):
    d = pc(Z, 4).d
    res = regress(y, rpc_closed_form(Z, 4, 0.5 * (d[1] + d[2])), 1.0)
    assert res.retained.tolist() == [0, 1]


def test_regress_validation(Z, y):
    fit = pc(Z, 2)
    with pytest.raises(ValidationError):
        regress(y[:-1], fit)
    with pytest.raises(ValidationError):
        regress(y, fit, -1.0)
    with pytest.raises(ValidationError):
        regress(y, rpc_closed_form(Z, 2, 10.0))
