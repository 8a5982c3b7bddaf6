import numpy as np
import pytest

from dpqml.errors import InsufficientMomentsError, UnsupportedLagOrderError
from dpqml.gmm import (
    GmmArrays,
    GmmSpec,
    build_instruments,
    differenced_x_instrument_count,
    differenced_y_instrument_count,
    fit_gmm,
    level_y_instrument_count,
    solve_gmm_arrays,
)
from dpqml.panel import PanelDataset


def deterministic_panel(rng, n=60, t_len=10, delta=0.5, beta=0.5, effect_scale=1.0,
                        noise_scale=1.0, burn=30):
    horizon = burn + t_len + 1
    x = np.zeros((n, horizon))
    x[:, 0] = rng.standard_normal(n)
    for m in range(1, horizon):
        x[:, m] = 0.5 * x[:, m - 1] + rng.standard_normal(n)
    c = effect_scale * rng.standard_normal(n)
    v = noise_scale * rng.standard_normal((n, horizon))
    y = np.zeros((n, horizon))
    for m in range(1, horizon):
        y[:, m] = delta * y[:, m - 1] + beta * x[:, m] + c + v[:, m]
    return PanelDataset(y=y[:, burn:].copy(), x=x[:, burn + 1 :, None].copy(), lag_order=1)


def test_instrument_counts_match_closed_forms():
    assert differenced_y_instrument_count(10) == 45
    assert differenced_y_instrument_count(3) == 3
    assert level_y_instrument_count(10) == 9
    rng = np.random.default_rng(0)
    for t_len in range(3, 13):
        ds = deterministic_panel(rng, n=30, t_len=t_len)
        diff = build_instruments(ds, GmmSpec("differenced"))
        assert diff.instruments.shape[2] == (
            differenced_y_instrument_count(t_len) + differenced_x_instrument_count(t_len, 1)
        )
        sysm = build_instruments(ds, GmmSpec("system"))
        assert sysm.instruments.shape[2] == (
            diff.instruments.shape[2] + level_y_instrument_count(t_len) + 1 + 1
        )


def test_instrument_cap_counts():
    assert differenced_y_instrument_count(10, cap=3) == 1 + 2 + sum(3 for _ in range(4, 11))
    rng = np.random.default_rng(1)
    ds = deterministic_panel(rng, n=20, t_len=6)
    capped = build_instruments(ds, GmmSpec("differenced", instrument_cap=2))
    assert capped.instruments.shape[2] == (
        differenced_y_instrument_count(6, cap=2) + differenced_x_instrument_count(6, 1)
    )


def test_requires_first_order_and_enough_periods():
    rng = np.random.default_rng(2)
    y = rng.normal(size=(5, 6))
    with pytest.raises(UnsupportedLagOrderError):
        build_instruments(
            PanelDataset(y=y, x=rng.normal(size=(5, 4, 1)), lag_order=2),
            GmmSpec("differenced"),
        )
    short = PanelDataset(y=rng.normal(size=(5, 3)), x=rng.normal(size=(5, 2, 1)), lag_order=1)
    with pytest.raises(InsufficientMomentsError):
        build_instruments(short, GmmSpec("differenced"))


@pytest.mark.parametrize("variant", ["differenced", "system"])
def test_exact_fit_recovery(variant):
    # no individual effect, no noise: moment conditions hold exactly at truth
    rng = np.random.default_rng(3)
    ds = deterministic_panel(rng, n=40, t_len=6, effect_scale=0.0, noise_scale=0.0)
    fit = fit_gmm(ds, GmmSpec(variant))
    assert fit.coef[0] == pytest.approx(0.5, abs=1e-8)
    assert fit.coef[1] == pytest.approx(0.5, abs=1e-8)


def test_one_step_invariant_to_instrument_scaling():
    rng = np.random.default_rng(4)
    ds = deterministic_panel(rng, n=50, t_len=6)
    arrays = build_instruments(ds, GmmSpec("differenced"))
    coef, _, _ = solve_gmm_arrays(arrays)
    scaled = GmmArrays(
        arrays.response,
        arrays.regressors,
        7.5 * arrays.instruments,
        arrays.weight_kernel,
        arrays.coef_names,
    )
    coef_scaled, _, _ = solve_gmm_arrays(scaled)
    assert coef_scaled == pytest.approx(coef, rel=1e-9)


def test_just_identified_equals_iv():
    rng = np.random.default_rng(5)
    n, r, k = 80, 3, 2
    z = rng.normal(size=(n, r, k))
    x = 0.8 * z + 0.3 * rng.normal(size=(n, r, k))
    theta = np.array([0.6, -0.4])
    resp = np.einsum("nrk,k->nr", x, theta) + 0.1 * rng.normal(size=(n, r))
    arrays = GmmArrays(resp, x, z, np.eye(r), ("a", "b"))
    coef, _, _ = solve_gmm_arrays(arrays)
    a = np.einsum("nrm,nrk->mk", z, x)
    c = np.einsum("nrm,nr->m", z, resp)
    assert coef == pytest.approx(np.linalg.solve(a, c))


def test_two_step_weight_psd_and_runs():
    rng = np.random.default_rng(6)
    ds = deterministic_panel(rng, n=80, t_len=6)
    arrays = build_instruments(ds, GmmSpec("differenced"))
    coef1, _, _ = solve_gmm_arrays(arrays, "one_step")
    u = arrays.response - np.einsum("nrk,k->nr", arrays.regressors, coef1)
    zu = np.einsum("nrm,nr->nm", arrays.instruments, u)
    s = zu.T @ zu
    eigs = np.linalg.eigvalsh(s)
    assert eigs.min() >= -1e-8 * np.trace(s)
    fit2 = fit_gmm(ds, GmmSpec("differenced", steps="two_step"))
    assert fit2.iterations == 2
    assert np.isfinite(fit2.coef).all()


def test_singular_weight_flagged_not_silent():
    rng = np.random.default_rng(7)
    n, r = 6, 3
    z = np.zeros((n, r, 4))
    z[:, :, 0] = rng.normal(size=(n, r))
    z[:, :, 1] = z[:, :, 0]  # exact collinearity
    x = rng.normal(size=(n, r, 1))
    resp = rng.normal(size=(n, r))
    arrays = GmmArrays(resp, x, z, np.eye(r), ("a",))
    with pytest.warns(UserWarning, match="pseudo-inverse"):
        _, _, truncated = solve_gmm_arrays(arrays)
    assert truncated


def test_fit_document_fields():
    rng = np.random.default_rng(8)
    ds = deterministic_panel(rng, n=30, t_len=5)
    fit = fit_gmm(ds, GmmSpec("system"))
    from dpqml.results import fit_document

    doc = fit_document(fit)
    assert doc["estimator"] == "sgmm"
    assert "instrument_count" in doc
    assert doc["converged"] is True
