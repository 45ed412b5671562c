import math

import numpy as np
import pytest

from mchjm.calibration import (
    CalibrationError,
    SwaptionQuote,
    bachelier_price,
    black_price,
    calibrate,
    implied_vol,
    load_quote_csv,
    price_swaption_mc,
    price_swaptions_mc,
    save_quote_csv,
    swaption_geometry,
    synthetic_quotes,
    _pack,
    _unpack,
)
from mchjm.hjm import StochVolParams, cheyette, hull_white, moreni_pallavicini
from mchjm.termstructures import CurveSet, DiscountCurve, ForwardCurve


def make_curves(rate=0.02, fwd=0.024):
    return CurveSet(DiscountCurve.flat(rate), {0.5: ForwardCurve.flat(0.5, fwd)})


def mp_model():
    return moreni_pallavicini(
        a=[0.05, 0.4],
        R=[[0.008, 0.0], [0.002, 0.006]],
        vol=StochVolParams(
            eta_v=1.2, nu0=0.8, nu1=1.5, nu2=1.0, v_bar=1.0, rho_vw=(-0.3, -0.1)
        ),
        eta_q=[0.25, 0.6],
        gamma=0.03,
    )


def test_quote_validation():
    with pytest.raises(CalibrationError, match="convention"):
        SwaptionQuote(1.0, 2.0, 0.5, 0.0, 0.2, "gaussian")
    with pytest.raises(CalibrationError, match="positive"):
        SwaptionQuote(-1.0, 2.0, 0.5, 0.0, 0.2, "normal")
    with pytest.raises(CalibrationError, match="nonnegative"):
        SwaptionQuote(1.0, 2.0, 0.5, 0.0, -0.2, "normal")


def test_quote_csv_round_trip(tmp_path):
    quotes = [
        SwaptionQuote(1.0, 2.0, 0.5, 0.0, 0.0055, "normal"),
        SwaptionQuote(2.0, 3.0, 0.5, -0.005, 0.21, "lognormal"),
    ]
    path = tmp_path / "quotes.csv"
    save_quote_csv(path, quotes)
    assert load_quote_csv(path) == quotes
    (tmp_path / "bad.csv").write_text("expiry,vol\n1.0,0.2\n")
    with pytest.raises(CalibrationError, match="columns"):
        load_quote_csv(tmp_path / "bad.csv")
    (tmp_path / "empty.csv").write_text(
        "expiry,tenor_len,libor_tenor,strike_offset,vol,convention\n"
    )
    with pytest.raises(CalibrationError, match="no quotes"):
        load_quote_csv(tmp_path / "empty.csv")


def test_atm_bachelier_matches_closed_form():
    ann, fwd, expiry, vol = 3.5, 0.025, 2.0, 0.006
    price = bachelier_price(fwd, fwd, expiry, vol, ann)
    assert price == pytest.approx(
        ann * vol * math.sqrt(expiry) / math.sqrt(2.0 * math.pi), rel=1e-12
    )
    back = implied_vol(price, fwd, fwd, expiry, ann, "normal")
    assert back == pytest.approx(vol, abs=1e-12)


@pytest.mark.parametrize("offset", [-0.01, -0.002, 0.0, 0.002, 0.01])
@pytest.mark.parametrize("convention", ["normal", "lognormal"])
def test_implied_vol_round_trip(offset, convention):
    ann, fwd, expiry = 2.8, 0.025, 3.0
    strike = fwd + offset
    vol = 0.0065 if convention == "normal" else 0.31
    if convention == "normal":
        price = bachelier_price(fwd, strike, expiry, vol, ann)
    else:
        price = black_price(fwd, strike, expiry, vol, ann)
    back = implied_vol(price, fwd, strike, expiry, ann, convention)
    assert abs(back - vol) < 1e-10
    reprice = (
        bachelier_price(fwd, strike, expiry, back, ann)
        if convention == "normal"
        else black_price(fwd, strike, expiry, back, ann)
    )
    assert abs(reprice - price) < 1e-12


def test_shifted_lognormal_handles_negative_rates():
    ann, fwd, strike, expiry, vol, shift = 3.0, -0.001, -0.002, 2.0, 0.3, 0.02
    price = black_price(fwd, strike, expiry, vol, ann, shift=shift)
    back = implied_vol(price, fwd, strike, expiry, ann, "lognormal", shift=shift)
    assert abs(back - vol) < 1e-10
    with pytest.raises(CalibrationError, match="positive shifted"):
        black_price(fwd, strike, expiry, vol, ann)


def test_prices_outside_bounds_are_rejected():
    ann, fwd, strike, expiry = 3.0, 0.025, 0.02, 2.0
    intrinsic = ann * (fwd - strike)
    with pytest.raises(CalibrationError, match="below intrinsic"):
        implied_vol(intrinsic - 1e-6, fwd, strike, expiry, ann, "normal")
    with pytest.raises(CalibrationError, match="forward bound"):
        implied_vol(ann * fwd, fwd, strike, expiry, ann, "lognormal")
    assert implied_vol(intrinsic, fwd, strike, expiry, ann, "normal") == 0.0


def test_zero_vol_price_is_discounted_intrinsic():
    curves = make_curves()
    model = hull_white(a=[0.1], R=[[1e-14]])
    quote = SwaptionQuote(1.0, 2.0, 0.5, -0.004, 0.005, "normal")
    geom = swaption_geometry(curves, quote)
    price, se = price_swaption_mc(model, curves, quote, n_paths=16, seed=4)
    assert se < 1e-12
    assert price == pytest.approx(geom.annuity * (geom.forward - geom.strike), rel=1e-8)
    otm = SwaptionQuote(1.0, 2.0, 0.5, 0.004, 0.005, "normal")
    price_otm, _ = price_swaption_mc(model, curves, otm, n_paths=16, seed=4)
    assert price_otm == pytest.approx(0.0, abs=1e-12)


def test_put_call_parity():
    curves = make_curves()
    model = mp_model()
    quote = SwaptionQuote(2.0, 2.0, 0.5, 0.003, 0.005, "normal")
    geom = swaption_geometry(curves, quote)
    (payer, se_p), = price_swaptions_mc(model, curves, [quote], 4000, seed=11)
    (recv, se_r), = price_swaptions_mc(model, curves, [quote], 4000, seed=11, payer=False)
    forward_value = geom.annuity * (geom.forward - geom.strike)
    # same paths on both sides, so the parity error is pure tower noise
    assert payer - recv == pytest.approx(forward_value, abs=3.5 * (se_p + se_r) + 1e-6)


def test_price_monotone_in_vol_scale():
    from mchjm.engine import build_correlation, build_grid, simulate
    from mchjm.products import epsilon

    curves = make_curves()
    quote = SwaptionQuote(2.0, 2.0, 0.5, 0.0, 0.005, "normal")
    geom = swaption_geometry(curves, quote)
    lo = hull_white(a=[0.05, 0.4], R=[[0.008, 0.0], [0.002, 0.006]])
    hi = hull_white(a=[0.05, 0.4], R=[[0.0088, 0.0], [0.0022, 0.0066]])
    grid = build_grid(2.0, dt=1.0 / 12, event_times=[2.0])
    payoffs = []
    for model in (lo, hi):  # same seed: a paired volatility bump
        paths = simulate(
            model, curves, None, None, build_correlation(model), grid, 3000, seed=21
        )
        node = paths.grid.node_of(2.0)
        eps = epsilon(geom.trade, paths, curves, 2.0)
        payoffs.append(np.exp(-paths.int_e[:, node]) * np.maximum(eps, 0.0))
    diff = payoffs[1] - payoffs[0]
    assert diff.mean() > 3.0 * diff.std() / math.sqrt(diff.size)


def test_pack_round_trip_and_free_parameter_counts():
    hw = hull_white(a=[0.05, 0.4], R=[[0.008, 0.0], [0.002, 0.006]])
    ch = cheyette(
        a=[0.05, 0.4], R=[[0.008, 0.0], [0.002, 0.006]],
        vol=StochVolParams(1.2, 0.8, 1.5, 1.0, 1.0, (-0.3, -0.1)),
    )
    mp = mp_model()
    for model, count in ((hw, 5), (ch, 12), (mp, 14)):
        theta = _pack(model)
        assert theta.size == count
        back = _unpack(model, theta)
        np.testing.assert_allclose(back.a, model.a, rtol=1e-12)
        np.testing.assert_allclose(back.R, model.R, rtol=1e-12, atol=1e-15)
        if model.stochastic_vol:
            assert back.vol.eta_v == pytest.approx(model.vol.eta_v, rel=1e-12)
            np.testing.assert_allclose(back.vol.rho_vw, model.vol.rho_vw, atol=1e-12)
        np.testing.assert_allclose(back.eta_q, model.eta_q, atol=1e-12)
    assert _unpack(mp, _pack(mp)).gamma == mp.gamma  # held fixed, not searched


def test_pack_rejects_unusable_starts():
    frozen_vol = cheyette(
        a=[0.1], R=[[0.008]], vol=StochVolParams(eta_v=0.0, nu0=0.5, rho_vw=(0.0,))
    )
    with pytest.raises(CalibrationError, match="eta_v must be positive"):
        _pack(frozen_vol)
    pinned_rho = cheyette(
        a=[0.1], R=[[0.008]],
        vol=StochVolParams(eta_v=1.0, nu0=0.5, nu1=1.0, nu2=0.5, rho_vw=(-1.0,)),
    )
    with pytest.raises(CalibrationError, match="rho_vw"):
        _pack(pinned_rho)


def test_fixed_point_calibration_stops_immediately():
    curves = make_curves()
    truth = hull_white(a=[0.08], R=[[0.009]])
    geometries = [(1.0, 2.0, 0.5, 0.0), (2.0, 2.0, 0.5, 0.0), (2.0, 2.0, 0.5, 0.004)]
    quotes = synthetic_quotes(truth, curves, geometries, n_paths=512, seed=99)
    result = calibrate(truth, curves, quotes, n_paths=512, seed=99, budget=50)
    assert result.converged
    assert result.iterations == 1
    assert result.rmse <= 1e-12
    np.testing.assert_allclose(result.model.a, truth.a, rtol=1e-12)


def test_round_trip_recovers_vols_from_perturbed_start():
    curves = make_curves()
    truth = hull_white(a=[0.08], R=[[0.009]])
    geometries = [
        (1.0, 2.0, 0.5, 0.0), (1.0, 2.0, 0.5, 0.004),
        (2.0, 2.0, 0.5, 0.0), (2.0, 2.0, 0.5, -0.004),
    ]
    quotes = synthetic_quotes(truth, curves, geometries, n_paths=1024, seed=31)
    start = hull_white(a=[0.08 * 0.8], R=[[0.009 * 1.2]])
    result = calibrate(
        start, curves, quotes, n_paths=1024, seed=31, budget=150, tol=1e-7
    )
    assert result.rmse < 5e-5  # half a normal basis point
    assert result.iterations <= 150


def test_calibration_deterministic():
    curves = make_curves()
    truth = hull_white(a=[0.08], R=[[0.009]])
    quotes = synthetic_quotes(truth, curves, [(1.0, 2.0, 0.5, 0.0)], 256, seed=5)
    start = hull_white(a=[0.09], R=[[0.01]])
    one = calibrate(start, curves, quotes, n_paths=256, seed=5, budget=40)
    two = calibrate(start, curves, quotes, n_paths=256, seed=5, budget=40)
    assert one.rmse == two.rmse
    np.testing.assert_array_equal(one.model.a, two.model.a)
    np.testing.assert_array_equal(one.model.R, two.model.R)


def test_geometry_outside_curve_coverage():
    curves = make_curves()  # only the 6m tenor is present
    quote = SwaptionQuote(1.0, 2.0, 0.25, 0.0, 0.005, "normal")
    with pytest.raises(CalibrationError, match="curve coverage"):
        swaption_geometry(curves, quote)