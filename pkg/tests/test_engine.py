import numpy as np
import pytest
from hypothesis import given, strategies as st

from mchjm.credit import CirParams, fit_cirpp, flat_hazard, high_risk, medium_risk
from mchjm.engine import (
    CorrelationSpec,
    EngineError,
    PathSet,
    basis_credit_direction,
    build_correlation,
    build_grid,
    correlated_increments,
    rate_credit_direction,
    simulate,
)
from mchjm.hjm import StochVolParams, cheyette, hull_white, moreni_pallavicini
from mchjm.termstructures import CurveSet, DiscountCurve, ForwardCurve, OisQuote, bootstrap_discount_curve


def two_factor_hw():
    return hull_white(a=[0.05, 0.4], R=[[0.008, 0.0], [0.002, 0.006]])


def two_factor_mp():
    vol = StochVolParams(eta_v=1.2, nu0=0.8, nu1=1.5, nu2=1.0, v_bar=1.0, rho_vw=(-0.3, -0.1))
    return moreni_pallavicini(
        a=[0.05, 0.4],
        R=[[0.008, 0.0], [0.002, 0.006]],
        vol=vol,
        eta_q=[0.25, 0.6],
        gamma=0.03,
    )


def flat_curves(rate=0.02, basis=0.006, tenor=0.5):
    dc = DiscountCurve.flat(rate)
    fwd = ForwardCurve.flat(tenor, rate + basis)
    return CurveSet(dc, {tenor: fwd})


# ----- correlation spec -----


def test_correlation_rejects_bad_matrices():
    with pytest.raises(EngineError, match="symmetric"):
        CorrelationSpec(np.array([[1.0, 0.5], [0.2, 1.0]]), n_factors=-1)
    bad_diag = np.eye(5)
    bad_diag[0, 0] = 0.9
    with pytest.raises(EngineError, match="diagonal"):
        CorrelationSpec(bad_diag, n_factors=2)
    big = np.eye(5)
    big[0, 1] = big[1, 0] = 1.2
    with pytest.raises(EngineError, match="lie in"):
        CorrelationSpec(big, n_factors=2)
    with pytest.raises(EngineError, match="5x5"):
        CorrelationSpec(np.eye(4), n_factors=2)


def test_correlation_repair_clips_negative_eigenvalues():
    # pairwise -0.6 among three drivers has eigenvalue 1 - 2*0.6 < 0
    m = np.eye(5)
    for i in range(3):
        for j in range(3):
            if i != j:
                m[i, j] = -0.6
    spec = CorrelationSpec(m, n_factors=2)
    assert spec.repaired
    assert spec.repair_distance > 0.01
    eig = np.linalg.eigvalsh(spec.matrix)
    assert eig[0] > -1e-12
    assert np.allclose(np.diag(spec.matrix), 1.0, atol=1e-12)
    chol = spec.cholesky()
    assert np.allclose(chol @ chol.T, spec.matrix, atol=1e-8)


def test_valid_matrix_not_repaired():
    m = np.eye(5)
    m[0, 1] = m[1, 0] = 0.3
    spec = CorrelationSpec(m, n_factors=2)
    assert not spec.repaired
    assert spec.repair_distance == 0.0
    assert np.array_equal(spec.matrix, spec.matrix.T)


def test_rate_credit_direction_points_against_rates():
    model = two_factor_hw()
    u = rate_credit_direction(model)
    s = model.R.sum(axis=1)
    assert np.allclose(u, -s / np.linalg.norm(s), atol=1e-15)
    assert np.isclose(np.linalg.norm(u), 1.0, atol=1e-14)
    assert np.all(u < 0)  # positive loadings, so the direction is rate-decreasing


def test_basis_credit_direction_mp_differs_hw_inert():
    mp = two_factor_mp()
    hw = two_factor_hw()
    u_mp = basis_credit_direction(mp, 0.25, 0.5)
    assert np.isclose(np.linalg.norm(u_mp), 1.0, atol=1e-14)
    assert not np.allclose(u_mp, rate_credit_direction(mp), atol=1e-3)
    # no tenor loadings: the basis has no state gradient, the knob is inert
    assert np.array_equal(basis_credit_direction(hw, 0.25, 0.5), np.zeros(2))
    base = build_correlation(hw).matrix
    swept = build_correlation(hw, knob="basis_credit", knob_value=0.3).matrix
    assert np.array_equal(base, swept)


def test_build_correlation_places_named_entries():
    model = two_factor_mp()
    spec = build_correlation(
        model, credit_credit=0.4, vol_credit=0.1, knob="rate_credit", knob_value=0.3
    )
    m = spec.matrix
    u = rate_credit_direction(model)
    resid = np.sqrt(1.0 - 0.3**2)
    assert np.allclose(m[:2, 3], 0.3 * u, atol=1e-12)
    assert np.allclose(m[:2, 4], 0.3 * u, atol=1e-12)
    # projection semantics: induced terms plus the residual-weighted settings
    assert m[3, 4] == pytest.approx(0.3**2 + resid**2 * 0.4, abs=1e-12)
    induced_v = 0.3 * float(np.asarray(model.vol.rho_vw) @ u)
    assert m[2, 3] == pytest.approx(induced_v + resid * 0.1, abs=1e-12)
    assert m[2, 4] == pytest.approx(induced_v + resid * 0.1, abs=1e-12)
    assert np.allclose(m[:2, 2], model.vol.rho_vw, atol=1e-12)
    # at knob value zero the matrix matches the knob-free assembly
    flat = build_correlation(model, credit_credit=0.4, vol_credit=0.1)
    zeroed = build_correlation(
        model, credit_credit=0.4, vol_credit=0.1, knob="rate_credit", knob_value=0.0
    )
    assert np.array_equal(flat.matrix, zeroed.matrix)
    with pytest.raises(EngineError, match="unknown correlation knob"):
        build_correlation(model, knob="spread_credit", knob_value=0.1)


# ----- simulation grid -----


def test_grid_merges_events_and_spans_cure_window():
    grid = build_grid(2.0, dt=0.25, event_times=[0.1, 0.25, 1.0], delta=2.0 / 52)
    base = grid.base_times
    assert base[0] == 0.0
    assert base[-1] == pytest.approx(2.0, abs=1e-12)
    assert np.any(np.isclose(base, 0.1, atol=1e-12))
    # event at 0.25 collapses into the uniform node
    assert np.sum(np.isclose(base, 0.25, atol=1e-9)) == 1
    assert np.all(np.diff(grid.times) > 0)
    assert grid.times[-1] == pytest.approx(2.0 + 2.0 / 52, abs=1e-12)
    fwd_times = grid.times[grid.fwd_idx]
    assert np.allclose(fwd_times, base + 2.0 / 52, atol=2e-9)


def test_grid_without_cure_period_has_no_partner_map():
    grid = build_grid(1.0, dt=0.5)
    assert grid.fwd_idx is None
    assert np.allclose(grid.times, [0.0, 0.5, 1.0])
    assert np.array_equal(grid.base_idx, [0, 1, 2])


def test_grid_handles_horizon_off_the_uniform_lattice():
    grid = build_grid(1.9, dt=0.25)
    assert grid.times[-1] == pytest.approx(1.9, abs=1e-12)
    assert np.all(grid.times <= 1.9 + 1e-9)
    assert np.any(np.isclose(grid.times, 1.75, atol=1e-12))


def test_node_lookup():
    grid = build_grid(1.0, dt=0.25)
    assert grid.node_of(0.5) == 2
    assert grid.node_of(0.75 + 5e-10) == 3
    with pytest.raises(EngineError, match="not a grid node"):
        grid.node_of(0.3)


@given(
    horizon=st.floats(0.5, 12.0),
    dt=st.sampled_from([1.0 / 12, 1.0 / 4, 1.0 / 2]),
    delta=st.sampled_from([0.0, 1.0 / 52, 2.0 / 52, 0.25]),
)
def test_grid_partner_nodes_property(horizon, dt, delta):
    grid = build_grid(horizon, dt=dt, event_times=[horizon / 3], delta=delta)
    assert np.all(np.diff(grid.times) > 1e-10)
    assert np.allclose(grid.base_times, np.sort(grid.base_times))
    if delta > 0:
        assert np.allclose(
            grid.times[grid.fwd_idx], grid.base_times + delta, atol=2e-9
        )
    tail = grid.base_times[-1] + delta
    assert grid.times[-1] == pytest.approx(tail, abs=2e-9)


# ----- simulation -----


def small_sim(model, n_paths=4096 + 512, seed=901, knob_value=0.0, workers=None, delta=0.0):
    curves = flat_curves()
    grid = build_grid(1.0, dt=1.0 / 12, event_times=[0.4], delta=delta)
    corr = build_correlation(
        model, credit_credit=0.3, knob="rate_credit", knob_value=knob_value
    )
    return simulate(
        model, curves, medium_risk(), high_risk(), corr, grid, n_paths, seed, workers
    )


def test_worker_count_does_not_change_results():
    model = two_factor_mp()
    a = small_sim(model, workers=1)
    b = small_sim(model, workers=3)
    for name in ("x", "yp", "v", "e", "int_e", "lam_i", "lam_c", "int_lam_i", "int_lam_c"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_seed_reproducibility_and_sensitivity():
    model = two_factor_hw()
    a = small_sim(model, n_paths=64, seed=7)
    b = small_sim(model, n_paths=64, seed=7)
    c = small_sim(model, n_paths=64, seed=8)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.int_lam_c, b.int_lam_c)
    assert not np.array_equal(a.x, c.x)


def test_path_count_extension_preserves_prefix():
    # stream-per-path keying: the first paths of a larger run are the same paths
    model = two_factor_hw()
    a = small_sim(model, n_paths=50, seed=11)
    b = small_sim(model, n_paths=200, seed=11)
    assert np.array_equal(a.x, b.x[:50])
    assert np.array_equal(a.e, b.e[:50])


def test_deterministic_variance_stores_shared_convexity():
    model = two_factor_hw()
    paths = small_sim(model, n_paths=32)
    assert paths.yp.shape[0] == 1
    assert paths.v.shape == (1, paths.grid.n_nodes)
    assert np.all(paths.v == 1.0)
    # closed form for constant driver covariance: C (1 - exp(-s t)) / s
    cov = model.cov_driver
    t = paths.grid.times
    for idx, (i, j) in enumerate([(0, 0), (0, 1), (1, 1)]):
        s = model.a[i] + model.a[j]
        exact = cov[i, j] * (1.0 - np.exp(-s * t)) / s
        assert np.allclose(paths.yp[0, :, idx], exact, atol=1e-13)


def test_stochastic_variance_is_pathwise_and_finite():
    model = two_factor_mp()
    paths = small_sim(model, n_paths=256)
    assert paths.yp.shape[0] == 256
    assert paths.v.shape == (256, paths.grid.n_nodes)
    assert np.all(np.isfinite(paths.v))
    assert np.all(np.isfinite(paths.yp))
    assert paths.v[:, 1:].std() > 0.0


def test_empirical_driver_correlation_matches_spec():
    model = two_factor_mp()
    corr = build_correlation(
        model, credit_credit=0.4, vol_credit=0.05, knob="rate_credit", knob_value=0.25
    )
    z = correlated_increments(seed=33, n_paths=4000, n_steps=6, corr=corr)
    flat = z.reshape(-1, corr.matrix.shape[0])
    emp = np.corrcoef(flat, rowvar=False)
    # 24000 samples: sampling error well below 0.03
    assert np.allclose(emp, corr.matrix, atol=0.03)


def test_bank_account_prices_bonds():
    # E[exp(-int e)] must recover the initial discount curve on a bootstrapped,
    # non-flat curve; the deterministic layer is integrated exactly so the only
    # errors are Monte Carlo noise and X-integration bias.
    quotes = [OisQuote(1.0, 0.015), OisQuote(3.0, 0.02), OisQuote(5.0, 0.024)]
    dc = bootstrap_discount_curve(quotes)
    curves = CurveSet(dc, {0.5: ForwardCurve.flat(0.5, 0.02)})
    model = two_factor_hw()
    grid = build_grid(5.0, dt=1.0 / 12)
    corr = build_correlation(model)
    paths = simulate(
        model, curves, medium_risk(), high_risk(), corr, grid, 20000, seed=42
    )
    for t_check in (1.0, 3.0, 5.0):
        node = grid.node_of(t_check)
        disc = paths.discount_to(node)
        se = disc.std() / np.sqrt(disc.size)
        target = dc.discount(t_check)
        assert abs(disc.mean() - target) < 3.5 * se + 5e-7


def test_short_rate_layers_add_up():
    model = two_factor_hw()
    paths = small_sim(model, n_paths=16)
    curves = flat_curves()
    t = paths.grid.times
    expect = curves.discount.inst_forward(t)[None, :] + paths.x.sum(axis=2)
    assert np.allclose(paths.e, expect, atol=1e-14)


def test_hazard_integral_consistent_with_trapezoid():
    # single-pillar shift: psi is constant across the grid, so its closed-form
    # integral coincides with the trapezoid rule and int_lam must equal the
    # trapezoid of the stored intensity path
    model = two_factor_hw()
    credit = fit_cirpp(CirParams(zeta=0.4, mu=0.02, nu=0.10, y0=0.02), [5.0], [0.15])
    curves = flat_curves()
    grid = build_grid(1.0, dt=1.0 / 12, event_times=[0.4])
    corr = build_correlation(model)
    paths = simulate(model, curves, credit, credit, corr, grid, 128, seed=901)
    t = paths.grid.times
    dts = np.diff(t)
    mids = 0.5 * (paths.lam_i[:, 1:] + paths.lam_i[:, :-1])
    direct = np.concatenate(
        [np.zeros((128, 1)), np.cumsum(mids * dts[None, :], axis=1)], axis=1
    )
    assert np.allclose(paths.int_lam_i, direct, atol=1e-12)
    assert np.all(paths.lam_i > 0.0)
    assert np.all(np.diff(paths.int_lam_c, axis=1) > 0.0)


def test_wrong_way_knob_ties_intensities_to_falling_rates():
    model = two_factor_mp()
    tied = small_sim(model, n_paths=4000, knob_value=0.6)
    free = small_sim(model, n_paths=4000, knob_value=0.0)
    last = tied.grid.n_nodes - 1

    def c(paths):
        return np.corrcoef(paths.e[:, last], paths.lam_c[:, last])[0, 1]

    assert c(tied) < -0.2
    assert abs(c(free)) < 0.1


def test_dump_round_trip(tmp_path):
    model = two_factor_mp()
    paths = small_sim(model, n_paths=40, delta=2.0 / 52)
    fname = tmp_path / "paths.bin"
    paths.save(fname)
    loaded = PathSet.load(fname, model)
    for name in ("x", "e", "int_e", "lam_i", "lam_c", "int_lam_i", "int_lam_c"):
        assert np.array_equal(getattr(paths, name), getattr(loaded, name)), name
    assert np.array_equal(np.broadcast_to(paths.v, (40, paths.grid.n_nodes)), loaded.v)
    assert np.array_equal(
        np.broadcast_to(paths.yp, (40,) + paths.yp.shape[1:]), loaded.yp
    )
    assert np.array_equal(paths.grid.times, loaded.grid.times)
    assert np.array_equal(paths.grid.base_idx, loaded.grid.base_idx)
    assert np.array_equal(paths.grid.fwd_idx, loaded.grid.fwd_idx)
    assert loaded.grid.delta == paths.grid.delta


def test_dump_rejects_foreign_files(tmp_path):
    model = two_factor_hw()
    paths = small_sim(model, n_paths=4)
    fname = tmp_path / "paths.bin"
    paths.save(fname)
    blob = bytearray(fname.read_bytes())
    blob[0] = ord(b"X")
    (tmp_path / "bad.bin").write_bytes(bytes(blob))
    with pytest.raises(EngineError, match="not a path-set"):
        PathSet.load(tmp_path / "bad.bin", model)
    with pytest.raises(EngineError, match="factor count"):
        PathSet.load(fname, moreni_pallavicini(
            a=[0.1], R=[[0.01]],
            vol=StochVolParams(eta_v=1.0, nu0=0.5, rho_vw=(0.0,)),
            eta_q=[0.3], gamma=0.03,
        ))


def test_simulate_validates_inputs():
    model = two_factor_hw()
    curves = flat_curves()
    grid = build_grid(1.0, dt=0.5)
    corr = build_correlation(model)
    with pytest.raises(EngineError, match="positive path count"):
        simulate(model, curves, medium_risk(), high_risk(), corr, grid, 0, 1)
    mp_corr = build_correlation(two_factor_mp())
    one = hull_white(a=[0.1], R=[[0.01]])
    with pytest.raises(EngineError, match="factor count"):
        simulate(one, curves, medium_risk(), high_risk(), mp_corr, grid, 4, 1)


def test_credit_free_simulation_pins_intensities_at_zero():
    model = two_factor_hw()
    curves = flat_curves()
    grid = build_grid(2.0, dt=1.0 / 12)
    corr = build_correlation(model)
    bare = simulate(model, curves, None, None, corr, grid, 64, seed=31)
    assert np.all(bare.lam_i == 0.0) and np.all(bare.lam_c == 0.0)
    assert np.all(bare.int_lam_i == 0.0) and np.all(bare.int_lam_c == 0.0)
    # rate paths do not depend on whether credit is simulated
    full = simulate(model, curves, medium_risk(), high_risk(), corr, grid, 64, seed=31)
    np.testing.assert_array_equal(bare.x, full.x)
    np.testing.assert_array_equal(bare.int_e, full.int_e)
    assert np.any(full.int_lam_c > 0.0)


def test_step_refinement_leaves_discount_mean_within_noise():
    # halving the step moves the discounted-bond mean by less than the
    # Monte Carlo resolution, so the step bias is subdominant
    model = two_factor_hw()
    curves = flat_curves()
    corr = build_correlation(model)
    means = []
    ses = []
    for dt in (1.0 / 12, 1.0 / 24):
        grid = build_grid(5.0, dt=dt)
        paths = simulate(model, curves, None, None, corr, grid, 20000, seed=77)
        disc = paths.discount_to(paths.grid.node_of(5.0))
        means.append(disc.mean())
        ses.append(disc.std() / np.sqrt(disc.size))
    assert abs(means[0] - means[1]) < np.hypot(ses[0], ses[1])
