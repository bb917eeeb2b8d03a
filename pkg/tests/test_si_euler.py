import math

import numpy as np
import pytest
from scipy.linalg import solve_banded

from singular_euler.sector import lp_sphere_distance, make_sector_config
from singular_euler.si_euler import (
    LabelProfile,
    MarkerCollisionError,
    all_pairs,
    angular_profile,
    blowup_fit,
    boundary_slopes,
    estimate_blowup_time,
    flow_separation_check,
    green_kernel,
    init_markers,
    mass,
    monitors,
    run_blowup,
    run_instability,
    smooth_modify,
    solve_stream,
    state_at,
    step,
    stream_integral,
    stream_half_angle_formula,
    truncate_tail,
)

L3 = math.pi / 3


def sine_profile(m=3):
    return LabelProfile(lambda s: np.sin(m * np.asarray(s, dtype=float)), name="sine")


def zero_profile():
    return LabelProfile(lambda s: np.zeros(np.shape(s)), name="zero")


def fd_bvp(g, L, N):
    """Second-order finite differences for G'' + 4G = -g, G(0) = G(L) = 0."""
    h = L / N
    x = np.arange(1, N) * h
    ab = np.zeros((3, N - 1))
    ab[0, 1:] = 1 / h**2
    ab[2, :-1] = 1 / h**2
    ab[1] = -2 / h**2 + 4
    return x, solve_banded((1, 1), ab, -g(x))


# ---------------------------------------------------------------- stream solve


def test_zero_profile_gives_zero_stream(cfg3):
    S = solve_stream(lambda x: np.zeros_like(x), cfg3)
    assert np.all(S.G == 0)
    assert boundary_slopes(S) == (0.0, 0.0)


@pytest.mark.parametrize("m", [3, 4, 5])
@pytest.mark.parametrize("k", [1, 2])
def test_single_mode_exact(m, k):
    cfg = make_sector_config(m, 0.5)
    n = m * k
    th = np.linspace(0, cfg.half_width, 41)
    S = solve_stream(lambda x: np.sin(n * x), cfg, theta=th)
    np.testing.assert_allclose(S.G, np.sin(n * th) / (n * n - 4), atol=1e-12)


def test_sin3_example(cfg3):
    S = solve_stream(lambda x: np.sin(3 * x), cfg3, theta=np.array([0.0, math.pi / 6, L3]))
    assert S.G[1] == pytest.approx(0.2, rel=1e-13)
    assert S.G[0] == 0.0 and S.G[-1] == 0.0


def test_intro_convention_flips_sign():
    cfg = make_sector_config(3, 0.5, "intro")
    S = solve_stream(lambda x: np.sin(3 * x), cfg, theta=np.array([0.0, math.pi / 6, L3]))
    assert S.G[1] == pytest.approx(-0.2, rel=1e-13)


def test_singular_profile_against_fd_oracle(cfg3):
    g = lambda x: x**-0.5
    x, G = fd_bvp(g, L3, 100_000)
    ref = G[np.argmin(np.abs(x - math.pi / 6))]
    S = solve_stream(g, cfg3, theta=np.array([0.0, math.pi / 6, L3]))
    assert S.G[1] == pytest.approx(ref, rel=1e-6)
    assert S.G[1] == pytest.approx(0.38406616, abs=5e-9)


def test_non_finite_values_rejected(cfg3):
    st = init_markers(cfg3, 16, LabelProfile(lambda s: np.full(np.shape(s), np.nan)))
    with pytest.raises(ValueError):
        solve_stream(st, cfg3)


def test_green_kernel_nonnegative(cfg3):
    t = np.linspace(0, L3, 101)
    K = green_kernel(t[:, None], t[None, :], cfg3)
    assert np.all(K >= 0)
    assert np.allclose(K, K.T)


def test_half_angle_formula_zero(cfg3):
    S = stream_half_angle_formula(lambda x: np.zeros_like(x), cfg3)
    assert np.all(S.G == 0)


@pytest.mark.parametrize("m", [3, 4, 5])
def test_half_angle_formula_exact_on_fundamental_mode(m):
    cfg = make_sector_config(m, 0.5)
    t = np.linspace(0.05, 0.95, 9) * cfg.half_width
    g = lambda x: np.sin(m * x)
    np.testing.assert_allclose(stream_half_angle_formula(g, cfg, theta=t).G / solve_stream(g, cfg, theta=t).G, 1.0, rtol=1e-10)


@pytest.mark.parametrize("m, agree", [(3, False), (4, True), (5, False)])
def test_half_angle_formula_general_profiles(m, agree):
    # half-angle homogeneous solutions only solve the stream equation for m = 4
    cfg = make_sector_config(m, 0.5)
    t = np.linspace(0.05, 0.95, 9) * cfg.half_width
    for g in (lambda x: x**-0.5, lambda x: np.ones_like(x)):
        ratio = stream_half_angle_formula(g, cfg, theta=t).G / solve_stream(g, cfg, theta=t).G
        if agree:
            np.testing.assert_allclose(ratio, 1.0, rtol=1e-9)
        else:
            assert np.max(np.abs(ratio - 1.0)) > 1e-2


def test_slopes_sin3(cfg3):
    th = L3 * (np.arange(2001) / 2000)
    S = solve_stream(lambda x: np.sin(3 * x), cfg3, theta=th)
    s0, sL = boundary_slopes(S, "kernel")
    assert (s0, sL) == pytest.approx((0.6, -0.6), rel=1e-12)
    f0, fL = boundary_slopes(S, "fd")
    assert (f0, fL) == pytest.approx((0.6, -0.6), rel=1e-6)
    assert s0 - sL == pytest.approx(2 / 3 + 8 / 15, rel=1e-12)


def test_slope_identity_singular(cfg3):
    st = init_markers(cfg3, 2048)
    S = solve_stream(st, cfg3)
    s0, sL = boundary_slopes(S, "kernel")
    target = mass(st) + 4 * stream_integral(st, cfg3)
    assert s0 - sL == pytest.approx(target, rel=1e-6)


def test_slope_method_rejected(cfg3):
    with pytest.raises(ValueError):
        boundary_slopes(solve_stream(lambda x: np.sin(3 * x), cfg3), "spline")


# ---------------------------------------------------------------- mass


def test_mass_examples(cfg3):
    assert mass(init_markers(cfg3, 64, zero_profile())) == 0.0
    assert mass(init_markers(cfg3, 256)) == pytest.approx(2 * math.sqrt(math.pi / 3), rel=1e-10)
    assert mass(init_markers(cfg3, 256)) == pytest.approx(2.046653, abs=5e-7)
    assert mass(init_markers(cfg3, 256, sine_profile())) == pytest.approx(2 / 3, rel=1e-10)


def test_init_rejects_small_N(cfg3):
    with pytest.raises(ValueError):
        init_markers(cfg3, 4)


# ---------------------------------------------------------------- stepping


def test_stream_override_translation(cfg3):
    st = init_markers(cfg3, 64, sine_profile())
    c, dt = 0.3, 1e-2
    new = step(st, dt, cfg3, stream=lambda chi: np.full_like(chi, c))
    np.testing.assert_allclose(new.theta, st.theta + 2 * c * dt, rtol=0, atol=1e-15)


def test_zero_dt_rejected(cfg3):
    with pytest.raises(ValueError):
        step(init_markers(cfg3, 16), 0.0, cfg3)


def test_reversibility_one_step(cfg3):
    st = init_markers(cfg3, 256, sine_profile(), q=1.0)
    back = step(step(st, 1e-3, cfg3), -1e-3, cfg3)
    assert np.max(np.abs(back.theta - st.theta)) <= 1e-12


def test_rk4_order(cfg3):
    # amplitude 10 so the dt in {4e-3, 2e-3, 1e-3} errors sit well above round-off
    st = init_markers(cfg3, 256, LabelProfile(lambda s: 10 * np.sin(3 * np.asarray(s))), q=1.0)
    T = 0.04

    def run(dt):
        s = st
        for _ in range(int(round(T / dt))):
            s = step(s, dt, cfg3)
        return s.theta

    ref = run(6.25e-5)
    errs = [np.max(np.abs(run(dt) - ref)) for dt in (4e-3, 2e-3, 1e-3)]
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(slopes - 4) < 0.3)


def test_collision_raises(cfg3):
    st = init_markers(cfg3, 64)
    with pytest.raises(MarkerCollisionError) as info:
        step(st, 5.0, cfg3)
    assert info.value.indices.size > 0


def test_transport_exact_and_ordering(cfg3):
    st = init_markers(cfg3, 512)
    v0 = st.values.copy()
    for _ in range(20):
        st = step(st, 5e-3, cfg3)
        assert np.array_equal(st.values, v0)
        assert np.all(np.diff(st.theta) > 0)


def test_positivity(cfg3):
    st = init_markers(cfg3, 512)
    for _ in range(3):
        S = solve_stream(st, cfg3)
        assert np.all(S.G[1:-1] > 0)
        st = step(st, 2e-2, cfg3)


# ---------------------------------------------------------------- monitors


def test_monitors_zero_state(cfg3):
    st = init_markers(cfg3, 64, zero_profile())
    r0 = monitors(st, None, cfg3)
    r1 = monitors(step(st, 1e-2, cfg3), r0, cfg3)
    assert r1.identity_residual == 0.0 and r1.slope_residual == 0.0 and r1.ratio_drift_min == 0.0
    assert r1.I == 0.0 and r1.dIdt == 0.0


def test_corollary_saturated_at_t0(cfg3):
    st = init_markers(cfg3, 256)
    rec = monitors(st, None, cfg3, pairs=all_pairs(256))
    assert abs(rec.corollary_gap_max) <= 1e-14


def test_ratio_and_corollary_all_pairs(cfg3):
    # full O(N^2) pair check at small N
    st = init_markers(cfg3, 64)
    pairs = all_pairs(64)
    rec = monitors(st, None, cfg3, pairs)
    for _ in range(40):
        st = step(st, 5e-3, cfg3)
        rec = monitors(st, rec, cfg3, pairs)
        assert rec.ratio_drift_min >= -1e-10
        assert rec.corollary_gap_max <= 1e-8


# ---------------------------------------------------------------- blow-up time


def test_blowup_fit_exact_riccati():
    t = np.linspace(0, 0.9, 30)
    assert estimate_blowup_time(list(zip(t, 1 / (1 - t)))) == pytest.approx(1.0, rel=1e-12)
    t = np.linspace(0, 1.4, 30)
    assert estimate_blowup_time(list(zip(t, 2 / (3 - 2 * t)))) == pytest.approx(1.5, rel=1e-12)


def test_blowup_fit_errors():
    with pytest.raises(ValueError):
        blowup_fit([(0, 1), (1, 2), (2, 3)])
    with pytest.raises(ValueError):
        blowup_fit([(t, 1 + (t - 2) ** 2) for t in range(8)])


def test_production_run(blowup_2048):
    rep = blowup_2048
    assert rep.stop_reason == "growth"
    assert all(rep.verdicts.values()), rep.verdicts
    assert rep.c_min > 0 and math.isfinite(rep.T_star)


def test_transport_exact_over_history(blowup_2048):
    v0 = blowup_2048.history[0].values
    for st in blowup_2048.history:
        assert np.array_equal(st.values, v0)
        assert np.all(np.diff(st.theta) > 0)


def test_slope_identity_kernel_every_record(blowup_2048, cfg3):
    # exact kernel slopes satisfy the slope identity to the quadrature error
    for st in blowup_2048.history:
        S = solve_stream(st, cfg3)
        I = mass(st)
        assert abs((S.slope0 - S.slopePi) - (I + 4 * stream_integral(st, cfg3))) <= 1e-6 * abs(I)


def test_riccati_constant_stable(blowup_1024, blowup_2048):
    assert blowup_2048.c_min == pytest.approx(blowup_1024.c_min, rel=0.1)


def test_reversibility_quarter_blowup_time(blowup_2048, cfg3):
    from singular_euler.si_euler import advance

    st = init_markers(cfg3, 2048)
    T = 0.25 * blowup_2048.T_star
    back = advance(advance(st, T, cfg3, 2e-3), 0.0, cfg3, 2e-3)
    assert np.max(np.abs(back.chi - st.chi)) <= 1e-8


def test_bounded_data_run():
    # g0 = 1 is a steady state: transport of a constant leaves it unchanged,
    # and the slope product vanishes by the symmetry of G, so I stays flat
    cfg = make_sector_config(3, 0.0)
    rep = run_blowup(cfg, N=256, dt0=4e-3, max_steps=200)
    I = np.array([r.I for r in rep.records])
    np.testing.assert_allclose(I, math.pi / 3, rtol=1e-12)
    assert max(abs(r.riccati_ratio) for r in rep.records) < 1e-10
    assert rep.verdicts["ratio_monotone"] and rep.verdicts["slope_identity"]
    assert rep.stop_reason == "max_steps" and not rep.verdicts["finite_blowup"]


def test_m4_quarter_run():
    cfg = make_sector_config(4, 0.25)
    rep = run_blowup(cfg, N=512, dt0=2e-3)
    assert rep.c_min > 0 and math.isfinite(rep.T_star)
    assert rep.verdicts["ratio_monotone"] and rep.verdicts["corollary_bound"] and rep.verdicts["linear_inverse_mass"]


# ---------------------------------------------------------------- perturbations


def test_truncate_tail_zero_eps(cfg3):
    st = init_markers(cfg3, 64)
    assert truncate_tail(st, 0.0) is st


def test_truncate_tail_last_third(cfg3):
    st = init_markers(cfg3, 300, q=1.0)
    eps = math.pi / 9
    tr = truncate_tail(st, eps)
    cut = st.theta > L3 - eps + 1e-12
    keep = st.theta < L3 - eps - 1e-12
    assert np.all(tr.values[cut] == 0)
    assert np.array_equal(tr.values[keep], st.values[keep])
    assert cut.sum() == pytest.approx((st.N - 1) / 3, abs=1)


def test_truncate_tail_distance_vanishes(cfg3):
    st = init_markers(cfg3, 512)
    g = angular_profile(st)
    d = [lp_sphere_distance(g, angular_profile(truncate_tail(st, e)), 1.5, cfg3) for e in (0.1, 0.01, 0.001)]
    assert d[0] > d[1] > d[2] and d[2] < 0.05
    for e in (0.1, 0.01):  # g ~ (pi/3)^-1/2 on the tail: d^p ~ 2m eps g^p
        assert d[[0.1, 0.01].index(e)] == pytest.approx((6 * e * L3**-0.75) ** (1 / 1.5), rel=0.2)


def test_truncate_tail_bad_eps(cfg3):
    with pytest.raises(ValueError):
        truncate_tail(init_markers(cfg3, 64), L3)


def test_smooth_plateau_cap(cfg3):
    st = init_markers(cfg3, 1024)
    mod = smooth_modify(st, 0.01, "plateau", cfg3)
    assert np.max(mod.values) == pytest.approx(10.0, rel=1e-12)
    assert np.all(np.diff(mod.values) <= 1e-12)
    far = st.theta > 0.1
    np.testing.assert_array_equal(mod.values[far], st.values[far])


def test_smooth_plateau_noop(cfg3):
    st = init_markers(cfg3, 64)
    eps = 0.5 / np.max(st.values) ** 2
    mod = smooth_modify(st, eps, "plateau", cfg3)
    np.testing.assert_array_equal(mod.values, st.values)


def test_smooth_tail(cfg3):
    st = init_markers(cfg3, 1024)
    eps = 0.05
    mod = smooth_modify(st, eps, "tail", cfg3)
    assert np.all(mod.values[st.theta >= L3 - eps] == 0)
    assert np.all(np.diff(mod.values) <= 1e-12)
    d = lp_sphere_distance(angular_profile(st), angular_profile(mod), 1.5, cfg3)
    d2 = lp_sphere_distance(angular_profile(st), angular_profile(smooth_modify(st, eps / 4, "tail", cfg3)), 1.5, cfg3)
    assert d2 < d


def test_smooth_rejects_non_monotone(cfg3):
    with pytest.raises(ValueError):
        smooth_modify(init_markers(cfg3, 64, sine_profile()), 0.05, "plateau", cfg3)
    with pytest.raises(ValueError):
        smooth_modify(init_markers(cfg3, 64), 0.05, "wedge", cfg3)


# ---------------------------------------------------------------- instability and separation


def test_instability_zero_eps(blowup_1024, cfg3):
    (case,) = run_instability(cfg3, 1.5, [0.0], 0.5, history=blowup_1024.history, dt0=blowup_1024.dt0)
    assert case.d_final_sphere == 0 and case.d0_sphere == 0 and case.d0_loc == 0


def test_instability_rejects_large_p(cfg3):
    with pytest.raises(ValueError):
        run_instability(cfg3, 2.0, [0.1], 0.6)


def test_separation_at_t0(blowup_1024, cfg3):
    st = state_at(blowup_1024.history, 0.0, cfg3, blowup_1024.dt0)
    e = np.array([0.01, 0.1, 0.3])
    np.testing.assert_allclose(st.position(e), e, rtol=1e-14)


def test_separation_rejects_out_of_history(blowup_1024, cfg3):
    with pytest.raises(ValueError):
        flow_separation_check(blowup_1024.history, [0.01], blowup_1024.records[-1].t + 1.0, cfg3, blowup_1024.dt0)
