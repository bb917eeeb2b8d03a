import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_euler.sector import (
    Convention,
    graded_grid,
    lp_loc_constant,
    lp_loc_distance,
    lp_sphere_distance,
    make_sector_config,
    quad_power_singular,
)


def test_valid_config():
    cfg = make_sector_config(3, 0.5, "blowup")
    assert cfg.m == 3 and cfg.alpha == 0.5 and cfg.convention is Convention.BLOWUP
    assert cfg.half_width == pytest.approx(math.pi / 3)
    assert make_sector_config(5, 0.0, "intro").sign == -1.0


@pytest.mark.parametrize("m, alpha", [(2, 0.5), (1, 0.5), (3, 1.0), (3, -0.1), (3, 1.5)])
def test_invalid_config(m, alpha):
    with pytest.raises(ValueError):
        make_sector_config(m, alpha, "blowup")


def test_unknown_convention():
    with pytest.raises(ValueError):
        make_sector_config(3, 0.5, "sideways")


def test_graded_grid_uniform():
    cfg = make_sector_config(3, 0.5)
    g = graded_grid(cfg, 4, q=1)
    np.testing.assert_allclose(g.nodes, [math.pi / 12, math.pi / 6, math.pi / 4], rtol=1e-15)


def test_graded_grid_quadratic():
    cfg = make_sector_config(3, 0.5)
    g = graded_grid(cfg, 4, q=2)
    np.testing.assert_allclose(g.nodes, [math.pi / 48, math.pi / 12, 3 * math.pi / 16], rtol=1e-15)


def test_graded_grid_refinement_halves_spacing():
    cfg = make_sector_config(3, 0.5)
    h = lambda N: np.max(np.diff(graded_grid(cfg, N, q=1).with_endpoints()))
    assert h(32) == pytest.approx(0.5 * h(16), rel=1e-12)


def test_graded_grid_default_grading_clusters_at_zero():
    cfg = make_sector_config(3, 0.5)
    g = graded_grid(cfg, 64)
    assert g.q == pytest.approx(4.0)
    assert np.all(np.diff(g.nodes) > 0)
    d = np.diff(g.with_endpoints())
    assert d[0] < d[-1]


@pytest.mark.parametrize("N, q", [(3, 1), (2, 2), (16, 0.5)])
def test_graded_grid_rejects(N, q):
    with pytest.raises(ValueError):
        graded_grid(make_sector_config(3, 0.5), N, q=q)


@pytest.mark.parametrize(
    "f, beta, b, expected",
    [
        (lambda x: x**-0.5, 0.5, 1.0, 2.0),
        (lambda x: x**-0.5, 0.5, math.pi / 3, 2 * math.sqrt(math.pi / 3)),
        (lambda x: np.ones_like(x), 0.0, 1.0, 1.0),
    ],
)
def test_quad_examples(f, beta, b, expected):
    assert quad_power_singular(f, beta, (0.0, b)) == pytest.approx(expected, rel=1e-12)


def test_quad_example_value():
    assert quad_power_singular(lambda x: x**-0.5, 0.5, (0.0, math.pi / 3)) == pytest.approx(2.046653, abs=5e-7)


def test_quad_rejects_nonintegrable():
    with pytest.raises(ValueError):
        quad_power_singular(lambda x: 1 / x, 1.0, (0.0, 1.0))


def test_quad_convergence_rate():
    # smooth-away-from-endpoint integrand with a non-polynomial smooth factor
    f = lambda x: x**-0.5 * np.exp(np.sin(3 * x))
    ref = quad_power_singular(f, 0.5, (0.0, 1.0), n=40, levels=40)
    errs = [abs(quad_power_singular(f, 0.5, (0.0, 1.0), n=n, levels=6, ratio=0.5) - ref) for n in (2, 3, 4)]
    # observed algebraic order in the node count
    order = math.log(errs[0] / errs[2]) / math.log(4 / 2)
    assert order >= 4


def test_quad_breakpoints_honoured():
    f = lambda x: np.where(x < 0.3, 1.0, 0.0)
    assert quad_power_singular(f, 0.0, (0.0, 1.0), breakpoints=[0.3]) == pytest.approx(0.3, rel=1e-14)


def test_sphere_distance_examples():
    cfg = make_sector_config(3, 0.5)
    f = lambda x: np.sin(x)
    assert lp_sphere_distance(f, f, 2, cfg) == 0.0
    assert lp_sphere_distance(1.0, 0.0, 2, cfg) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-12)
    assert lp_sphere_distance(1.0, 0.0, 2, cfg) == pytest.approx(2.506628, abs=5e-7)
    d = lp_sphere_distance(lambda x: x**-0.5, 0.0, 1, cfg)
    assert d == pytest.approx(12 * math.sqrt(math.pi / 3), rel=1e-12)
    assert d == pytest.approx(12.27992, abs=5e-6)


def test_sphere_distance_rejects_small_p():
    with pytest.raises(ValueError):
        lp_sphere_distance(1.0, 0.0, 0.5, make_sector_config(3, 0.5))


def test_loc_distance_examples():
    cfg = make_sector_config(3, 0.5)
    assert lp_loc_distance(1.0, 1.0, 2, cfg) == 0.0
    # 40 balls: geometric sum 2 (1 - 2^-40)
    assert lp_loc_distance(1.0, 0.0, 2, cfg) == pytest.approx(2.0, rel=1e-11)
    assert lp_loc_constant(2) * math.sqrt(2 * math.pi) == pytest.approx(2.0)


_coef = st.floats(-2, 2, allow_nan=False)


def _profile(a, b, c):
    return lambda x: a + b * np.cos(3 * x) + c * x**-0.25


@settings(max_examples=30, deadline=None)
@given(st.tuples(_coef, _coef, _coef), st.tuples(_coef, _coef, _coef), st.tuples(_coef, _coef, _coef), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_sphere_triangle_inequality(a, b, c, p):
    cfg = make_sector_config(3, 0.5)
    f, g, h = _profile(*a), _profile(*b), _profile(*c)
    beta = 0.25 * p
    dfg = lp_sphere_distance(f, g, p, cfg, beta=beta)
    dgh = lp_sphere_distance(g, h, p, cfg, beta=beta)
    dfh = lp_sphere_distance(f, h, p, cfg, beta=beta)
    assert dfh <= dfg + dgh + 1e-12 * max(1.0, dfg + dgh)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_loc_to_sphere_ratio_constant(p):
    cfg = make_sector_config(3, 0.5)
    rng = np.random.default_rng(11)
    ratios = []
    for _ in range(12):
        a, b = rng.normal(size=3), rng.normal(size=3)
        f, g = _profile(*a), _profile(*b)
        ratios.append(lp_loc_distance(f, g, p, cfg, balls=40, beta=0.25 * p) / lp_sphere_distance(f, g, p, cfg, beta=0.25 * p))
    ratios = np.array(ratios)
    assert np.ptp(ratios) / ratios.mean() < 1e-6
    # measured constant is 2 (1 - 2^-40) (2 pi)^(-1/p), not 1
    assert ratios.mean() == pytest.approx(lp_loc_constant(p, 40), rel=1e-10)
