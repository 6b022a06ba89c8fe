import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbvar.core import FitComplexity, build_design, learning_rate
from cbvar.selection import (
    DEFAULT_ALPHA_GRID,
    INF,
    AlphaGrid,
    evaluate_alpha_grid,
    fit_cbvar,
    format_alpha,
    knee_distances,
    parse_alpha,
    select_alpha_knee,
)
from cbvar.simstudy import DgpSpec, simulate_dgp

from conftest import simulate_var


def pts(alphas, mf, mc):
    return [FitComplexity(a, f, c) for a, f, c in zip(alphas, mf, mc)]


def test_knee_picks_point_off_chord():
    assert select_alpha_knee(pts([25, 100, INF], [0, 0.9, 1], [10, 9, 0])) == 100


def test_collinear_returns_inf():
    assert select_alpha_knee(pts([25, 50, 100, INF], [0, 1, 2, 3], [30, 20, 10, 0])) == INF


def test_ties_go_to_larger_alpha():
    # symmetric square: points 50 and 100 are equally far from the chord
    assert select_alpha_knee(pts([25, 50, 100, INF], [0, 0, 1, 1], [1, 0, 1, 0])) == 100


def test_knee_distance_geometry():
    d = knee_distances([0, 1, 2], [0, 2, 0])
    np.testing.assert_allclose(d, [0, 1, 0])


def test_too_few_points():
    with pytest.raises(ValueError):
        select_alpha_knee(pts([25, INF], [0, 1], [1, 0]))


curve = st.lists(st.tuples(st.floats(-1e4, 1e4), st.integers(0, 500)), min_size=3, max_size=11)


@given(curve, st.floats(0.01, 100), st.floats(-1e3, 1e3), st.floats(0.01, 100), st.floats(-50, 50))
def test_knee_affine_invariance(points, a, b, c, e):
    alphas = list(DEFAULT_ALPHA_GRID[-len(points):])
    mf = np.array([p[0] for p in points])
    mc = np.array([p[1] for p in points], dtype=float)
    base = select_alpha_knee(pts(alphas, mf, mc))
    assert select_alpha_knee(pts(alphas, a * mf + b, c * mc + e)) == base
    assert base in alphas


@given(curve)
def test_knee_distances_symmetric_in_endpoints(points):
    mf = np.array([p[0] for p in points])
    mc = np.array([p[1] for p in points], dtype=float)
    np.testing.assert_allclose(knee_distances(mf, mc), knee_distances(mf[::-1], mc[::-1])[::-1],
                               atol=1e-12)


def test_reversed_input_order_same_choice():
    p = pts([25, 50, 100, 250, INF], [0, 0.6, 0.8, 0.95, 1], [40, 25, 15, 8, 0])
    assert select_alpha_knee(p) == select_alpha_knee(p[::-1]) == 50


def test_alpha_text_roundtrip():
    assert parse_alpha("inf") == INF and format_alpha(INF) == "inf"
    assert format_alpha(75.0) == "75" and parse_alpha("75") == 75.0
    assert parse_alpha("BIC") == "bic"
    with pytest.raises(ValueError):
        parse_alpha("-3")


@pytest.fixture(scope="module")
def t3_design():
    return build_design(simulate_dgp(DgpSpec("VAR", "T3", seed=0)), 12)


def test_grid_of_infinity_only(t3_design):
    g = evaluate_alpha_grid(t3_design, alpha_grid=[INF])
    assert len(g.points) == 1 and g.points[0].alpha == INF
    assert g.posteriors[INF].zeta == 1.0


def test_grid_deterministic(t3_design, tmp_path):
    a = evaluate_alpha_grid(t3_design)
    b = evaluate_alpha_grid(t3_design)
    assert [(p.mf, p.mc) for p in a.points] == [(p.mf, p.mc) for p in b.points]
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[-1].startswith("inf,")


def test_grid_validation(t3_design):
    with pytest.raises(ValueError):
        evaluate_alpha_grid(t3_design, alpha_grid=[50, 25, INF])
    with pytest.raises(ValueError):
        evaluate_alpha_grid(t3_design, alpha_grid=[])


def test_fit_cbvar_bic_member_of_grid(t3_design):
    f = fit_cbvar(t3_design, "bic")
    assert f.alpha in DEFAULT_ALPHA_GRID
    assert isinstance(f.grid, AlphaGrid) and len(f.grid.points) == len(DEFAULT_ALPHA_GRID)
    assert f.posterior.zeta == learning_rate(f.alpha, t3_design.T_effective).zeta


def test_fit_cbvar_fixed_lambda():
    d = build_design(simulate_var(np.random.default_rng(0), 100, [0.5 * np.eye(2)]), 1)
    f = fit_cbvar(d, 50, lam=0.3)
    assert f.lam == 0.3 and f.ml_curve is None
    assert f.posterior.zeta == pytest.approx(50 / 149)


def _t3_curves():
    out = []
    for seed in range(20):
        d = build_design(simulate_dgp(DgpSpec("VAR", "T3", seed=seed)), 12)
        out.append(evaluate_alpha_grid(d))
    return out


@pytest.fixture(scope="module")
def t3_curves():
    return _t3_curves()


@pytest.mark.xfail(strict=True, reason="MC counts wiggle by a few coefficients between adjacent "
                   "alphas at fixed lambda; monotone in 15 of 20 seeds")
def test_mc_weakly_increasing_as_alpha_decreases(t3_curves):
    ok = 0
    for g in t3_curves:
        mc = [p.mc for p in sorted(g.points, key=lambda p: -p.alpha)]
        ok += all(np.diff(mc) >= 0)
    assert ok >= 18


def test_mc_larger_at_heaviest_coarsening(t3_curves):
    for g in t3_curves:
        by_alpha = {p.alpha: p.mc for p in g.points}
        assert by_alpha[25.0] > by_alpha[INF]


def test_knee_in_moderate_range_for_t3(t3_curves):
    chosen = [select_alpha_knee(g) for g in t3_curves]
    assert sum(50 <= a <= 350 for a in chosen) > len(chosen) / 2
