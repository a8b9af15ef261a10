import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pscband import io
from pscband.grid import (Axis, AxisKind, Field, Grid, GridError, derivative_matrix, diff, diff2,
                          interval, lp_norm, partial_derivative, periodic, sphere_pair, sup_norm)


def line(axis):
    return Grid((axis,))


def test_constant_has_zero_derivative_on_every_axis_kind():
    g = Grid(sphere_pair(8, 8) + (interval("xi", 9),))
    f = Field(g, np.full(g.shape, 3.0))
    for k in range(3):
        for order in (1, 2):
            assert np.max(np.abs(partial_derivative(f, k, order).values)) < 1e-12


def test_second_derivative_of_sine_on_circle():
    g = line(periodic("t", 64))
    t = g.mesh()["t"]
    err = np.max(np.abs(diff(g, np.sin(t), 0, 2) + np.sin(t)))
    assert err < 1e-2


def test_fourier_mode_derivative_converges_at_second_order():
    errs = []
    for n in (16, 32, 64):
        g = line(periodic("t", n))
        t = g.mesh()["t"]
        errs.append(np.max(np.abs(diff(g, np.sin(3 * t), 0, 1) - 3 * np.cos(3 * t))))
    slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(slopes) >= 1.9


def test_quadratic_exact_including_endpoints():
    g = line(interval("xi", 11))
    xi = g.mesh()["xi"]
    np.testing.assert_allclose(diff(g, xi**2, 0, 2), 2.0, atol=1e-10)
    np.testing.assert_allclose(diff(g, xi**2, 0, 1), 2 * xi, atol=1e-12)


def test_neumann_stencils_vanish_on_even_functions_at_the_ends():
    g = line(interval("xi", 17))
    xi = g.mesh()["xi"]
    f = np.cos(math.pi * xi)
    d1 = diff(g, f, 0, 1, neumann=True)
    assert d1[0] == 0.0 and d1[-1] == 0.0
    d2 = diff(g, f, 0, 2, neumann=True)
    assert abs(d2[0] + math.pi**2) < 0.05


def test_pole_crossing_matches_smooth_cartesian_function():
    # x = sin(theta) cos(phi) is smooth across the poles
    errs = []
    for n in (16, 32):
        g = Grid(sphere_pair(n, 2 * n))
        m = g.mesh()
        th, ph = m["x1"], m["x2"]
        f = np.sin(th) * np.cos(ph)
        d_th = diff(g, f, 0, 1)
        d_thth = diff(g, f, 0, 2)
        d_thph = diff2(g, f, 0, 1)
        errs.append(max(np.max(np.abs(d_th - np.cos(th) * np.cos(ph))),
                        np.max(np.abs(d_thth + f)),
                        np.max(np.abs(d_thph + np.cos(th) * np.sin(ph)))))
    assert errs[1] < errs[0] / 3.5


def test_linearity():
    g = Grid((periodic("x1", 16), interval("xi", 12)))
    rng = np.random.default_rng(1)
    f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    a, b = 1.7, -0.3
    for k in range(2):
        for order in (1, 2):
            lhs = diff(g, a * f + b * h, k, order)
            rhs = a * diff(g, f, k, order) + b * diff(g, h, k, order)
            assert np.max(np.abs(lhs - rhs)) <= 1e-13 * np.max(np.abs(rhs))


def test_axis_errors():
    g = line(periodic("t", 16))
    with pytest.raises(GridError):
        derivative_matrix(g, 1, 1)
    with pytest.raises(GridError):
        derivative_matrix(line(periodic("t", 6)), 0, 2)
    with pytest.raises(GridError):
        diff(g, np.zeros(16), 0, 3)


def test_grid_validation():
    with pytest.raises(GridError):
        Grid(sphere_pair(8, 9))
    with pytest.raises(GridError):
        Grid((Axis("x1", AxisKind.SPHERE_CHART, 8),))
    with pytest.raises(GridError):
        Grid((periodic("a", 8), periodic("a", 8)))
    with pytest.raises(GridError):
        Grid(())


def test_periodic_nodes_do_not_repeat_and_interval_includes_ends():
    p = periodic("t", 8)
    assert p.coords[-1] < 2 * math.pi - 1e-12
    i = interval("xi", 9)
    assert i.coords[0] == 0.0 and i.coords[-1] == 1.0
    g = Grid((p, i))
    assert g.size == 72 and g.dim == 2


def test_lp_norm_of_constant_on_unit_volume():
    g = Grid((periodic("x1", 16, 1.0), periodic("x2", 16, 1.0)))
    f = Field(g, np.ones(g.shape))
    assert abs(lp_norm(f, 2, np.ones(g.shape)) - 1.0) <= 1e-12


def test_lp_norm_rejects_bad_weight_and_p():
    g = line(periodic("t", 8))
    f = Field(g, np.ones(8))
    w = np.ones(8)
    w[3] = 0.0
    with pytest.raises(GridError):
        lp_norm(f, 2, w)
    with pytest.raises(GridError):
        lp_norm(f, 0.5, np.ones(8))


def test_sup_norm_of_sine():
    g = line(periodic("x1", 32))
    h = g.spacings[0]
    assert abs(sup_norm(Field(g, np.sin(g.mesh()["x1"]))) - 1.0) <= h**2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.lists(st.floats(0, 3), min_size=8, max_size=8),
       st.floats(1, 6))
def test_lp_norm_monotone_under_domination(vals, extra, p):
    g = line(periodic("t", 8))
    f = np.array(vals)
    big = np.abs(f) + np.array(extra)
    w = np.ones(8)
    assert lp_norm(Field(g, f), p, w) <= lp_norm(Field(g, big), p, w) * (1 + 1e-12) + 1e-300


def test_field_csv_layout(tmp_path):
    g = Grid((periodic("x1", 2, 1.0), interval("xi", 2)))
    vals = np.arange(4.0).reshape(2, 2)
    vec = np.stack([vals, -vals], axis=-1)
    path = io.write_field_csv(tmp_path / "f.csv", g, {"u": vals, "v": vec})
    text = path.read_text().splitlines()
    assert text[0] == "x1,xi,u,v_1,v_2"
    assert text[1] == "0,0,0,0,-0"
    assert text[4] == "0.5,1,3,3,-3"
    header = (tmp_path / "f.csv.json").read_text()
    assert '"kind": "interval"' in header
