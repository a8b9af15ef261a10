import math

import numpy as np
import pytest

from pscband import corpus as K, elliptic as el, geometry as geo, pipeline as P
from pscband.grid import Field, Grid, lp_norm, periodic, sphere_pair
from pscband.metric import sample

SMALL = P.Resolution(n1=24, n2=24, n_xi=9, n_t=48)


@pytest.fixture(scope="module")
def product_run():
    keep = {}
    return P.run(K.product_sphere_band(), P.PipelineParams(), SMALL, "sphere", keep_fields=keep), keep


@pytest.fixture(scope="module")
def shear_run():
    return P.run(K.shear_sphere_band(0.5), P.PipelineParams(), SMALL, "sphere")


# parameters -------------------------------------------------------------------

def test_params_validation_and_round_trip():
    p = P.PipelineParams.from_dict({"p": 5, "epsilon": 0.2})
    assert P.PipelineParams.from_dict(p.to_dict()) == p
    with pytest.raises(P.PipelineError, match="unknown"):
        P.PipelineParams.from_dict({"bogus": 1})
    for bad in ({"p": 3}, {"alpha": 1.0}, {"eta": 0}, {"delta": -1}, {"epsilon": 0}):
        with pytest.raises(P.PipelineError):
            P.PipelineParams.from_dict(bad).validate()


def test_resolution_from_axes():
    r = P.Resolution.from_axes({"x1": 16, "t": 32})
    assert (r.n1, r.n2, r.n_xi, r.n_t) == (16, 48, 9, 32)
    with pytest.raises(P.PipelineError):
        P.Resolution.from_axes({"y": 3})


# stages ------------------------------------------------------------------------

def _C(spec, kind, n):
    m = sample(spec, K.band_grid(kind, n, n, 9))
    pack = geo.curvature(m)
    bd = [geo.hypersurface(m, 0, "xi", pack), geo.hypersurface(m, 8, "xi", pack)]
    return P.compute_C(pack, bd, m)


def test_compute_C_closed_forms():
    # product: R = 2, Ric(nu,nu) = 0, A = 0  ->  2*2 + 3 + 1
    assert abs(_C(K.product_sphere_band(), "sphere", 16) - 8) < 1e-9
    assert abs(_C(K.flat_shear(0.7), "torus", 8) - 4) < 1e-9


def test_compute_C_warped_closed_form():
    # f = 1 + a xi: R = -2a^2/f^2 - ... ; evaluate the known expression at both ends
    a = 0.1
    vals = []
    for f in (1.0, 1 + a):
        R, ric, h, A2 = -2 * a**2 / f**2, 0.0, 2 * a / f, 2 * a**2 / f**2
        vals.append(abs(R) + 2 * abs(ric) + h**2 + A2)
    assert abs(_C(K.warped_band(), "torus", 8) - (2 * max(vals) + 4)) < 1e-9


def test_bump_profile():
    g = Grid(sphere_pair(4) + (periodic("t", 400),))
    F = P.build_bump(7.0, 0.3, g)
    t = P.wrapped_t(g)
    assert np.all(F[np.abs(t) <= 0.15] == 8.0)
    assert np.all(F[np.abs(t) >= 0.3] == 0.0)
    assert np.all((F >= 0) & (F <= 8.0))
    assert np.ptp(F, axis=(0, 1)).max() == 0
    with pytest.raises(P.PipelineError):
        P.build_bump(1.0, 2.0, g)


def test_bump_lp_bound_and_scaling():
    g = Grid((periodic("x1", 32), periodic("x2", 32), periodic("t", 4096)))
    vol = np.ones(g.shape)
    p, C = 4, 8.0
    norms = {}
    for eps in (0.2, 0.1):
        norms[eps] = lp_norm(Field(g, P.build_bump(C, eps, g)), p, vol)
        assert norms[eps] <= (C + 1) * ((2 * math.pi) ** 2 * 2 * eps) ** (1 / p)
        assert norms[eps] >= (C + 1) * ((2 * math.pi) ** 2 * eps) ** (1 / p)
    assert 2 ** (-1 / p) * 0.95 <= norms[0.1] / norms[0.2] <= 2 ** (-1 / p) * 1.05


def test_slice_index():
    g = K.band_grid("torus", 4, 4, 9)
    assert P.slice_index(g, 0.5) == 4
    with pytest.raises(P.PipelineError):
        P.slice_index(g, 0.3)


def test_product_laplacian_split_matches_operator():
    m = sample(K.product_sphere_band(), K.band_grid("sphere", 12, 12, 9))
    w = el.w_space(m, 0, 16)
    op = el.assemble(w)
    u = np.exp(0.1 * np.cos(w.metric.grid.mesh()["t"]))
    lhs = -4 * P.product_laplacian_on_slice(m, 0, w.metric.grid, u) + w.R0 * u
    assert np.max(np.abs(lhs - op.apply(u))) < 1e-10


# full runs ----------------------------------------------------------------------

def test_product_certifies(product_run):
    rep, keep = product_run
    assert rep.conclusion == P.CERTIFIED and rep.certified
    assert rep.solve.converged and rep.solve.u_min >= 0
    assert rep.A1_sup < 1 and 0.5 < rep.u0_bounds[0] <= rep.u0_bounds[1] < 1.5
    assert rep.induced_R_min_formula > rep.certification_threshold
    assert rep.route_difference < 1e-3 and rep.routes_agree
    assert abs(rep.C_used - 8) < 1e-9
    # u0 is constant along X for a product
    assert np.ptp(keep["u0_slice"]) < 1e-9


def test_shear_certifies(shear_run):
    assert shear_run.conclusion == P.CERTIFIED
    assert abs(shear_run.ellipticity_margin - 0.75) < 2e-3


def test_report_keys(product_run):
    d = product_run[0].to_dict()
    for key in ("conclusion", "C_used", "F_lp_norm", "solve", "A1_sup", "u0_bounds",
                "induced_R_min_formula", "induced_R_min_direct", "dimension_parameter"):
        assert key in d
    assert d["dimension_parameter"] == 3


def test_negative_curvature_fails_hypothesis():
    rep = P.run(K.hyperbolic_band(), P.PipelineParams(), P.Resolution(8, 8, 9, 16), "torus")
    assert rep.conclusion == f"{P.FAILED}(R_positive)"
    assert "hypothesis fails: h_zero" in rep.messages


def test_flat_fails_positivity():
    rep = P.run(K.flat_band(), P.PipelineParams(), P.Resolution(8, 8, 9, 16), "torus")
    assert rep.conclusion == f"{P.FAILED}(R_positive)" and not rep.certified


def test_steep_shear_fails_angle():
    rep = P.run(K.flat_shear(1.2), P.PipelineParams(), P.Resolution(8, 8, 9, 16), "torus")
    assert rep.conclusion.startswith(P.FAILED)
    assert rep.ellipticity_margin is None or rep.ellipticity_margin < 0


def test_inconclusive_on_solver_failure():
    rep = P.run(K.product_sphere_band(), P.PipelineParams(max_iter=1, tol=1e-14), SMALL)
    assert rep.conclusion == f"{P.INCONCLUSIVE}(solve)"


def test_coarse_grid_is_inconclusive():
    rep = P.run(K.product_sphere_band(), P.PipelineParams(), P.Resolution(12, 12, 9, 24))
    assert rep.conclusion == f"{P.INCONCLUSIVE}(ellipticity)"


def test_determinism(shear_run):
    b = P.run(K.shear_sphere_band(0.5), P.PipelineParams(), SMALL)
    a = shear_run
    assert a.to_dict() == b.to_dict()


def test_angle_margin_is_conformally_invariant():
    m = sample(K.shear_sphere_band(0.6), K.band_grid("sphere", 12, 12, 9))
    w1 = el.w_space(m, 0, 8)
    phi = 0.3 * np.cos(m.grid.mesh()["x1"])
    w2 = el.w_space(m.scaled_by_field(np.exp(2 * phi)), 0, 8)
    a = el.ellipticity_margin(w1.metric, w1.V)[0]
    b = el.ellipticity_margin(w2.metric, w2.V)[0]
    assert abs(a - b) < 1e-12


# sweep and eigen ------------------------------------------------------------------

def test_sweep_requires_three_decreasing():
    with pytest.raises(P.PipelineError, match="three"):
        P.epsilon_sweep(K.product_sphere_band(), P.PipelineParams(), [0.2, 0.1])
    with pytest.raises(P.PipelineError, match="decreasing"):
        P.epsilon_sweep(K.product_sphere_band(), P.PipelineParams(), [0.1, 0.2, 0.05])


def test_sweep_columns():
    out = P.epsilon_sweep(K.product_sphere_band(), P.PipelineParams(), [0.2, 0.1, 0.05],
                          P.Resolution(8, 8, 9, 128))
    assert [r["epsilon"] for r in out["rows"]] == [0.2, 0.1, 0.05]
    assert out["non_increasing"]["F_lp_norm"] and out["non_increasing"]["c0_norm"]
    assert set(out["non_increasing"]) == set(P.SWEEP_COLUMNS)


def test_non_increasing_tolerance():
    assert P.non_increasing([3, 2, 2 + 1e-9])
    assert not P.non_increasing([3, 2, 2.1])


def test_eigen_targets():
    res = P.Resolution(12, 12, 9, 24)
    assert P.eigen_check(K.product_sphere_band(), "M_neumann", res)["sign"] == "positive"
    torus = P.eigen_check(K.flat_torus(2), "X_slice", res, "torus")
    assert torus["sign"] == "zero"
    cert = P.eigen_check(K.product_sphere_band(), "X_certified", SMALL)
    assert cert["sign"] == "positive"
    with pytest.raises(P.PipelineError):
        P.eigen_check(K.product_sphere_band(), "nope", res)
