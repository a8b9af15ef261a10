import json

import numpy as np
import pytest

from pscband import corpus as K
from pscband.grid import Grid, GridError, interval, periodic, sphere_pair
from pscband.metric import MetricError, MetricField, MetricSpec, sample


def torus3(n=8):
    return Grid((periodic("x1", n), periodic("x2", n), interval("xi", n)))


def test_euclidean_sample():
    m = sample(K.flat_band(), torus3())
    assert np.all(m.g == np.eye(3)) and not m.dg.any() and not m.ddg.any()
    np.testing.assert_array_equal(m.det, 1.0)


def test_shear_has_unit_determinant():
    m = sample(K.flat_shear(0.5), torus3())
    assert m.g[0, 0, 0, 0, 2] == 0.5 and m.g[0, 0, 0, 2, 2] == 1.25
    np.testing.assert_allclose(m.det, 1.0, atol=1e-15)


def test_sphere_radius_two_determinant():
    g = Grid(sphere_pair(8, 8))
    m = sample(K.round_sphere(2.0), g)
    np.testing.assert_allclose(m.det, 16 * np.sin(g.mesh()["x1"]) ** 2, rtol=1e-14)


def test_inverse_times_metric_is_identity():
    spec = MetricSpec.from_dict({"dim": 3, "components": {
        "g11": "2+sin(x1)", "g12": "0.3*cos(x2)", "g22": "1.5", "g23": "0.2*xi", "g33": "1+xi^2"}})
    m = sample(spec, torus3())
    np.testing.assert_allclose(np.einsum("...ij,...jk->...ik", m.ginv, m.g), np.broadcast_to(np.eye(3), m.g.shape),
                               atol=1e-12)


def test_exact_derivatives_from_jets():
    spec = MetricSpec.from_dict({"dim": 3, "components": {"g11": "exp(xi)*(2+sin(x1))", "g22": "1", "g33": "1"}})
    g = torus3()
    m = sample(spec, g)
    x1, xi = g.mesh()["x1"], g.mesh()["xi"]
    np.testing.assert_allclose(m.dg[..., 0, 0, 0], np.exp(xi) * np.cos(x1), atol=1e-14)
    np.testing.assert_allclose(m.ddg[..., 0, 2, 0, 0], np.exp(xi) * np.cos(x1), atol=1e-14)
    np.testing.assert_allclose(m.ddg[..., 2, 2, 0, 0], m.g[..., 0, 0], rtol=1e-14)


def test_not_positive_definite_lists_nodes():
    spec = MetricSpec.from_dict({"dim": 3, "components": {"g11": "1", "g22": "1", "g33": "1", "g13": "1.2"}})
    with pytest.raises(MetricError, match="not positive definite at 512 node"):
        sample(spec, torus3())
    spec = MetricSpec.from_dict({"dim": 3, "components": {"g11": "xi - 0.5", "g22": "1", "g33": "1"}})
    with pytest.raises(MetricError, match="'xi': 0.0"):
        sample(spec, torus3())


def test_spec_validation():
    with pytest.raises(MetricError, match="missing diagonal"):
        MetricSpec.from_dict({"dim": 2, "components": {"g11": "1"}})
    with pytest.raises(MetricError, match="unknown metric keys"):
        MetricSpec.from_dict({"dim": 2, "components": {"g11": "1", "g22": "1"}, "nmae": "x"})
    with pytest.raises(MetricError, match="bad component key"):
        MetricSpec.from_dict({"dim": 2, "components": {"g11": "1", "g22": "1", "gxy": "0"}})
    with pytest.raises(MetricError, match="given twice"):
        MetricSpec.from_dict({"dim": 2, "components": {"g11": "1", "g22": "1", "g12": "0", "g21": "0"}})
    with pytest.raises(MetricError, match="g11"):
        MetricSpec.from_dict({"dim": 2, "components": {"g11": "1 +", "g22": "1"}})
    with pytest.raises(MetricError, match="dimension"):
        sample(K.round_sphere(), torus3())


def test_off_diagonal_defaults_and_mirroring():
    spec = MetricSpec.from_dict({"dim": 3, "components": {"g11": "1", "g22": "1", "g33": "1", "g31": "0.1"}})
    m = sample(spec, torus3())
    assert m.g[0, 0, 0, 0, 2] == m.g[0, 0, 0, 2, 0] == 0.1
    assert m.g[0, 0, 0, 0, 1] == 0.0


def test_json_round_trip():
    spec = K.shear_sphere_band(0.5)
    again = MetricSpec.from_json(json.dumps(spec.to_dict()))
    assert again.components == spec.components and again.name == spec.name


def test_restrict_and_extend():
    m = sample(K.warped_band("1+0.1*xi"), torus3())
    s = m.restrict("xi", 7)
    assert s.grid.names == ("x1", "x2")
    np.testing.assert_allclose(s.g[..., 0, 0], 1.21)
    w = s.extend(periodic("t", 8))
    assert w.grid.names == ("x1", "x2", "t") and np.all(w.g[..., 2, 2] == 1.0)


def test_stencil_derivative_mode_refuses_sphere_charts():
    g = Grid(sphere_pair(8, 8))
    with pytest.raises(GridError):
        MetricField.from_samples(g, sample(K.round_sphere(), g).g)


def test_scaled_spec_multiplies_every_component():
    spec = K.flat_shear(0.5).scaled("exp(2*x1)")
    m = sample(spec, torus3())
    x1 = torus3().mesh()["x1"]
    np.testing.assert_allclose(m.g[..., 0, 2], 0.5 * np.exp(2 * x1))
