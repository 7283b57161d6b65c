import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracmag.lattice import (ComplexField, Grid, LatticeError, MagneticPotential, ProblemSpec,
                             build_grid, critical_exponent, normalize_tail, read_field_csv,
                             sample_field, shift_field, smooth_bump, weight_field,
                             weighted_lp_norm, write_field_csv)


def test_grid_1d_cell_centres():
    g = build_grid(1, 4, 1.0)
    assert g.M == 4
    assert g.h == 0.5
    np.testing.assert_allclose(g.coords[:, 0], [-0.75, -0.25, 0.25, 0.75])


def test_grid_counts_and_volume():
    assert build_grid(2, 8, 2.0).M == 64
    assert build_grid(2, 8, 2.0).h == 0.5
    g = build_grid(3, 16, 1.0)
    assert g.M == 4096
    assert g.cell_volume == pytest.approx(0.125**3, rel=1e-15)


def test_grid_c_order():
    g = Grid(2, 4, 1.0)
    # last axis varies fastest
    assert np.all(g.indices[1] == [0, 1])
    assert g.coords[1, 1] - g.coords[0, 1] == pytest.approx(g.h)


@pytest.mark.parametrize("args", [(4, 8, 1.0), (0, 8, 1.0), (2, 3, 1.0), (2, 8, 0.0), (2, 8, -1.0)])
def test_grid_rejects_bad_arguments(args):
    with pytest.raises(LatticeError):
        build_grid(*args)


def test_sample_gaussian_and_plane_phase(grid1):
    u = sample_field(lambda x: np.exp(-np.sum(x**2, axis=1)), grid1)
    e1, e2 = np.exp(-0.5625), np.exp(-0.0625)
    np.testing.assert_allclose(u.values, [e1, e2, e2, e1], rtol=1e-15)
    w = sample_field(lambda x: np.exp(1j * x[:, 0]), grid1)
    np.testing.assert_allclose(np.abs(w.values), 1.0)
    np.testing.assert_allclose(np.angle(w.values), [-0.75, -0.25, 0.25, 0.75])
    assert sample_field(lambda x: np.zeros(len(x)), grid1).is_zero()


def test_sample_rejects_non_finite_with_coordinates(grid1):
    with pytest.raises(LatticeError, match="node 2"):
        with np.errstate(divide="ignore"):
            sample_field(lambda x: 1.0 / (x[:, 0] - 0.25), grid1)


def test_field_values_are_read_only(grid1):
    u = ComplexField.zeros(grid1)
    with pytest.raises(ValueError):
        u.values[0] = 1.0


def test_weighted_norm_examples(grid1):
    assert weighted_lp_norm(ComplexField.zeros(grid1), 1.0, 3) == 0.0
    one = ComplexField(grid1, np.ones(4))
    assert weighted_lp_norm(one, 1.0, 2) == pytest.approx(np.sqrt(2), rel=1e-15)
    for r in (1.0, 1.5, 4.0):
        assert weighted_lp_norm(one * 1j, 1.0, r) == weighted_lp_norm(one, 1.0, r)
    with pytest.raises(LatticeError):
        weighted_lp_norm(one, 1.0, 0.5)


def test_weighted_norm_uses_weights(grid1):
    u = ComplexField(grid1, [1, 2, 0, 1j])
    w = np.array([1.0, 0.5, 3.0, 2.0])
    expected = (np.sum(w * np.abs(u.values) ** 3) * 0.5) ** (1 / 3)
    assert weighted_lp_norm(u, w, 3) == pytest.approx(expected, rel=1e-14)


def test_gaussian_norm_converges_at_second_order():
    # box integral of exp(-2x^2) over [-2, 2]
    from math import erf, pi, sqrt
    exact = sqrt(pi / 2) * erf(2 * sqrt(2))
    errs = []
    for n in (16, 32, 64):
        g = Grid(1, n, 2.0)
        u = sample_field(lambda x: np.exp(-x[:, 0] ** 2), g)
        errs.append(abs(weighted_lp_norm(u, 1.0, 2) ** 2 - exact))
    assert errs[1] / errs[0] < 0.3 and errs[2] / errs[1] < 0.3


def test_shift_examples(grid1):
    hot = ComplexField(grid1, [0, 1, 0, 0])
    np.testing.assert_array_equal(shift_field(hot, [0.0]).values, hot.values)
    np.testing.assert_array_equal(shift_field(hot, [-0.5]).values, [0, 0, 1, 0])
    assert shift_field(hot, [2.0]).is_zero()
    with pytest.raises(LatticeError):
        shift_field(hot, [0.3])


@settings(max_examples=40, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.floats(1.0, 4.0))
def test_shift_is_isometry_inside_box(i, j, r):
    g = Grid(2, 12, 1.5)
    rng = np.random.default_rng(abs(i) * 7 + abs(j))
    inside = np.all(np.abs(g.coords) < 0.45 * g.L, axis=1)
    u = ComplexField(g, np.where(inside, rng.normal(size=g.M) + 1j * rng.normal(size=g.M), 0))
    v = shift_field(u, [i * g.h, j * g.h])
    assert weighted_lp_norm(v, 1.0, r) == pytest.approx(weighted_lp_norm(u, 1.0, r), rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(min_magnitude=1e-30, max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       st.floats(1.0, 6.0))
def test_norm_absolute_homogeneity(t, r):
    g = Grid(1, 8, 1.0)
    u = ComplexField(g, np.arange(8) - 3.5 + 1j)
    assert weighted_lp_norm(u * t, 1.0, r) == pytest.approx(abs(t) * weighted_lp_norm(u, 1.0, r),
                                                             rel=1e-12, abs=1e-300)


def test_potentials():
    B = [[0.0, -0.5], [0.5, 0.0]]
    A = MagneticPotential.symmetric_gauge(1.0)
    np.testing.assert_allclose(A.matrix, B)
    x = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(A(x), [[-1.0, 0.5]])
    assert A.is_linear and not A.is_zero
    assert MagneticPotential.zero(2).is_zero
    c = MagneticPotential.constant([1.0, 2.0])
    np.testing.assert_allclose(c(np.zeros((3, 2))), [[1.0, 2.0]] * 3)
    assert not c.is_linear


def test_linear_gauge_translation_returns_same_potential():
    A = MagneticPotential.linear([[0.3, -1.0], [0.2, 0.5]])
    xi = np.array([0.5, -0.25])
    At = A.translated(xi, -A(xi[None, :])[0])
    pts = np.random.default_rng(1).normal(size=(10, 2))
    np.testing.assert_allclose(At(pts), A(pts), atol=1e-15)


def test_tabulated_potential_reproduces_linear():
    axis = np.linspace(-3, 3, 13)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    vals = np.stack([-0.5 * Y, 0.5 * X], axis=-1)
    A = MagneticPotential.tabulated([axis, axis], vals)
    pts = np.array([[0.1, 0.2], [-1.3, 2.2], [3.5, -3.6]])
    np.testing.assert_allclose(A(pts), MagneticPotential.symmetric_gauge(1.0)(pts), atol=1e-12)


def test_problem_validation():
    g = Grid(2, 8, 1.0)
    with pytest.raises(LatticeError, match="s\\*p < N"):
        ProblemSpec(g, 0.9, 2.5)
    with pytest.raises(LatticeError, match="p\\*_s"):
        ProblemSpec(g, 0.5, 2.0, q=4.0)
    with pytest.raises(LatticeError):
        ProblemSpec(g, 0.5, 2.0, H=-np.ones(g.M))
    spec = ProblemSpec(g, 0.5, 2.0, q=3.0)
    assert spec.pstar == 4.0 == critical_exponent(2, 0.5, 2.0)
    assert spec.r == pytest.approx(4.0)


def test_tail_names():
    assert normalize_tail(True) == "radial"
    assert normalize_tail(False) == "off"
    assert normalize_tail("lattice") == "lattice"
    with pytest.raises(LatticeError):
        normalize_tail("sometimes")


def test_weight_fields():
    g = Grid(2, 16, 2.0)
    bump = weight_field("bump", g, amplitude=2.0, radius=1.5)
    assert bump.max() == pytest.approx(2.0 * np.e * smooth_bump(np.array([g.radius.min() / 1.5]))[0])
    assert np.all(bump[g.radius >= 1.5] == 0)
    assert np.all(weight_field("constant", g, amplitude=3.0) == 3.0)
    assert np.all(weight_field("zero", g) == 0)
    with pytest.raises(LatticeError):
        weight_field("triangle", g)


def test_field_csv_round_trip(tmp_path):
    g = Grid(2, 6, 1.25)
    rng = np.random.default_rng(3)
    u = ComplexField(g, rng.normal(size=g.M) + 1j * rng.normal(size=g.M))
    path = write_field_csv(u, tmp_path / "u.csv", {"note": "x"})
    first = path.read_text().splitlines()[0]
    assert first.startswith("#")
    meta = json.loads(first[1:])
    assert meta["grid"]["n"] == 6
    v = read_field_csv(path)
    assert v.grid == g
    np.testing.assert_array_equal(v.values, u.values)
