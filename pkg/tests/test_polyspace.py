import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hho_brinkman.mesh import Mesh, generate_cartesian, hexagonal_mesh
from hho_brinkman.polyspace import (
    MAX_QUAD_DEGREE,
    NedelecBasis,
    ScaledMonomials,
    cell_quadrature,
    dim_nedelec,
    dim_poly,
    evaluate_cell,
    face_quadrature,
    l2_project_cell,
    l2_project_face,
    monomial_exponents,
    nedelec_project,
    reference_triangle_rule,
)

from conftest import smooth_field

TRI = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], validate=False).cell_geometry(0)
SQUARE = generate_cartesian(1).cell_geometry(0)
HEX = hexagonal_mesh(1).geometry[int(np.argmax([len(c) for c in hexagonal_mesh(1).cells]))]


def integrate(f, cell, degree):
    q = cell_quadrature(cell, degree)
    return float(q.weights @ f(q.points))


def test_triangle_x_squared():
    assert integrate(lambda p: p[:, 0] ** 2, TRI, 2) == pytest.approx(1 / 12, abs=1e-15)


def test_square_xy():
    assert integrate(lambda p: p[:, 0] * p[:, 1], SQUARE, 2) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("cell", [TRI, SQUARE, HEX])
def test_weights_sum_to_area(cell):
    assert cell_quadrature(cell, 5).weights.sum() == pytest.approx(cell.area, rel=1e-13)


@pytest.mark.parametrize("degree", range(0, 13))
def test_triangle_exactness(degree):
    # int_T x^a y^b over the reference triangle = a! b! / (a + b + 2)!
    from math import factorial

    pts, w = reference_triangle_rule(degree)
    for a, b in monomial_exponents(degree):
        exact = factorial(a) * factorial(b) / factorial(a + b + 2)
        assert w @ (pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-13, abs=1e-16)


def test_segment_exactness():
    q = face_quadrature([0.0, 0.0], [2.0, 0.0], 7)
    assert q.weights @ q.points[:, 0] ** 7 == pytest.approx(2**8 / 8, rel=1e-14)


def test_degree_limit():
    with pytest.raises(ValueError, match=str(MAX_QUAD_DEGREE)):
        cell_quadrature(TRI, MAX_QUAD_DEGREE + 1)


def test_dimensions():
    assert [dim_poly(m) for m in range(4)] == [1, 3, 6, 10]
    assert (dim_nedelec(0), dim_nedelec(1), dim_nedelec(2)) == (0, 3, 8)


def test_projection_reproduces_linear():
    coef = l2_project_cell(lambda p: p[:, 0] + p[:, 1], SQUARE, 1)
    # x + y = (x_T + y_T) + h (xi + eta) with x_T = (1/2, 1/2)
    np.testing.assert_allclose(coef, [1.0, SQUARE.h, SQUARE.h], atol=1e-12)


def test_mean_of_sine():
    coef = l2_project_cell(lambda p: np.sin(np.pi * p[:, 0]), SQUARE, 0, degree=20)
    assert coef[0] == pytest.approx(2 / np.pi, abs=1e-12)


@pytest.mark.parametrize("cell", [TRI, SQUARE, HEX])
@pytest.mark.parametrize("m", [0, 1, 2])
def test_projection_error_orthogonal(cell, m):
    f = lambda p: (p[:, 0] - 0.3) ** (m + 1) + p[:, 1] ** (m + 1) * p[:, 0]  # noqa: E731
    coef = l2_project_cell(f, cell, m, degree=2 * m + 4)
    q = cell_quadrature(cell, 2 * m + 4)
    err = f(q.points) - evaluate_cell(coef, cell, m, q.points)
    basis = ScaledMonomials(cell.centroid, cell.h, m).values(q.points)
    assert np.abs((q.weights * err) @ basis).max() <= 1e-11


@pytest.mark.parametrize("m", [0, 1, 2])
def test_projection_idempotent(m):
    coef = l2_project_cell(lambda p: smooth_field(p)[:, 0], HEX, m)
    again = l2_project_cell(lambda p: evaluate_cell(coef, HEX, m, p), HEX, m)
    np.testing.assert_allclose(again, coef, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(c=st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_projection_linear_in_data(c):
    f1 = lambda p: np.cos(p[:, 0]) * p[:, 1]  # noqa: E731
    f2 = lambda p: np.exp(p[:, 0] * p[:, 1])  # noqa: E731
    a, b = c[0], c[1]
    lhs = l2_project_cell(lambda p: a * f1(p) + b * f2(p), HEX, 2)
    rhs = a * l2_project_cell(f1, HEX, 2) + b * l2_project_cell(f2, HEX, 2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * (1 + abs(a) + abs(b)))


def test_face_projection():
    a, b = np.array([0.2, 0.1]), np.array([0.7, 0.5])
    t = (b - a) / np.linalg.norm(b - a)
    c = 0.5 * (a + b)
    L = np.linalg.norm(b - a)
    # identity on P^1: 2 + 3 s with s the scaled arclength
    coef = l2_project_face(lambda p: 2 + 3 * ((p - c) @ t) / L, a, b, 1)
    np.testing.assert_allclose(coef, [2, 3], atol=1e-13)
    # constant projection is the mean: int_0^1 x^2 dx along [0,1]x{0}
    mean = l2_project_face(lambda p: p[:, 0] ** 2, [0, 0], [1, 0], 0)
    assert mean[0] == pytest.approx(1 / 3, abs=1e-14)
    # orthogonality of the error to P^1
    f = lambda p: np.sin(3 * p[:, 0]) + p[:, 1] ** 3  # noqa: E731
    coef = l2_project_face(f, a, b, 1, degree=16)
    q = face_quadrature(a, b, 16)
    s = ((q.points - c) @ t) / L
    err = f(q.points) - (coef[0] + coef[1] * s)
    assert abs(q.weights @ err) <= 1e-12 and abs(q.weights @ (err * s)) <= 1e-12


def test_nedelec_k0_empty():
    assert nedelec_project(smooth_field, HEX, 0).shape == (0,)


def test_nedelec_reproduces_gradient():
    grad = lambda p: 2 * p  # grad(x^2 + y^2)  # noqa: E731
    coef = nedelec_project(grad, HEX, 2)
    q = cell_quadrature(HEX, 6)
    vals = np.einsum("qan,n->qa", NedelecBasis(HEX.centroid, HEX.h, 2).values(q.points), coef)
    np.testing.assert_allclose(vals, grad(q.points), atol=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_lower_degree_vectors_in_nedelec(k):
    # P^(k-1)(T)^2 is contained in N^k(T)
    basis = NedelecBasis(HEX.centroid, HEX.h, k)
    q = cell_quadrature(HEX, 2 * k)
    Phi = basis.values(q.points).reshape(-1, basis.dim)
    for a, b in monomial_exponents(k - 1):
        for comp in range(2):
            target = np.zeros((len(q.points), 2))
            z = (q.points - HEX.centroid) / HEX.h
            target[:, comp] = z[:, 0] ** a * z[:, 1] ** b
            coef, *_ = np.linalg.lstsq(Phi, target.ravel(), rcond=None)
            assert np.abs(Phi @ coef - target.ravel()).max() <= 1e-10


def test_perp_convention():
    # the k = 1 complement is (x - x_T)^perp / h = ((y - y_T), -(x - x_T)) / h
    basis = NedelecBasis(np.zeros(2), 1.0, 1)
    np.testing.assert_allclose(basis.values(np.array([[0.3, 0.7]]))[0, :, -1], [0.7, -0.3])


@pytest.mark.parametrize("m", [1, 2])
def test_projector_composition(m, rng):
    """pi^(m-1) composed with the Nedelec projector equals pi^(m-1), on random smooth fields."""
    deg = 2 * m + 6
    for _ in range(20):
        A = rng.normal(size=(2, 3))
        field = lambda p: np.stack(  # noqa: E731
            [np.sin(A[0, 0] * p[:, 0] + A[0, 1] * p[:, 1]) + A[0, 2],
             np.cos(A[1, 0] * p[:, 0] * p[:, 1]) + A[1, 2] * p[:, 0]], -1)
        direct = l2_project_cell(field, HEX, m - 1, degree=deg)
        coef = nedelec_project(field, HEX, m, degree=deg)
        basis = NedelecBasis(HEX.centroid, HEX.h, m)
        composed = l2_project_cell(lambda p: basis.values(p) @ coef, HEX, m - 1, degree=deg)
        np.testing.assert_allclose(composed, direct, atol=1e-11)
