"""Quadrature, scaled polynomial bases and L2-orthogonal projectors.

Cell polynomials use monomials in the scaled variables
``xi = (x - x_T) / h_T``, ``eta = (y - y_T) / h_T`` ordered by total degree,
so that the basis of P^m is a prefix of the basis of P^(m+1).  Face
polynomials use powers of the scaled arclength ``s = (x - x_F).t_F / h_F``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.special import roots_jacobi, roots_legendre

from .mesh import CellGeometry

MAX_QUAD_DEGREE = 40


class ProjectionError(np.linalg.LinAlgError):
    pass


def nonpolynomial_degree(k: int) -> int:
    """Quadrature degree used for integrands that are not polynomials."""
    return 2 * (k + 1) + 4


def dim_poly(m: int) -> int:
    return 0 if m < 0 else (m + 1) * (m + 2) // 2


def dim_nedelec(k: int) -> int:
    return dim_poly(k) - 1 + dim_poly(k - 1)


@lru_cache(maxsize=None)
def monomial_exponents(m: int) -> np.ndarray:
    """Exponent pairs (a, b) with a + b <= m, ordered by total degree."""
    exps = [(d - b, b) for d in range(m + 1) for b in range(d + 1)]
    return np.array(exps, dtype=int).reshape(-1, 2)


# --------------------------------------------------------------------------
# Quadrature


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)
    degree: int


def _check_degree(degree: int) -> None:
    if degree < 0:
        raise ValueError("quadrature degree must be non-negative")
    if degree > MAX_QUAD_DEGREE:
        raise ValueError(f"quadrature degree {degree} not supported (max {MAX_QUAD_DEGREE})")


@lru_cache(maxsize=None)
def reference_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the triangle (0,0),(1,0),(0,1), exact to `degree`."""
    _check_degree(degree)
    n = degree // 2 + 1
    t, wt = roots_legendre(n)
    xi, wxi = 0.5 * (t + 1.0), 0.5 * wt
    s, ws = roots_jacobi(n, 1.0, 0.0)
    eta, weta = 0.5 * (s + 1.0), 0.25 * ws
    X = np.outer(1.0 - eta, xi)  # (neta, nxi)
    Y = np.repeat(eta[:, None], n, axis=1)
    W = np.outer(weta, wxi)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


@lru_cache(maxsize=None)
def reference_segment_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact to `degree`."""
    _check_degree(degree)
    t, w = roots_legendre(degree // 2 + 1)
    return 0.5 * (t + 1.0), 0.5 * w


def triangle_quadrature(a, b, c, degree: int) -> Quadrature:
    ref_pts, ref_w = reference_triangle_rule(degree)
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    J = np.column_stack([b - a, c - a])
    det = abs(np.linalg.det(J))
    return Quadrature(a + ref_pts @ J.T, ref_w * det, degree)


def cell_quadrature(cell: CellGeometry, degree: int) -> Quadrature:
    """Quadrature on a polygon, fan-triangulated from its centroid."""
    v = cell.vertices
    if len(v) == 3:
        return triangle_quadrature(v[0], v[1], v[2], degree)
    ref_pts, ref_w = reference_triangle_rule(degree)
    pts, wts = [], []
    xt = cell.centroid
    for i in range(len(v)):
        J = np.column_stack([v[i] - xt, v[(i + 1) % len(v)] - xt])
        pts.append(xt + ref_pts @ J.T)
        wts.append(ref_w * abs(np.linalg.det(J)))
    return Quadrature(np.vstack(pts), np.concatenate(wts), degree)


def face_quadrature(a, b, degree: int) -> Quadrature:
    s, w = reference_segment_rule(degree)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    return Quadrature(a + s[:, None] * (b - a), w * length, degree)


# --------------------------------------------------------------------------
# Bases


class ScaledMonomials:
    """Scaled monomial basis of P^m on a cell."""

    def __init__(self, center, h: float, degree: int):
        self.center = np.asarray(center, dtype=float)
        self.h = float(h)
        self.degree = degree
        self.exponents = monomial_exponents(degree)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def _scaled(self, points):
        z = (np.asarray(points, dtype=float).reshape(-1, 2) - self.center) / self.h
        return z[:, 0], z[:, 1]

    def values(self, points) -> np.ndarray:
        xi, eta = self._scaled(points)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        return xi[:, None] ** a * eta[:, None] ** b

    def gradients(self, points) -> np.ndarray:
        """Shape (n, dim, 2)."""
        xi, eta = self._scaled(points)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        dx = a * xi[:, None] ** np.maximum(a - 1, 0) * eta[:, None] ** b
        dy = b * xi[:, None] ** a * eta[:, None] ** np.maximum(b - 1, 0)
        return np.stack([dx, dy], axis=-1) / self.h


def _monomial_index(degree: int) -> dict[tuple[int, int], int]:
    return {tuple(e): i for i, e in enumerate(monomial_exponents(degree))}


@lru_cache(maxsize=None)
def nedelec_coefficients(k: int) -> np.ndarray:
    """Coefficients of the Nedelec basis on scaled monomials of P^k.

    Shape (2, dim P^k, dim N^k).  The first dim P^k - 1 functions are
    h * grad of the non-constant monomials; the remaining ones are
    ((x - x_T) / h)^perp times the monomials of P^(k-1), with
    (y1, y2)^perp = (y2, -y1).
    """
    idx = _monomial_index(max(k, 0))
    C = np.zeros((2, dim_poly(k), dim_nedelec(k)))
    col = 0
    for a, b in monomial_exponents(k)[1:]:
        if a > 0:
            C[0, idx[(a - 1, b)], col] = a
        if b > 0:
            C[1, idx[(a, b - 1)], col] = b
        col += 1
    for a, b in monomial_exponents(k - 1) if k >= 1 else []:
        C[0, idx[(a, b + 1)], col] = 1.0
        C[1, idx[(a + 1, b)], col] = -1.0
        col += 1
    return C


@lru_cache(maxsize=None)
def curl_complement_coefficients(k: int) -> np.ndarray:
    """Basis of (x - x_T)^perp P^(k-1) on scaled monomials of P^k, shape (2, dim P^k, dim P^(k-1))."""
    return nedelec_coefficients(k)[:, :, dim_poly(k) - 1 :]


class NedelecBasis:
    """Basis of N^k(T) = grad P^k(T) + (x - x_T)^perp P^(k-1)(T)."""

    def __init__(self, center, h: float, k: int):
        self.k = k
        self.monomials = ScaledMonomials(center, h, max(k, 0))
        self.coefficients = nedelec_coefficients(k)

    @property
    def dim(self) -> int:
        return self.coefficients.shape[2]

    def values(self, points) -> np.ndarray:
        """Shape (n, 2, dim)."""
        return np.einsum("qm,cmn->qcn", self.monomials.values(points), self.coefficients)

    def gradients(self, points) -> np.ndarray:
        """Shape (n, 2, 2, dim); entry [q, i, j, n] = d_j (phi_n)_i."""
        return np.einsum("qmj,cmn->qcjn", self.monomials.gradients(points), self.coefficients)


class FaceMonomials:
    """Scaled monomial basis of P^k on a straight face with endpoints a, b."""

    def __init__(self, a, b, degree: int):
        self.a, self.b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        self.length = float(np.linalg.norm(self.b - self.a))
        self.tangent = (self.b - self.a) / self.length
        self.center = 0.5 * (self.a + self.b)
        self.degree = degree

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, points) -> np.ndarray:
        s = (np.asarray(points, dtype=float).reshape(-1, 2) - self.center) @ self.tangent / self.length
        return s[:, None] ** np.arange(self.degree + 1)


# --------------------------------------------------------------------------
# Projectors


def gram_solve(gram: np.ndarray, rhs: np.ndarray, what: str = "basis") -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise ProjectionError(f"singular Gram matrix for {what}") from exc
    return scipy.linalg.cho_solve(factor, rhs)


def gram_condition(gram: np.ndarray) -> float:
    return float(np.linalg.cond(gram))


def weighted_lstsq_operator(values: np.ndarray, weights: np.ndarray, what: str = "basis") -> np.ndarray:
    """Matrix L (dim, n) with L @ f = discrete L2 projection coefficients of samples f.

    Uses a QR factorization of the weighted basis values instead of the normal
    equations, which would square the condition number.
    """
    sw = np.sqrt(weights)
    Q, R = np.linalg.qr(sw[:, None] * values)
    diag = np.abs(np.diag(R))
    if diag.size and (diag.min() <= 1e-14 * diag.max() or not np.all(np.isfinite(R))):
        raise ProjectionError(f"singular Gram matrix for {what}")
    return scipy.linalg.solve_triangular(R, Q.T * sw[None, :])


def _project(values: np.ndarray, fvals: np.ndarray, weights: np.ndarray, what: str) -> np.ndarray:
    """Least-squares fit in L2: values (n, dim), fvals (n, ...)."""
    fv = fvals.reshape(len(weights), -1)
    coef = weighted_lstsq_operator(values, weights, what) @ fv
    return coef.reshape((values.shape[1],) + fvals.shape[1:])


def l2_project_cell(
    f: Callable[[np.ndarray], np.ndarray], cell: CellGeometry, m: int, degree: int | None = None
) -> np.ndarray:
    """Coefficients of the L2 projection of f on P^m(T) (componentwise).

    `f` maps points (n, 2) to values of shape (n,) or (n, ...); the result has
    shape (dim P^m,) + trailing shape.
    """
    basis = ScaledMonomials(cell.centroid, cell.h, m)
    quad = cell_quadrature(cell, nonpolynomial_degree(m) if degree is None else degree)
    return _project(basis.values(quad.points), np.asarray(f(quad.points)), quad.weights, "cell P^m")


def l2_project_face(f: Callable[[np.ndarray], np.ndarray], a, b, k: int, degree: int | None = None) -> np.ndarray:
    basis = FaceMonomials(a, b, k)
    quad = face_quadrature(a, b, nonpolynomial_degree(k) if degree is None else degree)
    return _project(basis.values(quad.points), np.asarray(f(quad.points)), quad.weights, "face P^k")


def nedelec_project(v: Callable[[np.ndarray], np.ndarray], cell: CellGeometry, k: int, degree: int | None = None) -> np.ndarray:
    """Coefficients of the L2 projection of a vector field on N^k(T)."""
    basis = NedelecBasis(cell.centroid, cell.h, k)
    if basis.dim == 0:
        return np.zeros(0)
    quad = cell_quadrature(cell, nonpolynomial_degree(k) if degree is None else degree)
    phi = basis.values(quad.points)  # (n, 2, dim)
    vals = np.asarray(v(quad.points)).reshape(-1, 2)
    # stack components as separate samples sharing the point weight
    L = weighted_lstsq_operator(phi.reshape(-1, basis.dim), np.repeat(quad.weights, 2), "Nedelec space")
    return L @ vals.ravel()


def evaluate_cell(coef: np.ndarray, cell: CellGeometry, m: int, points) -> np.ndarray:
    return np.tensordot(ScaledMonomials(cell.centroid, cell.h, m).values(points), coef, axes=1)


def evaluate_nedelec(coef: np.ndarray, cell: CellGeometry, k: int, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if dim_nedelec(k) == 0:
        return np.zeros((len(pts), 2))
    return NedelecBasis(cell.centroid, cell.h, k).values(pts) @ coef
