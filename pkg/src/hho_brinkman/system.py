"""Global assembly and Newton solver for the discrete power-law Brinkman problem.

Unknowns are ordered as ``[free velocity | pressure | multiplier]``.  Velocity
dofs on boundary faces are eliminated: their values are fixed to the face
projections of the prescribed boundary velocity (zero for homogeneous data).
The scalar multiplier enforces the zero-mean pressure constraint, which
keeps the Jacobian square and symmetric.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .localops import OperatorTable, local_dof_indices
from .mesh import Mesh
from .polyspace import dim_nedelec, dim_poly, reference_segment_rule, nonpolynomial_degree

log = logging.getLogger(__name__)

EPS_REG = 1e-10

Field = Callable[[np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# Power-law flux


def _check_r(r: float) -> None:
    if not r > 1:
        raise ValueError("r must exceed 1")


def _power(norm: np.ndarray, expo: float) -> np.ndarray:
    """norm**expo with 0**expo := 0 (the value multiplying a vanishing argument)."""
    out = np.zeros_like(norm)
    nz = norm > 0
    out[nz] = norm[nz] ** expo
    return out


def sigma(tau, mu, r: float, vector: bool = False) -> np.ndarray:
    """mu |tau|^(r-2) tau, with the Frobenius (or Euclidean) norm and sigma(0) = 0.

    `tau` has trailing shape (2, 2), or (2,) when ``vector`` is set; `mu`
    broadcasts against the leading dimensions.
    """
    _check_r(r)
    tau = np.asarray(tau, dtype=float)
    axes = (-1,) if vector else (-2, -1)
    norm = np.sqrt((tau**2).sum(axis=axes))
    coef = np.asarray(mu) * _power(norm, r - 2.0)
    return np.expand_dims(coef, axes) * tau


def _flux_derivative_coefficients(norm: np.ndarray, mu, r: float) -> tuple[np.ndarray, np.ndarray]:
    """a, b such that dsigma(tau)[eta] = a eta + b (tau:eta) tau."""
    reg = np.where(norm < EPS_REG, np.sqrt(norm**2 + EPS_REG**2), norm)
    a = np.asarray(mu) * reg ** (r - 2.0)
    b = np.asarray(mu) * (r - 2.0) * reg ** (r - 4.0)
    return a, b


def dsigma(tau, mu, r: float) -> np.ndarray:
    """Derivative of sigma at a 2x2 tensor, as a (2, 2, 2, 2) array D with
    dsigma(tau)[eta]_ij = sum_kl D[i, j, k, l] eta_kl."""
    tau = np.asarray(tau, dtype=float)
    a, b = _flux_derivative_coefficients(np.sqrt((tau**2).sum()), mu, r)
    eye = np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2))
    return a * eye + b * np.einsum("ij,kl->ijkl", tau, tau)


# --------------------------------------------------------------------------
# Problem data and discretization


@dataclass
class BrinkmanData:
    """Coefficients and data; `mu` and `nu` are scalars or per-cell arrays."""

    mu: float | np.ndarray
    nu: float | np.ndarray
    r: float
    f: Field
    g: Field
    boundary_velocity: Field | None = None

    def __post_init__(self):
        _check_r(self.r)
        mu, nu = np.asarray(self.mu, dtype=float), np.asarray(self.nu, dtype=float)
        if np.any(mu < 0) or np.any(nu < 0):
            raise ValueError("mu and nu must be non-negative")
        if np.any((mu == 0) & (nu == 0)):
            raise ValueError("mu and nu cannot both vanish")

    def cellwise(self, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
        return (np.broadcast_to(np.asarray(self.mu, dtype=float), (n_cells,)).copy(),
                np.broadcast_to(np.asarray(self.nu, dtype=float), (n_cells,)).copy())


@dataclass
class _Group:
    ops: object
    cells: np.ndarray
    dofs: np.ndarray  # (nc, nloc) global velocity indices
    pdofs: np.ndarray  # (nc, dim P^k)
    centroids: np.ndarray  # (nc, 2)
    GG: np.ndarray  # (nq, nloc, nloc) G_l : G_m at quadrature points
    DD: np.ndarray  # (nf, nqf, nloc, nloc)


class Discretization:
    """Dof numbering and cell-group bookkeeping for a mesh and degree k."""

    def __init__(self, mesh: Mesh, k: int):
        self.mesh, self.k = mesh, k
        self.table = OperatorTable(mesh, k)
        self.n_elem = dim_nedelec(k)
        self.n_face_dofs = 2 * (k + 1)
        self.n_velocity_all = mesh.n_cells * self.n_elem + mesh.n_faces * self.n_face_dofs
        self.n_pk = dim_poly(k)
        self.n_pressure = mesh.n_cells * self.n_pk

        fixed = np.zeros(self.n_velocity_all, dtype=bool)
        off = mesh.n_cells * self.n_elem
        for f in np.flatnonzero(mesh.boundary_faces):
            fixed[off + f * self.n_face_dofs : off + (f + 1) * self.n_face_dofs] = True
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed)
        self.n_velocity = len(self.free)
        self.n_unknowns = self.n_velocity + self.n_pressure + 1

        self.groups: list[_Group] = []
        for ops, cells in self.table.groups:
            dofs = np.array([local_dof_indices(mesh, c, k) for c in cells])
            pdofs = cells[:, None] * self.n_pk + np.arange(self.n_pk)
            cents = np.array([mesh.geometry[c].centroid for c in cells])
            GG = np.einsum("qijl,qijm->qlm", ops.G_q, ops.G_q)
            DD = np.einsum("fqal,fqam->fqlm", ops.delta_q, ops.delta_q)
            self.groups.append(_Group(ops, cells, dofs, pdofs, cents, GG, DD))

    # -- vector helpers --------------------------------------------------
    def split(self, x: np.ndarray):
        nv, npr = self.n_velocity, self.n_pressure
        return x[:nv], x[nv : nv + npr], x[nv + npr]

    def full_velocity(self, u_free: np.ndarray, lift: np.ndarray) -> np.ndarray:
        U = lift.copy()
        U[self.free] = u_free
        return U

    def pack(self, U: np.ndarray, p: np.ndarray, lam: float = 0.0) -> np.ndarray:
        return np.concatenate([U[self.free], p, [lam]])

    def boundary_lift(self, velocity: Field | None) -> np.ndarray:
        """Face L2 projections of the boundary velocity on boundary faces."""
        lift = np.zeros(self.n_velocity_all)
        if velocity is None:
            return lift
        mesh, k = self.mesh, self.k
        bf = np.flatnonzero(mesh.boundary_faces)
        coef = project_faces(velocity, mesh, bf, k)  # (nb, k+1, 2)
        off = mesh.n_cells * self.n_elem
        for j, f in enumerate(bf):
            lift[off + f * self.n_face_dofs : off + (f + 1) * self.n_face_dofs] = coef[j].T.ravel()
        return lift

    def cell_dofs(self, cell: int) -> np.ndarray:
        return local_dof_indices(self.mesh, cell, self.k)


def project_faces(u: Field, mesh: Mesh, faces, k: int, degree: int | None = None) -> np.ndarray:
    """L2 projections on P^k(F)^2 of a vector field for several faces at once, shape (nf, k+1, 2)."""
    faces = np.asarray(faces, dtype=int)
    s, w = reference_segment_rule(nonpolynomial_degree(k) if degree is None else degree)
    a = mesh.vertices[mesh.faces[faces, 0]]
    b = mesh.vertices[mesh.faces[faces, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(u(pts.reshape(-1, 2))).reshape(len(faces), len(s), 2)
    V = (s - 0.5)[:, None] ** np.arange(k + 1)
    gram = V.T @ (w[:, None] * V)
    return np.einsum("mq,fqa->fma", np.linalg.solve(gram, (w[:, None] * V).T), vals)


# --------------------------------------------------------------------------
# Assembly


class BrinkmanSystem:
    """Residual and Jacobian of the discrete problem for fixed data."""

    def __init__(self, disc: Discretization, data: BrinkmanData):
        self.disc, self.data = disc, data
        mesh = disc.mesh
        self.mu, self.nu = data.cellwise(mesh.n_cells)
        self.r = data.r
        self.lift = disc.boundary_lift(data.boundary_velocity)
        self._assemble_linear()

    def _assemble_linear(self) -> None:
        d = self.disc
        rows, cols, vals = [], [], []
        brows, bcols, bvals = [], [], []
        F = np.zeros(d.n_velocity_all)
        Gv = np.zeros(d.n_pressure)
        m = np.zeros(d.n_pressure)
        for g in d.groups:
            ops = g.ops
            nu = self.nu[g.cells]
            loc = nu[:, None, None] * ops.darcy
            rows.append(np.repeat(g.dofs, ops.nloc, axis=1).ravel())
            cols.append(np.tile(g.dofs, (1, ops.nloc)).ravel())
            vals.append(loc.ravel())
            B = ops.divergence_pressure
            brows.append(np.repeat(g.pdofs, ops.nloc, axis=1).ravel())
            bcols.append(np.tile(g.dofs, (1, d.n_pk)).ravel())
            bvals.append(np.broadcast_to(B, (len(g.cells),) + B.shape).ravel())
            pts = g.centroids[:, None, :] + ops.cell_points[None]
            fv = np.asarray(self.data.f(pts.reshape(-1, 2))).reshape(len(g.cells), -1, 2)
            np.add.at(F, g.dofs, np.einsum("q,cqa,qal->cl", ops.cell_weights, fv, ops.Pd_q))
            gv = np.asarray(self.data.g(pts.reshape(-1, 2))).reshape(len(g.cells), -1)
            Gv[g.pdofs] += np.einsum("q,cq,qm->cm", ops.cell_weights, gv, ops.poly_q)
            m[g.pdofs] += ops.mass_k[:, 0]
        n = d.n_velocity_all
        self.darcy = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(n, n)).tocsr()
        self.B = sp.coo_matrix((np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
                               shape=(d.n_pressure, n)).tocsr()
        self.source = F
        self.mass_source = Gv
        self.pressure_mean = m
        self.B_free = self.B[:, d.free]
        self.darcy_free = self.darcy[d.free][:, d.free]

    # -- Stokes term -------------------------------------------------------
    def _stokes(self, U: np.ndarray, jacobian: bool):
        d, r = self.disc, self.r
        res = np.zeros(d.n_velocity_all)
        jr, jc, jv = [], [], []
        for g in d.groups:
            ops = g.ops
            mu = self.mu[g.cells]
            Ul = U[g.dofs]
            tau = np.einsum("qijl,cl->cqij", ops.G_q, Ul)
            S = sigma(tau, mu[:, None], r)
            loc = np.einsum("q,cqij,qijl->cl", ops.cell_weights, S, ops.G_q)
            dl = np.einsum("fqal,cl->cfqa", ops.delta_q, Ul)
            Sd = sigma(dl, mu[:, None, None], r, vector=True)
            scale = ops.h ** (1.0 - r)
            loc += scale * np.einsum("fq,cfqa,fqal->cl", ops.face_weights, Sd, ops.delta_q)
            np.add.at(res, g.dofs, loc)
            if jacobian:
                a, b = _flux_derivative_coefficients(np.sqrt((tau**2).sum((-2, -1))), mu[:, None], r)
                TG = np.einsum("cqij,qijl->cql", tau, ops.G_q)
                J = np.einsum("q,cq,qlm->clm", ops.cell_weights, a, g.GG)
                J += np.einsum("q,cq,cql,cqm->clm", ops.cell_weights, b, TG, TG)
                a, b = _flux_derivative_coefficients(np.sqrt((dl**2).sum(-1)), mu[:, None, None], r)
                TD = np.einsum("cfqa,fqal->cfql", dl, ops.delta_q)
                J += scale * np.einsum("fq,cfq,fqlm->clm", ops.face_weights, a, g.DD)
                J += scale * np.einsum("fq,cfq,cfql,cfqm->clm", ops.face_weights, b, TD, TD)
                jr.append(np.repeat(g.dofs, ops.nloc, axis=1).ravel())
                jc.append(np.tile(g.dofs, (1, ops.nloc)).ravel())
                jv.append(J.ravel())
        if not jacobian:
            return res, None
        n = d.n_velocity_all
        J = sp.coo_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))), shape=(n, n)).tocsr()
        return res, J

    # -- public API --------------------------------------------------------
    def residual(self, x: np.ndarray) -> np.ndarray:
        d = self.disc
        u, p, lam = d.split(x)
        U = d.full_velocity(u, self.lift)
        Rs, _ = self._stokes(U, jacobian=False)
        Ru = Rs + self.darcy @ U + self.B.T @ p - self.source
        Rp = self.B @ U + self.mass_source + lam * self.pressure_mean
        Rl = self.pressure_mean @ p
        return np.concatenate([Ru[d.free], Rp, [Rl]])

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        d = self.disc
        u, _, _ = d.split(x)
        U = d.full_velocity(u, self.lift)
        _, Js = self._stokes(U, jacobian=True)
        K = Js[d.free][:, d.free] + self.darcy_free
        m = sp.csr_matrix(self.pressure_mean[:, None])
        return sp.bmat(
            [[K, self.B_free.T, None], [self.B_free, None, m], [None, m.T, None]], format="csr"
        )

    def initial_state(self, pressure_shift: float = 0.0) -> np.ndarray:
        x = np.zeros(self.disc.n_unknowns)
        if pressure_shift:
            x[self.disc.n_velocity : self.disc.n_velocity + self.disc.n_pressure : self.disc.n_pk] = pressure_shift
        return x

    def velocity(self, x: np.ndarray) -> np.ndarray:
        return self.disc.full_velocity(self.disc.split(x)[0], self.lift)

    def pressure(self, x: np.ndarray) -> np.ndarray:
        return self.disc.split(x)[1]


# --------------------------------------------------------------------------
# Newton


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 100
    max_halvings: int = 30
    continuation: bool = False
    continuation_step: float = 0.5


@dataclass
class SolveReport:
    iterations: int = 0
    residual_norms: list[float] = field(default_factory=list)
    halvings: list[int] = field(default_factory=list)
    linear_solves: list[dict] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    converged: bool = False
    message: str = ""
    # the stopping tolerance is applied to this norm of the full residual
    residual_norm_type: str = "euclidean"

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else float("nan")


class NewtonError(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def _linear_solve(J: sp.csr_matrix, rhs: np.ndarray, report: SolveReport) -> np.ndarray:
    t0 = time.perf_counter()
    try:
        lu = spla.splu(J.tocsc())
    except RuntimeError as exc:
        raise NewtonError(f"singular linear system: {exc}", report) from exc
    dx = lu.solve(rhs)
    report.linear_solves.append(
        {"size": J.shape[0], "nnz": J.nnz, "fill_nnz": lu.L.nnz + lu.U.nnz, "seconds": time.perf_counter() - t0}
    )
    if not np.all(np.isfinite(dx)):
        raise NewtonError("linear solve produced non-finite values", report)
    return dx


def _newton(system: BrinkmanSystem, x: np.ndarray, opts: NewtonOptions, report: SolveReport) -> np.ndarray:
    R = system.residual(x)
    norm = float(np.linalg.norm(R))
    report.residual_norms.append(norm)
    it = 0
    while norm > opts.tol:
        if it >= opts.max_iter:
            report.message = f"no convergence after {opts.max_iter} iterations (residual {norm:.3e})"
            raise NewtonError(report.message, report)
        dx = _linear_solve(system.jacobian(x), -R, report)
        t, halvings = 1.0, 0
        while True:
            xn = x + t * dx
            Rn = system.residual(xn)
            nn = float(np.linalg.norm(Rn))
            if np.isfinite(nn) and nn < norm:
                break
            if halvings >= opts.max_halvings:
                report.halvings.append(halvings)
                report.message = f"line search failed at iteration {it + 1} (residual {norm:.3e})"
                raise NewtonError(report.message, report)
            t *= 0.5
            halvings += 1
        x, R, norm = xn, Rn, nn
        it += 1
        report.iterations += 1
        report.halvings.append(halvings)
        report.residual_norms.append(norm)
        log.debug("newton it %d residual %.3e (halvings %d)", it, norm, halvings)
    return x


def continuation_path(r: float, step: float) -> list[float]:
    if r == 2.0:
        return [2.0]
    n = int(np.ceil(abs(r - 2.0) / step - 1e-12))
    return [2.0 + (r - 2.0) * i / n for i in range(n + 1)]


def newton_solve(
    disc: Discretization,
    data: BrinkmanData,
    initial: np.ndarray | None = None,
    opts: NewtonOptions | None = None,
) -> tuple[np.ndarray, SolveReport, BrinkmanSystem]:
    """Solve the discrete problem; returns (state, report, system).

    Raises NewtonError (carrying the report) when the iteration fails.
    """
    opts = opts or NewtonOptions()
    mu = np.asarray(data.mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("runs require mu > 0 (the pure Darcy limit is not supported)")
    report = SolveReport()
    path = continuation_path(data.r, opts.continuation_step) if opts.continuation else [data.r]
    x = initial
    system = None
    for r in path:
        stage = BrinkmanData(data.mu, data.nu, r, data.f, data.g, data.boundary_velocity)
        system = BrinkmanSystem(disc, stage)
        if x is None:
            x = system.initial_state()
        before = report.iterations
        x = _newton(system, x, opts, report)
        report.stages.append({"r": r, "iterations": report.iterations - before})
    report.converged = True
    report.message = "converged"
    return x, report, system
