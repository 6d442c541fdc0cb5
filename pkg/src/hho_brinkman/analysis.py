"""Discrete norms, regime classification, error quantities and rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh
from .polyspace import cell_quadrature
from .system import Discretization, project_faces


def interpolate_global(u, disc: Discretization) -> np.ndarray:
    """Global interpolate of a vector field (all velocity dofs, boundary faces included)."""
    mesh, k = disc.mesh, disc.k
    U = np.zeros(disc.n_velocity_all)
    if disc.n_elem:
        for g in disc.groups:
            ops = g.ops
            pts = g.centroids[:, None, :] + ops.cell_points[None]
            vals = np.asarray(u(pts.reshape(-1, 2))).reshape(len(g.cells), -1, 2)
            coef = np.einsum("nqa,cqa->cn", ops.nedelec_interp, vals)
            U[g.cells[:, None] * disc.n_elem + np.arange(disc.n_elem)] = coef
    coef = project_faces(u, mesh, np.arange(mesh.n_faces), k)  # (nf, k+1, 2)
    off = mesh.n_cells * disc.n_elem
    U[off:] = coef.transpose(0, 2, 1).reshape(-1)
    return U


# --------------------------------------------------------------------------
# Norms


def norm_1q_T(ops, v: np.ndarray, q: float) -> float:
    """Local W^{1,q}-like seminorm of a local dof vector."""
    grad = np.einsum("nijl,l->nij", ops.grad_elem_q, v)
    vol = ops.cell_weights @ np.sqrt((grad**2).sum((1, 2))) ** q
    jump = np.einsum("fnal,l->fna", ops.jump_q, v)
    bnd = (ops.face_weights * np.sqrt((jump**2).sum(-1)) ** q).sum()
    return float((vol + ops.h ** (1.0 - q) * bnd) ** (1.0 / q))


def norm_02_T(ops, v: np.ndarray) -> float:
    """Local discrete L2 norm: element part plus h_T-weighted face jumps."""
    vt = np.einsum("nal,l->na", ops.elem_q, v)
    jump = np.einsum("fnal,l->fna", ops.jump_q, v)
    return float(np.sqrt(ops.cell_weights @ (vt**2).sum(-1) + ops.h * (ops.face_weights * (jump**2).sum(-1)).sum()))


def norm_d_T(ops, v: np.ndarray) -> float:
    return float(np.sqrt(max(v @ ops.darcy @ v, 0.0)))


def _cell_values(disc: Discretization, U: np.ndarray, mu, q: float) -> np.ndarray:
    """Per-cell mu_T * ||v||_{1,q,T}^q."""
    out = np.zeros(disc.mesh.n_cells)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (disc.mesh.n_cells,))
    for g in disc.groups:
        ops = g.ops
        Ul = U[g.dofs]
        grad = np.einsum("nijl,cl->cnij", ops.grad_elem_q, Ul)
        vol = np.sqrt((grad**2).sum((-2, -1))) ** q @ ops.cell_weights
        jump = np.einsum("fnal,cl->cfna", ops.jump_q, Ul)
        bnd = np.einsum("fn,cfn->c", ops.face_weights, np.sqrt((jump**2).sum(-1)) ** q)
        out[g.cells] = mu[g.cells] * (vol + ops.h ** (1.0 - q) * bnd)
    return out


def norm_mu_r(disc: Discretization, U: np.ndarray, mu, r: float) -> float:
    """mu-weighted discrete W^{1,r} seminorm of a global velocity vector."""
    return float(_cell_values(disc, U, mu, r).sum() ** (1.0 / r))


def norm_nu(disc: Discretization, U: np.ndarray, nu) -> float:
    """Darcy norm: sqrt(sum_T nu_T a_{d,T}(v, v))."""
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (disc.mesh.n_cells,))
    total = 0.0
    for g in disc.groups:
        Ul = U[g.dofs]
        total += float(nu[g.cells] @ np.einsum("cl,lm,cm->c", Ul, g.ops.darcy, Ul))
    return float(np.sqrt(max(total, 0.0)))


# --------------------------------------------------------------------------
# Error quantity


def q_r(r: float) -> float:
    return 2.0 if 1 < r < 2 else float(r)


def alpha_mu(mu_min: float, r: float) -> float:
    if 1 < r < 2:
        return float(mu_min ** ((2.0 - r) / (r * (r - 1.0))))
    return 1.0


def monitored_quantity(err_mu_r: float, err_nu: float, mu_min: float, r: float) -> float:
    return alpha_mu(mu_min, r) * err_mu_r ** q_r(r) + err_nu**2


def monitored_error(disc: Discretization, u_h: np.ndarray, u_interp: np.ndarray, mu, nu, r: float) -> dict:
    """Error components of u_h - I_h u and the monitored combination."""
    e = u_h - u_interp
    emr = norm_mu_r(disc, e, mu, r)
    enu = norm_nu(disc, e, nu)
    mu_min = float(np.min(mu))
    return {"err_mu_r": emr, "err_nu": enu, "err_monitored": monitored_quantity(emr, enu, mu_min, r)}


def pressure_error_lr(disc: Discretization, p_h: np.ndarray, p_exact, r: float) -> float:
    """L^{r'} norm of p_h minus the zero-mean L2 projection of the exact pressure."""
    rp = r / (r - 1.0)
    nk = disc.n_pk
    proj = np.zeros(disc.n_pressure)
    total_area, total_int = 0.0, 0.0
    for g in disc.groups:
        ops = g.ops
        pts = g.centroids[:, None, :] + ops.cell_points[None]
        vals = np.asarray(p_exact(pts.reshape(-1, 2))).reshape(len(g.cells), -1)
        rhs = np.einsum("q,cq,qm->cm", ops.cell_weights, vals, ops.poly_q)
        proj[g.pdofs] = np.linalg.solve(ops.mass_k, rhs.T).T
        total_int += float((vals @ ops.cell_weights).sum())
        total_area += ops.area * len(g.cells)
    mean = total_int / total_area
    diff = p_h - proj
    diff[::nk] += mean  # constant monomial comes first in each cell block
    acc = 0.0
    for g in disc.groups:
        ops = g.ops
        vals = diff[g.pdofs] @ ops.poly_q.T  # (nc, nq)
        acc += float((np.abs(vals) ** rp @ ops.cell_weights).sum())
    return acc ** (1.0 / rp)


# --------------------------------------------------------------------------
# Regimes


@dataclass
class RegimeClassification:
    friction: np.ndarray  # C_{f,T}
    kappa: np.ndarray
    darcy: np.ndarray  # bool mask, C_{f,T} >= 1

    @property
    def stokes(self) -> np.ndarray:
        return ~self.darcy

    @property
    def darcy_fraction(self) -> float:
        return float(self.darcy.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.friction))


UNBOUNDED = 1e12


def classify_regimes(mesh: Mesh, r: float, mu, nu, grad_u, degree: int = 8) -> RegimeClassification:
    """Friction coefficients C_f = nu h^2 / kappa with kappa = mu ||grad u|^(r-2)||_inf.

    The sup norm is sampled at quadrature points and vertices of each cell.
    """
    n = mesh.n_cells
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,))
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (n,))
    cf = np.zeros(n)
    kappa = np.zeros(n)
    for c, geom in enumerate(mesh.geometry):
        pts = np.vstack([cell_quadrature(geom, degree).points, geom.vertices])
        gnorm = np.sqrt((np.asarray(grad_u(pts)) ** 2).sum((-2, -1)))
        with np.errstate(divide="ignore"):
            sup = float(np.max(gnorm ** (r - 2.0)))
        if r < 2 and mu[c] > 0 and not sup <= UNBOUNDED:
            kappa[c], cf[c] = np.inf, 0.0
            continue
        kappa[c] = mu[c] * sup
        cf[c] = np.inf if kappa[c] == 0 else nu[c] * geom.h**2 / kappa[c]
    return RegimeClassification(cf, kappa, cf >= 1.0)


# --------------------------------------------------------------------------
# Rates


def convergence_rates(levels) -> list[float]:
    """Slopes log(e_i / e_{i+1}) / log(h_i / h_{i+1}) between consecutive (h, error) pairs."""
    out = []
    for (h0, e0), (h1, e1) in zip(levels[:-1], levels[1:]):
        if e0 > 0 and e1 > 0:
            out.append(float(np.log(e0 / e1) / np.log(h0 / h1)))
        else:
            out.append(float("nan"))
    return out


@dataclass
class LevelResult:
    level: int
    h: float
    ndof_velocity: int
    ndof_pressure: int
    newton_iters: int
    err_mu_r: float
    err_nu: float
    err_monitored: float
    err_pressure_lr: float
    friction: np.ndarray
    h_cells: np.ndarray
    darcy_fraction: float
    solved: bool = True
    message: str = ""


@dataclass
class ErrorReport:
    levels: list[LevelResult] = field(default_factory=list)

    def rates(self, attr: str = "err_monitored") -> list[float]:
        pts = [(lv.h, getattr(lv, attr)) for lv in self.levels]
        return convergence_rates(pts)

    @property
    def ok(self) -> bool:
        return all(lv.solved for lv in self.levels)
