"""Element-level reconstruction operators.

Local degrees of freedom of a cell are laid out as

    [element block (dim N^k) | face 0 (2(k+1)) | face 1 | ...]

with face blocks ordered like the cell's counter-clockwise edges and each
face block holding the x-component coefficients followed by the y-component
ones.  Face polynomials are oriented by the global face (lowest vertex id
first) so that neighbouring cells agree on them.

All operators only depend on the cell shape relative to its centroid, so
cells that are translates of each other (with the same face orientations)
share one `LocalOperators` instance.  Quadrature points are stored relative
to the centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mesh import CellGeometry, Mesh
from .polyspace import (
    FaceMonomials,
    NedelecBasis,
    ScaledMonomials,
    cell_quadrature,
    curl_complement_coefficients,
    dim_nedelec,
    dim_poly,
    face_quadrature,
    gram_solve,
    nonpolynomial_degree,
    weighted_lstsq_operator,
)

SUPPORTED_DEGREES = (0, 1, 2)


class LocalSystemError(RuntimeError):
    pass


@dataclass
class LocalOperators:
    k: int
    n_elem: int
    n_faces: int
    nloc: int
    h: float
    area: float
    beta: float
    lam: float
    normals: np.ndarray  # (nf, 2)
    face_lengths: np.ndarray
    face_starts: np.ndarray  # (nf, 2) relative start point of each oriented face
    face_ends: np.ndarray
    vertices: np.ndarray  # (nv, 2) relative to centroid
    element_weights: np.ndarray | None  # k = 0: (2, nloc) map to the element value

    # coefficient maps, local dofs -> polynomial coefficients
    G: np.ndarray  # (2, 2, dim P^k, nloc)
    D: np.ndarray  # (dim P^k, nloc)
    Ps: np.ndarray  # (2, dim P^(k+1), nloc)
    Pd: np.ndarray  # (2, dim P^k, nloc)
    delta: np.ndarray  # (nf, 2(k+1), nloc)
    darcy_volume: np.ndarray  # (dim N^k, nloc)  pi^N (P_d v - v_T)
    mass_k: np.ndarray  # Gram matrix of P^k(T)
    mass_nedelec: np.ndarray  # Gram matrix of N^k(T)
    darcy: np.ndarray  # (nloc, nloc) a_{d,T}, without nu
    darcy_face_part: np.ndarray  # (nf, nloc, nloc) per-face stabilization contributions
    divergence_pressure: np.ndarray  # (dim P^k, nloc) rows of b_T

    # values on the non-polynomial quadrature (points relative to centroid)
    cell_points: np.ndarray  # (nq, 2)
    cell_weights: np.ndarray  # (nq,)
    face_points: np.ndarray  # (nf, nqf, 2)
    face_weights: np.ndarray  # (nf, nqf)
    G_q: np.ndarray  # (nq, 2, 2, nloc)
    delta_q: np.ndarray  # (nf, nqf, 2, nloc)
    Pd_q: np.ndarray  # (nq, 2, nloc)
    elem_q: np.ndarray  # (nq, 2, nloc)
    grad_elem_q: np.ndarray  # (nq, 2, 2, nloc)
    jump_q: np.ndarray  # (nf, nqf, 2, nloc)  v_F - v_T
    poly_q: np.ndarray  # (nq, dim P^k) scalar basis values
    nedelec_interp: np.ndarray  # (dim N^k, nq, 2) maps field values to N^k coefficients

    def face_dofs(self, i: int) -> slice:
        nfd = 2 * (self.k + 1)
        start = self.n_elem + i * nfd
        return slice(start, start + nfd)


def _face_block_values(fb: FaceMonomials, points, k: int, nloc: int, sl: slice) -> np.ndarray:
    """Values (n, 2, nloc) of the face unknown v_F at `points`."""
    phi = fb.values(points)
    out = np.zeros((len(phi), 2, nloc))
    out[:, 0, sl.start : sl.start + k + 1] = phi
    out[:, 1, sl.start + k + 1 : sl.stop] = phi
    return out


def shape_key(geom: CellGeometry, signs, k: int) -> tuple:
    scale = geom.h
    rel = np.round((geom.vertices - geom.centroid) / scale, 11) + 0.0
    return (k, round(scale, 13), tuple(rel.ravel().tolist()), tuple(int(s) for s in signs))


def _build(geom: CellGeometry, signs: np.ndarray, k: int, cell_id: int) -> LocalOperators:
    if k not in SUPPORTED_DEGREES:
        raise ValueError(f"polynomial degree k={k} not supported; use one of {SUPPORTED_DEGREES}")
    origin = np.zeros(2)
    h, area = geom.h, geom.area
    verts = geom.vertices - geom.centroid
    nf = len(verts)
    nN = dim_nedelec(k)
    nfd = 2 * (k + 1)
    nloc = nN + nf * nfd
    nk, nk1 = dim_poly(k), dim_poly(k + 1)
    normals = geom.normals
    starts = np.where(signs[:, None] > 0, verts, np.roll(verts, -1, axis=0))
    ends = np.where(signs[:, None] > 0, np.roll(verts, -1, axis=0), verts)
    cg = CellGeometry(h, area, origin, geom.face_lengths, geom.face_midpoints - geom.centroid,
                      normals, geom.face_distances, verts)

    Pk = ScaledMonomials(origin, h, k)
    Pk1 = ScaledMonomials(origin, h, k + 1)
    Nk = NedelecBasis(origin, h, k)
    fbases = [FaceMonomials(starts[i], ends[i], k) for i in range(nf)]
    fslices = [slice(nN + i * nfd, nN + (i + 1) * nfd) for i in range(nf)]

    # element value map for k = 0: area-weighted average of the face values
    if k == 0:
        omega = geom.face_lengths * geom.face_distances / (2.0 * area)
        W = np.zeros((2, nloc))
        for i in range(nf):
            W[0, fslices[i].start] = omega[i]
            W[1, fslices[i].start + 1] = omega[i]
    else:
        W = None

    def elem_values(points):
        if W is not None:
            return np.broadcast_to(W, (len(points), 2, nloc)).copy()
        out = np.zeros((len(points), 2, nloc))
        out[:, :, :nN] = Nk.values(points)
        return out

    def elem_gradients(points):
        out = np.zeros((len(points), 2, 2, nloc))
        if W is None:
            out[:, :, :, :nN] = Nk.gradients(points)
        return out

    def solve(gram, rhs, what):
        try:
            return gram_solve(gram, rhs, what)
        except np.linalg.LinAlgError as exc:
            raise LocalSystemError(f"cell {cell_id}: {exc}") from exc

    pdeg = 2 * k + 2
    cq = cell_quadrature(cg, pdeg)
    fq = [face_quadrature(starts[i], ends[i], pdeg) for i in range(nf)]
    w = cq.weights
    phi_k, phi_k1 = Pk.values(cq.points), Pk1.values(cq.points)
    dphi_k, dphi_k1 = Pk.gradients(cq.points), Pk1.gradients(cq.points)
    vT = elem_values(cq.points)
    vF = [_face_block_values(fbases[i], fq[i].points, k, nloc, fslices[i]) for i in range(nf)]

    mass_k = phi_k.T @ (w[:, None] * phi_k)
    # mass_k = R^T R with R from a QR of the weighted basis values, which
    # avoids forming and factoring the Gram matrix
    Rk = np.linalg.qr(np.sqrt(w)[:, None] * phi_k, mode="r")
    if np.abs(np.diag(Rk)).min() <= 1e-14 * np.abs(np.diag(Rk)).max():
        raise LocalSystemError(f"cell {cell_id}: singular Gram matrix for P^k")

    def mass_solve(rhs):
        return scipy.linalg.solve_triangular(Rk, scipy.linalg.solve_triangular(Rk, rhs, trans="T"))

    # gradient: int G:tau = -int v_T.div(tau) + int_dT v_F.tau n
    rhsG = -np.einsum("q,qmj,qil->ijml", w, dphi_k, vT)
    for i in range(nf):
        pf = Pk.values(fq[i].points)
        rhsG += np.einsum("q,qm,j,qil->ijml", fq[i].weights, pf, normals[i], vF[i])
    G = mass_solve(rhsG.transpose(2, 0, 1, 3).reshape(nk, -1)).reshape(nk, 2, 2, nloc)
    G = G.transpose(1, 2, 0, 3)
    D = G[0, 0] + G[1, 1]

    # Stokes potential with the mean fixed through beta
    beta = 1.0 / (h**2 * area)
    mean1 = w @ phi_k1
    K = np.einsum("q,qmj,qnj->mn", w, dphi_k1, dphi_k1) + beta * np.outer(mean1, mean1)
    cross = np.einsum("q,qm,qnj->jmn", w, phi_k, dphi_k1)  # int phi_m d_j psi_n
    int_vT = np.einsum("q,qal->al", w, vT)
    rhsP = np.einsum("jmn,ajml->anl", cross, G) + beta * mean1[None, :, None] * int_vT[:, None, :]
    Ps = solve(K, rhsP.transpose(1, 0, 2).reshape(nk1, -1), "Stokes potential")
    Ps = Ps.reshape(nk1, 2, nloc).transpose(1, 0, 2)

    # Darcy velocity: tested against grad P^(k+1) (non-constant) + (x - x_T)^perp P^(k-1)
    Ck = curl_complement_coefficients(k)
    curl_q = np.einsum("qm,cmn->qcn", phi_k, Ck)  # (nq, 2, nc)
    grad_test = dphi_k1[:, 1:, :]  # (nq, ntest, 2)
    lhs_grad = np.einsum("q,qm,qna->nam", w, phi_k, grad_test).reshape(nk1 - 1, 2 * nk)
    lhs_curl = np.einsum("q,qm,qan->nam", w, phi_k, curl_q).reshape(-1, 2 * nk)
    lhs = np.vstack([lhs_grad, lhs_curl])
    Dq = phi_k @ D
    rhs_grad = -np.einsum("q,qn,ql->nl", w, phi_k1[:, 1:], Dq)
    for i in range(nf):
        pf = Pk1.values(fq[i].points)[:, 1:]
        vn = np.einsum("qal,a->ql", vF[i], normals[i])
        rhs_grad += np.einsum("q,qn,ql->nl", fq[i].weights, pf, vn)
    rhs_curl = np.einsum("q,qan,qal->nl", w, curl_q, vT)
    try:
        Pd = np.linalg.solve(lhs, np.vstack([rhs_grad, rhs_curl]))
    except np.linalg.LinAlgError as exc:
        raise LocalSystemError(f"cell {cell_id}: singular Darcy velocity system") from exc
    Pd = Pd.reshape(2, nk, nloc)

    # Nedelec projections of P_s v - v_T and P_d v - v_T
    if nN:
        Nq = Nk.values(cq.points)
        mass_N = np.einsum("q,qan,qam->nm", w, Nq, Nq)
        Ps_vals = np.einsum("qm,aml->qal", phi_k1, Ps)
        Pd_vals = np.einsum("qm,aml->qal", phi_k, Pd)
        piN_Ps = solve(mass_N, np.einsum("q,qan,qal->nl", w, Nq, Ps_vals - vT), "N^k")
        darcy_volume = solve(mass_N, np.einsum("q,qan,qal->nl", w, Nq, Pd_vals - vT), "N^k")
    else:
        mass_N = np.zeros((0, 0))
        piN_Ps = np.zeros((0, nloc))
        darcy_volume = np.zeros((0, nloc))

    # boundary difference operator, one P^k(F)^2 block per face
    delta = np.zeros((nf, nfd, nloc))
    face_darcy = np.zeros((nf, nloc, nloc))
    for i in range(nf):
        pts, fw = fq[i].points, fq[i].weights
        psi = fbases[i].values(pts)
        mass_F = psi.T @ (fw[:, None] * psi)
        trace = np.einsum("qm,aml->qal", Pk1.values(pts), Ps) - vF[i]
        if nN:
            trace -= np.einsum("qan,nl->qal", Nk.values(pts), piN_Ps)
        for a in range(2):
            delta[i, a * (k + 1) : (a + 1) * (k + 1)] = solve(mass_F, psi.T @ (fw[:, None] * trace[:, a]), "P^k(F)")
        jump = np.einsum("qm,aml->qal", Pk.values(pts), Pd) - vF[i]
        face_darcy[i] = h * np.einsum("q,qal,qam->lm", fw, jump, jump)

    Pd_vals = np.einsum("qm,aml->qal", phi_k, Pd)
    lam = h**2 * nf / area
    darcy = np.einsum("q,qal,qam->lm", w, Pd_vals, Pd_vals)
    if nN:
        darcy += lam * darcy_volume.T @ mass_N @ darcy_volume

    # values on the quadrature used for non-polynomial integrands
    qdeg = nonpolynomial_degree(k)
    nq_cell = cell_quadrature(cg, qdeg)
    nq_faces = [face_quadrature(starts[i], ends[i], qdeg) for i in range(nf)]
    pk_q = Pk.values(nq_cell.points)
    G_q = np.einsum("qm,ijml->qijl", pk_q, G)
    delta_q = np.stack([
        np.einsum("qm,aml->qal", fbases[i].values(nq_faces[i].points), delta[i].reshape(2, k + 1, nloc))
        for i in range(nf)
    ])
    elem_q = elem_values(nq_cell.points)
    jump_q = np.stack([
        _face_block_values(fbases[i], nq_faces[i].points, k, nloc, fslices[i]) - elem_values(nq_faces[i].points)
        for i in range(nf)
    ])
    if nN:
        Nq_nl = Nk.values(nq_cell.points)
        try:
            interp = weighted_lstsq_operator(Nq_nl.reshape(-1, nN), np.repeat(nq_cell.weights, 2), "N^k")
        except np.linalg.LinAlgError as exc:
            raise LocalSystemError(f"cell {cell_id}: {exc}") from exc
        interp = interp.reshape(nN, len(nq_cell.weights), 2)
    else:
        interp = np.zeros((0, len(nq_cell.weights), 2))

    return LocalOperators(
        k=k, n_elem=nN, n_faces=nf, nloc=nloc, h=h, area=area, beta=beta, lam=lam,
        normals=normals, face_lengths=geom.face_lengths, face_starts=starts, face_ends=ends,
        vertices=verts, element_weights=W,
        G=G, D=D, Ps=Ps, Pd=Pd, delta=delta, darcy_volume=darcy_volume,
        mass_k=mass_k, mass_nedelec=mass_N, darcy=darcy, darcy_face_part=face_darcy,
        divergence_pressure=-mass_k @ D,
        cell_points=nq_cell.points, cell_weights=nq_cell.weights,
        face_points=np.stack([q.points for q in nq_faces]),
        face_weights=np.stack([q.weights for q in nq_faces]),
        G_q=G_q, delta_q=delta_q,
        Pd_q=np.einsum("qm,aml->qal", pk_q, Pd),
        elem_q=elem_q, grad_elem_q=elem_gradients(nq_cell.points), jump_q=jump_q,
        poly_q=pk_q, nedelec_interp=interp,
    )


def build_local_operators(mesh: Mesh, cell: int, k: int) -> LocalOperators:
    """Operators of one cell, with the Darcy stabilization restricted to interior faces."""
    geom = mesh.cell_geometry(cell)
    ops = _build(geom, mesh.cell_face_signs[cell], k, cell)
    bnd = mesh.boundary_faces[mesh.cell_faces[cell]]
    return _with_boundary(ops, bnd)


def _with_boundary(ops: LocalOperators, boundary: np.ndarray) -> LocalOperators:
    from dataclasses import replace

    darcy = ops.darcy + ops.darcy_face_part[~boundary].sum(0)
    return replace(ops, darcy=darcy)


class OperatorTable:
    """Local operators for every cell of a mesh, shared between congruent cells."""

    def __init__(self, mesh: Mesh, k: int):
        self.mesh, self.k = mesh, k
        cache: dict[tuple, LocalOperators] = {}
        self.keys: list[tuple] = []
        self.ops: list[LocalOperators] = []
        for c in range(mesh.n_cells):
            geom = mesh.geometry[c]
            signs = mesh.cell_face_signs[c]
            bnd = mesh.boundary_faces[mesh.cell_faces[c]]
            key = shape_key(geom, signs, k) + (tuple(bnd.tolist()),)
            ops = cache.get(key)
            if ops is None:
                base_key = key[:-1]
                base = cache.get(base_key)
                if base is None:
                    base = cache[base_key] = _build(geom, signs, k, c)
                ops = cache[key] = _with_boundary(base, bnd)
            self.keys.append(key)
            self.ops.append(ops)
        order: dict[tuple, list[int]] = {}
        for c, key in enumerate(self.keys):
            order.setdefault(key, []).append(c)
        # groups of cells sharing one operator object, in first-appearance order
        self.groups = [(cache[key], np.array(cells, dtype=int)) for key, cells in order.items()]

    def __getitem__(self, c: int) -> LocalOperators:
        return self.ops[c]

    def __len__(self) -> int:
        return len(self.ops)


def local_dof_indices(mesh: Mesh, cell: int, k: int) -> np.ndarray:
    """Global velocity indices: element blocks first, then face blocks."""
    nN, nfd = dim_nedelec(k), 2 * (k + 1)
    elem = cell * nN + np.arange(nN)
    off = mesh.n_cells * nN
    faces = [off + f * nfd + np.arange(nfd) for f in mesh.cell_faces[cell]]
    return np.concatenate([elem] + faces).astype(int)


def interpolate_local(u, mesh: Mesh, cell: int, k: int, ops: LocalOperators | None = None,
                      degree: int | None = None) -> np.ndarray:
    """Local interpolate: Nedelec projection on the cell, L2 projection on faces.

    `degree` overrides the quadrature degree used for the projections.
    """
    from .polyspace import l2_project_face, nedelec_project

    geom = mesh.cell_geometry(cell)
    ops = ops or build_local_operators(mesh, cell, k)
    out = np.zeros(ops.nloc)
    out[: ops.n_elem] = nedelec_project(u, geom, k, degree)
    for i, f in enumerate(mesh.cell_faces[cell]):
        a, b = mesh.face_points(f)
        coef = l2_project_face(u, a, b, k, degree)  # (k+1, 2)
        out[ops.face_dofs(i)] = coef.T.ravel()
    return out


def element_value_coefficients(ops: LocalOperators, v: np.ndarray) -> np.ndarray:
    """Nedelec coefficients of v_T (k >= 1) or the constant element value (k = 0)."""
    if ops.element_weights is not None:
        return ops.element_weights @ v
    return v[: ops.n_elem]


def darcy_orthogonality_check(ops: LocalOperators, v: np.ndarray) -> float:
    """max over a basis Psi of P^(k-1)(T)^2 of |int_T (P_d v - v_T).Psi|."""
    if ops.k == 0:
        return 0.0
    diff = np.einsum("qal,l->qa", ops.Pd_q - ops.elem_q, v)
    psi = ops.poly_q[:, : dim_poly(ops.k - 1)]
    return float(np.abs(np.einsum("q,qa,qm->am", ops.cell_weights, diff, psi)).max())
