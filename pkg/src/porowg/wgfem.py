"""Lowest-order weak Galerkin spaces and matrix assembly.

Unknowns are piecewise constants in element interiors and on facets.  Weak
gradients live in RT0 on each element.  On element ``K`` we use the basis

    phi_i(x) = (x - a_i) / (d |K|),

where ``a_i`` is the vertex opposite local facet ``i``; ``phi_i`` has unit
outward flux through facet ``i`` and zero flux through the others, and
``div phi_i = 1/|K|``.  With that basis the weak gradient of a scalar is
``c = M_K^{-1} (u_facets - u_interior)`` where ``M_K`` is the local RT0 mass
matrix, and the local stiffness is ``G^T M_K^{-1} G`` with ``G = [-1 | I]``.

Degree-of-freedom ordering: interior unknowns first, then unknowns on the
non-Dirichlet ("free") facets; vector components are interleaved per entity.
Boundary facets are Dirichlet for both displacement and pressure and are
eliminated from the assembled blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PhysicalParams:
    mu: float = 1.0
    lam: float = 1.0
    alpha: float = 1.0
    c0: float = 1.0
    kappa: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.c0 > 0:
            raise ValueError(f"c0 must be positive, got {self.c0}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def epsilon(self) -> float:
        return self.mu / (self.lam + self.mu)


# ---------------------------------------------------------------------------
# quadrature

def element_quadrature(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Degree-2 rule on every element: points ``(N, q, d)``, weights ``(N, q)``."""
    d = mesh.dim
    if d == 2:
        bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    else:
        a, b = 0.5854101966249685, 0.1381966011250105
        bary = np.full((4, 4), b)
        np.fill_diagonal(bary, a)
    x = mesh.vertices[mesh.elements]
    pts = np.einsum("qv,kvd->kqd", bary, x)
    w = np.outer(mesh.volumes, np.full(len(bary), 1.0 / len(bary)))
    return pts, w


def facet_quadrature(mesh: Mesh, facets: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Degree-2 (3D) / degree-3 (2D) rule on facets: points ``(F, q, d)``, weights ``(F, q)``."""
    if facets is None:
        facets = np.arange(mesh.n_facets)
    x = mesh.vertices[mesh.facets[facets]]
    if mesh.dim == 2:
        g = 0.5 / math.sqrt(3.0)
        bary = np.array([[0.5 + g, 0.5 - g], [0.5 - g, 0.5 + g]])
    else:
        bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    pts = np.einsum("qv,fvd->fqd", bary, x)
    w = np.outer(mesh.facet_measures[facets], np.full(len(bary), 1.0 / len(bary)))
    return pts, w


def _eval(func: Field, pts: np.ndarray, components: int) -> np.ndarray:
    flat = pts.reshape(-1, pts.shape[-1])
    vals = np.asarray(func(flat), dtype=float)
    return vals.reshape(pts.shape[:-1] + ((components,) if components > 1 else ()))


# ---------------------------------------------------------------------------
# local operators

def rt0_mass_matrices(mesh: Mesh) -> np.ndarray:
    """Local RT0 mass matrices ``(N, d+1, d+1)`` in the flux-normalised basis."""
    d = mesh.dim
    x = mesh.vertices[mesh.elements]
    # P[k, i, v] = x_v - a_i
    P = x[:, None, :, :] - x[:, :, None, :]
    S = P.sum(axis=2)
    raw = np.einsum("kid,kjd->kij", S, S) + np.einsum("kivd,kjvd->kij", P, P)
    vol = mesh.volumes
    scale = vol / ((d + 1) * (d + 2) * (d * vol) ** 2)
    return raw * scale[:, None, None]


def _check_element(mesh: Mesh, element_id: int) -> None:
    if not 0 <= element_id < mesh.n_elements:
        raise IndexError(f"element {element_id} out of range")


def weak_gradient_local(mesh: Mesh, element_id: int, interior_value: float, facet_values) -> np.ndarray:
    """RT0 coefficients of the weak gradient of ``{u_interior, u_facets}`` on one element.

    ``facet_values`` follow the element's local facet order.
    """
    _check_element(mesh, element_id)
    mass = rt0_mass_matrices_single(mesh, element_id)
    rhs = np.asarray(facet_values, dtype=float) - interior_value
    try:
        return np.linalg.solve(mass, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"degenerate element {element_id}") from exc


def rt0_mass_matrices_single(mesh: Mesh, element_id: int) -> np.ndarray:
    d = mesh.dim
    x = mesh.vertices[mesh.elements[element_id]]
    vol = mesh.volumes[element_id]
    if vol <= 0.0:
        raise ValueError(f"degenerate element {element_id}")
    P = x[None, :, :] - x[:, None, :]
    S = P.sum(axis=1)
    raw = S @ S.T + np.einsum("ivd,jvd->ij", P, P)
    return raw / ((d + 1) * (d + 2) * (d * vol) ** 2) * vol


def rt0_evaluate(mesh: Mesh, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate RT0 fields with coefficients ``(N, d+1)`` at points ``(N, q, d)``."""
    d = mesh.dim
    a = mesh.vertices[mesh.elements]
    diff = pts[:, :, None, :] - a[:, None, :, :]
    return np.einsum("ki,kqid->kqd", coeffs, diff) / (d * mesh.volumes)[:, None, None]


def weak_gradient(mesh: Mesh, field: "WgField") -> np.ndarray:
    """RT0 coefficients ``(N, c, d+1)`` of the weak gradient of every component."""
    rhs = field.facet[mesh.element_facets] - field.interior[:, None, :]
    return np.einsum("kij,kjc->kci", np.linalg.inv(rt0_mass_matrices(mesh)), rhs)


def weak_divergence_local(mesh: Mesh, element_id: int, interior_vec, facet_vecs) -> float:
    """Weak divergence (a constant) of a vector WG function on one element.

    The interior part drops out because the test functions are constant.
    """
    _check_element(mesh, element_id)
    fids = mesh.element_facets[element_id]
    n_out = mesh.facet_normals[fids] * mesh.element_facet_signs[element_id][:, None]
    flux = np.einsum("i,id,id->", mesh.facet_measures[fids], np.asarray(facet_vecs, float), n_out)
    return float(flux / mesh.volumes[element_id])


# ---------------------------------------------------------------------------
# fields and dof maps

@dataclass
class WgField:
    """Weak Galerkin function: constants per element interior and per facet.

    ``interior`` has shape ``(N, c)`` and ``facet`` shape ``(N_f, c)``;
    facets under ``dirichlet_mask`` hold prescribed boundary values.
    """

    interior: np.ndarray
    facet: np.ndarray
    dirichlet_mask: np.ndarray

    @property
    def components(self) -> int:
        return self.interior.shape[1]

    @classmethod
    def zeros(cls, mesh: Mesh, components: int) -> "WgField":
        return cls(
            np.zeros((mesh.n_elements, components)),
            np.zeros((mesh.n_facets, components)),
            mesh.boundary_facet_flags.copy(),
        )

    @classmethod
    def interpolate(cls, mesh: Mesh, func: Field, components: int) -> "WgField":
        """Element and facet averages of ``func`` (degree-2 quadrature)."""
        pts, w = element_quadrature(mesh)
        vals = _eval(func, pts, components).reshape(mesh.n_elements, -1, components)
        interior = np.einsum("kq,kqc->kc", w, vals) / mesh.volumes[:, None]
        fpts, fw = facet_quadrature(mesh)
        fvals = _eval(func, fpts, components).reshape(mesh.n_facets, -1, components)
        facet = np.einsum("fq,fqc->fc", fw, fvals) / mesh.facet_measures[:, None]
        return cls(interior, facet, mesh.boundary_facet_flags.copy())

    def free_vector(self) -> np.ndarray:
        """Unknowns in solver ordering: interiors, then non-Dirichlet facets."""
        return np.concatenate([self.interior.ravel(), self.facet[~self.dirichlet_mask].ravel()])

    def boundary_vector(self) -> np.ndarray:
        return self.facet[self.dirichlet_mask].ravel()

    def full_vector(self) -> np.ndarray:
        return np.concatenate([self.interior.ravel(), self.facet.ravel()])

    @classmethod
    def from_free(cls, mesh: Mesh, free: np.ndarray, components: int,
                  boundary: np.ndarray | None = None) -> "WgField":
        n = mesh.n_elements * components
        mask = mesh.boundary_facet_flags.copy()
        facet = np.zeros((mesh.n_facets, components))
        facet[~mask] = free[n:].reshape(-1, components)
        if boundary is not None:
            facet[mask] = np.asarray(boundary).reshape(-1, components)
        return cls(free[:n].reshape(-1, components).copy(), facet, mask)


@dataclass(frozen=True)
class DofMap:
    """Index bookkeeping for one WG space with ``components`` per entity."""

    n_elements: int
    n_facets: int
    components: int
    free_facets: np.ndarray
    boundary_facets: np.ndarray

    @classmethod
    def for_mesh(cls, mesh: Mesh, components: int) -> "DofMap":
        return cls(mesh.n_elements, mesh.n_facets, components,
                   mesh.interior_facets, mesh.boundary_facets)

    @property
    def n_interior(self) -> int:
        return self.n_elements * self.components

    @property
    def n_free(self) -> int:
        return (self.n_elements + self.free_facets.size) * self.components

    @property
    def n_boundary(self) -> int:
        return self.boundary_facets.size * self.components

    def _entity_dofs(self, entities: np.ndarray) -> np.ndarray:
        c = self.components
        return (entities[:, None] * c + np.arange(c)).ravel()

    def free_full_indices(self) -> np.ndarray:
        """Positions of the free dofs inside the full (all facets) vector."""
        ents = np.concatenate([np.arange(self.n_elements), self.n_elements + self.free_facets])
        return self._entity_dofs(ents)

    def boundary_full_indices(self) -> np.ndarray:
        return self._entity_dofs(self.n_elements + self.boundary_facets)


# ---------------------------------------------------------------------------
# global blocks

@dataclass
class WgBlocks:
    """Assembled WG matrices restricted to the free (non-Dirichlet) dofs.

    ``*_fb`` blocks couple free rows to eliminated boundary columns; they
    carry Dirichlet data into the load vectors.
    """

    mesh: Mesh
    params: PhysicalParams
    disp: DofMap | None = None
    pres: DofMap | None = None
    A1: sp.csr_matrix | None = None
    A0: sp.csr_matrix | None = None
    B_int: sp.csr_matrix | None = None
    B_full: sp.csr_matrix | None = None
    M_int: sp.dia_matrix | None = None
    A_scalar: sp.csr_matrix | None = None
    A_p: sp.csr_matrix | None = None
    D: sp.csr_matrix | None = None
    A1_fb: sp.csr_matrix | None = None
    A0_fb: sp.csr_matrix | None = None
    B_bd: sp.csr_matrix | None = None
    A_p_fb: sp.csr_matrix | None = None
    extras: dict = field(default_factory=dict)

    @property
    def volumes(self) -> np.ndarray:
        return self.mesh.volumes

    @property
    def n_p_int(self) -> int:
        return self.mesh.n_elements

    @property
    def n_p_facet(self) -> int:
        return self.pres.free_facets.size if self.pres is not None else self.mesh.interior_facets.size

    def merged(self, other: "WgBlocks") -> "WgBlocks":
        out = WgBlocks(self.mesh, self.params)
        for name in self.__dataclass_fields__:
            if name in ("mesh", "params", "extras"):
                continue
            mine = getattr(self, name)
            setattr(out, name, mine if mine is not None else getattr(other, name))
        out.extras = {**other.extras, **self.extras}
        return out


def _scalar_stiffness_full(mesh: Mesh) -> sp.csr_matrix:
    """Scalar WG Laplacian over all dofs ``[interiors, all facets]``."""
    d = mesh.dim
    N = mesh.n_elements
    Minv = np.linalg.inv(rt0_mass_matrices(mesh))
    G = np.hstack([-np.ones((d + 1, 1)), np.eye(d + 1)])
    local = np.einsum("ai,kab,bj->kij", G, Minv, G)
    dofs = np.hstack([np.arange(N)[:, None], N + mesh.element_facets])
    rows = np.repeat(dofs, d + 2, axis=1).ravel()
    cols = np.tile(dofs, (1, d + 2)).ravel()
    n = N + mesh.n_facets
    A = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A


def _divergence_local_vectors(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per element, the coefficients of ``|K| div_w u`` on the facet dofs
    and the corresponding full-vector column indices."""
    d, N = mesh.dim, mesh.n_elements
    fids = mesh.element_facets
    n_out = mesh.facet_normals[fids] * mesh.element_facet_signs[:, :, None]
    coef = (mesh.facet_measures[fids][:, :, None] * n_out).reshape(N, -1)
    cols = ((d * (N + fids))[:, :, None] + np.arange(d)).reshape(N, -1)
    return coef, cols


def assemble_elasticity(mesh: Mesh, params: PhysicalParams) -> WgBlocks:
    """Displacement blocks ``A1`` (weak vector Laplacian), ``A0`` (grad-div),
    ``B_int`` (weak divergence tested with interior pressures) and the
    diagonal interior mass ``M_int``."""
    d, N = mesh.dim, mesh.n_elements
    if np.any(mesh.volumes <= 0):
        raise ValueError(f"degenerate element {int(np.argmin(mesh.volumes))}")
    disp = DofMap.for_mesh(mesh, d)
    pres = DofMap.for_mesh(mesh, 1)
    free, bnd = disp.free_full_indices(), disp.boundary_full_indices()

    As_full = _scalar_stiffness_full(mesh)
    A1_full = sp.kron(As_full, sp.identity(d), format="csr")

    coef, cols = _divergence_local_vectors(mesh)
    n_full = d * (N + mesh.n_facets)
    B_all = sp.csr_matrix((coef.ravel(), (np.repeat(np.arange(N), coef.shape[1]), cols.ravel())),
                          shape=(N, n_full))
    # grad-div block from the element loop, independent of the B route
    local = np.einsum("ki,kj->kij", coef, coef) / mesh.volumes[:, None, None]
    rows = np.repeat(cols, cols.shape[1], axis=1).ravel()
    ccol = np.tile(cols, (1, cols.shape[1])).ravel()
    A0_full = sp.csr_matrix((local.ravel(), (rows, ccol)), shape=(n_full, n_full))
    A0_full.sum_duplicates()

    B_int = B_all[:, free].tocsr()
    n_pf = pres.free_facets.size
    B_full = sp.vstack([B_int, sp.csr_matrix((n_pf, B_int.shape[1]))], format="csr")

    sfree = pres.free_full_indices()
    return WgBlocks(
        mesh=mesh,
        params=params,
        disp=disp,
        pres=pres,
        A1=A1_full[free][:, free].tocsr(),
        A0=A0_full[free][:, free].tocsr(),
        B_int=B_int,
        B_full=B_full,
        M_int=sp.diags(mesh.volumes.copy(), format="dia"),
        A_scalar=As_full[sfree][:, sfree].tocsr(),
        A1_fb=A1_full[free][:, bnd].tocsr(),
        A0_fb=A0_full[free][:, bnd].tocsr(),
        B_bd=B_all[:, bnd].tocsr(),
    )


def assemble_pressure(mesh: Mesh, params: PhysicalParams) -> WgBlocks:
    """Pressure weak Laplacian ``A_p`` and ``D = c0 blockdiag(M_int, 0) + kappa dt A_p``."""
    pres = DofMap.for_mesh(mesh, 1)
    As_full = _scalar_stiffness_full(mesh)
    free, bnd = pres.free_full_indices(), pres.boundary_full_indices()
    A_p = As_full[free][:, free].tocsr()
    N = mesh.n_elements
    mass = np.zeros(A_p.shape[0])
    mass[:N] = mesh.volumes
    D = (params.c0 * sp.diags(mass) + params.kappa * params.dt * A_p).tocsr()
    return WgBlocks(
        mesh=mesh,
        params=params,
        pres=pres,
        A_scalar=A_p,
        A_p=A_p,
        D=D,
        M_int=sp.diags(mesh.volumes.copy(), format="dia"),
        A_p_fb=As_full[free][:, bnd].tocsr(),
    )


def assemble(mesh: Mesh, params: PhysicalParams) -> WgBlocks:
    return assemble_elasticity(mesh, params).merged(assemble_pressure(mesh, params))


def partition_pressure(blocks: WgBlocks):
    """Split ``A_p`` into interior/facet blocks ``(oo, of, fo, ff)``."""
    N = blocks.n_p_int
    Ap = blocks.A_p
    return Ap[:N, :N], Ap[:N, N:], Ap[N:, :N], Ap[N:, N:]


def element_integrals(mesh: Mesh, func: Field, components: int) -> np.ndarray:
    """``int_K func`` per element, shape ``(N, components)``."""
    pts, w = element_quadrature(mesh)
    vals = _eval(func, pts, components).reshape(mesh.n_elements, -1, components)
    return np.einsum("kq,kqc->kc", w, vals)


def assemble_loads(mesh: Mesh, f: Field | None, s: Field | None, params: PhysicalParams,
                   prev_state=None, blocks: WgBlocks | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand sides ``b1`` (displacement) and ``b2`` (pressure) on the free dofs.

    ``f`` and ``s`` are evaluated at the current time level.  ``prev_state``
    (any object with WgField attributes ``u`` and ``p``) supplies the
    previous-step terms of ``b2``.  Facet blocks of both vectors are zero.
    """
    d, N = mesh.dim, mesh.n_elements
    n_free_f = mesh.interior_facets.size
    b1 = np.zeros(d * (N + n_free_f))
    b2 = np.zeros(N + n_free_f)
    if f is not None:
        b1[: d * N] = element_integrals(mesh, f, d).ravel()
    if s is not None:
        b2[:N] = -params.dt * element_integrals(mesh, s, 1).ravel()
    if prev_state is not None:
        u, p = prev_state.u, prev_state.p
        coef, _ = _divergence_local_vectors(mesh)
        facet_u = u.facet[mesh.element_facets].reshape(N, -1)
        div_u = np.einsum("ki,ki->k", coef, facet_u)
        b2[:N] -= params.alpha * div_u + params.c0 * mesh.volumes * p.interior[:, 0]
    return b1, b2


def dump_coo(matrix: sp.spmatrix, path: str | Path) -> None:
    """Write ``row col value`` lines (0-based) for cross-checking elsewhere."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_coo(path: str | Path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().lstrip("%").split()
        shape = (int(header[0]), int(header[1]))
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
