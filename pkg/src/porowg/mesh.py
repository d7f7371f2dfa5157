"""Structured simplicial meshes of the unit square and unit cube.

Squares are split into two triangles along the (0,0)-(1,1) diagonal of each
grid cell; cubes are split into six tetrahedra by the Kuhn (Freudenthal)
subdivision, which is conforming across neighbouring cells.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with full element/facet connectivity.

    Local facet ``i`` of an element is the facet opposite its local vertex
    ``i``.  Each facet carries one unit normal with a fixed global
    orientation: it points out of the lower-indexed neighbouring element,
    which makes it the outward normal on the boundary.  ``element_facet_signs``
    recovers the element-outward direction.
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    element_facets: np.ndarray
    element_facet_signs: np.ndarray
    facet_elements: np.ndarray
    volumes: np.ndarray
    facet_measures: np.ndarray
    facet_normals: np.ndarray
    facet_centroids: np.ndarray
    boundary_facet_flags: np.ndarray
    centroids: np.ndarray = field(repr=False)

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_facet_flags)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_facet_flags)

    def element_diameters(self) -> np.ndarray:
        x = self.vertices[self.elements]
        diam = np.zeros(self.n_elements)
        for a, b in itertools.combinations(range(self.dim + 1), 2):
            diam = np.maximum(diam, np.linalg.norm(x[:, a] - x[:, b], axis=1))
        return diam

    def scaled(self, factor: float) -> "Mesh":
        """Return a copy with all coordinates multiplied by ``factor``."""
        return from_elements(self.vertices * factor, self.elements)


def from_elements(vertices: np.ndarray, elements: np.ndarray) -> Mesh:
    """Build a :class:`Mesh` from vertex coordinates and element connectivity."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    elements = np.ascontiguousarray(elements, dtype=np.int64)
    n_el, nv_el = elements.shape
    dim = vertices.shape[1]
    if nv_el != dim + 1:
        raise ValueError(f"{dim}D simplices need {dim + 1} vertices, got {nv_el}")

    x = vertices[elements]
    edges = x[:, 1:] - x[:, :1]
    volumes = np.abs(np.linalg.det(edges)) / math.factorial(dim)
    if np.any(volumes <= 0.0):
        bad = int(np.argmin(volumes))
        raise ValueError(f"degenerate element {bad} (volume {volumes[bad]:g})")

    # local facet i omits local vertex i
    local = np.array([[j for j in range(dim + 1) if j != i] for i in range(dim + 1)])
    all_facets = np.sort(elements[:, local], axis=2).reshape(-1, dim)
    facets, inverse = np.unique(all_facets, axis=0, return_inverse=True)
    element_facets = inverse.reshape(n_el, dim + 1)
    n_f = facets.shape[0]

    counts = np.bincount(element_facets.ravel(), minlength=n_f)
    if counts.max() > 2:
        raise ValueError("non-manifold mesh: a facet is shared by more than two elements")

    # facet -> up to two elements, lower element index first
    facet_elements = np.full((n_f, 2), -1, dtype=np.int64)
    order = np.argsort(element_facets.ravel(), kind="stable")
    owners = np.repeat(np.arange(n_el), dim + 1)[order]
    sorted_f = element_facets.ravel()[order]
    first = np.ones(sorted_f.size, dtype=bool)
    first[1:] = sorted_f[1:] != sorted_f[:-1]
    facet_elements[sorted_f[first], 0] = owners[first]
    facet_elements[sorted_f[~first], 1] = owners[~first]

    fx = vertices[facets]
    facet_centroids = fx.mean(axis=1)
    if dim == 2:
        t = fx[:, 1] - fx[:, 0]
        facet_measures = np.linalg.norm(t, axis=1)
        normals = np.stack([t[:, 1], -t[:, 0]], axis=1)
    elif dim == 3:
        c = np.cross(fx[:, 1] - fx[:, 0], fx[:, 2] - fx[:, 0])
        facet_measures = 0.5 * np.linalg.norm(c, axis=1)
        normals = c
    else:
        raise ValueError(f"unsupported dimension {dim}")
    normals = normals / np.linalg.norm(normals, axis=1)[:, None]

    # orient out of the lower-indexed neighbour
    owner = facet_elements[:, 0]
    owner_local = np.argmax(element_facets[owner] == np.arange(n_f)[:, None], axis=1)
    away = facet_centroids - vertices[elements[owner, owner_local]]
    flip = np.einsum("ij,ij->i", normals, away) < 0.0
    normals[flip] *= -1.0

    outward = facet_centroids[element_facets] - x
    signs = np.sign(np.einsum("kij,kij->ki", normals[element_facets], outward)).astype(np.int8)

    return Mesh(
        dim=dim,
        vertices=vertices,
        elements=elements,
        facets=facets,
        element_facets=element_facets,
        element_facet_signs=signs,
        facet_elements=facet_elements,
        volumes=volumes,
        facet_measures=facet_measures,
        facet_normals=normals,
        facet_centroids=facet_centroids,
        boundary_facet_flags=facet_elements[:, 1] < 0,
        centroids=x.mean(axis=1),
    )


def build_structured_mesh(dim: int, n: int) -> Mesh:
    """Uniform simplicial mesh of the unit square (``2n^2`` triangles) or cube
    (``6n^3`` Kuhn tetrahedra)."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    ticks = np.linspace(0.0, 1.0, n + 1)

    if dim == 2:
        X, Y = np.meshgrid(ticks, ticks, indexing="ij")
        vertices = np.column_stack([X.ravel(order="F"), Y.ravel(order="F")])
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        v00 = (i + j * (n + 1)).ravel(order="F")
        v10, v01 = v00 + 1, v00 + n + 1
        v11 = v01 + 1
        elements = np.empty((2 * n * n, 3), dtype=np.int64)
        elements[0::2] = np.column_stack([v00, v10, v11])
        elements[1::2] = np.column_stack([v00, v11, v01])
        return from_elements(vertices, elements)

    X, Y, Z = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    vertices = np.column_stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")])
    strides = np.array([1, n + 1, (n + 1) ** 2])
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = (i + j * strides[1] + k * strides[2]).ravel(order="F")
    tets = []
    for perm in itertools.permutations(range(3)):
        steps = np.cumsum(strides[list(perm)])
        tets.append(np.column_stack([base, base + steps[0], base + steps[1], base + steps[2]]))
    elements = np.stack(tets, axis=1).reshape(-1, 4)
    return from_elements(vertices, elements)


def mesh_stats(mesh: Mesh) -> dict:
    return {
        "N": mesh.n_elements,
        "N_f": mesh.n_facets,
        "n_boundary_facets": int(mesh.boundary_facet_flags.sum()),
        "h_max": float(mesh.element_diameters().max()),
        "min_volume": float(mesh.volumes.min()),
        "max_volume": float(mesh.volumes.max()),
    }


def refine_family(dim: int, levels: int, start_n: int | None = None) -> list[Mesh]:
    """Meshes with subdivisions ``start_n * 2**k`` for ``k < levels``.

    The default starting resolution is 16 in 2D and 8 in 3D.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if start_n is None:
        start_n = 16 if dim == 2 else 8
    return [build_structured_mesh(dim, start_n * 2**k) for k in range(levels)]


def dump_mesh(mesh: Mesh, path: str | Path) -> None:
    """Write the plain-text mesh format (0-based indices)."""
    lines = [f"{mesh.dim} {mesh.n_elements} {mesh.n_facets}"]
    lines += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    lines += [" ".join(str(i) for i in e) for e in mesh.elements]
    lines += [" ".join(str(i) for i in f) for f in mesh.facets]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> Mesh:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    dim, n_el, n_f = (int(t) for t in rows[0])
    body = rows[1:]
    n_v = len(body) - n_el - n_f
    if n_v <= 0:
        raise ValueError("mesh file is truncated")
    vertices = np.array(body[:n_v], dtype=float)
    elements = np.array(body[n_v:n_v + n_el], dtype=np.int64)
    mesh = from_elements(vertices, elements)
    facets = np.array(body[n_v + n_el:], dtype=np.int64)
    if facets.shape != mesh.facets.shape or np.any(np.sort(facets, axis=1) != mesh.facets):
        raise ValueError("facet list in file does not match element connectivity")
    return mesh
