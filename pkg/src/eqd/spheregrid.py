"""Quadrature mesh on P^1 via iterated octahedral subdivision of S^2.

The mesh supplies area-weighted cells for means and a piecewise-linear
gradient per triangle for Dirichlet-energy integrals.  Cell areas are
exact spherical triangle areas, which is the reweighting that keeps the
slightly uneven subdivided octahedron usable as an equal-area grid.
"""

from functools import lru_cache

import numpy as np

from .projective import normalize_rows


def _subdivide(verts, faces):
    verts = list(verts)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            v = verts[i] + verts[j]
            verts.append(v / np.linalg.norm(v))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return np.asarray(verts), np.asarray(out, dtype=np.int64)


def _spherical_areas(verts, faces):
    a = verts[faces[:, 0]]
    b = verts[faces[:, 1]]
    c = verts[faces[:, 2]]
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


def sphere_to_p1(xyz):
    """Homogeneous P^1 representatives of unit-sphere points."""
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    up = 1.0 + z
    south = up < 1e-30
    z0 = np.sqrt(np.maximum(up, 1e-30) / 2.0)
    z1 = (x - 1j * y) / (2.0 * z0)
    pts = np.stack([np.where(south, 0.0, z0), np.where(south, 1.0, z1)], axis=-1)
    return normalize_rows(pts)


class SphereGrid:
    """Triangulated sphere with per-face areas, centroids and gradients."""

    def __init__(self, level):
        verts = np.array(
            [[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0], [0, 0, -1.0]]
        )
        faces = np.array(
            [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]],
            dtype=np.int64,
        )
        for _ in range(level):
            verts, faces = _subdivide(verts, faces)
        self.level = level
        self.verts = verts
        self.faces = faces
        self.areas = _spherical_areas(verts, faces)
        cent = verts[faces].mean(axis=1)
        self.centroids = cent / np.linalg.norm(cent, axis=1, keepdims=True)
        self.p1_verts = sphere_to_p1(verts)
        self.p1_centroids = sphere_to_p1(self.centroids)
        # dual basis for P1 gradients: solve the 2x2 Gram system per face
        e2 = verts[faces[:, 1]] - verts[faces[:, 0]]
        e3 = verts[faces[:, 2]] - verts[faces[:, 0]]
        g22 = np.einsum("ij,ij->i", e2, e2)
        g23 = np.einsum("ij,ij->i", e2, e3)
        g33 = np.einsum("ij,ij->i", e3, e3)
        det = g22 * g33 - g23**2
        self._grad_data = (e2, e3, g22, g23, g33, det)

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def face_gradients(self, vertex_values):
        """Facet gradient vectors of the linear interpolant, shape (F, 3)."""
        f = self.faces
        d2 = vertex_values[f[:, 1]] - vertex_values[f[:, 0]]
        d3 = vertex_values[f[:, 2]] - vertex_values[f[:, 0]]
        e2, e3, g22, g23, g33, det = self._grad_data
        a = (g33 * d2 - g23 * d3) / det
        b = (g22 * d3 - g23 * d2) / det
        return a[:, None] * e2 + b[:, None] * e3


@lru_cache(maxsize=8)
def _grid_cached(level):
    return SphereGrid(level)


def grid_for(n_cells):
    """Smallest cached subdivision with at least ``n_cells`` triangles."""
    level = 0
    while 8 * 4**level < n_cells:
        level += 1
    return _grid_cached(level)
