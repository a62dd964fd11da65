"""Homogeneous coordinates on P^1 and P^2.

Points are stored in a canonical form: the coordinate vector has unit
Euclidean norm and the coordinate of largest modulus is a positive real
(ties broken by the lowest index).  Two representatives of the same
projective point then agree to roughly machine precision, which makes
deduplication of fiber points stable even near coordinate hyperplanes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, InvalidPoint

CANONICAL_TOL = 1e-12


def normalize_rows(raw):
    """Canonicalize an array of coordinate vectors along the last axis.

    Accepts shape (..., m) with m = 2 or 3 and returns the canonical
    representatives.  Raises InvalidPoint for a zero or non-finite row.
    """
    a = np.array(raw, dtype=np.complex128, copy=True)
    mags = np.abs(a)
    top = mags.max(axis=-1)
    if np.any(top == 0.0) or not np.all(np.isfinite(top)):
        raise InvalidPoint("coordinate vector is zero or non-finite")
    # pre-scale by the largest modulus so |.|^2 cannot overflow
    a /= top[..., None]
    a /= np.sqrt((np.abs(a) ** 2).sum(axis=-1))[..., None]
    idx = np.argmax(np.abs(a), axis=-1)
    lead = np.take_along_axis(a, idx[..., None], axis=-1)[..., 0]
    a *= np.conj(lead / np.abs(lead))[..., None]
    return a


def chordal_rows(a, b):
    """Fubini-Study chordal distance between canonical rows (broadcasting).

    Computed as the wedge-product norm |p ^ q|, which equals
    sqrt(1 - |<p,q>|^2) for unit vectors but keeps full precision near
    coincident points where the inner-product form loses half the digits.
    """
    minors = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]) ** 2
    if a.shape[-1] == 3 or b.shape[-1] == 3:
        minors = minors + np.abs(a[..., 0] * b[..., 2] - a[..., 2] * b[..., 0]) ** 2
        minors = minors + np.abs(a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]) ** 2
    return np.sqrt(np.minimum(minors, 1.0))


@dataclass(frozen=True, eq=False)
class ProjPoint:
    """A point of P^1 or P^2 held in canonical homogeneous coordinates."""

    coords: np.ndarray

    @property
    def dim(self):
        return self.coords.shape[-1] - 1

    def same_point(self, other, tol=CANONICAL_TOL):
        if self.dim != other.dim:
            return False
        return bool(np.max(np.abs(self.coords - other.coords)) <= tol)

    def __repr__(self):
        entries = ", ".join(f"{c:.6g}" for c in self.coords)
        return f"ProjPoint([{entries}])"


def normalize(raw):
    """Canonical representative of a single coordinate vector."""
    arr = np.asarray(raw, dtype=np.complex128)
    if arr.ndim != 1 or arr.shape[0] not in (2, 3):
        raise InvalidPoint("expected 2 or 3 homogeneous coordinates")
    return ProjPoint(normalize_rows(arr))


def chordal_distance(p, q):
    """Chordal distance sqrt(1 - |<p,q>|^2); symmetric, bounded by 1."""
    if p.dim != q.dim:
        raise DimMismatch(f"dim {p.dim} vs {q.dim}")
    return float(chordal_rows(p.coords, q.coords))


def sample_fubini_study_batch(rng, dim, n):
    """n points distributed by the normalized Fubini-Study volume on P^dim.

    Normalized standard complex Gaussians are uniform on the coordinate
    sphere; their projection is the Fubini-Study volume.
    """
    m = dim + 1
    g = rng.standard_normal((n, 2 * m))
    z = g[:, :m] + 1j * g[:, m:]
    return normalize_rows(z)


def sample_fubini_study(rng, dim):
    """One Fubini-Study distributed point, deterministic given the stream."""
    return ProjPoint(sample_fubini_study_batch(rng, dim, 1)[0])
