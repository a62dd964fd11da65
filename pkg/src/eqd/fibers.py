"""Complete preimage fibers f^{-1}(z) with multiplicities.

Every supported family has exactly solvable fibers: rational maps of P^1
reduce to one homogeneous polynomial, product and skew maps of P^2 to a
cascade of one-variable solves, and monomial maps to lattice coset
enumeration in logarithmic coordinates.  Root finding uses companion
matrix eigenvalues (closed forms for degree <= 2) followed by Newton
polishing; batch kernels solve whole arrays of fibers at once for the
samplers and operator trees.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import Monomial2D, Product2D, Rational1D, Skew2D, points_from_logs
from .errors import DegenerateFiber, IllConditionedRoots, IndeterminacyPoint, InvalidMap, NoRoots
from .projective import ProjPoint, chordal_rows, normalize_rows

MERGE_TOL = 1e-9  # fiber points closer than this merge, multiplicities summed
RESIDUAL_TOL = 1e-8  # forward-evaluation error allowed per fiber point
CLUSTER_TOL = 1e-6  # root separations below this are treated as one multiple root
BACKWARD_ERR_TOL = 1e-12

TWO_PI_I = 2j * np.pi


# ---------------------------------------------------------------------------
# polynomial root finding


def _horner_batch(coeffs, x):
    """Evaluate rows of descending coefficients (N, d+1) at points (N, k)."""
    r = np.broadcast_to(coeffs[:, 0:1], x.shape).astype(np.complex128).copy()
    for i in range(1, coeffs.shape[1]):
        r = r * x + coeffs[:, i : i + 1]
    return r


def _quadratic_roots_batch(coeffs):
    """Stable closed form; b == 0 rows give an exactly negated root pair."""
    a, b, c = coeffs[:, 0], coeffs[:, 1], coeffs[:, 2]
    disc = np.sqrt(b * b - 4.0 * a * c)
    s = np.where(np.real(np.conj(b) * disc) >= 0.0, 1.0, -1.0)
    q = -0.5 * (b + s * disc)
    w1 = q / a
    w2 = np.where(q != 0, c / np.where(q != 0, q, 1.0), 0.0)
    pure = b == 0
    r = np.sqrt(-c / a)
    return np.stack([np.where(pure, r, w1), np.where(pure, -r, w2)], axis=-1)


def _companion_roots_batch(coeffs):
    monic = coeffs / coeffs[:, 0:1]
    n, d = monic.shape[0], monic.shape[1] - 1
    comp = np.zeros((n, d, d), dtype=np.complex128)
    comp[:, 0, :] = -monic[:, 1:]
    idx = np.arange(d - 1)
    comp[:, idx + 1, idx] = 1.0
    return np.linalg.eigvals(comp)


def _polish_batch(coeffs, roots, iters=3):
    d = coeffs.shape[1] - 1
    deriv = coeffs[:, :-1] * np.arange(d, 0, -1)
    for _ in range(iters):
        pv = _horner_batch(coeffs, roots)
        dv = _horner_batch(deriv, roots)
        ok = np.abs(dv) > 1e-300
        step = np.where(ok, pv / np.where(ok, dv, 1.0), 0.0)
        roots = roots - step
    return roots


def poly_roots_batch(coeffs):
    """All d roots per row of (N, d+1) descending coefficients.

    Rows must have a usable leading coefficient; callers mask degenerate
    rows beforehand.  Multiple roots come back as nearby repetitions.
    """
    d = coeffs.shape[1] - 1
    if d == 1:
        return (-coeffs[:, 1] / coeffs[:, 0])[:, None]
    if d == 2:
        roots = _quadratic_roots_batch(coeffs)
    else:
        roots = _companion_roots_batch(coeffs)
    return _polish_batch(coeffs, roots)


def _backward_errors(coeffs, roots):
    scale = np.zeros(roots.shape, dtype=np.float64)
    mags = np.abs(roots)
    for c in coeffs:
        scale = scale * mags + abs(c)
    scale = np.maximum(scale, 1e-300)
    return np.abs(np.polyval(coeffs, roots)) / scale


def roots(poly):
    """All complex roots with multiplicity, Newton-polished.

    Returns ``(roots, multiplicities)`` arrays.  Roots closer than a
    cluster tolerance (1e-6, scaled) are treated as one multiple root and
    re-polished on the matching derivative, which restores full accuracy
    where plain Newton stalls.  A cluster whose backward error stays
    above 1e-12 of the coefficient scale is flagged with a warning, not
    an error.
    """
    c = np.asarray(poly, dtype=np.complex128)
    if c.ndim != 1:
        raise NoRoots("expected a one-dimensional coefficient list")
    nz = np.nonzero(c)[0]
    if nz.size == 0 or c.size - 1 - nz[0] < 1:
        raise NoRoots("polynomial has degree 0")
    c = c[nz[0] :]
    c = c / np.abs(c).max()
    if c.size == 2:
        return np.array([-c[1] / c[0]]), np.array([1], dtype=np.int64)
    raw = poly_roots_batch(c[None, :])[0]

    order = np.argsort(raw.real, kind="stable")
    raw = raw[order]
    groups = []
    used = np.zeros(raw.size, dtype=bool)
    for i in range(raw.size):
        if used[i]:
            continue
        tol = CLUSTER_TOL * max(1.0, abs(raw[i]))
        members = [i]
        used[i] = True
        for j in range(i + 1, raw.size):
            if not used[j] and abs(raw[j] - raw[i]) <= tol:
                members.append(j)
                used[j] = True
        groups.append(members)

    out_roots, out_mults = [], []
    for members in groups:
        m = len(members)
        z = raw[members].mean()
        if m > 1:
            # a multiplicity-m root is a simple root of the (m-1)-th derivative
            dcoef = np.polyder(c, m - 1)
            for _ in range(20):
                dv = np.polyval(np.polyder(dcoef), z)
                if abs(dv) < 1e-300:
                    break
                step = np.polyval(dcoef, z) / dv
                z = z - step
                if abs(step) < 1e-16 * max(1.0, abs(z)):
                    break
        out_roots.append(z)
        out_mults.append(m)

    out_roots = np.asarray(out_roots, dtype=np.complex128)
    out_mults = np.asarray(out_mults, dtype=np.int64)
    bad = _backward_errors(c, out_roots) > BACKWARD_ERR_TOL
    if np.any(bad & (out_mults == 1)):
        warnings.warn("root cluster beyond backward-error tolerance", IllConditionedRoots)
    return out_roots, out_mults


# ---------------------------------------------------------------------------
# fibers


@dataclass
class Fiber:
    """All d_t preimages of a base point, merged by proximity.

    ``flagged`` marks fibers whose forward residuals exceed tolerance,
    which happens near critical values; they are reported, not fatal.
    """

    base: ProjPoint
    points: np.ndarray
    multiplicities: np.ndarray
    residuals: np.ndarray
    flagged: bool

    @property
    def size(self):
        return int(self.multiplicities.sum())

    def expanded_points(self):
        """Points repeated by multiplicity, shape (d_t, m)."""
        return np.repeat(self.points, self.multiplicities, axis=0)


def _merge_points(points, mults):
    keep_pts, keep_mults = [], []
    for pt, ml in zip(points, mults):
        for i, ref in enumerate(keep_pts):
            if chordal_rows(pt, ref) <= MERGE_TOL:
                keep_mults[i] += ml
                break
        else:
            keep_pts.append(pt)
            keep_mults.append(int(ml))
    return np.asarray(keep_pts), np.asarray(keep_mults, dtype=np.int64)


def _finish_fiber(dyn_map, base, points, mults):
    points, mults = _merge_points(points, mults)
    if int(mults.sum()) != dyn_map.topological_degree:
        raise DegenerateFiber(
            f"multiplicities sum to {int(mults.sum())}, expected {dyn_map.topological_degree}"
        )
    images, _ = dyn_map.evaluate_batch(points)
    residuals = chordal_rows(images, base.coords[None, :])
    return Fiber(base, points, mults, residuals, bool(np.any(residuals >= RESIDUAL_TOL)))


def _p1_points(ws):
    ws = np.asarray(ws, dtype=np.complex128)
    big = ~np.isfinite(ws) | (np.abs(ws) > 1e120)
    safe = np.where(big, 0.0, ws)
    pts = np.stack([np.where(big, 1.0, safe), np.where(big, 0.0, 1.0 + 0j * safe)], axis=-1)
    return normalize_rows(pts)


def _homogeneous_p1_roots(form):
    """Roots on P^1 of a degree-d binary form given by descending coeffs.

    Leading coefficients below 1e-13 of scale count as roots at [1:0].
    """
    top = np.abs(form).max()
    lead = 0
    while lead < form.size - 1 and abs(form[lead]) <= 1e-13 * top:
        lead += 1
    pts, mults = [], []
    if form.size - 1 - lead >= 1:
        finite, fm = roots(form[lead:])
        pts.extend(_p1_points(finite))
        mults.extend(fm.tolist())
    if lead > 0:
        pts.append(np.array([1.0 + 0j, 0.0 + 0j]))
        mults.append(lead)
    return np.asarray(pts), np.asarray(mults, dtype=np.int64)


def _fiber_rational1d(dyn_map, z):
    a, b = z.coords
    form = b * dyn_map.num - a * dyn_map.den
    pts, mults = _homogeneous_p1_roots(form)
    return _finish_fiber(dyn_map, z, pts, mults)


def _affine_chart(z):
    """(x, y) for a P^2 point with z2 bounded away from zero, else None."""
    c = z.coords
    if abs(c[2]) <= 1e-12:
        return None
    return c[0] / c[2], c[1] / c[2]


def _fiber_at_infinity(dyn_map, z):
    """Preimages on the totally invariant line z2 = 0.

    The map restricts to a degree-d self-map of that line and pulls the
    line back with multiplicity d, so each of the d preimages carries
    multiplicity d and the total is d_t = d^2.
    """
    d = dyn_map.degree
    ptop = np.zeros(d + 1, dtype=np.complex128)
    ptop[0] = dyn_map.p[0]
    qtop = np.zeros(d + 1, dtype=np.complex128)
    if isinstance(dyn_map, Product2D):
        qtop[d] = dyn_map.q[0]  # q restricted to the line is q0 * v^d
    else:
        for i in range(d + 1):
            qtop[i] = dyn_map.qmat[i, d - i]  # u^(d-i) v^(d-j) terms with i+j = d
    a, b = z.coords[0], z.coords[1]
    form = b * ptop - a * qtop
    line_pts, mults = _homogeneous_p1_roots(form)
    pts = np.zeros((line_pts.shape[0], 3), dtype=np.complex128)
    pts[:, :2] = line_pts
    return _finish_fiber(dyn_map, z, normalize_rows(pts), mults * d)


def _fiber_product2d(dyn_map, z):
    chart = _affine_chart(z)
    if chart is None:
        return _fiber_at_infinity(dyn_map, z)
    x, y = chart
    pc = dyn_map.p.copy()
    pc[-1] -= x
    qc = dyn_map.q.copy()
    qc[-1] -= y
    zr, zm = roots(pc)
    wr, wm = roots(qc)
    pts, mults = [], []
    for zi, mi in zip(zr, zm):
        for wj, mj in zip(wr, wm):
            pts.append([zi, wj, 1.0])
            mults.append(mi * mj)
    return _finish_fiber(dyn_map, z, normalize_rows(np.asarray(pts)), np.asarray(mults))


def _fiber_skew2d(dyn_map, z):
    chart = _affine_chart(z)
    if chart is None:
        return _fiber_at_infinity(dyn_map, z)
    x, y = chart
    pc = dyn_map.p.copy()
    pc[-1] -= x
    zr, zm = roots(pc)
    pts, mults = [], []
    for zi, mi in zip(zr, zm):
        wc = dyn_map.w_poly_coeffs(np.asarray([zi]))[0]
        wc[-1] -= y
        wr, wm = roots(wc)
        for wj, mj in zip(wr, wm):
            pts.append([zi, wj, 1.0])
            mults.append(mi * mj)
    return _finish_fiber(dyn_map, z, normalize_rows(np.asarray(pts)), np.asarray(mults))


def _fiber_monomial2d(dyn_map, z):
    logs, valid = dyn_map.affine_logs(z.coords[None, :])
    if not valid[0]:
        raise IndeterminacyPoint("base point has a vanishing coordinate")
    branch_logs = (logs[:, None, :] + TWO_PI_I * dyn_map.cosets[None, :, :]) @ dyn_map.Ainv.T
    pts = points_from_logs(branch_logs[0])
    mults = np.ones(pts.shape[0], dtype=np.int64)
    return _finish_fiber(dyn_map, z, pts, mults)


def fiber(dyn_map, z):
    """The full fiber f^{-1}(z) with multiplicities summing to d_t."""
    if isinstance(dyn_map, Rational1D):
        return _fiber_rational1d(dyn_map, z)
    if isinstance(dyn_map, Product2D):
        return _fiber_product2d(dyn_map, z)
    if isinstance(dyn_map, Skew2D):
        return _fiber_skew2d(dyn_map, z)
    if isinstance(dyn_map, Monomial2D):
        return _fiber_monomial2d(dyn_map, z)
    raise InvalidMap(f"unsupported map type {type(dyn_map)!r}")


def random_preimage(dyn_map, z, rng):
    """One fiber point drawn with probability multiplicity / d_t."""
    fib = fiber(dyn_map, z)
    probs = fib.multiplicities / fib.multiplicities.sum()
    idx = rng.choice(fib.points.shape[0], p=probs)
    return ProjPoint(fib.points[idx])


# ---------------------------------------------------------------------------
# batch preimage kernels
#
# These return all d_t branches per row as raw (possibly repeated) points;
# multiplicity weighting is automatic because a multiple root appears as
# that many nearby raw roots.


def _scalar_fill(dyn_map, Z, rows, out):
    for i in rows:
        fib = fiber(dyn_map, ProjPoint(Z[i]))
        out[i] = fib.expanded_points()


def _preimages_rational1d(dyn_map, Z):
    n = Z.shape[0]
    g = Z[:, 1:2] * dyn_map.num[None, :] - Z[:, 0:1] * dyn_map.den[None, :]
    top = np.abs(g).max(axis=1)
    degenerate = np.abs(g[:, 0]) <= 1e-13 * top
    out = np.empty((n, dyn_map.degree, 2), dtype=np.complex128)
    good = ~degenerate
    if np.any(good):
        ws = poly_roots_batch(g[good])
        out[good] = _p1_points(ws)
    if np.any(degenerate):
        _scalar_fill(dyn_map, Z, np.nonzero(degenerate)[0], out)
    return out, np.ones(n, dtype=bool)


def _preimages_product2d(dyn_map, Z):
    n, d = Z.shape[0], dyn_map.degree
    out = np.empty((n, d * d, 3), dtype=np.complex128)
    at_inf = np.abs(Z[:, 2]) <= 1e-12
    good = ~at_inf
    if np.any(good):
        x = Z[good, 0] / Z[good, 2]
        y = Z[good, 1] / Z[good, 2]
        pc = np.tile(dyn_map.p, (x.size, 1))
        pc[:, -1] -= x
        qc = np.tile(dyn_map.q, (y.size, 1))
        qc[:, -1] -= y
        zr = poly_roots_batch(pc)
        wr = poly_roots_batch(qc)
        pairs = np.empty((x.size, d, d, 3), dtype=np.complex128)
        pairs[..., 0] = zr[:, :, None]
        pairs[..., 1] = wr[:, None, :]
        pairs[..., 2] = 1.0
        out[good] = _normalize_affine_pairs(pairs.reshape(x.size, d * d, 3))
    if np.any(at_inf):
        _scalar_fill(dyn_map, Z, np.nonzero(at_inf)[0], out)
    return out, np.ones(n, dtype=bool)


def _preimages_skew2d(dyn_map, Z):
    n, d = Z.shape[0], dyn_map.degree
    out = np.empty((n, d * d, 3), dtype=np.complex128)
    at_inf = np.abs(Z[:, 2]) <= 1e-12
    good = ~at_inf
    if np.any(good):
        x = Z[good, 0] / Z[good, 2]
        y = Z[good, 1] / Z[good, 2]
        pc = np.tile(dyn_map.p, (x.size, 1))
        pc[:, -1] -= x
        zr = poly_roots_batch(pc)  # (K, d)
        wc = dyn_map.w_poly_coeffs(zr.ravel())  # (K*d, d+1)
        wc[:, -1] -= np.repeat(y, d)
        wr = poly_roots_batch(wc).reshape(x.size, d, d)
        pairs = np.empty((x.size, d, d, 3), dtype=np.complex128)
        pairs[..., 0] = zr[:, :, None]
        pairs[..., 1] = wr
        pairs[..., 2] = 1.0
        out[good] = _normalize_affine_pairs(pairs.reshape(x.size, d * d, 3))
    if np.any(at_inf):
        _scalar_fill(dyn_map, Z, np.nonzero(at_inf)[0], out)
    return out, np.ones(n, dtype=bool)


def _normalize_affine_pairs(pts):
    bad = ~np.isfinite(pts).all(axis=-1)
    if np.any(bad):
        pts = pts.copy()
        pts[bad] = np.array([1.0, 0.0, 0.0])
    return normalize_rows(pts)


def _preimages_monomial2d(dyn_map, Z):
    n = Z.shape[0]
    dt = dyn_map.topological_degree
    logs, valid = dyn_map.affine_logs(Z)
    branch_logs = (logs[:, None, :] + TWO_PI_I * dyn_map.cosets[None, :, :]) @ dyn_map.Ainv.T
    pts = points_from_logs(branch_logs.reshape(n * dt, 2)).reshape(n, dt, 3)
    pts[~valid] = np.nan
    return pts, valid


def preimages_batch(dyn_map, Z):
    """All d_t preimage branches for each row of Z.

    Returns ``(points, valid)`` with points of shape (N, d_t, m).  Only
    monomial maps produce invalid rows (indeterminacy); other families
    fall back to exact per-point fibers where the fast path degenerates.
    """
    if isinstance(dyn_map, Rational1D):
        return _preimages_rational1d(dyn_map, Z)
    if isinstance(dyn_map, Product2D):
        return _preimages_product2d(dyn_map, Z)
    if isinstance(dyn_map, Skew2D):
        return _preimages_skew2d(dyn_map, Z)
    if isinstance(dyn_map, Monomial2D):
        return _preimages_monomial2d(dyn_map, Z)
    raise InvalidMap(f"unsupported map type {type(dyn_map)!r}")


def random_preimages_batch(dyn_map, Z, rng):
    """One uniformly drawn branch per row plus the fiber spread.

    The spread (largest chordal distance to the first branch) feeds the
    collapse detector of the backward-orbit sampler.
    """
    pts, valid = preimages_batch(dyn_map, Z)
    n, dt = pts.shape[0], pts.shape[1]
    idx = rng.integers(0, dt, size=n)
    chosen = np.take_along_axis(pts, idx[:, None, None], axis=1)[:, 0, :]
    with np.errstate(invalid="ignore"):
        spread = np.nanmax(chordal_rows(pts, pts[:, 0:1, :]), axis=1)
    return chosen, spread, valid
