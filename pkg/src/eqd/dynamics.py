"""Map families on P^1 and P^2, iteration, and degree data.

Four families are supported, chosen because their fibers are exactly
solvable: rational maps of P^1, product and skew endomorphisms of P^2,
and monomial (torus) maps of P^2.  The first three are holomorphic; the
monomial family is genuinely meromorphic with indeterminacy on the
coordinate hyperplanes.

Coefficient conventions follow numpy: one-variable lists are descending,
``[c_d, ..., c_0]``.  Homogeneous coordinates on P^2 are [z0:z1:z2] with
affine chart (x, y) = (z0/z2, z1/z2).
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import IndeterminacyPoint, InvalidMap, MapParseError
from .projective import ProjPoint, normalize_rows

INDET_TOL = 1e-10
RESULTANT_TOL = 1e-10


def binary_form(coeffs, x, y):
    """Evaluate sum_i c[i] x^(d-i) y^i elementwise (descending coeffs)."""
    r = coeffs[0] * np.ones_like(x)
    ypow = np.ones_like(y)
    for c in coeffs[1:]:
        ypow = ypow * y
        r = r * x + c * ypow
    return r


def _as_coeffs(seq):
    c = np.asarray(seq, dtype=np.complex128)
    if c.ndim != 1 or c.size < 2:
        raise InvalidMap("coefficient list must have degree >= 1")
    return c


def _sylvester_det(p, q):
    """Resultant of two formal degree-d binary forms via the Sylvester matrix."""
    d = p.size - 1
    s = np.zeros((2 * d, 2 * d), dtype=np.complex128)
    for i in range(d):
        s[i, i : i + d + 1] = p
        s[d + i, i : i + d + 1] = q
    return np.linalg.det(s)


@dataclass(frozen=True)
class Rational1D:
    """Degree-d rational self-map of P^1 given as a homogeneous pair."""

    num: np.ndarray
    den: np.ndarray

    family = "rational1d"
    dim = 1

    def __init__(self, num, den):
        num = _as_coeffs(num)
        den = _as_coeffs(den)
        if num.size != den.size:
            raise InvalidMap("numerator and denominator need equal formal degree")
        if num.size < 3:
            raise InvalidMap("rational1d requires degree >= 2")
        ns = num / np.abs(num).max()
        ds = den / np.abs(den).max()
        if abs(_sylvester_det(ns, ds)) <= RESULTANT_TOL:
            raise InvalidMap("numerator and denominator share a root (resultant ~ 0)")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @property
    def degree(self):
        return self.num.size - 1

    @property
    def topological_degree(self):
        return self.degree

    def evaluate_batch(self, Z):
        z0, z1 = Z[..., 0], Z[..., 1]
        out = np.stack([binary_form(self.num, z0, z1), binary_form(self.den, z0, z1)], axis=-1)
        return normalize_rows(out), np.ones(Z.shape[:-1], dtype=bool)

    def spec_string(self):
        return f"rational1d: num={_fmt_list(self.num)} den={_fmt_list(self.den)}"


@dataclass(frozen=True)
class Product2D:
    """(z, w) -> (p(z), q(w)) extended to a holomorphic self-map of P^2."""

    p: np.ndarray
    q: np.ndarray

    family = "product2d"
    dim = 2

    def __init__(self, p, q):
        p = _as_coeffs(p)
        q = _as_coeffs(q)
        if p.size != q.size:
            raise InvalidMap("p and q must have equal exact degree")
        if p.size < 3:
            raise InvalidMap("product2d requires degree >= 2")
        if p[0] == 0 or q[0] == 0:
            raise InvalidMap("leading coefficients must be nonzero (exact degree)")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def degree(self):
        return self.p.size - 1

    @property
    def topological_degree(self):
        return self.degree**2

    def evaluate_batch(self, Z):
        z0, z1, z2 = Z[..., 0], Z[..., 1], Z[..., 2]
        out = np.stack(
            [binary_form(self.p, z0, z2), binary_form(self.q, z1, z2), z2**self.degree],
            axis=-1,
        )
        return normalize_rows(out), np.ones(Z.shape[:-1], dtype=bool)

    def spec_string(self):
        return f"product2d: p={_fmt_list(self.p)} q={_fmt_list(self.q)}"


@dataclass(frozen=True)
class Skew2D:
    """(z, w) -> (p(z), q(z, w)) with q of exact degree d in w.

    ``qmat[i][j]`` multiplies z^(d-i) w^(d-j); entries of total degree
    above d must vanish, and the w^d coefficient qmat[d][0] must be a
    nonvanishing constant, so the extension to P^2 is holomorphic.
    """

    p: np.ndarray
    qmat: np.ndarray

    family = "skew2d"
    dim = 2

    def __init__(self, p, qmat):
        p = _as_coeffs(p)
        qmat = np.asarray(qmat, dtype=np.complex128)
        d = p.size - 1
        if d < 2:
            raise InvalidMap("skew2d requires degree >= 2")
        if p[0] == 0:
            raise InvalidMap("p must have exact degree d")
        if qmat.shape != (d + 1, d + 1):
            raise InvalidMap(f"q coefficient matrix must be {(d + 1, d + 1)}")
        ii, jj = np.meshgrid(np.arange(d + 1), np.arange(d + 1), indexing="ij")
        if np.any((ii + jj < d) & (qmat != 0)):
            raise InvalidMap("q has a term of total degree > d")
        if qmat[d, 0] == 0:
            raise InvalidMap("w-leading coefficient of q must be a nonzero constant")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "qmat", qmat)

    @property
    def degree(self):
        return self.p.size - 1

    @property
    def topological_degree(self):
        return self.degree**2

    def w_poly_coeffs(self, z):
        """Descending w-coefficients of q(z, .) for an array of z values."""
        d = self.degree
        cols = [np.polyval(self.qmat[:, j], z) for j in range(d + 1)]
        return np.stack(cols, axis=-1)

    def evaluate_batch(self, Z):
        d = self.degree
        z0, z1, z2 = Z[..., 0], Z[..., 1], Z[..., 2]
        qh = np.zeros_like(z0)
        for i in range(d + 1):
            for j in range(d + 1):
                c = self.qmat[i, j]
                if c == 0 or i + j < d:
                    continue
                qh = qh + c * z0 ** (d - i) * z1 ** (d - j) * z2 ** (i + j - d)
        out = np.stack([binary_form(self.p, z0, z2), qh, z2**d], axis=-1)
        return normalize_rows(out), np.ones(Z.shape[:-1], dtype=bool)

    def spec_string(self):
        rows = ",".join(_fmt_list(row) for row in self.qmat)
        return f"skew2d: p={_fmt_list(self.p)} q=[{rows}]"


@dataclass(frozen=True)
class Monomial2D:
    """(x, y) -> (x^a y^b, x^c y^d) for an integer exponent matrix A.

    Meromorphic on P^2 with indeterminacy on the coordinate hyperplanes;
    evaluation works in logarithmic coordinates for stability.
    """

    A: np.ndarray
    Ainv: np.ndarray = field(repr=False)
    cosets: np.ndarray = field(repr=False)

    family = "monomial2d"
    dim = 2

    def __init__(self, A):
        A = np.asarray(A)
        if A.shape != (2, 2) or not np.issubdtype(A.dtype, np.integer):
            raise InvalidMap("exponent matrix must be 2x2 integer")
        A = A.astype(np.int64)
        det = int(A[0, 0]) * int(A[1, 1]) - int(A[0, 1]) * int(A[1, 0])
        if det == 0:
            raise InvalidMap("exponent matrix must be invertible")
        adj = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]], dtype=np.int64)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Ainv", adj.astype(np.float64) / det)
        object.__setattr__(self, "cosets", _coset_representatives(adj, det))

    @property
    def det(self):
        return int(round(np.linalg.det(self.A)))

    @property
    def topological_degree(self):
        return abs(self.det)

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A.astype(float)))))

    def affine_logs(self, Z):
        """(log x, log y) for rows with all coordinates off the hyperplanes."""
        valid = np.min(np.abs(Z), axis=-1) > INDET_TOL
        l2 = np.log(np.where(valid[..., None], Z, 1.0))
        return np.stack([l2[..., 0] - l2[..., 2], l2[..., 1] - l2[..., 2]], axis=-1), valid

    def evaluate_batch(self, Z):
        L, valid = self.affine_logs(Z)
        u = L @ self.A.astype(np.float64).T
        pts = points_from_logs(u)
        pts[~valid] = np.nan
        return pts, valid

    def spec_string(self):
        a = self.A
        return f"monomial2d: A=[[{a[0, 0]},{a[0, 1]}],[{a[1, 0]},{a[1, 1]}]]"


def points_from_logs(u):
    """Normalized [x:y:1] points from affine complex logs, overflow-safe."""
    r = u.real
    m = np.maximum(np.maximum(r[..., 0], r[..., 1]), 0.0)
    c0 = np.exp(u[..., 0] - m)
    c1 = np.exp(u[..., 1] - m)
    c2 = np.exp(-m) * np.ones_like(c0)
    return normalize_rows(np.stack([c0, c1, c2], axis=-1))


def _coset_representatives(adj, det):
    """One integer vector per class of Z^2 / A Z^2, found by exact scanning.

    m ~ m' iff A^{-1}(m - m') is integral, i.e. adj(A) (m - m') == 0 mod det.
    """
    d = abs(det)
    reps = []
    seen = set()
    for m0 in range(d):
        for m1 in range(d):
            key = (
                (adj[0, 0] * m0 + adj[0, 1] * m1) % d,
                (adj[1, 0] * m0 + adj[1, 1] * m1) % d,
            )
            if key not in seen:
                seen.add(key)
                reps.append((m0, m1))
    if len(reps) != d:
        raise InvalidMap("coset enumeration failed")  # cannot happen for det != 0
    return np.array(reps, dtype=np.float64)


# ---------------------------------------------------------------------------
# evaluation and iteration


def evaluate(dyn_map, p):
    """Image of a point under the map, as a canonical ProjPoint."""
    pts, valid = dyn_map.evaluate_batch(p.coords[None, :])
    if not valid[0]:
        raise IndeterminacyPoint("point within tolerance of the indeterminacy set")
    return ProjPoint(pts[0])


def iterate(dyn_map, p, n):
    """n-fold composition; iterate(map, p, 0) == p."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    cur = p
    for step in range(n):
        try:
            cur = evaluate(dyn_map, cur)
        except IndeterminacyPoint as exc:
            raise IndeterminacyPoint(f"orbit hit indeterminacy at step {step}", step=step) from exc
    return cur


# ---------------------------------------------------------------------------
# degree data


@dataclass(frozen=True)
class DegreeReport:
    """Closed-form degree data: d_t, the list d_0..d_k, and n -> delta_n."""

    d_t: int
    d_list: tuple
    delta_base: float
    delta_is_leading_order: bool
    hypothesis_margin: float

    def delta(self, n):
        """delta_n, the degree of order k-1 of the n-th iterate."""
        return self.delta_base**n

    @property
    def delta_desc(self):
        tag = " (leading order)" if self.delta_is_leading_order else ""
        return f"{self.delta_base:.12g}^n{tag}"

    def as_dict(self):
        return {
            "d_t": self.d_t,
            "d_list": [float(d) for d in self.d_list],
            "delta": self.delta_desc,
            "hypothesis_margin": self.hypothesis_margin,
            "hypothesis_holds": self.hypothesis_margin > 0,
        }


def degrees(dyn_map):
    """Degree report for any supported family.

    Rational P^1 maps: d_t = d, delta_n = 1.  Holomorphic P^2 maps of
    algebraic degree d: d_t = d^2, delta_n = d^n.  Monomial maps:
    d_t = |det A| and delta_n reported as rho(A)^n, the leading-order
    growth of the iterated exponent matrix.
    """
    if isinstance(dyn_map, Rational1D):
        d = dyn_map.degree
        return DegreeReport(d, (1.0, float(d)), 1.0, False, float(d - 1))
    if isinstance(dyn_map, (Product2D, Skew2D)):
        d = dyn_map.degree
        return DegreeReport(d**2, (1.0, float(d), float(d**2)), float(d), False, float(d**2 - d))
    if isinstance(dyn_map, Monomial2D):
        dt = dyn_map.topological_degree
        rho = dyn_map.spectral_radius
        return DegreeReport(dt, (1.0, rho, float(dt)), rho, True, float(dt - rho))
    raise InvalidMap(f"unsupported map type {type(dyn_map)!r}")


def check_hypothesis(dyn_map):
    """(d_t > d_{k-1}, margin d_t - d_{k-1}); the large-degree condition."""
    rep = degrees(dyn_map)
    margin = rep.hypothesis_margin
    return margin > 0, margin


def map_hash(dyn_map):
    return hashlib.sha256(dyn_map.spec_string().encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# the map specification grammar used by the CLI config
#
#   rational1d: num=[c_d,...,c_0] den=[b_d,...,b_0]
#   product2d:  p=[...] q=[...]
#   skew2d:     p=[...] q=[[...],...]
#   monomial2d: A=[[a,b],[c,d]]
#
# complex coefficients are written re+imj


def _fmt_complex(c):
    c = complex(c)
    if c.imag == 0:
        return f"{c.real:.17g}"
    return f"{c.real:.17g}{c.imag:+.17g}j"


def _fmt_list(values):
    return "[" + ",".join(_fmt_complex(v) for v in np.asarray(values).ravel()) + "]"


def _parse_complex(tok):
    try:
        return complex(tok.replace(" ", ""))
    except ValueError as exc:
        raise MapParseError(f"bad complex literal {tok!r}") from exc


def _split_top(s, sep=","):
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _parse_bracket(tok):
    tok = tok.strip()
    if not (tok.startswith("[") and tok.endswith("]")):
        raise MapParseError(f"expected [...] list, got {tok!r}")
    inner = tok[1:-1].strip()
    if inner.startswith("["):
        return [_parse_bracket(part) for part in _split_top(inner)]
    if not inner:
        raise MapParseError("empty coefficient list")
    return [_parse_complex(part) for part in _split_top(inner)]


def _parse_kv(body, keys):
    out = {}
    rest = body.strip()
    while rest:
        eq = rest.find("=")
        if eq < 0:
            raise MapParseError(f"expected key=value near {rest[:20]!r}")
        key = rest[:eq].strip()
        if key not in keys:
            raise MapParseError(f"unknown key {key!r}, expected one of {sorted(keys)}")
        rest = rest[eq + 1 :].lstrip()
        if not rest.startswith("["):
            raise MapParseError(f"value for {key!r} must start with '['")
        depth = 0
        for i, ch in enumerate(rest):
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    out[key] = rest[: i + 1]
                    rest = rest[i + 1 :].strip()
                    break
        else:
            raise MapParseError(f"unbalanced brackets in value for {key!r}")
    missing = keys - out.keys()
    if missing:
        raise MapParseError(f"missing keys {sorted(missing)}")
    return out


def parse_map_spec(spec):
    """Build a map from its grammar string."""
    if ":" not in spec:
        raise MapParseError("map spec must look like 'family: key=[...] ...'")
    family, body = spec.split(":", 1)
    family = family.strip().lower()
    if family == "rational1d":
        kv = _parse_kv(body, {"num", "den"})
        return Rational1D(_parse_bracket(kv["num"]), _parse_bracket(kv["den"]))
    if family == "product2d":
        kv = _parse_kv(body, {"p", "q"})
        return Product2D(_parse_bracket(kv["p"]), _parse_bracket(kv["q"]))
    if family == "skew2d":
        kv = _parse_kv(body, {"p", "q"})
        return Skew2D(_parse_bracket(kv["p"]), _parse_bracket(kv["q"]))
    if family == "monomial2d":
        kv = _parse_kv(body, {"A"})
        rows = _parse_bracket(kv["A"])
        arr = np.asarray(rows)
        if np.any(arr != np.real(arr).astype(np.int64)):
            raise MapParseError("monomial exponents must be integers")
        return Monomial2D(np.real(arr).astype(np.int64))
    raise MapParseError(f"unknown map family {family!r}")
