"""Test-function library and norm estimation.

Observables are real functions of homogeneous coordinates, vectorized
over point arrays and allowed to take the value -inf on a pole set.
Built-in families cover Lipschitz, smooth, logarithmic-pole and
difference-type observables, plus combinators; a small grammar builds
them from text for the CLI.

On P^1 the gradient quasi-norm is computable: the positive current
i d phi ^ dbar phi is closed there, so its mass is the conformal
Dirichlet energy, evaluated on the octahedral sphere grid.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NormUnavailable, ObservableParseError, PolarMassWarning
from .projective import chordal_rows, normalize_rows, sample_fubini_study_batch
from .spheregrid import grid_for

POLE_DODGE = 1e-6
ZERO_ENERGY = 1e-24


@dataclass
class Observable:
    """A real-valued test function with metadata.

    ``kind`` is one of lipschitz, smooth, qpsh_log, dsh_diff, composed.
    ``dim`` restricts the observable to one projective space when set.
    ``pole_dist``, when present, estimates the distance to the pole set
    so that quadrature can dodge it.
    """

    fn: object
    kind: str
    spec: str
    dim: int | None = None
    params: dict = field(default_factory=dict)
    pole_dist: object = None
    cached_norms: dict = field(default_factory=dict)

    def __call__(self, coords):
        coords = np.asarray(coords, dtype=np.complex128)
        if self.dim is not None and coords.shape[-1] != self.dim + 1:
            raise NormUnavailable(
                f"observable {self.spec!r} needs dim {self.dim}, got {coords.shape[-1] - 1}"
            )
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return self.fn(coords)

    def eval(self, point):
        """Value at a single ProjPoint (may be -inf)."""
        return float(self(point.coords[None, :])[0])

    def __repr__(self):
        return f"Observable({self.spec!r}, kind={self.kind!r})"


# ---------------------------------------------------------------------------
# built-in families


def const(c):
    c = float(c)
    return Observable(lambda z: np.full(z.shape[:-1], c), "smooth", f"const({c:g})")


def chordal_re(i, j):
    i, j = int(i), int(j)
    dim = 2 if max(i, j) >= 2 else None
    return Observable(
        lambda z: 2.0 * np.real(z[..., i] * np.conj(z[..., j])),
        "smooth",
        f"chordal_re({i},{j})",
        dim=dim,
    )


def dist_to(point):
    pc = normalize_rows(np.asarray(point, dtype=np.complex128))
    dim = pc.shape[0] - 1
    return Observable(
        lambda z: chordal_rows(z, pc),
        "lipschitz",
        f"dist_to({_fmt_list(pc)})",
        dim=dim,
        params={"point": pc},
    )


def bump(point, r):
    pc = normalize_rows(np.asarray(point, dtype=np.complex128))
    r = float(r)
    if not 0 < r <= 1:
        raise ValueError("bump radius must lie in (0, 1]")

    def fn(z):
        t = (chordal_rows(z, pc) / r) ** 2
        inside = t < 1.0
        return np.where(inside, np.exp(1.0 - 1.0 / np.where(inside, 1.0 - t, 1.0)), 0.0)

    return Observable(fn, "smooth", f"bump({_fmt_list(pc)},{r:g})", dim=pc.shape[0] - 1)


def qpsh_log(coeffs):
    a = np.asarray(coeffs, dtype=np.complex128)
    scale = np.sqrt((np.abs(a) ** 2).sum())

    def fn(z):
        return np.log(np.abs(z @ a))

    def pole(z):
        return np.abs(z @ a) / scale

    return Observable(
        fn, "qpsh_log", f"qpsh_log({_fmt_args(a)})", dim=a.size - 1, pole_dist=pole
    )


def loglog(coeffs, m_shift):
    a = np.asarray(coeffs, dtype=np.complex128)
    m_shift = float(m_shift)
    scale = np.sqrt((np.abs(a) ** 2).sum())

    def fn(z):
        psi = np.log(np.abs(z @ a)) - m_shift
        return -np.log(-np.minimum(psi, -1.0))

    def pole(z):
        return np.abs(z @ a) / scale

    return Observable(
        fn,
        "qpsh_log",
        f"loglog({_fmt_args(a)};{m_shift:g})",
        dim=a.size - 1,
        pole_dist=pole,
    )


def cos_arg(k=1):
    """cos(k * arg(z0/z1)) on P^1; undefined at 0 and infinity."""
    k = int(k)

    def fn(z):
        u = z[..., 0] * np.conj(z[..., 1])
        r = np.abs(u)
        return np.real(u**k) / r**k

    return Observable(fn, "composed", f"cos_arg({k})", dim=1)


_CHI = {
    "abs": (np.abs, True),
    "pos": (lambda v: np.maximum(v, 0.0), False),
}


def lip_of(chi_spec, inner):
    """Post-composition with a 1-Lipschitz function of the real line."""
    chi_spec = chi_spec.strip()
    if chi_spec.startswith("clip(") and chi_spec.endswith(")"):
        lo, hi = (float(t) for t in chi_spec[5:-1].split(","))
        if not lo < hi:
            raise ObservableParseError("clip needs lo < hi")
        chi, keeps_pole = (lambda v: np.clip(v, lo, hi)), False
    elif chi_spec in _CHI:
        chi, keeps_pole = _CHI[chi_spec]
    else:
        raise ObservableParseError(f"unknown post-composition {chi_spec!r}")
    return Observable(
        lambda z: chi(inner(z)),
        "composed",
        f"lip_of({chi_spec}, {inner.spec})",
        dim=inner.dim,
        pole_dist=inner.pole_dist if keeps_pole else None,
        params={"inner_kind": inner.kind},
    )


def _combine_kind(a, b):
    kinds = {a.kind, b.kind}
    if kinds <= {"lipschitz", "smooth"}:
        return "lipschitz" if "lipschitz" in kinds else "smooth"
    if kinds <= {"qpsh_log", "dsh_diff"}:
        return "dsh_diff"
    return "composed"


def obs_sum(a, b):
    if a.dim is not None and b.dim is not None and a.dim != b.dim:
        raise ObservableParseError("summands live on different spaces")

    def pole(z):
        candidates = [p(z) for p in (a.pole_dist, b.pole_dist) if p is not None]
        return np.minimum.reduce(candidates) if candidates else None

    has_pole = a.pole_dist is not None or b.pole_dist is not None
    return Observable(
        lambda z: a(z) + b(z),
        _combine_kind(a, b),
        f"sum({a.spec}, {b.spec})",
        dim=a.dim if a.dim is not None else b.dim,
        pole_dist=pole if has_pole else None,
    )


def obs_scale(c, inner):
    c = float(c)
    kind = inner.kind
    if c < 0 and kind == "qpsh_log":
        kind = "dsh_diff"
    return Observable(
        lambda z: c * inner(z),
        kind,
        f"scale({c:g}, {inner.spec})",
        dim=inner.dim,
        pole_dist=inner.pole_dist,
    )


# ---------------------------------------------------------------------------
# grammar
#
#   const(c) | chordal_re(i,j) | dist_to([..]) | bump([..], r)
#   qpsh_log(a0,a1[,a2]) | loglog(a0,a1[,a2]; M) | cos_arg(k)
#   lip_of(clip(lo,hi)|abs|pos, <spec>) | sum(<spec>, <spec>) | scale(c, <spec>)


def _fmt_complex(c):
    c = complex(c)
    if c.imag == 0:
        return f"{c.real:g}"
    return f"{c.real:g}{c.imag:+g}j"


def _fmt_list(values):
    return "[" + ",".join(_fmt_complex(v) for v in values) + "]"


def _fmt_args(values):
    return ",".join(_fmt_complex(v) for v in values)


def _match_paren(s, start):
    depth = 0
    for i in range(start, len(s)):
        if s[i] == "(":
            depth += 1
        elif s[i] == ")":
            depth -= 1
            if depth == 0:
                return i
    raise ObservableParseError("unbalanced parentheses", position=start)


def _split_args(s, offset, sep=","):
    parts, depth, cur, starts = [], 0, [], [offset]
    for i, ch in enumerate(s):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
            starts.append(offset + i + 1)
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts, starts


def _parse_number(tok, pos):
    try:
        c = complex(tok.replace(" ", ""))
    except ValueError:
        raise ObservableParseError(f"bad number {tok.strip()!r}", position=pos) from None
    return c


def _parse_int(tok, pos):
    try:
        return int(tok.strip())
    except ValueError:
        raise ObservableParseError(f"bad integer {tok.strip()!r}", position=pos) from None


def _parse_float(tok, pos):
    try:
        return float(tok.strip())
    except ValueError:
        raise ObservableParseError(f"bad real number {tok.strip()!r}", position=pos) from None


def _parse_point(tok, pos):
    tok = tok.strip()
    if not (tok.startswith("[") and tok.endswith("]")):
        raise ObservableParseError(f"expected [..] point, got {tok!r}", position=pos)
    return [_parse_number(t, pos) for t in tok[1:-1].split(",")]


def make_observable(spec):
    """Build an observable from its grammar string."""
    obs, end = _parse_spec(spec, 0)
    if spec[end:].strip():
        raise ObservableParseError(f"trailing input {spec[end:].strip()!r}", position=end)
    return obs


def _parse_spec(s, pos):
    while pos < len(s) and s[pos].isspace():
        pos += 1
    start = pos
    while pos < len(s) and (s[pos].isalnum() or s[pos] == "_"):
        pos += 1
    name = s[start:pos]
    if not name:
        raise ObservableParseError("expected an observable name", position=start)
    if pos >= len(s) or s[pos] != "(":
        raise ObservableParseError(f"expected '(' after {name!r}", position=pos)
    close = _match_paren(s, pos)
    body = s[pos + 1 : close]
    inner_off = pos + 1
    end = close + 1

    if name == "const":
        return const(_parse_number(body, inner_off).real), end
    if name == "chordal_re":
        toks, starts = _split_args(body, inner_off)
        if len(toks) != 2:
            raise ObservableParseError("chordal_re takes two indices", position=inner_off)
        return chordal_re(_parse_int(toks[0], starts[0]), _parse_int(toks[1], starts[1])), end
    if name == "dist_to":
        return dist_to(_parse_point(body, inner_off)), end
    if name == "bump":
        toks, starts = _split_args(body, inner_off)
        if len(toks) != 2:
            raise ObservableParseError("bump takes a point and a radius", position=inner_off)
        return bump(_parse_point(toks[0], starts[0]), _parse_float(toks[1], starts[1])), end
    if name == "qpsh_log":
        toks, starts = _split_args(body, inner_off)
        if len(toks) not in (2, 3):
            raise ObservableParseError("qpsh_log takes 2 or 3 coefficients", position=inner_off)
        return qpsh_log([_parse_number(t, p) for t, p in zip(toks, starts)]), end
    if name == "loglog":
        halves = body.split(";")
        if len(halves) != 2:
            raise ObservableParseError("loglog needs '; M' after coefficients", position=inner_off)
        toks, starts = _split_args(halves[0], inner_off)
        if len(toks) not in (2, 3):
            raise ObservableParseError("loglog takes 2 or 3 coefficients", position=inner_off)
        coeffs = [_parse_number(t, p) for t, p in zip(toks, starts)]
        return loglog(coeffs, _parse_float(halves[1], inner_off)), end
    if name == "cos_arg":
        return cos_arg(_parse_int(body, inner_off)), end
    if name == "lip_of":
        toks, starts = _split_args(body, inner_off)
        if len(toks) != 2:
            raise ObservableParseError(
                "lip_of takes a post-composition and a spec", position=inner_off
            )
        inner, _ = _parse_spec(toks[1].strip(), 0)
        return lip_of(toks[0].strip(), inner), end
    if name == "sum":
        toks, starts = _split_args(body, inner_off)
        if len(toks) != 2:
            raise ObservableParseError("sum takes two specs", position=inner_off)
        a, _ = _parse_spec(toks[0].strip(), 0)
        b, _ = _parse_spec(toks[1].strip(), 0)
        return obs_sum(a, b), end
    if name == "scale":
        toks, starts = _split_args(body, inner_off)
        if len(toks) != 2:
            raise ObservableParseError("scale takes a factor and a spec", position=inner_off)
        inner, _ = _parse_spec(toks[1].strip(), 0)
        return obs_scale(_parse_number(toks[0], starts[0]).real, inner), end
    raise ObservableParseError(f"unknown observable {name!r}", position=start)


# ---------------------------------------------------------------------------
# norm estimation


def lipschitz_estimate(phi, pairs, rng, dim=None):
    """Lower-bound estimate of the Lipschitz constant.

    Takes the best difference quotients over random point pairs and
    refines the ten best by random perturbation hill-climbing.  Excluded
    for pole-carrying observables, whose constant is infinite.
    """
    if phi.kind == "qpsh_log":
        raise NormUnavailable("Lipschitz constant of a pole-carrying observable is infinite")
    d = phi.dim if phi.dim is not None else (dim if dim is not None else 1)
    x = sample_fubini_study_batch(rng, d, pairs)
    y = sample_fubini_study_batch(rng, d, pairs)

    def quotient(xs, ys):
        dist = chordal_rows(xs, ys)
        ok = dist > 1e-9
        vals = np.abs(phi(xs) - phi(ys))
        return np.where(ok, vals / np.where(ok, dist, 1.0), 0.0)

    q = quotient(x, y)
    top = np.argsort(q)[-10:]
    bx, by, bq = x[top].copy(), y[top].copy(), q[top].copy()
    sigma = np.full(bx.shape[0], 0.3)
    for _ in range(80):
        if np.all(sigma < 1e-8):
            break
        improved = np.zeros(bx.shape[0], dtype=bool)
        for move_x, move_y in ((True, False), (False, True), (True, True)):
            gx = rng.standard_normal(bx.shape) + 1j * rng.standard_normal(bx.shape)
            gy = rng.standard_normal(by.shape) + 1j * rng.standard_normal(by.shape)
            cx = normalize_rows(bx + sigma[:, None] * gx) if move_x else bx
            cy = normalize_rows(by + sigma[:, None] * gy) if move_y else by
            cq = quotient(cx, cy)
            better = cq > bq
            bx[better], by[better], bq[better] = cx[better], cy[better], cq[better]
            improved |= better
        sigma = np.where(improved, sigma, sigma * 0.6)
    est = float(bq.max(initial=0.0))
    phi.cached_norms["lip_est"] = est
    phi.cached_norms["lip_est_is_lower_bound"] = True
    return est


def _grid_values(phi, grid):
    vvals = phi(grid.p1_verts)
    cvals = phi(grid.p1_centroids)
    exclude = ~np.isfinite(cvals)
    exclude |= ~np.isfinite(vvals)[grid.faces].any(axis=1)
    if phi.pole_dist is not None:
        near = phi.pole_dist(grid.p1_centroids) < POLE_DODGE
        near |= (phi.pole_dist(grid.p1_verts) < POLE_DODGE)[grid.faces].any(axis=1)
        exclude |= near
    return vvals, cvals, exclude


def star_norm_p1(phi, grid_n):
    """|m(phi)| plus the square root of the conformal gradient mass on P^1.

    The gradient term integrates the facet Dirichlet energy of the
    linear interpolant over the sphere grid; cells touching a pole are
    excluded and their area recorded in ``cached_norms['star_meta']``.
    """
    if phi.dim not in (None, 1):
        raise NormUnavailable("gradient quasi-norm is only computed on P^1")
    grid = grid_for(grid_n)
    vvals, cvals, exclude = _grid_values(phi, grid)
    keep = ~exclude
    area = grid.areas[keep].sum()
    if area <= 0:
        raise NormUnavailable("every grid cell touches the pole set")
    mean = float((grid.areas[keep] * cvals[keep]).sum() / area)
    grads = grid.face_gradients(np.where(np.isfinite(vvals), vvals, 0.0))
    energy = float((np.sum(grads**2, axis=1)[keep] * grid.areas[keep]).sum())
    value = abs(mean) + np.sqrt(0.5 * energy)
    excluded_frac = float(grid.areas[exclude].sum() / (4.0 * np.pi))
    if excluded_frac > 0.01:
        warnings.warn(f"{excluded_frac:.1%} of grid area excluded at poles", PolarMassWarning)
    phi.cached_norms["star_est"] = value
    phi.cached_norms["mean_est"] = mean
    phi.cached_norms["star_meta"] = {
        "grid_cells": grid.n_faces,
        "excluded_area_frac": excluded_frac,
    }
    return value


def grid_lp_norm(phi, grid_n, p=2, centered=False):
    """Area-weighted L^p norm over the grid, optionally after centering."""
    grid = grid_for(grid_n)
    _, cvals, exclude = _grid_values(phi, grid)
    keep = ~exclude
    area = grid.areas[keep].sum()
    vals = cvals[keep]
    if centered:
        vals = vals - (grid.areas[keep] * vals).sum() / area
    return float(((grid.areas[keep] * np.abs(vals) ** p).sum() / area) ** (1.0 / p))


def poincare_sobolev_check(phis, grid_n, p=2):
    """Ratios of centered L^p norms to the L^2 norm of the differential.

    Both integrals use the normalized grid measure, so the max ratio is
    an empirical constant for the mean-value inequality on P^1.  Zero
    gradient observables are skipped.
    """
    grid = grid_for(grid_n)
    ratios, skipped = {}, []
    for phi in phis:
        vvals, cvals, exclude = _grid_values(phi, grid)
        keep = ~exclude
        area = grid.areas[keep].sum()
        grads = grid.face_gradients(np.where(np.isfinite(vvals), vvals, 0.0))
        energy = float((np.sum(grads**2, axis=1)[keep] * grid.areas[keep]).sum() / area)
        if energy < ZERO_ENERGY:
            skipped.append(phi.spec)
            continue
        mean = (grid.areas[keep] * cvals[keep]).sum() / area
        lp = float(((grid.areas[keep] * np.abs(cvals[keep] - mean) ** p).sum() / area) ** (1.0 / p))
        ratios[phi.spec] = lp / np.sqrt(energy)
    return {
        "p": p,
        "grid_cells": grid.n_faces,
        "ratios": ratios,
        "max_ratio": max(ratios.values()) if ratios else float("nan"),
        "skipped": skipped,
    }
