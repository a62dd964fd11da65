"""Pullback averaging operator and its mean-value decomposition.

The operator averages an observable over the d_t preimages of a point.
Its iterates are evaluated by depth-n backward trees rooted at quadrature
nodes: exact expansion while the width budget allows, then uniform branch
subsampling with reweighting, which keeps the estimates unbiased.

The decomposition splits an observable into the telescoping constants
c_0 = m(phi), c_{n+1} = m(L phi_n) with remainders phi_n of zero mean;
their sum c_phi is the pairing of phi with the equilibrium measure, and
the test suite cross-checks it against direct sampling.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .dynamics import check_hypothesis
from .errors import (
    BudgetExceeded,
    HypothesisViolated,
    IndeterminacyPoint,
    PolarMassWarning,
    PolarValue,
)
from .fibers import fiber, preimages_batch
from .measure import integrate
from .projective import sample_fubini_study_batch

log = logging.getLogger(__name__)

WIDTH_CAP = 10**7
_NODE_CHUNK = 512


def apply_pf(dyn_map, phi, z):
    """Multiplicity-weighted fiber average of ``phi`` at ``z``."""
    fib = fiber(dyn_map, z)
    vals = phi(fib.points)
    if not np.all(np.isfinite(vals)):
        raise PolarValue(f"observable {phi.spec!r} undefined on the fiber of {z!r}")
    return float((vals * fib.multiplicities).sum() / fib.multiplicities.sum())


def lebesgue_mean(phi, nodes, rng, dim=None):
    """Monte Carlo mean against the normalized Fubini-Study volume.

    Returns (mean, stderr) with sqrt(n) batch-means stderr; pole values
    are dropped and counted as in sample integration.
    """
    d = phi.dim if phi.dim is not None else (dim if dim is not None else 1)
    pts = sample_fubini_study_batch(rng, d, nodes)
    vals = phi(pts)
    keep = np.isfinite(vals)
    if keep.sum() < nodes * 0.99:
        warnings.warn(
            f"{1 - keep.mean():.1%} of quadrature nodes at observable poles", PolarMassWarning
        )
    v = vals[keep]
    b = max(2, int(np.sqrt(v.size)))
    size = v.size // b
    bm = v[: b * size].reshape(b, size).mean(axis=1)
    return float(v.mean()), float(bm.std(ddof=1) / np.sqrt(b))


def _tree_chunk(dyn_map, phi, pts, depth, gen, cap):
    """Per-node estimates of (L^n phi)(x_i) for n = 0..depth, one chunk."""
    m_chunk = pts.shape[0]
    d_t = dyn_map.topological_degree
    out = np.empty((depth + 1, m_chunk))
    node_idx = np.arange(m_chunk)
    wts = np.ones(m_chunk)
    vals = phi(pts)
    _require_finite(vals, phi)
    out[0] = vals
    for n in range(1, depth + 1):
        k_cur = pts.shape[0]
        branches, valid = preimages_batch(dyn_map, pts)
        if not np.all(valid):
            raise IndeterminacyPoint(
                f"{int((~valid).sum())} tree points hit indeterminacy at depth {n}"
            )
        if k_cur * d_t <= cap:
            pts = branches.reshape(k_cur * d_t, -1)
            wts = np.repeat(wts / d_t, d_t)
            node_idx = np.repeat(node_idx, d_t)
        else:
            k_sub = max(1, int(cap // k_cur))
            pick = gen.integers(0, d_t, size=(k_cur, k_sub))
            pts = np.take_along_axis(branches, pick[:, :, None], axis=1).reshape(
                k_cur * k_sub, -1
            )
            wts = np.repeat(wts / k_sub, k_sub)
            node_idx = np.repeat(node_idx, k_sub)
        vals = phi(pts)
        _require_finite(vals, phi)
        out[n] = np.bincount(node_idx, weights=wts * vals, minlength=m_chunk)
    return out


def _require_finite(vals, phi):
    if not np.all(np.isfinite(vals)):
        raise PolarValue(f"observable {phi.spec!r} undefined at a tree point")


def pf_tree_table(dyn_map, phi, node_pts, depth, seed, width_cap=WIDTH_CAP, key=0):
    """Table T[n, i] of iterated-operator estimates at each node.

    Nodes are processed in fixed chunks whose subsampling streams are
    keyed by the chunk index; results do not depend on scheduling.
    """
    m_total = node_pts.shape[0]
    if width_cap < m_total:
        raise BudgetExceeded(f"width cap {width_cap} below node count {m_total}")
    out = np.empty((depth + 1, m_total))
    for ci, lo in enumerate(range(0, m_total, _NODE_CHUNK)):
        hi = min(lo + _NODE_CHUNK, m_total)
        gen = _rng.stream(seed, 7, key, ci)
        cap = max(hi - lo, width_cap * (hi - lo) // m_total)
        out[:, lo:hi] = _tree_chunk(dyn_map, phi, node_pts[lo:hi], depth, gen, cap)
    return out


def _batch_stderr(values):
    b = max(2, int(np.sqrt(values.size)))
    size = values.size // b
    bm = values[: b * size].reshape(b, size).mean(axis=1)
    return float(bm.std(ddof=1) / np.sqrt(b))


@dataclass
class DecompositionTrace:
    """The constants c_n, tail bookkeeping b_n, and remainder norms."""

    c: np.ndarray
    c_stderr: np.ndarray
    b: np.ndarray
    phi_tail_l2: np.ndarray
    phi_tail_sup: np.ndarray
    c_phi: float
    quadrature_meta: dict

    def __post_init__(self):
        assert abs(self.c_phi - float(self.c.sum())) <= 1e-9 * max(1.0, abs(self.c_phi))
        assert self.b[-1] == 0.0


def decompose(dyn_map, phi, n_terms, nodes, seed, width_cap=WIDTH_CAP):
    """Estimate c_0..c_N, the tail constants b_n, and c_phi.

    Common random numbers across n (one tree per quadrature node serves
    every depth) keep the variance of the differences c_n = S_n - S_{n-1}
    proportional to the decaying remainder, so the geometric decay stays
    visible above Monte Carlo noise.
    """
    ok, margin = check_hypothesis(dyn_map)
    if not ok:
        raise HypothesisViolated(
            f"d_t does not dominate: margin {margin:.6g}", margin=margin
        )
    node_pts = sample_fubini_study_batch(_rng.stream(seed, 3), dyn_map.dim, nodes)
    table = pf_tree_table(dyn_map, phi, node_pts, n_terms, seed, width_cap)

    c = np.empty(n_terms + 1)
    c_stderr = np.empty(n_terms + 1)
    c[0] = table[0].mean()
    c_stderr[0] = _batch_stderr(table[0])
    for n in range(1, n_terms + 1):
        diff = table[n] - table[n - 1]
        c[n] = diff.mean()
        c_stderr[n] = _batch_stderr(diff)
    partial = np.cumsum(c)
    c_phi = float(partial[-1])
    b = partial - c_phi

    tail_l2 = np.empty(n_terms + 1)
    tail_sup = np.empty(n_terms + 1)
    for n in range(n_terms + 1):
        rem = table[n] - partial[n]
        tail_l2[n] = np.sqrt(np.mean(rem**2))
        tail_sup[n] = np.abs(rem).max()

    mags = np.abs(c[2:])
    if mags.size >= 2 and np.any(np.diff(mags) > 3.0 * (c_stderr[2:][1:] + c_stderr[2:][:-1])):
        log.warning("mean-value constants |c_n| not decreasing beyond n=2 (soft check)")

    meta = {"scheme": "fubini_study_mc", "nodes": int(nodes), "seed": int(seed)}
    return DecompositionTrace(c, c_stderr, b, tail_l2, tail_sup, c_phi, meta)


@dataclass
class GordinSeries:
    """L^1(mu) norms of operator iterates of a centered observable."""

    n: np.ndarray
    terms: np.ndarray
    stderr: np.ndarray
    partial_sums: np.ndarray
    centering: float
    centering_stderr: float


def gordin_series(dyn_map, phi, mu, n_terms, seed=0, width_cap=WIDTH_CAP):
    """Estimates of the summability series for the martingale criterion.

    The observable is centered on its sample mean first; the centering
    uncertainty is folded into each term's stderr.
    """
    center, center_se = integrate(mu, phi)
    table = pf_tree_table(dyn_map, phi, mu.points, n_terms, seed, width_cap, key=1)
    w = mu.weights
    terms = np.empty(n_terms + 1)
    stderr = np.empty(n_terms + 1)
    for n in range(n_terms + 1):
        vals = np.abs(table[n] - center)
        terms[n] = float((w * vals).sum())
        se = 0.0 if mu.provenance.get("method") == "tree" else _batch_stderr(vals)
        stderr[n] = float(np.hypot(se, center_se))
    return GordinSeries(
        np.arange(n_terms + 1), terms, stderr, np.cumsum(terms), center, center_se
    )
