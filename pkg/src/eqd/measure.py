"""Empirical approximations of invariant and reference measures.

Two routes to the equilibrium measure are provided and cross-checked in
the test suite: exact normalized-pullback trees of a point mass (small
depth, exact atoms and weights) and backward-orbit Monte Carlo, which
keeps the endpoint of independent random inverse-branch walks.  The
normalized Fubini-Study volume doubles as the Lebesgue reference.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .dynamics import map_hash
from .errors import ExceptionalStart, IndeterminacyPoint, PolarMassWarning, TreeTooLarge
from .fibers import fiber, random_preimages_batch
from .projective import ProjPoint, sample_fubini_study_batch

TREE_BUDGET = 10**6
COLLAPSE_TOL = 1e-9
COLLAPSE_STEPS = 3

_REQUIRED_PROVENANCE = ("method", "depth", "burn_in", "seed", "count", "map_hash", "dim")


@dataclass
class SampleSet:
    """Weighted point cloud standing in for a measure.

    ``points`` holds canonical homogeneous rows, ``weights`` sum to one.
    Provenance records how the cloud was produced so that runs can be
    reproduced bit for bit.
    """

    points: np.ndarray
    weights: np.ndarray
    provenance: dict

    def __post_init__(self):
        missing = [k for k in _REQUIRED_PROVENANCE if k not in self.provenance]
        if missing:
            raise ValueError(f"incomplete provenance, missing {missing}")
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total}, expected 1")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1] - 1

    @property
    def uniform(self):
        w = self.weights
        return bool(np.all(w == w[0]))


def fubini_study_set(dim, count, seed):
    """Monte Carlo stand-in for the normalized Lebesgue measure."""
    pts = sample_fubini_study_batch(_rng.stream(seed, 0), dim, count)
    prov = {
        "method": "fubini_study",
        "depth": 0,
        "burn_in": 0,
        "seed": int(seed),
        "count": int(count),
        "map_hash": "none",
        "dim": dim,
    }
    return SampleSet(pts, np.full(count, 1.0 / count), prov)


def pullback_tree(dyn_map, a, n, max_atoms=TREE_BUDGET):
    """Exact atoms of the n-th normalized pullback of a point mass at ``a``.

    Weights are multiplicity / d_t^n; fiber errors are re-raised with the
    branch path that led to them.
    """
    d_t = dyn_map.topological_degree
    if d_t**n > max_atoms:
        raise TreeTooLarge(f"d_t^n = {d_t**n} exceeds the {max_atoms} atom budget")
    pts = a.coords[None, :]
    mults = np.ones(1, dtype=np.int64)
    parents = []
    for level in range(n):
        nxt_pts, nxt_mults, nxt_parent = [], [], []
        for i in range(pts.shape[0]):
            try:
                fib = fiber(dyn_map, ProjPoint(pts[i]))
            except Exception as exc:
                path = [i]
                for par in reversed(parents):
                    path.append(int(par[path[-1]]))
                raise type(exc)(
                    f"{exc} (level {level}, branch path {list(reversed(path))})"
                ) from exc
            nxt_pts.append(fib.points)
            nxt_mults.append(fib.multiplicities * mults[i])
            nxt_parent.append(np.full(fib.points.shape[0], i, dtype=np.int64))
        parents.append(np.concatenate(nxt_parent))
        pts = np.concatenate(nxt_pts, axis=0)
        mults = np.concatenate(nxt_mults)
    weights = mults.astype(np.float64) / float(d_t) ** n
    prov = {
        "method": "tree",
        "depth": int(n),
        "burn_in": 0,
        "seed": 0,
        "count": pts.shape[0],
        "map_hash": map_hash(dyn_map),
        "dim": dyn_map.dim,
    }
    return SampleSet(pts, weights, prov)


def backward_orbit_sample(dyn_map, a, burn_in, count, seed):
    """Endpoints of ``count`` independent inverse-branch walks from ``a``.

    Walks run in fixed-size chunks whose random streams are keyed by the
    chunk index, so the result is independent of scheduling.  If more
    than 1% of walks repeatedly see their whole fiber collapse to one
    point, the start is flagged as (numerically) exceptional.
    """
    m = dyn_map.dim + 1
    out = np.empty((count, m), dtype=np.complex128)
    n_flagged = 0
    for chunk, lo in enumerate(range(0, count, _rng.CHUNK)):
        hi = min(lo + _rng.CHUNK, count)
        gen = _rng.stream(seed, chunk)
        cur = np.tile(a.coords, (hi - lo, 1))
        consec = np.zeros(hi - lo, dtype=np.int64)
        flagged = np.zeros(hi - lo, dtype=bool)
        for step in range(burn_in):
            cur, spread, valid = random_preimages_batch(dyn_map, cur, gen)
            if not np.all(valid):
                raise IndeterminacyPoint(
                    f"{int((~valid).sum())} walks hit indeterminacy", step=step
                )
            consec = np.where(spread < COLLAPSE_TOL, consec + 1, 0)
            flagged |= consec >= COLLAPSE_STEPS
        out[lo:hi] = cur
        n_flagged += int(flagged.sum())
    if n_flagged > 0.01 * count:
        raise ExceptionalStart(
            f"{n_flagged}/{count} walks collapsed onto a superattracting inverse cycle"
        )
    prov = {
        "method": "backward",
        "depth": int(burn_in),
        "burn_in": int(burn_in),
        "seed": int(seed),
        "count": int(count),
        "map_hash": map_hash(dyn_map),
        "dim": dyn_map.dim,
    }
    return SampleSet(out, np.full(count, 1.0 / count), prov)


def integrate(sample, phi):
    """Weighted mean of an observable over a sample set, with stderr.

    Points where the observable is -inf (poles) are dropped and counted;
    more than 1% of dropped mass raises a PolarMassWarning.  The stderr
    comes from sqrt(N) batch means for Monte Carlo sets and is zero for
    exact trees.
    """
    vals = phi(sample.points)
    keep = np.isfinite(vals)
    dropped = 1.0 - float(sample.weights[keep].sum())
    if dropped > 0.01:
        warnings.warn(
            f"{dropped:.1%} of sample mass at observable poles", PolarMassWarning
        )
    w = sample.weights[keep]
    v = vals[keep]
    mean = float((w * v).sum() / w.sum())
    if sample.provenance.get("method") == "tree":
        return mean, 0.0
    k = v.size
    b = max(1, int(np.sqrt(k)))
    size = k // b
    if size < 1 or b < 2:
        return mean, float("inf")
    bm = v[: b * size].reshape(b, size).mean(axis=1)
    stderr = float(bm.std(ddof=1) / np.sqrt(b))
    return mean, stderr


# ---------------------------------------------------------------------------
# sample set files
#
# header:  EQD1 <dim> <count> <method> <depth> <seed> <maphash>
# lines:   w re0 im0 re1 im1 [re2 im2]     (w column is '*' when uniform)


def _fmt(x):
    return f"{x:.17g}"


def save_sample_set(sample, path):
    lines = [
        "EQD1 {dim} {count} {method} {depth} {seed} {maphash}".format(
            dim=sample.dim,
            count=len(sample),
            method=sample.provenance["method"],
            depth=sample.provenance["depth"],
            seed=sample.provenance["seed"],
            maphash=sample.provenance["map_hash"],
        )
    ]
    uniform = sample.uniform
    for w, row in zip(sample.weights, sample.points):
        cols = ["*" if uniform else _fmt(w)]
        for c in row:
            cols.append(_fmt(c.real))
            cols.append(_fmt(c.imag))
        lines.append(" ".join(cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_sample_set(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 7 or header[0] != "EQD1":
            raise ValueError(f"{path}: not an EQD1 sample file")
        dim, count = int(header[1]), int(header[2])
        method, depth, seed, maphash = header[3], int(header[4]), int(header[5]), header[6]
        pts = np.empty((count, dim + 1), dtype=np.complex128)
        wts = np.empty(count)
        for i in range(count):
            cols = fh.readline().split()
            wts[i] = np.nan if cols[0] == "*" else float(cols[0])
            vals = [float(c) for c in cols[1:]]
            pts[i] = [complex(vals[2 * j], vals[2 * j + 1]) for j in range(dim + 1)]
    if np.all(np.isnan(wts)):
        wts = np.full(count, 1.0 / count)
    prov = {
        "method": method,
        "depth": depth,
        "burn_in": depth if method == "backward" else 0,
        "seed": seed,
        "count": count,
        "map_hash": maphash,
        "dim": dim,
    }
    return SampleSet(pts, wts, prov)
