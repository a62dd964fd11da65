"""Config-driven experiment runner.

One plain-text config file (key = value sections) describes a map, named
observables, a sampler and a set of tasks; ``eqd run`` executes the
tasks in dependency order and writes CSV/JSON artifacts plus a manifest
with content hashes.  Identical configs produce byte-identical numeric
outputs regardless of worker count, because every random stream is keyed
by task-local indices, never by scheduling.

Exit codes: 0 success, 2 config error, 3 degree hypothesis violated,
4 numerical failure in some task.
"""

import argparse
import configparser
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import check_hypothesis, degrees, parse_map_spec
from .dynamics import _parse_bracket  # map-grammar bracket lists, reused for points
from .errors import ConfigError, EqdError, HypothesisViolated, InsufficientSignal, NormUnavailable
from .measure import (
    backward_orbit_sample,
    fubini_study_set,
    integrate,
    load_sample_set,
    pullback_tree,
    save_sample_set,
)
from .observables import lipschitz_estimate, make_observable, star_norm_p1
from .projective import normalize
from .stats import birkhoff_clt, correlation_series, decay_fit, mixing_bound_check
from .transfer import decompose
from . import rng as _rng

TASK_ORDER = ("degrees", "sample", "norms", "correlate", "transfer", "clt")
_REQUIRED = {
    "sample": ("method",),
    "norms": ("observables", "grid_n"),
    "correlate": ("psi", "phi", "n_max"),
    "transfer": ("phi", "n_terms", "nodes"),
    "clt": ("phi", "n_block", "trajectories"),
    "degrees": (),
}


def _fmt(x):
    return f"{float(x):.17g}"


@dataclass
class ExperimentConfig:
    map_spec: str
    seed: int
    tasks: list
    observables: dict
    params: dict
    out_dir: str
    raw_text: str = field(default="", repr=False)

    @classmethod
    def from_file(cls, path):
        text = Path(path).read_text()
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
        if "experiment" not in cp or "map" not in cp:
            raise ConfigError("config needs [experiment] and [map] sections")
        exp = cp["experiment"]
        if "seed" not in exp:
            raise ConfigError("[experiment] seed is mandatory")
        try:
            seed = int(exp["seed"])
        except ValueError as exc:
            raise ConfigError(f"seed must be an integer: {exp['seed']!r}") from exc
        tasks = [t.strip() for t in exp.get("tasks", "").split(",") if t.strip()]
        if not tasks:
            raise ConfigError("[experiment] tasks is empty")
        for t in tasks:
            if t not in TASK_ORDER:
                raise ConfigError(f"unknown task {t!r}; known: {', '.join(TASK_ORDER)}")
        if "spec" not in cp["map"]:
            raise ConfigError("[map] spec is missing")
        observables = dict(cp["observables"]) if "observables" in cp else {}
        params = {t: dict(cp[t]) if t in cp else {} for t in tasks}
        for t in tasks:
            missing = [k for k in _REQUIRED[t] if k not in params[t]]
            if missing:
                raise ConfigError(f"task [{t}] missing parameters: {', '.join(missing)}")
        cfg = cls(
            map_spec=cp["map"]["spec"],
            seed=seed,
            tasks=tasks,
            observables=observables,
            params=params,
            out_dir=exp.get("out", "eqd_out"),
            raw_text=text,
        )
        cfg.validate_sampler()
        return cfg

    def validate_sampler(self):
        if "sample" not in self.tasks:
            return
        p = self.params["sample"]
        method = p["method"]
        need = {
            "backward": ("start", "burn_in", "count"),
            "tree": ("start", "depth"),
            "fubini_study": ("dim", "count"),
        }
        if method not in need:
            raise ConfigError(f"unknown sampler method {method!r}")
        missing = [k for k in need[method] if k not in p]
        if missing:
            raise ConfigError(f"sampler method {method!r} missing: {', '.join(missing)}")


def _parse_point_cfg(text):
    vals = _parse_bracket(text.strip())
    return normalize(np.asarray(vals, dtype=np.complex128))


def _json_dump(obj, path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Runner:
    def __init__(self, cfg, out_dir, verbose=False):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.verbose = verbose
        self.dyn_map = parse_map_spec(cfg.map_spec)
        self.obs = {name: make_observable(spec) for name, spec in cfg.observables.items()}
        self.mu = None
        self.norms = {}
        self.report = {}

    def say(self, msg):
        if self.verbose:
            print(msg, file=sys.stderr)

    def observable(self, name):
        if name not in self.obs:
            raise ConfigError(f"observable {name!r} not defined in [observables]")
        return self.obs[name]

    # ---- tasks ----------------------------------------------------------

    def task_degrees(self):
        rep = degrees(self.dyn_map).as_dict()
        path = self.out / "degrees.json"
        _json_dump(rep, path)
        return [path]

    def task_sample(self):
        p = self.cfg.params["sample"]
        method = p["method"]
        if method == "backward":
            sample = backward_orbit_sample(
                self.dyn_map,
                _parse_point_cfg(p["start"]),
                int(p["burn_in"]),
                int(p["count"]),
                self.cfg.seed,
            )
        elif method == "tree":
            sample = pullback_tree(self.dyn_map, _parse_point_cfg(p["start"]), int(p["depth"]))
        else:
            sample = fubini_study_set(int(p["dim"]), int(p["count"]), self.cfg.seed)
        self.mu = sample
        path = self.out / "samples.eqd"
        save_sample_set(sample, path)
        return [path]

    def task_norms(self):
        p = self.cfg.params["norms"]
        grid_n = int(p["grid_n"])
        pairs = int(p.get("pairs", 400))
        rows = []
        for name in (t.strip() for t in p["observables"].split(",")):
            ob = self.observable(name)
            entry = {"name": name, "spec": ob.spec, "kind": ob.kind}
            try:
                entry["star_norm"] = star_norm_p1(ob, grid_n)
            except NormUnavailable as exc:
                entry["star_norm"] = float("nan")
                entry["star_norm_note"] = str(exc)
            try:
                entry["lip_estimate"] = lipschitz_estimate(
                    ob, pairs, _rng.stream(self.cfg.seed, 4), dim=self.dyn_map.dim
                )
            except NormUnavailable as exc:
                entry["lip_estimate"] = float("nan")
                entry["lip_note"] = str(exc)
            if self.mu is not None:
                vals = ob(self.mu.points)
                entry["sup_on_sample"] = float(np.abs(vals[np.isfinite(vals)]).max())
            rows.append(entry)
            self.norms[name] = entry
        path = self.out / "norms.json"
        _json_dump(rows, path)
        return [path]

    def task_correlate(self):
        if self.mu is None:
            raise ConfigError("correlate needs the sample task")
        p = self.cfg.params["correlate"]
        psi = self.observable(p["psi"])
        phi = self.observable(p["phi"])
        series = correlation_series(self.dyn_map, self.mu, psi, phi, int(p["n_max"]))
        star = self.norms.get(p["phi"], {}).get("star_norm", float("nan"))
        psi_sup = series.meta["psi_sup_sample"]
        summary = {"psi": psi.spec, "phi": phi.spec, "phi_star_norm": star, "psi_sup": psi_sup}
        try:
            check = mixing_bound_check(series, self.dyn_map, star, psi_sup)
            bounds, ratios = check.bounds, check.ratios
            summary["a_emp"] = check.a_emp
            summary["exponent_violation"] = check.exponent_violation
        except NormUnavailable:
            bounds = np.full_like(series.corr, np.nan)
            ratios = np.full_like(series.corr, np.nan)
        try:
            fit = decay_fit(series, seed=self.cfg.seed)
            summary["decay_rate"] = fit.rate
            summary["decay_rate_ci"] = list(fit.rate_ci)
            summary["floor_index"] = fit.floor_index
        except InsufficientSignal as exc:
            summary["decay_rate"] = None
            summary["insufficient_signal"] = str(exc)
        lines = ["n,corr,stderr,bound,ratio"]
        for i, n in enumerate(series.n):
            lines.append(
                f"{n},{_fmt(series.corr[i])},{_fmt(series.stderr[i])},"
                f"{_fmt(bounds[i])},{_fmt(ratios[i])}"
            )
        csv_path = self.out / "correlations.csv"
        csv_path.write_text("\n".join(lines) + "\n")
        json_path = self.out / "correlate.json"
        _json_dump(summary, json_path)
        return [csv_path, json_path]

    def task_transfer(self):
        p = self.cfg.params["transfer"]
        phi = self.observable(p["phi"])
        trace = decompose(
            self.dyn_map, phi, int(p["n_terms"]), int(p["nodes"]), self.cfg.seed
        )
        lines = ["n,c_n,b_n,phi_tail_L2,phi_tail_sup,stderr"]
        for n in range(trace.c.size):
            lines.append(
                f"{n},{_fmt(trace.c[n])},{_fmt(trace.b[n])},{_fmt(trace.phi_tail_l2[n])},"
                f"{_fmt(trace.phi_tail_sup[n])},{_fmt(trace.c_stderr[n])}"
            )
        csv_path = self.out / "transfer_trace.csv"
        csv_path.write_text("\n".join(lines) + "\n")
        json_path = self.out / "transfer.json"
        _json_dump(
            {"phi": phi.spec, "c_phi": trace.c_phi, "quadrature": trace.quadrature_meta},
            json_path,
        )
        return [csv_path, json_path]

    def task_clt(self):
        if self.mu is None:
            raise ConfigError("clt needs the sample task")
        p = self.cfg.params["clt"]
        phi = self.observable(p["phi"])
        rep = birkhoff_clt(
            self.dyn_map,
            self.mu,
            phi,
            int(p["n_block"]),
            int(p["trajectories"]),
            self.cfg.seed,
        )
        stats_path = self.out / "clt_stats.txt"
        stats_path.write_text("\n".join(_fmt(s) for s in rep.stats) + "\n")
        json_path = self.out / "clt.json"
        _json_dump(
            {
                "phi": phi.spec,
                "sigma2_gk": rep.sigma2_gk,
                "sigma2_emp": rep.sigma2_emp,
                "ks_stat": rep.ks_stat,
                "ks_p": rep.ks_p,
                "degenerate": rep.degenerate,
                "n_block": rep.n_block,
                "trajectories": rep.trajectories,
            },
            json_path,
        )
        return [stats_path, json_path]

    # ---- orchestration --------------------------------------------------

    def run(self, workers=1):
        t0 = time.time()
        ok, margin = check_hypothesis(self.dyn_map)
        if not ok:
            raise HypothesisViolated(
                f"map fails d_t > d_(k-1): margin = {margin:.6g}", margin=margin
            )
        handlers = {
            "degrees": self.task_degrees,
            "sample": self.task_sample,
            "norms": self.task_norms,
            "correlate": self.task_correlate,
            "transfer": self.task_transfer,
            "clt": self.task_clt,
        }
        ordered = [t for t in TASK_ORDER if t in self.cfg.tasks]
        serial = [t for t in ordered if t in ("degrees", "sample", "norms")]
        parallel = [t for t in ordered if t not in ("degrees", "sample", "norms")]
        statuses = {}
        artifacts = {}

        def exec_task(name):
            self.say(f"task {name} ...")
            try:
                files = handlers[name]()
                return name, {"status": "ok"}, files
            except EqdError as exc:
                return name, {"status": "error", "error": f"{type(exc).__name__}: {exc}"}, []

        for name in serial:
            name, status, files = exec_task(name)
            statuses[name] = status
            for f in files:
                artifacts[f.name] = _sha256(f)
            if name == "sample" and status["status"] != "ok":
                for dep in ("correlate", "clt"):
                    if dep in parallel:
                        parallel.remove(dep)
                        statuses[dep] = {"status": "skipped", "reason": "sample failed"}
        if parallel:
            with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                for name, status, files in pool.map(exec_task, parallel):
                    statuses[name] = status
                    for f in files:
                        artifacts[f.name] = _sha256(f)

        manifest = {
            "config": self.cfg.raw_text,
            "map": self.dyn_map.spec_string(),
            "seed": self.cfg.seed,
            "tasks": {t: statuses.get(t, {"status": "not run"}) for t in ordered},
            "artifacts": artifacts,
            "versions": {
                "eqd": __version__,
                "numpy": np.__version__,
                "python": sys.version.split()[0],
            },
            "wall_time_s": round(time.time() - t0, 3),
        }
        _json_dump(manifest, self.out / "manifest.json")
        failed = any(s.get("status") == "error" for s in statuses.values())
        return 4 if failed else 0


def run(config, out_dir=None, workers=1, verbose=False):
    """Execute an ExperimentConfig; returns a process exit code."""
    runner = _Runner(config, out_dir or config.out_dir, verbose)
    return runner.run(workers=workers)


# ---------------------------------------------------------------------------
# command line


def _cmd_run(args):
    cfg = ExperimentConfig.from_file(args.config)
    return run(cfg, out_dir=args.out, workers=args.workers, verbose=args.verbose)


def _cmd_degrees(args):
    rep = degrees(parse_map_spec(args.mapspec)).as_dict()
    print(json.dumps(rep, indent=2, sort_keys=True))
    return 0


def _cmd_sample(args):
    dyn_map = parse_map_spec(args.map)
    ok, margin = check_hypothesis(dyn_map)
    if not ok:
        raise HypothesisViolated(f"margin = {margin:.6g}", margin=margin)
    if args.method == "backward":
        sample = backward_orbit_sample(
            dyn_map, _parse_point_cfg(args.start), args.burn_in, args.count, args.seed
        )
    elif args.method == "tree":
        sample = pullback_tree(dyn_map, _parse_point_cfg(args.start), args.depth)
    else:
        sample = fubini_study_set(dyn_map.dim, args.count, args.seed)
    save_sample_set(sample, args.out)
    return 0


def _cmd_correlate(args):
    dyn_map = parse_map_spec(args.map)
    mu = load_sample_set(args.mu)
    series = correlation_series(
        dyn_map, mu, make_observable(args.psi), make_observable(args.phi), args.n_max
    )
    lines = ["n,corr,stderr,bound,ratio"]
    for i, n in enumerate(series.n):
        lines.append(f"{n},{_fmt(series.corr[i])},{_fmt(series.stderr[i])},nan,nan")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_transfer(args):
    dyn_map = parse_map_spec(args.map)
    trace = decompose(dyn_map, make_observable(args.phi), args.n_terms, args.nodes, args.seed)
    lines = ["n,c_n,b_n,phi_tail_L2,phi_tail_sup,stderr"]
    for n in range(trace.c.size):
        lines.append(
            f"{n},{_fmt(trace.c[n])},{_fmt(trace.b[n])},{_fmt(trace.phi_tail_l2[n])},"
            f"{_fmt(trace.phi_tail_sup[n])},{_fmt(trace.c_stderr[n])}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_clt(args):
    dyn_map = parse_map_spec(args.map)
    mu = load_sample_set(args.mu)
    rep = birkhoff_clt(
        dyn_map, mu, make_observable(args.phi), args.n_block, args.trajectories, args.seed
    )
    summary = {
        "sigma2_gk": rep.sigma2_gk,
        "sigma2_emp": rep.sigma2_emp,
        "ks_stat": rep.ks_stat,
        "ks_p": rep.ks_p,
        "degenerate": rep.degenerate,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="eqd", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a config-driven experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("degrees", help="degree report for a map spec")
    p.add_argument("mapspec")
    p.set_defaults(fn=_cmd_degrees)

    p = sub.add_parser("sample", help="write a sample-set file")
    p.add_argument("--map", required=True)
    p.add_argument("--method", choices=("backward", "tree", "fubini_study"), default="backward")
    p.add_argument("--start", default="[1,1]")
    p.add_argument("--burn-in", type=int, default=40, dest="burn_in")
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("correlate", help="lagged correlations over a sample file")
    p.add_argument("--map", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--psi", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--n-max", type=int, default=8, dest="n_max")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_correlate)

    p = sub.add_parser("transfer", help="mean-value decomposition trace as CSV")
    p.add_argument("--map", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--n-terms", type=int, default=8, dest="n_terms")
    p.add_argument("--nodes", type=int, default=10000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_transfer)

    p = sub.add_parser("clt", help="block-sum statistics against the Gaussian limit")
    p.add_argument("--map", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--n-block", type=int, default=1000, dest="n_block")
    p.add_argument("--trajectories", type=int, default=5000)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=_cmd_clt)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HypothesisViolated as exc:
        print(f"degree hypothesis violated: {exc}", file=sys.stderr)
        return 3
    except EqdError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
