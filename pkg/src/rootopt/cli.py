"""Command-line entry point: ``rootopt <command> ...``.

Every JSON report embeds the resolved config, the seeds used and the package
version. Timing lives under a single top-level ``wall_clock`` key, so two runs
with equal configs give reports that are equal once that key is dropped.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from rootopt import __version__
from rootopt._parallel import map_ordered
from rootopt.baselines import (
    WeightRule,
    indicator_weights,
    linear_weights,
    one_tree,
    optimize_threshold,
    threshold_weights,
)
from rootopt.data import load_csv, validate, write_csv
from rootopt.dgp import KINDS, DgpSpec, generate, make_spec, oracle_tate, oracle_variance
from rootopt.errors import IoError, ParseError, RootoptError, SchemaError
from rootopt.estimators import root_objective, wtate_ipw
from rootopt.nuisance import NuisanceModels, fit_nuisance
from rootopt.root import RashomonSet, RootConfig, build_rashomon, characteristic_tree, ensemble_predict
from rootopt.theory import prtq_containment, random_binary_problem
from rootopt.tree import WeightTree, render

log = logging.getLogger("rootopt")

METHODS = ("Original", "ROOT", "1-Tree", "Linear", "Indicator", "ThresholdPredef", "ThresholdOpt")
PREDEFINED_THRESHOLD = 0.87
# run-local settings that must not change results, kept out of embedded configs
_NOT_CONFIG = {"func", "command", "n_jobs", "out", "verbose"}


class _Clock:
    def __init__(self):
        self.t0 = time.perf_counter()
        self.started = datetime.now(timezone.utc).isoformat()

    def stamp(self, **extra) -> dict:
        return {
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "seconds": time.perf_counter() - self.t0,
            **extra,
        }


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}


def _write_json(path: Path, payload: dict) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _finite(v):
    """JSON-safe float: infinities and NaN become null."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _report(args, **body) -> dict:
    return {"command": args.command, "version": __version__, "config": _config(args), **body}


def _nuisance_from_args(d, args) -> NuisanceModels:
    prop = args.propensity
    try:
        prop = float(prop)
    except (TypeError, ValueError):
        pass
    return fit_nuisance(d, propensity=prop, ridge=args.ridge, clip=tuple(args.clip))


def _root_config(args, seed: int, M: int | None = None, m_keep: int | None = None) -> RootConfig:
    return RootConfig(
        M=args.trees if M is None else M,
        m_keep=args.rashomon if m_keep is None else m_keep,
        eps_explore=args.eps_explore,
        max_depth=args.max_depth,
        leaf_prob=args.leaf_prob,
        seed=seed,
        split_rule=args.split_rule,
    )


# -- generate --------------------------------------------------------------


def cmd_generate(args) -> int:
    clock = _Clock()
    opts = {}
    if args.dgp == "highdim":
        opts = {"scale": args.scale, "beta1_orthogonal": args.beta1_orthogonal}
    elif args.dgp == "community":
        opts = {"x1_spread": args.x1_spread}
    spec = make_spec(args.dgp, args.n, args.seed, **opts)
    d, _ = generate(spec)
    out = Path(args.out)
    write_csv(d, out)
    tau0 = oracle_tate(spec, args.n_mc, args.seed)
    var = oracle_variance(spec, args.n_mc, args.seed)
    payload = _report(
        args,
        spec=spec.to_dict(),
        seeds={"data": args.seed, "oracle_mc": args.seed},
        summary=validate(d),
        oracle={"tate": tau0.to_dict(), "ipw_variance": var.to_dict(), "n_mc": args.n_mc},
        wall_clock=clock.stamp(),
    )
    _write_json(out.with_suffix(".json"), payload)
    print(f"wrote {out} ({d.n} rows, {d.n1} trial)")
    return 0


# -- fit -------------------------------------------------------------------


def cmd_fit(args) -> int:
    clock = _Clock()
    d = load_csv(args.data)
    m = _nuisance_from_args(d, args)
    cfg = _root_config(args, args.seed)
    t0 = time.perf_counter()
    rs = build_rashomon(d, m, cfg, n_jobs=args.n_jobs)
    t_fit = time.perf_counter() - t0
    ct = characteristic_tree(rs, d, args.explain_depth, m)
    out = Path(args.out)
    _write_json(out / "nuisance.json", m.to_dict())
    _write_json(out / "rashomon.json", rs.to_dict())
    _write_json(out / "characteristic.json", ct.to_dict())
    w = ensemble_predict(rs, d.x)
    report = _report(
        args,
        seeds={"master": args.seed, "trees": [t.seed for t in rs.trees]},
        objective_unweighted=_finite(root_objective(d, m)),
        objective_best=_finite(rs.best.objective),
        objective_ensemble=_finite(root_objective(d, m, w)),
        ensemble_mean_w_target=float(w[~d.trial].mean()),
        characteristic_agreement=ct.extra["agreement"],
        n_trees_retained=len(rs),
        wall_clock=clock.stamp(build_rashomon_seconds=t_fit),
    )
    _write_json(out / "fit_report.json", report)
    print(f"best objective {rs.best.objective:.6g} (unweighted {report['objective_unweighted']:.6g})")
    return 0


# -- estimate --------------------------------------------------------------


def load_weights(path):
    """A weight function from a Rashomon set, tree, or weight-rule JSON file."""
    obj = _read_json(path)
    if "trees" in obj:
        rs = RashomonSet.from_dict(obj)
        return lambda x: ensemble_predict(rs, x)
    if "root" in obj:
        return WeightTree.from_dict(obj).predict
    if "kind" in obj:
        return WeightRule.from_dict(obj).predict
    raise SchemaError(f"{path}: not a Rashomon set, tree or weight rule")


def _estimate_row(label, est) -> dict:
    lo, hi = est.ci()
    return {
        "label": label,
        "point": est.point,
        "std_err": est.std_err,
        "variance": est.variance,
        "ci_low": lo,
        "ci_high": hi,
        "mean_w": est.effective_w,
        "n_trial_kept": est.n_trial_kept,
        "n_target_kept": est.n_target_kept,
        "pi_w": est.pi_w,
    }


def cmd_estimate(args) -> int:
    clock = _Clock()
    d = load_csv(args.data)
    m = NuisanceModels.from_dict(_read_json(args.nuisance)) if args.nuisance else _nuisance_from_args(d, args)
    rows = [_estimate_row("unweighted", wtate_ipw(d, m))]
    if args.weights:
        rows.append(_estimate_row("weighted", wtate_ipw(d, m, load_weights(args.weights))))
    payload = _report(args, seeds={}, rows=rows, wall_clock=clock.stamp())
    out = Path(args.out)
    _write_json(out, payload)
    header = list(rows[0])
    _write_rows(out.with_suffix(".csv"), header, [[r[k] for k in header] for r in rows])
    for r in rows:
        print(f"{r['label']}: {r['point']:.6g} (se {r['std_err']:.6g}, E[w] {r['mean_w']:.3f})")
    return 0


# -- benchmark -------------------------------------------------------------


def replication_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(rep), 1]).generate_state(1)[0])


_BENCH: dict = {}


def _bench_init(args_dict):
    _BENCH.clear()
    _BENCH.update(args_dict)


def _method_weights(name, d, m, a, seed):
    ns = argparse.Namespace(**a)
    if name == "Original":
        return None
    if name == "ROOT":
        rs = build_rashomon(d, m, _root_config(ns, seed), n_jobs=1)
        return ensemble_predict(rs, d.x)
    if name == "1-Tree":
        return one_tree(d, m, _root_config(ns, seed, M=a["one_tree_M"], m_keep=1)).predict(d.x)
    if name == "Linear":
        return linear_weights(d, m, a["restarts"], a["iters"], seed).predict(d.x)
    if name == "Indicator":
        return indicator_weights(d, m, a["max_sweeps"]).predict(d.x)
    if name == "ThresholdPredef":
        return threshold_weights(m, PREDEFINED_THRESHOLD).predict(d.x)
    if name == "ThresholdOpt":
        return optimize_threshold(d, m).predict(d.x)
    raise ValueError(f"unknown method {name!r}")


def run_replication(rep: int) -> dict:
    a = _BENCH
    seed = replication_seed(a["seed"], rep)
    opts = {"scale": a["scale"]} if a["dgp"] == "highdim" else {}
    spec = make_spec(a["dgp"], a["n"], seed, **opts)
    d, _ = generate(spec)
    ns = argparse.Namespace(**a)
    m = _nuisance_from_args(d, ns)
    results, runtimes = [], {}
    for name in a["methods"]:
        t0 = time.perf_counter()
        try:
            w = _method_weights(name, d, m, a, seed)
            est = wtate_ipw(d, m, w)
            row = {
                "method": name,
                "ok": True,
                "point": est.point,
                "std_err": est.std_err,
                "mean_w": est.effective_w,
                "n_trial_kept": est.n_trial_kept,
                "objective": _finite(root_objective(d, m, w)),
                "error": None,
            }
        except RootoptError as exc:
            row = {"method": name, "ok": False, "point": None, "std_err": None, "mean_w": None,
                   "n_trial_kept": None, "objective": None, "error": f"{type(exc).__name__}: {exc}"}
        runtimes[name] = time.perf_counter() - t0
        results.append(row)
    return {"rep": rep, "seed": seed, "n1": d.n1, "results": results, "runtimes": runtimes}


def summarize(reps: list[dict], methods) -> list[dict]:
    out = []
    for name in methods:
        rows = [r for rep in reps for r in rep["results"] if r["method"] == name]
        ok = [r for r in rows if r["ok"]]
        out.append({
            "method": name,
            "mean_std_err": float(np.mean([r["std_err"] for r in ok])) if ok else None,
            "mean_w": float(np.mean([r["mean_w"] for r in ok])) if ok else None,
            "reps": len(ok),
            "failures": len(rows) - len(ok),
        })
    return out


def cmd_benchmark(args) -> int:
    clock = _Clock()
    methods = list(args.methods)
    unknown = [mt for mt in methods if mt not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown}")
    a = _config(args)
    a["methods"] = methods
    reps = map_ordered(run_replication, list(range(args.reps)), args.n_jobs, initializer=_bench_init, initargs=(a,))
    for rep in reps:
        for r in rep["results"]:
            if not r["ok"]:
                log.warning("replication %d, %s failed: %s", rep["rep"], r["method"], r["error"])
    summary = summarize(reps, methods)
    runtime_mean = {mt: float(np.mean([rep["runtimes"][mt] for rep in reps])) for mt in methods}
    out = Path(args.out)
    payload = _report(
        args,
        seeds={"master": args.seed, "replications": [rep["seed"] for rep in reps]},
        summary=summary,
        replications=[{k: v for k, v in rep.items() if k != "runtimes"} for rep in reps],
        wall_clock=clock.stamp(mean_runtime_by_method=runtime_mean, runtimes=[rep["runtimes"] for rep in reps]),
    )
    _write_json(out / "benchmark.json", payload)
    _write_rows(
        out / "summary.csv",
        ["method", "mean_std_err", "mean_w", "reps", "failures", "mean_runtime"],
        [[s["method"], s["mean_std_err"], s["mean_w"], s["reps"], s["failures"], runtime_mean[s["method"]]] for s in summary],
    )
    _write_rows(
        out / "replications.csv",
        ["rep", "seed", "method", "ok", "point", "std_err", "mean_w", "n_trial_kept", "objective", "runtime"],
        [[rep["rep"], rep["seed"], r["method"], int(r["ok"]), r["point"], r["std_err"], r["mean_w"],
          r["n_trial_kept"], r["objective"], rep["runtimes"][r["method"]]]
         for rep in reps for r in rep["results"]],
    )
    for s in summary:
        se = "failed" if s["mean_std_err"] is None else f"{s['mean_std_err']:.4g}"
        print(f"{s['method']:>16}: mean std_err {se} over {s['reps']} reps")
    return 0


# -- explain ---------------------------------------------------------------


def cmd_explain(args) -> int:
    clock = _Clock()
    obj = _read_json(args.rashomon)
    if "trees" in obj:
        if not args.data:
            raise ValueError("--data is required to explain a Rashomon set")
        d = load_csv(args.data)
        tree = characteristic_tree(RashomonSet.from_dict(obj), d, args.max_depth)
        names = d.feature_names
    else:
        tree = WeightTree.from_dict(obj)
        names = load_csv(args.data).feature_names if args.data else None
    text = render(tree.root, names)
    out = Path(args.out)
    _write_json(out, _report(args, seeds={}, tree=tree.to_dict(), rendering=text, wall_clock=clock.stamp()))
    try:
        out.with_suffix(".txt").write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    print(text)
    return 0


# -- prtq-check ------------------------------------------------------------


def cmd_prtq_check(args) -> int:
    clock = _Clock()
    prob, _, _ = random_binary_problem(args.p, args.q, args.n, args.seed)
    res = prtq_containment(prob, args.k, args.reps, args.seed)
    payload = _report(args, seeds={"master": args.seed}, **res, wall_clock=clock.stamp())
    if args.out:
        _write_json(Path(args.out), payload)
    print(json.dumps({k: res[k] for k in ("bound", "empirical_miss", "ci")}))
    return 0


# -- parser ----------------------------------------------------------------


def _add_nuisance_flags(p):
    p.add_argument("--ridge", type=float, default=1e-4, help="ridge penalty for the selection model")
    p.add_argument("--clip", type=float, nargs=2, default=[0.01, 0.99], metavar=("LO", "HI"))
    p.add_argument("--propensity", default="empirical", help="'empirical', 'fitted' or a known constant")


def _add_root_flags(p, trees_default=5000):
    p.add_argument("--trees", type=int, default=trees_default, help="number of sampled trees M")
    p.add_argument("--rashomon", type=int, default=10, help="trees retained (m)")
    p.add_argument("--eps-explore", type=float, default=0.2)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--leaf-prob", type=float, default=0.4)
    p.add_argument("--split-rule", choices=("median", "midrange"), default="median")
    p.add_argument("--n-jobs", type=int, default=1, help="worker processes (<=0: all cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rootopt", description="Refine target populations for precise trial generalization.")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"rootopt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a synthetic dataset")
    g.add_argument("--dgp", required=True)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, help="CSV path; a sidecar .json is written next to it")
    g.add_argument("--scale", type=float, default=None, help="highdim selection-logit scale (default 1/sqrt(p))")
    g.add_argument("--beta1-orthogonal", action="store_true")
    g.add_argument("--x1-spread", choices=("variance", "sd"), default="variance")
    g.add_argument("--n-mc", type=int, default=200_000, help="Monte-Carlo draws for the oracle summary")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit nuisances and the Rashomon set")
    f.add_argument("--data", required=True)
    f.add_argument("--seed", type=int, required=True)
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--explain-depth", type=int, default=3)
    _add_root_flags(f)
    _add_nuisance_flags(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("estimate", help="IPW estimate, optionally on a refined population")
    e.add_argument("--data", required=True)
    e.add_argument("--weights", help="Rashomon set, tree or weight-rule JSON")
    e.add_argument("--nuisance", help="nuisance JSON from fit (refit if omitted)")
    e.add_argument("--out", required=True, help="report JSON path; a .csv is written next to it")
    _add_nuisance_flags(e)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("benchmark", help="compare weighting strategies over replications")
    b.add_argument("--dgp", required=True, choices=KINDS)
    b.add_argument("--n", type=int, default=None, help="rows per replication (default 5000; 2000 for highdim)")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--methods", nargs="+", default=list(METHODS))
    b.add_argument("--scale", type=float, default=None)
    b.add_argument("--one-tree-M", type=int, default=1, help="trees sampled by the 1-Tree baseline")
    b.add_argument("--restarts", type=int, default=10)
    b.add_argument("--iters", type=int, default=200)
    b.add_argument("--max-sweeps", type=int, default=20)
    _add_root_flags(b, trees_default=500)
    _add_nuisance_flags(b)
    b.set_defaults(func=cmd_benchmark)

    x = sub.add_parser("explain", help="characteristic tree and text rendering")
    x.add_argument("--rashomon", required=True, help="Rashomon set (or single tree) JSON")
    x.add_argument("--data", help="dataset CSV (required for a Rashomon set)")
    x.add_argument("--max-depth", type=int, default=3)
    x.add_argument("--out", required=True, help="tree JSON path; a .txt rendering is written next to it")
    x.set_defaults(func=cmd_explain)

    q = sub.add_parser("prtq-check", help="empirical PRTQ miss rate against the analytic bound")
    q.add_argument("--p", type=int, default=2)
    q.add_argument("--q", type=int, default=2)
    q.add_argument("--k", type=int, default=32)
    q.add_argument("--reps", type=int, default=200)
    q.add_argument("--n", type=int, default=200, help="rows in the synthetic binary problem")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out")
    q.set_defaults(func=cmd_prtq_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "benchmark" and args.n is None:
        args.n = 2000 if args.dgp == "highdim" else 5000
    try:
        return args.func(args)
    except RootoptError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
