"""Command-line harness: simulate / analyze / oracle / decorate / dppp / fit.

Exit codes: 0 success, 2 configuration or schema error, 3 runtime or
resource error, 4 numeric failure.  Every output file begins with a
header carrying the tool version, the resolved config hash, and the
master seed, which together reproduce the file byte-identically.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__, estimators, io, oracles
from .config import ExperimentConfig, format_offspring, hash_text, parse_offspring
from .dataset import Dataset
from .errors import (BBMLabError, NumericError, ParameterError,
                     ResourceLimitError, StateError)
from .model import Frame, ModelParams, OffspringLaw, lambda_star

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_NUMERIC = 4


def _f17(x: float) -> str:
    return format(float(x), ".17g")


def _estimate_record(est: estimators.Estimate, **extra) -> dict:
    rec = dict(extra)
    rec.update(value=est.value, se=est.se, n=est.n)
    return rec


def _mapping_hash(pairs: dict) -> str:
    return hash_text("".join(f"{k} = {pairs[k]}\n" for k in sorted(pairs)))


def _dataset_hash(ds: Dataset) -> str:
    # recover the hash the simulate run stamped, from the echoed config;
    # programmatic datasets without one hash their signature instead
    if ds.config:
        return _mapping_hash(ds.config)
    return _mapping_hash({k: repr(v) for k, v in ds.signature().items()})


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    if args.output is not None:
        overrides["output"] = args.output
    if args.summary_output is not None:
        overrides["summary_output"] = args.summary_output
    cfg = ExperimentConfig.from_file(args.config, overrides)
    dataset = estimators.run_experiment(
        cfg.params, cfg.checkpoints, cfg.replicas, **cfg.experiment_kwargs())
    io.write_jsonl(dataset, cfg.output, config_hash=cfg.config_hash)
    if cfg.summary_output:
        io.write_summary_csv(dataset, cfg.summary_output,
                             config_hash=cfg.config_hash)
    if cfg.output != "-":
        print(f"wrote {dataset.n_replicas} replicas x "
              f"{dataset.n_checkpoints} checkpoints to {cfg.output} "
              f"(config {cfg.config_hash})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze

def _parse_do(token: str):
    parts = token.split(":")
    name, params = parts[0], parts[1:]
    try:
        if name in ("survival", "means", "laplace") and not params:
            return (name,)
        if name == "growth" and len(params) == 2:
            return (name, float(params[0]), float(params[1]))
        if name == "late_touch" and len(params) == 3:
            return (name, float(params[0]), float(params[1]), float(params[2]))
    except ValueError:
        pass
    raise ParameterError(
        f"bad analysis token {token!r}; expected survival, means, laplace, "
        "growth:T0:T1, or late_touch:T:S:WINDOW")


def cmd_analyze(args) -> int:
    dataset = io.read_jsonl(args.dataset)
    if dataset.n_replicas == 0:
        raise StateError(f"{args.dataset}: dataset holds no replicas")
    tokens = [_parse_do(tok) for tok in (args.do or ["survival", "means"])]
    report = {
        "kind": "analysis",
        "master_seed": dataset.master_seed,
        "n_replicas": dataset.n_replicas,
        "checkpoints": [float(t) for t in dataset.checkpoints],
        "signature": dataset.signature(),
        "analyses": list(args.do or ["survival", "means"]),
    }
    for tok in tokens:
        name = tok[0]
        if name == "survival":
            report["survival"] = [
                _estimate_record(estimators.survival_prob(dataset, t), t=float(t))
                for t in dataset.checkpoints]
        elif name == "means":
            means = {}
            for column in dataset.column_names:
                rows = []
                for t in dataset.checkpoints:
                    col = dataset.at(float(t), column)
                    if np.any(np.isfinite(col)):
                        rows.append(_estimate_record(
                            estimators.functional_mean(dataset, float(t), column),
                            t=float(t)))
                means[column] = rows
            report["means"] = means
        elif name == "laplace":
            if not dataset.phi_names:
                raise StateError(
                    "dataset has no test-function columns; re-run simulate "
                    "with a phis selection")
            report["laplace"] = {
                phi: [_estimate_record(
                    estimators.laplace_functional(dataset, float(t), phi),
                    t=float(t)) for t in dataset.checkpoints]
                for phi in dataset.phi_names}
        elif name == "growth":
            report["growth"] = _estimate_record(
                estimators.growth_rate(dataset, tok[1], tok[2]),
                t0=tok[1], t1=tok[2])
        elif name == "late_touch":
            t, s, window = tok[1], tok[2], tok[3]
            rec = _estimate_record(
                estimators.late_touch_prob(dataset, t, s, window),
                t=t, s=s, window=window)
            report.setdefault("late_touch", []).append(rec)
    spec_hash = _mapping_hash({
        "dataset": _dataset_hash(dataset),
        "do": ",".join(args.do or ["survival", "means"])})
    io.write_report_json(report, args.report, config_hash=spec_hash)
    if args.table is not None:
        io.write_summary_csv(dataset, args.table, config_hash=spec_hash)
    if args.report != "-":
        print(f"wrote analysis report to {args.report}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle

def _oracle_args(tokens, required, optional=()):
    got = {}
    for tok in tokens:
        key, eq, value = tok.partition("=")
        if not eq:
            raise ParameterError(f"oracle parameter {tok!r} is not key=value")
        if key not in required and key not in optional:
            raise ParameterError(
                f"unknown oracle parameter {key!r}; accepted: "
                + ", ".join(sorted((*required, *optional))))
        if key in got:
            raise ParameterError(f"oracle parameter {key!r} given twice")
        got[key] = value
    missing = [k for k in required if k not in got]
    if missing:
        raise ParameterError("missing oracle parameter(s): " + ", ".join(missing))
    return got


def _oracle_lambda_star(tokens):
    kv = _oracle_args(tokens, (), ("beta", "m", "offspring"))
    beta = float(kv.get("beta", "1"))
    if "m" in kv and "offspring" in kv:
        raise ParameterError("give either m or offspring, not both")
    if "offspring" in kv:
        m = parse_offspring(kv["offspring"]).mean
    else:
        m = float(kv.get("m", "2"))
    if not m > 1.0:
        raise ParameterError(f"lambda_star needs mean offspring m > 1, got {m!r}")
    print(_f17(math.sqrt(2.0 * beta * (m - 1.0))))
    return EXIT_OK


def _oracle_wave(tokens):
    kv = _oracle_args(tokens, ("rho",),
                      ("beta", "offspring", "x_max", "out"))
    law = parse_offspring(kv["offspring"]) if "offspring" in kv else None
    wave = oracles.solve_travelling_wave(
        float(kv["rho"]), law=law, beta=float(kv.get("beta", "1")),
        x_max=float(kv.get("x_max", "40")))
    io.write_wave_csv(wave, kv.get("out", "-"))
    return EXIT_OK


def _scalar_oracle(fn, required, optional=()):
    def run(tokens):
        kv = _oracle_args(tokens, required, optional)
        out = fn(**{k: float(v) for k, v in kv.items()})
        print(_f17(float(out)))
        return EXIT_OK
    return run


def _centering(t, beta=1.0, rho=0.0, m=2.0):
    lam = math.sqrt(2.0 * beta * (m - 1.0))
    if not t > 0.0:
        raise ParameterError("centering needs t > 0")
    return (lam - rho) * t - 1.5 / lam * math.log(t)


ORACLES = {
    "lambda_star": _oracle_lambda_star,
    "wave": _oracle_wave,
    # The linear-boundary hitting problem.  hit_prob_line reports the
    # staying probability 1 - exp(-2*y*mu); the complement is its own entry.
    "hit_prob_line": _scalar_oracle(
        lambda y, mu: oracles.hit_prob_line(y, mu).stay, ("y", "mu")),
    "ever_hit_line": _scalar_oracle(
        lambda y, mu: oracles.hit_prob_line(y, mu).ever_hit, ("y", "mu")),
    "hit_time_cdf": _scalar_oracle(oracles.hitting_time_cdf, ("x", "rho", "t")),
    "hit_time_density": _scalar_oracle(oracles.hitting_time_density,
                                       ("x", "rho", "r")),
    "hit_time_mean": _scalar_oracle(oracles.hitting_time_mean, ("x", "mu")),
    "abk_tail_bound": _scalar_oracle(oracles.abk_tail_bound, ("y", "t"),
                                     ("b", "t0")),
    "centering": _scalar_oracle(_centering, ("t",), ("beta", "rho", "m")),
}


def cmd_oracle(args) -> int:
    if args.name not in ORACLES:
        raise ParameterError(
            f"unknown oracle {args.name!r}; catalog: "
            + ", ".join(sorted(ORACLES)))
    return ORACLES[args.name](args.params)


# ---------------------------------------------------------------------------
# decorate

def cmd_decorate(args) -> int:
    law = parse_offspring(args.offspring)
    dec = estimators.sample_decoration(
        args.t, master_seed=args.seed, n_samples=args.samples,
        beta=args.beta, law=law, max_attempts=args.max_attempts)
    pooled = np.concatenate(dec.atoms)
    lo = math.floor(float(pooled.min()) / 0.25) * 0.25
    edges = np.arange(lo, 0.25 + 1e-9, 0.25)
    counts, _ = np.histogram(pooled, bins=edges)
    report = {
        "kind": "decoration",
        "master_seed": args.seed,
        "t": dec.t,
        "lam": dec.lam,
        "beta": args.beta,
        "offspring": format_offspring(law),
        "n": dec.n,
        "n_attempts": dec.n_attempts,
        "acceptance": dec.acceptance,
        "histogram": {"edges": [float(e) for e in edges],
                      "counts": [int(c) for c in counts]},
        "atoms": [[float(a) for a in cloud] for cloud in dec.atoms],
    }
    spec_hash = _mapping_hash({
        "t": _f17(args.t), "samples": str(args.samples),
        "seed": str(args.seed), "beta": _f17(args.beta),
        "offspring": format_offspring(law)})
    io.write_report_json(report, args.out, config_hash=spec_hash)
    if args.out != "-":
        print(f"accepted {dec.n}/{dec.n_attempts} clouds "
              f"(acceptance {dec.acceptance:.3g}) -> {args.out}")
    return EXIT_OK


def _load_decorations(path) -> estimators.DecorationSample:
    rec = io.read_report_json(path)
    if rec.get("kind") != "decoration" or "atoms" not in rec:
        raise StateError(f"{path}: not a decoration report (missing atoms)")
    return estimators.DecorationSample(
        t=float(rec["t"]), lam=float(rec["lam"]),
        atoms=tuple(np.asarray(c, dtype=np.float64) for c in rec["atoms"]),
        n_attempts=int(rec["n_attempts"]))


# ---------------------------------------------------------------------------
# dppp

def cmd_dppp(args) -> int:
    decorations = None
    if args.decorations is not None:
        if args.n > 1000:
            raise ParameterError(
                "decorated realizations are kept in full; use n <= 1000 "
                "(the max law does not need decorations at all)")
        decorations = _load_decorations(args.decorations)
    sample = estimators.sample_dppp(
        args.z_value, args.c, args.lam, z_min=args.z_min,
        n_realizations=args.n, master_seed=args.seed,
        decorations=decorations)
    report = {
        "kind": "dppp",
        "master_seed": args.seed,
        "z_value": args.z_value,
        "c": args.c,
        "lam": args.lam,
        "z_min": args.z_min,
        "n_realizations": args.n,
        "n_empty": int(np.sum(~np.isfinite(sample.maxima))),
        "maxima": [float(m) for m in sample.maxima],
        "counts": [int(c) for c in sample.counts],
    }
    if sample.realizations is not None:
        report["realizations"] = [[float(a) for a in r]
                                  for r in sample.realizations]
    spec_hash = _mapping_hash({
        "z_value": _f17(args.z_value), "c": _f17(args.c),
        "lam": _f17(args.lam), "z_min": _f17(args.z_min),
        "n": str(args.n), "seed": str(args.seed),
        "decorations": args.decorations or "none"})
    io.write_report_json(report, args.out, config_hash=spec_hash)
    if args.out != "-":
        print(f"sampled {args.n} realizations "
              f"(mean count {float(np.mean(sample.counts)):.3g}) -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit

def cmd_fit(args) -> int:
    dataset = io.read_jsonl(args.dataset)
    if dataset.n_replicas == 0:
        raise StateError(f"{args.dataset}: dataset holds no replicas")
    t = args.t if args.t is not None else float(dataset.checkpoints[-1])
    s = args.proxy_time if args.proxy_time is not None else t / 2.0
    column = args.proxy_column
    if column not in dataset.column_names:
        raise StateError(
            f"dataset has no Z-proxy column {column!r}; available columns: "
            + ", ".join(dataset.column_names))
    lam = dataset.params.lam
    if not lam > 0.0:
        raise ParameterError("fit needs a branching dataset (beta > 0)")
    maxima = dataset.at(t, "max_tilde") - estimators.front_centering(dataset.params, t)
    proxy = dataset.at(s, column)
    fit = estimators.gumbel_mixture_fit(maxima, proxy, lam)

    keep = np.isfinite(maxima) & np.isfinite(proxy) & (proxy > 0.0)
    mx, zs = maxima[keep], proxy[keep]
    order = np.argsort(mx, kind="stable")
    thin = np.unique(np.linspace(0, mx.size - 1, min(1024, mx.size)).astype(int))
    emp_z = mx[order][thin]
    emp_p = (thin + 1.0) / mx.size
    fit_p = fit.cdf(emp_z, zs)

    report = {
        "kind": "fit",
        "master_seed": dataset.master_seed,
        "t": t,
        "proxy_time": s,
        "proxy_column": column,
        "lam": lam,
        "centering": estimators.front_centering(dataset.params, t),
        "c_hat": fit.c_hat,
        "ks": fit.ks,
        "n": fit.n,
        "n_dropped": fit.n_dropped,
        "signature": dataset.signature(),
        "empirical": {"z": [float(v) for v in emp_z],
                      "p": [float(v) for v in emp_p]},
        "fitted": {"z": [float(v) for v in emp_z],
                   "p": [float(v) for v in fit_p]},
    }
    if args.synthetic_check:
        synth = estimators.synthetic_mixture_maxima(zs, fit.c_hat, lam,
                                                    dataset.master_seed + 1)
        refit = estimators.gumbel_mixture_fit(synth, zs, lam)
        report["synthetic_check"] = {
            "c_recovered": refit.c_hat,
            "relative_error": abs(refit.c_hat - fit.c_hat) / fit.c_hat,
            "ks": refit.ks,
        }
    spec_hash = _mapping_hash({
        "dataset": _dataset_hash(dataset), "t": _f17(t), "proxy_time": _f17(s),
        "proxy_column": column,
        "synthetic_check": str(bool(args.synthetic_check))})
    io.write_report_json(report, args.out, config_hash=spec_hash)
    if args.out != "-":
        print(f"c_hat={fit.c_hat:.6g} ks={fit.ks:.4g} n={fit.n} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbmlab",
        description="Branching Brownian motion laboratory: simulate "
                    "populations against an absorbing line, analyze the "
                    "resulting functionals, and query analytic oracles.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run replicas from a config file")
    p.add_argument("config", help="plain-text key = value config file")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: config, then all cores)")
    p.add_argument("--output", default=None,
                   help="JSON Lines destination ('-' for stdout)")
    p.add_argument("--summary-output", default=None,
                   help="summary CSV destination ('none' to skip)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="estimators over a simulated dataset")
    p.add_argument("dataset", help="JSON Lines file from simulate")
    p.add_argument("--do", action="append", metavar="WHAT",
                   help="survival | means | laplace | growth:T0:T1 | "
                        "late_touch:T:S:WINDOW (repeatable; default "
                        "survival and means)")
    p.add_argument("--report", default="report.json",
                   help="report JSON destination ('-' for stdout)")
    p.add_argument("--table", default=None, help="summary CSV destination")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle", help="closed forms and the wave solver")
    p.add_argument("name", help="oracle name (anything unknown lists the catalog)")
    p.add_argument("params", nargs="*", metavar="key=value")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("decorate",
                       help="sample the view-from-the-maximum point clouds")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--offspring", default="2:1")
    p.add_argument("--max-attempts", type=int, default=None)
    p.add_argument("--out", default="decoration.json")
    p.set_defaults(func=cmd_decorate)

    p = sub.add_parser("dppp",
                       help="sample the limiting decorated Poisson process")
    p.add_argument("--z-value", type=float, required=True,
                   help="mixing value Z for the intensity")
    p.add_argument("--c", type=float, required=True, help="intensity constant")
    p.add_argument("--lam", type=float, default=math.sqrt(2.0))
    p.add_argument("--z-min", type=float, required=True,
                   help="left edge of the observation window")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--decorations", default=None,
                   help="decoration report JSON to glue onto each center")
    p.add_argument("--out", default="dppp.json")
    p.set_defaults(func=cmd_dppp)

    p = sub.add_parser("fit", help="Gumbel-mixture fit of the centered maximum")
    p.add_argument("dataset", help="JSON Lines file from simulate")
    p.add_argument("--t", type=float, default=None,
                   help="maximum time (default: last checkpoint)")
    p.add_argument("--proxy-time", type=float, default=None,
                   help="checkpoint for the Z-proxy (default: t/2)")
    p.add_argument("--proxy-column", default="Z_tilde")
    p.add_argument("--synthetic-check", action="store_true",
                   help="refit on synthetic exact-mixture data")
    p.add_argument("--out", default="fit.json")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
