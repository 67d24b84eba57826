"""Command-line entry point: ``rmdim VERB [--config PATH] [--seed N] [--out DIR] ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 a built-in check failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from . import __version__, base, capacity, config, coverdim, metric, report
from .errors import ConfigError, RmdimError
from .spaces import FinitePoset, full_mask, is_metric_carrier, is_open_cover, refines

log = logging.getLogger("rmdim")

VERBS = ("dcover", "mdim", "mmdim", "htop", "ocap", "small", "sbp-embed", "selftest")
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rmdim", description="Mean-dimension experiments on finite bundle systems.")
    p.add_argument("verb", choices=VERBS, help="what to compute")
    p.add_argument("--config", help="YAML experiment file (all verbs but selftest)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default: config output.dir or ./rmdim-out)")
    p.add_argument("--threads", type=int, help="worker processes (default: config threads or CPU count)")
    p.add_argument("--mode", choices=metric.MODES, help="solver mode for sep/cov and D")
    p.add_argument("--version", action="version", version=f"rmdim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parallel_map(fn, items, threads: int) -> list:
    """Order-preserving map; runs serially for one thread or one item."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _pmap(threads):
    return lambda fn, items: parallel_map(fn, items, threads)


def _bare(paths):
    return [p if not isinstance(p, tuple) else p[0] for p in paths]


# verbs ------------------------------------------------------------------------

def run_dcover(cfg, mode, threads):
    carrier = config.build_space(config.need(cfg, "space"))
    alpha = config.build_cover(carrier, config.need(cfg, "cover"))
    target = config.build_set(carrier, cfg["target"], "target") if "target" in cfg else full_mask(carrier.size)
    if not is_open_cover(carrier, target, alpha):
        raise ConfigError("cover", "not an open cover of the target")
    mode = mode or cfg.get("mode", "auto")
    if is_metric_carrier(carrier):
        res = coverdim.dim_cover_metric(carrier, alpha, target)
    elif mode == "greedy" or (mode == "auto" and bin(target).count("1") > 16):
        res = coverdim.dim_cover_upper(carrier, alpha, cfg.get("budget", 100_000), target)
    else:
        res = coverdim.dim_cover_exact(carrier, alpha, target)
    ord_alpha = coverdim.ord_(alpha, target)
    checks = {
        "witness_refines_alpha": refines(res.witness, alpha),
        "witness_covers_target": not target & ~res.witness.union(),
        "witness_open": not isinstance(carrier, FinitePoset) or all(
            carrier.is_up_set(m & target, within=target) for m in res.witness.members),
        "value_at_most_ord_alpha": res.value <= ord_alpha,
        "witness_order_matches": not res.exact or coverdim.ord_(res.witness, target) == res.value,
    }
    header = ["value", "exact", "nodes_explored", "ord_alpha", "witness"]
    rows = [[res.value, res.exact, res.nodes_explored, ord_alpha, res.witness.as_sets()]]
    return header, rows, {"value": res.value, "exact": res.exact, "checks": checks}, all(checks.values())


def _covers(cfg, carrier):
    if "covers" in cfg:
        covers = [config.build_cover(carrier, c, f"covers[{i}]") for i, c in enumerate(cfg["covers"])]
    else:
        covers = [config.build_cover(carrier, config.need(cfg, "cover"))]
    pairs = [tuple(p) for p in cfg.get("refinement_pairs", [])]
    for i, j in pairs:
        if not (0 <= i < len(covers) and 0 <= j < len(covers)):
            raise ConfigError("refinement_pairs", f"pair ({i}, {j}) is out of range")
    return covers, pairs


def _mdim_path(sys_, covers, n_max, path):
    out = []
    for alpha in covers:
        q = coverdim.q_sequence(sys_, path, alpha, n_max)
        out.append((q, coverdim.kingman_violations(sys_, path, alpha, n_max)))
    return out


def run_mdim(cfg, mode, threads):
    sys_ = config.build_system(cfg)
    covers, pairs = _covers(cfg, sys_.carrier)
    n_max = cfg.get("n_max", 6)
    plan = config.build_paths(cfg, sys_.env, n_max)
    weighted = base.weighted_paths(plan.paths)
    per_path = parallel_map(partial(_mdim_path, sys_, covers, n_max), [p for p, _ in weighted], threads)
    header = ["path_id", "cover_id", "n", "q_n", "mean_ratio", "estimate"]
    rows, agg_covers, ok = [], [], True
    kingman, count_bound, monotone = 0, 0, 0
    for c, alpha in enumerate(covers):
        sums = [0.0] * n_max
        for (path, w), res in zip(weighted, per_path):
            q, bad = res[c]
            kingman += len(bad)
            count_bound += sum(1 for n, v in enumerate(q, 1) if v > len(alpha) ** n - 1)
            for n in range(n_max):
                sums[n] += w * q[n]
        ratio = [sums[n] / (n + 1) for n in range(n_max)]
        running = list(np.minimum.accumulate(ratio))
        for (path, _), res in zip(weighted, per_path):
            for n in range(n_max):
                rows.append([path.index, c, n + 1, res[c][0][n], ratio[n], running[n]])
        agg_covers.append({"cover_id": c, "estimate": running[-1], "mean_ratio": ratio, "running_inf": running})
    for i, j in pairs:
        if not refines(covers[i], covers[j]):
            raise ConfigError("refinement_pairs", f"cover {i} does not refine cover {j}")
        for res in per_path:
            monotone += sum(1 for a, b in zip(res[i][0], res[j][0]) if a < b)
    checks = {"kingman_violations": kingman, "cover_count_bound_violations": count_bound,
              "refinement_violations": monotone}
    ok = not any(checks.values())
    agg = {"estimate": max(a["estimate"] for a in agg_covers), "covers": agg_covers, "checks": checks,
           "exact_expectation": plan.exact, "paths": len(weighted)}
    return header, rows, agg, ok


def _mmdim_common(cfg, mode):
    sys_ = config.build_system(cfg)
    n_list = [int(n) for n in cfg.get("n_list", [1, 2, 3])]
    mode = mode or cfg.get("mode", "auto")
    if mode not in metric.MODES:
        raise ConfigError("mode", f"expected one of {metric.MODES}")
    plan = config.build_paths(cfg, sys_.env, max(n_list))
    return sys_, n_list, mode, plan


def _monotone_checks(fr):
    bad = 0
    cells = {(c.eps, c.n): c for c in fr.cells}
    eps = sorted({c.eps for c in fr.cells}, reverse=True)
    ns = sorted({c.n for c in fr.cells})
    for a, b in zip(eps, eps[1:]):
        for n in ns:
            x, y = cells[(a, n)], cells[(b, n)]
            if x.sep_mode == y.sep_mode == "exact" and x.sep > y.sep:
                bad += 1
    for e in eps:
        for a, b in zip(ns, ns[1:]):
            x, y = cells[(e, a)], cells[(e, b)]
            if x.sep_mode == y.sep_mode == "exact" and x.sep > y.sep:
                bad += 1
    return bad


def _sandwich_cells(sys_, path, eps_grid, n_list):
    bad = 0
    for e in eps_grid:
        for n in n_list:
            if not metric.sandwich_check(sys_, path, e, n).passed:
                bad += 1
    return bad


def run_mmdim(cfg, mode, threads):
    sys_, n_list, mode, plan = _mmdim_common(cfg, mode)
    eps_grid = [float(e) for e in cfg.get("eps_grid", metric.DEFAULT_EPS_GRID)]
    rep = metric.mmdim_estimate(sys_, plan.paths, eps_grid, n_list, mode=mode,
                                with_cov=cfg.get("with_cov", True), allow_mixed=cfg.get("allow_mixed", False),
                                fiber_map=_pmap(threads))
    header = ["path_id", "eps", "n", "sep", "cov", "sep_mode", "cov_mode"]
    rows = [[c.path_id, c.eps, c.n, c.sep, c.cov, c.sep_mode, c.cov_mode] for c in rep.rows]
    monotone = sum(_monotone_checks(f) for f in rep.fibers)
    exact_ok = all(f.modes == {"exact"} for f in rep.fibers)
    sandwich = sum(_sandwich_cells(sys_, p, eps_grid, n_list) for p in _bare(plan.paths)) if exact_ok else None
    checks = {"monotonicity_violations": monotone, "sandwich_violations": sandwich}
    agg = {
        "estimate": rep.mean_min_ratio, "mean_min_ratio": rep.mean_min_ratio, "mean_slope": rep.mean_slope,
        "se_min_ratio": rep.se_min_ratio, "se_slope": rep.se_slope, "modes": rep.modes, "mixed": rep.mixed,
        "exact_expectation": rep.exact_expectation,
        "per_path": [{"path_id": f.path_id, "S": f.S, "S_prime": f.S_prime, "ratio": f.ratio,
                      "min_ratio": f.min_ratio, "slope": f.slope} for f in rep.fibers],
        "checks": checks,
    }
    return header, rows, agg, not monotone and not sandwich


def run_htop(cfg, mode, threads):
    sys_, n_list, mode, plan = _mmdim_common(cfg, mode)
    eps_min = float(config.need(cfg, "eps_min"))
    profile = [float(e) for e in cfg.get("eps_grid", [])]
    rep = metric.htop_estimate(sys_, plan.paths, eps_min, n_list, eps_profile=profile, mode=mode,
                               allow_mixed=cfg.get("allow_mixed", False))
    header = ["path_id", "eps_min", "S_prime"]
    rows = [[pid, eps_min, v] for pid, v in rep.per_path.items()]
    agg = {"estimate": rep.estimate, "profile": rep.profile, "modes": rep.modes}
    return header, rows, agg, True


def run_ocap(cfg, mode, threads):
    sys_ = config.build_system(cfg)
    E = config.build_set(sys_.carrier, config.need(cfg, "set"), "set")
    n_list = [int(n) for n in cfg.get("n_list", [10, 20, 40])]
    plan = config.build_paths(cfg, sys_.env, max(n_list) + 1)
    rep = capacity.ocap_estimate(sys_, plan.paths, E, n_list)
    header = ["path_id", "n", "b_n", "ratio", "ratio_float"]
    rows = []
    for pid, seq in rep.ratios.items():
        for n, r in seq.items():
            rows.append([pid, n, r * n, r, float(r)])
    n = max(n_list)
    fs = capacity.rng_test_functions(sys_.env.states, sys_.carrier.size, cfg.get("test_functions", 10), cfg["seed"])
    fs.append(capacity.TableFunction.indicator(sys_.env.states, sys_.carrier.size, E))
    mass_ok, defect_ok, worst = True, True, 0.0
    for path in _bare(plan.paths):
        mu = capacity.empirical_maximizing_measure(sys_, path, E, n)
        b, _ = capacity.birkhoff_count(sys_, path, E, n)
        mass_ok &= mu.mass_E * n == b
        for d in capacity.approximate_invariance_defect(mu, fs):
            defect_ok &= d.passed
            worst = max(worst, d.defect / d.bound if d.bound else 0.0)
    checks = {"subadditive_violations": len(rep.violations), "measure_mass_equals_ratio": mass_ok,
              "invariance_defect_within_bound": defect_ok}
    agg = {"expectation": rep.expectation, "estimates": rep.estimates, "checks": checks,
           "worst_defect_over_bound": worst, "exact_expectation": plan.exact}
    return header, rows, agg, not rep.violations and mass_ok and defect_ok


def run_small(cfg, mode, threads):
    sys_ = config.build_system(cfg)
    E = config.build_set(sys_.carrier, config.need(cfg, "set"), "set")
    n_max = cfg.get("n_max", 60)
    tol = float(cfg.get("tolerance", 0.01))
    plan = config.build_paths(cfg, sys_.env, n_max)
    v = capacity.smallness_test(sys_, E, plan.paths, n_max, tol)
    header = ["path_id", "n", "estimate", "estimate_float", "small"]
    rows = [[pid, n_max, e, float(e), e <= tol] for pid, e in v.estimates.items()]
    agg = {"small": v.small, "max_estimate": v.max_estimate, "tolerance": tol,
           "uniform_share": v.uniform_share, "note": v.note}
    scan = cfg.get("sphere_scan")
    if scan:
        center = config.build_set(sys_.carrier, [config.need(scan, "center", "sphere_scan")], "sphere_scan.center")
        s = capacity.ue_boundary_scan(sys_, center.bit_length() - 1, [float(r) for r in config.need(
            scan, "radii", "sphere_scan")], plan.paths, n_max, tol)
        agg["sphere_scan"] = {"estimates": s.estimates, "small": s.small, "fraction_small": s.fraction_small}
    return header, rows, agg, True


def _partition(cfg, carrier):
    alpha = config.build_cover(carrier, config.need(cfg, "cover"))
    part = config.need(cfg, "partition")
    delta = float(config.need(part, "delta", "partition"))
    radius = part.get("radius")
    try:
        if "shrunk" in part:
            shrunk = config.build_cover(carrier, part["shrunk"], "partition.shrunk")
        else:
            shrunk = capacity.shrink_cover(carrier, alpha, part.get("margins", 0.0), radius)
        pu = capacity.partition_of_unity(carrier, alpha, shrunk, delta, part.get("variant", "recursive"), radius)
    except RmdimError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("partition", str(e)) from None
    return alpha, pu


def run_sbp(cfg, mode, threads):
    sys_ = config.build_system(cfg)
    alpha, pu = _partition(cfg, sys_.carrier)
    eps = float(config.need(cfg, "eps"))
    N_list = sorted(int(n) for n in config.need(cfg, "N_list"))
    plan = config.build_paths(cfg, sys_.env, max(N_list))
    header = ["path_id", "N", "max_I", "eps_N", "max_crossing", "coordinates_ok", "compatible", "passed"]
    rows, per_path, ok = [], [], True
    pcheck = capacity.check_partition(pu)
    for path in _bare(plan.paths):
        first, certs = capacity.scan_embedding(sys_, path, pu, N_list, eps, alpha)
        for N, c in certs.items():
            rows.append([path.index, N, c.max_fractional, eps * N, c.crossing.max_frequency,
                         c.coordinates_ok, c.compatible, c.passed])
            ok &= c.coordinates_ok and c.compatible
        per_path.append({"path_id": path.index, "smallest_passing_N": first,
                         "bound_eps_k_N": {N: c.bound for N, c in certs.items()}})
        ok &= first is not None
    if pu.variant == "recursive":
        ok &= pcheck.passed
    agg = {"per_path": per_path, "partition": vars(pcheck), "variant": pu.variant, "k": pu.k, "eps": eps}
    return header, rows, agg, ok


def run_selftest(cfg, mode, threads):
    from .selftest import run_all
    results = run_all(seed=cfg.get("seed", 0))
    header = ["check", "passed", "detail"]
    rows = [[r.name, r.passed, r.detail] for r in results]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {r.detail}")
    agg = {"passed": sum(r.passed for r in results), "failed": sum(not r.passed for r in results)}
    return header, rows, agg, all(r.passed for r in results)


RUNNERS = {"dcover": run_dcover, "mdim": run_mdim, "mmdim": run_mmdim, "htop": run_htop, "ocap": run_ocap,
           "small": run_small, "sbp-embed": run_sbp, "selftest": run_selftest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"rmdim: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.verb == "selftest":
            cfg = {"seed": args.seed if args.seed is not None else 0}
        else:
            if not args.config:
                raise ConfigError("--config", f"verb {args.verb!r} needs a config file")
            cfg = config.load(args.config, seed=args.seed)
        threads = args.threads or cfg.get("threads") or os.cpu_count() or 1
        out_dir = args.out or cfg.get("output", {}).get("dir", "rmdim-out")
        stem = cfg.get("output", {}).get("prefix", args.verb)
        start = time.perf_counter()
        header, rows, agg, ok = RUNNERS[args.verb](cfg, args.mode, threads)
        agg["wall_time_s"] = time.perf_counter() - start
        meta = {"verb": args.verb, "version": __version__, "config_hash": config.config_hash(cfg),
                "seed": cfg["seed"]}
        csv_path, _ = report.write(out_dir, stem, header, rows, agg, meta)
        log.info("wrote %s", csv_path)
    except ConfigError as e:
        print(f"rmdim: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RmdimError as e:
        print(f"rmdim: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if not ok:
        print(f"rmdim: {args.verb}: a built-in check failed (see {out_dir})", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
