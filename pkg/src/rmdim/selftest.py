"""Built-in invariant suite run by ``rmdim selftest``.

Each check is small enough that the whole suite finishes in well under a
minute on one core; every check is seeded from the single suite seed.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

import numpy as np
import yaml

from . import base, bundle, capacity, config, coverdim, instances, metric
from .spaces import Cover, FinitePoset, full_mask, join, open_sets


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def brute_open_sets(p: FinitePoset, within: int | None = None) -> list:
    """Every subset of ``within`` that is an up-set relative to it (exponential)."""
    within = full_mask(p.size) if within is None else within
    pts = [i for i in range(p.size) if within >> i & 1]
    out = []
    for r in range(len(pts) + 1):
        for combo in itertools.combinations(pts, r):
            m = sum(1 << i for i in combo)
            if all(p.up[i] & within & ~m == 0 for i in combo):
                out.append(m)
    return out


def brute_dim(p: FinitePoset, alpha: Cover, target: int | None = None) -> int:
    """min ord over all families of relatively open sets inside alpha members covering the target."""
    target = full_mask(p.size) if target is None else target
    cands = sorted({m for m in brute_open_sets(p, target) if m and any(m & ~a & target == 0
                                                                       for a in alpha.members)})
    best = math.inf
    for r in range(1, len(cands) + 1):
        for fam in itertools.combinations(cands, r):
            u = 0
            for m in fam:
                u |= m
            if u & target != target:
                continue
            order = max(sum(m >> x & 1 for m in fam) for x in range(p.size) if target >> x & 1) - 1
            best = min(best, order)
    return best


def _bundled(name: str) -> dict:
    text = resources.files("rmdim").joinpath("configs", name).read_text()
    return config.validate(yaml.safe_load(text))


# individual checks ------------------------------------------------------------

def check_stationarity(rng) -> tuple:
    envs = [base.point_mass(), base.cyclic(5), base.iid(["a", "b"], [0.25, 0.75]),
            instances.rotation_markov_env()]
    worst = max(base.check_stationarity(e).deviation for e in envs)
    return worst <= 1e-12, f"max deviation {worst:.2e} over {len(envs)} environments"


def check_open_sets(rng) -> tuple:
    bad = 0
    for _ in range(30):
        p = instances.random_poset(rng, int(rng.integers(1, 9)))
        if sorted(open_sets(p)) != sorted(brute_open_sets(p)):
            bad += 1
    n_circle = len(open_sets(instances.circle_model()))
    return bad == 0 and n_circle == 7, f"{bad} mismatches on 30 posets; circle model has {n_circle} open sets"


def check_named_dimensions(rng) -> tuple:
    anti = FinitePoset.antichain(range(5))
    vals = []
    for _ in range(20):
        vals.append(coverdim.dim_cover_exact(anti, instances.random_open_cover(rng, anti)).value)
    iv = instances.interval_model()
    a_iv = Cover.from_sets(iv, [["a", "c"], ["b", "c"]])
    ci = instances.circle_model()
    d_iv = coverdim.dim_cover_exact(iv, a_iv).value
    d_ci = coverdim.dim_cover_exact(ci, instances.circle_cover(ci)).value
    ok = set(vals) == {0} and d_iv == brute_dim(iv, a_iv) == 1 and d_ci == brute_dim(ci, instances.circle_cover(ci)) == 1
    return ok, f"antichain {sorted(set(vals))}, interval {d_iv}, circle {d_ci}"


def check_dim_oracle(rng) -> tuple:
    bad = 0
    for _ in range(40):
        p = instances.random_poset(rng, int(rng.integers(1, 7)))
        a = instances.random_open_cover(rng, p)
        if coverdim.dim_cover_exact(p, a).value != brute_dim(p, a):
            bad += 1
    return bad == 0, f"{bad} disagreements with exhaustive enumeration on 40 covers"


def check_subadditivity(rng) -> tuple:
    bad = 0
    for _ in range(100):
        p = instances.random_poset(rng, int(rng.integers(2, 11)))
        a, b = instances.random_open_cover(rng, p), instances.random_open_cover(rng, p)
        d = [coverdim.dim_cover_exact(p, c).value for c in (a, b, join([a, b]))]
        bad += d[2] > d[0] + d[1]
    return bad == 0, f"{bad} violations of D(a v b) <= D(a) + D(b) on 100 pairs"


def check_kingman_and_cover_bound(rng) -> tuple:
    kingman = count_bound = 0
    for i in range(20):
        sys_ = instances.random_poset_bundle(rng, int(rng.integers(3, 9)))
        alpha = instances.random_open_cover(rng, sys_.carrier)
        path = base.sample_paths(sys_.env, 1, 6, int(rng.integers(1 << 32)))[0]
        kingman += len(coverdim.kingman_violations(sys_, path, alpha, 6))
        qs = coverdim.q_sequence(sys_, path, alpha, 6)
        count_bound += sum(q > len(alpha) ** n - 1 for n, q in enumerate(qs, 1))
    return kingman == count_bound == 0, f"{kingman} split violations, {count_bound} bound violations on 20 paths"


def check_sub_bundles(rng) -> tuple:
    bad = 0
    for _ in range(20):
        sys_ = instances.random_poset_bundle(rng, int(rng.integers(3, 9)))
        seeds = {s: int(rng.integers(1, 1 << sys_.carrier.size)) for s in sys_.env.states}
        sub = bundle.sub_bundle(sys_, bundle.forward_invariant_closure(sys_, seeds))
        alpha = instances.random_open_cover(rng, sys_.carrier)
        path = base.sample_paths(sys_.env, 1, 4, int(rng.integers(1 << 32)))[0]
        small = coverdim.q_sequence(sub, path, alpha, 4)
        big = coverdim.q_sequence(sys_, path, alpha, 4)
        bad += sum(a > b for a, b in zip(small, big))
    return bad == 0, f"{bad} violations of sub-bundle monotonicity on 20 sub-bundles"


def check_sandwich(rng) -> tuple:
    bad = 0
    for _ in range(200):
        sys_ = instances.random_metric_bundle(rng, int(rng.integers(2, 41)))
        path = base.enumerate_paths(sys_.env, 3)[0][0]
        eps = float(rng.uniform(0.05, 0.6))
        bad += not metric.sandwich_check(sys_, path, eps, int(rng.integers(1, 4))).passed
    return bad == 0, f"{bad} violations of sep(2e) <= cov(2e) <= sep(e) on 200 instances"


def check_cov_submultiplicative(rng) -> tuple:
    bad = 0
    for _ in range(100):
        sys_ = instances.random_metric_bundle(rng, int(rng.integers(2, 21)))
        path = base.enumerate_paths(sys_.env, 4)[0][0]
        eps = float(rng.uniform(0.1, 0.6))
        c = {n: metric.cov(sys_, path, eps, n, mode="exact").value for n in (1, 2, 3)}
        for n, m in ((1, 1), (1, 2), (2, 1)):
            shifted = metric.cov(sys_, path.shifted(n), eps, m, mode="exact").value
            bad += c[n + m] > c[n] * shifted
    return bad == 0, f"{bad} violations of cov(n+m) <= cov(n) cov(m) on 100 instances"


def check_rotation_zero(rng) -> tuple:
    tree = _bundled("mmdim_rotation.yaml")
    sys_ = config.build_system(tree)
    plan = config.build_paths(tree, sys_.env, 4)
    rep = metric.mmdim_estimate(sys_, plan.paths, tree["eps_grid"], tree["n_list"], mode="exact", with_cov=False)
    zero = all(f.S_prime[e] == 0 for f in rep.fibers for e in f.S_prime)
    return zero and rep.estimate == 0, f"estimate {rep.estimate} over {len(rep.fibers)} paths, modes {rep.modes}"


def check_shift_oracle(rng) -> tuple:
    bad = 0
    cases = 0
    for q in (1, 2, 3, 4):
        sys_ = bundle.make_product_shift(q, 1)
        path = base.enumerate_paths(sys_.env, 2)[0][0]
        for eps in (0.5, 0.25, 0.125):
            for n in (1, 2):
                got = metric.sep(sys_, path, eps, n, mode="exact", cap=1 << 10).value
                bad += got != metric.product_shift_sep_oracle(q, 1, eps, n)
                cases += 1
    return bad == 0, f"{bad} mismatches against the product counting formula in {cases} cases"


def check_inclusion(rng) -> tuple:
    ci = instances.circle_model()
    sys_ = bundle.make_inclusion_system(base.point_mass(), ci)
    alpha = instances.circle_cover(ci)
    path = base.enumerate_paths(sys_.env, 16)[0][0]
    qs = coverdim.q_sequence(sys_, path, alpha, 16)
    stable = all(q == qs[len(alpha) - 1] for q in qs[len(alpha) - 1:])
    est = coverdim.mdim_estimate(sys_, alpha, [path], 16).estimate
    return stable and est <= qs[len(alpha) - 1] / 16, f"q_n = {qs[-1]} from n = {len(alpha)}, estimate {est}"


def check_orbit_capacity(rng) -> tuple:
    tree = _bundled("ocap_rotation.yaml")
    sys_ = config.build_system(tree)
    E = config.build_set(sys_.carrier, tree["set"])
    path = base.enumerate_paths(sys_.env, 61)[0][0]
    b, _ = capacity.birkhoff_count(sys_, path, E, 60)
    ok = Fraction(b, 60) == Fraction(1, 12)
    defects = mass = 0
    for _ in range(10):
        sys_r = instances.random_metric_bundle(rng, int(rng.integers(3, 16)), instances.rotation_markov_env())
        E_r = int(rng.integers(1, 1 << sys_r.carrier.size))
        n = int(rng.integers(5, 40))
        p = base.sample_paths(sys_r.env, 1, n + 1, int(rng.integers(1 << 32)))[0]
        mu = capacity.empirical_maximizing_measure(sys_r, p, E_r, n)
        mass += mu.mass_E != Fraction(capacity.birkhoff_count(sys_r, p, E_r, n)[0], n)
        fs = capacity.rng_test_functions(sys_r.env.states, sys_r.carrier.size, 10, int(rng.integers(1 << 32)))
        defects += sum(not d.passed for d in capacity.approximate_invariance_defect(mu, fs))
    ok = ok and mass == 0 and defects == 0
    return ok, f"b_60/60 = {Fraction(b, 60)}; {mass} mass mismatches, {defects} defect violations"


def check_partitions(rng) -> tuple:
    bad = 0
    for _ in range(50):
        space, alpha, margin, delta = instances.random_arc_cover(rng, int(rng.integers(12, 201)))
        shrunk = capacity.shrink_cover(space, alpha, margin)
        pu = capacity.partition_of_unity(space, alpha, shrunk, delta)
        bad += not capacity.check_partition(pu).passed
    return bad == 0, f"{bad} failed partitions on 50 random arc covers"


def check_sbp(rng) -> tuple:
    tree = _bundled("sbp_rotation.yaml")
    sys_ = config.build_system(tree)
    alpha = config.build_cover(sys_.carrier, tree["cover"])
    shrunk = config.build_cover(sys_.carrier, tree["partition"]["shrunk"])
    pu = capacity.partition_of_unity(sys_.carrier, alpha, shrunk, tree["partition"]["delta"])
    path = base.enumerate_paths(sys_.env, 120)[0][0]
    cert = capacity.sbp_embedding(sys_, path, pu, 120, tree["eps"], alpha)
    return cert.passed, f"max #I = {cert.max_fractional} < {tree['eps'] * 120:g}, compatible {cert.compatible}"


def check_determinism(rng) -> tuple:
    env = instances.rotation_markov_env()
    a = base.sample_paths(env, 4, 20, 99)
    b = base.sample_paths(env, 4, 20, 99)
    c = base.sample_paths(env, 4, 20, 100)
    same = [p.states for p in a] == [p.states for p in b]
    return same and [p.states for p in a] != [p.states for p in c], "identical seeds give identical paths"


CHECKS = [
    ("stationarity", check_stationarity),
    ("open-sets", check_open_sets),
    ("named-dimensions", check_named_dimensions),
    ("dimension-oracle", check_dim_oracle),
    ("join-subadditivity", check_subadditivity),
    ("kingman-and-cover-bound", check_kingman_and_cover_bound),
    ("sub-bundle-monotonicity", check_sub_bundles),
    ("sep-cov-sandwich", check_sandwich),
    ("cov-submultiplicative", check_cov_submultiplicative),
    ("rotation-zero-rate", check_rotation_zero),
    ("shift-counting-oracle", check_shift_oracle),
    ("inclusion-stabilizes", check_inclusion),
    ("orbit-capacity", check_orbit_capacity),
    ("partition-of-unity", check_partitions),
    ("sbp-certificate", check_sbp),
    ("path-determinism", check_determinism),
]


def run_all(seed: int = 0) -> list:
    out = []
    for i, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        t = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as e:  # a crash is a failed check, not an aborted suite
            ok, detail = False, f"{type(e).__name__}: {e}"
        out.append(Check(name, bool(ok), detail, time.perf_counter() - t))
    return out
