"""Order, cover dimension and the mean-dimension estimator on finite posets.

``D(alpha)`` is the least order of an open cover refining ``alpha``.  On a
finite poset the open sets form a finite lattice, so ``D`` is computed exactly
by branch and bound over irredundant covers drawn from that lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .base import EnvPath, weighted_paths
from .bundle import BundleSystem, joined_covers
from .errors import InputError, SizeError, UnsupportedCarrierError
from .spaces import (DEFAULT_OPEN_SET_CAP, DEFAULT_POSET_CAP, Cover, FinitePoset, bits, dimension_bound,
                     full_mask, is_metric_carrier, mask_of, open_sets, refines)


@dataclass
class DimResult:
    value: int
    witness: Cover
    nodes_explored: int
    exact: bool


def ord_(alpha: Cover, target: int | None = None) -> int:
    """-1 + the largest number of members containing a single point of ``target``."""
    if target is None:
        target = full_mask(alpha.carrier.size)
    if not target:
        return -1
    if target & ~alpha.union():
        raise InputError("cover does not cover the target set")
    counts = {}
    for m in alpha.members:
        for i in bits(m & target):
            counts[i] = counts.get(i, 0) + 1
    return max(counts.values()) - 1


def combinatorially_equivalent(F: Sequence, G: Sequence, max_index: int = 20) -> bool:
    """Same pattern of nonempty intersections over every index subset J.

    Members may be bitmasks or Python sets.  Subsets are explored along the
    nerve (a subset is only extended while its intersection is nonempty in
    both families), which is exhaustive because emptiness is inherited upward.
    """
    if len(F) != len(G):
        raise InputError("families must share their index set")
    if len(F) > max_index:
        raise SizeError(f"index set of size {len(F)} exceeds the exhaustive cap {max_index}")
    fm, gm = _to_masks(F), _to_masks(G)
    n = len(fm)

    def visit(start, a, b):
        for i in range(start, n):
            na, nb = a & fm[i], b & gm[i]
            if bool(na) != bool(nb):
                return False
            if na and not visit(i + 1, na, nb):
                return False
        return True

    return visit(0, -1, -1)


def _to_masks(family):
    if all(isinstance(m, int) for m in family):
        return list(family)
    universe = {}
    out = []
    for s in family:
        out.append(mask_of(universe.setdefault(e, len(universe)) for e in s))
    return out


# exact search -------------------------------------------------------------

def _relatively_open(p: FinitePoset, mask: int, target: int) -> bool:
    return p.is_up_set(mask & target, within=target)


def _candidates(p, alpha, target, cap, max_open):
    sub, idx = p.subposet(target)
    opens = open_sets(sub, cap=cap, max_open=max_open)
    maximal = sorted({m & target for m in alpha.members if m & target})
    cands = []
    for o in opens:
        if not o:
            continue
        om = mask_of(idx[i] for i in bits(o))
        if any(om & ~a == 0 for a in maximal):
            cands.append(om)
    return cands


def _check_cover(p, alpha, target):
    if not isinstance(p, FinitePoset):
        raise UnsupportedCarrierError("exact cover dimension needs a poset carrier")
    if target & ~alpha.union():
        raise InputError("alpha does not cover the target")
    for m in alpha.members:
        if not _relatively_open(p, m, target):
            raise InputError("alpha has a member that is not open")


def _search(target, cands, alpha, budget=None):
    """Branch and bound; returns (best ord, best member masks, nodes)."""
    pts = bits(target)
    by_point = {x: [c for c in cands if c >> x & 1] for x in pts}
    init = [m & target for m in alpha.members if m & target]
    best = {"value": ord_(Cover(alpha.carrier, tuple(init)), target), "members": init}
    counts = dict.fromkeys(pts, 0)
    chosen = []
    nodes = [0]

    def irredundant():
        for c in chosen:
            if all(counts[i] > 1 for i in bits(c)):
                return False
        return True

    def dfs(covered, curmax):
        if best["value"] == 0 or (budget is not None and nodes[0] >= budget):
            return
        rest = target & ~covered
        if not rest:
            if curmax - 1 < best["value"] and irredundant():
                best["value"], best["members"] = curmax - 1, list(chosen)
            return
        x = (rest & -rest).bit_length() - 1
        for c in by_point[x]:
            newmax = curmax
            for i in bits(c):
                if counts[i] + 1 > newmax:
                    newmax = counts[i] + 1
            if newmax - 1 >= best["value"]:
                continue
            nodes[0] += 1
            for i in bits(c):
                counts[i] += 1
            chosen.append(c)
            dfs(covered | c, newmax)
            chosen.pop()
            for i in bits(c):
                counts[i] -= 1
            if best["value"] == 0 or (budget is not None and nodes[0] >= budget):
                return

    dfs(0, 0)
    return best["value"], best["members"], nodes[0]


def dim_cover_exact(p: FinitePoset, alpha: Cover, target: int | None = None, cap: int = DEFAULT_POSET_CAP,
                    max_open: int = DEFAULT_OPEN_SET_CAP) -> DimResult:
    """Exact D(alpha) over open covers of ``target`` (relative topology)."""
    target = full_mask(p.size) if target is None else target
    if is_metric_carrier(p):
        return dim_cover_metric(p, alpha, target)
    _check_cover(p, alpha, target)
    if not target:
        return DimResult(-1, Cover(p, ()), 0, True)
    if bin(target).count("1") > cap:
        raise SizeError(f"target has {bin(target).count('1')} points (cap {cap}); use dim_cover_upper")
    cands = _candidates(p, alpha, target, cap, max_open)
    value, members, nodes = _search(target, cands, alpha)
    return DimResult(value, Cover(p, tuple(members)), nodes, True)


def dim_cover_upper(p: FinitePoset, alpha: Cover, budget: int, target: int | None = None) -> DimResult:
    """Upper bound on D(alpha) without enumerating the open-set lattice.

    Candidates are the members of alpha and the minimal neighbourhoods U_x,
    all relatively open and refining alpha; at most ``budget`` search nodes.
    """
    target = full_mask(p.size) if target is None else target
    _check_cover(p, alpha, target)
    if not target:
        return DimResult(-1, Cover(p, ()), 0, False)
    if budget <= 0:
        return DimResult(ord_(alpha, target), alpha, 0, False)
    pool = {m & target for m in alpha.members if m & target}
    pool |= {p.up[x] & target for x in bits(target)}
    cands = sorted(pool, key=lambda m: (bin(m).count("1"), bits(m)))
    value, members, nodes = _search(target, cands, alpha, budget=budget)
    return DimResult(value, Cover(p, tuple(members)), nodes, False)


def dim_cover_metric(space, alpha: Cover, target: int | None = None) -> DimResult:
    """On a finite metric space every point is open: singletons refine any cover, so D = 0."""
    target = full_mask(space.size) if target is None else target
    if target & ~alpha.union():
        raise InputError("alpha does not cover the target")
    if not target:
        return DimResult(-1, Cover(space, ()), 0, True)
    return DimResult(0, Cover(space, tuple(1 << i for i in bits(target))), 0, True)


# mean dimension -----------------------------------------------------------

def q_sequence(sys: BundleSystem, path: EnvPath, alpha: Cover, n_max: int) -> list:
    """[q_1, ..., q_{n_max}] with q_n = D of the n-step joined cover on the starting fiber."""
    if not sys.is_poset:
        raise UnsupportedCarrierError("q_n needs a poset carrier")
    target = sys.fibers[path.states[0]]
    out = []
    for cover in joined_covers(sys, path, alpha, n_max):
        out.append(dim_cover_exact(sys.carrier, cover, target=target).value)
    return out


def q_n(sys: BundleSystem, path: EnvPath, alpha: Cover, n: int) -> int:
    return q_sequence(sys, path, alpha, n)[-1]


def kingman_violations(sys: BundleSystem, path: EnvPath, alpha: Cover, n_max: int) -> list:
    """Splits (n, m) with q_{n+m}(w) > q_n(w) + q_m(theta^n w), for n + m <= n_max."""
    q = {0: q_sequence(sys, path, alpha, n_max)}
    bad = []
    for n in range(1, n_max):
        shifted = q_sequence(sys, path.shifted(n), alpha, n_max - n)
        for m in range(1, n_max - n + 1):
            if q[0][n + m - 1] > q[0][n - 1] + shifted[m - 1]:
                bad.append((n, m))
    return bad


@dataclass
class MdimReport:
    rows: list                      # (path index, n, q_n)
    mean_ratio: list                # E q_n / n for n = 1..n_max
    running_inf: list
    estimate: float
    per_path: dict = field(default_factory=dict)


def mdim_estimate(sys: BundleSystem, alpha: Cover, paths, n_max: int) -> MdimReport:
    """Running infimum over n of (1/n) E q_n; the infimum equals the limit for subadditive q."""
    weighted = weighted_paths(paths)
    rows, per_path = [], {}
    sums = [0.0] * n_max
    for path, w in weighted:
        qs = q_sequence(sys, path, alpha, n_max)
        per_path[path.index] = qs
        for n, q in enumerate(qs, start=1):
            rows.append((path.index, n, q))
            sums[n - 1] += w * q
    ratio = [sums[n - 1] / n for n in range(1, n_max + 1)]
    running = []
    cur = math.inf
    for r in ratio:
        cur = min(cur, r)
        running.append(cur)
    return MdimReport(rows=rows, mean_ratio=ratio, running_inf=running, estimate=running[-1], per_path=per_path)


@dataclass
class MdimSupReport:
    reports: list
    estimate: float
    monotonicity: list              # (i, j, n, ok) for declared pairs covers[i] refines covers[j]


def mdim_sup_estimate(sys: BundleSystem, covers: Sequence[Cover], paths, n_max: int,
                      refinement_pairs: Sequence = ()) -> MdimSupReport:
    """Estimate for each cover of a sequence plus the maximum.

    For each declared pair (i, j) with covers[i] refining covers[j], checks
    q_n(covers[i]) >= q_n(covers[j]) path by path at every n.
    """
    reports = [mdim_estimate(sys, a, paths, n_max) for a in covers]
    checks = []
    for i, j in refinement_pairs:
        if not refines(covers[i], covers[j]):
            raise InputError(f"cover {i} does not refine cover {j}")
        for pid, qi in reports[i].per_path.items():
            qj = reports[j].per_path[pid]
            for n in range(n_max):
                checks.append((i, j, pid, n + 1, qi[n] >= qj[n]))
    return MdimSupReport(reports=reports, estimate=max(r.estimate for r in reports), monotonicity=checks)


def poset_dimension_bound(sys: BundleSystem) -> int:
    """Uniform bound on D over all covers of all fibers."""
    return max(dimension_bound(sys.carrier, m) for m in sys.fibers.values())
