"""Bowen metrics along environment paths, separated sets, covers by small sets,
and the growth rates built from them.

The Bowen distance of two fiber points is the largest rescaled distance along
their first ``n`` orbit steps.  Two points are "close" when it is < 1.  In the
close graph a maximum independent set is a maximum separated set and a
minimum clique partition is a minimal cover by sets of diameter < 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .base import EnvPath, has_explicit_weights, weighted_paths
from .bundle import BundleSystem, iterate
from .errors import InputError, SizeError, UnsupportedCarrierError
from .graphs import complement, max_clique, min_clique_cover
from .spaces import SupMetricSpace

EXACT_CAP = 64
MODES = ("exact", "greedy", "auto")
DEFAULT_EPS_GRID = tuple(2.0 ** -k for k in range(2, 7))


@dataclass(frozen=True)
class EpsProcess:
    """Positive resolution per environment state, or one constant for all states."""

    constant: float | None = None
    per_state: dict | None = None

    def __post_init__(self):
        vals = [self.constant] if self.per_state is None else list(self.per_state.values())
        if (self.constant is None) == (self.per_state is None):
            raise InputError("give either a constant or a per-state table")
        if any(v is None or not v > 0 for v in vals):
            raise InputError("resolutions must be positive")

    def at(self, state) -> float:
        if self.per_state is None:
            return float(self.constant)
        try:
            return float(self.per_state[state])
        except KeyError:
            raise InputError(f"no resolution for environment state {state!r}") from None

    def scaled(self, factor: float) -> "EpsProcess":
        if self.per_state is None:
            return EpsProcess(constant=self.constant * factor)
        return EpsProcess(per_state={s: v * factor for s, v in self.per_state.items()})


def as_eps(eps) -> EpsProcess:
    if isinstance(eps, EpsProcess):
        return eps
    if isinstance(eps, dict):
        return EpsProcess(per_state=dict(eps))
    return EpsProcess(constant=float(eps))


def _require_metric(sys):
    if sys.is_poset:
        raise UnsupportedCarrierError("Bowen metrics need a metric carrier, not a poset")


class BowenFiber:
    """Bowen distances among the starting-fiber points of one path.

    On coordinate carriers the orbit coordinates of all stages are stacked
    once, so a distance row costs a few vector passes over the fiber.
    """

    def __init__(self, sys: BundleSystem, path: EnvPath, eps, n: int):
        _require_metric(sys)
        self.sys, self.path, self.n = sys, path, n
        self.eps = as_eps(eps)
        self.orbit = iterate(sys, path, n)
        self.scales = [self.eps.at(path.states[k]) for k in range(n)]
        carrier = sys.carrier
        self._coords = None
        if isinstance(carrier, SupMetricSpace):
            orb = self.orbit.orbit
            self._coords = np.concatenate([carrier.coords[orb[k]] for k in range(n)], axis=1)
            dims = carrier.coords.shape[1]
            self._weights = np.tile(carrier.weights, n)
            self._scale = np.repeat(np.asarray(self.scales, dtype=float), dims)
            self._columns = np.ascontiguousarray(self._coords.T)
            # distance per integer coordinate gap, same arithmetic as _column
            span = int(self._coords.max() - self._coords.min()) if self._coords.size else 0
            self._lut = None
            if span < 1 << 15:
                gaps = np.arange(span + 1)
                self._lut = [self._column(c, gaps, 0) for c in range(self._columns.shape[0])]
                self._columns = self._columns.astype(np.int16)

    @property
    def size(self) -> int:
        return self.orbit.start.size

    @property
    def points(self) -> np.ndarray:
        """Carrier indices of the fiber points, in fiber order."""
        return self.orbit.start

    def _column(self, c, a, b):
        carrier = self.sys.carrier
        d = np.abs(a - b)
        if carrier.period is not None:
            d = np.minimum(d, carrier.period - d)
        return d * self._weights[c] / carrier.denominator / self._scale[c]

    def block(self, rows, cols) -> np.ndarray:
        """Distances between fiber positions ``rows`` and ``cols``."""
        rows, cols = np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp)
        if self._coords is not None:
            out = np.zeros((rows.size, cols.size))
            for c in range(self._coords.shape[1]):
                z = self._coords[:, c]
                np.maximum(out, self._column(c, z[rows][:, None], z[cols][None, :]), out=out)
            return out
        orb = self.orbit.orbit
        out = None
        for k in range(self.n):
            d = self.sys.carrier.dist_matrix(orb[k, rows], orb[k, cols]) / self.scales[k]
            out = d if out is None else np.maximum(out, d)
        return out

    def row(self, i: int) -> np.ndarray:
        if self._coords is not None and self._lut is not None:
            out = np.zeros(self.size)
            for c, z in enumerate(self._columns):
                np.maximum(out, self._lut[c].take(np.abs(z - z[i])), out=out)
            return out
        return self.block([i], np.arange(self.size))[0]

    def matrix(self, positions=None) -> np.ndarray:
        pos = np.arange(self.size) if positions is None else np.asarray(positions)
        return self.block(pos, pos)

    def diameter(self, positions) -> float:
        """Bowen diameter of a set of fiber positions (inf when too costly to evaluate)."""
        pos = np.asarray(positions, dtype=np.intp)
        if pos.size < 2:
            return 0.0
        if self._coords is not None and self.sys.carrier.period is None:
            z = self._coords[pos]
            spread = z.max(axis=0) - z.min(axis=0)
            return float(np.max(self._column(slice(None), spread, 0)))
        if pos.size > 2048:
            return math.inf
        return float(self.matrix(pos).max())


def bowen_distance(sys: BundleSystem, path: EnvPath, eps, n: int, x: int, y: int) -> float:
    """max over k < n of d(T^k x, T^k y) / eps(w_k) for carrier points x, y of the starting fiber."""
    bf = BowenFiber(sys, path, eps, n)
    pos = {int(p): i for i, p in enumerate(bf.points)}
    if x not in pos or y not in pos:
        raise InputError("points must lie in the starting fiber")
    return float(bf.block([pos[x]], [pos[y]])[0, 0])


def close_graph(d: np.ndarray) -> list:
    """Adjacency bitmasks of {d < 1} without self-loops."""
    n = d.shape[0]
    close = (d < 1.0) & ~np.eye(n, dtype=bool)
    weights = 1 << np.arange(n, dtype=object) if n > 62 else (1 << np.arange(n, dtype=np.int64))
    return [int(np.sum(weights[row])) if row.any() else 0 for row in close]


@dataclass
class SepCovResult:
    value: int
    mode: str                   # exact | greedy-lower | greedy-upper | subsample-lower
    witness: list               # carrier indices (sep) or lists of carrier indices (cov)
    nodes: int = 0

    @property
    def exact(self) -> bool:
        return self.mode == "exact"


def _resolve_mode(mode, size, cap):
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    if mode == "auto":
        return "exact" if size <= cap else "greedy"
    if mode == "exact" and size > cap:
        raise SizeError(f"fiber has {size} points, above the exact cap {cap}; use mode greedy or auto")
    return mode


def _subset(bf, points):
    if points is None:
        return None
    pos = {int(p): i for i, p in enumerate(bf.points)}
    try:
        return np.asarray(sorted(pos[int(p)] for p in points), dtype=np.int64)
    except KeyError:
        raise InputError("subsample points must lie in the starting fiber") from None


def sep(sys: BundleSystem, path: EnvPath, eps, n: int, mode: str = "auto", cap: int = EXACT_CAP,
        points=None) -> SepCovResult:
    """Largest set of fiber points pairwise at Bowen distance >= 1.

    ``points`` restricts the search to a subset of the fiber; the exact answer
    there is a lower bound for the whole fiber and is flagged as such.
    """
    bf = BowenFiber(sys, path, eps, n)
    sub = _subset(bf, points)
    size = bf.size if sub is None else sub.size
    m = _resolve_mode(mode, size, cap)
    if m == "greedy":
        if sub is not None:
            raise InputError("subsampling is only meaningful with the exact solver")
        chosen = greedy_separated(bf)
        return SepCovResult(len(chosen), "greedy-lower", [int(bf.points[i]) for i in chosen])
    pos = np.arange(bf.size) if sub is None else sub
    adj = close_graph(bf.matrix(pos))
    clique, nodes = max_clique(complement(adj))
    tag = "exact" if sub is None or sub.size == bf.size else "subsample-lower"
    return SepCovResult(len(clique), tag, [int(bf.points[pos[i]]) for i in clique], nodes)


def cov(sys: BundleSystem, path: EnvPath, eps, n: int, mode: str = "auto", cap: int = EXACT_CAP) -> SepCovResult:
    """Fewest sets of Bowen diameter < 1 covering the fiber."""
    bf = BowenFiber(sys, path, eps, n)
    m = _resolve_mode(mode, bf.size, cap)
    if m == "greedy":
        groups = greedy_clique_partition(bf)
        return SepCovResult(len(groups), "greedy-upper", [[int(bf.points[i]) for i in g] for g in groups])
    adj = close_graph(bf.matrix())
    cliques, nodes = min_clique_cover(adj)
    return SepCovResult(len(cliques), "exact", [[int(bf.points[i]) for i in c] for c in cliques], nodes)


def greedy_separated(bf: BowenFiber) -> list:
    """Farthest-point insertion: a maximal separated set (lower bound on sep)."""
    chosen = [0]
    nearest = bf.row(0)
    while True:
        j = int(np.argmax(nearest))
        if nearest[j] < 1.0:
            return sorted(chosen)
        chosen.append(j)
        np.minimum(nearest, bf.row(j), out=nearest)


def greedy_clique_partition(bf: BowenFiber) -> list:
    """Partition into close cliques grown from the lowest uncovered point (upper bound on cov)."""
    uncovered = np.ones(bf.size, dtype=bool)
    groups = []
    while uncovered.any():
        u = int(np.argmax(uncovered))
        cand = np.flatnonzero(uncovered & (bf.row(u) < 1.0))
        cand = cand[cand != u]
        members = [u]
        while cand.size:
            # stop as soon as everything left fits together with the clique
            if bf.diameter(np.concatenate([members, cand])) < 1.0:
                members.extend(int(c) for c in cand)
                break
            c = int(cand[0])
            members.append(c)
            cand = cand[1:]
            cand = cand[bf.block([c], cand)[0] < 1.0]
        uncovered[members] = False
        groups.append(sorted(members))
    return groups


@dataclass
class SandwichReport:
    passed: bool
    sep_2eps: int
    cov_2eps: int
    sep_eps: int


def sandwich_check(sys: BundleSystem, path: EnvPath, eps, n: int, cap: int = EXACT_CAP) -> SandwichReport:
    """Exact sep(2 eps) <= cov(2 eps) <= sep(eps)."""
    e = as_eps(eps)
    a = sep(sys, path, e.scaled(2.0), n, mode="exact", cap=cap).value
    b = cov(sys, path, e.scaled(2.0), n, mode="exact", cap=cap).value
    c = sep(sys, path, e, n, mode="exact", cap=cap).value
    return SandwichReport(a <= b <= c, a, b, c)


# growth rates ---------------------------------------------------------------

def growth_rate(values: dict, how: str = "last", saturate: bool = True) -> float:
    """Per-step log growth of a sequence {n: count}.

    With ``saturate``, a sequence that is the same at every computed n (two or
    more of them) does not grow and gets rate 0.  Otherwise ``last`` gives
    (1/n) log c_n at the largest n and ``inf`` the infimum over n of (1/n) log c_n.
    """
    ns = sorted(values)
    if saturate and len(ns) >= 2 and len({values[n] for n in ns}) == 1:
        return 0.0
    rates = [math.log(values[n]) / n for n in ns]
    return rates[-1] if how == "last" else min(rates)


def lsq_slope(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.asarray(x, dtype=float), np.asarray(y, dtype=float), 1)
    return float(slope)


@dataclass
class GridCell:
    path_id: int
    eps: float
    n: int
    sep: int
    sep_mode: str
    cov: int | None
    cov_mode: str | None


@dataclass
class FiberRates:
    path_id: int
    cells: list
    S: dict                     # eps -> rate from cov (None when cov was skipped)
    S_prime: dict               # eps -> rate from sep
    ratio: dict                 # eps -> S'/(-log eps)
    min_ratio: float
    slope: float
    modes: set = field(default_factory=set)


def _eps_key(eps):
    e = as_eps(eps)
    if e.per_state is not None:
        raise InputError("growth profiles need constant resolutions on the grid")
    if not 0 < e.constant < 1:
        raise InputError("grid resolutions must lie in (0, 1)")
    return e.constant


def mmdim_fiber(sys: BundleSystem, path: EnvPath, eps_grid: Sequence[float], n_list: Sequence[int],
                mode: str = "auto", cap: int = EXACT_CAP, with_cov: bool = True) -> FiberRates:
    """sep/cov on the (eps, n) grid of one path, plus S, S', ratios, min-ratio and slope."""
    eps_grid = [_eps_key(e) for e in eps_grid]
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise InputError("eps grid must be strictly decreasing")
    cells, S, Sp = [], {}, {}
    modes = set()
    for e in eps_grid:
        seps, covs = {}, {}
        for n in sorted(n_list):
            s = sep(sys, path, e, n, mode=mode, cap=cap)
            c = cov(sys, path, e, n, mode=mode, cap=cap) if with_cov else None
            seps[n] = s.value
            modes.add(s.mode)
            if c is not None:
                covs[n] = c.value
                modes.add(c.mode)
            cells.append(GridCell(path.index, e, n, s.value, s.mode,
                                  None if c is None else c.value, None if c is None else c.mode))
        Sp[e] = growth_rate(seps, "last")
        # no saturation here: the plain infimum keeps S monotone in eps
        S[e] = growth_rate(covs, "inf", saturate=False) if covs else None
    ratio = {e: Sp[e] / -math.log(e) for e in eps_grid}
    slope = lsq_slope([-math.log(e) for e in eps_grid], [Sp[e] for e in eps_grid])
    return FiberRates(path.index, cells, S, Sp, ratio, min(ratio.values()), slope, modes)


@dataclass
class MmdimReport:
    fibers: list
    mean_min_ratio: float
    mean_slope: float
    se_min_ratio: float
    se_slope: float
    exact_expectation: bool
    modes: list
    mixed: bool

    @property
    def rows(self) -> list:
        return [c for f in self.fibers for c in f.cells]

    @property
    def estimate(self) -> float:
        return self.mean_min_ratio


def _mean_se(values, weights, exact):
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    mean = float(np.sum(w * v))
    if exact or v.size < 2 or np.any(np.isnan(v)):
        return mean, 0.0
    return mean, float(np.std(v, ddof=1) / math.sqrt(v.size))


def _check_modes(modes, allow_mixed):
    exact = {m for m in modes if m == "exact"}
    bounds = set(modes) - exact
    mixed = bool(exact) and bool(bounds)
    if mixed and not allow_mixed:
        raise InputError(f"refusing to aggregate exact values with bounds {sorted(bounds)}; "
                         "pass allow_mixed=True to accept a flagged mixture")
    return mixed


def mmdim_estimate(sys: BundleSystem, paths, eps_grid: Sequence[float], n_list: Sequence[int],
                   mode: str = "auto", cap: int = EXACT_CAP, with_cov: bool = True,
                   allow_mixed: bool = False, fiber_map=map) -> MmdimReport:
    """Average over paths of the per-fiber min-ratio and slope.

    ``fiber_map`` may be replaced by an order-preserving parallel map.
    """
    weighted = weighted_paths(paths)
    exact = has_explicit_weights(paths)
    fibers = list(fiber_map(_FiberJob(sys, eps_grid, n_list, mode, cap, with_cov), [p for p, _ in weighted]))
    modes = sorted(set().union(*(f.modes for f in fibers)))
    mixed = _check_modes(modes, allow_mixed)
    w = [wt for _, wt in weighted]
    mr, se_mr = _mean_se([f.min_ratio for f in fibers], w, exact)
    sl, se_sl = _mean_se([f.slope for f in fibers], w, exact)
    return MmdimReport(fibers, mr, sl, se_mr, se_sl, exact, modes, mixed)


@dataclass(frozen=True)
class _FiberJob:
    sys: BundleSystem
    eps_grid: tuple
    n_list: tuple
    mode: str
    cap: int
    with_cov: bool

    def __call__(self, path):
        return mmdim_fiber(self.sys, path, self.eps_grid, self.n_list, self.mode, self.cap, self.with_cov)


@dataclass
class HtopReport:
    per_path: dict              # path id -> S'(eps_min)
    estimate: float
    profile: dict               # eps -> mean S'(eps)
    modes: list


def htop_estimate(sys: BundleSystem, paths, eps_min: float, n_list: Sequence[int],
                  eps_profile: Sequence[float] = (), mode: str = "auto", cap: int = EXACT_CAP,
                  allow_mixed: bool = False) -> HtopReport:
    """E S'(w, eps_min): a lower proxy for topological entropy, with an eps profile."""
    grid = sorted({_eps_key(e) for e in eps_profile} | {_eps_key(eps_min)}, reverse=True)
    weighted = weighted_paths(paths)
    per_path, profile, modes = {}, dict.fromkeys(grid, 0.0), set()
    for path, w in weighted:
        fr = mmdim_fiber(sys, path, grid, n_list, mode=mode, cap=cap, with_cov=False)
        modes |= fr.modes
        per_path[path.index] = fr.S_prime[_eps_key(eps_min)]
        for e in grid:
            profile[e] += w * fr.S_prime[e]
    _check_modes(modes, allow_mixed)
    return HtopReport(per_path, profile[_eps_key(eps_min)], profile, sorted(modes))


# counting oracle for the truncated product shift ------------------------------

def line_separated_count(q: int, scale: float) -> int:
    """Largest subset of {0, 1/q, ..., 1} with pairwise gaps >= ``scale``."""
    step = math.ceil(round(q * scale, 12))
    return q // max(step, 1) + 1


def product_shift_sep_oracle(q: int, window: int, eps: float, n: int) -> int:
    """sep of the truncated product shift at constant eps.

    After k shifts, coordinate i sits at position i - k (while inside the
    window), where it carries weight 2^-|i-k|.  The Bowen distance is then a
    weighted sup metric with weight w_i = max_k 2^-|i-k| per coordinate, and
    the close graph is a strong product of unit-interval graphs, so sep is
    the product of one-dimensional counts at scale eps / w_i.
    """
    total = 1
    for i in range(-window, window + 1):
        w = max(2.0 ** -abs(i - k) for k in range(n) if abs(i - k) <= window)
        total *= line_separated_count(q, eps / w)
    return total
