"""Bundle random dynamical systems over a finite driving environment.

A :class:`BundleSystem` attaches a nonempty fiber (a subset of the carrier)
to every environment state and a fiber map to every environment transition.
Maps are dense integer tables over the carrier (``-1`` off the fiber), keyed by
the (state, successor) edge: for deterministic environments there is exactly
one edge per state, for stochastic ones the successor fixes the codomain.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from . import base
from .base import BaseEnvironment, EnvPath
from .errors import ContinuityError, InputError, SizeError
from .spaces import (Cover, FinitePoset, SupMetricSpace, bits, circle_grid, full_mask, is_metric_carrier,
                     mask_of)

MAX_PRODUCT_CARRIER = 400_000


@dataclass(frozen=True, eq=False)
class BundleSystem:
    env: BaseEnvironment
    carrier: object
    fibers: MappingProxyType
    maps: MappingProxyType
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "fibers", MappingProxyType(dict(self.fibers)))
        maps = {}
        for edge, table in self.maps.items():
            t = np.asarray(table, dtype=np.int64)
            t.setflags(write=False)
            maps[tuple(edge)] = t
        object.__setattr__(self, "maps", MappingProxyType(maps))
        object.__setattr__(self, "_fiber_idx", {})

    def __reduce__(self):
        return (BundleSystem, (self.env, self.carrier, dict(self.fibers), dict(self.maps), self.name, self.params))

    def fiber(self, state) -> int:
        return self.fibers[state]

    def fiber_indices(self, state) -> np.ndarray:
        cache = self._fiber_idx
        if state not in cache:
            cache[state] = np.asarray(bits(self.fibers[state]), dtype=np.int64)
        return cache[state]

    def map_for(self, state, succ) -> np.ndarray:
        try:
            return self.maps[(state, succ)]
        except KeyError:
            raise InputError(f"no fiber map for environment edge {state!r} -> {succ!r}") from None

    @property
    def is_poset(self) -> bool:
        return isinstance(self.carrier, FinitePoset)


@dataclass
class ValidationReport:
    passed: bool
    problems: list

    def __bool__(self):
        return self.passed


def validate(sys: BundleSystem) -> ValidationReport:
    """Check nonempty fibers, T(E_w) inside E_succ on every edge, and monotonicity on posets."""
    problems = []
    n = sys.carrier.size
    for s in sys.env.states:
        if s not in sys.fibers:
            problems.append(f"state {s!r}: no fiber")
        elif not sys.fibers[s]:
            problems.append(f"state {s!r}: empty fiber")
    for s, t in sys.env.edges():
        if (s, t) not in sys.maps:
            problems.append(f"edge {s!r}->{t!r}: no map table")
            continue
        table = sys.maps[(s, t)]
        if table.shape != (n,):
            problems.append(f"edge {s!r}->{t!r}: table has shape {table.shape}, expected ({n},)")
            continue
        src, dst = sys.fibers.get(s, 0), sys.fibers.get(t, 0)
        for x in bits(src):
            y = int(table[x])
            if not 0 <= y < n or not dst >> y & 1:
                problems.append(f"edge {s!r}->{t!r}: point {_label(sys, x)!r} maps to "
                                f"{_label(sys, y) if 0 <= y < n else y!r}, outside the successor fiber")
        if sys.is_poset:
            w = sys.carrier.is_monotone(table, src)
            if w is not None:
                x, y = w
                problems.append(f"edge {s!r}->{t!r}: not order-preserving, {_label(sys, x)!r} <= "
                                f"{_label(sys, y)!r} but T x = {_label(sys, int(table[x]))!r} is not <= "
                                f"T y = {_label(sys, int(table[y]))!r}")
    return ValidationReport(not problems, problems)


def _label(sys, i):
    pts = sys.carrier.elements if sys.is_poset else sys.carrier.points
    return pts[i]


def _require_valid(sys):
    rep = validate(sys)
    if not rep.passed:
        raise InputError("invalid bundle system: " + "; ".join(rep.problems[:5]))
    return sys


# orbits -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OrbitTable:
    """``orbit[k, i]`` is the carrier index of T^k applied to the i-th fiber point."""

    path: EnvPath
    start: np.ndarray
    orbit: np.ndarray

    @property
    def n(self) -> int:
        return self.orbit.shape[0]


def iterate(sys: BundleSystem, path: EnvPath, n: int) -> OrbitTable:
    if n < 1:
        raise InputError("n must be positive")
    if path.length < n:
        raise InputError(f"path of length {path.length} is shorter than n = {n}")
    for k in range(n - 1):
        a, b = path.states[k], path.states[k + 1]
        if b not in sys.env.successors(a):
            raise InputError(f"path step {k}: {a!r} -> {b!r} is not a transition of the environment")
    start = sys.fiber_indices(path.states[0])
    orbit = np.empty((n, start.size), dtype=np.int64)
    orbit[0] = start
    for k in range(1, n):
        orbit[k] = sys.map_for(path.states[k - 1], path.states[k])[orbit[k - 1]]
    return OrbitTable(path=path, start=start, orbit=orbit)


def _stage_members(sys, alpha, orb, k):
    """Members of (T^k)^-1 (alpha restricted to the stage-k fiber), as fiber-0 masks."""
    fiber_k = sys.fibers[orb.path.states[k]]
    pts = orb.orbit[k]
    out = []
    for a in alpha.members:
        a &= fiber_k
        out.append(mask_of(int(orb.start[i]) for i in range(pts.size) if a >> int(pts[i]) & 1))
    return out


def _check_continuity(sys, path, n):
    if not sys.is_poset:
        return
    for k in range(n - 1):
        s, t = path.states[k], path.states[k + 1]
        w = sys.carrier.is_monotone(sys.map_for(s, t), sys.fibers[s])
        if w is not None:
            raise ContinuityError(f"fiber map on edge {s!r}->{t!r} is not order-preserving at {w}")


def join_orbit_cover(sys: BundleSystem, path: EnvPath, alpha: Cover, n: int, keep_empty: bool = True,
                     max_members: int = 1 << 20) -> Cover:
    """The n-step joined pullback cover of the starting fiber.

    Member labelled (j_0, ..., j_{n-1}) is the set of x in the fiber with
    T^k x in A_{j_k} for every k < n.  With ``keep_empty`` every label is
    present (possibly with an empty member); otherwise only distinct nonempty
    members are returned, each with the first label (lexicographic) producing it.
    """
    if alpha.union() & full_mask(sys.carrier.size) != full_mask(sys.carrier.size):
        raise InputError("alpha must cover the carrier")
    orb = iterate(sys, path, n)
    _check_continuity(sys, path, n)
    stages = [_stage_members(sys, alpha, orb, k) for k in range(n)]
    if keep_empty:
        total = len(alpha) ** n
        if total > max_members:
            raise SizeError(f"joined cover would have {total} labelled members (cap {max_members}); "
                            "use keep_empty=False")
        members, labels = [], []
        for combo in itertools.product(range(len(alpha)), repeat=n):
            m = -1
            for k, j in enumerate(combo):
                m &= stages[k][j]
            members.append(m)
            labels.append(combo)
        return Cover(sys.carrier, tuple(members), tuple(labels))
    return _compact_join(sys.carrier, stages)


def _join_step(current, stage):
    """Intersect every member of ``current`` (mask -> label) with every stage member."""
    if current is None:
        out = {}
        for j, m in enumerate(stage):
            if m and m not in out:
                out[m] = (j,)
        return out
    out = {}
    for m, lab in sorted(current.items(), key=lambda kv: kv[1]):
        for j, s in enumerate(stage):
            inter = m & s
            if inter and inter not in out:
                out[inter] = lab + (j,)
    return out


def _as_cover(carrier, current):
    items = sorted(current.items(), key=lambda kv: kv[1])
    return Cover(carrier, tuple(m for m, _ in items), tuple(l for _, l in items))


def _compact_join(carrier, stages):
    current = None
    for stage in stages:
        current = _join_step(current, stage)
    return _as_cover(carrier, current)


def joined_covers(sys: BundleSystem, path: EnvPath, alpha: Cover, n_max: int):
    """Yield the compact joined cover for n = 1, ..., n_max incrementally."""
    if alpha.union() & full_mask(sys.carrier.size) != full_mask(sys.carrier.size):
        raise InputError("alpha must cover the carrier")
    orb = iterate(sys, path, n_max)
    _check_continuity(sys, path, n_max)
    current = None
    for k in range(n_max):
        current = _join_step(current, _stage_members(sys, alpha, orb, k))
        yield _as_cover(sys.carrier, current)


def shares_join_member(sys: BundleSystem, path: EnvPath, alpha: Cover, n: int, x: int, y: int) -> bool:
    """True iff x and y lie in a common member of the n-step joined cover.

    Equivalent to: for every k < n some member of alpha contains both T^k x and
    T^k y.  Checked stage by stage, so it never enumerates the l^n labels.
    """
    orb = iterate(sys, path, n)
    pos = {int(p): i for i, p in enumerate(orb.start)}
    if x not in pos or y not in pos:
        raise InputError("points must lie in the starting fiber")
    ix, iy = pos[x], pos[y]
    for k in range(n):
        fiber_k = sys.fibers[path.states[k]]
        a, b = int(orb.orbit[k, ix]), int(orb.orbit[k, iy])
        if not any((m & fiber_k) >> a & 1 and (m & fiber_k) >> b & 1 for m in alpha.members):
            return False
    return True


# generators ---------------------------------------------------------------

def _edge_tables(env, table_for_state):
    return {(s, t): table_for_state(s, t) for s, t in env.edges()}


def _as_mask(carrier, fiber):
    if isinstance(fiber, (int, np.integer)):
        return int(fiber)
    pts = carrier.elements if isinstance(carrier, FinitePoset) else carrier.points
    lookup = {p: i for i, p in enumerate(pts)}
    return mask_of(lookup[e] if e in lookup else int(e) for e in fiber)


def make_inclusion_system(env: BaseEnvironment, carrier, fibers: dict | None = None) -> BundleSystem:
    """T_w is the inclusion E_w into E_succ; fibers must be nested along every edge."""
    full = full_mask(carrier.size)
    fib = {s: full for s in env.states} if fibers is None else \
        {s: _as_mask(carrier, fibers[s]) for s in env.states}
    ident = np.arange(carrier.size)

    def table(s, t):
        out = np.full(carrier.size, -1)
        idx = bits(fib[s])
        out[idx] = ident[idx]
        return out
    sys = BundleSystem(env, carrier, fib, _edge_tables(env, table), name="inclusion")
    return _require_valid(sys)


def make_random_rotation_grid(m: int, offsets, env: BaseEnvironment | None = None) -> BundleSystem:
    """Z_m on the circle; T_w x = x + offset(w) mod m."""
    if env is None:
        if isinstance(offsets, dict):
            raise InputError("pass an environment when offsets are given per state")
        offsets = list(offsets) if not isinstance(offsets, int) else [offsets]
        env = base.point_mass() if len(offsets) == 1 else base.cyclic(len(offsets))
    if not isinstance(offsets, dict):
        offsets = list(offsets) if not isinstance(offsets, int) else [offsets]
        if len(offsets) != len(env.states):
            raise InputError("one rotation offset per environment state is required")
        offsets = dict(zip(env.states, offsets))
    carrier = circle_grid(m)
    full = full_mask(m)
    x = np.arange(m)
    sys = BundleSystem(env, carrier, {s: full for s in env.states},
                       _edge_tables(env, lambda s, t: (x + int(offsets[s])) % m),
                       name="rotation-grid", params={"m": m, "offsets": {str(k): int(v) for k, v in offsets.items()}})
    return _require_valid(sys)


def _word_space(alphabet_values, window, denominator):
    """All words of length 2W+1 over the (sorted) alphabet with weights 2^-|i|."""
    a = len(alphabet_values)
    length = 2 * window + 1
    if a ** length > MAX_PRODUCT_CARRIER:
        raise SizeError(f"{a}^{length} words exceed the cap of {MAX_PRODUCT_CARRIER}")
    digits = np.array(list(itertools.product(range(a), repeat=length)), dtype=np.int64).reshape(-1, length)
    coords = np.asarray(alphabet_values, dtype=np.int64)[digits]
    weights = [2.0 ** -abs(i) for i in range(-window, window + 1)]
    return SupMetricSpace(coords, weights=weights, denominator=denominator), digits


def _shift_table(size, a, length, pad_digit):
    idx = np.arange(size, dtype=np.int64)
    return (idx % a ** (length - 1)) * a + pad_digit


def make_product_shift(q: int, window: int, env: BaseEnvironment | None = None) -> BundleSystem:
    """Truncated shift on words over the grid {0, 1/q, ..., 1} with window {-W..W}.

    Metric d(x, y) = max_i 2^-|i| |x_i - y_i|.  The map drops the leftmost
    coordinate and pads the rightmost with the alphabet minimum 0; the fiber
    is the full word set.
    """
    env = base.point_mass() if env is None else env
    carrier, _ = _word_space(range(q + 1), window, q)
    a, length = q + 1, 2 * window + 1
    full = full_mask(carrier.size)
    table = _shift_table(carrier.size, a, length, 0)
    sys = BundleSystem(env, carrier, {s: full for s in env.states}, _edge_tables(env, lambda s, t: table),
                       name="product-shift", params={"q": q, "window": window})
    return _require_valid(sys)


def make_random_subshift(window: int, alphabet, allowed: dict, env: BaseEnvironment) -> BundleSystem:
    """Words over ``alphabet`` (integers) whose newest symbol is allowed by the state.

    E_w = words with rightmost symbol in allowed[w]; T on edge (w, w') shifts
    left and pads with min(allowed[w']), so T(E_w) lies in E_w'.  Symbols are
    scaled by max(alphabet) into [0, 1].
    """
    alphabet = sorted(int(s) for s in alphabet)
    a, length = len(alphabet), 2 * window + 1
    if any(not set(allowed[s]) <= set(alphabet) or not allowed[s] for s in env.states):
        raise InputError("allowed symbols must be nonempty subsets of the alphabet")
    carrier, digits = _word_space(alphabet, window, max(max(alphabet), 1))
    pos = {sym: i for i, sym in enumerate(alphabet)}
    fibers = {}
    for s in env.states:
        ok = np.isin(digits[:, -1], [pos[v] for v in allowed[s]])
        fibers[s] = mask_of(np.flatnonzero(ok))

    def table(s, t):
        out = _shift_table(carrier.size, a, length, pos[min(allowed[t])])
        out = out.copy()
        out[~np.isin(np.arange(carrier.size), bits(fibers[s]))] = -1
        return out
    sys = BundleSystem(env, carrier, fibers, _edge_tables(env, table), name="random-subshift",
                       params={"window": window, "alphabet": alphabet,
                               "allowed": {str(k): sorted(v) for k, v in allowed.items()}})
    return _require_valid(sys)


def make_poset_bundle(poset: FinitePoset, env: BaseEnvironment, maps: dict, fibers: dict | None = None,
                      name: str = "poset") -> BundleSystem:
    """Order-preserving maps per environment state (used on every outgoing edge)."""
    full = full_mask(poset.size)
    fib = {s: full for s in env.states} if fibers is None else \
        {s: _as_mask(poset, fibers[s]) for s in env.states}
    tables = {}
    for s in env.states:
        table_or_dict = maps[s]
        if isinstance(table_or_dict, dict):
            t = np.full(poset.size, -1)
            for k, v in table_or_dict.items():
                t[poset.index(k)] = poset.index(v)
        else:
            t = np.asarray([poset.index(v) if v in poset._index else int(v) for v in table_or_dict], dtype=np.int64)
        tables[s] = t
    sys = BundleSystem(env, poset, fib, {(s, t): tables[s] for s, t in env.edges()}, name=name)
    return _require_valid(sys)


def sub_bundle(sys: BundleSystem, fibers: dict) -> BundleSystem:
    """Restriction to C with C_w inside E_w and T(C_w) inside C_succ (strict forward invariance)."""
    fib = {s: _as_mask(sys.carrier, fibers[s]) for s in sys.env.states}
    for s in sys.env.states:
        if fib[s] & ~sys.fibers[s]:
            raise InputError(f"sub-bundle fiber at {s!r} is not inside the ambient fiber")
    maps = {}
    for (s, t), table in sys.maps.items():
        out = np.full_like(table, -1)
        idx = bits(fib[s])
        out[idx] = table[idx]
        maps[(s, t)] = out
    return _require_valid(BundleSystem(sys.env, sys.carrier, fib, maps, name=sys.name + "|sub"))


def forward_invariant_closure(sys: BundleSystem, seeds: dict) -> dict:
    """Smallest family C_w containing ``seeds`` with T(C_w) inside C_succ on every edge."""
    fib = {s: _as_mask(sys.carrier, seeds.get(s, 0)) & sys.fibers[s] for s in sys.env.states}
    changed = True
    while changed:
        changed = False
        for s, t in sys.env.edges():
            img = mask_of(int(v) for v in sys.maps[(s, t)][bits(fib[s])])
            if img & ~fib[t]:
                fib[t] |= img
                changed = True
    return fib


# serialisation -------------------------------------------------------------

def to_canonical_json(sys: BundleSystem) -> str:
    """Sorted-key text form of a system, stable across runs (for golden files)."""
    carrier = sys.carrier
    if isinstance(carrier, FinitePoset):
        cdesc = {"kind": "poset", "elements": [str(e) for e in carrier.elements],
                 "up": [[str(carrier.elements[j]) for j in bits(u)] for u in carrier.up]}
    elif isinstance(carrier, SupMetricSpace):
        cdesc = {"kind": "sup-metric", "size": carrier.size, "denominator": carrier.denominator,
                 "weights": [float(w) for w in carrier.weights], "period": carrier.period}
    else:
        cdesc = {"kind": "metric", "points": [str(p) for p in carrier.points],
                 "table": [[format(float(v), ".17g") for v in row] for row in carrier.table()]}
    env = sys.env
    edesc = {"kind": env.kind, "states": [str(s) for s in env.states],
             "law": [format(p, ".17g") for p in env.law]}
    doc = {
        "name": sys.name,
        "carrier": cdesc,
        "environment": edesc,
        "fibers": {str(s): bits(m) for s, m in sys.fibers.items()},
        "maps": {f"{s}->{t}": [int(v) for v in table] for (s, t), table in sys.maps.items()},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))
