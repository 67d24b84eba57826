"""Finite carriers for the state space and the cover algebra on them.

Two carriers are supported:

* :class:`FinitePoset` -- a finite T0 topological space.  Open sets are the
  up-sets of the order (Alexandrov topology), so continuous maps are exactly
  the order-preserving ones and cover dimension can be nonzero.
* :class:`FiniteMetricSpace` / :class:`SupMetricSpace` -- finite metric point
  clouds, used for Bowen metrics, orbit capacity and partitions of unity.

Subsets of a carrier are Python ``int`` bitmasks over the carrier's index
range (bit ``i`` set means point ``i`` is in the subset).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContinuityError, InputError, SizeError

DEFAULT_POSET_CAP = 16
DEFAULT_OPEN_SET_CAP = 4096
TRIANGLE_TOL = 1e-12


# bitmask helpers ----------------------------------------------------------

def bits(mask: int) -> list:
    """Indices of the set bits of ``mask`` in increasing order."""
    if mask.bit_length() > 2048:
        raw = np.frombuffer(mask.to_bytes((mask.bit_length() + 7) // 8, "little"), dtype=np.uint8)
        return np.flatnonzero(np.unpackbits(raw, bitorder="little")).tolist()
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def mask_of(indices: Iterable[int]) -> int:
    if isinstance(indices, np.ndarray) and indices.size > 256:
        flags = np.zeros(int(indices.max()) + 1, dtype=np.uint8)
        flags[indices] = 1
        return int.from_bytes(np.packbits(flags, bitorder="little").tobytes(), "little")
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


def full_mask(n: int) -> int:
    return (1 << n) - 1


def popcount(mask: int) -> int:
    return mask.bit_count()


# posets -------------------------------------------------------------------

class FinitePoset:
    """A finite partial order; ``up[i]`` is the bitmask of all j with i <= j."""

    def __init__(self, elements: Sequence, leq: Sequence[Sequence[bool]]):
        n = len(elements)
        if len(set(elements)) != n:
            raise InputError("poset elements must be distinct")
        table = np.asarray(leq, dtype=bool).reshape(n, n) if n else np.zeros((0, 0), dtype=bool)
        if not table.diagonal().all():
            raise InputError("order relation is not reflexive")
        off = table & table.T & ~np.eye(n, dtype=bool)
        if off.any():
            i, j = np.argwhere(off)[0]
            raise InputError(f"order relation is not antisymmetric at ({elements[i]!r}, {elements[j]!r})")
        closure = (table.astype(np.int64) @ table.astype(np.int64)) > 0
        if (closure & ~table).any():
            i, j = np.argwhere(closure & ~table)[0]
            raise InputError(f"order relation is not transitive: missing {elements[i]!r} <= {elements[j]!r}")
        self.elements = tuple(elements)
        self._index = {e: i for i, e in enumerate(self.elements)}
        self.up = tuple(mask_of(np.flatnonzero(table[i])) for i in range(n))
        self.down = tuple(mask_of(np.flatnonzero(table[:, i])) for i in range(n))

    @classmethod
    def from_covering(cls, elements: Sequence, pairs: Iterable) -> "FinitePoset":
        """Build the order generated by ``x < y`` for each (x, y) in ``pairs``."""
        elements = tuple(elements)
        idx = {e: i for i, e in enumerate(elements)}
        n = len(elements)
        rel = np.eye(n, dtype=bool)
        for x, y in pairs:
            if x not in idx or y not in idx:
                raise InputError(f"covering pair ({x!r}, {y!r}) names an unknown element")
            rel[idx[x], idx[y]] = True
        # Warshall transitive closure
        for k in range(n):
            rel |= rel[:, [k]] & rel[[k], :]
        return cls(elements, rel)

    @classmethod
    def antichain(cls, elements: Sequence) -> "FinitePoset":
        return cls.from_covering(elements, [])

    @property
    def size(self) -> int:
        return len(self.elements)

    def index(self, e) -> int:
        try:
            return self._index[e]
        except (KeyError, TypeError):
            raise InputError(f"unknown poset element {e!r}") from None

    def leq(self, i: int, j: int) -> bool:
        return bool(self.up[i] >> j & 1)

    def is_up_set(self, mask: int, within: int | None = None) -> bool:
        """True iff ``mask`` is open; relative to the subspace ``within`` when given."""
        for i in bits(mask):
            up = self.up[i] if within is None else self.up[i] & within
            if up & ~mask:
                return False
        return True

    def up_closure(self, mask: int) -> int:
        out = 0
        for i in bits(mask):
            out |= self.up[i]
        return out

    def subposet(self, mask: int) -> tuple:
        """Induced order on ``mask``; returns (poset, carrier indices of its elements)."""
        idx = bits(mask)
        leq = [[self.leq(i, j) for j in idx] for i in idx]
        return FinitePoset([self.elements[i] for i in idx], leq), idx

    def is_monotone(self, table: Sequence[int], domain: int) -> tuple | None:
        """Return a witness (x, y) with x <= y but f(x) not <= f(y), or None."""
        for x in bits(domain):
            for y in bits(self.up[x] & domain):
                if not self.leq(table[x], table[y]):
                    return (x, y)
        return None

    def __repr__(self):
        return f"FinitePoset({self.elements!r})"


def open_sets(p: FinitePoset, cap: int = DEFAULT_POSET_CAP, max_open: int = DEFAULT_OPEN_SET_CAP) -> list:
    """All up-sets of ``p`` (including the empty set and the whole space).

    Returned in canonical order: by size, then by sorted member indices.
    """
    n = p.size
    if n > cap:
        raise SizeError(f"poset has {n} elements (cap {cap}); use dim_cover_upper instead")
    # decide elements from the top down: every strict upper bound is decided first
    order = sorted(range(n), key=lambda i: -popcount(p.down[i]))
    out = []
    stack = [(0, 0)]
    while stack:
        k, chosen = stack.pop()
        if k == n:
            out.append(chosen)
            if len(out) > max_open:
                raise SizeError(f"more than {max_open} open sets; use dim_cover_upper instead")
            continue
        e = order[k]
        stack.append((k + 1, chosen))
        if not (p.up[e] & ~(1 << e)) & ~chosen:
            stack.append((k + 1, chosen | (1 << e)))
    out.sort(key=lambda m: (popcount(m), bits(m)))
    return out


def minimal_open_neighborhood(p: FinitePoset, x) -> int:
    """U_x, the smallest open set containing ``x`` (its up-set)."""
    if x not in p._index and isinstance(x, (int, np.integer)) and 0 <= x < p.size:
        return p.up[int(x)]
    return p.up[p.index(x)]


def dimension_bound(p: FinitePoset, target: int | None = None) -> int:
    """ord of the minimal-neighbourhood cover {U_x : x minimal}; bounds D of every cover."""
    target = full_mask(p.size) if target is None else target
    if not target:
        return -1
    minimal = [x for x in bits(target) if not (p.down[x] & target) & ~(1 << x)]
    return max(sum(1 for x in minimal if p.up[x] >> y & 1) for y in bits(target)) - 1


# metric spaces ------------------------------------------------------------

class FiniteMetricSpace:
    """A finite metric space given by an explicit distance table."""

    def __init__(self, points: Sequence, table, validate: bool = True):
        d = np.asarray(table, dtype=float)
        n = len(points)
        if d.shape != (n, n):
            raise InputError(f"distance table must be {n}x{n}")
        if validate:
            _check_metric(d)
        self.points = tuple(points)
        self._table = d

    @classmethod
    def from_lower_triangular(cls, points: Sequence, rows: Sequence[Sequence[float]]) -> "FiniteMetricSpace":
        """Rows i = 1..n-1 hold d(i, 0), ..., d(i, i-1); row 0 may be omitted or empty."""
        n = len(points)
        rows = list(rows)
        if len(rows) == n - 1:
            rows = [[]] + rows
        if len(rows) != n:
            raise InputError("expected one lower-triangular row per point")
        d = np.zeros((n, n))
        for i, row in enumerate(rows):
            if len(row) != i:
                raise InputError(f"row {i} must have {i} entries")
            d[i, :i] = row
            d[:i, i] = row
        return cls(points, d)

    @classmethod
    def line(cls, values: Sequence[float]) -> "FiniteMetricSpace":
        v = np.asarray(values, dtype=float)
        return cls(tuple(values), np.abs(v[:, None] - v[None, :]))

    @property
    def size(self) -> int:
        return len(self.points)

    def distance(self, i: int, j: int) -> float:
        return float(self._table[i, j])

    def dist_matrix(self, ii, jj) -> np.ndarray:
        return self._table[np.ix_(np.asarray(ii, dtype=np.intp), np.asarray(jj, dtype=np.intp))]

    def table(self) -> np.ndarray:
        return self._table

    def min_positive_distance(self) -> float:
        d = self._table[self._table > 0]
        return float(d.min()) if d.size else 0.0


class SupMetricSpace:
    """Points with integer coordinates and metric ``max_c w_c |dx_c| / denominator``.

    A coordinate with ``period`` P uses the cyclic difference min(|dx|, P - |dx|).
    This is a metric by construction, so no table is materialised; it covers the
    circle grid (one periodic coordinate) and truncated shift spaces (weights 2^-|i|).
    """

    def __init__(self, coords, weights=None, denominator: float = 1.0, period: int | None = None,
                 labels: Sequence | None = None):
        c = np.asarray(coords, dtype=np.int64)
        if c.ndim == 1:
            c = c[:, None]
        self.coords = c
        self.weights = np.ones(c.shape[1]) if weights is None else np.asarray(weights, dtype=float)
        if self.weights.shape != (c.shape[1],) or np.any(self.weights <= 0):
            raise InputError("weights must be positive, one per coordinate")
        if denominator <= 0:
            raise InputError("denominator must be positive")
        self.denominator = float(denominator)
        self.period = period
        self._labels = labels

    @property
    def points(self) -> tuple:
        if self._labels is not None:
            return tuple(self._labels)
        return tuple(tuple(int(v) for v in row) for row in self.coords)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    def _diff(self, a, b):
        d = np.abs(a - b)
        if self.period is not None:
            d = np.minimum(d, self.period - d)
        return d

    def distance(self, i: int, j: int) -> float:
        d = self._diff(self.coords[i], self.coords[j])
        return float(np.max(d * self.weights) / self.denominator)

    def dist_matrix(self, ii, jj) -> np.ndarray:
        a = self.coords[np.asarray(ii, dtype=np.intp)]
        b = self.coords[np.asarray(jj, dtype=np.intp)]
        out = np.zeros((a.shape[0], b.shape[0]))
        for c in range(a.shape[1]):
            np.maximum(out, self._diff(a[:, None, c], b[None, :, c]) * self.weights[c], out=out)
        return out / self.denominator

    def table(self) -> np.ndarray:
        if self.size > 4096:
            raise SizeError("refusing to materialise a distance table above 4096 points")
        idx = np.arange(self.size)
        return self.dist_matrix(idx, idx)

    def min_positive_distance(self) -> float:
        w = self.weights.min()
        return float(w / self.denominator)


def circle_grid(m: int) -> SupMetricSpace:
    """Z_m embedded in the unit circle with arc-length metric min(|i-j|, m-|i-j|)/m."""
    return SupMetricSpace(np.arange(m), denominator=m, period=m, labels=tuple(range(m)))


def grid_line(m: int) -> SupMetricSpace:
    """The points 0, 1/m, ..., 1 of the unit interval."""
    return SupMetricSpace(np.arange(m + 1), denominator=m, labels=tuple(range(m + 1)))


def _check_metric(d: np.ndarray, tol: float = TRIANGLE_TOL) -> None:
    n = d.shape[0]
    if np.any(d < 0):
        raise InputError("distances must be nonnegative")
    if np.any(np.diag(d) != 0):
        raise InputError("distance table must have zero diagonal")
    if not np.array_equal(d, d.T):
        raise InputError("distance table must be symmetric")
    off = d + np.eye(n)
    if n and np.any(off <= 0):
        i, j = np.argwhere(off <= 0)[0]
        raise InputError(f"distinct points {i} and {j} are at distance 0")
    # triangle inequality d(i,k) <= d(i,j) + d(j,k), chunked over j
    for j in range(n):
        viol = d - (d[:, [j]] + d[[j], :])
        if np.any(viol > tol):
            i, k = np.argwhere(viol > tol)[0]
            raise InputError(f"triangle inequality fails for ({i}, {j}, {k})")


def is_metric_carrier(carrier) -> bool:
    return isinstance(carrier, (FiniteMetricSpace, SupMetricSpace))


# covers -------------------------------------------------------------------

@dataclass(frozen=True)
class Cover:
    """An indexed family of subsets of ``carrier``; empty members are kept."""

    carrier: object
    members: tuple
    labels: tuple = None

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        object.__setattr__(self, "members", members)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple((i,) for i in range(len(members))))
        elif len(self.labels) != len(members):
            raise InputError("one label per cover member is required")
        limit = 1 << self.carrier.size
        if any(m < 0 or m >= limit for m in members):
            raise InputError("cover member has an index outside the carrier")

    @classmethod
    def from_sets(cls, carrier, sets: Iterable[Iterable], labels=None) -> "Cover":
        """Members given as collections of carrier element labels."""
        index = carrier.index if isinstance(carrier, FinitePoset) else _metric_index(carrier)
        return cls(carrier, tuple(mask_of(index(e) for e in s) for s in sets), labels)

    def __len__(self):
        return len(self.members)

    def union(self) -> int:
        u = 0
        for m in self.members:
            u |= m
        return u

    def nonempty(self) -> "Cover":
        keep = [(m, l) for m, l in zip(self.members, self.labels) if m]
        return Cover(self.carrier, tuple(m for m, _ in keep), tuple(l for _, l in keep))

    def restrict(self, target: int) -> "Cover":
        return Cover(self.carrier, tuple(m & target for m in self.members), self.labels)

    def member(self, label) -> int:
        return self.members[self.labels.index(tuple(label))]

    def as_sets(self) -> list:
        pts = self.carrier.elements if isinstance(self.carrier, FinitePoset) else self.carrier.points
        return [[pts[i] for i in bits(m)] for m in self.members]


def _metric_index(space):
    lookup = {p: i for i, p in enumerate(space.points)}

    def index(e):
        if e in lookup:
            return lookup[e]
        raise InputError(f"unknown point {e!r}")
    return index


def is_open_cover(carrier, target: int, alpha: Cover) -> bool:
    """Every point of ``target`` lies in a member and, on posets, every member is open."""
    if target & ~alpha.union():
        return False
    if isinstance(carrier, FinitePoset):
        return all(carrier.is_up_set(m) for m in alpha.members)
    return True


def refines(beta: Cover, alpha: Cover) -> bool:
    """beta refines alpha: each nonempty member of beta sits inside a member of alpha."""
    return all(any(b & ~a == 0 for a in alpha.members) for b in beta.members if b)


def join(covers: Sequence[Cover], max_members: int = 1 << 20) -> Cover:
    """All intersections A_{j_0} & ... & A_{j_{n-1}}, labelled by concatenated index tuples."""
    if not covers:
        raise InputError("join of an empty list of covers")
    carrier = covers[0].carrier
    total = 1
    for c in covers:
        total *= len(c)
    if total > max_members:
        raise SizeError(f"join would have {total} members (cap {max_members})")
    members, labels = [], []
    for combo in itertools.product(*[list(zip(c.members, c.labels)) for c in covers]):
        m = -1
        label = ()
        for mem, lab in combo:
            m &= mem
            label += lab
        members.append(m if m != -1 else 0)
        labels.append(label)
    return Cover(carrier, tuple(members), tuple(labels))


def pullback(alpha: Cover, f: Sequence[int], domain_carrier, domain: int | None = None) -> Cover:
    """Preimage cover f^-1(alpha) on ``domain`` (a subset of ``domain_carrier``).

    ``f`` is a dense table: ``f[x]`` is the image index of domain point ``x``.
    On posets the map must be order-preserving on the domain.
    """
    if domain is None:
        domain = full_mask(domain_carrier.size)
    pts = bits(domain)
    if any(f[x] < 0 or f[x] >= alpha.carrier.size for x in pts):
        raise InputError("map is not total on its declared domain")
    if isinstance(domain_carrier, FinitePoset):
        if not isinstance(alpha.carrier, FinitePoset):
            raise InputError("poset maps must land in a poset")
        for x in pts:
            for y in bits(domain_carrier.up[x] & domain):
                if not alpha.carrier.leq(f[x], f[y]):
                    raise ContinuityError(
                        f"map is not order-preserving: {domain_carrier.elements[x]!r} <= "
                        f"{domain_carrier.elements[y]!r} but images are not ordered")
    members = []
    for a in alpha.members:
        members.append(mask_of(x for x in pts if a >> f[x] & 1))
    return Cover(domain_carrier, tuple(members), alpha.labels)
