"""Orbit capacity, smallness, partitions of unity and the corner embedding.

Counts and frequencies are kept as exact fractions: every quantity here is a
ratio of visit counts or a min/max of rescaled grid distances, and the checks
(masses equal to b_n/n, partition sums equal to 1) are equalities.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .base import EnvPath, weighted_paths
from .bundle import BundleSystem, iterate, shares_join_member
from .errors import InputError
from .spaces import Cover, bits, full_mask, is_metric_carrier, popcount


def _indicator(sys, E: int) -> np.ndarray:
    flags = np.zeros(sys.carrier.size, dtype=bool)
    flags[bits(E)] = True
    return flags


def _visits(sys, path, E, n):
    """(orbit table, visits[k, i]) with visits = 1_E(T^k x_i)."""
    orb = iterate(sys, path, n)
    return orb, _indicator(sys, E)[orb.orbit]


def birkhoff_count(sys: BundleSystem, path: EnvPath, E: int, n: int) -> tuple:
    """(b_n, argmax): the largest number of visits to E among the first n orbit points.

    Ties go to the lowest carrier index.
    """
    orb, visits = _visits(sys, path, E, n)
    counts = visits.sum(axis=0)
    i = int(np.argmax(counts))
    return int(counts[i]), int(orb.start[i])


def _prefix_maxima(sys, path, E, n_max):
    """b_1..b_{n_max} from one orbit table."""
    _, visits = _visits(sys, path, E, n_max)
    return [int(v) for v in np.cumsum(visits, axis=0).max(axis=1)]


@dataclass
class OcapReport:
    ratios: dict                        # path id -> {n: b_n / n}
    estimates: dict                     # path id -> value at the largest n
    expectation: float
    violations: list = field(default_factory=list)      # (path id, n, m) with b_{n+m} > b_n + b_m(shifted)

    @property
    def rows(self) -> list:
        return [(pid, n, r) for pid, seq in self.ratios.items() for n, r in seq.items()]


def subadditive_violations(sys: BundleSystem, path: EnvPath, E: int, n_max: int) -> list:
    """Splits (n, m), n + m <= n_max, with b_{n+m}(w) > b_n(w) + b_m(theta^n w)."""
    b = _prefix_maxima(sys, path, E, n_max)
    bad = []
    for n in range(1, n_max):
        shifted = _prefix_maxima(sys, path.shifted(n), E, n_max - n)
        for m in range(1, n_max - n + 1):
            if b[n + m - 1] > b[n - 1] + shifted[m - 1]:
                bad.append((n, m))
    return bad


def ocap_estimate(sys: BundleSystem, paths, E: int, n_list: Sequence[int], check_splits: bool = True) -> OcapReport:
    n_list = sorted(set(n_list))
    n_max = n_list[-1]
    ratios, estimates, bad = {}, {}, []
    expectation = 0.0
    for path, w in weighted_paths(paths):
        b = _prefix_maxima(sys, path, E, n_max)
        ratios[path.index] = {n: Fraction(b[n - 1], n) for n in n_list}
        estimates[path.index] = ratios[path.index][n_max]
        expectation += w * float(estimates[path.index])
        if check_splits:
            bad.extend((path.index, n, m) for n, m in subadditive_violations(sys, path, E, n_max))
    return OcapReport(ratios, estimates, expectation, bad)


@dataclass
class SmallnessVerdict:
    small: bool
    max_estimate: Fraction
    estimates: dict
    tol: float
    uniform_share: Fraction
    note: str = ""


def smallness_test(sys: BundleSystem, E: int, paths, n_max: int, tol: float) -> SmallnessVerdict:
    """E is declared small when every sampled path has b_{n_max}/n_max <= tol."""
    rep = ocap_estimate(sys, paths, E, [n_max], check_splits=False)
    worst = max(rep.estimates.values())
    share = Fraction(popcount(E & full_mask(sys.carrier.size)), sys.carrier.size)
    note = ""
    if worst > tol and worst == share:
        note = (f"estimate equals |E|/|X| = {share}: orbits spread uniformly, so the capacity "
                "shrinks like 1/|X| under refinement of the grid")
    return SmallnessVerdict(worst <= tol, worst, rep.estimates, tol, share, note)


# empirical maximizing measure ---------------------------------------------

@dataclass
class EmpiricalMeasure:
    """(1/n) sum_i of the point mass at (w_i, T^i gamma), plus the realised successors."""

    path: EnvPath
    n: int
    start: int
    b_n: int
    states: tuple               # w_0 .. w_n
    points: tuple               # T^0 gamma .. T^n gamma
    mass_E: Fraction

    @property
    def atoms(self) -> dict:
        out = defaultdict(Fraction)
        for s, x in zip(self.states[:self.n], self.points[:self.n]):
            out[(s, x)] += Fraction(1, self.n)
        return dict(out)


def empirical_maximizing_measure(sys: BundleSystem, path: EnvPath, E: int, n: int) -> EmpiricalMeasure:
    """Orbit measure of the maximizing point of :func:`birkhoff_count`.

    Its mass on (environment) x E equals b_n / n.  The path must be at least
    n + 1 long so that the image measure under the skew product is defined.
    """
    if path.length < n + 1:
        raise InputError(f"path of length {path.length} is too short; need n + 1 = {n + 1}")
    b, gamma = birkhoff_count(sys, path, E, n)
    orb = iterate(sys, path, n + 1)
    col = int(np.flatnonzero(orb.start == gamma)[0])
    pts = tuple(int(v) for v in orb.orbit[:, col])
    mass = sum((Fraction(1, n) for x in pts[:n] if E >> x & 1), Fraction(0))
    return EmpiricalMeasure(path, n, gamma, b, tuple(path.states[:n + 1]), pts, mass)


class TableFunction:
    """A bounded test function on (environment state, carrier point) given by a table."""

    def __init__(self, env_states: Sequence, values):
        self.values = np.asarray(values)
        self._index = {s: i for i, s in enumerate(env_states)}
        if self.values.shape[0] != len(self._index):
            raise InputError("one table row per environment state is required")

    def __call__(self, state, x):
        return self.values[self._index[state], x].item()

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @classmethod
    def random(cls, env_states, size, rng: np.random.Generator) -> "TableFunction":
        return cls(env_states, rng.uniform(-1.0, 1.0, size=(len(env_states), size)))

    @classmethod
    def indicator(cls, env_states, size, E: int) -> "TableFunction":
        row = np.zeros(size, dtype=np.int64)
        row[bits(E)] = 1
        return cls(env_states, np.tile(row, (len(env_states), 1)))


@dataclass
class DefectRow:
    defect: float
    bound: float
    passed: bool


def approximate_invariance_defect(mu: EmpiricalMeasure, fs: Sequence, norms: Sequence[float] | None = None) -> list:
    """|integral of f after one skew-product step - integral of f| for each test function.

    The step uses the realised successor along the path, so it is the skew
    product on deterministic environments and its sampled version otherwise.
    Integer-valued tables are integrated exactly.
    """
    out = []
    for j, f in enumerate(fs):
        norm = norms[j] if norms is not None else f.sup_norm
        vals = [f(s, x) for s, x in zip(mu.states, mu.points)]
        if all(isinstance(v, int) for v in vals):
            before = sum((Fraction(v, mu.n) for v in vals[:mu.n]), Fraction(0))
            after = sum((Fraction(v, mu.n) for v in vals[1:]), Fraction(0))
            defect = float(abs(after - before))
        else:
            before = math.fsum(vals[:mu.n]) / mu.n
            after = math.fsum(vals[1:]) / mu.n
            defect = abs(after - before)
        bound = 2.0 * norm / mu.n
        out.append(DefectRow(defect, bound, defect <= bound * (1 + 1e-12)))
    return out


# shrinking, partitions of unity ---------------------------------------------

def _require_metric_space(space):
    if not is_metric_carrier(space):
        raise InputError("partitions of unity need a metric carrier")


def _distances(space) -> np.ndarray:
    return space.table()


def set_distance(d: np.ndarray, S: int) -> np.ndarray:
    """d(x, S) for every x (inf when S is empty)."""
    idx = bits(S)
    if not idx:
        return np.full(d.shape[0], np.inf)
    return d[:, idx].min(axis=1)


def boundary(space, S: int, radius: float | None = None) -> int:
    """Points of S within ``radius`` of the complement (default: smallest positive distance)."""
    d = _distances(space)
    r = space.min_positive_distance() if radius is None else radius
    rest = full_mask(space.size) & ~S
    near = set_distance(d, rest) <= r
    return S & sum(1 << int(i) for i in np.flatnonzero(near))


@dataclass
class ShrunkCover:
    cover: Cover
    boundaries: tuple
    margins: tuple


def shrink_cover(space, alpha: Cover, margins, radius: float | None = None) -> ShrunkCover:
    """U_j' = {x in U_j : d(x, X minus U_j) > margin_j}; must still cover X."""
    _require_metric_space(space)
    if np.isscalar(margins):
        margins = [float(margins)] * len(alpha)
    if len(margins) != len(alpha) or any(m < 0 for m in margins):
        raise InputError("one nonnegative margin per cover member is required")
    d = _distances(space)
    full = full_mask(space.size)
    members = []
    for U, mg in zip(alpha.members, margins):
        keep = set_distance(d, full & ~U) > mg
        members.append(U & sum(1 << int(i) for i in np.flatnonzero(keep)))
    shrunk = Cover(space, tuple(members), alpha.labels)
    if shrunk.union() != full:
        missing = bits(full & ~shrunk.union())
        raise InputError(f"margins too large: shrunk cover misses {len(missing)} point(s), "
                         f"first {space.points[missing[0]]!r}; use smaller margins")
    return ShrunkCover(shrunk, tuple(boundary(space, m, radius) for m in members), tuple(margins))


@dataclass
class PartitionOfUnity:
    space: object
    alpha: Cover
    shrunk: Cover
    boundaries: tuple
    delta: Fraction
    psi: list                   # psi[j][x]
    phi: list                   # phi[j][x]
    variant: str

    @property
    def k(self) -> int:
        return len(self.phi)

    def values(self, x: int) -> tuple:
        return tuple(p[x] for p in self.phi)

    def fractional_set(self) -> int:
        """Points where some phi_j lies strictly between 0 and 1."""
        return sum(1 << x for x in range(self.space.size) if any(0 < p[x] < 1 for p in self.phi))


def partition_of_unity(space, alpha: Cover, shrunk: Cover | ShrunkCover, delta: float,
                       variant: str = "recursive", radius: float | None = None) -> PartitionOfUnity:
    """Bumps psi_j around U_j' and the partition phi_j built from them.

    ``recursive``: phi_k = min(psi_k, 1 - sum_{j<k} phi_j), which sums to 1
    wherever some psi_j = 1.  ``literal``: for k >= 3 the subtraction uses
    psi_1..psi_{k-1} instead; values may then leave [0, 1].
    """
    _require_metric_space(space)
    if variant not in ("recursive", "literal"):
        raise InputError("variant must be 'recursive' or 'literal'")
    if not delta > 0:
        raise InputError("delta must be positive")
    if isinstance(shrunk, ShrunkCover):
        bnds, shrunk = shrunk.boundaries, shrunk.cover
    else:
        bnds = tuple(boundary(space, m, radius) for m in shrunk.members)
    if len(shrunk) != len(alpha) or any(s & ~a for s, a in zip(shrunk.members, alpha.members)):
        raise InputError("shrunk cover must match alpha member by member with U_j' inside U_j")
    if shrunk.union() != full_mask(space.size):
        raise InputError("shrunk cover must cover the space")
    d = _distances(space)
    dlt = Fraction(delta)
    psi = []
    for j, (Up, B) in enumerate(zip(shrunk.members, bnds)):
        dist = set_distance(d, B)
        near = np.flatnonzero(dist < delta)
        if any(not alpha.members[j] >> int(x) & 1 for x in near):
            raise InputError(f"delta too large: the delta-neighbourhood of the boundary of member {j} "
                             "leaves the original member")
        row = []
        for x in range(space.size):
            if Up >> x & 1:
                row.append(Fraction(1))
            elif np.isinf(dist[x]):
                row.append(Fraction(0))
            else:
                row.append(max(Fraction(0), 1 - Fraction(float(dist[x])) / dlt))
        psi.append(row)
    phi = []
    for k, row in enumerate(psi):
        if variant == "literal" and k >= 2:
            used = [sum(psi[j][x] for j in range(k)) for x in range(space.size)]
        else:
            used = [sum(phi[j][x] for j in range(k)) for x in range(space.size)]
        phi.append([min(row[x], 1 - used[x]) for x in range(space.size)])
    return PartitionOfUnity(space, alpha, shrunk, bnds, dlt, psi, phi, variant)


@dataclass
class PartitionCheck:
    sums_to_one: bool
    below_psi: bool
    in_unit_interval: bool
    supported: bool

    @property
    def passed(self) -> bool:
        return self.sums_to_one and self.below_psi and self.in_unit_interval and self.supported


def check_partition(pu: PartitionOfUnity) -> PartitionCheck:
    xs = range(pu.space.size)
    return PartitionCheck(
        sums_to_one=all(sum(p[x] for p in pu.phi) == 1 for x in xs),
        below_psi=all(pu.phi[j][x] <= pu.psi[j][x] for j in range(pu.k) for x in xs),
        in_unit_interval=all(0 <= p[x] <= 1 for p in pu.phi + pu.psi for x in xs),
        supported=all(pu.alpha.members[j] >> x & 1 for j in range(pu.k) for x in xs if pu.phi[j][x] > 0),
    )


# crossing frequency and the corner embedding ---------------------------------

def _stage_pu(pus, state):
    if isinstance(pus, PartitionOfUnity):
        return pus
    try:
        return pus[state]
    except KeyError:
        raise InputError(f"no partition of unity for environment state {state!r}") from None


@dataclass
class CrossingReport:
    frequency: dict             # carrier point -> visits to the fractional set / N
    max_frequency: Fraction
    eps: float
    passed: bool
    boundary_max: list          # per member j: max over x of visits to the boundary of U_j' / N


def crossing_frequency(sys: BundleSystem, path: EnvPath, pus, N: int, eps: float) -> CrossingReport:
    orb = iterate(sys, path, N)
    frac = [_indicator(sys, _stage_pu(pus, path.states[i]).fractional_set())[orb.orbit[i]] for i in range(N)]
    counts = np.sum(frac, axis=0)
    freq = {int(x): Fraction(int(c), N) for x, c in zip(orb.start, counts)}
    k = _stage_pu(pus, path.states[0]).k
    bmax = []
    for j in range(k):
        hits = sum(_indicator(sys, _stage_pu(pus, path.states[i]).boundaries[j])[orb.orbit[i]] for i in range(N))
        bmax.append(Fraction(int(np.max(hits)), N))
    worst = max(freq.values())
    return CrossingReport(freq, worst, eps, worst < eps, bmax)


@dataclass
class EmbeddingCertificate:
    values: dict                # x -> tuple of length kN, stage-major (phi_1..phi_k at stage 0, ...)
    fractional: dict            # x -> sorted stages I(x)
    corner: dict                # x -> 0/1 tuple xi(x)
    k: int
    N: int
    eps: float
    bound: float                # eps * k * N
    crossing: CrossingReport
    stage_bound_ok: bool
    coordinates_ok: bool
    compatible: bool
    witnesses: list = field(default_factory=list)

    @property
    def max_fractional(self) -> int:
        return max(len(v) for v in self.fractional.values())

    @property
    def passed(self) -> bool:
        return self.stage_bound_ok and self.coordinates_ok and self.compatible


def sbp_embedding(sys: BundleSystem, path: EnvPath, pus, N: int, eps: float,
                  alpha: Cover | None = None) -> EmbeddingCertificate:
    """Stack the partition values along the orbit and certify the corner structure.

    For each fiber point x: I(x) are the stages with a fractional value, the
    corner xi(x) zeroes those stages, and every other coordinate must already
    be 0 or 1 and equal xi(x).  Points with identical images must share a
    member of the N-step joined cover of ``alpha`` (default: the cover of the
    stage-0 partition).
    """
    orb = iterate(sys, path, N)
    crossing = crossing_frequency(sys, path, pus, N, eps)
    first = _stage_pu(pus, path.states[0])
    k = first.k
    alpha = first.alpha if alpha is None else alpha
    values, fractional, corner = {}, {}, {}
    coords_ok = True
    for col, x in enumerate(orb.start):
        x = int(x)
        vec, stages, xi = [], [], []
        for i in range(N):
            pu = _stage_pu(pus, path.states[i])
            v = pu.values(int(orb.orbit[i, col]))
            vec.extend(v)
            if any(0 < t < 1 for t in v):
                stages.append(i)
                xi.extend([0] * k)
            else:
                xi.extend(int(t) for t in v)
        for i in range(N):
            if i in stages:
                continue
            for j in range(k):
                t = vec[i * k + j]
                if t not in (0, 1) or t != xi[i * k + j]:
                    coords_ok = False
        values[x], fractional[x], corner[x] = tuple(vec), stages, tuple(xi)
    stage_ok = all(len(s) < eps * N for s in fractional.values())
    groups = defaultdict(list)
    for x, v in values.items():
        groups[v].append(x)
    witnesses = []
    for pts in groups.values():
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                if not shares_join_member(sys, path, alpha, N, pts[a], pts[b]):
                    witnesses.append((pts[a], pts[b]))
    return EmbeddingCertificate(values, fractional, corner, k, N, eps, eps * k * N, crossing,
                                stage_ok, coords_ok, not witnesses, witnesses)


def scan_embedding(sys: BundleSystem, path: EnvPath, pus, N_list: Sequence[int], eps: float,
                   alpha: Cover | None = None) -> tuple:
    """Certificates for each N; returns (smallest passing N or None, {N: certificate})."""
    certs = {N: sbp_embedding(sys, path, pus, N, eps, alpha) for N in sorted(N_list)}
    passing = [N for N, c in certs.items() if c.passed]
    return (passing[0] if passing else None), certs


# uniquely ergodic experiment ----------------------------------------------------

SPHERE_TOL = 1e-9


@dataclass
class SphereScan:
    radii: list
    estimates: dict             # radius -> max over paths of b_n / n for the sphere
    small: dict                 # radius -> bool
    fraction_small: float


def ue_boundary_scan(sys: BundleSystem, center: int, radii: Sequence[float], paths, n: int, tol: float) -> SphereScan:
    """Orbit capacity of the spheres {y : d(center, y) = r} over a list of radii."""
    if not is_metric_carrier(sys.carrier):
        raise InputError("sphere scans need a metric carrier")
    d = sys.carrier.dist_matrix([center], np.arange(sys.carrier.size))[0]
    est, small = {}, {}
    for r in radii:
        sphere = sum(1 << int(i) for i in np.flatnonzero(np.abs(d - r) <= SPHERE_TOL))
        v = smallness_test(sys, sphere, paths, n, tol)
        est[r], small[r] = v.max_estimate, v.small
    frac = sum(small.values()) / len(radii) if radii else 0.0
    return SphereScan(list(radii), est, small, frac)


def rng_test_functions(env_states, size, count, seed) -> list:
    rng = np.random.default_rng(seed)
    return [TableFunction.random(env_states, size, rng) for _ in range(count)]

