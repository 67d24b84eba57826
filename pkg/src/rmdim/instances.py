"""Named models and seeded random instances shared by the self-test and the test suite."""

from __future__ import annotations

import numpy as np

from . import base, bundle
from .bundle import BundleSystem
from .spaces import Cover, FiniteMetricSpace, FinitePoset, bits, circle_grid, full_mask, mask_of


def chain(n: int = 2) -> FinitePoset:
    names = [chr(ord("a") + i) for i in range(n)]
    return FinitePoset.from_covering(names, list(zip(names, names[1:])))


def interval_model() -> FinitePoset:
    """a, b < c: two endpoints glued to one open middle point."""
    return FinitePoset.from_covering("abc", [("a", "c"), ("b", "c")])


def circle_model() -> FinitePoset:
    """a, b < c, d: the four-point model of the circle."""
    return FinitePoset.from_covering("abcd", [("a", "c"), ("a", "d"), ("b", "c"), ("b", "d")])


def circle_cover(p: FinitePoset) -> Cover:
    return Cover(p, (p.up[p.index("a")], p.up[p.index("b")]))


def random_poset(rng: np.random.Generator, n: int, density: float = 0.35) -> FinitePoset:
    """Random order: relation i < j (i < j as integers) with probability ``density``, then closed."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    return FinitePoset.from_covering(list(range(n)), pairs)


def random_open_cover(rng: np.random.Generator, p: FinitePoset, members: int | None = None) -> Cover:
    """Up-closures of random point sets, topped up with minimal neighbourhoods until covering."""
    k = int(rng.integers(1, 5)) if members is None else members
    out = []
    for _ in range(k):
        pts = [i for i in range(p.size) if rng.random() < 0.3] or [int(rng.integers(p.size))]
        out.append(p.up_closure(mask_of(pts)))
    covered = 0
    for m in out:
        covered |= m
    for x in range(p.size):
        if not covered >> x & 1:
            out.append(p.up[x])
            covered |= p.up[x]
    return Cover(p, tuple(out))


def random_monotone_map(rng: np.random.Generator, p: FinitePoset) -> list:
    """An order-preserving self-map built along a linear extension (identity if sampling gets stuck)."""
    order = sorted(range(p.size), key=lambda i: bin(p.down[i]).count("1"))
    for _ in range(20):
        f = [-1] * p.size
        for x in order:
            allowed = full_mask(p.size)
            for z in bits(p.down[x] & ~(1 << x)):
                allowed &= p.up[f[z]]
            choices = bits(allowed)
            if not choices:
                break
            f[x] = int(rng.choice(choices))
        else:
            return f
    return list(range(p.size))


def random_poset_bundle(rng: np.random.Generator, n: int, env: base.BaseEnvironment | None = None) -> BundleSystem:
    env = base.cyclic(2) if env is None else env
    p = random_poset(rng, n)
    maps = {s: random_monotone_map(rng, p) for s in env.states}
    return bundle.make_poset_bundle(p, env, maps, name="random-poset")


def random_cloud(rng: np.random.Generator, n: int, dim: int = 2) -> FiniteMetricSpace:
    pts = rng.random((n, dim))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    return FiniteMetricSpace([tuple(np.round(x, 6)) for x in pts], d)


def random_metric_bundle(rng: np.random.Generator, n: int, env: base.BaseEnvironment | None = None) -> BundleSystem:
    """Random self-maps of a random planar cloud (every map of a finite metric space is continuous)."""
    env = base.point_mass() if env is None else env
    cloud = random_cloud(rng, n)
    full = full_mask(n)
    tables = {s: rng.integers(0, n, size=n) for s in env.states}
    return BundleSystem(env, cloud, {s: full for s in env.states},
                        {(s, t): tables[s] for s, t in env.edges()}, name="random-cloud")


def two_clusters() -> FiniteMetricSpace:
    """Three points near 0 and three near 10 on a line."""
    return FiniteMetricSpace.line([0.0, 0.1, 0.2, 10.0, 10.1, 10.2])


def rotation_markov_env() -> base.BaseEnvironment:
    return base.markov(["slow", "fast"], [[0.7, 0.3], [0.4, 0.6]])


def random_arc_cover(rng: np.random.Generator, m: int, members: int | None = None) -> tuple:
    """Overlapping arcs covering the circle grid Z_m, with a margin that keeps them covering.

    Returns (space, cover, margin, delta) where shrinking each arc by ``margin``
    still covers and ``delta`` is at most the margin.
    """
    space = circle_grid(m)
    k = int(rng.integers(2, 6)) if members is None else members
    step = 1 / m
    gap = int(rng.integers(1, 3))
    cuts = np.sort(rng.choice(m, size=k, replace=False))
    arcs = []
    for j in range(k):
        lo = int(cuts[j]) - 2 * gap - 1
        hi = int(cuts[(j + 1) % k]) + (m if j == k - 1 else 0) + 2 * gap + 1
        arcs.append(mask_of(sorted({x % m for x in range(lo, hi + 1)})))
    cover = Cover(space, tuple(arcs))
    return space, cover, gap * step, gap * step * float(rng.uniform(0.5, 1.0))
