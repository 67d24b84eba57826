"""Exact and greedy solvers on small graphs stored as adjacency bitmasks.

``adj[v]`` is an int whose bit ``u`` is set iff u and v are adjacent; no
self-loops.  Used for separated sets (maximum clique of the "far apart"
graph) and minimal covers by small-diameter sets (chromatic number of the
same graph, whose colour classes are cliques of the "close" graph).
"""

from __future__ import annotations

from .spaces import bits, popcount


def complement(adj: list) -> list:
    n = len(adj)
    full = (1 << n) - 1
    return [full & ~a & ~(1 << v) for v, a in enumerate(adj)]


def _color_sort(adj, cand):
    """Greedy sequential colouring of ``cand``; returns vertices with colour bounds."""
    order, bounds = [], []
    uncolored = cand
    color = 0
    while uncolored:
        color += 1
        q = uncolored
        while q:
            low = q & -q
            v = low.bit_length() - 1
            q &= ~low & ~adj[v]
            uncolored &= ~low
            order.append(v)
            bounds.append(color)
    return order, bounds


def max_clique(adj: list, within: int | None = None) -> tuple:
    """Maximum clique (Tomita-style branch and bound with colouring bounds).

    Returns (vertices sorted ascending, nodes explored).
    """
    n = len(adj)
    cand = (1 << n) - 1 if within is None else within
    best = [0]
    nodes = [0]

    def expand(clique, size, cand):
        order, bounds = _color_sort(adj, cand)
        for k in range(len(order) - 1, -1, -1):
            if size + bounds[k] <= popcount(best[0]):
                return
            v = order[k]
            nodes[0] += 1
            new = cand & adj[v]
            grown = clique | (1 << v)
            if new:
                expand(grown, size + 1, new)
            elif size + 1 > popcount(best[0]):
                best[0] = grown
            cand &= ~(1 << v)

    if cand:
        expand(0, 0, cand)
    return bits(best[0]), nodes[0]


def max_independent_set(adj: list) -> tuple:
    return max_clique(complement(adj))


def dsatur_coloring(adj: list) -> list:
    """Greedy DSATUR colouring; returns colour per vertex."""
    n = len(adj)
    colors = [-1] * n
    neigh_colors = [0] * n
    degree = [popcount(a) for a in adj]
    for _ in range(n):
        v = max((u for u in range(n) if colors[u] < 0),
                key=lambda u: (popcount(neigh_colors[u]), degree[u], -u))
        c = 0
        while neigh_colors[v] >> c & 1:
            c += 1
        colors[v] = c
        for u in bits(adj[v]):
            neigh_colors[u] |= 1 << c
    return colors


def chromatic_number(adj: list, lower: int = 0) -> tuple:
    """Exact colouring by DSATUR branch and bound.

    ``lower`` is a known lower bound (e.g. a clique size); the search stops as
    soon as a colouring with that many colours is found.
    Returns (number of colours, colour per vertex, nodes explored).
    """
    n = len(adj)
    if n == 0:
        return 0, [], 0
    clique, _ = max_clique(adj)
    lower = max(lower, len(clique))
    best_colors = dsatur_coloring(adj)
    best_k = max(best_colors) + 1
    if best_k <= lower:
        return best_k, best_colors, 0

    colors = [-1] * n
    # seed the clique with distinct colours (breaks colour symmetry)
    for c, v in enumerate(clique):
        colors[v] = c
    neigh = [0] * n
    for v in clique:
        for u in bits(adj[v]):
            neigh[u] |= 1 << colors[v]
    degree = [popcount(a) for a in adj]
    nodes = [0]
    state = {"k": best_k, "colors": best_colors}

    def pick():
        best, key = -1, None
        for u in range(n):
            if colors[u] < 0:
                kk = (popcount(neigh[u]), degree[u], -u)
                if key is None or kk > key:
                    best, key = u, kk
        return best

    def solve(used):
        if state["k"] <= lower:
            return
        v = pick()
        if v < 0:
            state["k"], state["colors"] = used, colors.copy()
            return
        for c in range(min(used + 1, state["k"] - 1)):
            if neigh[v] >> c & 1:
                continue
            nodes[0] += 1
            colors[v] = c
            touched = [u for u in bits(adj[v]) if not neigh[u] >> c & 1]
            for u in touched:
                neigh[u] |= 1 << c
            solve(max(used, c + 1))
            for u in touched:
                neigh[u] &= ~(1 << c)
            colors[v] = -1
            if state["k"] <= lower:
                return

    solve(len(clique))
    return state["k"], state["colors"], nodes[0]


def min_clique_cover(adj: list) -> tuple:
    """Minimum partition of the vertices into cliques of ``adj``.

    Returns (cliques as sorted vertex lists, nodes explored).
    """
    k, colors, nodes = chromatic_number(complement(adj))
    classes = [[] for _ in range(k)]
    for v, c in enumerate(colors):
        classes[c].append(v)
    return [c for c in classes if c], nodes
