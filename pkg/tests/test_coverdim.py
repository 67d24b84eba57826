import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmdim import base, bundle, coverdim, instances
from rmdim.errors import InputError, SizeError, UnsupportedCarrierError
from rmdim.spaces import Cover, FiniteMetricSpace, FinitePoset, bits, dimension_bound, full_mask, join, refines


def up_sets(p, within):
    pts = bits(within)
    out = []
    for r in range(1, len(pts) + 1):
        for combo in itertools.combinations(pts, r):
            m = sum(1 << i for i in combo)
            if all(not (p.up[i] & within & ~m) for i in combo):
                out.append(m)
    return out


def exhaustive_dim(p, alpha, target=None):
    """Oracle: min ord over every family of nonempty relatively open sets refining alpha."""
    target = full_mask(p.size) if target is None else target
    cands = [m for m in up_sets(p, target) if any(not (m & ~a) for a in alpha.members)]
    best = None
    for r in range(1, len(cands) + 1):
        for fam in itertools.combinations(cands, r):
            union = 0
            for m in fam:
                union |= m
            if union != target:
                continue
            order = max(sum(1 for m in fam if m >> x & 1) for x in bits(target)) - 1
            best = order if best is None else min(best, order)
    return best


def brute_equivalent(F, G):
    n = len(F)
    for r in range(1, n + 1):
        for J in itertools.combinations(range(n), r):
            a = set.intersection(*[set(F[i]) for i in J])
            b = set.intersection(*[set(G[i]) for i in J])
            if bool(a) != bool(b):
                return False
    return True


def seeded(seed, lo=2, hi=8):
    rng = np.random.default_rng(seed)
    p = instances.random_poset(rng, int(rng.integers(lo, hi)))
    return rng, p


class TestOrd:
    def test_partition(self):
        p = FinitePoset.antichain(range(4))
        assert coverdim.ord_(Cover(p, (0b0011, 0b1100))) == 0

    def test_circle(self):
        p = instances.circle_model()
        assert coverdim.ord_(instances.circle_cover(p)) == 1

    def test_empty_target(self):
        p = instances.circle_model()
        assert coverdim.ord_(instances.circle_cover(p), target=0) == -1

    def test_non_covering(self):
        p = FinitePoset.antichain(range(3))
        with pytest.raises(InputError):
            coverdim.ord_(Cover(p, (0b001,)))


class TestCombinatorialEquivalence:
    def test_identical(self):
        assert coverdim.combinatorially_equivalent([{1, 2}, {2, 3}], [{1, 2}, {2, 3}])

    def test_same_nerve(self):
        assert coverdim.combinatorially_equivalent([{1, 2}, {2, 3}], [{"x"}, {"x"}])

    def test_different_pairwise_pattern(self):
        assert not coverdim.combinatorially_equivalent([{1}, {2}], [{"x"}, {"x"}])

    def test_index_mismatch(self):
        with pytest.raises(InputError):
            coverdim.combinatorially_equivalent([{1}], [{1}, {2}])

    def test_index_cap(self):
        with pytest.raises(SizeError):
            coverdim.combinatorially_equivalent([{1}] * 21, [{1}] * 21)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.sets(st.integers(0, 5)), min_size=1, max_size=6),
           st.lists(st.sets(st.integers(0, 5)), min_size=1, max_size=6))
    def test_matches_subset_enumeration(self, F, G):
        G = (G * 6)[:len(F)]
        assert coverdim.combinatorially_equivalent(F, G) == brute_equivalent(F, G)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_relabelled_covers_have_equal_order(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        p = FinitePoset.antichain(range(n))
        alpha = instances.random_open_cover(rng, p)
        perm = rng.permutation(n)
        beta = Cover(p, tuple(sum(1 << int(perm[i]) for i in bits(m)) for m in alpha.members))
        assert coverdim.combinatorially_equivalent(alpha.members, beta.members)
        assert coverdim.ord_(alpha) == coverdim.ord_(beta)


class TestDimCoverExact:
    @pytest.mark.parametrize("seed", range(20))
    def test_antichain_is_zero(self, seed):
        rng = np.random.default_rng(seed)
        p = FinitePoset.antichain(range(int(rng.integers(1, 8))))
        assert coverdim.dim_cover_exact(p, instances.random_open_cover(rng, p)).value == 0

    def test_interval_model(self):
        p = instances.interval_model()
        alpha = Cover.from_sets(p, [["a", "c"], ["b", "c"]])
        res = coverdim.dim_cover_exact(p, alpha)
        assert res.value == 1 == exhaustive_dim(p, alpha)

    def test_circle_model(self):
        p = instances.circle_model()
        alpha = instances.circle_cover(p)
        res = coverdim.dim_cover_exact(p, alpha)
        assert res.value == 1 == exhaustive_dim(p, alpha)
        assert res.exact

    def test_empty_target(self):
        p = instances.circle_model()
        assert coverdim.dim_cover_exact(p, instances.circle_cover(p), target=0).value == -1

    def test_non_open_cover(self):
        p = instances.circle_model()
        with pytest.raises(InputError):
            coverdim.dim_cover_exact(p, Cover.from_sets(p, [["a", "c", "d"], ["b"]]))

    def test_size_cap(self):
        p = FinitePoset.antichain(range(17))
        with pytest.raises(SizeError):
            coverdim.dim_cover_exact(p, Cover(p, (full_mask(17),)))

    def test_metric_clouds_are_zero_dimensional(self):
        space = FiniteMetricSpace.line([0.0, 0.3, 0.6])
        res = coverdim.dim_cover_metric(space, Cover(space, (0b011, 0b110)))
        assert res.value == 0 and refines(res.witness, Cover(space, (0b011, 0b110)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_exhaustive_oracle(self, seed):
        rng, p = seeded(seed, 1, 6)
        alpha = instances.random_open_cover(rng, p)
        res = coverdim.dim_cover_exact(p, alpha)
        assert res.value == exhaustive_dim(p, alpha)
        assert refines(res.witness, alpha)
        assert res.witness.union() == full_mask(p.size)
        assert all(p.is_up_set(m) for m in res.witness.members)
        assert coverdim.ord_(res.witness) == res.value

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_relative_topology_on_a_fiber(self, seed):
        rng, p = seeded(seed, 2, 7)
        target = int(rng.integers(1, 1 << p.size))
        alpha = instances.random_open_cover(rng, p)
        assert coverdim.dim_cover_exact(p, alpha, target).value == exhaustive_dim(p, alpha, target)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_subadditive_under_join(self, seed):
        rng, p = seeded(seed, 2, 11)
        a, b = instances.random_open_cover(rng, p), instances.random_open_cover(rng, p)
        d = [coverdim.dim_cover_exact(p, c).value for c in (a, b, join([a, b]))]
        assert d[2] <= d[0] + d[1]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bounded_by_poset_dimension(self, seed):
        rng, p = seeded(seed, 2, 10)
        alpha = instances.random_open_cover(rng, p)
        assert coverdim.dim_cover_exact(p, alpha).value <= dimension_bound(p)


class TestDimCoverUpper:
    def test_zero_budget_returns_alpha(self):
        p = instances.circle_model()
        alpha = Cover(p, (full_mask(4), p.up[0], p.up[1]))
        res = coverdim.dim_cover_upper(p, alpha, budget=0)
        assert res.value == coverdim.ord_(alpha) == 2 and res.witness is alpha and not res.exact

    def test_circle_with_large_budget(self):
        p = instances.circle_model()
        alpha = instances.circle_cover(p)
        assert coverdim.dim_cover_upper(p, alpha, 10_000).value == coverdim.dim_cover_exact(p, alpha).value == 1

    def test_antichain(self):
        p = FinitePoset.antichain(range(3))
        assert coverdim.dim_cover_upper(p, Cover(p, (0b011, 0b110, 0b101)), 100).value == 0

    def test_large_poset(self):
        p = FinitePoset.antichain(range(40))
        res = coverdim.dim_cover_upper(p, Cover(p, (full_mask(40), full_mask(40))), 1000)
        assert res.value == 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 50))
    def test_brackets(self, seed, budget):
        rng, p = seeded(seed, 2, 9)
        alpha = instances.random_open_cover(rng, p)
        up = coverdim.dim_cover_upper(p, alpha, budget)
        assert coverdim.dim_cover_exact(p, alpha).value <= up.value <= coverdim.ord_(alpha)
        assert refines(up.witness, alpha) and coverdim.ord_(up.witness) == up.value


class TestQn:
    def test_trivial_cover_on_connected_poset(self):
        p = instances.circle_model()
        sys = bundle.make_inclusion_system(base.point_mass(), p)
        path = base.EnvPath(0, 0, ("*",))
        assert coverdim.q_n(sys, path, Cover(p, (full_mask(4),)), 1) == 0

    def test_inclusion_stabilises(self):
        p = instances.circle_model()
        sys = bundle.make_inclusion_system(base.point_mass(), p)
        alpha = Cover(p, (p.up[0], p.up[1], 0b1100))
        qs = coverdim.q_sequence(sys, base.EnvPath(0, 0, ("*",) * 10), alpha, 10)
        assert len(set(qs[len(alpha) - 1:])) == 1

    def test_circle_identity_three_steps(self):
        p = instances.circle_model()
        sys = bundle.make_inclusion_system(base.point_mass(), p)
        path = base.EnvPath(0, 0, ("*",) * 3)
        assert coverdim.q_n(sys, path, instances.circle_cover(p), 3) == 1

    def test_metric_carrier_unsupported(self):
        sys = bundle.make_random_rotation_grid(6, 1)
        with pytest.raises(UnsupportedCarrierError):
            coverdim.q_n(sys, base.EnvPath(0, 0, ("*",)), Cover(sys.carrier, (full_mask(6),)), 1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_kingman_splits(self, seed):
        rng = np.random.default_rng(seed)
        sys = instances.random_poset_bundle(rng, int(rng.integers(3, 9)))
        alpha = instances.random_open_cover(rng, sys.carrier)
        path = base.sample_paths(sys.env, 1, 6, seed)[0]
        assert coverdim.kingman_violations(sys, path, alpha, 6) == []

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_cover_count_bound(self, seed):
        rng = np.random.default_rng(seed)
        sys = instances.random_poset_bundle(rng, int(rng.integers(3, 9)))
        alpha = instances.random_open_cover(rng, sys.carrier)
        path = base.sample_paths(sys.env, 1, 4, seed)[0]
        qs = coverdim.q_sequence(sys, path, alpha, 4)
        for n, q in enumerate(qs, 1):
            joined = bundle.join_orbit_cover(sys, path, alpha, n)
            assert q <= coverdim.ord_(joined, sys.fibers[path.states[0]]) <= len(alpha) ** n - 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_refinement_monotone_at_each_level(self, seed):
        rng = np.random.default_rng(seed)
        sys = instances.random_poset_bundle(rng, int(rng.integers(3, 8)))
        beta = instances.random_open_cover(rng, sys.carrier)
        alpha = join([beta, instances.random_open_cover(rng, sys.carrier)]).nonempty()
        path = base.sample_paths(sys.env, 1, 4, seed)[0]
        fine = coverdim.q_sequence(sys, path, alpha, 4)
        coarse = coverdim.q_sequence(sys, path, beta, 4)
        assert all(a >= b for a, b in zip(fine, coarse))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sub_bundle_monotone(self, seed):
        rng = np.random.default_rng(seed)
        sys = instances.random_poset_bundle(rng, int(rng.integers(3, 9)))
        seeds = {s: int(rng.integers(1, 1 << sys.carrier.size)) for s in sys.env.states}
        sub = bundle.sub_bundle(sys, bundle.forward_invariant_closure(sys, seeds))
        alpha = instances.random_open_cover(rng, sys.carrier)
        path = base.sample_paths(sys.env, 1, 4, seed)[0]
        small = coverdim.q_sequence(sub, path, alpha, 4)
        big = coverdim.q_sequence(sys, path, alpha, 4)
        assert all(a <= b for a, b in zip(small, big))


class TestMdimEstimate:
    def test_inclusion_system(self):
        p = instances.circle_model()
        sys = bundle.make_inclusion_system(base.point_mass(), p)
        paths = base.enumerate_paths(sys.env, 16)
        rep = coverdim.mdim_estimate(sys, instances.circle_cover(p), paths, 16)
        assert rep.estimate <= 1 / 16
        assert rep.estimate <= rep.mean_ratio[0]

    def test_point_mass_needs_no_averaging(self):
        p = instances.circle_model()
        sys = bundle.make_poset_bundle(p, base.point_mass(), {"*": list("badc")})
        alpha = Cover(p, (p.up[0], p.up[1]))
        paths = base.enumerate_paths(sys.env, 4)
        rep = coverdim.mdim_estimate(sys, alpha, paths, 4)
        q4 = coverdim.q_n(sys, paths[0][0], alpha, 4)
        assert rep.mean_ratio[3] == q4 / 4
        assert rep.estimate == min(rep.mean_ratio)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_running_infimum(self, seed):
        rng = np.random.default_rng(seed)
        sys = instances.random_poset_bundle(rng, int(rng.integers(3, 8)))
        alpha = instances.random_open_cover(rng, sys.carrier)
        paths = base.sample_paths(sys.env, 3, 5, seed)
        rep = coverdim.mdim_estimate(sys, alpha, paths, 5)
        assert all(b <= a for a, b in zip(rep.running_inf, rep.running_inf[1:]))
        assert rep.estimate == rep.running_inf[-1] == min(rep.mean_ratio)
        d1 = max(coverdim.dim_cover_exact(sys.carrier, alpha, sys.fibers[p.states[0]]).value for p in paths)
        assert rep.estimate <= d1

    def test_cover_sequence(self):
        p = instances.circle_model()
        sys = bundle.make_inclusion_system(base.point_mass(), p)
        coarse = Cover(p, (full_mask(4),))
        fine = instances.circle_cover(p)
        paths = base.enumerate_paths(sys.env, 16)
        single = coverdim.mdim_sup_estimate(sys, [fine], paths, 16)
        assert single.estimate == coverdim.mdim_estimate(sys, fine, paths, 16).estimate
        rep = coverdim.mdim_sup_estimate(sys, [coarse, fine], paths, 16, refinement_pairs=[(1, 0)])
        assert all(ok for *_, ok in rep.monotonicity)
        assert rep.estimate <= coverdim.poset_dimension_bound(sys) / 16

    def test_undeclared_refinement_rejected(self):
        p = instances.circle_model()
        sys = bundle.make_inclusion_system(base.point_mass(), p)
        with pytest.raises(InputError):
            coverdim.mdim_sup_estimate(sys, [Cover(p, (full_mask(4),)), instances.circle_cover(p)],
                                       base.enumerate_paths(sys.env, 2), 2, refinement_pairs=[(0, 1)])
