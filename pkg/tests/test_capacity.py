from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmdim import base, bundle, capacity, instances
from rmdim.errors import InputError
from rmdim.spaces import Cover, FiniteMetricSpace, bits, circle_grid, full_mask, grid_line, mask_of


def rotation(m=12, offset=5):
    return bundle.make_random_rotation_grid(m, offset)


def const_path(n):
    return base.EnvPath(0, 0, ("*",) * n)


def orbit_counts(sys, path, E, n):
    """Oracle: follow each starting point by hand and count its visits to E."""
    out = {}
    for x in bits(sys.fibers[path.states[0]]):
        cur, hits = x, 0
        for k in range(n):
            hits += E >> cur & 1
            if k + 1 < n:
                cur = int(sys.maps[(path.states[k], path.states[k + 1])][cur])
        out[x] = hits
    return out


def sbp_partition():
    """Rotation-grid instance: one fractional grid cell at 6."""
    space = circle_grid(12)
    alpha = Cover(space, (full_mask(12), mask_of(range(4, 9))))
    shrunk = Cover(space, (full_mask(12) & ~(1 << 6), 1 << 6))
    return space, alpha, capacity.partition_of_unity(space, alpha, shrunk, 1 / 6)


def random_system(seed):
    rng = np.random.default_rng(seed)
    if rng.random() < 0.5:
        return rng, instances.random_poset_bundle(rng, int(rng.integers(2, 9)))
    return rng, instances.random_metric_bundle(rng, int(rng.integers(2, 12)), base.cyclic(2))


class TestBirkhoff:
    def test_whole_carrier(self):
        assert capacity.birkhoff_count(rotation(), const_path(7), full_mask(12), 7)[0] == 7

    def test_empty_set(self):
        assert capacity.birkhoff_count(rotation(), const_path(7), 0, 7) == (0, 0)

    def test_period_two(self):
        assert capacity.birkhoff_count(rotation(2, 1), const_path(4), 0b01, 4)[0] == 2

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_matches_orbit_enumeration(self, seed, n):
        rng, sys = random_system(seed)
        path = base.sample_paths(sys.env, 1, n, seed)[0]
        E = int(rng.integers(0, 1 << sys.carrier.size))
        counts = orbit_counts(sys, path, E, n)
        b, x = capacity.birkhoff_count(sys, path, E, n)
        assert b == max(counts.values()) == counts[x]


class TestOcap:
    def test_whole_carrier(self):
        rep = capacity.ocap_estimate(rotation(), [const_path(20)], full_mask(12), [1, 5, 20])
        assert set(rep.ratios[0].values()) == {1}

    def test_rotation_single_point(self):
        sys = rotation()
        rep = capacity.ocap_estimate(sys, [const_path(60)], 1, [12, 60])
        assert rep.estimates[0] == Fraction(1, 12)
        assert Fraction(max(orbit_counts(sys, const_path(60), 1, 60).values()), 60) == Fraction(1, 12)
        assert rep.violations == []

    def test_inclusion_fixed_points(self):
        sys = bundle.make_inclusion_system(base.point_mass(), instances.circle_model())
        rep = capacity.ocap_estimate(sys, [const_path(9)], 0b0100, [3, 9])
        assert set(rep.ratios[0].values()) == {1}

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_subadditive_and_monotone(self, seed):
        rng, sys = random_system(seed)
        path = base.sample_paths(sys.env, 1, 10, seed)[0]
        F = int(rng.integers(0, 1 << sys.carrier.size))
        E = F & int(rng.integers(0, 1 << sys.carrier.size))
        assert capacity.subadditive_violations(sys, path, F, 10) == []
        small = capacity.ocap_estimate(sys, [path], E, range(1, 11), check_splits=False)
        big = capacity.ocap_estimate(sys, [path], F, range(1, 11), check_splits=False)
        assert all(small.ratios[path.index][n] <= big.ratios[path.index][n] for n in range(1, 11))


class TestSmallness:
    def test_empty_set(self):
        assert capacity.smallness_test(rotation(), 0, [const_path(12)], 12, 0.01).small

    def test_whole_carrier(self):
        v = capacity.smallness_test(rotation(), full_mask(12), [const_path(12)], 12, 0.01)
        assert not v.small and v.max_estimate == 1

    def test_single_point_flagged(self):
        v = capacity.smallness_test(rotation(), 1, [const_path(60)], 60, 0.01)
        assert not v.small and v.max_estimate == Fraction(1, 12)
        assert "1/12" in v.note

    def test_sphere_scan(self):
        sys = rotation()
        scan = capacity.ue_boundary_scan(sys, 0, [0.0, 1 / 12, 0.5], [const_path(60)], 60, 0.1)
        assert scan.estimates == {0.0: Fraction(1, 12), 1 / 12: Fraction(2, 12), 0.5: Fraction(1, 12)}
        assert scan.small == {0.0: True, 1 / 12: False, 0.5: True}


class TestEmpiricalMeasure:
    def test_whole_carrier(self):
        mu = capacity.empirical_maximizing_measure(rotation(), const_path(11), full_mask(12), 10)
        assert mu.mass_E == 1

    def test_period_two(self):
        mu = capacity.empirical_maximizing_measure(rotation(2, 1), const_path(5), 0b01, 4)
        assert mu.mass_E == Fraction(1, 2)

    def test_rotation(self):
        mu = capacity.empirical_maximizing_measure(rotation(), const_path(61), 1, 60)
        assert mu.mass_E == Fraction(1, 12) == Fraction(mu.b_n, 60)
        assert sum(mu.atoms.values()) == 1

    def test_path_too_short(self):
        with pytest.raises(InputError):
            capacity.empirical_maximizing_measure(rotation(), const_path(10), 1, 10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 15))
    def test_mass_equals_normalised_count(self, seed, n):
        rng, sys = random_system(seed)
        path = base.sample_paths(sys.env, 1, n + 1, seed)[0]
        E = int(rng.integers(0, 1 << sys.carrier.size))
        mu = capacity.empirical_maximizing_measure(sys, path, E, n)
        assert mu.mass_E == Fraction(capacity.birkhoff_count(sys, path, E, n)[0], n)
        assert mu.mass_E == sum((w for (s, x), w in mu.atoms.items() if E >> x & 1), Fraction(0))


class TestInvarianceDefect:
    def test_constant_function(self):
        mu = capacity.empirical_maximizing_measure(rotation(), const_path(31), 1, 30)
        f = capacity.TableFunction(["*"], np.full((1, 12), 3))
        assert capacity.approximate_invariance_defect(mu, [f])[0].defect == 0

    def test_indicator_on_periodic_orbit(self):
        sys = rotation()
        mu = capacity.empirical_maximizing_measure(sys, const_path(25), 0b111, 24)
        f = capacity.TableFunction.indicator(["*"], 12, 0b111)
        assert capacity.approximate_invariance_defect(mu, [f])[0].defect == 0

    def test_generic_function_at_fifty(self):
        sys = rotation(13, 4)
        mu = capacity.empirical_maximizing_measure(sys, const_path(51), 0b11, 50)
        fs = capacity.rng_test_functions(["*"], 13, 10, seed=4)
        for f, row in zip(fs, capacity.approximate_invariance_defect(mu, fs)):
            assert row.defect <= 0.04 * f.sup_norm + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_two_over_n_bound(self, seed, n):
        rng, sys = random_system(seed)
        path = base.sample_paths(sys.env, 1, n + 1, seed)[0]
        mu = capacity.empirical_maximizing_measure(sys, path, int(rng.integers(0, 1 << sys.carrier.size)), n)
        fs = [capacity.TableFunction.random(sys.env.states, sys.carrier.size, rng) for _ in range(5)]
        assert all(r.passed for r in capacity.approximate_invariance_defect(mu, fs))

    def test_table_shape(self):
        with pytest.raises(InputError):
            capacity.TableFunction(["a", "b"], np.zeros((1, 3)))


class TestShrinkCover:
    def test_zero_margin(self):
        space = grid_line(10)
        alpha = Cover(space, (mask_of(range(7)), mask_of(range(4, 11))))
        assert capacity.shrink_cover(space, alpha, 0.0).cover.members == alpha.members

    def test_interval_grid(self):
        space = grid_line(100)
        alpha = Cover(space, (mask_of(range(60)), mask_of(range(41, 101))))
        out = capacity.shrink_cover(space, alpha, 0.05)
        assert out.cover.members == (mask_of(range(55)), mask_of(range(46, 101)))

    def test_margins_too_large(self):
        space = grid_line(100)
        alpha = Cover(space, (mask_of(range(60)), mask_of(range(41, 101))))
        with pytest.raises(InputError, match="smaller margins"):
            capacity.shrink_cover(space, alpha, 0.2)

    def test_boundary_is_inner(self):
        space = grid_line(10)
        assert capacity.boundary(space, mask_of(range(4))) == 1 << 3

    def test_poset_rejected(self):
        p = instances.circle_model()
        with pytest.raises(InputError):
            capacity.shrink_cover(p, instances.circle_cover(p), 0.0)


class TestPartitionOfUnity:
    def test_bump_values(self):
        _, _, pu = sbp_partition()
        assert pu.psi[0][0] == 1 and pu.psi[1][6] == 1
        # 6 sits at distance delta / 2 from the boundary {5, 7} of the first shrunk member
        assert pu.psi[0][6] == Fraction(1, 2)
        assert pu.phi[0][6] == pu.phi[1][6] == Fraction(1, 2)
        assert pu.fractional_set() == 1 << 6

    def test_sums_on_101_point_grid(self):
        space = grid_line(100)
        alpha = Cover(space, (mask_of(range(40)), mask_of(range(30, 75)), mask_of(range(65, 101))))
        shrunk = capacity.shrink_cover(space, alpha, 0.04)
        pu = capacity.partition_of_unity(space, alpha, shrunk, 0.04)
        assert capacity.check_partition(pu).passed
        for x in range(101):
            running = Fraction(0)
            for k in range(3):
                running += pu.phi[k][x]
                assert running == min(Fraction(1), sum(pu.psi[j][x] for j in range(k + 1)))

    def test_delta_too_large(self):
        space, alpha, _ = sbp_partition()
        shrunk = Cover(space, (full_mask(12) & ~(1 << 6), 1 << 6))
        with pytest.raises(InputError, match="delta"):
            capacity.partition_of_unity(space, alpha, shrunk, 0.3)

    def test_shrunk_must_sit_inside(self):
        space, alpha, _ = sbp_partition()
        with pytest.raises(InputError):
            capacity.partition_of_unity(space, alpha, Cover(space, (full_mask(12), 1 << 2)), 0.1)

    def test_literal_variant_differs_from_third_member_on(self):
        space = grid_line(100)
        alpha = Cover(space, (mask_of(range(40)), mask_of(range(30, 75)), mask_of(range(65, 101))))
        shrunk = capacity.shrink_cover(space, alpha, 0.04)
        rec = capacity.partition_of_unity(space, alpha, shrunk, 0.04)
        lit = capacity.partition_of_unity(space, alpha, shrunk, 0.04, variant="literal")
        assert lit.phi[:2] == rec.phi[:2]
        for x in range(101):
            assert lit.phi[2][x] == min(lit.psi[2][x], 1 - lit.psi[0][x] - lit.psi[1][x])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random_arc_covers(self, seed):
        rng = np.random.default_rng(seed)
        space, alpha, margin, delta = instances.random_arc_cover(rng, int(rng.integers(12, 201)))
        pu = capacity.partition_of_unity(space, alpha, capacity.shrink_cover(space, alpha, margin), delta)
        chk = capacity.check_partition(pu)
        assert chk.passed
        for j in range(pu.k):
            assert all(pu.psi[j][x] == 1 for x in bits(pu.shrunk.members[j]))


class TestCrossingAndEmbedding:
    def binary_partition(self):
        space = circle_grid(12)
        halves = Cover(space, (mask_of(range(6)), mask_of(range(6, 12))))
        return halves, capacity.partition_of_unity(space, halves, halves, 1 / 12)

    def test_binary_partition(self):
        halves, pu = self.binary_partition()
        assert pu.fractional_set() == 0
        rep = capacity.crossing_frequency(rotation(), const_path(24), pu, 24, 0.2)
        assert rep.max_frequency == 0
        cert = capacity.sbp_embedding(rotation(), const_path(24), pu, 24, 0.2)
        assert cert.max_fractional == 0
        assert all(cert.values[x] == cert.corner[x] for x in range(12))
        assert cert.passed

    def test_orbit_avoiding_fractional_region(self):
        _, _, pu = sbp_partition()
        sys = bundle.make_inclusion_system(base.point_mass(), circle_grid(12), {"*": [0]})
        assert capacity.crossing_frequency(sys, const_path(10), pu, 10, 0.2).max_frequency == 0

    def test_single_fiber_point(self):
        space = FiniteMetricSpace.line([0.0])
        sys = bundle.make_inclusion_system(base.point_mass(), space)
        pu = capacity.partition_of_unity(space, Cover(space, (1,)), Cover(space, (1,)), 0.5)
        assert capacity.sbp_embedding(sys, const_path(5), pu, 5, 0.5).passed

    def test_rotation_instance(self):
        _, alpha, pu = sbp_partition()
        sys = rotation()
        rep = capacity.crossing_frequency(sys, const_path(120), pu, 120, 0.2)
        assert rep.max_frequency == Fraction(1, 12)
        cert = capacity.sbp_embedding(sys, const_path(120), pu, 120, 0.2, alpha)
        assert cert.max_fractional == 10 < 0.2 * 120
        assert cert.coordinates_ok and cert.compatible and cert.passed

    def test_scan_finds_smallest_passing_N(self):
        _, alpha, pu = sbp_partition()
        first, certs = capacity.scan_embedding(rotation(), const_path(120), pu, [12, 60, 120], 0.2, alpha)
        assert first == 12 and set(certs) == {12, 60, 120}

    def test_missing_state_partition(self):
        _, _, pu = sbp_partition()
        sys = bundle.make_random_rotation_grid(12, [5, 7])
        with pytest.raises(InputError):
            capacity.crossing_frequency(sys, base.EnvPath(0, 0, (0, 1)), {0: pu}, 2, 0.2)
