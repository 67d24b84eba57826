import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmdim import base
from rmdim.errors import ConfigError, InputError


def power_iteration_law(matrix, iters=20_000):
    """Independent stationary-law oracle: iterate pi <- pi P from the uniform law."""
    p = np.asarray(matrix, dtype=float)
    pi = np.full(p.shape[0], 1.0 / p.shape[0])
    for _ in range(iters):
        nxt = pi @ p
        if np.max(np.abs(nxt - pi)) < 1e-16:
            break
        pi = nxt
    return pi / pi.sum()


class TestEnvironment:
    def test_point_mass_has_one_state(self):
        env = base.point_mass("w")
        assert env.states == ("w",)
        assert env.deterministic

    def test_point_mass_rejects_two_states(self):
        with pytest.raises(ConfigError, match="environment.states"):
            base.BaseEnvironment(states=("a", "b"), kind="point-mass", law=(0.5, 0.5), theta=(0, 1))

    @pytest.mark.parametrize("law", [(0.9, 0.0), (0.6, 0.6), (-0.1, 1.1)])
    def test_bad_law_names_key(self, law):
        with pytest.raises(ConfigError, match="environment.law"):
            base.cyclic(2, law=law)

    def test_stochastic_rows_must_sum_to_one(self):
        with pytest.raises(ConfigError, match="environment.transition"):
            base.markov(["a", "b"], [[0.5, 0.4], [0.5, 0.5]], law=[0.5, 0.5])

    def test_edges_of_markov_chain_skip_zero_entries(self):
        env = base.markov(["a", "b"], [[1.0, 0.0], [0.5, 0.5]], law=[1.0, 0.0])
        assert env.edges() == [("a", "a"), ("b", "a"), ("b", "b")]

    def test_irreducibility(self):
        assert base.cyclic(4).is_irreducible()
        assert not base.markov(["a", "b"], [[1.0, 0.0], [0.5, 0.5]], law=[1.0, 0.0]).is_irreducible()


class TestStep:
    def test_rotation_wraps(self):
        assert base.step(base.cyclic([0, 1, 2]), 2, 0.9) == 0

    def test_point_mass_fixed(self):
        env = base.point_mass("w*")
        assert base.step(env, "w*", 0.3) == "w*"

    def test_iid_cdf_inversion(self):
        env = base.iid(["a", "b"], [0.5, 0.5])
        assert base.step(env, "a", 0.25) == "a"
        assert base.step(env, "a", 0.75) == "b"

    def test_unknown_state(self):
        with pytest.raises(InputError):
            base.step(base.cyclic(3), 7, 0.0)

    @pytest.mark.parametrize("draw", [0.0, 0.3, 0.999999])
    def test_never_lands_on_zero_weight(self, draw):
        env = base.markov(["a", "b", "c"], [[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [1.0, 0.0, 0.0]],
                          law=[1 / 3, 1 / 3, 1 / 3], assume_ergodic=True)
        assert base.step(env, "a", draw) == "b"
        assert base.step(env, "b", draw) in ("a", "c")


class TestSamplePaths:
    def test_point_mass_paths_are_constant(self):
        paths = base.sample_paths(base.point_mass(), 3, 5, seed=11)
        assert len(paths) == 3
        assert all(p.states == ("*",) * 5 for p in paths)

    def test_rotation_orbit_from_initial_state(self):
        (p,) = base.sample_paths(base.cyclic(4), 1, 4, seed=0, initial=1)
        assert p.states == (1, 2, 3, 0)

    def test_markov_paths_are_reproducible(self):
        env = base.markov(["s", "f"], [[0.7, 0.3], [0.4, 0.6]])
        a = base.sample_paths(env, 5, 50, seed=2024)
        b = base.sample_paths(env, 5, 50, seed=2024)
        assert [p.states for p in a] == [p.states for p in b]

    def test_path_depends_only_on_seed_and_index(self):
        env = base.markov(["s", "f"], [[0.7, 0.3], [0.4, 0.6]])
        many = base.sample_paths(env, 6, 30, seed=5)
        few = base.sample_paths(env, 3, 30, seed=5)
        assert [p.states for p in many[:3]] == [p.states for p in few]

    def test_sampled_paths_respect_transitions(self):
        env = base.markov(["a", "b", "c"], [[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [1.0, 0.0, 0.0]],
                          law=[0.4, 0.4, 0.2])
        for p in base.sample_paths(env, 10, 40, seed=3):
            base.check_path(env, p)

    def test_check_path_rejects_impossible_step(self):
        with pytest.raises(InputError, match="not a transition"):
            base.check_path(base.cyclic(3), base.EnvPath(0, 0, (0, 2)))

    @pytest.mark.parametrize("count,length", [(0, 3), (2, 0)])
    def test_nonpositive_sizes(self, count, length):
        with pytest.raises(InputError):
            base.sample_paths(base.cyclic(2), count, length, seed=1)

    def test_long_markov_frequencies_approach_law(self):
        env = base.markov(["s", "f"], [[0.7, 0.3], [0.4, 0.6]])
        (p,) = base.sample_paths(env, 1, 100_000, seed=9)
        freq = base.empirical_frequencies(env, p)
        assert np.max(np.abs(freq - np.asarray(env.law))) < 0.1

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**64 - 1), length=st.integers(1, 40))
    def test_determinism_property(self, seed, length):
        env = base.iid(["a", "b", "c"], [0.2, 0.3, 0.5])
        a = base.sample_paths(env, 2, length, seed)
        b = base.sample_paths(env, 2, length, seed)
        assert a == b


class TestEnumeratePaths:
    def test_weights_follow_law(self):
        env = base.cyclic(3, law=[0.5, 0.25, 0.25])
        out = base.enumerate_paths(env, 3)
        assert [(p.states, w) for p, w in out] == [((0, 1, 2), 0.5), ((1, 2, 0), 0.25), ((2, 0, 1), 0.25)]

    def test_stochastic_env_cannot_be_enumerated(self):
        with pytest.raises(InputError):
            base.enumerate_paths(base.iid(["a", "b"], [0.5, 0.5]), 3)

    def test_weighted_paths_normalises_bare_paths(self):
        paths = base.sample_paths(base.cyclic(2), 4, 3, seed=0)
        assert [w for _, w in base.weighted_paths(paths)] == [0.25] * 4

    def test_weighted_paths_rejects_mixture(self):
        (p, w), = base.enumerate_paths(base.point_mass(), 2)
        with pytest.raises(InputError):
            base.weighted_paths([(p, w), p])

    def test_shifted_path(self):
        p = base.EnvPath(1, 0, (0, 1, 2, 3))
        assert p.shifted(2).states == (2, 3)
        with pytest.raises(InputError):
            p.shifted(4)


class TestStationarity:
    @pytest.mark.parametrize("m", [1, 3, 12])
    def test_uniform_rotation_is_stationary(self, m):
        rep = base.check_stationarity(base.cyclic(m))
        assert rep.passed and rep.deviation == 0.0

    def test_markov_law_matches_power_iteration(self):
        mat = [[0.7, 0.2, 0.1], [0.3, 0.3, 0.4], [0.25, 0.25, 0.5]]
        env = base.markov("xyz", mat)
        np.testing.assert_allclose(env.law, power_iteration_law(mat), atol=1e-12)
        assert base.check_stationarity(env).passed

    def test_swap_with_uneven_law_fails(self):
        rep = base.check_stationarity(base.cyclic(2, law=[0.9, 0.1]))
        assert not rep.passed
        assert rep.deviation == pytest.approx(0.8, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3), min_size=3, max_size=3))
    def test_default_markov_law_is_stationary(self, rows):
        mat = [[v / sum(r) for v in r] for r in rows]
        mat = [[v for v in r[:-1]] + [1.0 - sum(r[:-1])] for r in mat]
        env = base.markov("abc", mat)
        assert base.check_stationarity(env, tol=1e-10).passed
