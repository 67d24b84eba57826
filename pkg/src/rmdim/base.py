"""Finite-state driving systems and reproducible environment paths.

An environment is a finite set of labelled states with either a deterministic
successor map (``point-mass``, ``cyclic-rotation``) or a row-stochastic
transition table (``iid``, ``markov``), plus the intended stationary law.
"""

from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import ConfigError, InputError

KINDS = ("point-mass", "cyclic-rotation", "iid", "markov")
DETERMINISTIC_KINDS = ("point-mass", "cyclic-rotation")

EXACT_TOL = 1e-12
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class BaseEnvironment:
    states: tuple
    kind: str
    law: tuple
    theta: tuple | None = None
    matrix: tuple | None = None
    assume_ergodic: bool = False
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("environment.kind", f"unknown kind {self.kind!r}; expected one of {KINDS}")
        m = len(self.states)
        if m == 0:
            raise ConfigError("environment.states", "at least one state is required")
        if len(set(self.states)) != m:
            raise ConfigError("environment.states", "state labels must be distinct")
        if len(self.law) != m:
            raise ConfigError("environment.law", f"expected {m} weights, got {len(self.law)}")
        law = np.asarray(self.law, dtype=float)
        if np.any(law < 0) or abs(law.sum() - 1.0) > EXACT_TOL:
            raise ConfigError("environment.law", f"weights must be nonnegative and sum to 1 (sum is {law.sum():.17g})")
        if self.kind == "point-mass" and m != 1:
            raise ConfigError("environment.states", "point-mass environments have exactly one state")
        if self.kind in DETERMINISTIC_KINDS:
            if self.theta is None or len(self.theta) != m or any(not 0 <= t < m for t in self.theta):
                raise ConfigError("environment.transition", "deterministic kinds need a successor index per state")
        else:
            if self.matrix is None or len(self.matrix) != m or any(len(r) != m for r in self.matrix):
                raise ConfigError("environment.transition", f"expected an {m}x{m} row-stochastic table")
            mat = np.asarray(self.matrix, dtype=float)
            if np.any(mat < 0) or np.any(np.abs(mat.sum(axis=1) - 1.0) > EXACT_TOL):
                raise ConfigError("environment.transition", "rows must be nonnegative and sum to 1")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    @property
    def deterministic(self) -> bool:
        return self.kind in DETERMINISTIC_KINDS

    def index(self, state: Hashable) -> int:
        try:
            return self._index[state]
        except (KeyError, TypeError):
            raise InputError(f"unknown environment state {state!r}") from None

    def transition_matrix(self) -> np.ndarray:
        m = len(self.states)
        if self.deterministic:
            mat = np.zeros((m, m))
            mat[np.arange(m), self.theta] = 1.0
            return mat
        return np.asarray(self.matrix, dtype=float)

    def successors(self, state) -> list:
        """States reachable in one step from ``state`` with positive probability."""
        i = self.index(state)
        if self.deterministic:
            return [self.states[self.theta[i]]]
        return [self.states[j] for j, p in enumerate(self.matrix[i]) if p > 0]

    def edges(self) -> list:
        """All (state, successor) pairs with positive transition probability."""
        return [(s, t) for s in self.states for t in self.successors(s)]

    def is_irreducible(self) -> bool:
        adj = self.transition_matrix() > 0
        m = len(self.states)
        reach = adj | np.eye(m, dtype=bool)
        for _ in range(m):
            reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
        return bool(reach.all())


@dataclass(frozen=True)
class EnvPath:
    """A sampled trajectory w_0, w_1, ... of the driving system."""

    seed: int
    index: int
    states: tuple

    @property
    def length(self) -> int:
        return len(self.states)

    def shifted(self, n: int) -> "EnvPath":
        """The path started at time ``n``; stands in for the shifted environment."""
        if not 0 <= n < len(self.states):
            raise InputError(f"cannot shift a path of length {len(self.states)} by {n}")
        return EnvPath(self.seed, self.index, self.states[n:])


# constructors -------------------------------------------------------------

def point_mass(label="*") -> BaseEnvironment:
    return BaseEnvironment(states=(label,), kind="point-mass", law=(1.0,), theta=(0,))


def cyclic(states: Sequence | int, law: Sequence[float] | None = None, shift: int = 1) -> BaseEnvironment:
    """Rotation i -> i + shift (mod m) on the listed states; uniform law by default."""
    if isinstance(states, int):
        states = tuple(range(states))
    states = tuple(states)
    m = len(states)
    if law is None:
        law = (1.0 / m,) * m
    theta = tuple((i + shift) % m for i in range(m))
    return BaseEnvironment(states=states, kind="cyclic-rotation", law=tuple(law), theta=theta)


def iid(states: Sequence, law: Sequence[float]) -> BaseEnvironment:
    law = tuple(float(p) for p in law)
    return BaseEnvironment(states=tuple(states), kind="iid", law=law, matrix=(law,) * len(law))


def markov(states: Sequence, matrix, law: Sequence[float] | None = None, assume_ergodic=False) -> BaseEnvironment:
    """Finite Markov chain; ``law`` defaults to the stationary distribution of ``matrix``."""
    mat = tuple(tuple(float(p) for p in row) for row in matrix)
    if law is None:
        law = stationary_law(np.asarray(mat))
    return BaseEnvironment(states=tuple(states), kind="markov", law=tuple(float(p) for p in law),
                           matrix=mat, assume_ergodic=assume_ergodic)


def stationary_law(matrix: np.ndarray) -> tuple:
    """Solve pi P = pi, sum(pi) = 1 by least squares."""
    m = matrix.shape[0]
    a = np.vstack([matrix.T - np.eye(m), np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    # renormalise so the sum is 1 to the last bit where possible
    pi[-1] = 1.0 - pi[:-1].sum()
    return tuple(float(p) for p in pi)


# dynamics -----------------------------------------------------------------

def step(env: BaseEnvironment, state, draw: float):
    """Successor of ``state``; ``draw`` (uniform on [0,1)) is ignored by deterministic kinds."""
    i = env.index(state)
    if env.deterministic:
        return env.states[env.theta[i]]
    return env.states[_invert_cdf(env.matrix[i], draw)]


def _invert_cdf(weights, draw: float) -> int:
    cdf = list(itertools.accumulate(weights))
    j = bisect.bisect_right(cdf, draw)
    # guard against cdf[-1] < 1 by rounding; land on the last positive weight
    if j >= len(weights):
        j = max(k for k, w in enumerate(weights) if w > 0)
    while weights[j] == 0:
        j += 1
    return j


def path_generator(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for path ``index``: Philox keyed by ``seed ^ index``."""
    return np.random.Generator(np.random.Philox(key=(int(seed) ^ int(index)) & _MASK64))


def sample_paths(env: BaseEnvironment, count: int, length: int, seed: int, initial=None) -> list:
    """Draw ``count`` independent paths; path i depends only on (seed, i)."""
    if count < 1 or length < 1:
        raise InputError("count and length must be positive")
    if initial is not None:
        env.index(initial)
    return [_sample_one(env, length, seed, i, initial) for i in range(count)]


def _sample_one(env, length, seed, i, initial):
    draws = path_generator(seed, i).random(length)
    state = initial if initial is not None else env.states[_invert_cdf(env.law, draws[0])]
    states = [state]
    for k in range(1, length):
        state = step(env, state, draws[k])
        states.append(state)
    return EnvPath(seed=seed, index=i, states=tuple(states))


def enumerate_paths(env: BaseEnvironment, length: int) -> list:
    """Every path of a deterministic environment with its law weight.

    Expectations over these are exact finite sums rather than Monte-Carlo averages.
    """
    if not env.deterministic:
        raise InputError("exact path enumeration needs a deterministic environment")
    out = []
    for i, s in enumerate(env.states):
        if env.law[i] == 0:
            continue
        states = [s]
        for _ in range(length - 1):
            states.append(step(env, states[-1], 0.0))
        out.append((EnvPath(seed=0, index=i, states=tuple(states)), env.law[i]))
    return out


def weighted_paths(paths) -> list:
    """Normalise a list of paths or (path, weight) pairs to (path, probability) pairs.

    Bare paths get equal weight (Monte-Carlo average); explicit weights come
    from :func:`enumerate_paths` and give exact expectations.
    """
    out = []
    for p in paths:
        out.append((p, None) if isinstance(p, EnvPath) else (p[0], p[1]))
    if not out:
        raise InputError("at least one path is required")
    if all(w is None for _, w in out):
        return [(p, 1.0 / len(out)) for p, _ in out]
    if any(w is None for _, w in out):
        raise InputError("either all paths carry weights or none do")
    total = sum(w for _, w in out)
    return [(p, w / total) for p, w in out]


def has_explicit_weights(paths) -> bool:
    return bool(paths) and not isinstance(paths[0], EnvPath)


def check_path(env: BaseEnvironment, path: EnvPath) -> None:
    """Raise InputError unless every step of ``path`` is a possible transition."""
    for k in range(path.length - 1):
        a, b = path.states[k], path.states[k + 1]
        if b not in env.successors(a):
            raise InputError(f"path step {k}: {a!r} -> {b!r} is not a transition of the environment")


@dataclass(frozen=True)
class StationarityReport:
    passed: bool
    deviation: float


def check_stationarity(env: BaseEnvironment, tol: float = EXACT_TOL) -> StationarityReport:
    """Compare law(theta^-1 {s}) with law({s}) for every state s."""
    law = np.asarray(env.law, dtype=float)
    pushed = law @ env.transition_matrix()
    dev = float(np.max(np.abs(pushed - law)))
    return StationarityReport(passed=dev <= tol, deviation=dev)


def empirical_frequencies(env: BaseEnvironment, path: EnvPath) -> np.ndarray:
    counts = np.zeros(len(env.states))
    for s in path.states:
        counts[env.index(s)] += 1
    return counts / path.length
