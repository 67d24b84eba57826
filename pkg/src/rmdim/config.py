"""Experiment configuration: YAML schema checks and object builders.

Every problem is reported as a :class:`ConfigError` naming the dotted path
of the offending key (e.g. ``environment.law``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import base, bundle
from .errors import ConfigError, InputError, RmdimError
from .spaces import Cover, FiniteMetricSpace, FinitePoset, circle_grid, grid_line, mask_of

ANY = object()

# key -> expected type(s), or a nested schema dict; "*" matches any key
SCHEMA = {
    "seed": int,
    "verb": str,
    "environment": {
        "kind": str, "states": list, "law": list, "transition": (list, int), "assume_ergodic": bool,
    },
    "space": {
        "kind": str, "elements": list, "covering": list, "points": list, "distances": list, "m": int,
    },
    "system": {"generator": str, "params": dict},
    "cover": list,
    "covers": list,
    "refinement_pairs": list,
    "target": list,
    "budget": int,
    "set": list,
    "eps_grid": list,
    "eps_min": (int, float),
    "eps": (int, float),
    "n_list": list,
    "n_max": int,
    "N_list": list,
    "paths": {"count": int, "length": int, "initial": ANY, "enumerate": bool},
    "tolerance": (int, float),
    "mode": str,
    "threads": int,
    "with_cov": bool,
    "allow_mixed": bool,
    "test_functions": int,
    "partition": {"shrunk": list, "margins": (list, int, float), "delta": (int, float), "variant": str,
                  "radius": (int, float)},
    "sphere_scan": {"center": ANY, "radii": list},
    "output": {"dir": str, "prefix": str},
}


def _check(tree, schema, prefix=""):
    if not isinstance(tree, dict):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in schema:
            raise ConfigError(path, "unknown key")
        expected = schema[key]
        if isinstance(expected, dict):
            _check(value, expected, path)
        elif expected is not ANY:
            if isinstance(value, bool) and expected in (int, (int, float)):
                raise ConfigError(path, "expected a number, got a boolean")
            if not isinstance(value, expected):
                names = expected.__name__ if isinstance(expected, type) else "/".join(t.__name__ for t in expected)
                raise ConfigError(path, f"expected {names}, got {type(value).__name__}")


def validate(tree: dict) -> dict:
    _check(tree, SCHEMA)
    if "seed" not in tree:
        raise ConfigError("seed", "a seed is mandatory")
    if not 0 <= tree["seed"] < 1 << 64:
        raise ConfigError("seed", "seed must be a 64-bit unsigned integer")
    return tree


def load(path: str | Path, seed: int | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e.strerror}") from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(str(path), f"invalid YAML: {e}") from None
    if tree is None:
        tree = {}
    if seed is not None and isinstance(tree, dict):
        tree["seed"] = seed
    return validate(tree)


def config_hash(tree: dict) -> str:
    text = json.dumps(tree, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def need(tree: dict, key: str, where: str = ""):
    if key not in tree:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required key")
    return tree[key]


# builders -------------------------------------------------------------------

def _state_lookup(env):
    return {str(s): s for s in env.states}


def _state(env, key, where):
    lookup = _state_lookup(env)
    if str(key) not in lookup:
        raise ConfigError(where, f"unknown environment state {key!r}")
    return lookup[str(key)]


def build_environment(section: dict) -> base.BaseEnvironment:
    kind = need(section, "kind", "environment")
    states = section.get("states")
    law = section.get("law")
    try:
        if kind == "point-mass":
            label = states[0] if states else "*"
            if states is not None and len(states) != 1:
                raise ConfigError("environment.states", "point-mass environments have exactly one state")
            env = base.point_mass(label)
            if law is not None and [float(p) for p in law] != [1.0]:
                raise ConfigError("environment.law", "a point mass has law [1]")
            return env
        if states is None:
            raise ConfigError("environment.states", "missing required key")
        if kind == "cyclic-rotation":
            shift = section.get("transition", 1)
            if not isinstance(shift, int):
                raise ConfigError("environment.transition", "cyclic rotations take an integer shift")
            return base.cyclic(states, law=law, shift=shift)
        if kind == "iid":
            if law is None:
                raise ConfigError("environment.law", "missing required key")
            return base.iid(states, law)
        if kind == "markov":
            mat = need(section, "transition", "environment")
            if isinstance(mat, int):
                raise ConfigError("environment.transition", "markov environments take a matrix")
            return base.markov(states, mat, law=law, assume_ergodic=section.get("assume_ergodic", False))
    except (TypeError, ValueError) as e:
        if isinstance(e, RmdimError):
            raise
        raise ConfigError("environment", str(e)) from None
    raise ConfigError("environment.kind", f"unknown kind {kind!r}; expected one of {base.KINDS}")


def build_space(section: dict):
    kind = need(section, "kind", "space")
    try:
        if kind == "poset":
            return FinitePoset.from_covering(need(section, "elements", "space"),
                                             [tuple(p) for p in section.get("covering", [])])
        if kind == "metric":
            return FiniteMetricSpace.from_lower_triangular(need(section, "points", "space"),
                                                           need(section, "distances", "space"))
        if kind == "circle-grid":
            return circle_grid(need(section, "m", "space"))
        if kind == "line-grid":
            return grid_line(need(section, "m", "space"))
    except InputError as e:
        raise ConfigError("space", str(e)) from None
    raise ConfigError("space.kind", f"unknown kind {kind!r}; expected poset, metric, circle-grid or line-grid")


def _labels_to_mask(carrier, labels, where):
    pts = carrier.elements if isinstance(carrier, FinitePoset) else carrier.points
    lookup = {str(p): i for i, p in enumerate(pts)}
    out = []
    for e in labels:
        key = str(tuple(e)) if isinstance(e, list) else str(e)
        if key not in lookup:
            raise ConfigError(where, f"unknown point {e!r}")
        out.append(lookup[key])
    return mask_of(out)


def build_cover(carrier, members: list, where: str = "cover") -> Cover:
    if not members:
        raise ConfigError(where, "a cover needs at least one member")
    return Cover(carrier, tuple(_labels_to_mask(carrier, m, f"{where}[{i}]") for i, m in enumerate(members)))


def build_set(carrier, labels: list, where: str = "set") -> int:
    return _labels_to_mask(carrier, labels, where)


def _point_map(carrier, section, where):
    """Dense table from {point: image} or a list of images in carrier order."""
    pts = carrier.elements if isinstance(carrier, FinitePoset) else carrier.points
    lookup = {str(p): i for i, p in enumerate(pts)}
    table = [-1] * len(pts)
    items = section.items() if isinstance(section, dict) else zip(pts, section)
    for k, v in items:
        if str(k) not in lookup or str(v) not in lookup:
            raise ConfigError(where, f"unknown point in map entry {k!r}: {v!r}")
        table[lookup[str(k)]] = lookup[str(v)]
    return table


def build_system(tree: dict) -> bundle.BundleSystem:
    env = build_environment(need(tree, "environment"))
    section = need(tree, "system")
    gen = need(section, "generator", "system")
    params = dict(section.get("params", {}))
    where = "system.params"
    try:
        if gen == "inclusion":
            carrier = build_space(need(tree, "space"))
            fibers = params.get("fibers")
            if fibers is not None:
                fibers = {_state(env, k, f"{where}.fibers"): _labels_to_mask(carrier, v, f"{where}.fibers.{k}")
                          for k, v in fibers.items()}
            return bundle.make_inclusion_system(env, carrier, fibers)
        if gen == "rotation-grid":
            offsets = need(params, "offsets", where)
            if isinstance(offsets, dict):
                offsets = {_state(env, k, f"{where}.offsets"): v for k, v in offsets.items()}
            return bundle.make_random_rotation_grid(need(params, "m", where), offsets, env)
        if gen == "product-shift":
            return bundle.make_product_shift(need(params, "q", where), need(params, "window", where), env)
        if gen == "random-subshift":
            allowed = {_state(env, k, f"{where}.allowed"): v for k, v in need(params, "allowed", where).items()}
            return bundle.make_random_subshift(need(params, "window", where), need(params, "alphabet", where),
                                               allowed, env)
        if gen in ("poset-bundle", "explicit"):
            carrier = build_space(need(tree, "space"))
            maps_spec = need(params, "maps", where)
            fibers = params.get("fibers")
            fib = None
            if fibers is not None:
                fib = {_state(env, k, f"{where}.fibers"): _labels_to_mask(carrier, v, f"{where}.fibers.{k}")
                       for k, v in fibers.items()}
            tables = {}
            for k, v in maps_spec.items():
                if "->" in str(k):
                    s, t = str(k).split("->")
                    edge = (_state(env, s.strip(), f"{where}.maps"), _state(env, t.strip(), f"{where}.maps"))
                    tables[edge] = _point_map(carrier, v, f"{where}.maps.{k}")
                else:
                    s = _state(env, k, f"{where}.maps")
                    for t in env.successors(s):
                        tables[(s, t)] = _point_map(carrier, v, f"{where}.maps.{k}")
            full = (1 << carrier.size) - 1
            fib = fib or {s: full for s in env.states}
            sys = bundle.BundleSystem(env, carrier, fib, tables, name=gen)
            rep = bundle.validate(sys)
            if not rep.passed:
                raise ConfigError(where, "invalid system: " + "; ".join(rep.problems[:3]))
            return sys
    except ConfigError:
        raise
    except (InputError, KeyError, TypeError) as e:
        raise ConfigError(where, str(e)) from None
    raise ConfigError("system.generator", f"unknown generator {gen!r}")


@dataclass
class PathPlan:
    paths: list                 # EnvPath or (EnvPath, weight)
    exact: bool


def build_paths(tree: dict, env: base.BaseEnvironment, length: int) -> PathPlan:
    """Exact enumeration for deterministic environments, seeded sampling otherwise."""
    section = tree.get("paths", {})
    length = max(length, section.get("length", length))
    enum = section.get("enumerate", env.deterministic)
    if enum:
        if not env.deterministic:
            raise ConfigError("paths.enumerate", "only deterministic environments can be enumerated")
        return PathPlan(base.enumerate_paths(env, length), True)
    initial = section.get("initial")
    if initial is not None:
        initial = _state(env, initial, "paths.initial")
    count = section.get("count", 1)
    if count < 1:
        raise ConfigError("paths.count", "must be positive")
    return PathPlan(base.sample_paths(env, count, length, tree["seed"], initial=initial), False)
