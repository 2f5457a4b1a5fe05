"""Traveling-salesman adapter: routes, substitution neighborhoods, solvers.

A route is the visit order theta_1..theta_{N-1}, a permutation of the city
labels {1, .., N-1}; city 0 is the implicit start and end.  The edit metric
between routes is the Hamming distance over positions (substitution only),
and a subspace S is a set of city labels that must occupy the first K
positions of the route.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import struct
from dataclasses import dataclass

import numpy as np

from . import engine

Route = tuple[int, ...]

HELD_KARP_MAX = 18
BRUTE_FORCE_MAX = 11
EXHAUSTIVE_CHECK_CAP = 2_000_000

_BRUTE_CHUNK = 100_000
_POST_CHUNK = 200_000


class TspError(Exception):
    pass


class InvalidRoute(TspError):
    pass


class InstanceTooLarge(TspError):
    pass


class NeighborhoodTooLarge(TspError):
    pass


@dataclass(frozen=True)
class TspInstance:
    """Euclidean instance; city 0 is the depot."""

    name: str
    cities: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.cities) < 2:
            raise ValueError("instance needs at least 2 cities")
        for x, y in self.cities:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("coordinates must be finite")
        dist = tuple(tuple(math.dist(a, b) for b in self.cities)
                     for a in self.cities)
        object.__setattr__(self, "_dist", dist)

    @property
    def n(self) -> int:
        return len(self.cities)

    @property
    def distances(self) -> tuple[tuple[float, ...], ...]:
        return self._dist


def generate_instance(n: int, seed: int, name: str | None = None) -> TspInstance:
    """Seeded instance with coordinates uniform in [0, 100]^2."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = random.Random(seed)
    cities = tuple((rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0))
                   for _ in range(n))
    return TspInstance(name or f"random-{n}-{seed}", cities)


def save_instance(instance: TspInstance, path) -> None:
    payload = {"name": instance.name,
               "cities": [[x, y] for x, y in instance.cities]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_instance(path) -> TspInstance:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "cities" not in payload:
        raise ValueError("not an instance file")
    cities = tuple((float(x), float(y)) for x, y in payload["cities"])
    return TspInstance(str(payload.get("name", "unnamed")), cities)


def check_route(instance: TspInstance, route) -> None:
    if sorted(route) != list(range(1, instance.n)):
        raise InvalidRoute(f"not a permutation of 1..{instance.n - 1}: {route}")


def _length(dist, route: Route) -> float:
    # fixed summation order (position 0 to N-1) defines the tie semantics
    prev = 0
    total = 0.0
    for c in route:
        total += dist[prev][c]
        prev = c
    return total + dist[prev][0]


def route_length(instance: TspInstance, route) -> float:
    """Length of the closed tour 0 -> route -> 0."""
    check_route(instance, route)
    return _length(instance.distances, tuple(route))


def map_index_set_to_cities(s: engine.IndexSet) -> frozenset[int]:
    """Engine indices [0, N-1) to city labels {1, .., N-1}."""
    return frozenset(i + 1 for i in s)


def constrain(route, cities) -> Route:
    """Stable repair: pull the cities of S to the front, orders preserved."""
    cities = frozenset(cities)
    members = [c for c in route if c in cities]
    rest = [c for c in route if c not in cities]
    return tuple(members + rest)


# -- substitution neighborhoods ----------------------------------------------
#
# A move rearranges a subset of positions so that every chosen position gets a
# new value (a derangement of the selected values), which keeps routes inside
# permutation space and makes the Hamming distance exactly the subset size.
# Under the S-prefix constraint the prefix and suffix rearrange independently.

_DERANGEMENT_COUNTS = [1, 0]
_derangement_cache: dict[int, tuple[tuple[int, ...], ...]] = {}
_shape_cache: dict[tuple[int, int | None, int], tuple] = {}


def derangement_count(m: int) -> int:
    while len(_DERANGEMENT_COUNTS) <= m:
        i = len(_DERANGEMENT_COUNTS)
        _DERANGEMENT_COUNTS.append(
            (i - 1) * (_DERANGEMENT_COUNTS[i - 1] + _DERANGEMENT_COUNTS[i - 2]))
    return _DERANGEMENT_COUNTS[m]


def _derangements(m: int) -> tuple[tuple[int, ...], ...]:
    if m not in _derangement_cache:
        _derangement_cache[m] = tuple(
            p for p in itertools.permutations(range(m))
            if all(p[i] != i for i in range(m)))
    return _derangement_cache[m]


def _groups(l: int, k: int | None) -> tuple[tuple[int, ...], ...]:
    if k is None or k >= l:
        return (tuple(range(l)),)
    return (tuple(range(k)), tuple(range(k, l)))


def _move_shapes(l: int, k: int | None, t: int):
    """Per-group change counts with their move counts and a cumulative sum."""
    key = (l, k, t)
    if key not in _shape_cache:
        sizes = [len(g) for g in _groups(l, k)]
        shapes = []
        weights = []
        choices = [[m for m in range(size + 1) if m != 1 and m <= t]
                   for size in sizes]
        for combo in itertools.product(*choices):
            total = sum(combo)
            if not 2 <= total <= t:
                continue
            weight = 1
            for size, m in zip(sizes, combo):
                weight *= math.comb(size, m) * derangement_count(m)
            if weight:
                shapes.append(combo)
                weights.append(weight)
        cumulative = list(itertools.accumulate(weights))
        _shape_cache[key] = (tuple(shapes), tuple(weights), tuple(cumulative))
    return _shape_cache[key]


def neighborhood_size(l: int, k: int | None, t: int) -> int:
    """Exact count of routes within Hamming distance t that keep the prefix
    constraint (k=None means unconstrained)."""
    if t < 2 or l < 2:
        return 0
    _, _, cumulative = _move_shapes(l, k, t)
    return cumulative[-1] if cumulative else 0


def substitution_neighbors(route, t: int, s=None):
    """Yield every distinct valid neighbor within Hamming distance <= t.

    ``s`` is a set of city labels under the prefix constraint, or None for
    the unconstrained neighborhood.  The route must already satisfy the
    constraint when ``s`` is given.
    """
    route = tuple(route)
    l = len(route)
    k = None
    if s is not None:
        cities = frozenset(s)
        if frozenset(route[:len(cities)]) != cities:
            raise InvalidRoute("route does not satisfy the prefix constraint")
        k = len(cities)
    if t < 2:
        return
    groups = _groups(l, k)
    shapes, _, _ = _move_shapes(l, k, t)
    for shape in shapes:
        parts = []
        for group, m in zip(groups, shape):
            if m == 0:
                parts.append(((tuple(), tuple()),))
            else:
                parts.append(tuple(
                    (combo, perm)
                    for combo in itertools.combinations(group, m)
                    for perm in _derangements(m)))
        for assignment in itertools.product(*parts):
            out = list(route)
            for positions, perm in assignment:
                if positions:
                    values = [route[p] for p in positions]
                    for where, p in enumerate(positions):
                        out[p] = values[perm[where]]
            yield tuple(out)


def _random_derangement(m: int, rng: random.Random) -> tuple[int, ...]:
    if m == 2:
        return (1, 0)
    idx = list(range(m))
    while True:
        rng.shuffle(idx)
        if all(idx[i] != i for i in range(m)):
            return tuple(idx)


def sample_substitution_neighbor(route: Route, t: int, k: int | None,
                                 rng: random.Random) -> Route:
    """Draw one neighbor uniformly over the constrained neighborhood."""
    l = len(route)
    shapes, _, cumulative = _move_shapes(l, k, t)
    if not shapes:
        raise NeighborhoodTooLarge("empty neighborhood")
    pick = rng.random() * cumulative[-1]
    idx = 0
    while cumulative[idx] <= pick:
        idx += 1
    shape = shapes[idx]
    out = list(route)
    for group, m in zip(_groups(l, k), shape):
        if m == 0:
            continue
        positions = rng.sample(group, m)
        positions.sort()
        perm = _random_derangement(m, rng)
        values = [route[p] for p in positions]
        for where, p in enumerate(positions):
            out[p] = values[perm[where]]
    return tuple(out)


def is_blm(instance: TspInstance, route, s, t: int,
           cap: int = EXHAUSTIVE_CHECK_CAP) -> bool:
    """Exhaustively decide whether a route is a bounded local minimum.

    True iff no constrained neighbor has length <= the route's length.
    Raises NeighborhoodTooLarge when the enumeration would exceed ``cap``.
    """
    route = tuple(route)
    check_route(instance, route)
    cities = frozenset(s)
    if frozenset(route[:len(cities)]) != cities:
        raise InvalidRoute("route does not satisfy the prefix constraint")
    size = neighborhood_size(len(route), len(cities), t)
    if size > cap:
        raise NeighborhoodTooLarge(f"{size} neighbors exceed cap {cap}")
    dist = instance.distances
    base = _length(dist, route)
    for nb in substitution_neighbors(route, t, cities):
        if _length(dist, nb) <= base:
            return False
    return True


class TspProblem(engine.SearchProblem):
    """Search-problem adapter over a TSP instance.

    The engine dimension is N-1 (route positions); engine index i maps to
    city label i+1.  The difficulty's ``t`` field is the Hamming threshold.
    """

    def __init__(self, instance: TspInstance):
        self.instance = instance
        self.dimension = instance.n - 1
        self._dist = instance.distances

    def objective(self, route: Route) -> float:
        return _length(self._dist, route)

    def random_state(self, rng: random.Random) -> Route:
        order = list(range(1, self.instance.n))
        rng.shuffle(order)
        return tuple(order)

    def constrain(self, route: Route, s: engine.IndexSet) -> Route:
        return constrain(route, map_index_set_to_cities(s))

    def check_constraint(self, route: Route, s: engine.IndexSet,
                         difficulty: engine.DifficultyParams) -> bool:
        if sorted(route) != list(range(1, self.instance.n)):
            return False
        cities = map_index_set_to_cities(s)
        return frozenset(route[:len(cities)]) == cities

    def neighborhood_size(self, route: Route, s: engine.IndexSet,
                          difficulty: engine.DifficultyParams) -> int | None:
        return neighborhood_size(self.dimension, len(s), difficulty.t)

    def iter_neighbors(self, route: Route, s: engine.IndexSet,
                       difficulty: engine.DifficultyParams):
        return substitution_neighbors(route, difficulty.t,
                                      map_index_set_to_cities(s))

    def sample_neighbor(self, route: Route, s: engine.IndexSet,
                        difficulty: engine.DifficultyParams,
                        rng: random.Random) -> Route:
        return sample_substitution_neighbor(route, difficulty.t, len(s), rng)

    def is_neighbor(self, route: Route, candidate, s: engine.IndexSet,
                    difficulty: engine.DifficultyParams) -> bool:
        candidate = tuple(candidate)
        if sorted(candidate) != list(range(1, self.instance.n)):
            return False
        if not self.check_constraint(candidate, s, difficulty):
            return False
        hamming = sum(1 for a, b in zip(route, candidate) if a != b)
        return 1 <= hamming <= difficulty.t

    def encode(self, route: Route,
               difficulty: engine.DifficultyParams) -> bytes:
        return struct.pack(f"<{len(route)}H", *route)

    def decode(self, data: bytes,
               difficulty: engine.DifficultyParams) -> Route:
        if len(data) != 2 * self.dimension:
            raise engine.EncodingError(
                f"expected {2 * self.dimension} bytes, got {len(data)}")
        route = struct.unpack(f"<{self.dimension}H", data)
        if sorted(route) != list(range(1, self.instance.n)):
            raise engine.EncodingError("decoded bytes are not a route")
        return route


def local_search(instance: TspInstance, s, t: int, start, budget: int,
                 rng: random.Random) -> Route:
    """First-improvement descent under the S-prefix constraint.

    ``start`` must already satisfy the constraint (apply ``constrain``
    first).  Returns a route with no improving constrained neighbor; raises
    Exhausted when the evaluation budget runs out.
    """
    start = tuple(start)
    check_route(instance, start)
    cities = frozenset(s)
    if frozenset(start[:len(cities)]) != cities:
        raise InvalidRoute("start does not satisfy the prefix constraint")
    problem = TspProblem(instance)
    s_engine = frozenset(c - 1 for c in cities)
    difficulty = engine.DifficultyParams(
        k=len(cities), t=t, k_min=1, k_max=max(1, instance.n - 1))
    state, _, _ = engine.descend(problem, s_engine, start, difficulty,
                                 budget, rng)
    return state


# -- exact solvers ------------------------------------------------------------

def _canonical_direction(dist, route: Route) -> tuple[Route, float]:
    """Resolve the reversal twin: a tour and its reverse are the same cycle,
    but their float sums can differ by an ulp.  Pick the direction with the
    smaller canonical length (lexicographic order on exact ties)."""
    rev = route[::-1]
    forward = _length(dist, route)
    backward = _length(dist, rev)
    if backward < forward or (backward == forward and rev < route):
        return rev, backward
    return route, forward


def held_karp(instance: TspInstance,
              cap: int = HELD_KARP_MAX) -> tuple[Route, float]:
    """Exact shortest tour by dynamic programming over city subsets."""
    n = instance.n
    if n > cap:
        raise InstanceTooLarge(f"{n} cities exceed the cap of {cap}")
    dist = instance.distances
    if n == 2:
        return (1,), route_length(instance, (1,))

    cities = range(1, n)
    best_cost: dict[tuple[int, int], float] = {}
    parent: dict[tuple[int, int], int] = {}
    for c in cities:
        best_cost[(1 << (c - 1), c)] = dist[0][c]
        parent[(1 << (c - 1), c)] = 0
    for size in range(2, n):
        for subset in itertools.combinations(cities, size):
            mask = 0
            for c in subset:
                mask |= 1 << (c - 1)
            for last in subset:
                prev_mask = mask ^ (1 << (last - 1))
                best = math.inf
                best_prev = -1
                for prev in subset:
                    if prev == last:
                        continue
                    cost = best_cost[(prev_mask, prev)] + dist[prev][last]
                    if cost < best:
                        best = cost
                        best_prev = prev
                best_cost[(mask, last)] = best
                parent[(mask, last)] = best_prev

    full = (1 << (n - 1)) - 1
    best = math.inf
    best_last = -1
    for last in cities:
        cost = best_cost[(full, last)] + dist[last][0]
        if cost < best:
            best = cost
            best_last = last

    route = []
    mask, last = full, best_last
    while last != 0:
        route.append(last)
        mask, last = mask ^ (1 << (last - 1)), parent[(mask, last)]
    route.reverse()
    return _canonical_direction(dist, tuple(route))


def brute_force_tsp(instance: TspInstance,
                    cap: int = BRUTE_FORCE_MAX) -> tuple[Route, float]:
    """Exhaustive permutation scan (test oracle for held_karp)."""
    n = instance.n
    if n > cap:
        raise InstanceTooLarge(f"{n} cities exceed the cap of {cap}")
    if n == 2:
        return (1,), route_length(instance, (1,))
    dist = instance.distances
    dist_np = np.asarray(dist)
    best_len = math.inf
    best_route: Route = tuple(range(1, n))
    perms = itertools.permutations(range(1, n))
    while True:
        chunk = list(itertools.islice(perms, _BRUTE_CHUNK))
        if not chunk:
            break
        arr = np.array(chunk, dtype=np.int64)
        ext = np.zeros((arr.shape[0], n + 1), dtype=np.int64)
        ext[:, 1:-1] = arr
        lengths = dist_np[ext[:, :-1], ext[:, 1:]].sum(axis=1)
        # near-ties (reversal twins) are resolved canonically below
        keep = np.nonzero(lengths <= lengths.min() + 1e-9)[0]
        for i in keep:
            candidate, length = _canonical_direction(
                dist, tuple(int(c) for c in arr[i]))
            if length < best_len:
                best_len = length
                best_route = candidate
    return best_route, best_len


# -- post-hoc refinement -------------------------------------------------------

_combo_cache: dict[tuple[int, int], np.ndarray] = {}


def _combos(l: int, m: int) -> np.ndarray:
    key = (l, m)
    if key not in _combo_cache:
        _combo_cache[key] = np.array(
            list(itertools.combinations(range(l), m)), dtype=np.int64)
    return _combo_cache[key]


def _best_unconstrained_neighbor(dist_np: np.ndarray, route: Route,
                                 t: int) -> tuple[Route, float]:
    l = len(route)
    ext = np.zeros(l + 2, dtype=np.int64)
    ext[1:-1] = route
    best_len = math.inf
    best = None
    for m in range(2, t + 1):
        if m > l:
            break
        all_combos = _combos(l, m)
        for perm in _derangements(m):
            perm = list(perm)
            for lo in range(0, len(all_combos), _POST_CHUNK):
                combos = all_combos[lo:lo + _POST_CHUNK]
                idx = combos + 1
                cand = np.repeat(ext[None, :], len(combos), axis=0)
                values = ext[idx]
                rows = np.arange(len(combos))[:, None]
                cand[rows, idx] = values[:, perm]
                lengths = dist_np[cand[:, :-1], cand[:, 1:]].sum(axis=1)
                i = int(lengths.argmin())
                if lengths[i] < best_len:
                    best_len = float(lengths[i])
                    best = tuple(int(c) for c in cand[i, 1:-1])
    return best, best_len


def post_optimize(instance: TspInstance, route, t: int,
                  max_rounds: int = 100) -> Route:
    """Best-improvement refinement over the unconstrained neighborhood.

    Scans the whole Hamming<=t neighborhood each round and moves to the
    shortest neighbor while it strictly improves; deterministic, and the
    result is never longer than the input.
    """
    route = tuple(route)
    check_route(instance, route)
    dist = instance.distances
    dist_np = np.asarray(dist)
    current = route
    current_len = _length(dist, current)
    for _ in range(max_rounds):
        candidate, _ = _best_unconstrained_neighbor(dist_np, current, t)
        if candidate is None:
            break
        candidate_len = _length(dist, candidate)
        if candidate_len < current_len:
            current, current_len = candidate, candidate_len
        else:
            break
    return current
