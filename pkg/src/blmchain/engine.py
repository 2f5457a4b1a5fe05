"""Proof-of-work engine built on bounded local minima (BLM).

A proof of work here is a candidate optimum of a search problem, restricted
to a K-dimensional subspace S that is derived deterministically from block
hashes.  The candidate is accepted when no neighbor inside the subspace (and
inside the problem's neighborhood window) has an objective value less than or
equal to the candidate's.  Producing such a certificate requires search;
checking it only requires sampling neighbors.
"""

from __future__ import annotations

import hashlib
import math
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterator

State = Any
IndexSet = frozenset[int]

HASH_SIZE = 32


class PowError(Exception):
    """Base class for proof-of-work failures."""


class Exhausted(PowError):
    """Search or nonce budget consumed without producing a certificate."""


class Aborted(PowError):
    """Mining was cancelled through the caller-supplied stop signal."""


class InvalidK(PowError):
    """Requested subspace size is outside [1, N] (or [0, N] for counting)."""


class EncodingError(PowError):
    """Candidate bytes do not decode to a valid state."""


class IndexSetMismatch(PowError):
    """Claimed index set is not the one implied by the seed hash."""


class ObjectiveMismatch(PowError):
    """Claimed objective value differs from re-evaluation."""


class ConstraintViolation(PowError):
    """Decoded candidate does not satisfy the subspace restriction."""


@dataclass(frozen=True)
class DifficultyParams:
    """Difficulty knobs shared by the engine and the problem adapters.

    ``k`` is the degree of freedom: the number of coordinates the miner may
    search.  The controller fields (``window``, ``low_s``, ``high_s``) drive
    :func:`adjust_difficulty`.  The remaining fields are carried opaquely for
    the problem adapters: ``t`` is the route edit-distance threshold,
    ``sig_figs``/``delta``/``delta_min`` shape the continuous window.
    """

    k: int
    window: int = 10
    low_s: float = 15.0
    high_s: float = 60.0
    k_min: int = 1
    k_max: int = 0xFFFF
    t: int = 5
    sig_figs: int | None = None
    delta: float | None = None
    delta_min: float = 1e-6
    cert_samples: int | None = None
    cert_scale: int = 40
    restart_after: int | None = None
    exhaustive_cap: int = 20_000

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")
        if not self.k_min <= self.k <= self.k_max:
            raise ValueError("k outside [k_min, k_max]")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.low_s < self.high_s:
            raise ValueError("need low_s < high_s")
        if self.t < 2:
            raise ValueError("edit threshold t must be >= 2")
        if self.sig_figs is not None and self.sig_figs < 1:
            raise ValueError("sig_figs must be >= 1")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.cert_scale < 1:
            raise ValueError("cert_scale must be >= 1")
        if self.effective_restart_after < self.effective_cert_samples:
            # sampled mining would always restart before it could certify
            raise ValueError("restart_after must be >= cert_samples")

    def with_k(self, k: int) -> "DifficultyParams":
        return replace(self, k=k)

    @property
    def effective_sig_figs(self) -> int:
        # by default precision tracks the degree of freedom
        return self.sig_figs if self.sig_figs is not None else self.k

    @property
    def effective_cert_samples(self) -> int:
        if self.cert_samples is not None:
            return self.cert_samples
        return self.cert_scale * self.k

    @property
    def effective_restart_after(self) -> int:
        if self.restart_after is not None:
            return self.restart_after
        # default 50k; scale up when certification was made stricter so the
        # restart escape hatch cannot preempt certification
        return max(50 * self.k, 10 * self.effective_cert_samples)


@dataclass(frozen=True)
class ProofOfWork:
    """Mined certificate: canonical candidate bytes, its value, and S."""

    theta_star: bytes
    objective_value: float
    index_set: tuple[int, ...]

    def __post_init__(self):
        if tuple(sorted(set(self.index_set))) != self.index_set:
            raise ValueError("index_set must be sorted and duplicate-free")


@dataclass(frozen=True)
class Counterexample:
    """Neighbor that defeats a candidate: f(theta) <= claimed value."""

    theta: State
    objective_value: float


@dataclass(frozen=True)
class MiningOutcome:
    proof: ProofOfWork
    iterations: int


class SearchProblem(ABC):
    """Adapter contract a problem must implement to be mined.

    States are immutable values.  ``s`` is always a set of 0-based engine
    indices in ``[0, dimension)``; adapters map them to their own labels.
    Neighborhoods must only contain states that satisfy the subspace
    restriction, differ from their center, and stay inside the problem's
    bounds.
    """

    dimension: int

    @abstractmethod
    def objective(self, state: State) -> float: ...

    @abstractmethod
    def random_state(self, rng: random.Random) -> State: ...

    @abstractmethod
    def constrain(self, state: State, s: IndexSet) -> State:
        """Repair a state so it satisfies the restriction for s; idempotent."""

    @abstractmethod
    def check_constraint(self, state: State, s: IndexSet,
                         difficulty: DifficultyParams) -> bool: ...

    @abstractmethod
    def neighborhood_size(self, state: State, s: IndexSet,
                          difficulty: DifficultyParams) -> int | None:
        """Exact neighbor count, or None when the set is not enumerable."""

    @abstractmethod
    def iter_neighbors(self, state: State, s: IndexSet,
                       difficulty: DifficultyParams) -> Iterator[State]: ...

    @abstractmethod
    def sample_neighbor(self, state: State, s: IndexSet,
                        difficulty: DifficultyParams,
                        rng: random.Random) -> State:
        """Draw one neighbor uniformly (the validation distribution)."""

    @abstractmethod
    def is_neighbor(self, state: State, candidate: State, s: IndexSet,
                    difficulty: DifficultyParams) -> bool: ...

    @abstractmethod
    def encode(self, state: State, difficulty: DifficultyParams) -> bytes: ...

    @abstractmethod
    def decode(self, data: bytes, difficulty: DifficultyParams) -> State: ...

    def sample_proposal(self, state: State, s: IndexSet,
                        difficulty: DifficultyParams,
                        rng: random.Random) -> State:
        """Proposal distribution for mining; defaults to the uniform one."""
        return self.sample_neighbor(state, s, difficulty, rng)

    def random_restart(self, anchor: State, s: IndexSet,
                       rng: random.Random) -> State:
        """Fresh start after stagnation; must preserve the restriction."""
        return self.constrain(self.random_state(rng), s)

    def finalize(self, state: State, s: IndexSet,
                 difficulty: DifficultyParams) -> State:
        """Canonicalize a certified state before it is encoded."""
        return state


def index_select(seed: bytes, n: int, k: int) -> IndexSet:
    """Derive k distinct indices in [0, n) from a 32-byte seed.

    The seed is read as a big-endian integer; indices are extracted by
    repeated mod-n / divide-by-n.  When the integer runs out before k
    distinct indices were collected, the current 32-byte value is re-hashed
    with SHA-256 and extraction continues, so the result is total and
    deterministic.
    """
    if len(seed) != HASH_SIZE:
        raise ValueError("seed must be 32 bytes")
    if k < 1 or k > n:
        raise InvalidK(f"k={k} outside [1, {n}]")
    chosen: set[int] = set()
    material = seed
    value = int.from_bytes(material, "big")
    while len(chosen) < k:
        if value == 0:
            material = hashlib.sha256(material).digest()
            value = int.from_bytes(material, "big")
            continue
        chosen.add(value % n)
        value //= n
    return frozenset(chosen)


def count_subspaces(n: int, k: int) -> int:
    """Number of distinct k-of-n index sets, exact."""
    if k < 0 or k > n or n < 0:
        raise InvalidK(f"k={k} outside [0, {n}]")
    return math.comb(n, k)


def adjust_difficulty(recent_times: list[float], k: int,
                      params: DifficultyParams) -> int:
    """One controller step from trailing block durations (seconds).

    Uses the mean of the last ``window`` durations (all of them when fewer
    are available): above ``high_s`` lowers k by one, below ``low_s`` raises
    it by one, otherwise k is kept.  The result is clamped to
    [k_min, k_max].
    """
    if not recent_times:
        raise ValueError("recent_times must be non-empty")
    recent = list(recent_times)[-params.window:]
    mean = sum(recent) / len(recent)
    if mean > params.high_s:
        k = k - 1
    elif mean < params.low_s:
        k = k + 1
    return max(params.k_min, min(params.k_max, k))


def descend(problem: SearchProblem, s: IndexSet, state: State,
            difficulty: DifficultyParams, budget: int, rng: random.Random,
            stop: Callable[[], bool] | None = None) -> tuple[State, float, int]:
    """Strict-improvement local search until a certified candidate.

    Moves only to strictly better neighbors.  When the constrained
    neighborhood is enumerable within ``exhaustive_cap``, certification is a
    full scan (in a seeded-random order) that finds no neighbor with
    f <= f(state); a scan that meets an equal-valued neighbor restarts,
    because such a candidate can never pass exhaustive validation.
    Otherwise certification is ``cert_samples`` strictly-worse samples in a
    row; an exact tie neither advances nor resets that count (sampled
    validation resolves real ties), while ``restart_after`` consecutive
    non-improving proposals of any kind trigger a restart from a fresh
    random state.  Every neighbor evaluation consumes one unit of budget;
    Exhausted is raised when it runs out.

    Returns (state, objective, evaluations used).
    """
    if budget <= 0:
        raise Exhausted("no budget")
    anchor = state
    f_cur = problem.objective(state)
    used = 0
    size = problem.neighborhood_size(state, s, difficulty)

    if size is not None and size <= difficulty.exhaustive_cap:
        while True:
            neighbors = list(problem.iter_neighbors(state, s, difficulty))
            rng.shuffle(neighbors)
            moved = False
            tied = False
            for nb in neighbors:
                if stop is not None and stop():
                    raise Aborted("stop signal")
                if used >= budget:
                    raise Exhausted(f"budget {budget} consumed")
                used += 1
                fn = problem.objective(nb)
                if fn < f_cur:
                    state, f_cur = nb, fn
                    moved = True
                    break
                if fn == f_cur:
                    tied = True
            if moved:
                continue
            if tied:
                # an equal-valued neighbor defeats the candidate; start over
                state = problem.random_restart(anchor, s, rng)
                f_cur = problem.objective(state)
                continue
            return state, f_cur, used

    cert = difficulty.effective_cert_samples
    restart_after = difficulty.effective_restart_after
    stall = 0      # consecutive strictly-worse proposals
    blocked = 0    # consecutive non-improving proposals (ties included)
    while used < budget:
        if stop is not None and stop():
            raise Aborted("stop signal")
        nb = problem.sample_proposal(state, s, difficulty, rng)
        used += 1
        fn = problem.objective(nb)
        if fn < f_cur:
            state, f_cur = nb, fn
            stall = 0
            blocked = 0
        elif fn == f_cur:
            blocked += 1
        else:
            stall += 1
            blocked += 1
        if stall >= cert:
            return state, f_cur, used
        if blocked >= restart_after:
            state = problem.random_restart(anchor, s, rng)
            f_cur = problem.objective(state)
            stall = 0
            blocked = 0
    raise Exhausted(f"budget {budget} consumed")


def mine_detailed(problem: SearchProblem, seed: bytes,
                  difficulty: DifficultyParams, warm_start: State | None,
                  budget: int, rng: random.Random,
                  stop: Callable[[], bool] | None = None) -> MiningOutcome:
    """Mine a proof of work; also reports evaluations spent."""
    s = index_select(seed, problem.dimension, difficulty.k)
    start = warm_start if warm_start is not None else problem.random_state(rng)
    state = problem.constrain(start, s)
    state, _, used = descend(problem, s, state, difficulty, budget, rng, stop)
    final = problem.finalize(state, s, difficulty)
    proof = ProofOfWork(
        theta_star=problem.encode(final, difficulty),
        objective_value=problem.objective(final),
        index_set=tuple(sorted(s)),
    )
    return MiningOutcome(proof=proof, iterations=used)


def mine(problem: SearchProblem, seed: bytes, difficulty: DifficultyParams,
         warm_start: State | None, budget: int, rng: random.Random,
         stop: Callable[[], bool] | None = None) -> ProofOfWork:
    """Mine a proof of work for the subspace implied by ``seed``.

    The search starts from ``warm_start`` (repaired by the problem's
    ``constrain``) when given, else from a random state.  Raises Exhausted
    when the budget runs out and Aborted when ``stop`` fires.
    """
    return mine_detailed(problem, seed, difficulty, warm_start, budget, rng,
                         stop).proof


def validate_pow(problem: SearchProblem, seed: bytes, proof: ProofOfWork,
                 difficulty: DifficultyParams, sample_budget: int,
                 rng: random.Random) -> Counterexample | None:
    """Check a proof of work; None means accept.

    Re-derives S from the seed, re-evaluates the objective, checks the
    subspace restriction, then looks for a neighbor with
    f(neighbor) <= f(candidate).  The whole neighborhood is enumerated when
    it fits within ``sample_budget``; otherwise up to ``sample_budget``
    neighbors are sampled, which makes acceptance probabilistic by design.
    """
    expected = index_select(seed, problem.dimension, difficulty.k)
    if frozenset(proof.index_set) != expected:
        raise IndexSetMismatch("index set does not match the seed")
    theta = problem.decode(proof.theta_star, difficulty)
    if not problem.check_constraint(theta, expected, difficulty):
        raise ConstraintViolation("candidate violates the subspace restriction")
    value = problem.objective(theta)
    if value != proof.objective_value:
        raise ObjectiveMismatch(
            f"claimed {proof.objective_value!r}, re-evaluated {value!r}")

    size = problem.neighborhood_size(theta, expected, difficulty)
    if size is not None and size <= sample_budget:
        for nb in problem.iter_neighbors(theta, expected, difficulty):
            fn = problem.objective(nb)
            if fn <= value:
                return Counterexample(nb, fn)
    else:
        for _ in range(sample_budget):
            nb = problem.sample_neighbor(theta, expected, difficulty, rng)
            fn = problem.objective(nb)
            if fn <= value:
                return Counterexample(nb, fn)
    return None


def verify_counterexample(problem: SearchProblem, proof: ProofOfWork,
                          theta_prime: State,
                          difficulty: DifficultyParams) -> bool:
    """Cheap deterministic check that theta_prime defeats the proof.

    True iff theta_prime is a legal neighbor of the candidate under
    (S, difficulty) and its objective value is <= the claimed one.  Gossip
    recipients can run this without re-sampling.
    """
    try:
        theta = problem.decode(proof.theta_star, difficulty)
    except EncodingError:
        return False
    s = frozenset(proof.index_set)
    if not problem.is_neighbor(theta, theta_prime, s, difficulty):
        return False
    return problem.objective(theta_prime) <= proof.objective_value
