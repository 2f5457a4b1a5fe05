"""Continuous-objective adapter: canonical decimals, delta windows, descent.

Candidates are vectors of floats whose wire form is a comma-joined list of
canonical decimal strings rounded to the difficulty's significant-figure
count, so consensus never depends on binary float formatting.  The
neighborhood of a candidate is an axis-aligned box of half-width delta over
the coordinates in S, with the remaining coordinates frozen.
"""

from __future__ import annotations

import math
import random
import re
from decimal import Context, Decimal, ROUND_CEILING, ROUND_FLOOR, ROUND_HALF_UP

from . import engine

Theta = tuple[float, ...]

DEMO_BOUNDS = (0.0, 2.0 * math.pi)

# optional sign, digits, optional fraction, optional e<int>; lowercase e,
# no leading + anywhere
CANONICAL_RE = re.compile(r"-?(?:0|[1-9][0-9]*)(?:\.[0-9]+)?(?:e-?[0-9]+)?\Z")

_PROPOSAL_DECADES = 13.0


def f_demo(x: float) -> float:
    """Ripple demo objective sin(x) + 0.1 sin(20 x) on [0, 2 pi]."""
    return math.sin(x) + 0.1 * math.sin(20.0 * x)


def _round_decimal(x: float, k: int) -> Decimal:
    if k < 1:
        raise ValueError("significant figures must be >= 1")
    value = float(x)
    if not math.isfinite(value):
        raise ValueError("cannot round a non-finite value")
    if value == 0.0:
        return Decimal(0)
    ctx = Context(prec=k, rounding=ROUND_HALF_UP)  # ties go away from zero
    return ctx.plus(Decimal(repr(value)))


def sig_fig_round(x: float, k: int) -> float:
    """Round to k significant figures, half away from zero."""
    return float(_round_decimal(x, k))


def canonical_str(x: float, k: int) -> str:
    """Canonical decimal rendering of x at k significant figures.

    Scientific form is used when the leading digit sits at |power| >= 4 or
    when a plain integer rendering would need padding zeros beyond the
    significant digits (e.g. 3215.43 at k=2 renders as "3.2e3").
    """
    d = _round_decimal(x, k)
    if d == 0:
        return "0"
    # normalize so the rendering depends on the value alone (a trailing
    # zero kept by the rounding context must not leak into the string)
    sign, digits, exponent = d.normalize().as_tuple()
    digs = "".join(map(str, digits))
    adjusted = exponent + len(digs) - 1
    prefix = "-" if sign else ""
    if exponent > 0 or adjusted >= 4 or adjusted <= -4:
        mantissa = digs[0] + ("." + digs[1:] if len(digs) > 1 else "")
        return f"{prefix}{mantissa}e{adjusted}"
    if exponent == 0:
        return prefix + digs
    point = len(digs) + exponent
    if point > 0:
        return prefix + digs[:point] + "." + digs[point:]
    return prefix + "0." + "0" * (-point) + digs


def parse_canonical(token: str) -> float:
    if not CANONICAL_RE.fullmatch(token):
        raise engine.EncodingError(f"not a canonical decimal: {token!r}")
    return float(token)


def delta_rule(k: int, n: int, theta_i: float,
               delta_min: float = 1e-6) -> float:
    """Per-coordinate window half-width (k/n) * |theta_i|.

    Falls back to the absolute floor ``delta_min`` when the coordinate is
    exactly zero, where the relative rule degenerates.
    """
    if n < 1 or k < 1:
        raise ValueError("need n >= 1 and k >= 1")
    if theta_i == 0.0:
        return delta_min
    return (k / n) * abs(theta_i)


def _as_delta_list(delta, size: int) -> list[float]:
    if isinstance(delta, (int, float)):
        deltas = [float(delta)] * size
    else:
        deltas = [float(d) for d in delta]
        if len(deltas) != size:
            raise ValueError("delta sequence length must match dimension")
    if any(d <= 0 for d in deltas):
        raise ValueError("delta must be positive")
    return deltas


def blm_check_continuous(f, theta_star, s, delta, samples: int,
                         rng: random.Random,
                         bounds=None) -> engine.Counterexample | None:
    """Sampling check of the bounded-local-minimum property; None accepts.

    Draws up to ``samples`` points uniformly in the delta box over the
    coordinates in ``s`` (others frozen at theta_star, samples clamped to
    ``bounds`` when given) and returns a counterexample on the first point
    with f(point) <= f(theta_star).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    theta_star = tuple(float(v) for v in theta_star)
    s = sorted(set(s))
    deltas = _as_delta_list(delta, len(s))
    base = f(theta_star)
    for _ in range(samples):
        point = list(theta_star)
        for d, i in zip(deltas, s):
            value = rng.uniform(theta_star[i] - d, theta_star[i] + d)
            if bounds is not None:
                lo, hi = bounds[i]
                value = min(max(value, lo), hi)
            point[i] = value
        point = tuple(point)
        if point == theta_star:
            continue
        fp = f(point)
        if fp <= base:
            return engine.Counterexample(point, fp)
    return None


class ContinuousProblem(engine.SearchProblem):
    """Search-problem adapter over a box-bounded objective.

    ``func`` takes the full coordinate tuple.  The neighborhood window per
    coordinate is the difficulty's fixed ``delta`` when set, otherwise the
    (k/N)|theta_i| rule with the ``delta_min`` floor.
    """

    def __init__(self, name: str, func, bounds):
        self.name = name
        self.func = func
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError("each bound must satisfy lo < hi")
        self.dimension = len(self.bounds)

    def _delta(self, difficulty: engine.DifficultyParams, value: float) -> float:
        if difficulty.delta is not None:
            return difficulty.delta
        return delta_rule(difficulty.k, self.dimension, value,
                          difficulty.delta_min)

    def objective(self, theta: Theta) -> float:
        return self.func(theta)

    def random_state(self, rng: random.Random) -> Theta:
        return tuple(rng.uniform(lo, hi) for lo, hi in self.bounds)

    def constrain(self, theta: Theta, s: engine.IndexSet) -> Theta:
        # the subspace restriction constrains neighborhoods, not the point
        # itself; repairing a state only means clamping it into the box
        return tuple(min(max(float(v), lo), hi)
                     for v, (lo, hi) in zip(theta, self.bounds))

    def check_constraint(self, theta: Theta, s: engine.IndexSet,
                         difficulty: engine.DifficultyParams) -> bool:
        if len(theta) != self.dimension:
            return False
        return all(lo <= v <= hi
                   for v, (lo, hi) in zip(theta, self.bounds))

    def neighborhood_size(self, theta, s, difficulty) -> int | None:
        return None

    def iter_neighbors(self, theta, s, difficulty):
        raise NotImplementedError("continuous neighborhoods are not enumerable")

    def sample_neighbor(self, theta: Theta, s: engine.IndexSet,
                        difficulty: engine.DifficultyParams,
                        rng: random.Random) -> Theta:
        for _ in range(16):
            point = list(theta)
            for i in s:
                d = self._delta(difficulty, theta[i])
                lo, hi = self.bounds[i]
                point[i] = min(max(rng.uniform(theta[i] - d, theta[i] + d),
                                   lo), hi)
            point = tuple(point)
            if point != theta:
                return point
        return tuple(point)

    def sample_proposal(self, theta: Theta, s: engine.IndexSet,
                        difficulty: engine.DifficultyParams,
                        rng: random.Random) -> Theta:
        # half the steps span the whole window (the distribution validators
        # sample from), half shrink log-uniformly so descent can sharpen a
        # candidate far below the validators' sampling resolution
        point = list(theta)
        for i in s:
            d = self._delta(difficulty, theta[i])
            if rng.random() < 0.5:
                scale = d
            else:
                scale = d * 10.0 ** (-_PROPOSAL_DECADES * rng.random())
            lo, hi = self.bounds[i]
            point[i] = min(max(theta[i] + scale * (2.0 * rng.random() - 1.0),
                               lo), hi)
        return tuple(point)

    def is_neighbor(self, theta: Theta, candidate, s: engine.IndexSet,
                    difficulty: engine.DifficultyParams) -> bool:
        candidate = tuple(float(v) for v in candidate)
        if len(candidate) != self.dimension or candidate == tuple(theta):
            return False
        if not self.check_constraint(candidate, s, difficulty):
            return False
        for i in range(self.dimension):
            if i in s:
                if abs(candidate[i] - theta[i]) >= self._delta(difficulty,
                                                               theta[i]):
                    return False
            elif candidate[i] != theta[i]:
                return False
        return True

    def random_restart(self, anchor: Theta, s: engine.IndexSet,
                       rng: random.Random) -> Theta:
        # keep the frozen coordinates of the anchor bit-identical
        point = list(anchor)
        for i in s:
            lo, hi = self.bounds[i]
            point[i] = rng.uniform(lo, hi)
        return tuple(point)

    def finalize(self, theta: Theta, s: engine.IndexSet,
                 difficulty: engine.DifficultyParams) -> Theta:
        sig = difficulty.effective_sig_figs
        out = []
        for v, (lo, hi) in zip(theta, self.bounds):
            v = min(max(float(v), lo), hi)
            r = float(_round_decimal(v, sig)) if v != 0.0 else 0.0
            # rounding near a bound may leave the box; round the bound inward
            if r > hi:
                r = float(Context(prec=sig, rounding=ROUND_FLOOR)
                          .plus(Decimal(repr(hi))))
            elif r < lo:
                r = float(Context(prec=sig, rounding=ROUND_CEILING)
                          .plus(Decimal(repr(lo))))
            out.append(r)
        return tuple(out)

    def encode(self, theta: Theta,
               difficulty: engine.DifficultyParams) -> bytes:
        sig = difficulty.effective_sig_figs
        return ",".join(canonical_str(v, sig) for v in theta).encode("utf-8")

    def decode(self, data: bytes,
               difficulty: engine.DifficultyParams) -> Theta:
        sig = difficulty.effective_sig_figs
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise engine.EncodingError(str(exc)) from exc
        tokens = text.split(",")
        if len(tokens) != self.dimension:
            raise engine.EncodingError(
                f"expected {self.dimension} coordinates, got {len(tokens)}")
        values = []
        for token in tokens:
            value = parse_canonical(token)
            if canonical_str(value, sig) != token:
                raise engine.EncodingError(
                    f"coordinate {token!r} is not in canonical form")
            values.append(value)
        return tuple(values)


def coordinate_descent(f, theta0, s, difficulty: engine.DifficultyParams,
                       budget: int, rng: random.Random,
                       bounds=None) -> Theta:
    """Randomized descent over the coordinates in ``s`` only.

    theta0 is canonicalized first, so the frozen coordinates of every state
    visited (and of the result) stay bit-identical to theta0's canonical
    form.  Restart-on-stagnation re-randomizes only the coordinates in
    ``s``.  The result is canonical and satisfies f(result) <= f(theta0').
    """
    theta0 = tuple(float(v) for v in theta0)
    if bounds is None:
        bounds = tuple((-1e9, 1e9) for _ in theta0)
    problem = ContinuousProblem("adhoc", f, bounds)
    s = frozenset(s)
    if not s:
        raise ValueError("s must contain at least one coordinate")
    start = problem.finalize(problem.constrain(theta0, s), s, difficulty)
    state, _, _ = engine.descend(problem, s, start, difficulty, budget, rng)
    return problem.finalize(state, s, difficulty)


def demo_problem() -> ContinuousProblem:
    """The one-dimensional ripple demo on [0, 2 pi]."""
    return ContinuousProblem("demo", lambda th: f_demo(th[0]), (DEMO_BOUNDS,))


def quadratic_problem(dimension: int) -> ContinuousProblem:
    return ContinuousProblem(f"quadratic{dimension}",
                             lambda th: sum(v * v for v in th),
                             ((-10.0, 10.0),) * dimension)


def continuous_problem(name: str) -> ContinuousProblem:
    """Resolve a registered continuous problem by name.

    Names: ``demo`` or ``quadratic:<dimension>``.
    """
    if name == "demo":
        return demo_problem()
    if name.startswith("quadratic:"):
        return quadratic_problem(int(name.split(":", 1)[1]))
    raise ValueError(f"unknown continuous problem {name!r}")
