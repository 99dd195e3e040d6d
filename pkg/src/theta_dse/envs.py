"""Evaluation environments: the synthetic distance benchmarks and small helpers.

An environment owns a design space and maps design points to objective metrics
(or an anomaly). Synthetic environments hide an optimum point and pay out the
negated distance to it, which gives a fast, exactly-solvable stand-in for a
simulator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .design_space import DesignSpace, iter_points, uniform_space
from .errors import ConfigurationError

DISTANCE_L1 = "l1"
DISTANCE_HAMMING = "hamming"

BRUTE_FORCE_LIMIT = 10_000_000


@dataclass(frozen=True)
class EvalResult:
    """Either a map of finite objective values or an anomaly reason."""

    objectives: dict[str, float] | None = None
    anomaly: str | None = None

    def __post_init__(self):
        if (self.objectives is None) == (self.anomaly is None):
            raise ConfigurationError("EvalResult needs exactly one of objectives or anomaly")

    @property
    def is_anomaly(self) -> bool:
        return self.anomaly is not None

    @staticmethod
    def success(objectives: dict[str, float]) -> "EvalResult":
        return EvalResult(objectives=dict(objectives))

    @staticmethod
    def rejected(reason: str) -> "EvalResult":
        return EvalResult(anomaly=reason)


class Environment:
    """Contract: a space plus a pure evaluate; batch evaluation defaults to serial."""

    space: DesignSpace

    def evaluate(self, design: Sequence[int]) -> EvalResult:
        raise NotImplementedError

    def evaluate_batch(self, designs: Sequence[Sequence[int]]) -> list[EvalResult]:
        return [self.evaluate(d) for d in designs]

    def close(self) -> None:
        pass

    @property
    def known_optimal_reward(self) -> float | None:
        """Best achievable unit-weight reward, when the environment can declare it."""
        return None


@dataclass(frozen=True)
class SyntheticSpec:
    """A D x d space with a hidden optimum drawn uniformly from ``seed``."""

    dims: int
    choices_per_dim: int
    distance_kind: str = DISTANCE_L1
    seed: int = 0

    def __post_init__(self):
        if self.dims < 1 or self.choices_per_dim < 1:
            raise ConfigurationError("synthetic spec needs dims >= 1 and choices_per_dim >= 1")
        if self.distance_kind not in (DISTANCE_L1, DISTANCE_HAMMING):
            raise ConfigurationError(f"unknown distance kind {self.distance_kind!r}")


class SyntheticEnvironment(Environment):
    """Single objective ``distance_penalty`` = -distance(design, hidden optimum)."""

    OBJECTIVE = "distance_penalty"

    def __init__(self, space: DesignSpace, distance_kind: str, seed: int,
                 optimum: Sequence[int] | None = None):
        if distance_kind not in (DISTANCE_L1, DISTANCE_HAMMING):
            raise ConfigurationError(f"unknown distance kind {distance_kind!r}")
        self.space = space
        self.distance_kind = distance_kind
        self.seed = seed
        if optimum is None:
            rng = np.random.default_rng(seed)
            optimum = tuple(int(rng.integers(0, c)) for c in space.cardinalities)
        self._optimum = np.asarray(space.validate_point(optimum), dtype=np.int64)

    def evaluate(self, design: Sequence[int]) -> EvalResult:
        x = np.asarray(self.space.validate_point(design), dtype=np.int64)
        if self.distance_kind == DISTANCE_L1:
            dist = int(np.abs(x - self._optimum).sum())
        else:
            dist = int((x != self._optimum).sum())
        return EvalResult.success({self.OBJECTIVE: -float(dist)})

    @property
    def known_optimal_reward(self) -> float | None:
        return 0.0

    def peek_hidden_optimum(self) -> tuple[int, ...]:
        """Test-only accessor; exploration code must never call this."""
        return tuple(int(v) for v in self._optimum)


def make_synthetic(spec: SyntheticSpec) -> SyntheticEnvironment:
    space = uniform_space(
        f"synthetic_{spec.dims}x{spec.choices_per_dim}", spec.dims, spec.choices_per_dim
    )
    return SyntheticEnvironment(space, spec.distance_kind, spec.seed)


def synthetic_for_space(space: DesignSpace, distance_kind: str = DISTANCE_L1,
                        seed: int = 0) -> SyntheticEnvironment:
    """Synthetic distance environment over an arbitrary existing space."""
    return SyntheticEnvironment(space, distance_kind, seed)


class CallableEnvironment(Environment):
    """Wrap a plain function ``design -> objectives dict | EvalResult`` (tests, toys)."""

    def __init__(self, space: DesignSpace, fn: Callable[[tuple[int, ...]], dict | EvalResult]):
        self.space = space
        self._fn = fn

    def evaluate(self, design: Sequence[int]) -> EvalResult:
        out = self._fn(tuple(self.space.validate_point(design)))
        if isinstance(out, EvalResult):
            return out
        return EvalResult.success(out)


def scalarize(objectives: dict[str, float], weights: dict[str, float] | None) -> float:
    """Weighted-sum reward over objective metrics; unit weights when none given."""
    if weights is None:
        return float(sum(objectives.values()))
    total = 0.0
    for name, w in weights.items():
        if name not in objectives:
            raise KeyError(name)
        total += w * objectives[name]
    return float(total)


def brute_force_optimum(
    env: Environment, weights: dict[str, float] | None = None
) -> tuple[tuple[int, ...], float]:
    """Exhaustive argmax of the scalarized reward; lexicographically smallest tie-break.

    Only for test-scale spaces; refuses anything above BRUTE_FORCE_LIMIT points.
    """
    size = env.space.space_size()
    if size > BRUTE_FORCE_LIMIT:
        raise ConfigurationError(
            f"space has {size} points, refusing brute force above {BRUTE_FORCE_LIMIT}"
        )
    best_point: tuple[int, ...] | None = None
    best_reward = -np.inf
    for point in iter_points(env.space):
        result = env.evaluate(point)
        if result.is_anomaly:
            continue
        reward = scalarize(result.objectives, weights)
        if reward > best_reward:
            best_reward = reward
            best_point = point
    if best_point is None:
        raise ConfigurationError("every point in the space evaluated as anomalous")
    return best_point, float(best_reward)
