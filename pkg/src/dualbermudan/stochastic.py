"""Random streams and geometric Brownian motion paths on a refined exercise grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

__all__ = [
    "TimeGrid",
    "GbmModel",
    "RngStream",
    "PathBatch",
    "make_stream",
    "simulate_gbm",
    "simulate_gbm_blocks",
    "EmptyBatchError",
    "PAYOFF_KINDS",
]

PAYOFF_KINDS = ("basket_put", "max_call")
_MASK64 = (1 << 64) - 1


class EmptyBatchError(ValueError):
    """Raised when a simulation is requested for zero paths."""


@dataclass(frozen=True)
class TimeGrid:
    """Equally spaced exercise dates ``T_j = j T / J``, each interval split into ``L`` steps."""

    maturity: float
    exercise_count: int
    substeps: int

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")
        if int(self.exercise_count) != self.exercise_count or self.exercise_count < 1:
            raise ValueError(f"exercise_count must be an integer >= 1, got {self.exercise_count}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be an integer >= 1, got {self.substeps}")

    @classmethod
    def from_step(cls, maturity: float, exercise_count: int, dt: float) -> "TimeGrid":
        """Grid whose fine step does not exceed ``dt``.

        When ``maturity / (exercise_count * dt)`` is not an integer the number of
        substeps is rounded up, so the realised step is slightly smaller than ``dt``.
        """
        ratio = maturity / (exercise_count * dt)
        substeps = max(1, math.ceil(ratio - 1e-9))
        return cls(float(maturity), int(exercise_count), int(substeps))

    @property
    def total_steps(self) -> int:
        return self.exercise_count * self.substeps

    @property
    def dt(self) -> float:
        return self.maturity / self.total_steps

    @property
    def exercise_dt(self) -> float:
        return self.maturity / self.exercise_count

    @property
    def times(self) -> np.ndarray:
        """Fine grid ``0, dt, ..., T`` (length ``N + 1``)."""
        t = np.arange(self.total_steps + 1) * self.dt
        t[-1] = self.maturity
        return t

    @property
    def exercise_times(self) -> np.ndarray:
        t = np.arange(self.exercise_count + 1) * self.exercise_dt
        t[-1] = self.maturity
        return t

    @property
    def exercise_indices(self) -> np.ndarray:
        return np.arange(self.exercise_count + 1) * self.substeps

    def fine_index(self, j: int) -> int:
        if not 0 <= j <= self.exercise_count:
            raise IndexError(f"exercise index {j} outside 0..{self.exercise_count}")
        return j * self.substeps

    def interval_steps(self, i: int) -> slice:
        """Fine increments belonging to ``[T_i, T_{i+1}]``."""
        if not 0 <= i < self.exercise_count:
            raise IndexError(f"interval {i} outside 0..{self.exercise_count - 1}")
        return slice(i * self.substeps, (i + 1) * self.substeps)


@dataclass(frozen=True)
class GbmModel:
    """Independent lognormal assets with common rate, dividend yield and volatility."""

    dimension: int
    rate: float
    dividend: float
    sigma: float
    strike: float
    spot: tuple
    payoff: str = "basket_put"

    def __post_init__(self):
        spot = np.atleast_1d(np.asarray(self.spot, dtype=float))
        if spot.size == 1 and self.dimension > 1:
            spot = np.full(self.dimension, float(spot[0]))
        object.__setattr__(self, "spot", tuple(float(s) for s in spot))
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if len(self.spot) != self.dimension:
            raise ValueError(f"spot has {len(self.spot)} entries, dimension is {self.dimension}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if min(self.spot) <= 0:
            raise ValueError("all spots must be positive")
        if self.payoff not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.payoff!r}; expected one of {PAYOFF_KINDS}")

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.spot, dtype=float)

    def discounted_payoff(self, t, x: np.ndarray) -> np.ndarray:
        """``e^{-rt}`` times the exercise value at states ``x`` (last axis = assets)."""
        x = np.asarray(x, dtype=float)
        if self.payoff == "basket_put":
            intrinsic = np.maximum(self.strike - x.mean(axis=-1), 0.0)
        else:
            intrinsic = np.maximum(x.max(axis=-1) - self.strike, 0.0)
        return np.exp(-self.rate * np.asarray(t, dtype=float)) * intrinsic


@dataclass(frozen=True)
class RngStream:
    """Counter-based Philox stream keyed by ``(seed, stream_id)``.

    ``block`` selects a disjoint region of the 256-bit counter space, so blocks of
    one stream can be generated in any order (or on different workers) and still
    reproduce the same numbers.
    """

    seed: int
    stream_id: int
    block: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id", "block"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _MASK64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {value}")

    @property
    def key(self) -> tuple:
        return (int(self.seed), int(self.stream_id))

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=int(self.seed) | (int(self.stream_id) << 64),
            counter=[0, 0, 0, int(self.block)],
        )
        return np.random.Generator(bitgen)

    def at_block(self, block: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, block)

    def standard_normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)


def make_stream(seed: int, stream_id: int) -> RngStream:
    return RngStream(int(seed), int(stream_id))


@dataclass(frozen=True, eq=False)
class PathBatch:
    """States ``X[path, step, asset]`` with the Brownian increments that drove them."""

    states: np.ndarray
    increments: np.ndarray
    grid: TimeGrid
    stream: RngStream | None = None
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        n, steps, dim = self.increments.shape
        if self.states.shape != (n, steps + 1, dim):
            raise ValueError(
                f"states shape {self.states.shape} inconsistent with increments {self.increments.shape}"
            )
        if steps != self.grid.total_steps:
            raise ValueError(f"batch has {steps} steps, grid expects {self.grid.total_steps}")
        for arr in (self.states, self.increments):
            arr.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dimension(self) -> int:
        return self.states.shape[2]

    def exercise_states(self) -> np.ndarray:
        """States at the exercise dates, shape ``(n, J + 1, D)``."""
        return self.states[:, self.grid.exercise_indices, :]


def simulate_gbm(model: GbmModel, grid: TimeGrid, n_paths: int, stream: RngStream) -> PathBatch:
    """Exact log-Euler simulation ``X_i = X_{i-1} exp((r - delta - sigma^2/2) dt + sigma dW_i)``."""
    if n_paths <= 0:
        raise EmptyBatchError("n_paths must be positive")
    dt = grid.dt
    dim = model.dimension
    dW = stream.standard_normal((n_paths, grid.total_steps, dim))
    dW *= math.sqrt(dt)
    drift = (model.rate - model.dividend - 0.5 * model.sigma**2) * dt
    log_states = np.empty((n_paths, grid.total_steps + 1, dim))
    log_states[:, 0, :] = np.log(model.x0)
    np.cumsum(drift + model.sigma * dW, axis=1, out=log_states[:, 1:, :])
    log_states[:, 1:, :] += log_states[:, :1, :]
    states = np.exp(log_states)
    states[:, 0, :] = model.x0
    return PathBatch(states, dW, grid, stream)


def simulate_gbm_blocks(
    model: GbmModel, grid: TimeGrid, n_paths: int, stream: RngStream, block_size: int = 2000
) -> Iterator[PathBatch]:
    """Yield ``n_paths`` paths in blocks; block ``b`` uses counter region ``b`` of ``stream``.

    Output is bit-stable for a fixed ``block_size`` regardless of consumption order.
    """
    if n_paths <= 0:
        raise EmptyBatchError("n_paths must be positive")
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    for b, start in enumerate(range(0, n_paths, block_size)):
        size = min(block_size, n_paths - start)
        yield simulate_gbm(model, grid, size, stream.at_block(stream.block + b))
