"""Seeded synthetic configurable systems with known structure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import BINARY, Option, OptionSchema, PerformanceDataset


def binary_schema(n: int, prefix: str = "o") -> OptionSchema:
    return OptionSchema(tuple(Option(f"{prefix}{j}", BINARY, (0.0, 1.0)) for j in range(n)))


@dataclass(frozen=True)
class SyntheticSystem:
    n_options: int
    mean_fn: Callable[[np.ndarray], np.ndarray]
    noise_fn: Callable[[np.ndarray], np.ndarray]

    @property
    def schema(self) -> OptionSchema:
        return binary_schema(self.n_options)

    def sample(self, n: int, rng) -> PerformanceDataset:
        """``n`` uniformly random configurations with one noisy measurement each."""
        x = rng.integers(0, 2, size=(n, self.n_options)).astype(float)
        return self.measure(x, rng)

    def measure(self, x, rng) -> PerformanceDataset:
        x = np.asarray(x, dtype=float)
        y = self.mean_fn(x) + self.noise_fn(x) * rng.standard_normal(x.shape[0])
        return PerformanceDataset(self.schema, x, y)


def pairwise_system() -> SyntheticSystem:
    """10 binary options; three terms, two of them 2-way interactions; noise grows with o0 and o5."""
    return SyntheticSystem(
        10,
        lambda x: 40.0 + 15.0 * x[:, 0] + 12.0 * x[:, 1] * x[:, 2] + 9.0 * x[:, 3] * x[:, 4],
        lambda x: 0.5 + 2.0 * x[:, 0] + 1.5 * x[:, 5],
    )


def threeway_system() -> SyntheticSystem:
    """10 binary options dominated by three 3-way interactions over a small base cost."""
    return SyntheticSystem(
        10,
        lambda x: (5.0 + 40.0 * x[:, 0] * x[:, 1] * x[:, 2] + 30.0 * x[:, 3] * x[:, 4] * x[:, 5]
                   + 20.0 * x[:, 6] * x[:, 7] * x[:, 8] + 2.0 * x[:, 9]),
        lambda x: 0.2 + 0.0 * x[:, 0],
    )
