"""Seeded two-class Gaussian data for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Dataset

# informative axes get geometrically decaying shares of the class offset
# and of the extra malicious spread, so their importance order is stable
SHIFT_DECAY = 0.6
# malicious spread on the strongest axis grows with separation
SPREAD_PER_SEPARATION = 0.25


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n_rows: int = 10000
    n_features: int = 20
    n_informative: int = 6
    class_balance: float = 0.5
    class_separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 10:
            raise SyntheticConfigError("n_rows must be >= 10")
        if not 1 <= self.n_informative <= self.n_features:
            raise SyntheticConfigError("need 1 <= n_informative <= n_features")
        if not 0.0 < self.class_balance < 1.0:
            raise SyntheticConfigError("class_balance must lie in (0, 1)")
        if self.class_separation < 0:
            raise SyntheticConfigError("class_separation must be non-negative")


def _profile(config: SyntheticConfig) -> np.ndarray:
    return SHIFT_DECAY ** np.arange(config.n_informative)


def class_offset(config: SyntheticConfig) -> np.ndarray:
    """Malicious-minus-benign mean, with Euclidean norm ``class_separation``."""
    shift = np.zeros(config.n_features)
    profile = _profile(config)
    shift[: config.n_informative] = config.class_separation * profile / np.linalg.norm(profile)
    return shift


def malicious_scale(config: SyntheticConfig) -> np.ndarray:
    """Per-axis standard deviation of malicious rows."""
    scale = np.ones(config.n_features)
    scale[: config.n_informative] += (
        SPREAD_PER_SEPARATION * config.class_separation * _profile(config))
    return scale


def informative_indices(config: SyntheticConfig) -> list[int]:
    return list(range(config.n_informative))


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Benign rows are standard normal. Malicious rows are offset by
    :func:`class_offset` and scaled per axis by :func:`malicious_scale`.
    The remaining axes are pure noise.

    ``class_balance`` is the malicious fraction; columns ``x00, x01, ...`` put
    the informative axes first.
    """
    rng = np.random.default_rng(config.seed)
    n_mal = min(max(int(round(config.class_balance * config.n_rows)), 1), config.n_rows - 1)
    n_ben = config.n_rows - n_mal
    d = config.n_features
    benign = rng.standard_normal((n_ben, d))
    malicious = rng.standard_normal((n_mal, d))
    malicious *= malicious_scale(config)
    malicious += class_offset(config)
    X = np.vstack([benign, malicious])
    y = np.concatenate([np.zeros(n_ben, np.int8), np.ones(n_mal, np.int8)])
    order = rng.permutation(config.n_rows)
    width = max(2, len(str(d - 1)))
    names = [f"x{j:0{width}d}" for j in range(d)]
    return Dataset(X[order], y[order], names, np.arange(config.n_rows))
