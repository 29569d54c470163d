"""Synthetic paired two-stream data from a shared latent factor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SyntheticPairSet:
    """Matched sample pairs x_v = A_v z + noise, x_t = A_t z + noise'.

    The mixing matrices A_v, A_t and every sample are fixed by the seed,
    so the same seed always reproduces the same set.
    """

    seed: int
    n_pairs: int = 8704
    latent_dim: int = 16
    input_dim: int = 32
    noise: float = 0.05
    xv: np.ndarray = field(init=False)
    xt: np.ndarray = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        scale = 1.0 / np.sqrt(self.latent_dim)
        A_v = rng.standard_normal((self.input_dim, self.latent_dim)) * scale
        A_t = rng.standard_normal((self.input_dim, self.latent_dim)) * scale
        z = rng.standard_normal((self.n_pairs, self.latent_dim))
        self.xv = (z @ A_v.T + self.noise * rng.standard_normal((self.n_pairs, self.input_dim))).astype(np.float32)
        self.xt = (z @ A_t.T + self.noise * rng.standard_normal((self.n_pairs, self.input_dim))).astype(np.float32)

    def rows(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.xv[idx], self.xt[idx]

    def slice(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        return self.xv[start:stop], self.xt[start:stop]

    def batches(self, start: int, n_batches: int, batch_size: int):
        """Sequential non-overlapping batches starting at row `start`."""
        if start + n_batches * batch_size > self.n_pairs:
            raise ValueError(
                f"requested {n_batches}x{batch_size} rows from {start}, "
                f"but the set has only {self.n_pairs} pairs"
            )
        for b in range(n_batches):
            lo = start + b * batch_size
            yield self.xv[lo : lo + batch_size], self.xt[lo : lo + batch_size]
