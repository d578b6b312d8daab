"""Planted-signal datasets for checking that training recovers known structure."""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .training import PreferencePair, RegressionExample

MARKER = "qqmarker"


@dataclass
class PlantedRegression:
    vocab: list[str]
    effects: np.ndarray  # (V, m)
    scale: float = 1.5
    noise: float = 0.0

    @classmethod
    def make(cls, m: int = 6, vocab_size: int = 400, seed: int = 0, scale: float = 1.5,
             noise: float = 0.0) -> "PlantedRegression":
        rng = np.random.default_rng(seed)
        vocab = sorted({"".join(rng.choice(list(string.ascii_lowercase), rng.integers(3, 9)))
                        for _ in range(vocab_size * 2)})[:vocab_size]
        return cls(vocab, rng.normal(0.0, 1.0, (len(vocab), m)), scale, noise)

    def sample(self, n: int, seed: int, length: tuple[int, int] = (40, 80)) -> list[RegressionExample]:
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            idx = rng.integers(0, len(self.vocab), rng.integers(*length))
            y = 0.5 + self.scale * self.effects[idx].mean(axis=0)
            if self.noise:
                y = y + rng.normal(0.0, self.noise, y.shape)
            text = " ".join(self.vocab[i] for i in idx)
            out.append(RegressionExample(text, tuple(float(v) for v in np.clip(y, 0.0, 1.0))))
        return out


def planted_pairs(n: int, seed: int, vocab_size: int = 300, length: tuple[int, int] = (20, 40),
                  marker: str = MARKER) -> list[PreferencePair]:
    """Pairs of random texts where only the preferred one contains ``marker``."""
    rng = np.random.default_rng(seed)
    vocab = [f"w{i:03d}{c}" for i, c in zip(range(vocab_size), rng.choice(list(string.ascii_lowercase), vocab_size))]
    out = []
    for i in range(n):
        a = [vocab[j] for j in rng.integers(0, vocab_size, rng.integers(*length))]
        b = [vocab[j] for j in rng.integers(0, vocab_size, rng.integers(*length))]
        a.insert(int(rng.integers(0, len(a) + 1)), marker)
        out.append(PreferencePair(" ".join(a), " ".join(b), f"p{seed}-{i}"))
    return out
