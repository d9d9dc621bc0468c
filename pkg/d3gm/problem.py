"""Toy 1d restoration problem: piecewise-smooth signals, y = A x + n."""

import logging
import math
from dataclasses import dataclass

import torch

from .brownian import generator
from .reverse import sample
from .score import DegradationSpec
from .utils import DTYPE

log = logging.getLogger("d3gm")


@dataclass(frozen=True, eq=False)
class ToyInverseProblem:
    d: int = 16
    degradation: DegradationSpec = None
    train_seed: int = 1
    test_seed: int = 2

    def __post_init__(self):
        if self.degradation is None:
            object.__setattr__(self, "degradation", DegradationSpec.subsample(self.d, 2, 0.05))

    @classmethod
    def subsampled(cls, d=16, factor=2, noise_sigma=0.05, train_seed=1, test_seed=2):
        return cls(d, DegradationSpec.subsample(d, factor, noise_sigma), train_seed, test_seed)

    def signals(self, n, rng):
        """A sinusoid plus one jump per signal."""
        u = torch.rand((n, 5), generator=rng, dtype=DTYPE)
        amp = 0.3 + 0.7 * u[:, 0:1]
        freq = 1.0 + torch.floor(2 * u[:, 1:2])
        phase = 2 * math.pi * u[:, 2:3]
        jump_at = torch.floor(self.d / 4 + u[:, 3:4] * (self.d / 2))
        jump = 2 * u[:, 4:5] - 1
        i = torch.arange(self.d, dtype=DTYPE).unsqueeze(0)
        return amp * torch.sin(2 * math.pi * freq * i / self.d + phase) + jump * (i >= jump_at)

    def draw(self, n, rng):
        x = self.signals(n, rng)
        return x, self.degradation.lift(self.degradation.measure(x, rng))

    def test_set(self, n):
        return self.draw(n, generator(self.test_seed, "data", 0))


def mse(x, ref):
    return ((torch.as_tensor(x) - torch.as_tensor(ref)) ** 2).mean(dim=-1)


def restore(variant, score_fn, y_lift, n_samples=8, n_steps=100, seed=42, t_min=1e-3):
    """Average of n_samples reverse runs per measurement, each started around its own lift."""
    n = y_lift.shape[0]
    mu = y_lift.repeat_interleave(n_samples, dim=0)
    run = sample(variant, score_fn, n_steps, "from-stationary", seed, n * n_samples, mu=mu, y=mu, t_min=t_min)
    return run.terminal.reshape(n, n_samples, -1).mean(dim=1)
