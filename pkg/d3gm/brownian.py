"""Seeded Wiener increments.

Each path owns an independent stream derived from (seed, tag, path_index) with
numpy's SeedSequence, so an increment is a pure function of
(seed, path_index, step, coordinate) no matter how paths are batched or which
thread draws them. Paths carry 2x headroom past the horizon so the base flow
(time shift) can be applied without running out of noise.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from .errors import AlignmentError, DomainError, HorizonError
from .utils import DTYPE

log = logging.getLogger("d3gm")

STREAM_TAGS = {
    "forward": 0,
    "reverse": 1,
    "past": 2,
    "marginal": 3,
    "init": 4,
    "train": 5,
    "data": 6,
}

HEADROOM = 2


def stream_seed(seed, tag, index=0):
    try:
        key = STREAM_TAGS[tag]
    except KeyError:
        raise DomainError(f"Unknown random stream {tag!r}") from None
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(key, int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def generator(seed, tag, index=0):
    g = torch.Generator(device="cpu")
    g.manual_seed(stream_seed(seed, tag, index))
    return g


def draw_increments(seed, tag, index, n_total, d, dt):
    g = generator(seed, tag, index)
    return torch.randn((n_total, d), generator=g, dtype=DTYPE) * math.sqrt(dt)


def increment_block(seed, tag, indices, n_steps, dt, d, headroom=HEADROOM):
    """Increments for several paths, shaped (n_steps, len(indices), d).

    Every path draws its full headroom length so its first n_steps agree with
    the ones a stand-alone BrownianPath would hold.
    """
    n_total = n_steps * headroom
    cols = [draw_increments(seed, tag, i, n_total, d, dt)[:n_steps] for i in indices]
    return torch.stack(cols, dim=1)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    seed: int
    path_index: int
    n_steps: int
    dt: float
    increments: torch.Tensor
    offset: int = 0
    tag: str = "forward"

    @property
    def d(self):
        return self.increments.shape[1]

    @property
    def available(self):
        return self.increments.shape[0] - self.offset

    def window(self, start, count):
        if start < 0 or count < 0:
            raise DomainError(f"negative window ({start}, {count})")
        if start + count > self.available:
            raise HorizonError(
                f"window of {count} steps at {start} exceeds the {self.available} steps left after shift {self.offset}"
            )
        a = self.offset + start
        return self.increments[a : a + count]

    def step_of(self, t):
        steps = t / self.dt
        k = round(steps)
        if abs(steps - k) > 1e-9 * max(1.0, abs(steps)):
            raise AlignmentError(f"time {t} is not on the grid of spacing {self.dt}")
        return k

    def cumulative(self, count=None):
        """W at grid times 0, dt, ..., count*dt (count defaults to n_steps)."""
        count = self.n_steps if count is None else count
        inc = self.window(0, count)
        return torch.cat([torch.zeros(1, self.d, dtype=DTYPE), inc.cumsum(dim=0)])

    def shifted(self, s):
        return base_shift(self, s)


def brownian_path(seed, path_index, n_steps, dt, d, tag="forward", headroom=HEADROOM):
    if n_steps < 1 or dt <= 0:
        raise DomainError(f"need n_steps >= 1 and dt > 0, got {n_steps}, {dt}")
    inc = draw_increments(seed, tag, path_index, n_steps * headroom, d, dt)
    return BrownianPath(int(seed), int(path_index), int(n_steps), float(dt), inc, 0, tag)


def base_shift(omega, s):
    """The base flow: increments of W(t + s) - W(s) on the same grid."""
    if s < 0:
        raise DomainError(f"base shift needs s >= 0, got {s}")
    k = omega.step_of(s)
    if k + omega.n_steps > omega.available:
        raise HorizonError(
            f"shift by {s} leaves {omega.available - k} steps, fewer than the horizon of {omega.n_steps}"
        )
    return replace(omega, offset=omega.offset + k)
