"""Data laws, degradations and analytic scores.

Under a Gaussian kernel x_t | x_0 ~ N(mu + (x_0 - mu) a_t, v_t I) the score of
the kernel is -(x_t - mean_t) / v_t, and a Gaussian mixture data law stays a
Gaussian mixture at every t, so its marginal score is exact as well.
"""

import logging
import math
from dataclasses import dataclass

import torch
from scipy import stats

from .errors import DomainError, SingularScheduleError
from .forward import kernel_coefficients
from .utils import DTYPE, as_vector

log = logging.getLogger("d3gm")


class DataKind:
    POINT_MASS = "point-mass"
    GAUSSIAN = "gaussian"
    MIXTURE = "gaussian-mixture"

    ALL = (POINT_MASS, GAUSSIAN, MIXTURE)


@dataclass(frozen=True, eq=False)
class DegradationSpec:
    """y = A x + n with n ~ N(0, noise_sigma^2 I); lifted back to d dimensions by A^T."""

    A: torch.Tensor
    noise_sigma: float = 0.0

    def __post_init__(self):
        A = torch.as_tensor(self.A, dtype=DTYPE)
        if A.ndim != 2:
            raise DomainError(f"A must be a matrix, got shape {tuple(A.shape)}")
        if not self.noise_sigma >= 0:
            raise DomainError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))

    @classmethod
    def identity(cls, d, noise_sigma=0.0):
        return cls(torch.eye(d, dtype=DTYPE), noise_sigma)

    @classmethod
    def subsample(cls, d, factor=2, noise_sigma=0.0):
        rows = list(range(0, d, factor))
        A = torch.zeros(len(rows), d, dtype=DTYPE)
        A[torch.arange(len(rows)), torch.tensor(rows)] = 1.0
        return cls(A, noise_sigma)

    @property
    def d(self):
        return self.A.shape[1]

    def measure(self, x, rng):
        x = torch.as_tensor(x, dtype=DTYPE)
        y = x @ self.A.T
        if self.noise_sigma > 0:
            y = y + self.noise_sigma * torch.randn(y.shape, generator=rng, dtype=DTYPE)
        return y

    def lift(self, y):
        return torch.as_tensor(y, dtype=DTYPE) @ self.A


@dataclass(frozen=True, eq=False)
class DataSpec:
    kind: str
    components: tuple
    degradation: DegradationSpec = None

    def __post_init__(self):
        if self.kind not in DataKind.ALL:
            raise DomainError(f"Unknown data kind {self.kind!r}, expected one of: {', '.join(DataKind.ALL)}")
        comps = []
        for w, m, s in self.components:
            if not w > 0 or not s >= 0:
                raise DomainError(f"component weight must be > 0 and std >= 0, got ({w}, {s})")
            comps.append((float(w), as_vector(m), float(s)))
        if not comps:
            raise DomainError("data law needs at least one component")
        total = sum(w for w, _, _ in comps)
        if abs(total - 1) > 1e-9:
            raise DomainError(f"component weights sum to {total}, expected 1")
        dims = {m.shape[0] for _, m, _ in comps}
        if len(dims) != 1:
            raise DomainError(f"component means disagree on dimension: {sorted(dims)}")
        if self.kind == DataKind.POINT_MASS and (len(comps) != 1 or comps[0][2] != 0):
            raise DomainError("a point mass is a single component with std 0")
        if self.kind == DataKind.GAUSSIAN and len(comps) != 1:
            raise DomainError("a gaussian data law has exactly one component")
        object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def point_mass(cls, x0, degradation=None):
        return cls(DataKind.POINT_MASS, ((1.0, x0, 0.0),), degradation)

    @classmethod
    def gaussian(cls, mean, std, degradation=None):
        return cls(DataKind.GAUSSIAN, ((1.0, mean, std),), degradation)

    @classmethod
    def mixture(cls, components, degradation=None):
        return cls(DataKind.MIXTURE, tuple(components), degradation)

    @property
    def d(self):
        return self.components[0][1].shape[0]

    @property
    def weights(self):
        return torch.tensor([w for w, _, _ in self.components], dtype=DTYPE)

    @property
    def means(self):
        return torch.stack([m for _, m, _ in self.components])

    @property
    def stds(self):
        return torch.tensor([s for _, _, s in self.components], dtype=DTYPE)

    def sample(self, n, rng):
        idx = torch.multinomial(self.weights, n, replacement=True, generator=rng)
        z = torch.randn((n, self.d), generator=rng, dtype=DTYPE)
        return self.means[idx] + self.stds[idx].unsqueeze(1) * z

    def draw(self, n, rng):
        """(x0, lifted measurement or None) for n samples."""
        x0 = self.sample(n, rng)
        if self.degradation is None:
            return x0, None
        return x0, self.degradation.lift(self.degradation.measure(x0, rng))


def _broadcast_time(t):
    tt = torch.as_tensor(t, dtype=DTYPE)
    return tt.reshape(-1, 1) if tt.ndim else tt


def kernel_score(x_t, x0, a, v, mu):
    """-(x_t - (mu + (x0 - mu) a)) / v, broadcasting over batches."""
    if torch.as_tensor(v).le(0).any():
        raise SingularScheduleError("kernel variance vanishes; the score is singular at t=0")
    return -(x_t - (mu + (x0 - mu) * a)) / v


def true_score_kernel(x_t, x0, t, params, sched, mu=None):
    if (torch.as_tensor(t) <= 0).any():
        raise SingularScheduleError("the kernel score is singular at t=0")
    x_t = torch.as_tensor(x_t, dtype=DTYPE)
    x0 = torch.as_tensor(x0, dtype=DTYPE)
    a, v = kernel_coefficients(_broadcast_time(t), params, sched)
    return kernel_score(x_t, x0, a, v, params.mu if mu is None else mu)


def _as_column(value, x_t):
    if isinstance(value, torch.Tensor) and value.ndim and x_t.ndim > 1:
        return value.reshape(-1, 1)
    return value


def mixture_log_density(x_t, data, a, v, mu):
    x_t = torch.as_tensor(x_t, dtype=DTYPE)
    mu = torch.as_tensor(mu, dtype=DTYPE)
    a, v = _as_column(a, x_t), _as_column(v, x_t)
    means = mu.unsqueeze(-2) + (data.means - mu.unsqueeze(-2)) * _k(a)
    var = v + data.stds**2 * a**2
    d = data.d
    diff = x_t.unsqueeze(-2) - means
    logp = torch.log(data.weights) - 0.5 * d * torch.log(2 * math.pi * var) - (diff**2).sum(-1) / (2 * var)
    return torch.logsumexp(logp, dim=-1)


def _k(a):
    """Reshape a per-sample coefficient to broadcast against (n, K, d)."""
    if isinstance(a, torch.Tensor) and a.ndim:
        return a.unsqueeze(-1)
    return a


def mixture_score(x_t, data, a, v, mu):
    """Exact marginal score of a Gaussian mixture pushed through the kernel (a, v, mu)."""
    x_t = torch.as_tensor(x_t, dtype=DTYPE)
    mu = torch.as_tensor(mu, dtype=DTYPE)
    a, v = _as_column(a, x_t), _as_column(v, x_t)
    means = mu.unsqueeze(-2) + (data.means - mu.unsqueeze(-2)) * _k(a)
    var = v + data.stds**2 * a**2
    if (var <= 0).any():
        raise SingularScheduleError("mixture component variance vanishes; the score is singular")
    diff = x_t.unsqueeze(-2) - means
    logp = torch.log(data.weights) - 0.5 * data.d * torch.log(var) - (diff**2).sum(-1) / (2 * var)
    resp = torch.softmax(logp, dim=-1)
    return -(resp.unsqueeze(-1) * diff / var.unsqueeze(-1)).sum(dim=-2)


def true_score_mixture(x_t, data, y, t, params, sched):
    """Marginal score for gaussian or mixture data; mu is the lifted measurement y when given."""
    if data.kind == DataKind.POINT_MASS:
        raise DomainError("use true_score_kernel for point-mass data")
    if (torch.as_tensor(t) <= 0).any():
        raise SingularScheduleError("the mixture score is singular at t=0")
    x_t = torch.as_tensor(x_t, dtype=DTYPE)
    a, v = kernel_coefficients(torch.as_tensor(t, dtype=DTYPE), params, sched)
    mu = params.mu if y is None else torch.as_tensor(y, dtype=DTYPE)
    return mixture_score(x_t, data, a, v, mu)


def default_score_bound(variance, d, prob=0.999):
    """Largest kernel-score norm on the ball holding `prob` of N(m, variance I)."""
    if not variance > 0:
        raise DomainError(f"score bound needs a positive variance, got {variance}")
    return math.sqrt(stats.chi2.ppf(prob, d) / variance)
