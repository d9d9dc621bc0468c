"""Forward dynamics of the compared diffusion variants.

Every variant is written as dx = theta_t (target - x) dt + g_t dW:

    d3gm            coupled sigma, tau >= 1, target mu
    ou              coupled sigma, tau = 1, target mu
    coef-decoupled  sigma chosen freely, target mu
    sgm-vp          theta = beta_t / 2, g = sqrt(beta_t), target 0

so they share one integrator, one kernel form
x_t | x_0 ~ N(target + (x_0 - target) a_t, v_t I) and one reverse sampler.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import torch

from .errors import DomainError
from .forward import GaussianMarginal, kernel_coefficients, linear_kernel_variance
from .schedules import CoupledVolatility, DecoupledVolatility, sigma_at, stationary_ratio, theta_at, theta_bar
from .utils import DTYPE

log = logging.getLogger("d3gm")

KINDS = ("d3gm", "ou", "coef-decoupled", "sgm-vp")


@dataclass(frozen=True, eq=False)
class VariantSpec:
    kind: str
    params: object
    sched: object
    volatility: object = None
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"Unknown variant {self.kind!r}, expected one of: {', '.join(KINDS)}")
        if self.volatility is None:
            object.__setattr__(self, "volatility", self.params.volatility)
        coupled = isinstance(self.volatility, CoupledVolatility)
        if self.kind in ("d3gm", "ou") and not coupled:
            raise DomainError(f"{self.kind} needs coupled volatility")
        if self.kind in ("d3gm", "ou") and self.volatility.lam != self.params.lam:
            raise DomainError(f"volatility lambda {self.volatility.lam} differs from process lambda {self.params.lam}")
        if self.kind == "ou" and self.params.tau != 1:
            raise DomainError(f"the ou variant has tau = 1, got {self.params.tau}")
        if self.kind == "coef-decoupled" and not isinstance(self.volatility, DecoupledVolatility):
            raise DomainError("coef-decoupled needs a decoupled volatility")
        if self.kind == "sgm-vp" and not 0 < self.beta_min <= self.beta_max:
            raise DomainError(f"need 0 < beta_min <= beta_max, got {self.beta_min}, {self.beta_max}")

    @classmethod
    def create(cls, kind, params, sched, sigma=None, **kwargs):
        """Builds a variant, forcing tau = 1 for ou and a decoupled sigma for coef-decoupled."""
        if kind == "ou":
            params = params.with_(tau=1.0)
        volatility = None
        if kind == "coef-decoupled":
            volatility = DecoupledVolatility(params.lam if sigma is None else sigma)
        return cls(kind, params, sched, volatility, **kwargs)

    @property
    def d(self):
        return self.params.d

    @property
    def t_end(self):
        return self.sched.t_end

    def beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * t / self.t_end

    def beta_integral(self, t):
        return self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2 * self.t_end)

    def target(self, mu=None):
        mu = self.params.mu if mu is None else mu
        if self.kind == "sgm-vp":
            return torch.zeros_like(torch.as_tensor(mu, dtype=DTYPE))
        return mu

    def coefficients(self, t):
        """(theta_t, g_t) at a float time."""
        if self.kind == "sgm-vp":
            b = self.beta(t)
            return b / 2, math.sqrt(b)
        return theta_at(self.sched, t), self.params.tau * sigma_at(self.volatility, self.sched, t)

    def coefficient_grid(self, times):
        pairs = [self.coefficients(float(t)) for t in times]
        return torch.tensor([p[0] for p in pairs], dtype=DTYPE), torch.tensor([p[1] for p in pairs], dtype=DTYPE)

    def kernel(self, t):
        return _kernel(self, float(t))

    def stationary(self, mu=None):
        """Law the reverse run starts from with the from-stationary init."""
        target = self.target(mu)
        if self.kind == "sgm-vp":
            return GaussianMarginal(target, 1.0)
        if self.kind == "coef-decoupled":
            return GaussianMarginal(target, self.params.tau**2 * stationary_ratio(self.volatility, self.sched, self.t_end))
        return GaussianMarginal(target, self.params.stationary_variance)

    def describe(self):
        out = {"kind": self.kind, "tau": self.params.tau, "lambda": self.params.lam, "schedule": self.sched.describe()}
        if self.kind == "coef-decoupled":
            out["sigma"] = self.volatility.sigma
        if self.kind == "sgm-vp":
            out["beta"] = [self.beta_min, self.beta_max]
        return out


@lru_cache(maxsize=4096)
def _kernel(variant, t):
    if variant.kind == "sgm-vp":
        B = variant.beta_integral(t)
        return math.exp(-B / 2), -math.expm1(-B)
    if variant.kind == "coef-decoupled":
        return math.exp(-theta_bar(variant.sched, t)), linear_kernel_variance(t, variant.params.tau, variant.volatility, variant.sched)
    return kernel_coefficients(t, variant.params, variant.sched)
