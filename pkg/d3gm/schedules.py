"""Time-dependent mean-reversion rates and their volatility coupling.

Every schedule is defined on [0, t_end] (t_end = 1 by default). ``theta_at`` gives
the instantaneous rate, ``theta_bar`` its running integral in closed form, and
``sigma_at`` the volatility, either tied to the rate through
sigma_t**2 / (2 theta_t) = lambda**2 or chosen freely (decoupled).

Functions of time take a Python float and return a float, or take a tensor and
return a tensor of the same shape.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import torch
from scipy import integrate

from .errors import DomainError, SingularScheduleError
from .utils import DTYPE

log = logging.getLogger("d3gm")

# below this value of theta*t the cosine integral switches to its series
_COS_SERIES_CUTOFF = 1e-3


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    COSINE = "cosine"
    LOG = "log"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind = ScheduleKind.COSINE
    theta: float = 1.0
    k: float = 10.0
    t_end: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ScheduleKind(str(getattr(self.kind, "value", self.kind)).lower()))
        except ValueError:
            names = ", ".join(k.value for k in ScheduleKind)
            raise DomainError(f"Unknown schedule kind {self.kind!r}, expected one of: {names}") from None
        for name in ("theta", "k", "t_end"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0:
                raise DomainError(f"Schedule {name} must be a positive real, got {value}")
            object.__setattr__(self, name, value)
        if self.kind is ScheduleKind.COSINE and self.theta * self.t_end >= 2 * math.pi:
            raise DomainError(
                f"Cosine schedule vanishes inside the horizon (theta*t_end={self.theta * self.t_end:.4g} >= 2*pi)"
            )

    def describe(self):
        return {"kind": self.kind.value, "theta": self.theta, "k": self.k, "t_end": self.t_end}


def _check_time(s, t):
    tt = torch.as_tensor(t, dtype=DTYPE)
    if torch.isnan(tt).any() or (tt < 0).any() or (tt > s.t_end * (1 + 1e-12)).any():
        log.error("Time %s outside schedule horizon [0, %s]", t, s.t_end)
        raise DomainError(f"time {t} outside [0, {s.t_end}]")
    return tt


def _result(t, out):
    if isinstance(t, torch.Tensor):
        return out
    return out.item()


def theta_at(s, t):
    tt = _check_time(s, t)
    th = s.theta
    kind = s.kind
    if kind is ScheduleKind.CONSTANT:
        out = torch.full_like(tt, th)
    elif kind is ScheduleKind.LINEAR:
        out = th * tt
    elif kind is ScheduleKind.QUADRATIC:
        out = th * tt**2
    elif kind is ScheduleKind.COSINE:
        out = th * (1 - torch.cos(th * tt))
    else:
        out = th * torch.sigmoid(s.k * tt)
    return _result(t, out)


def theta_bar(s, t):
    """Closed-form integral of theta over [0, t]."""
    tt = _check_time(s, t)
    th = s.theta
    kind = s.kind
    if kind is ScheduleKind.CONSTANT:
        out = th * tt
    elif kind is ScheduleKind.LINEAR:
        out = th * tt**2 / 2
    elif kind is ScheduleKind.QUADRATIC:
        out = th * tt**3 / 3
    elif kind is ScheduleKind.COSINE:
        u = th * tt
        series = u**3 / 6 - u**5 / 120 + u**7 / 5040
        out = torch.where(u < _COS_SERIES_CUTOFF, series, u - torch.sin(u))
    else:
        # ln((1 + e^{kt}) / 2) = y + ln cosh y with y = kt/2
        y = s.k * tt / 2
        small = torch.log1p(2 * torch.sinh(y / 2) ** 2)
        large = y + torch.log1p(torch.exp(-2 * y)) - math.log(2.0)
        out = th / s.k * (y + torch.where(y < 20, small, large))
    return _result(t, out)


def theta_bar_quadrature(s, t):
    """Adaptive quadrature of theta_at over [0, t], used to cross-check theta_bar."""
    _check_time(s, t)
    value, _ = integrate.quad(lambda u: theta_at(s, u), 0.0, float(t), epsabs=1e-14, epsrel=1e-13, limit=200)
    return value


@dataclass(frozen=True)
class CoupledVolatility:
    lam: float = 10.0

    def __post_init__(self):
        if not float(self.lam) > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "lam", float(self.lam))


@dataclass(frozen=True)
class DecoupledVolatility:
    """Volatility chosen independently of theta.

    ``sigma`` is either a positive constant or a table of (t, sigma) knots that is
    interpolated linearly and held constant beyond its ends.
    """

    sigma: object = 1.0

    def __post_init__(self):
        if isinstance(self.sigma, (int, float)):
            values = [float(self.sigma)]
            object.__setattr__(self, "sigma", float(self.sigma))
        else:
            table = tuple(sorted((float(a), float(b)) for a, b in self.sigma))
            if not table:
                raise DomainError("decoupled volatility table is empty")
            values = [b for _, b in table]
            object.__setattr__(self, "sigma", table)
        if min(values) <= 0:
            raise DomainError(f"decoupled sigma must be positive, got {self.sigma}")

    def value(self, t):
        if isinstance(self.sigma, float):
            return _result(t, torch.full_like(torch.as_tensor(t, dtype=DTYPE), self.sigma))
        knots = torch.tensor([a for a, _ in self.sigma], dtype=DTYPE)
        vals = torch.tensor([b for _, b in self.sigma], dtype=DTYPE)
        tt = torch.as_tensor(t, dtype=DTYPE)
        if len(knots) == 1:
            return _result(t, torch.full_like(tt, vals[0].item()))
        tc = tt.clamp(knots[0].item(), knots[-1].item())
        idx = torch.searchsorted(knots, tc.reshape(-1), right=True).clamp(1, len(knots) - 1).reshape(tc.shape)
        t0, t1 = knots[idx - 1], knots[idx]
        v0, v1 = vals[idx - 1], vals[idx]
        out = v0 + (v1 - v0) * (tc - t0) / (t1 - t0)
        return _result(t, out)


def sigma_at(v, s, t):
    if isinstance(v, CoupledVolatility):
        th = theta_at(s, t)
        if isinstance(th, torch.Tensor):
            return v.lam * torch.sqrt(2 * th)
        return v.lam * math.sqrt(2 * th)
    _check_time(s, t)
    return v.value(t)


def stationary_ratio(v, s, t):
    """sigma_t**2 / (2 theta_t): lambda**2 under coupling, evaluated literally otherwise."""
    if isinstance(v, CoupledVolatility):
        return v.lam**2
    th = theta_at(s, t)
    if th <= 0:
        raise SingularScheduleError(f"theta vanishes at t={t} for the {s.kind.value} schedule")
    return sigma_at(v, s, t) ** 2 / (2 * th)


def sigma_max(v, s, T, tau=1.0, points=2001):
    """sup over [0, T] of tau * sigma_t, taken on a dense grid including both ends."""
    grid = torch.linspace(0.0, float(T), points, dtype=DTYPE)
    return tau * sigma_at(v, s, grid).max().item()
