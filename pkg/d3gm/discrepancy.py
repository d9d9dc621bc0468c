"""Temporal distribution discrepancy and Gaussian gap metrics.

The lower bound on ||x0 - x_T||^2 combines three parts:

    term_residual   = (||x0 - mu||^2 - r_T) exp(-2 theta_bar_T)
    term_stationary = r_T                      (r_T = tau^2 sigma_T^2 / (2 theta_T))
    term_noise      = sigma_max^2 (C sigma_max^2 + chi)

with chi the one-sided chi-square tail d + 2 sqrt(-d ln delta) - 2 ln delta.
The bound is |term_residual + term_stationary - term_noise|.
"""

import logging
import math
from dataclasses import dataclass

import torch

from .brownian import generator
from .errors import DomainError, SingularScheduleError
from .forward import GaussianMarginal, marginal, simulate_to, stationary_law
from .schedules import CoupledVolatility, sigma_max, stationary_ratio, theta_at, theta_bar
from .score import default_score_bound
from .utils import DTYPE, as_vector

log = logging.getLogger("d3gm")


def _check_delta(delta):
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")


def chi_square_tail_term(d, delta):
    _check_delta(delta)
    if d < 1:
        raise DomainError(f"d must be >= 1, got {d}")
    ld = math.log(delta)
    return d + 2 * math.sqrt(-d * ld) - 2 * ld


def chi_square_tail_probability(d, delta, n=100000, seed=42):
    """Monte Carlo P(chi2_d > chi_square_tail_term(d, delta)); at most delta."""
    level = chi_square_tail_term(d, delta)
    z = torch.randn((n, d), generator=generator(seed, "marginal", d), dtype=DTYPE)
    return ((z**2).sum(dim=1) > level).double().mean().item()


@dataclass(frozen=True, eq=False)
class TddInputs:
    x0: torch.Tensor
    params: object
    sched: object
    T: float
    delta: float = 0.05
    C: float = None
    sigma_max: float = None
    volatility: object = None

    def __post_init__(self):
        _check_delta(self.delta)
        if not 0 < self.T <= self.sched.t_end * (1 + 1e-12):
            raise DomainError(f"T must lie in (0, {self.sched.t_end}], got {self.T}")
        object.__setattr__(self, "x0", as_vector(self.x0, self.params.d))
        if self.volatility is None:
            object.__setattr__(self, "volatility", self.params.volatility)
        smax = sigma_max(self.volatility, self.sched, self.T, self.params.tau)
        if self.sigma_max is None:
            object.__setattr__(self, "sigma_max", smax)
        elif self.sigma_max < smax * (1 - 1e-9):
            raise DomainError(f"sigma_max={self.sigma_max} is below sup tau*sigma_t = {smax}")
        if self.C is None:
            _, v = marginal_variance(self)
            object.__setattr__(self, "C", default_score_bound(v, self.params.d))
        elif not self.C > 0:
            raise DomainError(f"C must be positive, got {self.C}")

    def describe(self):
        return {
            "x0": self.x0.tolist(),
            "T": self.T,
            "delta": self.delta,
            "C": self.C,
            "sigma_max": self.sigma_max,
        }


def marginal_variance(inputs):
    a = math.exp(-theta_bar(inputs.sched, inputs.T))
    return a, inputs.params.stationary_variance * (1 - a * a)


@dataclass
class TddReport:
    bound: float
    term_residual: float
    term_stationary: float
    term_noise: float
    delta: float
    empirical_lhs: float = None
    exceed_fraction: float = None

    @property
    def signed(self):
        return self.term_residual + self.term_stationary - self.term_noise

    @property
    def vacuous(self):
        return self.signed < 0

    def to_dict(self):
        return {
            "bound": self.bound,
            "signed": self.signed,
            "vacuous": self.vacuous,
            "term_residual": self.term_residual,
            "term_stationary": self.term_stationary,
            "term_noise": self.term_noise,
            "empirical_lhs": self.empirical_lhs,
            "exceed_fraction": self.exceed_fraction,
            "delta": self.delta,
        }


def stationary_term(inputs):
    theta_T = theta_at(inputs.sched, inputs.T)
    if theta_T <= 0:
        raise SingularScheduleError(f"theta vanishes at T={inputs.T} for the {inputs.sched.kind.value} schedule")
    if isinstance(inputs.volatility, CoupledVolatility):
        return inputs.params.tau**2 * inputs.volatility.lam**2
    return inputs.params.tau**2 * stationary_ratio(inputs.volatility, inputs.sched, inputs.T)


def tdd_lower_bound(inputs):
    r = stationary_term(inputs)
    gap = ((inputs.x0 - inputs.params.mu) ** 2).sum().item()
    residual = (gap - r) * math.exp(-2 * theta_bar(inputs.sched, inputs.T))
    s2 = inputs.sigma_max**2
    noise = s2 * (inputs.C * s2 + chi_square_tail_term(inputs.params.d, inputs.delta))
    report = TddReport(abs(residual + r - noise), residual, r, noise, inputs.delta)
    if report.vacuous:
        log.warning("TDD bound argument is negative (%.4g); the bound is loose relative to its parts", report.signed)
    return report


def empirical_tdd(inputs, n_runs=500, seed=42, n_steps=100):
    """Bound plus the Monte Carlo distribution of ||x0 - x_T||^2 over n_runs forward runs."""
    report = tdd_lower_bound(inputs)
    xT = simulate_to(inputs.x0, inputs.params, inputs.sched, inputs.T, n_steps, n_runs, seed, inputs.volatility)
    lhs = ((xT - inputs.x0) ** 2).sum(dim=1)
    report.empirical_lhs = lhs.mean().item()
    report.exceed_fraction = (lhs >= report.bound).double().mean().item()
    log.info("TDD bound %.4g, empirical mean %.4g, exceeded in %.1f%% of runs", report.bound, report.empirical_lhs, 100 * report.exceed_fraction)
    return report


def tdd_sweep(inputs, T_grid):
    """Rows (T, bound, term_residual, term_stationary, term_noise) over a grid of horizons."""
    rows = []
    for T in T_grid:
        sub = TddInputs(inputs.x0, inputs.params, inputs.sched, float(T), inputs.delta, inputs.C, None, inputs.volatility)
        r = tdd_lower_bound(sub)
        rows.append((float(T), r.bound, r.term_residual, r.term_stationary, r.term_noise))
    return rows


def empirical_forward_gap(x0, params, sched, T, n_paths, seed=42, n_steps=100):
    """(|mu - mean(x_T)| per coordinate, |tau^2 lambda^2 - var(x_T)|)."""
    if n_paths < 1000:
        raise DomainError(f"empirical_forward_gap needs at least 1000 paths, got {n_paths}")
    xT = simulate_to(x0, params, sched, T, n_steps, n_paths, seed)
    mean_gap = (params.mu - xT.mean(dim=0)).abs()
    var = xT.var(dim=0, unbiased=True).mean().item()
    return mean_gap, abs(params.stationary_variance - var)


def gaussian_kl(a, b):
    """KL(a || b) for isotropic Gaussians, summed over coordinates."""
    if not b.variance > 0:
        raise DomainError(f"KL needs a positive target variance, got {b.variance}")
    d = a.d
    if a.variance <= 0:
        return math.inf
    mean_term = ((a.mean - b.mean) ** 2).sum().item() / b.variance
    ratio = a.variance / b.variance
    return 0.5 * (d * ratio + mean_term - d - d * math.log(ratio))


def gaussian_w2(a, b):
    mean_term = ((a.mean - b.mean) ** 2).sum().item()
    return math.sqrt(mean_term + a.d * (a.std - b.std) ** 2)


def fit_isotropic(samples):
    samples = torch.as_tensor(samples, dtype=DTYPE)
    return GaussianMarginal(samples.mean(dim=0), samples.var(dim=0, unbiased=True).mean().item())


def kl_to_stationary(x0, params, sched, T):
    return gaussian_kl(marginal(x0, T, params, sched), stationary_law(params))


def empirical_kl_to_stationary(x0, params, sched, T, n_paths, seed=42, n_steps=100):
    xT = simulate_to(x0, params, sched, T, n_steps, n_paths, seed)
    return gaussian_kl(fit_isotropic(xT), stationary_law(params))


def psnr(x, ref, peak=None):
    x = torch.as_tensor(x, dtype=DTYPE)
    ref = torch.as_tensor(ref, dtype=DTYPE)
    mse = ((x - ref) ** 2).mean().item()
    if peak is None:
        peak = (ref.max() - ref.min()).item() or 1.0
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak**2 / mse)


def initial_magnitude_I0(x0, params, sched, T):
    """(||mu - x0|| theta_bar_T)^2 + 2 tau^2 lambda^2 theta_bar_T d, coefficients frozen at x0."""
    tb = theta_bar(sched, T)
    x0 = as_vector(x0, params.d)
    drift = torch.linalg.vector_norm(params.mu - x0).item() * tb
    return drift**2 + 2 * params.stationary_variance * tb * params.d
