"""The tau-stiffened mean-reverting forward process.

    dx_t = theta_t (mu - x_t) dt + tau sigma_t dW_t

Paths are integrated with Euler-Maruyama on a uniform grid over [0, t_end].
Under the coupling sigma_t**2 = 2 lambda**2 theta_t the marginals are Gaussian
with mean mu + (x0 - mu) exp(-theta_bar_t) and isotropic variance
tau**2 lambda**2 (1 - exp(-2 theta_bar_t)).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import torch
from scipy import integrate

from . import brownian
from .errors import AlignmentError, DomainError, NumericError, SimulationError
from .schedules import CoupledVolatility, DecoupledVolatility, sigma_at, theta_at, theta_bar
from .utils import DTYPE, Timer, as_vector, chunk_size, worker_count, write_csv

log = logging.getLogger("d3gm")


@dataclass(frozen=True, eq=False)
class ProcessParams:
    mu: torch.Tensor
    lam: float = 10.0
    tau: float = 2.0
    d: int = None

    def __post_init__(self):
        mu = as_vector(self.mu, self.d)
        if mu.ndim != 1:
            raise DomainError(f"mu must be a vector, got shape {tuple(mu.shape)}")
        d = mu.shape[0] if self.d is None else int(self.d)
        if d < 1 or mu.shape[0] != d:
            raise DomainError(f"mu has {mu.shape[0]} coordinates but d={d}")
        if not torch.isfinite(mu).all():
            raise DomainError("mu must be finite")
        if not float(self.lam) > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if not float(self.tau) >= 1:
            raise DomainError(f"tau must be >= 1, got {self.tau}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def volatility(self):
        return CoupledVolatility(self.lam)

    @property
    def stationary_variance(self):
        return self.tau**2 * self.lam**2

    def with_(self, **changes):
        if "mu" in changes and "d" not in changes:
            changes["d"] = None
        return replace(self, **changes)

    def describe(self):
        return {"mu": self.mu.tolist(), "lambda": self.lam, "tau": self.tau, "d": self.d}


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: torch.Tensor
    states: torch.Tensor

    def __post_init__(self):
        if self.times.shape[0] != self.states.shape[0]:
            raise DomainError(f"{self.times.shape[0]} times but {self.states.shape[0]} states")
        if self.times.shape[0] > 1 and not (self.times[1:] > self.times[:-1]).all():
            raise DomainError("trajectory times must be strictly increasing")

    @property
    def terminal(self):
        return self.states[-1]

    def rows(self, path_index=0):
        for t, x in zip(self.times.tolist(), self.states.tolist()):
            for j, v in enumerate(x):
                yield (t, path_index, j, v)


@dataclass(frozen=True, eq=False)
class GaussianMarginal:
    mean: torch.Tensor
    variance: float

    @property
    def d(self):
        return self.mean.shape[-1]

    @property
    def std(self):
        return math.sqrt(max(self.variance, 0.0))


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    times: torch.Tensor
    mean: torch.Tensor
    variance: torch.Tensor
    coord_variance: torch.Tensor
    n_paths: int
    terminal: torch.Tensor = field(default=None)

    def standard_error(self):
        return torch.sqrt(self.coord_variance / self.n_paths)

    def rows(self):
        for i, t in enumerate(self.times.tolist()):
            yield (t, *self.mean[i].tolist(), self.variance[i].item())

    def header(self):
        return ["t", *[f"mean_{j}" for j in range(self.mean.shape[1])], "variance"]


def _check_finite(name, value):
    if not torch.isfinite(torch.as_tensor(value, dtype=DTYPE)).all():
        raise NumericError(f"{name} is not finite: {value}")


def em_step(x, t, dt, params, sched, dW, volatility=None):
    """One Euler-Maruyama step, x + theta_t (mu - x) dt + tau sigma_t dW."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    x = torch.as_tensor(x, dtype=DTYPE)
    dW = torch.as_tensor(dW, dtype=DTYPE)
    _check_finite("state", x)
    _check_finite("increment", dW)
    volatility = volatility or params.volatility
    th = theta_at(sched, t)
    sig = sigma_at(volatility, sched, t)
    return x + th * (params.mu - x) * dt + params.tau * sig * dW


def grid(sched, n_steps):
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    dt = sched.t_end / n_steps
    return torch.arange(n_steps + 1, dtype=DTYPE) * dt, dt


def coefficient_grid(params, sched, n_steps, volatility=None):
    """theta and tau*sigma at the left end of every step."""
    times, dt = grid(sched, n_steps)
    left = times[:-1]
    volatility = volatility or params.volatility
    return theta_at(sched, left), params.tau * sigma_at(volatility, sched, left), dt


def integrate_paths(x, target, thetas, gains, dt, dW, record=None, first_step=0):
    """Euler-Maruyama over a block of paths.

    ``x`` is (m, d), ``dW`` is (n, m, d) and ``thetas``/``gains`` hold n per-step
    coefficients. ``record(i, x)`` is called with the state after each step.
    """
    for i in range(dW.shape[0]):
        x = x + thetas[i].item() * (target - x) * dt + gains[i].item() * dW[i]
        if not torch.isfinite(x).all():
            raise SimulationError(f"state diverged at step {first_step + i + 1}", step=first_step + i + 1)
        if record is not None:
            record(i + 1, x)
    return x


def simulate_forward(x0, params, sched, n_steps, path, volatility=None):
    times, dt = grid(sched, n_steps)
    if abs(path.dt - dt) > 1e-12 * dt:
        raise AlignmentError(f"path spacing {path.dt} does not match grid spacing {dt}")
    x0 = as_vector(x0, params.d)
    thetas, gains, _ = coefficient_grid(params, sched, n_steps, volatility)
    dW = path.window(0, n_steps).unsqueeze(1)
    states = torch.empty(n_steps + 1, params.d, dtype=DTYPE)
    states[0] = x0

    def record(i, x):
        states[i] = x[0]

    integrate_paths(x0.unsqueeze(0), params.mu, thetas, gains, dt, dW, record)
    return Trajectory(times, states)


def merge_moments(a, b):
    """Chan's pairwise combination of (count, mean, M2) summaries."""
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), sa + sb + delta**2 * (na * nb / n)


def simulate_ensemble(
    x0,
    params,
    sched,
    n_steps,
    n_paths,
    seed,
    checkpoints=None,
    keep_terminal=False,
    volatility=None,
    target=None,
    coefficients=None,
):
    """Moments of many independent paths at the requested step indices.

    Paths are processed in fixed chunks on a thread pool and summaries are
    merged in chunk order, so results do not depend on the thread count.
    ``x0`` is a d-vector shared by all paths or an (n_paths, d) tensor.
    """
    if n_paths < 2:
        raise DomainError(f"an ensemble needs at least 2 paths, got {n_paths}")
    times, dt = grid(sched, n_steps)
    thetas, gains, _ = coefficients or coefficient_grid(params, sched, n_steps, volatility)
    target = params.mu if target is None else target
    checkpoints = list(range(n_steps + 1)) if checkpoints is None else sorted(set(int(c) for c in checkpoints))
    if not checkpoints:
        raise DomainError("checkpoints must name at least one step; pass None for every step")
    if checkpoints[0] < 0 or checkpoints[-1] > n_steps:
        raise DomainError(f"checkpoints must lie in [0, {n_steps}]")
    slot = {c: k for k, c in enumerate(checkpoints)}
    x0 = torch.as_tensor(x0, dtype=DTYPE)
    per_path = x0.ndim == 2
    if per_path and x0.shape[0] != n_paths:
        raise DomainError(f"got {x0.shape[0]} initial states for {n_paths} paths")
    d = params.d
    size = chunk_size()
    starts = list(range(0, n_paths, size))

    def run(start):
        idx = range(start, min(start + size, n_paths))
        m = len(idx)
        x = x0[start : start + m].clone() if per_path else as_vector(x0, d).expand(m, d).clone()
        means = torch.zeros(len(checkpoints), d, dtype=DTYPE)
        m2 = torch.zeros(len(checkpoints), d, dtype=DTYPE)

        def record(i, state):
            if i in slot:
                k = slot[i]
                means[k] = state.mean(dim=0)
                m2[k] = ((state - means[k]) ** 2).sum(dim=0)

        record(0, x)
        dW = brownian.increment_block(seed, "forward", idx, n_steps, dt, d)
        x = integrate_paths(x, target, thetas, gains, dt, dW, record)
        log.debug("Simulated paths %s..%s", start, start + m - 1)
        return m, means, m2, x if keep_terminal else None

    with Timer(f"ensemble of {n_paths} paths"):
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            results = list(pool.map(run, starts))

    total = None
    for m, means, m2, _ in results:
        total = (m, means, m2) if total is None else merge_moments(total, (m, means, m2))
    n, mean, m2 = total
    coord_var = m2 / (n - 1)
    terminal = torch.cat([r[3] for r in results]) if keep_terminal else None
    return EnsembleStats(times[checkpoints], mean, coord_var.mean(dim=1), coord_var, n, terminal)


def simulate_to(x0, params, sched, T, n_steps, n_paths, seed, volatility=None, first_path=0):
    """States at time T (on the n_steps grid over [0, t_end]) for n_paths paths, shaped (n_paths, d)."""
    times, dt = grid(sched, n_steps)
    k = round(T / dt)
    if k < 0 or k > n_steps or abs(k * dt - T) > 1e-9 * max(1.0, T):
        raise AlignmentError(f"T={T} is not a point of the {n_steps}-step grid on [0, {sched.t_end}]")
    thetas, gains, _ = coefficient_grid(params, sched, n_steps, volatility)
    x0 = as_vector(x0, params.d)
    size = chunk_size()

    def run(start):
        idx = range(first_path + start, first_path + min(start + size, n_paths))
        x = x0.expand(len(idx), params.d).clone()
        if k == 0:
            return x
        dW = brownian.increment_block(seed, "forward", idx, n_steps, dt, params.d)[:k]
        return integrate_paths(x, params.mu, thetas, gains, dt, dW)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return torch.cat(list(pool.map(run, range(0, n_paths, size))))


def kernel_coefficients(t, params, sched):
    """(a_t, v_t) with x_t | x_0 ~ N(mu + (x_0 - mu) a_t, v_t I)."""
    tb = theta_bar(sched, t)
    if isinstance(tb, torch.Tensor):
        return torch.exp(-tb), params.stationary_variance * -torch.expm1(-2 * tb)
    return math.exp(-tb), params.stationary_variance * -math.expm1(-2 * tb)


def marginal(x0, t, params, sched):
    a, v = kernel_coefficients(t, params, sched)
    x0 = as_vector(x0, params.d)
    return GaussianMarginal(params.mu + (x0 - params.mu) * a, v)


def stationary_law(params):
    return GaussianMarginal(params.mu.clone(), params.stationary_variance)


def linear_kernel_variance(t, tau, volatility, sched):
    """tau**2 * integral_0^t sigma_s**2 exp(-2 (theta_bar_t - theta_bar_s)) ds.

    Valid for any volatility; under the coupling it reproduces the closed form.
    """
    if t <= 0:
        return 0.0
    tb = theta_bar(sched, t)

    def f(s):
        return sigma_at(volatility, sched, s) ** 2 * math.exp(-2 * (tb - theta_bar(sched, s)))

    points = None
    if isinstance(volatility, DecoupledVolatility) and not isinstance(volatility.sigma, float):
        points = [k for k, _ in volatility.sigma if 0 < k < t] or None
    value, _ = integrate.quad(f, 0.0, float(t), points=points, epsabs=1e-13, epsrel=1e-11, limit=200)
    return tau**2 * value


def decoupled_marginal(x0, t, params, sched, volatility):
    """Marginal of the process when sigma_t is not tied to theta_t."""
    a = math.exp(-theta_bar(sched, t))
    x0 = as_vector(x0, params.d)
    return GaussianMarginal(params.mu + (x0 - params.mu) * a, linear_kernel_variance(t, params.tau, volatility, sched))


def sample_marginal(m, rng_stream, n=None):
    """mean + sqrt(variance) z with z drawn from the given torch Generator."""
    if m.variance < 0:
        raise NumericError(f"negative variance {m.variance}")
    shape = (m.d,) if n is None else (n, m.d)
    z = torch.randn(shape, generator=rng_stream, dtype=DTYPE)
    if m.variance == 0:
        return m.mean.expand(shape).clone()
    return m.mean + math.sqrt(m.variance) * z


def write_trajectories(path, trajectories):
    rows = (row for k, traj in enumerate(trajectories) for row in traj.rows(k))
    return write_csv(path, ["t", "path", "dim", "value"], rows)


def write_ensemble(path, stats):
    return write_csv(path, stats.header(), stats.rows())
