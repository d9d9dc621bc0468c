"""The forward SDE viewed as a random dynamical system.

A flow map integrates the process from time s to t along one fixed Brownian
path. With the base flow (time shift of the noise) this gives the cocycle test
phi(t, s; w) x == phi(t - s, 0; shift_s w) x, which holds exactly when the
coefficients do not depend on time and fails otherwise. Pullback runs start in
the past and stop at 0 on a shared noise path; their law is the attractor.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import torch

from . import brownian
from .brownian import base_shift, brownian_path
from .errors import DomainError
from .forward import GaussianMarginal, integrate_paths
from .schedules import CoupledVolatility, sigma_at, stationary_ratio, theta_at, theta_bar
from .utils import DTYPE, as_vector, dump_json, worker_count

log = logging.getLogger("d3gm")

# theta_bar a pullback window must reach before its estimate counts as converged
PULLBACK_MIN_THETA_BAR = 10.0


@dataclass(frozen=True, eq=False)
class FlowMap:
    params: object
    sched: object
    volatility: object = None

    def __post_init__(self):
        if self.volatility is None:
            object.__setattr__(self, "volatility", self.params.volatility)

    @property
    def mode(self):
        return "coupled" if isinstance(self.volatility, CoupledVolatility) else "decoupled"

    def coefficients(self, times):
        """theta and tau*sigma at the given times (a tensor)."""
        th = theta_at(self.sched, times)
        return th, self.params.tau * sigma_at(self.volatility, self.sched, times)

    def frozen_coefficients(self, elapsed):
        """Coefficients by elapsed time, held at their horizon values past t_end."""
        return self.coefficients(elapsed.clamp(max=self.sched.t_end))


def flow_steps(fmap, start, count, omega, x):
    """Integrate ``count`` grid steps from grid index ``start`` along ``omega``."""
    x = as_vector(x, fmap.params.d)
    if count == 0:
        return x.clone()
    dW = omega.window(start, count)
    times = (start + torch.arange(count, dtype=DTYPE)) * omega.dt
    thetas, gains = fmap.coefficients(times)
    out = integrate_paths(x.unsqueeze(0), fmap.params.mu, thetas, gains, omega.dt, dW.unsqueeze(1), first_step=start)
    return out[0]


def flow(fmap, t, s, omega, x):
    """phi(t, s; omega) x on omega's grid."""
    if t < s:
        raise DomainError(f"flow needs s <= t, got s={s}, t={t}")
    ks, kt = omega.step_of(s), omega.step_of(t)
    return flow_steps(fmap, ks, kt - ks, omega, x)


@dataclass
class CocycleReport:
    schedule: dict
    tol: float
    pairs: list
    max_deviation: float
    verdict: str

    @property
    def holds(self):
        return self.verdict == "holds"

    def to_dict(self):
        return {
            "schedule": self.schedule,
            "tol": self.tol,
            "pairs": [{"s": s, "t": t, "deviation": dev} for s, t, dev in self.pairs],
            "max_deviation": self.max_deviation,
            "verdict": self.verdict,
        }

    def to_json(self):
        return dump_json(self.to_dict())


def check_cocycle(fmap, pairs, x, n_paths, tol=1e-9, seed=42, n_steps=100):
    """Compare phi(t, s; w) x with phi(t - s, 0; shift_s w) x over many paths.

    Both sides replay the same increments, so any deviation comes from the
    coefficients changing with time.
    """
    for s, t in pairs:
        if not 0 <= s < t:
            raise DomainError(f"cocycle pairs need 0 <= s < t, got ({s}, {t})")
    dt = fmap.sched.t_end / n_steps
    x = as_vector(x, fmap.params.d)

    def deviations(p):
        omega = brownian_path(seed, p, n_steps, dt, fmap.params.d)
        out = []
        for s, t in pairs:
            ks, kt = omega.step_of(s), omega.step_of(t)
            lhs = flow_steps(fmap, ks, kt - ks, omega, x)
            rhs = flow_steps(fmap, 0, kt - ks, base_shift(omega, s), x)
            out.append((lhs - rhs).abs().max().item())
        return out

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        per_path = list(pool.map(deviations, range(n_paths)))

    worst = [max(row[k] for row in per_path) for k in range(len(pairs))]
    rows = [(float(s), float(t), dev) for (s, t), dev in zip(pairs, worst)]
    max_dev = max(worst) if worst else 0.0
    verdict = "holds" if max_dev <= tol else "violated"
    log.info("Cocycle check (%s, %s): max deviation %.3e -> %s", fmap.sched.kind.value, fmap.mode, max_dev, verdict)
    return CocycleReport(fmap.sched.describe(), tol, rows, max_dev, verdict)


@dataclass
class PullbackEstimate:
    marginal: GaussianMarginal
    window_ok: bool
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mean": self.marginal.mean.tolist(),
            "variance": self.marginal.variance,
            "window_ok": self.window_ok,
            "history": [{"s": s, "mean": m, "variance": v, "distance": dist} for s, m, v, dist in self.history],
        }


def window_theta_bar(sched, length):
    head = min(length, sched.t_end)
    return theta_bar(sched, head) + theta_at(sched, sched.t_end) * max(length - sched.t_end, 0.0)


def attractor_distance(mean, std, target_mean, target_std):
    return math.sqrt(((mean - target_mean) ** 2).sum().item() + (std - target_std) ** 2)


def pullback_attractor_estimate(fmap, x_set, s_values, seed=42, n_paths=1000, dt=None):
    """Empirical law at time 0 of runs started at each s in ``s_values`` (all < 0).

    Every run of a path reads the same "past" noise backwards from time 0, so
    later starts see a suffix of the noise earlier starts see.
    """
    params = fmap.params
    dt = dt or fmap.sched.t_end / 100
    xs = torch.stack([as_vector(x, params.d) for x in x_set])
    k = xs.shape[0]
    steps = [round(-s / dt) for s in s_values]
    if not steps or min(steps) < 1:
        raise DomainError(f"pullback start times must be negative, got {s_values}")
    longest = max(steps)
    past = torch.stack(
        [brownian.draw_increments(seed, "past", p, longest, params.d, dt) for p in range(n_paths)], dim=1
    )
    target_std = math.sqrt(params.stationary_variance) if fmap.mode == "coupled" else attractor_radius(
        params, fmap.sched, fmap.volatility
    )

    history = []
    final = None
    for s, n in zip(s_values, steps):
        dW = past[:n].flip(0).repeat_interleave(k, dim=1)
        x = xs.repeat(n_paths, 1)
        thetas, gains = fmap.frozen_coefficients(torch.arange(n, dtype=DTYPE) * dt)
        x = integrate_paths(x, params.mu, thetas, gains, dt, dW)
        mean = x.mean(dim=0)
        var = x.var(dim=0, unbiased=True).mean().item()
        dist = attractor_distance(mean, math.sqrt(var), params.mu, target_std)
        history.append((float(s), mean.tolist(), var, dist))
        final = (s, GaussianMarginal(mean, var))
        log.debug("Pullback from s=%s: variance %.4g, distance %.4g", s, var, dist)

    reach = window_theta_bar(fmap.sched, -final[0])
    ok = reach >= PULLBACK_MIN_THETA_BAR
    if not ok:
        log.warning("Pullback window reaches theta_bar=%.3g < %.3g; estimate may not have converged", reach, PULLBACK_MIN_THETA_BAR)
    return PullbackEstimate(final[1], ok, history)


def attractor_radius(params, sched, volatility=None, t=None):
    """Stationary standard deviation: tau*lambda coupled, tau*sigma_t/sqrt(2 theta_t) frozen at t otherwise."""
    volatility = volatility or params.volatility
    if isinstance(volatility, CoupledVolatility):
        return params.tau * volatility.lam
    t = sched.t_end if t is None else t
    return params.tau * math.sqrt(stationary_ratio(volatility, sched, t))


# Lyapunov analysis, in deviation coordinates z = x - mu


def lyapunov_lv(b, sigma, Q, x, t):
    """LV = x^T Q b + b^T Q x + sigma^T Q sigma."""
    x = torch.as_tensor(x, dtype=DTYPE)
    Q = torch.as_tensor(Q, dtype=DTYPE)
    bx = torch.as_tensor(b(t, x), dtype=DTYPE)
    sx = torch.as_tensor(sigma(t, x), dtype=DTYPE)
    return (x @ Q @ bx + bx @ Q @ x + sx @ Q @ sx).item()


def linear_drift(theta):
    return lambda t, z: -theta * z


def additive_noise(c):
    return lambda t, z: torch.full_like(z, float(c))


def process_drift(fmap):
    return lambda t, z: -theta_at(fmap.sched, t) * z


def process_noise(fmap):
    return lambda t, z: torch.full_like(z, fmap.params.tau * sigma_at(fmap.volatility, fmap.sched, t))


@dataclass(frozen=True, eq=False)
class LyapunovSpec:
    Q: torch.Tensor
    radius: float = 1.0
    resolution: int = 21
    times: tuple = (1.0,)
    inner: float = None
    seed: int = 42

    def __post_init__(self):
        Q = torch.as_tensor(self.Q, dtype=DTYPE)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DomainError(f"Q must be square, got shape {tuple(Q.shape)}")
        if not torch.allclose(Q, Q.T, atol=1e-12):
            raise DomainError("Q must be symmetric")
        if torch.linalg.eigvalsh(Q).min().item() <= 0:
            raise DomainError("Q must be positive definite")
        if not self.radius > 0 or self.resolution < 2:
            raise DomainError(f"need radius > 0 and resolution >= 2, got {self.radius}, {self.resolution}")
        object.__setattr__(self, "Q", Q)
        if self.inner is None:
            object.__setattr__(self, "inner", self.radius / 100)

    @property
    def d(self):
        return self.Q.shape[0]

    def points(self):
        """Grid over the annulus inner <= |z| <= radius.

        Full Cartesian grid up to 3 dimensions; above that, radial shells along
        the axes, the eigenvectors of Q and a fixed set of random directions.
        """
        d = self.d
        if d <= 3:
            axis = torch.linspace(-self.radius, self.radius, self.resolution, dtype=DTYPE)
            grid = torch.cartesian_prod(*([axis] * d)).reshape(-1, d)
            shells = torch.linspace(self.inner, self.radius, self.resolution, dtype=DTYPE)
            extra = torch.cat([shells.unsqueeze(1) * e for e in torch.eye(d, dtype=DTYPE)])
            grid = torch.cat([grid, extra, -extra])
        else:
            g = brownian.generator(self.seed, "init", 0)
            rand = torch.randn((64, d), generator=g, dtype=DTYPE)
            _, vecs = torch.linalg.eigh(self.Q)
            dirs = torch.cat([torch.eye(d, dtype=DTYPE), vecs.T, rand])
            dirs = dirs / dirs.norm(dim=1, keepdim=True)
            dirs = torch.cat([dirs, -dirs])
            shells = torch.linspace(self.inner, self.radius, self.resolution, dtype=DTYPE)
            grid = (shells.reshape(-1, 1, 1) * dirs.unsqueeze(0)).reshape(-1, d)
        norms = grid.norm(dim=1)
        keep = (norms >= self.inner * (1 - 1e-12)) & (norms <= self.radius * (1 + 1e-12))
        return grid[keep]


@dataclass
class NegativeDefiniteReport:
    verdict: str
    worst_point: list
    worst_time: float
    worst_value: float
    n_points: int

    @property
    def holds(self):
        return self.verdict == "holds"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "worst_point": self.worst_point,
            "worst_time": self.worst_time,
            "worst_value": self.worst_value,
            "n_points": self.n_points,
        }


def _scan(spec, b, sigma):
    pts = spec.points()
    for t in spec.times:
        for z in pts:
            yield t, z, lyapunov_lv(b, sigma, spec.Q, z, t)


def check_negative_definite(spec, b, sigma):
    worst = None
    n = 0
    for t, z, lv in _scan(spec, b, sigma):
        n += 1
        if worst is None or lv > worst[2]:
            worst = (t, z, lv)
    verdict = "holds" if worst[2] < 0 else "violated"
    log.info("LV scan over %s points: max %.4g -> %s", n, worst[2], verdict)
    return NegativeDefiniteReport(verdict, worst[1].tolist(), float(worst[0]), worst[2], n)


def lyapunov_contraction_rate(spec, b, sigma):
    """Largest k with -LV(z) >= k V(z) on the scanned annulus."""
    rate = math.inf
    for t, z, lv in _scan(spec, b, sigma):
        v = (z @ spec.Q @ z).item()
        rate = min(rate, -lv / v)
    return rate


def expected_lyapunov_curve(fmap, Q, x0, n_steps, n_paths, seed=42):
    """Monte Carlo E[V(x_t - mu)] on the forward grid."""
    params = fmap.params
    Q = torch.as_tensor(Q, dtype=DTYPE)
    dt = fmap.sched.t_end / n_steps
    times = torch.arange(n_steps + 1, dtype=DTYPE) * dt
    thetas, gains = fmap.coefficients(times[:-1])
    x = as_vector(x0, params.d).expand(n_paths, params.d).clone()
    values = torch.empty(n_steps + 1, dtype=DTYPE)

    def record(i, state):
        z = state - params.mu
        values[i] = torch.einsum("ni,ij,nj->n", z, Q, z).mean()

    record(0, x)
    dW = brownian.increment_block(seed, "forward", range(n_paths), n_steps, dt, params.d)
    integrate_paths(x, params.mu, thetas, gains, dt, dW, record)
    return times, values
