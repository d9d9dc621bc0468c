"""Reverse-time sampling.

    dx = [theta_t (target - x) - g_t^2 score(x, t)] dt + g_t dW_hat

integrated with Euler-Maruyama backwards from T to t_min. Runs are processed in
fixed chunks on a thread pool; every run reads its own reverse noise stream so
results do not depend on chunking or thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import torch

from . import brownian
from .discrepancy import fit_isotropic, gaussian_w2
from .errors import DomainError, NumericError, SimulationError
from .forward import GaussianMarginal, integrate_paths, merge_moments
from .schedules import sigma_at, theta_at
from .score import DataKind, kernel_score, mixture_score
from .utils import DTYPE, Timer, as_vector, chunk_size, worker_count

log = logging.getLogger("d3gm")

INITS = ("from-stationary", "from-forward")


def reverse_step(x, t, dt, score, params, sched, dW=None, volatility=None):
    """x - [theta_t (mu - x) - tau^2 sigma_t^2 score] dt + tau sigma_t dW."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    x = torch.as_tensor(x, dtype=DTYPE)
    score = torch.as_tensor(score, dtype=DTYPE)
    volatility = volatility or params.volatility
    th = theta_at(sched, t)
    g = params.tau * sigma_at(volatility, sched, t)
    out = x - (th * (params.mu - x) - g * g * score) * dt
    if dW is not None:
        out = out + g * torch.as_tensor(dW, dtype=DTYPE)
    if not torch.isfinite(out).all():
        raise NumericError(f"reverse step produced a non-finite state at t={t}")
    return out


def kernel_score_fn(variant, x0):
    """Exact score when the data is the point mass x0."""
    x0 = torch.as_tensor(x0, dtype=DTYPE)

    def score(x, t, mu, y=None):
        a, v = variant.kernel(t)
        return kernel_score(x, x0, a, v, mu)

    return score


def mixture_score_fn(variant, data):
    """Exact marginal score for gaussian or mixture data under the variant's kernel."""

    def score(x, t, mu, y=None):
        a, v = variant.kernel(t)
        return mixture_score(x, data, a, v, mu)

    return score


def analytic_score_fn(variant, data):
    if data.kind == DataKind.POINT_MASS:
        return kernel_score_fn(variant, data.means[0])
    return mixture_score_fn(variant, data)


@dataclass(eq=False)
class SampleRun:
    init: str
    times: torch.Tensor
    mean_path: torch.Tensor
    var_path: torch.Tensor
    terminal: torch.Tensor
    score_norm: torch.Tensor
    drift_norm: torch.Tensor
    states: torch.Tensor = field(default=None)

    @property
    def n_runs(self):
        return self.terminal.shape[0]


def _per_run(value, n, d):
    if value is None:
        return None
    value = torch.as_tensor(value, dtype=DTYPE)
    if value.ndim == 1:
        return value.expand(n, d)
    if value.shape != (n, d):
        raise DomainError(f"expected shape ({n}, {d}), got {tuple(value.shape)}")
    return value


def reverse_grid(variant, n_steps, T=None, t_min=1e-3):
    """(times from T down to t_min, dt, theta and g at the start of each reverse step)."""
    if n_steps < 1:
        raise DomainError(f"need n_steps >= 1, got {n_steps}")
    T = variant.t_end if T is None else T
    if not 0 < t_min < T <= variant.t_end * (1 + 1e-12):
        raise DomainError(f"need 0 < t_min < T <= {variant.t_end}, got t_min={t_min}, T={T}")
    times = torch.linspace(T, t_min, n_steps + 1, dtype=DTYPE)
    thetas, gains = variant.coefficient_grid(times[:-1])
    return times, (T - t_min) / n_steps, thetas, gains


def forward_grid(variant, n_steps, T):
    dt = T / n_steps
    return (*variant.coefficient_grid(torch.arange(n_steps, dtype=DTYPE) * dt), dt)


def sample(
    variant,
    score_fn,
    n_steps=100,
    init="from-stationary",
    seed=42,
    n_runs=1,
    x0=None,
    mu=None,
    y=None,
    T=None,
    t_min=1e-3,
    keep_states=False,
    noise_scale=1.0,
):
    """Runs the reverse SDE for ``n_runs`` runs.

    ``x0`` (needed for from-forward), ``mu`` and ``y`` are a d-vector shared by
    all runs or an (n_runs, d) tensor. ``score_fn(x, t, target, y)`` returns
    the score for a block of runs.
    """
    if init not in INITS:
        raise DomainError(f"Unknown init {init!r}, expected one of: {', '.join(INITS)}")
    if n_runs < 1:
        raise DomainError(f"need n_runs >= 1, got {n_runs}")
    times, dt, thetas, gains = reverse_grid(variant, n_steps, T, t_min)
    T = times[0].item()
    if init == "from-forward" and x0 is None:
        raise DomainError("from-forward init needs x0")
    d = variant.d
    x0 = _per_run(x0, n_runs, d)
    mu = _per_run(variant.params.mu if mu is None else mu, n_runs, d)
    y = _per_run(y, n_runs, d)
    fwd_thetas, fwd_gains, fwd_dt = forward_grid(variant, n_steps, T)
    size = chunk_size()

    def start_state(idx, target):
        if init == "from-forward":
            dW = brownian.increment_block(seed, "forward", idx, n_steps, fwd_dt, d)
            return integrate_paths(x0[idx.start : idx.stop].clone(), target, fwd_thetas, fwd_gains, fwd_dt, dW)
        law = variant.stationary(target)
        z = torch.stack([torch.randn(d, generator=brownian.generator(seed, "init", r), dtype=DTYPE) for r in idx])
        return law.mean + math.sqrt(law.variance) * z

    def run(start):
        idx = range(start, min(start + size, n_runs))
        m = len(idx)
        target = variant.target(mu[start : start + m])
        yb = None if y is None else y[start : start + m]
        x = start_state(idx, target)
        dW = brownian.increment_block(seed, "reverse", idx, n_steps, dt, d) * noise_scale
        means = torch.empty(n_steps + 1, d, dtype=DTYPE)
        m2 = torch.empty(n_steps + 1, d, dtype=DTYPE)
        score_sum = torch.zeros(n_steps, dtype=DTYPE)
        drift_sum = torch.zeros(n_steps, dtype=DTYPE)
        states = torch.empty(n_steps + 1, m, d, dtype=DTYPE) if keep_states else None

        def record(i, state):
            means[i] = state.mean(dim=0)
            m2[i] = ((state - means[i]) ** 2).sum(dim=0)
            if states is not None:
                states[i] = state

        record(0, x)
        for i in range(n_steps):
            t = times[i].item()
            s = score_fn(x, t, target, yb)
            drift = thetas[i].item() * (target - x) - gains[i].item() ** 2 * s
            x = x - drift * dt + gains[i].item() * dW[i]
            if not torch.isfinite(x).all():
                log.error("Reverse run diverged at step %s (t=%.4g)", i + 1, t)
                raise SimulationError(f"reverse state diverged at step {i + 1}", step=i + 1)
            score_sum[i] = torch.linalg.vector_norm(s, dim=1).sum()
            drift_sum[i] = torch.linalg.vector_norm(drift, dim=1).sum()
            record(i + 1, x)
        return m, means, m2, score_sum, drift_sum, x, states

    with Timer(f"{variant.kind} reverse sampling of {n_runs} runs"):
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            results = list(pool.map(run, range(0, n_runs, size)))

    total = None
    for m, means, m2, *_ in results:
        total = (m, means, m2) if total is None else merge_moments(total, (m, means, m2))
    n, mean_path, m2 = total
    var_path = (m2 / max(n - 1, 1)).mean(dim=1)
    score_norm = sum(r[3] for r in results) / n
    drift_norm = sum(r[4] for r in results) / n
    terminal = torch.cat([r[5] for r in results])
    states = torch.cat([r[6] for r in results], dim=1) if keep_states else None
    return SampleRun(init, times, mean_path, var_path, terminal, score_norm, drift_norm, states)


def data_law(data):
    """Isotropic Gaussian with the data's mean and average per-coordinate variance."""
    w = data.weights
    mean = (w.unsqueeze(1) * data.means).sum(dim=0)
    second = (w * (data.stds**2 + ((data.means - mean) ** 2).mean(dim=1))).sum().item()
    return GaussianMarginal(mean, second)


def gaussian_reverse_moments(variant, data, n_steps=100, init="from-stationary", mu=None, T=None, t_min=1e-3, noise_scale=1.0):
    """Exact terminal law of the Euler-Maruyama reverse chain for Gaussian data and its exact score.

    With data N(m0, s0^2 I) every marginal is N(m_t, V_t) and the score is linear,
    so each step maps (mean, variance) deterministically. ``sample`` driven by
    ``analytic_score_fn`` draws from the same law. Refining ``n_steps`` converges
    to the continuous-time reverse law, which still carries any mismatch between
    the start law and the forward marginal at T.
    """
    if init not in INITS:
        raise DomainError(f"Unknown init {init!r}, expected one of: {', '.join(INITS)}")
    if data.kind == DataKind.MIXTURE:
        raise DomainError("reverse moments are closed-form only for gaussian or point-mass data")
    times, dt, thetas, gains = reverse_grid(variant, n_steps, T, t_min)
    m0 = data.means[0]
    s0sq = data.stds[0].item() ** 2
    target = variant.target(variant.params.mu if mu is None else as_vector(mu, variant.d))
    if init == "from-forward":
        fwd_thetas, fwd_gains, fwd_dt = forward_grid(variant, n_steps, times[0].item())
        mean, var = m0.clone(), s0sq
        for th, g in zip(fwd_thetas.tolist(), fwd_gains.tolist()):
            mean = mean + th * (target - mean) * fwd_dt
            var = (1 - th * fwd_dt) ** 2 * var + g * g * fwd_dt
    else:
        law = variant.stationary(target)
        mean, var = torch.as_tensor(law.mean, dtype=DTYPE).expand(variant.d).clone(), law.variance
    for i in range(n_steps):
        a, v = variant.kernel(times[i].item())
        m_t = target + (m0 - target) * a
        V_t = a * a * s0sq + v
        th, g = thetas[i].item(), gains[i].item()
        A = 1 + (th - g * g / V_t) * dt
        mean = A * mean - th * target * dt + g * g * m_t * dt / V_t
        var = A * A * var + (noise_scale * g) ** 2 * dt
    return GaussianMarginal(mean, var)


@dataclass
class CompareResult:
    table: list
    curves: list
    terminal_variance: dict

    TABLE_HEADER = ("variant", "seed", "terminal_mse", "terminal_w2", "steps")
    CURVE_HEADER = ("variant", "t", "mean_dist", "var")

    def mean_mse(self, label):
        rows = [r for r in self.table if r[0] == label]
        return sum(r[2] for r in rows) / len(rows)

    def wins(self, better, worse):
        """Seeds on which ``better`` has a terminal mse no larger than ``worse``."""
        a = {r[1]: r[2] for r in self.table if r[0] == better}
        b = {r[1]: r[2] for r in self.table if r[0] == worse}
        return sum(1 for s in a if a[s] <= b[s])


def trajectory_compare(variants, data, seeds, n_steps=100, n_runs=1000, init="from-stationary", t_min=1e-3, labels=None, mu=None):
    """Runs every variant on the same data, seeds and step budget."""
    labels = labels or [v.kind for v in variants]
    if len(set(labels)) != len(labels):
        raise DomainError(f"variant labels must be unique, got {labels}")
    law = data_law(data)
    table, curves, term_var = [], [], {}
    for label, variant in zip(labels, variants):
        score = analytic_score_fn(variant, data)
        variances = []
        for k, seed in enumerate(seeds):
            x0 = data.sample(n_runs, brownian.generator(seed, "data", 0)) if init == "from-forward" else None
            run = sample(variant, score, n_steps, init, seed, n_runs, x0=x0, mu=mu, t_min=t_min)
            mse = ((run.terminal - law.mean) ** 2).sum(dim=1).mean().item()
            w2 = gaussian_w2(fit_isotropic(run.terminal), law)
            table.append((label, seed, mse, w2, n_steps))
            variances.append(run.var_path[-1].item())
            if k == 0:
                for t, m, v in zip(run.times.tolist(), run.mean_path, run.var_path.tolist()):
                    curves.append((label, t, torch.linalg.vector_norm(m - law.mean).item(), v))
        term_var[label] = sum(variances) / len(variances)
        log.info("%s: mean terminal mse %.4g over %s seeds", label, sum(r[2] for r in table if r[0] == label) / len(seeds), len(seeds))
    return CompareResult(table, curves, term_var)


def inference_discrepancy(variant, score_fn, x0, n_steps=100, n_runs=1000, seed=42, t_min=1e-3):
    """Mean ||x0 - x0_hat||^2 for both initialisations."""
    out = {}
    for init in INITS:
        run = sample(variant, score_fn, n_steps, init, seed, n_runs, x0=x0, t_min=t_min)
        out[init] = ((run.terminal - as_vector(x0, variant.d)) ** 2).sum(dim=1).mean().item()
    return out


def recurrence_time(run, x0, eps):
    """Per run, the first reverse time whose state lies within eps of x0 (None if never)."""
    if run.states is None:
        raise DomainError("recurrence_time needs a run sampled with keep_states=True")
    x0 = torch.as_tensor(x0, dtype=DTYPE)
    inside = torch.linalg.vector_norm(run.states - x0, dim=-1) <= eps
    out = []
    for r in range(inside.shape[1]):
        hits = torch.nonzero(inside[:, r]).flatten()
        out.append(run.times[hits[0]].item() if len(hits) else None)
    return out
