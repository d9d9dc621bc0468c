"""Denoising score matching for the MLP score network.

By default the raw network output is the score and the loss is the mean
squared error against the kernel score. Optionally the output is divided by
sqrt(v_t) and each residual weighted by v_t; with both switched on the
objective is the noise-prediction loss ||out + z||^2. The overall scale is
1/tau^2 (paper-magnitude) or 1 (unit).
"""

import logging
import math
from dataclasses import dataclass, field

import torch

from .brownian import generator
from .errors import ConfigError, TrainingError
from .forward import kernel_coefficients
from .mlp import mlp_backward, mlp_forward, net_input
from .score import kernel_score
from .utils import DTYPE, Timer

log = logging.getLogger("d3gm")

LOSS_WEIGHT_MODES = ("paper-magnitude", "unit")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 128
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 42
    t_min: float = 1e-3
    T: float = None
    loss_weight_mode: str = "paper-magnitude"
    output_scaling: bool = False
    variance_weighting: bool = False
    conditioning: bool = True
    decay_every: int = 0
    decay_rate: float = 0.5
    log_every: int = 200

    def __post_init__(self):
        if not self.t_min > 0:
            raise ConfigError(f"t_min must be positive, got {self.t_min}")
        if self.T is not None and not self.T > self.t_min:
            raise ConfigError(f"T={self.T} must exceed t_min={self.t_min}")
        if self.loss_weight_mode not in LOSS_WEIGHT_MODES:
            raise ConfigError(f"Unknown loss_weight_mode {self.loss_weight_mode!r}, expected one of: {', '.join(LOSS_WEIGHT_MODES)}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer {self.optimizer!r}, expected one of: {', '.join(OPTIMIZERS)}")
        if self.steps < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError(f"steps, batch_size and lr must be positive, got {self.steps}, {self.batch_size}, {self.lr}")

    def horizon(self, sched):
        return sched.t_end if self.T is None else self.T

    def loss_weight(self, params):
        return 1.0 / params.tau**2 if self.loss_weight_mode == "paper-magnitude" else 1.0


@dataclass(eq=False)
class Batch:
    x0: torch.Tensor
    y: torch.Tensor
    t: torch.Tensor
    x_t: torch.Tensor
    mu: torch.Tensor


def make_batch(data, n, params, sched, cfg, rng):
    """Draws x0 (and its lifted measurement), a time in (t_min, T] and x_t from the kernel.

    The measurement always sets the kernel target; with ``cfg.conditioning`` off it is
    withheld from the network input.
    """
    x0, y = data.draw(n, rng)
    mu = params.mu.expand_as(x0) if y is None else y
    if not cfg.conditioning:
        y = None
    T = cfg.horizon(sched)
    u = torch.rand(n, generator=rng, dtype=DTYPE)
    t = cfg.t_min + (T - cfg.t_min) * (1 - u)
    a, v = kernel_coefficients(t.reshape(-1, 1), params, sched)
    z = torch.randn(x0.shape, generator=rng, dtype=DTYPE)
    return Batch(x0, y, t, mu + (x0 - mu) * a + torch.sqrt(v) * z, mu)


def score_output(net, x, y, t, v, scaled=False):
    out, cache = mlp_forward(net, net_input(x, y, t))
    scale = 1 / torch.sqrt(v) if scaled else torch.ones_like(v)
    return out * scale, cache, scale


def dsm_loss(net, batch, params, sched, cfg):
    """(loss, per-layer gradients) of the weighted score-matching objective on one batch."""
    a, v = kernel_coefficients(batch.t.reshape(-1, 1), params, sched)
    target = kernel_score(batch.x_t, batch.x0, a, v, batch.mu)
    S, cache, scale = score_output(net, batch.x_t, batch.y, batch.t, v, cfg.output_scaling)
    resid = S - target
    lam = v if cfg.variance_weighting else torch.ones_like(v)
    n = resid.shape[0]
    w = cfg.loss_weight(params)
    loss = w * (lam * resid**2).sum().item() / n
    grad_out = (2 * w / n) * lam * resid * scale
    return loss, mlp_backward(net, cache, grad_out)


def make_optimizer(net, cfg):
    """torch.optim optimizer over the layer tensors of ``net``, with step decay when configured."""
    cls = torch.optim.Adam if cfg.optimizer == "adam" else torch.optim.SGD
    opt = cls(net.parameters(), lr=cfg.lr)
    decay = torch.optim.lr_scheduler.StepLR(opt, cfg.decay_every, cfg.decay_rate) if cfg.decay_every else None
    return opt, decay


def assign_grads(net, grads):
    for p, g in zip(net.parameters(), (g for dw, db in grads for g in (dw, db))):
        p.grad = g


@dataclass
class TrainResult:
    net: object
    losses: list = field(default_factory=list)

    @property
    def initial_loss(self):
        return self.losses[0]

    @property
    def final_loss(self):
        return self.losses[-1]


def train(net, data, params, sched, cfg):
    """Trains a copy of ``net``; deterministic given cfg.seed."""
    net = net.copy()
    rng = generator(cfg.seed, "train", 0)
    opt, decay = make_optimizer(net, cfg)
    losses = []
    with Timer(f"training for {cfg.steps} steps"):
        for step in range(cfg.steps):
            batch = make_batch(data, cfg.batch_size, params, sched, cfg, rng)
            loss, grads = dsm_loss(net, batch, params, sched, cfg)
            if not math.isfinite(loss):
                log.error("Score training diverged at step %s", step)
                raise TrainingError(f"non-finite loss at step {step}", step=step)
            losses.append(loss)
            opt.zero_grad()
            assign_grads(net, grads)
            opt.step()
            if decay is not None:
                decay.step()
            if not net.is_finite():
                raise TrainingError(f"non-finite parameters after step {step}", step=step)
            if cfg.log_every and step % cfg.log_every == 0:
                log.debug("step %s: loss %.6g", step, loss)
    log.info("Trained score network: loss %.4g -> %.4g over %s steps", losses[0], losses[-1], cfg.steps)
    return TrainResult(net, losses)


class NetScore:
    """Score function backed by a trained network, S = out / sqrt(v_t) when scaled."""

    def __init__(self, net, params, sched, scaled=False, kernel=None):
        self.net = net
        self.params = params
        self.sched = sched
        self.scaled = scaled
        self.kernel = kernel

    def variance(self, t):
        """v_t as a column for a tensor of times, or a 0-d tensor for a float."""
        if isinstance(t, torch.Tensor) and t.ndim:
            if self.kernel is None:
                v = kernel_coefficients(t, self.params, self.sched)[1]
            else:
                v = torch.tensor([self.kernel(float(s))[1] for s in t], dtype=DTYPE)
            return v.reshape(-1, 1)
        t = float(t)
        v = self.kernel(t)[1] if self.kernel is not None else kernel_coefficients(t, self.params, self.sched)[1]
        return torch.tensor(v, dtype=DTYPE)

    def __call__(self, x, t, mu=None, y=None):
        x = torch.as_tensor(x, dtype=DTYPE)
        tt = torch.as_tensor(t, dtype=DTYPE)
        S, _, _ = score_output(self.net, x, y, tt, self.variance(t), self.scaled)
        return S


def score_relative_error(score_fn, oracle, x, t, mu=None, y=None):
    """||S - S*|| / ||S*|| over all points (relative L2)."""
    S = score_fn(x, t, mu, y)
    S_star = oracle(x, t, mu, y)
    return (torch.linalg.vector_norm(S - S_star) / torch.linalg.vector_norm(S_star)).item()
