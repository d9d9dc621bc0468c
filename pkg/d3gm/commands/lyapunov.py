import logging

import torch

from ..config import build_params, build_schedule, build_volatility, build_x0
from ..errors import ConfigError
from ..rds import (
    FlowMap,
    LyapunovSpec,
    check_negative_definite,
    expected_lyapunov_curve,
    lyapunov_contraction_rate,
    process_drift,
    process_noise,
)
from ..utils import DTYPE
from .base import Command

log = logging.getLogger("d3gm")


def build_q(values, d):
    if not values:
        return torch.eye(d, dtype=DTYPE)
    if len(values) == d:
        return torch.diag(torch.tensor(values, dtype=DTYPE))
    if len(values) == d * d:
        return torch.tensor(values, dtype=DTYPE).reshape(d, d)
    raise ConfigError(f"lyapunov.q needs {d} diagonal entries or {d * d} matrix entries, got {len(values)}")


class Lyapunov(Command):
    NAME = "lyapunov"
    HELP = "Negative-definiteness scan of LV and the Monte Carlo curve of E[V]"

    def run(self, cfg, out):
        sched = build_schedule(cfg)
        params = build_params(cfg)
        fmap = FlowMap(params, sched, build_volatility(cfg, params))
        ly = cfg.lyapunov
        spec = LyapunovSpec(build_q(ly.q, params.d), ly.radius, ly.resolution, tuple(ly.times))
        b, sigma = process_drift(fmap), process_noise(fmap)
        report = check_negative_definite(spec, b, sigma)
        result = {**report.to_dict(), "contraction_rate": lyapunov_contraction_rate(spec, b, sigma)}
        out.json("lyapunov.json", result)
        times, values = expected_lyapunov_curve(fmap, spec.Q, build_x0(cfg), cfg.mc.steps, cfg.mc.paths, cfg.mc.seed)
        out.csv("expected_v.csv", ["t", "expected_v"], zip(times.tolist(), values.tolist()))
        return result

