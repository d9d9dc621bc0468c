import logging

from ..config import build_params, build_schedule, build_volatility, build_x0
from ..rds import FlowMap, check_cocycle, pullback_attractor_estimate
from .base import Command

log = logging.getLogger("d3gm")


class Cocycle(Command):
    NAME = "cocycle"
    HELP = "Cocycle check on shared noise replays, plus a pullback attractor estimate"

    def run(self, cfg, out):
        sched = build_schedule(cfg)
        params = build_params(cfg)
        fmap = FlowMap(params, sched, build_volatility(cfg, params))
        x0 = build_x0(cfg)
        c = cfg.cocycle
        report = check_cocycle(fmap, c.pairs, x0, c.paths, c.tol, cfg.mc.seed, cfg.mc.steps)
        out.json("cocycle.json", report.to_dict())
        if c.pullback:
            spread = [[v * scale for v in x0] for scale in (1.0, -1.0, 10.0, -10.0)]
            estimate = pullback_attractor_estimate(fmap, spread, c.pullback, cfg.mc.seed, c.pullback_paths, sched.t_end / cfg.mc.steps)
            out.json("pullback.json", {**estimate.to_dict(), "stationary_variance": params.stationary_variance})
        return report.to_dict()
