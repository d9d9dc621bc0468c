import logging

import torch

from ..config import build_params, build_schedule, build_volatility, build_x0
from ..errors import AlignmentError
from ..forward import decoupled_marginal, marginal, simulate_ensemble, simulate_forward, write_ensemble, write_trajectories
from ..brownian import brownian_path
from ..schedules import CoupledVolatility
from .base import Command

log = logging.getLogger("d3gm")


def checkpoint_steps(times, t_end, n_steps):
    if not times:
        return list(range(n_steps + 1))
    dt = t_end / n_steps
    steps = []
    for t in times:
        k = round(t / dt)
        if abs(k * dt - t) > 1e-9 * max(1.0, t) or not 0 <= k <= n_steps:
            raise AlignmentError(f"checkpoint {t} is not on the {n_steps}-step grid over [0, {t_end}]")
        steps.append(k)
    return sorted(set(steps))


class Simulate(Command):
    NAME = "simulate"
    HELP = "Forward ensemble moments next to the closed-form marginals"

    def run(self, cfg, out):
        sched = build_schedule(cfg)
        params = build_params(cfg)
        vol = build_volatility(cfg, params)
        x0 = build_x0(cfg)
        mc = cfg.mc
        steps = checkpoint_steps(mc.checkpoints, sched.t_end, mc.steps)
        stats = simulate_ensemble(x0, params, sched, mc.steps, mc.paths, mc.seed, checkpoints=steps, volatility=vol)
        if out.wants("csv"):
            out.add(write_ensemble(out.dir / "ensemble.csv", stats))

        rows = []
        worst = 0.0
        for i, t in enumerate(stats.times.tolist()):
            if isinstance(vol, CoupledVolatility):
                m = marginal(x0, t, params, sched)
            else:
                m = decoupled_marginal(x0, t, params, sched, vol)
            rows.append((t, *m.mean.tolist(), m.variance))
            se = stats.standard_error()[i]
            z = ((stats.mean[i] - m.mean).abs() / torch.where(se > 0, se, torch.ones_like(se))).max().item()
            worst = max(worst, z)
        out.csv("marginal.csv", stats.header(), rows)

        if mc.trajectories and out.wants("csv"):
            dt = sched.t_end / mc.steps
            trajs = [
                simulate_forward(x0, params, sched, mc.steps, brownian_path(mc.seed, p, mc.steps, dt, params.d), vol)
                for p in range(mc.trajectories)
            ]
            out.add(write_trajectories(out.dir / "trajectories.csv", trajs))

        summary = {"paths": stats.n_paths, "steps": mc.steps, "max_mean_z": worst, "schedule": sched.describe()}
        out.json("summary.json", summary)
        log.info("Ensemble of %s paths: largest mean deviation %.2f standard errors", stats.n_paths, worst)
        return summary
