import logging
from dataclasses import replace

from ..config import broadcast_vector, build_params, build_schedule, build_volatility
from ..discrepancy import (
    TddInputs,
    empirical_forward_gap,
    empirical_kl_to_stationary,
    empirical_tdd,
    initial_magnitude_I0,
    kl_to_stationary,
    tdd_sweep,
)
from ..schedules import CoupledVolatility
from .base import Command

log = logging.getLogger("d3gm")


class Tdd(Command):
    NAME = "tdd"
    HELP = "Distribution discrepancy bound, its sweep over T and the tau sweep of KL to the stationary law"

    def run(self, cfg, out):
        t = cfg.tdd
        mc = cfg.mc
        # the Gaussian toy keeps the schedule kind and tau but has its own x0, mu, lambda and theta
        sched = replace(build_schedule(cfg), theta=t.theta)
        params = build_params(cfg, mu=t.mu, **{"lambda": cfg.get("tdd", "lambda")})
        vol = build_volatility(cfg, params)
        x0 = broadcast_vector(t.x0, params.d, "tdd.x0")
        inputs = TddInputs(x0, params, sched, t.t, t.delta, t.c, t.sigma_max, vol)
        report = empirical_tdd(inputs, t.runs, mc.seed, mc.steps)
        result = {**report.to_dict(), **inputs.describe(), "I0": initial_magnitude_I0(x0, params, sched, t.t)}
        if isinstance(vol, CoupledVolatility) and mc.paths >= 1000:
            mean_gap, var_gap = empirical_forward_gap(x0, params, sched, t.t, mc.paths, mc.seed, mc.steps)
            result["mean_gap"] = mean_gap.tolist()
            result["var_gap"] = var_gap
        out.json("tdd.json", result)
        out.csv("sweep.csv", ["T", "bound", "term_residual", "term_stationary", "term_noise"], tdd_sweep(inputs, t.t_grid))

        rows = []
        for tau in t.taus:
            p = params.with_(tau=tau)
            rows.append((tau, kl_to_stationary(x0, p, sched, t.t), empirical_kl_to_stationary(x0, p, sched, t.t, mc.paths, mc.seed, mc.steps)))
        out.csv("kl_tau.csv", ["tau", "kl", "kl_empirical"], rows)
        return result
