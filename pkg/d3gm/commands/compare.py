import logging

from ..config import broadcast_vector, build_params, build_schedule
from ..errors import ConfigError
from ..reverse import CompareResult, trajectory_compare
from ..score import DataSpec
from ..variants import KINDS, VariantSpec
from .base import Command

log = logging.getLogger("d3gm")


def build_variants(cfg):
    c = cfg.compare
    params = build_params(cfg, mu=c.mu, **{"lambda": cfg.get("compare", "lambda")})
    sched = build_schedule(cfg)
    variants = []
    for kind in c.variants:
        if kind not in KINDS:
            raise ConfigError(f"Unknown variant {kind!r} in compare.variants, expected one of: {', '.join(KINDS)}")
        variants.append(VariantSpec.create(kind, params, sched, sigma=c.decoupled_sigma))
    return variants


class Compare(Command):
    NAME = "compare"
    HELP = "Reverse sampling of every variant on the shared Gaussian toy"

    def run(self, cfg, out):
        c = cfg.compare
        d = cfg.get("process", "d")
        data = DataSpec.gaussian(broadcast_vector(c.data_mean, d, "compare.data_mean"), c.data_std)
        variants = build_variants(cfg)
        result = trajectory_compare(variants, data, c.seeds, c.steps, c.runs, c.init, c.t_min)
        out.csv("table.csv", CompareResult.TABLE_HEADER, result.table)
        out.csv("curves.csv", CompareResult.CURVE_HEADER, result.curves)
        labels = [v.kind for v in variants]
        summary = {
            "mean_mse": {k: result.mean_mse(k) for k in labels},
            "terminal_variance": result.terminal_variance,
            "variants": [v.describe() for v in variants],
        }
        if "d3gm" in labels and "ou" in labels:
            summary["d3gm_wins_vs_ou"] = result.wins("d3gm", "ou")
        out.json("summary.json", summary)
        return summary
