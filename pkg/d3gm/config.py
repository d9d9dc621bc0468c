import copy
import logging
from dataclasses import dataclass
from types import SimpleNamespace

import lark

from .errors import ConfigError
from .forward import ProcessParams
from .schedules import DecoupledVolatility, Schedule
from .utils import dump_json, parse_bool, parse_float_list, sha256_text

log = logging.getLogger("d3gm")

config_parser = lark.Lark(
    r"""
start: _line*
_line: header | entry | _NL
header: "[" NAME "]" _NL
entry: NAME "=" [VALUE] _NL
NAME: /[A-Za-z_][A-Za-z0-9_]*/
VALUE: /[^\s#][^\n#]*/
COMMENT: /#[^\n]*/
_NL: /(\r?\n[\t ]*)+/
%ignore COMMENT
%ignore /[\t ]+/
""",
    parser="lalr",
)


class ConfigTransform(lark.Transformer):
    def header(self, args):
        return ("header", str(args[0]).lower())

    def entry(self, args):
        name, value = args
        return ("entry", str(name).lower(), "" if value is None else str(value).strip())

    def start(self, items):
        out = {}
        section = None
        for item in items:
            if item[0] == "header":
                section = item[1]
                if section in out:
                    raise ConfigError(f"Section [{section}] appears twice")
                out[section] = {}
                continue
            if section is None:
                raise ConfigError(f"Key {item[1]!r} appears before any [section]")
            if item[1] in out[section]:
                raise ConfigError(f"Key {section}.{item[1]} appears twice")
            out[section][item[1]] = item[2]
        return out


def parse_config_text(text):
    try:
        tree = config_parser.parse(text if text.endswith("\n") else text + "\n")
    except lark.exceptions.UnexpectedInput as e:
        raise ConfigError(f"Config syntax error at line {e.line}, column {e.column}") from None
    try:
        return ConfigTransform().transform(tree)
    except lark.exceptions.VisitError as e:
        raise e.orig_exc from None


def opt_float(s):
    s = s.strip().lower()
    if s in ("", "auto", "none"):
        return None
    return float(s)


def int_list(s):
    s = s.strip()
    if ".." in s:
        a, b = s.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in parse_float_list(s)]


def str_list(s):
    return [p.strip() for p in s.split(",") if p.strip()]


def lower_str(s):
    return s.strip().lower()


def pair_list(s):
    """'0.1:0.5, 0.2:0.7' -> [(0.1, 0.5), (0.2, 0.7)]"""
    pairs = []
    for item in str_list(s):
        a, b = item.split(":")
        pairs.append((float(a), float(b)))
    return pairs


# (parser, default) per key
SCHEMA = {
    "schedule": {
        "kind": (lower_str, "cosine"),
        "theta": (float, 1.0),
        "k": (float, 10.0),
        "t_end": (float, 1.0),
    },
    "process": {
        "mu": (parse_float_list, [0.0]),
        "x0": (parse_float_list, [2.0]),
        "lambda": (float, 10.0),
        "tau": (float, 2.0),
        "d": (int, 1),
        "volatility": (lower_str, "coupled"),
        "sigma": (float, 10.0),
    },
    "mc": {
        "paths": (int, 10000),
        "steps": (int, 100),
        "seed": (int, 42),
        "checkpoints": (parse_float_list, []),
        "trajectories": (int, 0),
    },
    "output": {
        "dir": (str, ""),
        "formats": (str_list, ["csv", "json"]),
    },
    "cocycle": {
        "pairs": (pair_list, [(0.1, 0.5), (0.2, 0.7), (0.3, 0.8), (0.5, 0.9), (0.0, 0.6)]),
        "tol": (float, 1e-9),
        "paths": (int, 100),
        "pullback": (parse_float_list, [-2.5, -5.0, -10.0, -20.0]),
        "pullback_paths": (int, 1000),
    },
    "tdd": {
        "x0": (parse_float_list, [20.0]),
        "mu": (parse_float_list, [0.0]),
        "lambda": (float, 0.1),
        "theta": (float, 2.0),
        "t": (float, 1.0),
        "delta": (float, 0.05),
        "c": (opt_float, 1.0),
        "sigma_max": (opt_float, None),
        "runs": (int, 500),
        "t_grid": (parse_float_list, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
        "taus": (parse_float_list, [1.0, 2.0, 4.0]),
    },
    "train": {
        "steps": (int, 4000),
        "batch": (int, 128),
        "lr": (float, 1e-3),
        "optimizer": (lower_str, "adam"),
        "t_min": (float, 1e-3),
        "loss_weight_mode": (lower_str, "paper-magnitude"),
        "hidden": (int_list, [64, 64]),
        "output_scaling": (parse_bool, True),
        "variance_weighting": (parse_bool, True),
        "conditioning": (parse_bool, True),
        "decay_every": (int, 0),
        "decay_rate": (float, 0.5),
    },
    "problem": {
        "d": (int, 16),
        "factor": (int, 2),
        "noise_sigma": (float, 0.05),
        "lambda": (float, 1.0),
        "train_seed": (int, 1),
        "test_seed": (int, 2),
        "n_test": (int, 10),
        "samples": (int, 8),
        "steps": (int, 100),
    },
    "compare": {
        "variants": (str_list, ["d3gm", "ou", "coef-decoupled", "sgm-vp"]),
        "seeds": (int_list, list(range(10))),
        "runs": (int, 1000),
        "steps": (int, 100),
        "init": (lower_str, "from-stationary"),
        "t_min": (float, 1e-3),
        "data_mean": (parse_float_list, [0.0]),
        "data_std": (float, 0.5),
        "mu": (parse_float_list, [10.0]),
        "lambda": (float, 1.0),
        "decoupled_sigma": (float, 50.0),
    },
    "lyapunov": {
        "radius": (float, 1.0),
        "resolution": (int, 21),
        "times": (parse_float_list, [0.5, 1.0]),
        "q": (parse_float_list, []),
    },
}

SHORTHANDS = {"schedule": ("schedule", "kind"), "seed": ("mc", "seed"), "out": ("output", "dir")}


def _coerce(section, key, raw):
    try:
        parser, _ = SCHEMA[section][key]
    except KeyError:
        if section not in SCHEMA:
            raise ConfigError(f"Unknown config section [{section}]") from None
        raise ConfigError(f"Unknown config key {section}.{key}") from None
    try:
        return parser(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"Invalid value for {section}.{key}: {raw!r}") from None


@dataclass
class RunConfig:
    command: str
    values: dict

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in values:
            return SimpleNamespace(**values[name])
        raise AttributeError(name)

    def get(self, section, key):
        return self.values[section][key]

    def resolved(self):
        return {"command": self.command, **self.values}

    def sha256(self):
        return sha256_text(dump_json(self.resolved()))


def defaults():
    return {section: {k: copy.deepcopy(v) for k, (_, v) in keys.items()} for section, keys in SCHEMA.items()}


def parse_overrides(tokens):
    """['--schedule.kind', 'linear', '--mc.paths=100'] -> [('schedule', 'kind', 'linear'), ...]"""
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"Unexpected argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"Missing value for {tok}")
            value = tokens[i + 1]
            i += 2
        if "." in name:
            section, key = name.split(".", 1)
        elif name in SHORTHANDS:
            section, key = SHORTHANDS[name]
        else:
            raise ConfigError(f"Unknown option {tok!r}; use --section.key value")
        out.append((section.lower(), key.lower().replace("-", "_"), value))
    return out


def load_config(command, path=None, overrides=()):
    """Schema defaults, then the config file, then command-line overrides."""
    values = defaults()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e.strerror}") from None
        for section, entries in parse_config_text(text).items():
            for key, raw in entries.items():
                values[section][key] = _coerce(section, key, raw)
        log.debug("Loaded config %s", path)
    for section, key, raw in overrides:
        values[section][key] = _coerce(section, key, raw)
    return RunConfig(command, values)


def build_schedule(cfg):
    s = cfg.values["schedule"]
    return Schedule(s["kind"], s["theta"], s["k"], s["t_end"])


def broadcast_vector(values, d, name):
    if len(values) == 1:
        return values * d
    if len(values) != d:
        raise ConfigError(f"{name} has {len(values)} entries but d={d}")
    return values


def build_params(cfg, **changes):
    p = {**cfg.values["process"], **changes}
    return ProcessParams(broadcast_vector(p["mu"], p["d"], "process.mu"), p["lambda"], p["tau"], p["d"])


def build_x0(cfg):
    p = cfg.values["process"]
    return broadcast_vector(p["x0"], p["d"], "process.x0")


def build_volatility(cfg, params):
    mode = cfg.values["process"]["volatility"]
    if mode == "coupled":
        return params.volatility
    if mode == "decoupled":
        return DecoupledVolatility(cfg.values["process"]["sigma"])
    raise ConfigError(f"process.volatility must be coupled or decoupled, got {mode!r}")
