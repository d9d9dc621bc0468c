import csv
import hashlib
import json
import logging
import os
import re
import time
from pathlib import Path

import torch

log = logging.getLogger("d3gm")

DTYPE = torch.float64


def env_int(name, default):
    value = os.environ.get(name)
    if not value:
        return default
    try:
        return max(1, int(value))
    except ValueError:
        log.warning("Ignoring non-integer %s=%s", name, value)
        return default


def worker_count():
    return env_int("D3GM_THREADS", os.cpu_count() or 1)


def chunk_size():
    return env_int("D3GM_CHUNK", 1024)


def as_vector(x, d=None):
    v = torch.as_tensor(x, dtype=DTYPE)
    if v.ndim == 0:
        v = v.reshape(1) if d is None else v.repeat(d)
    return v


def parse_float_list(string):
    parts = [p for p in re.split(r"[,\s]+", string.strip()) if p]
    return [float(p) for p in parts]


def parse_bool(string):
    s = str(string).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {string!r}")


def fmt(value):
    if isinstance(value, torch.Tensor):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    log.info("Wrote %s", path)
    return path


def to_jsonable(value):
    if isinstance(value, torch.Tensor):
        return value.tolist()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def dump_json(obj):
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump_json(obj))
    log.info("Wrote %s", path)
    return path


def sha256_text(content):
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


class Timer:
    def __init__(self, name):
        self.name = name
        self.start = None
        self.elapsed = None

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed = time.perf_counter() - self.start
        if os.environ.get("D3GM_SHOW_TIMINGS"):
            log.info("Executed %s in %.3f seconds", self.name, self.elapsed)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
