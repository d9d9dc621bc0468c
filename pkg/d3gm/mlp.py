"""A small tanh multilayer perceptron with hand-written backpropagation.

Input is [x (d), lifted measurement (d), time features]; output has d entries.
Parameters are plain float64 tensors; no autograd is involved.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .brownian import generator
from .errors import ConfigError, DomainError
from .utils import DTYPE, sha256_text

log = logging.getLogger("d3gm")

ACTIVATIONS = ("tanh",)


def time_features(t):
    """(t, sin 2 pi t, cos 2 pi t) for a batch of times, shaped (n, 3)."""
    t = torch.as_tensor(t, dtype=DTYPE).reshape(-1, 1)
    return torch.cat([t, torch.sin(2 * math.pi * t), torch.cos(2 * math.pi * t)], dim=1)


N_TIME_FEATURES = 3


@dataclass(eq=False)
class MlpParams:
    widths: list
    weights: list
    biases: list
    activation: str = "tanh"
    n_time_features: int = N_TIME_FEATURES

    @property
    def d(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return sum(w.numel() + b.numel() for w, b in zip(self.weights, self.biases))

    def flat(self):
        return torch.cat([p.reshape(-1) for w, b in zip(self.weights, self.biases) for p in (w, b)])

    def load_flat(self, vec):
        vec = torch.as_tensor(vec, dtype=DTYPE)
        if vec.numel() != self.n_params:
            raise DomainError(f"expected {self.n_params} parameters, got {vec.numel()}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos : pos + w.numel()].reshape(w.shape).clone()
            pos += w.numel()
            self.biases[i] = vec[pos : pos + b.numel()].clone()
            pos += b.numel()
        return self

    def copy(self):
        return MlpParams(
            list(self.widths),
            [w.clone() for w in self.weights],
            [b.clone() for b in self.biases],
            self.activation,
            self.n_time_features,
        )

    def parameters(self):
        """Layer tensors in flat order (W then b per layer); optimizers update them in place."""
        return [p for w, b in zip(self.weights, self.biases) for p in (w, b)]

    def is_finite(self):
        return all(torch.isfinite(p).all() for p in self.weights + self.biases)


def init_mlp(d, hidden=(64, 64), seed=42, activation="tanh"):
    if activation not in ACTIVATIONS:
        raise ConfigError(f"Unknown activation {activation!r}, expected one of: {', '.join(ACTIVATIONS)}")
    widths = [2 * d + N_TIME_FEATURES, *hidden, d]
    g = generator(seed, "init", 0)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(torch.randn((fan_out, fan_in), generator=g, dtype=DTYPE) / math.sqrt(fan_in))
        biases.append(torch.zeros(fan_out, dtype=DTYPE))
    return MlpParams(widths, weights, biases, activation)


def net_input(x, y, t):
    x = torch.as_tensor(x, dtype=DTYPE)
    y = torch.zeros_like(x) if y is None else torch.as_tensor(y, dtype=DTYPE).expand_as(x)
    n = x.shape[0]
    feats = time_features(t)
    if feats.shape[0] == 1 and n > 1:
        feats = feats.expand(n, -1)
    return torch.cat([x, y, feats], dim=1)


def mlp_forward(net, inp):
    """Returns (output, cache); cache holds every layer's input for the backward pass."""
    cache = [inp]
    h = inp
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = z if i == last else torch.tanh(z)
        cache.append(h)
    return h, cache


def mlp_backward(net, cache, grad_out):
    """Gradients (dW, db) per layer for d(loss)/d(output) = grad_out."""
    grads = [None] * len(net.weights)
    g = grad_out
    for i in reversed(range(len(net.weights))):
        h_in = cache[i]
        grads[i] = (g.T @ h_in, g.sum(dim=0))
        if i > 0:
            g = (g @ net.weights[i]) * (1 - cache[i] ** 2)
    return grads


def flat_grads(grads):
    return torch.cat([p.reshape(-1) for dw, db in grads for p in (dw, db)])


def save_checkpoint(path, net, seed, loss_weight_mode):
    """Writes <path>.json (manifest) and <path>.bin (little-endian float64, W then b per layer)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = net.flat().numpy().astype("<f8").tobytes()
    manifest = {
        "widths": net.widths,
        "activation": net.activation,
        "n_time_features": net.n_time_features,
        "seed": seed,
        "loss_weight_mode": loss_weight_mode,
        "n_params": net.n_params,
        "sha256": sha256_text(blob.hex()),
    }
    path.with_suffix(".bin").write_bytes(blob)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("Saved checkpoint %s (%s parameters)", path, net.n_params)
    return manifest


def load_checkpoint(path):
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    blob = path.with_suffix(".bin").read_bytes()
    if sha256_text(blob.hex()) != manifest["sha256"]:
        raise ConfigError(f"checkpoint {path} does not match its manifest checksum")
    widths = manifest["widths"]
    weights = [torch.zeros(b, a, dtype=DTYPE) for a, b in zip(widths[:-1], widths[1:])]
    biases = [torch.zeros(b, dtype=DTYPE) for b in widths[1:]]
    net = MlpParams(widths, weights, biases, manifest["activation"], manifest["n_time_features"])
    net.load_flat(torch.from_numpy(np.frombuffer(blob, dtype="<f8").copy()))
    return net, manifest
