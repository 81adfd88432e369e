"""Feedforward policy network with bounded outputs and flat-parameter plumbing.

The network is a plain MLP whose final stage squashes each output into a
configured interval, so thrust magnitude and direction commands respect
their physical limits by construction.  Parameters live in one flat
vector so that corrections can treat them as a single decision variable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np

from .diff import Dual, concat

__all__ = [
    "PolicyNetwork",
    "forward",
    "flatten",
    "unflatten",
    "init_parameters",
    "parameter_count",
    "policy_input",
    "save_checkpoint",
    "load_checkpoint",
    "LengthMismatch",
]

CHECKPOINT_FORMAT = "bounded-mlp-checkpoint-v1"

_HIDDEN_TAGS = ("tanh", "linear")


class LengthMismatch(ValueError):
    """Flat parameter vector does not match the architecture."""


def parameter_count(layer_dims: Sequence[int]) -> int:
    return sum(din * dout + dout for din, dout in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass(frozen=True)
class PolicyNetwork:
    """MLP with per-layer activation tags and a bounded output stage.

    `activations` carries one tag per affine layer plus a final "scale"
    tag for the output squashing; `theta` is the flat parameter vector
    laid out as row-major weights followed by biases, layer by layer.
    That layout is frozen: corrections rely on it.
    """

    layer_dims: Tuple[int, ...]
    activations: Tuple[str, ...]
    y_lb: np.ndarray
    y_ub: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        acts = tuple(self.activations)
        if len(acts) != len(dims) or acts[-1] != "scale":
            raise ValueError("activations must tag each affine layer and end with 'scale'")
        if any(a not in _HIDDEN_TAGS for a in acts[:-1]):
            raise ValueError(f"layer activations must be in {_HIDDEN_TAGS}")
        object.__setattr__(self, "activations", acts)
        lb = np.asarray(self.y_lb, dtype=float).copy()
        ub = np.asarray(self.y_ub, dtype=float).copy()
        if lb.shape != (dims[-1],) or ub.shape != (dims[-1],):
            raise ValueError("bounds must be one (lb, ub) pair per output")
        if not np.all(ub > lb):
            raise ValueError("need y_lb < y_ub for every output")
        th = np.asarray(self.theta, dtype=float).copy()
        if th.shape != (parameter_count(dims),):
            raise LengthMismatch(
                f"theta has {th.size} entries, architecture needs {parameter_count(dims)}")
        for a in (lb, ub, th):
            a.setflags(write=False)
        object.__setattr__(self, "y_lb", lb)
        object.__setattr__(self, "y_ub", ub)
        object.__setattr__(self, "theta", th)

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]


def forward(net: PolicyNetwork, inp, theta=None):
    """Evaluate the policy; accepts Dual inputs and/or Dual parameters.

    The output stage maps each pre-activation u to
    (y_ub - y_lb) * sigmoid(u) + y_lb, written via tanh for numerical
    stability, so every output lies inside its configured interval.
    """
    th = net.theta if theta is None else theta
    a = inp
    off = 0
    for din, dout, act in zip(net.layer_dims[:-1], net.layer_dims[1:],
                              net.activations[:-1]):
        W = th[off:off + din * dout].reshape(dout, din)
        off += din * dout
        b = th[off:off + dout]
        off += dout
        a = W @ a + b
        if act == "tanh":
            a = np.tanh(a)
    return net.y_lb + (net.y_ub - net.y_lb) * (0.5 * (1.0 + np.tanh(0.5 * a)))


def flatten(net: PolicyNetwork) -> np.ndarray:
    """Copy of the flat parameter vector."""
    return net.theta.copy()


def unflatten(net: PolicyNetwork, theta) -> PolicyNetwork:
    """Same architecture with a replaced parameter vector."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (net.n_params,):
        raise LengthMismatch(f"expected {net.n_params} parameters, got {theta.shape}")
    return replace(net, theta=theta)


def init_parameters(layer_dims: Sequence[int], seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; reproducible per seed."""
    rng = np.random.default_rng(seed)
    parts = []
    for din, dout in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (din + dout))
        parts.append(rng.uniform(-bound, bound, size=(dout, din)).ravel())
        parts.append(np.zeros(dout))
    return np.concatenate(parts)


def policy_input(x, r_fd, v_fd, s0: float, V0: float):
    """Normalized position and velocity errors feeding the descent policy."""
    return concat(((x[0:3] - r_fd) / s0, (x[3:6] - v_fd) / V0))


def save_checkpoint(net: PolicyNetwork, path) -> None:
    record = {
        "format": CHECKPOINT_FORMAT,
        "layer_dims": list(net.layer_dims),
        "activations": list(net.activations),
        "y_lb": [float(v) for v in net.y_lb],
        "y_ub": [float(v) for v in net.y_ub],
        "theta": [float(v) for v in net.theta],
    }
    with open(path, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> PolicyNetwork:
    with open(path) as fh:
        record = json.load(fh)
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format in {path}")
    return PolicyNetwork(
        layer_dims=tuple(record["layer_dims"]),
        activations=tuple(record["activations"]),
        y_lb=np.array(record["y_lb"], dtype=float),
        y_ub=np.array(record["y_ub"], dtype=float),
        theta=np.array(record["theta"], dtype=float),
    )
