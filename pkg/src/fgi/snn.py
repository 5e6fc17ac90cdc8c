"""Adaptive LIF neurons and a one-hidden-layer recurrent spiking network.

Per step, for input current ``I``::

    u     = alpha * u_prev + (1 - alpha) * I - theta_prev * z_prev
    eta   = gamma * eta_prev + (1 - gamma) * z_prev
    theta = b0 + beta * eta
    z     = step(u - theta)          # surrogate gradient attached here

The network feeds ``I_t = x_t W_in + z_{t-1} W_rec`` and reads out an
affine map of the final membrane potential (or final spikes).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .autograd import Tape, Var, backward
from .surrogate import DEFAULT_SHAPE, Mechanism, SurrogateShape, spike

PARAM_NAMES = ("W_in", "W_rec", "W_out", "b_out")


@dataclass(frozen=True)
class AlifParams:
    dt: float = 1.0
    tau_m: float = 20.0
    tau_adp: float = 200.0
    b0: float = 1.0
    beta: float = 1.8
    # Decays default to exp(-dt/tau); pass them to pin exact values.
    alpha: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if not (self.tau_m > 0 and self.tau_adp > 0):
            raise ValueError("time constants must be positive")
        if self.alpha is None:
            object.__setattr__(self, "alpha", math.exp(-self.dt / self.tau_m))
        if self.gamma is None:
            object.__setattr__(self, "gamma", math.exp(-self.dt / self.tau_adp))


@dataclass
class AlifState:
    u: Var
    eta: Var
    theta: Var
    z: Var


@dataclass(frozen=True)
class NetworkConfig:
    n_in: int
    hidden: int
    classes: int
    shape: SurrogateShape = DEFAULT_SHAPE
    mechanism: Mechanism = Mechanism.INJECT
    seed: int = 0
    alif: AlifParams = field(default_factory=AlifParams)
    readout: str = "membrane"

    def __post_init__(self):
        if min(self.n_in, self.hidden, self.classes) < 1:
            raise ValueError("network sizes must be >= 1")
        if self.readout not in ("membrane", "spikes"):
            raise ValueError(f"unknown readout {self.readout!r}")
        object.__setattr__(self, "mechanism", Mechanism.parse(self.mechanism))


def initial_state(tape: Tape, batch: int, hidden: int, p: AlifParams) -> AlifState:
    zeros = T.zeros((batch, hidden), tape.dtype)
    return AlifState(
        u=tape.leaf(zeros, name="u0"),
        eta=tape.leaf(zeros, name="eta0"),
        theta=tape.leaf(T.full((batch, hidden), p.b0, tape.dtype), name="theta0"),
        z=tape.leaf(zeros, name="z0"),
    )


def alif_step(
    s: AlifState,
    I: Var,
    p: AlifParams,
    shape: SurrogateShape = DEFAULT_SHAPE,
    mech=Mechanism.INJECT,
) -> AlifState:
    if I.shape != s.u.shape:
        raise T.ShapeError(f"input current {I.shape} does not match state {s.u.shape}")
    u = p.alpha * s.u + (1.0 - p.alpha) * I - s.theta * s.z
    eta = p.gamma * s.eta + (1.0 - p.gamma) * s.z
    theta = p.b0 + p.beta * eta
    z = spike(u - theta, shape, mech)
    return AlifState(u, eta, theta, z)


def init_weights(cfg: NetworkConfig, dtype=T.DEFAULT_DTYPE) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    w = {
        "W_in": rng.standard_normal((cfg.n_in, cfg.hidden)) / math.sqrt(cfg.n_in),
        "W_rec": 0.5 * rng.standard_normal((cfg.hidden, cfg.hidden)) / math.sqrt(cfg.hidden),
        "W_out": rng.standard_normal((cfg.hidden, cfg.classes)) / math.sqrt(cfg.hidden),
        "b_out": np.zeros((1, cfg.classes)),
    }
    return {k: T.freeze(v.astype(dtype)) for k, v in w.items()}


@dataclass
class Forward:
    tape: Tape
    params: Dict[str, Var]
    logits: Var
    state: AlifState
    spikes: List[np.ndarray]


def forward_sequence(
    inputs: np.ndarray,
    cfg: NetworkConfig,
    weights: Dict[str, np.ndarray],
    tape: Optional[Tape] = None,
) -> Forward:
    """Unroll the network over ``inputs`` of shape ``[T, batch, n_in]``."""
    inputs = np.asarray(inputs)
    if inputs.ndim != 3 or inputs.shape[0] < 1 or inputs.shape[2] != cfg.n_in:
        raise T.ShapeError(f"inputs must be [T>=1, batch, {cfg.n_in}], got {inputs.shape}")
    expected = {
        "W_in": (cfg.n_in, cfg.hidden),
        "W_rec": (cfg.hidden, cfg.hidden),
        "W_out": (cfg.hidden, cfg.classes),
        "b_out": (1, cfg.classes),
    }
    for name, shp in expected.items():
        if np.shape(weights[name]) != shp:
            raise T.ShapeError(f"{name} must be {shp}, got {np.shape(weights[name])}")

    tape = tape if tape is not None else Tape()
    batch = inputs.shape[1]
    params = {k: tape.leaf(weights[k], requires_grad=True, name=k) for k in PARAM_NAMES}
    s = initial_state(tape, batch, cfg.hidden, cfg.alif)
    spikes = []
    for t in range(inputs.shape[0]):
        x_t = tape.leaf(inputs[t], name=f"x{t}")
        current = x_t @ params["W_in"] + s.z @ params["W_rec"]
        s = alif_step(s, current, cfg.alif, cfg.shape, cfg.mechanism)
        spikes.append(s.z.value)
    readout = s.u if cfg.readout == "membrane" else s.z
    ones = tape.leaf(T.ones((batch, 1), tape.dtype), name="ones_b")
    logits = readout @ params["W_out"] + ones @ params["b_out"]
    return Forward(tape, params, logits, s, spikes)


def bptt_gradients(loss: Var, names=PARAM_NAMES) -> Dict[str, np.ndarray]:
    grads = backward(loss)
    return {k: grads[k] for k in names}


# Checkpoint layout (little-endian): magic, u32 version, u32 count, then per
# tensor u16 name length, utf-8 name, u32 rank, u64 extents; float64 data for
# all tensors follows in the same order.
MAGIC = b"FGIW"
VERSION = 1


def save_weights(path, weights: Dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for name, w in weights.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{w.ndim}Q", w.ndim, *w.shape))
    for w in weights.values():
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> Dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a weight checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    table = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2 : pos + 2 + n].decode()
        pos += 2 + n
        (rank,) = struct.unpack_from("<I", buf, pos)
        shape = struct.unpack_from(f"<{rank}Q", buf, pos + 4)
        pos += 4 + 8 * rank
        table.append((name, shape))
    out = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * size > len(buf):
            raise ValueError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
        out[name] = T.freeze(arr.astype(np.float64))
        pos += 8 * size
    return out
