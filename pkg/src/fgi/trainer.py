"""Loss, optimisers, training loop and evaluation for the sequential task."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .autograd import Tape, UsageError, Var, backward
from .data import Dataset, SeqConfig, synthetic_dataset, to_sequence_batch
from .snn import AlifParams, NetworkConfig, PARAM_NAMES, forward_sequence, init_weights
from .surrogate import DEFAULT_SHAPE, Mechanism, SurrogateShape


def cross_entropy_last(logits: Var, labels) -> Var:
    """Mean softmax cross-entropy of last-step logits ``[batch, classes]``."""
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise UsageError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise UsageError(f"labels must lie in [0, {classes})")
    tape = logits.tape
    onehot = np.zeros((batch, classes), dtype=tape.dtype)
    onehot[np.arange(batch), labels] = 1.0
    onehot = tape.leaf(onehot, name="labels_onehot")
    ones = tape.leaf(T.ones((1, classes), tape.dtype), name="ones_c")
    shifted = logits - logits.max(axis=1) @ ones
    lse = shifted.exp().sum(axis=1).log()
    picked = (shifted * onehot).sum(axis=1)
    return (lse - picked).sum() / float(batch)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    # np.argmax breaks ties toward the lowest class index
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        return {k: T.freeze(p - self.lr * grads[k]) for k, p in params.items()}


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - self.b1**self.t)
            v_hat = v / (1 - self.b2**self.t)
            out[k] = T.freeze(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(params, grads, optimizer):
    return optimizer.step(params, grads)


@dataclass
class TrainConfig:
    iterations: int = 200
    lr: float = 0.01
    optimizer: str = "adam"
    seed: int = 0
    mechanism: Mechanism = Mechanism.INJECT
    shape: SurrogateShape = DEFAULT_SHAPE
    seq: SeqConfig = field(default_factory=lambda: SeqConfig(28, 128))
    hidden: int = 16
    alif: AlifParams = field(default_factory=AlifParams)
    readout: str = "membrane"
    precision: str = "f64"

    def __post_init__(self):
        self.mechanism = Mechanism.parse(self.mechanism)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        # lr == 0 is allowed: it freezes the weights (useful as a control run)
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    @property
    def batch_size(self) -> int:
        return self.seq.batch_size

    @property
    def dtype(self):
        return T.DTYPES[self.precision]

    def network(self, classes: int) -> NetworkConfig:
        return NetworkConfig(
            n_in=self.seq.inputs_per_step,
            hidden=self.hidden,
            classes=classes,
            shape=self.shape,
            mechanism=self.mechanism,
            seed=self.seed,
            alif=self.alif,
            readout=self.readout,
        )


@dataclass
class Metrics:
    loss: List[float] = field(default_factory=list)
    acc: List[float] = field(default_factory=list)
    fwd_ms: List[float] = field(default_factory=list)
    bwd_ms: List[float] = field(default_factory=list)
    weights: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss", "acc", "fwd_ms", "bwd_ms"])
            for i, row in enumerate(zip(self.loss, self.acc, self.fwd_ms, self.bwd_ms)):
                loss, acc, f, b = row
                w.writerow([i, repr(loss), repr(acc), f"{f:.3f}", f"{b:.3f}"])


def _ms(ns: int) -> float:
    return round(ns / 1e6, 3)


def train(cfg: TrainConfig, dataset: Optional[Dataset] = None) -> Metrics:
    """Run ``cfg.iterations`` optimisation steps; returns metrics and weights."""
    if dataset is None:
        dataset = synthetic_dataset(cfg.seed, n_per_class=cfg.batch_size, classes=2)
    net = cfg.network(dataset.classes)
    weights = init_weights(net, cfg.dtype)
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    batches = dataset.batches(cfg.batch_size, seed=cfg.seed)
    metrics = Metrics()
    for _ in range(cfg.iterations):
        images, labels = next(batches)
        inputs = to_sequence_batch(images, cfg.seq)
        t0 = time.perf_counter_ns()
        fwd = forward_sequence(inputs, net, weights, Tape(dtype=cfg.dtype))
        loss = cross_entropy_last(fwd.logits, labels)
        loss_value = float(loss.value)
        t1 = time.perf_counter_ns()
        grads = backward(loss)
        t2 = time.perf_counter_ns()
        weights = opt.step(weights, {k: grads[k] for k in PARAM_NAMES})
        metrics.loss.append(loss_value)
        metrics.acc.append(accuracy(fwd.logits.value, labels))
        metrics.fwd_ms.append(_ms(t1 - t0))
        metrics.bwd_ms.append(_ms(t2 - t1))
    metrics.weights = weights
    return metrics


def predict(weights: Dict[str, np.ndarray], images: np.ndarray, cfg: TrainConfig, classes: int) -> np.ndarray:
    net = cfg.network(classes)
    return forward_sequence(to_sequence_batch(images, cfg.seq), net, weights, Tape(dtype=cfg.dtype)).logits.value


def evaluate(weights: Dict[str, np.ndarray], dataset: Dataset, cfg: TrainConfig) -> float:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, len(dataset), cfg.batch_size):
        images = dataset.images[start : start + cfg.batch_size]
        labels = dataset.labels[start : start + cfg.batch_size]
        logits = predict(weights, images, cfg, dataset.classes)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels))
    return correct / len(dataset)
