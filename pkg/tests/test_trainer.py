import math

import numpy as np
import pytest

from fgi.autograd import Tape, UsageError, backward
from fgi.data import Dataset, SeqConfig, synthetic_dataset
from fgi.snn import init_weights
from fgi.surrogate import Mechanism
from fgi.trainer import (
    SGD, Adam, Metrics, TrainConfig, accuracy, cross_entropy_last, evaluate, train,
)


def ce(logits, labels):
    tape = Tape()
    z = tape.leaf(np.asarray(logits, dtype=float), requires_grad=True, name="z")
    loss = cross_entropy_last(z, labels)
    return float(loss.value), backward(loss)["z"]


def test_uniform_logits():
    loss, _ = ce(np.zeros((4, 10)), [0, 3, 9, 2])
    assert abs(loss - math.log(10)) <= 1e-15


def test_confident_correct_logit():
    loss, _ = ce([[1000.0, 0.0], [0.0, 1000.0]], [0, 1])
    assert loss == 0.0


def test_logit_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(0)
    _, g = ce(rng.standard_normal((5, 4)), [0, 1, 2, 3, 0])
    assert np.max(np.abs(g.sum(axis=1))) <= 1e-16


def test_labels_checked():
    with pytest.raises(UsageError):
        ce(np.zeros((2, 3)), [0, 3])
    with pytest.raises(UsageError):
        ce(np.zeros((2, 3)), [0])


def test_sgd_and_adam():
    p = {"w": np.array([1.0])}
    assert SGD(0.1).step(p, {"w": np.array([2.0])})["w"].tolist() == [0.8]
    assert SGD(0.1).step(p, {"w": np.array([0.0])})["w"].tolist() == [1.0]
    assert Adam(0.1).step(p, {"w": np.array([0.0])})["w"].tolist() == [1.0]
    # first bias-corrected step: m_hat = v_hat = 1, update = lr / (1 + eps)
    step = 1.0 - Adam(0.1).step(p, {"w": np.array([1.0])})["w"][0]
    assert abs(step - 0.1 / (1 + 1e-8)) <= 1e-15


def test_accuracy_ties_to_lowest_index():
    assert accuracy(np.array([[1.0, 1.0], [0.0, 2.0]]), np.array([0, 1])) == 1.0


def small(**kw):
    args = dict(iterations=30, seq=SeqConfig(28, 16), hidden=4, seed=0)
    args.update(kw)
    return TrainConfig(**args)


def test_config_invariants():
    with pytest.raises(ValueError):
        small(iterations=0)
    with pytest.raises(ValueError):
        small(lr=-1.0)


def test_deterministic_and_learns():
    a = train(small())
    b = train(small())
    assert a.loss == b.loss and a.acc == b.acc
    assert len(a.loss) == len(a.acc) == len(a.fwd_ms) == len(a.bwd_ms) == 30
    assert np.mean(a.loss[-10:]) < np.mean(a.loss[:10])


def test_zero_learning_rate_freezes_weights():
    data = synthetic_dataset(0, 8)
    cfg = small(lr=0.0, iterations=5)
    m = train(cfg, data)
    init = init_weights(cfg.network(2))
    assert all(m.weights[k].tobytes() == init[k].tobytes() for k in init)
    # one full batch every iteration; only its shuffled order (summation order) changes
    assert max(m.loss) - min(m.loss) <= 1e-15 * abs(m.loss[0])


def test_custom_and_inject_trajectories_agree():
    a = train(small(mechanism=Mechanism.CUSTOM_BACKWARD, iterations=20))
    b = train(small(mechanism=Mechanism.INJECT, iterations=20))
    assert max(abs(x - y) / abs(x) for x, y in zip(a.loss, b.loss)) <= 1e-8


@pytest.fixture(scope="module")
def trained():
    cfg = small(iterations=100, hidden=8)
    return cfg, train(cfg)


def test_evaluate(trained):
    cfg, m = trained
    test = synthetic_dataset(1, 32)
    assert evaluate(m.weights, test, cfg) > 0.5
    with pytest.raises(ValueError):
        evaluate(m.weights, synthetic_dataset(0, 0), cfg)


def test_shuffled_labels_near_chance(trained):
    cfg, m = trained
    test = synthetic_dataset(2, 128)
    rng = np.random.default_rng(0)
    shuffled = Dataset(test.images, rng.permutation(test.labels), 2)
    assert abs(evaluate(m.weights, shuffled, cfg) - 0.5) < 0.12


def test_metrics_csv(tmp_path):
    m = Metrics([0.5, 0.25], [0.5, 1.0], [1.0, 2.0], [3.0, 4.5])
    m.to_csv(tmp_path / "m.csv")
    raw = (tmp_path / "m.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "iter,loss,acc,fwd_ms,bwd_ms"
    assert lines[2] == "1,0.25,1.0,2.000,4.500"
