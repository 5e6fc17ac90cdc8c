from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fgi import tensor as T
from fgi.autograd import Tape
from fgi.snn import (
    AlifParams, NetworkConfig, PARAM_NAMES, alif_step, bptt_gradients, forward_sequence,
    init_weights, initial_state, load_weights, save_weights,
)
from fgi.surrogate import Mechanism, TanhDeriv
from fgi.trainer import cross_entropy_last

P = AlifParams(alpha=0.9, gamma=0.9, b0=1.0, beta=1.8)


def hand_trace(currents, alpha=Fraction(9, 10), gamma=Fraction(9, 10), b0=Fraction(1), beta=Fraction(9, 5)):
    """Exact rational evaluation of the four update equations."""
    u, eta, theta, z = Fraction(0), Fraction(0), b0, Fraction(0)
    out = []
    for i in currents:
        u = alpha * u + (1 - alpha) * Fraction(i) - theta * z
        eta = gamma * eta + (1 - gamma) * z
        theta = b0 + beta * eta
        z = Fraction(int(u - theta > 0))
        out.append((u, eta, theta, z))
    return out


def run_steps(currents, params=P, mech=Mechanism.INJECT):
    tape = Tape()
    s = initial_state(tape, 1, 1, params)
    states = []
    for k, i in enumerate(currents):
        s = alif_step(s, tape.leaf(np.array([[float(i)]]), name=f"I{k}"), params, mech=mech)
        states.append(tuple(float(v.value[0, 0]) for v in (s.u, s.eta, s.theta, s.z)))
    return states


def test_first_step_from_rest():
    (got,) = run_steps([1.0])
    ((u, eta, theta, z),) = hand_trace([1])
    assert (u, eta, theta, z) == (Fraction(1, 10), 0, 1, 0)
    for g, h in zip(got, (u, eta, theta, z)):
        assert abs(g - float(h)) <= 1e-15


def test_spike_then_reset_and_adaptation():
    currents = [20, 0, 0]
    trace = hand_trace(currents)
    assert [s[3] for s in trace] == [1, 0, 0]
    # reset uses the previous threshold and spike; adaptation picks up (1 - gamma)
    assert trace[1][0] == Fraction(9, 10) * 2 - 1
    assert trace[1][1] == Fraction(1, 10)
    for got, want in zip(run_steps(currents), trace):
        for g, h in zip(got, want):
            assert abs(g - float(h)) <= 1e-15


def test_strict_threshold_crossing():
    # u climbs toward 10 under constant drive; z flips the first step u > theta
    currents = [10.0] * 3
    for got, want in zip(run_steps(currents), hand_trace(currents)):
        assert got[3] == float(want[0] - want[2] > 0)


def test_default_decays():
    p = AlifParams()
    assert abs(p.alpha - 0.951229424500714) < 1e-15
    assert abs(p.gamma - 0.9950124791926823) < 1e-15
    with pytest.raises(ValueError):
        AlifParams(tau_m=0.0)


def test_shape_error():
    tape = Tape()
    s = initial_state(tape, 2, 3, P)
    with pytest.raises(T.ShapeError):
        alif_step(s, tape.leaf(np.zeros((2, 4)), name="I"), P)


def tiny(mech=Mechanism.INJECT, shape=None, **kw):
    args = dict(n_in=2, hidden=3, classes=2, mechanism=mech, seed=1)
    if shape is not None:
        args["shape"] = shape
    args.update(kw)
    return NetworkConfig(**args)


def test_silence_under_zero_input():
    cfg = NetworkConfig(n_in=2, hidden=8, classes=2, seed=0)
    fwd = forward_sequence(np.zeros((100, 3, 2)), cfg, init_weights(cfg))
    assert all(not z.any() for z in fwd.spikes)
    assert not fwd.state.u.value.any()


def test_zero_weights_give_zero_logits():
    cfg = tiny()
    w = {k: np.zeros_like(v) for k, v in init_weights(cfg).items()}
    assert not forward_sequence(np.ones((1, 2, 2)), cfg, w).logits.value.any()


def test_identical_samples_identical_rows():
    cfg = tiny()
    x = np.random.default_rng(0).uniform(size=(6, 1, 2))
    fwd = forward_sequence(np.concatenate([x, x], axis=1), cfg, init_weights(cfg))
    assert fwd.logits.value[0].tobytes() == fwd.logits.value[1].tobytes()


def test_strong_input_spikes():
    cfg = tiny()
    w = dict(init_weights(cfg))
    w["W_in"] = np.ones((2, 3))
    fwd = forward_sequence(np.full((10, 1, 2), 5.0), cfg, w)
    assert any(z.any() for z in fwd.spikes)


def test_weight_shape_checked():
    cfg = tiny()
    w = dict(init_weights(cfg))
    w["W_rec"] = np.zeros((2, 2))
    with pytest.raises(T.ShapeError):
        forward_sequence(np.zeros((2, 1, 2)), cfg, w)
    with pytest.raises(T.ShapeError):
        forward_sequence(np.zeros((2, 1, 3)), cfg, init_weights(cfg))


def loss_and_grads(cfg, inputs, labels, weights):
    fwd = forward_sequence(inputs, cfg, weights)
    loss = cross_entropy_last(fwd.logits, labels)
    return float(loss.value), bptt_gradients(loss)


def test_zero_input_gives_zero_input_weight_gradient():
    cfg = tiny()
    _, g = loss_and_grads(cfg, np.zeros((5, 2, 2)), np.array([0, 1]), init_weights(cfg))
    assert not g["W_in"].any()


def strong_inputs(seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 40, size=(4, 3, 2)), np.array([0, 1, 1])


def test_custom_and_inject_gradients_agree():
    inputs, labels = strong_inputs()
    cfg = tiny(Mechanism.CUSTOM_BACKWARD)
    w = init_weights(cfg)
    _, g1 = loss_and_grads(cfg, inputs, labels, w)
    _, g2 = loss_and_grads(tiny(Mechanism.INJECT), inputs, labels, w)
    assert g1["W_rec"].any() and g1["W_in"].any()
    for k in PARAM_NAMES:
        assert np.max(np.abs(g1[k] - g2[k])) <= 1e-10


def test_all_mechanisms_same_spikes():
    inputs, labels = strong_inputs(1)
    runs = [forward_sequence(inputs, tiny(m, TanhDeriv()), init_weights(tiny())) for m in Mechanism]
    assert any(z.any() for z in runs[0].spikes)
    for r in runs[1:]:
        assert [z.tobytes() for z in r.spikes] == [z.tobytes() for z in runs[0].spikes]


def test_readout_bias_matches_finite_difference():
    inputs, labels = strong_inputs(2)
    cfg = tiny()
    w = init_weights(cfg)
    _, g = loss_and_grads(cfg, inputs, labels, w)
    h = 1e-6
    fd = np.zeros_like(w["b_out"])
    for j in range(fd.shape[1]):
        plus, minus = dict(w), dict(w)
        plus["b_out"] = w["b_out"] + h * np.eye(1, fd.shape[1], j)
        minus["b_out"] = w["b_out"] - h * np.eye(1, fd.shape[1], j)
        fd[0, j] = (loss_and_grads(cfg, inputs, labels, plus)[0] - loss_and_grads(cfg, inputs, labels, minus)[0]) / (2 * h)
    assert np.max(np.abs(g["b_out"] - fd) / (np.abs(fd) + 1e-12)) <= 1e-5


def test_checkpoint_round_trip(tmp_path):
    w = init_weights(NetworkConfig(n_in=4, hidden=5, classes=3, seed=7))
    save_weights(tmp_path / "w.bin", w)
    back = load_weights(tmp_path / "w.bin")
    assert list(back) == list(w)
    for k in w:
        assert back[k].tobytes() == w[k].tobytes()
    (tmp_path / "bad.bin").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        load_weights(tmp_path / "bad.bin")


@given(st.lists(st.floats(-5, 30), min_size=1, max_size=40))
def test_threshold_never_below_baseline(currents):
    tape = Tape()
    s = initial_state(tape, 1, 1, AlifParams())
    for k, i in enumerate(currents):
        s = alif_step(s, tape.leaf(np.array([[i]]), name=f"I{k}"), AlifParams())
        assert s.eta.value[0, 0] >= 0
        assert s.theta.value[0, 0] >= 1.0
        assert s.z.value[0, 0] in (0.0, 1.0)
