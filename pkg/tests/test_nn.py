import math

import numpy as np
import pytest

from esp_vfm import autodiff as ad
from esp_vfm.nn import (AdamState, MlpParams, adam_step, glorot_init, load_checkpoint,
                        mlp_forward, mlp_from_dict, mlp_time_derivative, mlp_to_dict,
                        mlp_with_derivative, save_checkpoint)


def _dense_oracle(p: MlpParams, t: float) -> np.ndarray:
    # plain loops, no matmul
    h = [t]
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        out = []
        for j in range(W.shape[1]):
            z = b[0, j] + sum(h[i] * W[i, j] for i in range(W.shape[0]))
            out.append(z if k == len(p.weights) - 1 else math.tanh(z))
        h = out
    return np.array(h)


def test_zero_network_outputs_zero():
    p = glorot_init(seed=0)
    z = MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    assert np.array_equal(mlp_forward(z, 0.4), np.zeros((1, 6)))


def test_affine_case():
    W, b = np.array([[2.0, -1.0]]), np.array([[0.5, 3.0]])
    p = MlpParams([W], [b], "identity")
    assert np.allclose(mlp_forward(p, 0.3), 0.3 * W + b)


def test_forward_matches_dense_oracle():
    p = glorot_init(seed=42)
    assert np.allclose(mlp_forward(p, 0.3)[0], _dense_oracle(p, 0.3), rtol=0, atol=1e-12)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        mlp_forward(glorot_init(seed=0), np.array([0.0, np.nan]))


def test_derivative_constant_network():
    p = glorot_init(seed=1)
    p.weights[0] = np.zeros_like(p.weights[0])
    assert np.array_equal(mlp_time_derivative(p, np.array([-0.5, 0.2])), np.zeros((2, 6)))


def test_derivative_affine_network():
    rng = np.random.default_rng(0)
    ws = [rng.normal(size=s) for s in ((1, 4), (4, 3), (3, 2))]
    p = MlpParams(ws, [rng.normal(size=(1, w.shape[1])) for w in ws], "identity")
    assert np.allclose(mlp_time_derivative(p, 0.7)[0], (ws[0] @ ws[1] @ ws[2])[0], rtol=1e-13)


def test_derivative_matches_finite_difference():
    for seed in range(5):
        p = glorot_init(seed=seed)
        t = np.linspace(-1, 1, 9)
        d = mlp_time_derivative(p, t)
        h = 1e-6
        fd = (mlp_forward(p, t + h) - mlp_forward(p, t - h)) / (2 * h)
        assert np.allclose(d, fd, rtol=1e-6, atol=1e-9)


def test_output_scaling_chain_rule():
    rng = np.random.default_rng(5)
    p = glorot_init(seed=3)
    lo = rng.uniform(-5, 0, 6)
    hi = lo + rng.uniform(0.1, 10, 6)
    t = np.linspace(-1, 1, 7)
    raw, draw = mlp_with_derivative(p, t)
    scaled = lambda tt: (mlp_forward(p, tt) + 1) * (hi - lo) / 2 + lo  # noqa: E731
    h = 1e-6
    fd = (scaled(t + h) - scaled(t - h)) / (2 * h)
    assert np.allclose(draw * (hi - lo) / 2, fd, rtol=1e-6, atol=1e-9)


def test_reverse_over_forward():
    # gradient of a loss on the input derivative, through both modes
    p = glorot_init((1, 5, 5, 2), seed=2)
    t = np.linspace(-1, 1, 11)

    def loss(*arrs):
        q = MlpParams.from_arrays(list(arrs))
        h, dh = mlp_with_derivative(q, t)
        return ad.mean(ad.square(dh - h))

    _, grads = ad.grad(loss, *p.arrays())
    rng = np.random.default_rng(0)
    vs = [rng.normal(size=a.shape) for a in p.arrays()]
    f = lambda arrs: float(ad.value_of(loss(*arrs)))  # noqa: E731
    eps = 1e-6
    fd = (f([a + eps * v for a, v in zip(p.arrays(), vs)])
          - f([a - eps * v for a, v in zip(p.arrays(), vs)])) / (2 * eps)
    assert sum(np.sum(g * v) for g, v in zip(grads, vs)) == pytest.approx(fd, rel=1e-6)


def test_glorot_init():
    a, b = glorot_init(seed=9), glorot_init(seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    w = a.weights[1]
    assert w.shape == (20, 20)
    assert np.all(np.abs(w) <= math.sqrt(6 / 40))
    assert abs(w.mean()) < 0.06
    assert all(np.all(bias == 0) for bias in a.biases)
    assert a.architecture == (1, 20, 20, 20, 6)


def test_mlp_validation():
    with pytest.raises(ValueError):
        MlpParams([np.zeros((1, 3)), np.zeros((4, 2))], [np.zeros((1, 3)), np.zeros((1, 2))])
    with pytest.raises(ValueError):
        MlpParams([np.zeros((1, 3))], [np.zeros((1, 2))])
    with pytest.raises(ValueError):
        MlpParams([np.zeros((1, 3))], [np.zeros((1, 3))], "relu")


def test_adam_zero_gradient():
    x = [np.array([1.0, -2.0])]
    st = AdamState.zeros_like(x)
    adam_step(st, x, [np.zeros(2)], 1e-3)
    assert np.array_equal(x[0], [1.0, -2.0]) and st.step == 1


def test_adam_first_step():
    x = [np.array([0.0, 0.0, 0.0])]
    g = np.array([2.0, -0.3, 1e-3])
    adam_step(AdamState.zeros_like(x), x, [g], 1e-3)
    assert x[0][0] == pytest.approx(-1e-3, rel=1e-6)
    upd = -x[0]
    assert np.all(np.sign(upd) == np.sign(g))
    assert np.all((np.abs(upd) >= 0.99e-3) & (np.abs(upd) <= 1e-3))


def test_adam_shape_mismatch():
    x = [np.zeros(3)]
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros_like(x), x, [np.zeros(2)], 1e-3)
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros_like(x), x, [], 1e-3)


def test_adam_is_deterministic():
    def run():
        x = [np.array([1.0, 2.0])]
        st = AdamState.zeros_like(x)
        for k in range(50):
            adam_step(st, x, [np.array([math.sin(k), math.cos(k)])], 1e-2)
        return x[0]
    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    p = glorot_init(seed=4)
    save_checkpoint(tmp_path / "c.json", mlp_to_dict(p), p.architecture, {"epoch": 3})
    tensors, arch, meta = load_checkpoint(tmp_path / "c.json")
    q = mlp_from_dict(tensors)
    assert tuple(arch) == p.architecture and meta == {"epoch": 3}
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
