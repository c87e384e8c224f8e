import numpy as np
import pytest

from ctxdag.errors import ContractError
from ctxdag.graph import threshold_batch
from ctxdag.l1 import SparsityBudget
from ctxdag.network import (DataBatch, MaskSpec, NetworkWeights, flatten, model_backward,
                            model_forward, net_forward, order_mask, predict, unflatten)


def tiny_net(rng, m=2, p=3, hidden=(5,)):
    return NetworkWeights.init(m, p, hidden, rng)


def test_zero_weights_give_zero_batch():
    net = NetworkWeights.init(2, 4, (3,), 0)
    net.set_params([np.zeros_like(a) for a in net.params()])
    assert not net_forward(net, np.ones((5, 2))).any()


def test_flatten_layout_row_major_skip_diagonal():
    W = unflatten(np.arange(1, 7.0), 3)
    assert np.array_equal(W, [[0, 1, 2], [3, 0, 4], [5, 6, 0]])
    assert np.array_equal(flatten(W), np.arange(1, 7.0))


def test_single_hidden_unit_closed_form():
    # z -> relu(z) -> outputs a * relu(z) + b
    net = NetworkWeights(1, 2, (1,), [(np.array([[1.0]]), np.zeros(1)),
                                      (np.array([[2.0, -1.0]]), np.array([0.5, 0.0]))])
    z = np.array([[-1.0], [0.5], [2.0]])
    W = net_forward(net, z)
    r = np.maximum(z[:, 0], 0)
    assert np.allclose(W[:, 0, 1], 2 * r + 0.5)
    assert np.allclose(W[:, 1, 0], -r)


def test_dimension_mismatch():
    net = NetworkWeights.init(2, 3, (4,), 0)
    with pytest.raises(ContractError):
        net_forward(net, np.zeros((3, 5)))
    with pytest.raises(ContractError):
        DataBatch(np.zeros((3, 2)), np.zeros((4, 1)))


def test_zero_output_loss_is_mean_squared_norm(rng):
    net = NetworkWeights.init(2, 3, (4,), 0)
    net.set_params([np.zeros_like(a) for a in net.params()])
    d = DataBatch(rng.normal(size=(6, 3)), rng.uniform(-1, 1, (6, 2)))
    _, loss, _ = model_forward(net, d)
    assert loss == pytest.approx(np.mean(np.sum(d.x ** 2, axis=1)))


def test_ground_truth_output_leaves_noise(rng):
    p, n = 3, 400
    Wtrue = np.array([[0, 0.8, 0], [0, 0, -0.5], [0, 0, 0]])
    eps = rng.normal(size=(n, p))
    x = np.linalg.solve(np.eye(p) - Wtrue.T, eps.T).T
    net = NetworkWeights.init(1, p, (2,), 0)
    W0, b0 = net.layers[0]
    W1, b1 = net.layers[1]
    net.layers = [(np.zeros_like(W0), b0), (np.zeros_like(W1), flatten(Wtrue))]
    _, loss, _ = model_forward(net, DataBatch(x, np.zeros((n, 1))))
    assert loss == pytest.approx(np.mean(np.sum(eps ** 2, axis=1)), rel=1e-10)


def _loss(net, d, budget, mask=MaskSpec()):
    return model_forward(net, d, budget=budget, mask=mask)[1]


def test_end_to_end_finite_differences(rng):
    checked = 0
    for seed in range(50):
        r = np.random.default_rng(seed)
        net = NetworkWeights.init(2, 3, (4,), r)
        d = DataBatch(r.normal(size=(4, 3)), r.uniform(-1, 1, (4, 2)))
        budget = SparsityBudget(lam=0.6)
        _, _, art = model_forward(net, d, budget=budget)
        grads = model_backward(net, d, art)
        params = net.params()
        eps = 1e-6
        for g, P in zip(grads, params):
            for idx in list(np.ndindex(P.shape))[:6]:
                old = P[idx]
                P[idx] = old + eps
                Wp, lp, ap = model_forward(net, d, budget=budget)
                P[idx] = old - eps
                Wm, lm, am = model_forward(net, d, budget=budget)
                P[idx] = old
                if not (np.array_equal(ap.ctx.active, art.ctx.active)
                        and np.array_equal(am.ctx.active, art.ctx.active)):
                    continue
                assert (lp - lm) / (2 * eps) == pytest.approx(g[idx], abs=1e-3)
                checked += 1
    assert checked > 500


def test_unprojected_gradient(rng):
    net = tiny_net(rng)
    d = DataBatch(rng.normal(size=(5, 3)), rng.uniform(-1, 1, (5, 2)))
    _, _, art = model_forward(net, d, project=False)
    g = model_backward(net, d, art)
    P = net.params()[0]
    eps = 1e-6
    P[0, 0] += eps
    lp = model_forward(net, d, project=False)[1]
    P[0, 0] -= 2 * eps
    lm = model_forward(net, d, project=False)[1]
    P[0, 0] += eps
    assert (lp - lm) / (2 * eps) == pytest.approx(g[0][0, 0], rel=1e-6)


def test_perfect_fit_zero_gradient():
    net = NetworkWeights.init(1, 2, (2,), 0)
    W1, _ = net.layers[1]
    net.layers[1] = (np.zeros_like(W1), np.array([0.0, 0.0]))
    d = DataBatch(np.zeros((3, 2)), np.ones((3, 1)))
    _, loss, art = model_forward(net, d)
    assert loss == 0.0
    assert all(not g.any() for g in model_backward(net, d, art))


def test_zero_mask_zero_gradient(rng):
    net = tiny_net(rng)
    d = DataBatch(rng.normal(size=(4, 3)), rng.uniform(-1, 1, (4, 2)))
    mask = MaskSpec("per_observation", masks=np.zeros((4, 3, 3)))
    _, loss, art = model_forward(net, d, mask=mask)
    assert loss == pytest.approx(np.mean(np.sum(d.x ** 2, axis=1)))
    assert all(not g.any() for g in model_backward(net, d, art))


def test_masked_two_nodes_is_least_squares(rng):
    n = 50
    x1 = rng.normal(size=n)
    x2 = 0.7 * x1 + 0.3 * rng.normal(size=n)
    d = DataBatch(np.c_[x1, x2], np.zeros((n, 1)))
    beta = x1 @ x2 / (x1 @ x1)
    net = NetworkWeights.init(1, 2, (2,), 0)
    W1, _ = net.layers[1]
    net.layers[1] = (np.zeros_like(W1), np.array([beta, 0.0]))
    mask = MaskSpec("fixed_order", order=[0, 1])
    _, loss, art = model_forward(net, d, mask=mask)
    assert loss == pytest.approx(np.mean(x1 ** 2 + (x2 - beta * x1) ** 2), rel=1e-12)
    # the least-squares coefficient is stationary for the masked loss
    assert abs(model_backward(net, d, art)[-1][0]) < 1e-12


def test_mask_spec_validation():
    assert np.array_equal(order_mask([2, 0, 1]), [[0, 1, 0], [0, 0, 0], [1, 1, 0]])
    with pytest.raises(ContractError):
        MaskSpec("fixed_order", order=[0, 0])
    with pytest.raises(ContractError):
        MaskSpec("per_observation", masks=np.ones((1, 2, 2)) - np.eye(2))
    with pytest.raises(ContractError):
        MaskSpec("weird")


def test_outputs_acyclic_for_unseen_contexts(rng):
    net = NetworkWeights.init(2, 5, (16, 16), rng)
    net.kappa = 0.05
    z = rng.uniform(-3, 3, size=(40, 2))
    W = predict(net, z)
    _, ts = threshold_batch(W)
    assert np.all(ts <= 1e-6)


def test_serialization_round_trip(tmp_path, rng):
    net = NetworkWeights.init(3, 4, (5, 6), rng)
    net.kappa = 0.25
    path = tmp_path / "w.json"
    net.save(path)
    back = NetworkWeights.load(path)
    assert back.hidden == (5, 6) and back.kappa == 0.25
    for a, b in zip(net.params(), back.params()):
        assert np.array_equal(a, b)
    d = back.to_dict()
    assert set(d) == {"version", "m", "p", "hidden", "layers", "kappa"}
    d["version"] = 99
    with pytest.raises(ContractError):
        NetworkWeights.from_dict(d)


def test_init_is_seeded():
    a = NetworkWeights.init(2, 3, (4,), 7)
    b = NetworkWeights.init(2, 3, (4,), 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
