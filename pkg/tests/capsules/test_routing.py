import numpy as np
import pytest

from dwcaps_engine.core.autograd.gradcheck import finite_difference_check
from dwcaps_engine.core.autograd.tensor import Tensor, make_rng
from dwcaps_engine.core.capsules.routing import (
    CapsuleConfig,
    RoutingTrace,
    class_prediction,
    dynamic_routing,
    margin_loss,
    predict_votes,
    primary_capsules,
    squash,
)
from dwcaps_engine.core.utils.errors import ContractError, LabelError, ShapeError


def test_squash_known_value():
    out = squash(Tensor([3.0, 4.0])).data
    assert out == pytest.approx([0.576923, 0.769231], abs=1e-6)
    assert np.linalg.norm(out) == pytest.approx(25.0 / 26.0)


def test_squash_zero_and_bounds():
    assert np.array_equal(squash(Tensor(np.zeros(4))).data, np.zeros(4))
    v = make_rng(0).normal(size=(50, 8)) * 10.0
    norms = np.linalg.norm(squash(Tensor(v)).data, axis=-1)
    assert np.all(norms < 1.0)
    # direction is kept
    s = squash(Tensor(v)).data
    cos = np.sum(s * v, axis=-1) / (np.linalg.norm(s, axis=-1) * np.linalg.norm(v, axis=-1))
    assert np.allclose(cos, 1.0)


def test_squash_gradient_including_zero_vector():
    x = Tensor([[0.3, -0.4, 1.2], [2.0, 0.1, -0.5]])
    weights = Tensor([[1.0, 2.0, -1.0], [0.5, -0.3, 0.8]])
    assert finite_difference_check(lambda t: (squash(t) * weights).sum(), x) < 1e-6
    zero = Tensor(np.zeros((1, 3)), requires_grad=True)
    (squash(zero) * Tensor([[1.0, 1.0, 1.0]])).sum().backward()
    assert np.all(np.isfinite(zero.grad.data))


def test_primary_capsules_layout():
    fm = Tensor(make_rng(1).normal(size=(2, 2, 16)))
    caps = primary_capsules(fm, 8)
    assert caps.shape == (8, 8)
    expected = squash(Tensor(fm.data[0, 0, :8])).data
    assert np.allclose(caps.data[0], expected)
    with pytest.raises(ShapeError):
        primary_capsules(Tensor(np.ones((2, 2, 12))), 8)


def test_votes_shape_and_values():
    rng = make_rng(2)
    u = rng.normal(size=(5, 8))
    W = rng.normal(size=(5, 3, 8, 16))
    votes = predict_votes(Tensor(u), Tensor(W))
    assert votes.shape == (5, 3, 16)
    assert np.allclose(votes.data[2, 1], u[2] @ W[2, 1])
    batched = predict_votes(Tensor(np.stack([u, u])), Tensor(W))
    assert batched.shape == (2, 5, 3, 16)
    with pytest.raises(ShapeError):
        predict_votes(Tensor(u), Tensor(W[:4]))


def test_single_iteration_uses_uniform_couplings():
    votes = make_rng(3).normal(size=(4, 2, 3))
    trace = RoutingTrace()
    v = dynamic_routing(Tensor(votes), iterations=1, trace=trace)
    assert np.allclose(trace.states[0].couplings, 0.5)
    assert np.allclose(v.data, squash(Tensor(0.5 * votes.sum(axis=0))).data)


def test_couplings_are_distributions_and_sharpen():
    rng = make_rng(4)
    agreeing = np.tile(rng.normal(size=(1, 1, 4)), (6, 1, 1))
    votes = np.concatenate([agreeing, rng.normal(size=(6, 1, 4)) * 0.01], axis=1)
    trace = RoutingTrace()
    dynamic_routing(Tensor(votes), iterations=3, trace=trace)
    assert len(trace.states) == 3
    for state in trace.states:
        assert np.allclose(state.couplings.sum(axis=-1), 1.0)
        assert np.all(state.couplings >= 0.0)
    # identical votes for output 0 gain coupling over the iterations
    assert trace.states[-1].couplings[0, :, 0].mean() > 0.5


def test_routing_output_shape_and_norm():
    votes = Tensor(make_rng(5).normal(size=(2, 10, 3, 16)))
    v = dynamic_routing(votes, iterations=3)
    assert v.shape == (2, 3, 16)
    assert np.all(np.linalg.norm(v.data, axis=-1) < 1.0)
    with pytest.raises(ContractError):
        dynamic_routing(votes, iterations=0)


@pytest.mark.parametrize("iterations", [1, 3])
def test_differentiable_routing_matches_central_differences(iterations):
    rng = make_rng(6)
    u = Tensor(rng.normal(size=(4, 3)))
    W = Tensor(rng.normal(size=(4, 2, 3, 2)) * 0.5)

    def loss(t):
        v = dynamic_routing(predict_votes(t[0], t[1]), iterations, differentiable=True)
        return margin_loss(v, np.array([1]))

    assert finite_difference_check(loss, [u, W]) < 1e-5


def test_detached_routing_equals_differentiable_with_one_iteration():
    votes = make_rng(7).normal(size=(5, 3, 4))
    a = dynamic_routing(Tensor(votes), 1, differentiable=False).data
    b = dynamic_routing(Tensor(votes), 1, differentiable=True).data
    assert np.array_equal(a, b)


def test_margin_loss_terms():
    v = np.zeros((2, 16))
    v[0, 0] = 0.5
    v[1, 0] = 1.0
    # class 0 present with length 0.5, class 1 absent with length 1.0
    assert margin_loss(Tensor(v), np.array([1.0, 0.0])).item() == pytest.approx(0.16 + 0.5 * 0.81)
    # class 1 present with length 1.0, class 0 absent with length 0.5
    assert margin_loss(Tensor(v), np.array([0.0, 1.0])).item() == pytest.approx(0.5 * 0.16)


def test_margin_loss_zero_when_margins_met():
    v = np.zeros((3, 4))
    v[2, 0] = 0.95
    v[0, 0] = 0.05
    assert margin_loss(Tensor(v), np.array([0.0, 0.0, 1.0])).item() == 0.0


def test_margin_loss_batch_mean_and_labels():
    v = Tensor(make_rng(8).normal(size=(2, 3, 4)) * 0.3)
    per_item = [margin_loss(Tensor(v.data[i]), np.array([lab])).item() for i, lab in enumerate([0, 2])]
    assert margin_loss(v, np.array([0, 2])).item() == pytest.approx(np.mean(per_item))
    with pytest.raises(LabelError):
        margin_loss(v, np.array([0, 3]))
    with pytest.raises(LabelError):
        margin_loss(v, np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def test_class_prediction_ties_take_lowest_index():
    v = np.zeros((3, 2))
    v[1] = [0.6, 0.0]
    v[2] = [0.0, 0.6]
    assert class_prediction(v) == 1
    assert list(class_prediction(np.stack([v, v[::-1]]))) == [1, 0]


def test_capsule_config_defaults_and_validation():
    caps = CapsuleConfig()
    assert (caps.primary_capsule_dim, caps.class_capsule_dim, caps.num_classes, caps.routing_iterations) == (8, 16, 29, 3)
    with pytest.raises(ContractError):
        CapsuleConfig(routing_iterations=0)


def test_routing_and_loss_properties_on_random_cases():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        dim = int(rng.integers(2, 9))
        v = rng.normal(size=dim) * rng.choice([1e-3, 1.0, 30.0])
        s = squash(Tensor(v)).data
        assert np.linalg.norm(s) < 1.0
        assert np.dot(s, v) >= 0.0

    for _ in range(1000):
        num_in, num_out, dim = (int(x) for x in rng.integers(1, 5, size=3))
        trace = RoutingTrace()
        v = dynamic_routing(Tensor(rng.normal(size=(num_in, num_out, dim))), int(rng.integers(1, 4)), trace=trace)
        for state in trace.states:
            assert np.all(np.abs(state.couplings.sum(axis=-1) - 1.0) <= 1e-12)
        label = int(rng.integers(0, num_out))
        assert margin_loss(v, np.array([label])).item() >= 0.0


@pytest.mark.parametrize("iterations", [1, 3])
def test_routing_commutes_with_a_shared_rotation(iterations):
    rng = make_rng(21)
    votes = rng.normal(size=(2, 6, 3, 5))
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    v = dynamic_routing(Tensor(votes), iterations).data
    rotated = dynamic_routing(Tensor(votes @ Q.T), iterations).data
    assert np.allclose(rotated, v @ Q.T, atol=1e-9)
    assert np.abs(np.linalg.norm(rotated, axis=-1) - np.linalg.norm(v, axis=-1)).max() <= 1e-9
