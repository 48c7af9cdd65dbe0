import math

import numpy as np
import pytest

from datlab import autodiff as ad
from datlab.autodiff import Node
from datlab.nets import (
    MlpSpec,
    ModelParams,
    NetsValidationError,
    build_dat_model,
    domain_loss,
    forward_classifier,
    forward_generator,
    forward_task,
    init_params,
    mlp_forward,
    task_loss,
)

from gradcheck import max_rel_error


def test_spec_validation():
    with pytest.raises(NetsValidationError):
        MlpSpec((4,))
    with pytest.raises(NetsValidationError):
        MlpSpec((4, 0))
    with pytest.raises(NetsValidationError):
        MlpSpec((4, 2), hidden_activation="sigmoid")


def test_init_deterministic():
    spec = MlpSpec((4, 8, 3))
    a, b = init_params(spec, 5), init_params(spec, 5)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p.value, q.value)


def test_init_xavier_bound_and_zero_bias():
    p = init_params(MlpSpec((4, 8)), 1)
    assert np.all(np.abs(p.weights[0].value) <= math.sqrt(6 / 12))
    assert np.all(p.biases[0].value == 0)


def test_init_seed_matters():
    spec = MlpSpec((4, 8))
    assert not np.array_equal(init_params(spec, 1).weights[0].value, init_params(spec, 2).weights[0].value)


def test_generator_zero_params_give_zero_embedding():
    g = init_params(MlpSpec((3, 5, 4), "tanh"), 0)
    for p in g.parameters():
        p.value[:] = 0
    z = forward_generator(g, np.random.default_rng(0).normal(size=(6, 3)))
    assert np.all(z.value == 0)


def test_generator_identity_layer_reproduces_input():
    g = init_params(MlpSpec((3, 5)), 0)
    g.weights[0].value[:] = np.eye(3, 5)
    x = np.random.default_rng(1).normal(size=(4, 3))
    z = forward_generator(g, x).value
    np.testing.assert_array_equal(z[:, :3], x)
    assert np.all(z[:, 3:] == 0)


def test_generator_width_mismatch():
    g = init_params(MlpSpec((3, 5)), 0)
    with pytest.raises(ad.ShapeError):
        forward_generator(g, np.ones((2, 4)))


def test_generator_gradcheck():
    rng = np.random.default_rng(2)
    g = init_params(MlpSpec((3, 6, 6, 4), "tanh"), 3)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 4))
    loss = lambda: ad.sum_all(ad.mul(forward_generator(g, x), Node(w)))
    assert max_rel_error(loss, g.parameters()) < 1e-5


def test_relu_generator_gradcheck():
    rng = np.random.default_rng(9)
    g = init_params(MlpSpec((3, 6, 4), "relu"), 3)
    g.biases[0].value[:] = 0.3
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 4))
    loss = lambda: ad.sum_all(ad.mul(forward_generator(g, x), Node(w)))
    assert max_rel_error(loss, g.parameters()) < 1e-5


def _model(lam=1.0, **kw):
    return build_dat_model(4, 3, 2, embed_dim=5, generator_hidden=(6,), classifier_hidden=(6,),
                           task_hidden=(6,), lam=lam, seed=7, **kw)


def test_classifier_reverse_forward_identical():
    m = _model()
    z = forward_generator(m.generator, np.random.default_rng(0).normal(size=(8, 4)))
    a = forward_classifier(m.domain_classifier, z, reverse=False).value
    b = forward_classifier(m.domain_classifier, z, reverse=True, lam=1.0).value
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all((a > 0) & (a < 1))


def test_classifier_reverse_negates_generator_gradient():
    m = _model()
    x = np.random.default_rng(1).normal(size=(8, 4))
    y = np.array([0, 1, 2, 0, 1, 2, 0, 1])
    grads = []
    for reverse in (False, True):
        ad.zero_grad(m.parameters())
        z = forward_generator(m.generator, x)
        ad.backward(domain_loss(forward_classifier(m.domain_classifier, z, reverse=reverse, lam=1.0), y))
        grads.append([p.grad.copy() for p in m.generator.parameters()])
    for plain, rev in zip(*grads):
        np.testing.assert_array_equal(rev, -plain)


def test_lambda_zero_blocks_classifier_gradient_to_generator():
    m = _model(lam=0.0)
    x = np.random.default_rng(1).normal(size=(8, 4))
    z = forward_generator(m.generator, x)
    ad.backward(domain_loss(forward_classifier(m.domain_classifier, z, reverse=True, lam=0.0), np.zeros(8, int)))
    assert all(np.all(p.grad == 0) for p in m.generator.parameters())


def test_task_without_domain_feature():
    m = _model()
    z = forward_generator(m.generator, np.ones((3, 4)))
    p = forward_task(m.task_net, z, m.domain_feature_node([0, 1, 2]))
    assert p.shape == (3, 2)
    np.testing.assert_allclose(p.value.sum(axis=1), 1.0, atol=1e-12)


def test_task_onehot_feature_widens_input():
    m = _model(domain_feature="onehot", n_domain_inputs=3)
    assert m.task_net.in_width == 5 + 3
    z = forward_generator(m.generator, np.ones((3, 4)))
    assert forward_task(m.task_net, z, m.domain_feature_node([0, 1, 2])).shape == (3, 2)


def test_task_gradcheck_through_concat():
    rng = np.random.default_rng(4)
    m = _model(domain_feature="linear", n_domain_inputs=3, embedding_width=2)
    x = rng.normal(size=(6, 4))
    d = rng.integers(3, size=6)
    y = rng.integers(2, size=6)

    def loss():
        z = forward_generator(m.generator, x)
        return task_loss(forward_task(m.task_net, z, m.domain_feature_node(d)), y)

    params = m.generator.parameters() + m.task_net.parameters() + [m.domain_embedding]
    assert max_rel_error(loss, params) < 1e-5


def test_domain_loss_values():
    probs = Node([[0.7, 0.3]])
    assert float(domain_loss(probs, np.array([0])).value) == pytest.approx(-math.log(0.7), abs=1e-12)
    uniform = Node(np.full((5, 4), 0.25))
    labels = np.array([0, 3, 1, 2, 2])
    assert float(domain_loss(uniform, labels).value) == pytest.approx(math.log(4), abs=1e-12)
    assert float(domain_loss(uniform, np.eye(4)[labels] * 0.5 + 0.125).value) == pytest.approx(math.log(4), abs=1e-12)


def test_domain_loss_soft_onehot_matches_hard():
    rng = np.random.default_rng(5)
    p = ad.softmax_rows(Node(rng.normal(size=(9, 3))))
    y = rng.integers(3, size=9)
    assert float(domain_loss(p, np.eye(3)[y]).value) == pytest.approx(float(domain_loss(p, y).value), abs=1e-12)


def test_domain_loss_out_of_range():
    with pytest.raises(NetsValidationError):
        domain_loss(Node([[0.5, 0.5]]), np.array([2]))


def test_task_loss_perfect_and_uniform():
    assert float(task_loss(Node([[1.0, 0.0]]), np.array([0])).value) == pytest.approx(0.0, abs=1e-15)
    assert float(task_loss(Node(np.full((2, 4), 0.25)), np.array([1, 3])).value) == pytest.approx(1.386294, abs=1e-6)
    with pytest.raises(NetsValidationError):
        task_loss(Node([[0.5, 0.5]]), np.array([-1]))


def test_task_loss_decreases_on_separable_toy():
    rng = np.random.default_rng(6)
    x = np.vstack([rng.normal(-2, 0.5, size=(20, 2)), rng.normal(2, 0.5, size=(20, 2))])
    y = np.repeat([0, 1], 20)
    params = init_params(MlpSpec((2, 2), output="softmax"), 0)
    losses = []
    for _ in range(50):
        loss = task_loss(mlp_forward(params, x), y)
        losses.append(float(loss.value))
        ad.zero_grad(params.parameters())
        ad.backward(loss)
        ad.sgd_step(params.parameters(), 0.1)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_model_params_chain_check():
    spec = MlpSpec((2, 3))
    with pytest.raises(ad.ShapeError):
        ModelParams(spec, [Node(np.zeros((3, 3)))], [Node(np.zeros(3))])
