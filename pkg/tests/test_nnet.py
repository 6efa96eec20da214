import numpy as np
import numpy.testing as npt
import pytest
from scipy.special import log_softmax, softmax

from src.engine.nnet import (
    ForwardCache,
    NetworkGrads,
    NetworkParams,
    backward,
    ce_loss_and_grad,
    class_features,
    cosine_distance,
    forward,
    init_params,
    npair_loss_and_grad,
    sgd_step,
    total_loss,
)
from src.errors import ContractViolation, NonFiniteError, VocabularyError

STEP = 1e-5


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8)


def numeric_grad(fn, array):
    """Central differences of fn() w.r.t. every entry of array (modified in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = array[i]
        array[i] = old + STEP
        up = fn()
        array[i] = old - STEP
        down = fn()
        array[i] = old
        grad[i] = (up - down) / (2 * STEP)
    return grad


def cache_with(h, f):
    return ForwardCache(x=np.zeros((1, f.shape[1])), h=h, f=f, softmax=softmax(f, axis=0), log_softmax=log_softmax(f, axis=0))


def test_forward_identity_weights():
    params = NetworkParams(W1=np.eye(2), b1=np.zeros(2), W2=np.eye(2), b2=np.zeros(2))
    cache = forward(params, np.array([[1.0], [-1.0]]))
    npt.assert_array_equal(cache.h[:, 0], [1.0, 0.0])
    npt.assert_array_equal(cache.f[:, 0], [1.0, 0.0])


def test_forward_empty_sequence():
    params = init_params(3, 4, n_h=5)
    cache = forward(params, np.zeros((3, 0)))
    assert cache.T == 0
    assert cache.softmax.shape == (4, 0)


def test_forward_softmax_matches_extended_precision(rng):
    params = init_params(6, 5, n_h=7, seed=3)
    cache = forward(params, rng.normal(size=(6, 9)) * 3)
    f = cache.f.astype(np.longdouble)
    e = np.exp(f - f.max(axis=0))
    npt.assert_allclose(cache.softmax, (e / e.sum(axis=0)).astype(np.float64), atol=1e-12)
    npt.assert_allclose(cache.softmax.sum(axis=0), 1.0, atol=1e-9)
    assert (cache.h >= 0).all()


def test_softmax_large_scores():
    params = NetworkParams(W1=np.eye(2), b1=np.zeros(2), W2=np.array([[1e3, 0.0], [0.0, 1e3]]), b2=np.zeros(2))
    cache = forward(params, np.array([[1.0, 0.5], [0.2, 1.0]]))
    assert np.isfinite(cache.log_softmax).all()
    npt.assert_allclose(cache.softmax.sum(axis=0), 1.0, atol=1e-9)


def test_forward_dimension_mismatch():
    with pytest.raises(ContractViolation):
        forward(init_params(3, 2, n_h=4), np.zeros((2, 5)))


def test_init_params_bounds_and_seed():
    a, b = init_params(16, 6, n_h=32, seed=5), init_params(16, 6, n_h=32, seed=5)
    npt.assert_array_equal(a.W1, b.W1)
    assert np.abs(a.W1).max() <= 1 / 4
    assert np.abs(a.W2).max() <= 1 / np.sqrt(32)


def test_ce_one_hot_is_zero():
    f = np.full((3, 4), -50.0)
    labels = np.array([0, 2, 1, 1])
    f[labels, np.arange(4)] = 50.0
    loss, grad = ce_loss_and_grad(cache_with(np.ones((2, 4)), f), labels)
    assert loss == pytest.approx(0.0, abs=1e-12)
    npt.assert_allclose(grad, 0.0, atol=1e-12)


def test_ce_uniform_softmax():
    loss, _ = ce_loss_and_grad(cache_with(np.ones((2, 10)), np.zeros((4, 10))), np.arange(10) % 4)
    assert loss == pytest.approx(10 * np.log(4))


def test_ce_label_outside_vocabulary():
    with pytest.raises(VocabularyError):
        ce_loss_and_grad(cache_with(np.ones((2, 3)), np.zeros((2, 3))), [0, 1, 2])


def test_ce_gradient_finite_differences(rng):
    f = rng.normal(size=(5, 8))
    labels = rng.integers(0, 5, size=8)
    h = np.ones((2, 8))
    _, grad = ce_loss_and_grad(cache_with(h, f), labels)
    numeric = numeric_grad(lambda: ce_loss_and_grad(cache_with(h, f), labels)[0], f)
    assert rel_error(grad, numeric) < 1e-6


def test_class_features_hard_and_soft(rng):
    h = rng.uniform(size=(3, 6))
    labels = np.array([0, 0, 1, 1, 1, 0])
    cache = cache_with(h, np.zeros((3, 6)))
    hard = {feat.class_id: feat.vector for feat in class_features(cache, labels, "hard")}
    assert set(hard) == {0, 1}
    npt.assert_allclose(hard[1], h[:, 2:5].mean(axis=1), atol=1e-12)
    soft = class_features(cache, mode="soft", classes=[2])
    npt.assert_allclose(soft[0].vector, h.sum(axis=1) / 3)


def test_class_feature_of_constant_columns():
    v = np.array([0.5, 2.0, 1.0])
    cache = cache_with(np.tile(v[:, None], (1, 4)), np.zeros((2, 4)))
    npt.assert_allclose(class_features(cache, np.zeros(4, dtype=int), "hard", classes=[0])[0].vector, v)


def test_npair_no_shared_classes():
    cache = cache_with(np.ones((2, 3)), np.zeros((3, 3)))
    result = npair_loss_and_grad((cache, cache), ({0}, {1}), ([0, 0, 0], [1, 1, 1]))
    assert result.loss == 0.0
    assert all((g == 0).all() for g in result.grad_h)


def test_npair_all_distances_zero():
    # identical features everywhere: every cosine distance is 0
    cache = cache_with(np.ones((2, 4)), np.zeros((3, 4)))
    result = npair_loss_and_grad(
        (cache, cache), ({0, 1}, {0, 2}), (np.array([0, 0, 1, 1]), np.array([0, 0, 2, 2]))
    )
    assert result.loss == pytest.approx(np.log(3))
    assert result.terms == 1


def test_npair_base_regularizer_ignores_negatives():
    h_v = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    h_w = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    caches = (cache_with(h_v, np.zeros((3, 4))), cache_with(h_w, np.zeros((3, 4))))
    labels = (np.array([0, 0, 1, 1]), np.array([0, 0, 2, 2]))
    result = npair_loss_and_grad(caches, ({0, 1}, {0, 2}), labels, base=True)
    # two negatives, both held at distance 0
    d = cosine_distance(h_v[:, :2].mean(axis=1), h_w[:, :2].mean(axis=1))
    assert d > 0
    assert result.loss == pytest.approx(np.log(1 + 2 * np.exp(d)))
    assert (result.grad_h[0][:, 2:] == 0).all()


def test_npair_skips_shared_class_without_frames():
    cache = cache_with(np.ones((2, 4)), np.zeros((3, 4)))
    result = npair_loss_and_grad(
        (cache, cache), ({0, 1}, {0, 1}), (np.array([0, 0, 0, 0]), np.array([1, 1, 1, 1]))
    )
    assert result.loss == 0.0
    assert result.terms == 0


def test_cosine_distance_range(rng):
    for _ in range(500):
        u, v = rng.normal(size=5), rng.normal(size=5)
        assert 0.0 <= cosine_distance(u, v) <= 2.0
    u = rng.normal(size=5)
    assert cosine_distance(u, 3.0 * u) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance(u, -u) == pytest.approx(2.0)


def test_cosine_distance_of_zero_feature(caplog):
    with caplog.at_level("WARNING", logger="src.engine.nnet"):
        assert cosine_distance(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 1.0
    assert "Zero class feature" in caplog.text


@pytest.mark.parametrize("mode", ["hard", "soft"])
def test_npair_is_symmetric_in_the_pair(mode):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        caches = (
            cache_with(rng.uniform(0.1, 1.0, size=(4, 7)), rng.normal(size=(4, 7))),
            cache_with(rng.uniform(0.1, 1.0, size=(4, 6)), rng.normal(size=(4, 6))),
        )
        sets = ({0, 1, 2}, {0, 1, 3})
        labels = (np.array([0, 0, 1, 1, 2, 2, 0]), np.array([1, 3, 3, 0, 0, 1]))
        forward_pass = npair_loss_and_grad(caches, sets, labels, mode=mode)
        swapped = npair_loss_and_grad(caches[::-1], sets[::-1], labels[::-1], mode=mode)
        assert swapped.loss == pytest.approx(forward_pass.loss, rel=1e-12)
        npt.assert_allclose(swapped.grad_h[0], forward_pass.grad_h[1], atol=1e-12)
        npt.assert_allclose(swapped.grad_h[1], forward_pass.grad_h[0], atol=1e-12)


@pytest.mark.parametrize("mode,base", [("hard", False), ("hard", True), ("soft", False)])
def test_npair_gradient_h_finite_differences(mode, base):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        h = [rng.uniform(0.1, 1.0, size=(4, 7)), rng.uniform(0.1, 1.0, size=(4, 6))]
        f = [rng.normal(size=(4, 7)), rng.normal(size=(4, 6))]
        sets = ({0, 1, 2}, {0, 1, 3})
        labels = (np.array([0, 0, 1, 1, 2, 2, 0]), np.array([1, 3, 3, 0, 0, 1]))

        def loss():
            caches = (cache_with(h[0], f[0]), cache_with(h[1], f[1]))
            return npair_loss_and_grad(caches, sets, labels, mode=mode, base=base).loss

        result = npair_loss_and_grad((cache_with(h[0], f[0]), cache_with(h[1], f[1])), sets, labels, mode=mode, base=base)
        for k in range(2):
            assert rel_error(result.grad_h[k], numeric_grad(loss, h[k])) < 1e-4
            if mode == "soft":
                assert rel_error(result.grad_f[k], numeric_grad(loss, f[k])) < 1e-4


def test_total_loss():
    assert total_loss(2.0, 4.0, 0.5) == 3.0
    assert total_loss(2.0, 4.0, 1.0) == 2.0
    with pytest.raises(ContractViolation):
        total_loss(1.0, 1.0, 1.5)


def test_sgd_step():
    params = init_params(2, 2, n_h=2)
    same = sgd_step(params, NetworkGrads.zeros_like(params), 0.1)
    npt.assert_array_equal(same.W1, params.W1)

    single = NetworkParams(W1=np.array([[2.0]]), b1=np.zeros(1), W2=np.array([[1.0]]), b2=np.zeros(1))
    grads = NetworkGrads(W1=np.array([[3.0]]), b1=np.zeros(1), W2=np.zeros((1, 1)), b2=np.zeros(1))
    assert sgd_step(single, grads, 0.5).W1[0, 0] == pytest.approx(0.5)

    with pytest.raises(ContractViolation):
        sgd_step(params, NetworkGrads.zeros_like(params), 0.0)
    bad = NetworkGrads.zeros_like(params)
    bad.W1[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        sgd_step(params, bad, 0.1)


def test_backward_finite_differences_every_weight():
    rng = np.random.default_rng(11)
    # keep hidden pre-activations away from the ReLU kink
    params = NetworkParams(
        W1=rng.uniform(0.2, 1.0, size=(2, 3)),
        b1=rng.uniform(0.1, 0.5, size=2),
        W2=rng.normal(size=(2, 2)),
        b2=rng.normal(size=2),
    )
    x = rng.uniform(0.1, 1.0, size=(3, 5))
    labels = np.array([0, 1, 1, 0, 1])
    other = forward(params, rng.uniform(0.1, 1.0, size=(3, 4)))
    sets = ({0, 1}, {0})
    other_labels = np.zeros(4, dtype=int)

    def objective(p):
        cache = forward(p, x)
        ce, _ = ce_loss_and_grad(cache, labels)
        np_loss = npair_loss_and_grad((cache, other), sets, (labels, other_labels)).loss
        return total_loss(ce, np_loss, 0.5)

    cache = forward(params, x)
    _, grad_ce = ce_loss_and_grad(cache, labels)
    reg = npair_loss_and_grad((cache, other), sets, (labels, other_labels))
    grads = backward(params, cache, 0.5 * grad_ce + 0.5 * reg.grad_f[0], 0.5 * reg.grad_h[0])

    for name in ("W1", "b1", "W2", "b2"):
        arrays = {key: getattr(params, key).copy() for key in ("W1", "b1", "W2", "b2")}
        numeric = numeric_grad(lambda: objective(NetworkParams(**arrays)), arrays[name])
        assert rel_error(getattr(grads, name), numeric) < 1e-5
