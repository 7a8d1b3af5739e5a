import numpy as np
import pytest

from adubf import autodiff as ad
from adubf.errors import ContractError, DimensionError, DomainError, FormatError
from adubf.nn import (AnnealSchedule, BatchNorm, Dense, ParamStore, adam_step, batchnorm,
                      load_checkpoint, save_checkpoint, st_surrogate_grad)


def test_dense_forward_and_init(rng):
    store = ParamStore()
    layer = Dense(store, "d", 200, 300, rng)
    W = store["d.W"].value
    assert W.shape == (300, 200)
    assert abs(W.std() - np.sqrt(2 / 200)) < 0.005          # He-normal
    x = rng.standard_normal((4, 200))
    np.testing.assert_allclose(layer(ad.constant(x)).value, x @ W.T)
    with pytest.raises(DimensionError):
        layer(ad.constant(np.ones((2, 3))))


def test_batchnorm_train_standardizes(rng):
    x = ad.constant(rng.standard_normal((64, 5)) * 3 + 2)
    y, mu, var = batchnorm(x, ad.constant(np.ones(5)), ad.constant(np.zeros(5)))
    np.testing.assert_allclose(y.value.mean(axis=0), 0, atol=1e-6)
    np.testing.assert_allclose(y.value.var(axis=0), 1, atol=1e-4)    # eps=1e-5 shrinks it
    with pytest.raises(ContractError):
        batchnorm(ad.constant(np.ones((1, 5))), ad.constant(np.ones(5)), ad.constant(np.zeros(5)))


def test_batchnorm_eval_matches_direct_standardization(rng):
    store = ParamStore()
    bn = BatchNorm(store, "bn", 3, momentum=0.0)      # momentum 0: running stats = last batch
    xv = rng.standard_normal((32, 3)) * 2 + 1
    train_out = bn(ad.constant(xv), train=True).value
    eval_out = bn(ad.constant(xv), train=False).value
    direct = (xv - xv.mean(0)) / np.sqrt(xv.var(0) + 1e-5)
    np.testing.assert_allclose(eval_out, direct, atol=1e-12)
    np.testing.assert_allclose(train_out, direct, atol=1e-12)


def test_batchnorm_running_stats_update(rng):
    store = ParamStore()
    bn = BatchNorm(store, "bn", 2, momentum=0.9)
    xv = rng.standard_normal((16, 2)) + 5
    bn(ad.constant(xv), train=True)
    np.testing.assert_allclose(store["bn.running_mean"].value, 0.1 * xv.mean(0))
    np.testing.assert_allclose(store["bn.running_var"].value, 0.9 + 0.1 * xv.var(0))
    with pytest.raises(DomainError):
        BatchNorm(store, "bn2", 2, eps=0.0)


def test_relu_subgradient_at_zero():
    x = ad.leaf(np.array([-1.0, 0.0, 2.0]))
    y = ad.relu(x)
    np.testing.assert_array_equal(y.value, [0, 0, 2])
    np.testing.assert_array_equal(ad.backward(ad.sum(y))[x], [0, 0, 1])


def test_surrogate_gradient_values():
    assert np.isclose(st_surrogate_grad(0.0, 1.0), 0.5)
    assert st_surrogate_grad(1.0, 20.0) < 1e-7            # saturation
    assert np.isclose(st_surrogate_grad(0.0, 4.0), 2.0)    # peak is alpha / 2


def test_anneal_schedule():
    s = AnnealSchedule()
    assert s(0) == 1.0 and np.isclose(s(10), 2.0) and s(1000) == 20.0
    with pytest.raises(DomainError):
        AnnealSchedule(alpha_0=0.0)
    with pytest.raises(DomainError):
        AnnealSchedule(alpha_0=5.0, alpha_max=1.0)


def test_adam_first_step_is_lr_times_sign():
    store = ParamStore()
    store.add("w", np.array([1.0, -2.0, 3.0]))
    adam_step(store, {"w": np.array([0.5, -4.0, 1e-3])}, lr=0.1)
    np.testing.assert_allclose(store["w"].value, [0.9, -1.9, 2.9], atol=1e-6)
    assert store.t["w"] == 1


def test_adam_minimizes_quadratic():
    store = ParamStore()
    store.add("w", np.array([3.0, -1.0]))
    target = np.array([0.5, 0.25])
    for _ in range(2000):
        w = store["w"]
        g = ad.backward(ad.sum((w - target) * (w - target)))
        adam_step(store, g, lr=0.01)
    np.testing.assert_allclose(store["w"].value, target, atol=1e-3)


def test_adam_rejects_name_mismatch():
    store = ParamStore()
    store.add("a", np.zeros(2))
    store.add("b", np.zeros(2))
    with pytest.raises(ContractError):
        adam_step(store, {"a": np.zeros(2)})
    with pytest.raises(ContractError):
        adam_step(store, {"a": np.zeros(2), "b": np.zeros(2), "c": np.zeros(2)})


def test_alias_shares_weights_and_sums_gradients():
    store = ParamStore()
    store.add("enc.W", np.array([1.0, 2.0]))
    store.alias("user1.W", "enc.W")
    assert store["user1.W"] is store["enc.W"]
    g = store.gradients({"enc.W": np.array([1.0, 1.0]), "user1.W": np.array([2.0, 0.5])})
    np.testing.assert_allclose(g["enc.W"], [3.0, 1.5])
    with pytest.raises(ContractError):
        store.add("enc.W", np.zeros(2))
    with pytest.raises(DomainError):
        store.add("bad", np.array([np.nan]))


def test_checkpoint_roundtrip(tmp_path, rng):
    store = ParamStore()
    Dense(store, "d", 3, 2, rng)
    BatchNorm(store, "bn", 2)
    store.alias("e.W", "d.W")
    adam_step(store, {n: rng.standard_normal(store[n].shape) for n in store.trainable})
    p = tmp_path / "m.ckpt"
    save_checkpoint(store, p)
    back = load_checkpoint(p)
    assert back.names() == store.names() and back.aliases == store.aliases
    assert back.trainable == store.trainable
    for n in store.names():
        np.testing.assert_array_equal(back[n].value, store[n].value)
    for n in store.trainable:
        np.testing.assert_array_equal(back.m[n], store.m[n])
        assert back.t[n] == store.t[n] == 1
    raw = p.read_bytes()
    for bad in (raw[:-1], raw + b"\0", b"NOTACKPT" + raw[8:]):
        p.write_bytes(bad)
        with pytest.raises(FormatError):
            load_checkpoint(p)
