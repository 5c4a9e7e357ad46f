import math

import numpy as np
import pytest

from fairnav.nets import autodiff as ad
from fairnav.nets.autodiff import Tensor
from fairnav.nets.bundle import (
    MlpSpec,
    PolicyBundle,
    bundle_from_bytes,
    read_checkpoint_shapes,
)
from fairnav.nets.distributions import (
    sample_binary,
    sample_continuous,
    squash_sample_t,
    squashed_logprob_of_action,
)
from fairnav.nets.layers import Adam, AttentionEncoder, Linear, Mlp, ParamStore, ShapeError
from fairnav.nets.rng import CF2_SAMPLE, NAV_NOISE, rng_for


def _fd_check(fn, inputs, tol=1e-4, h=1e-6):
    """Compare analytic gradients of sum(fn(*inputs)) against central
    finite differences, in float64."""
    tensors = [Tensor(x.astype(np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    out.sum().backward()
    for t in tensors:
        analytic = t.grad
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = float(fn(*tensors).sum().data)
            flat[k] = orig - h
            dn = float(fn(*tensors).sum().data)
            flat[k] = orig
            num_flat[k] = (up - dn) / (2 * h)
        denom = np.maximum(np.abs(numeric), 1.0)
        assert np.max(np.abs(analytic - numeric) / denom) < tol


OPS = {
    "add": (lambda a, b: a + b, 2),
    "sub": (lambda a, b: a - b, 2),
    "mul": (lambda a, b: a * b, 2),
    "div": (lambda a, b: a / (b * b + 1.0), 2),
    "neg": (lambda a: -a, 1),
    "matmul": (lambda a, b: a @ b, 2),
    "relu": (lambda a: ad.relu(a * 3.0), 1),
    "tanh": (ad.tanh, 1),
    "exp": (ad.exp, 1),
    "log": (lambda a: ad.log(a * a + 0.5), 1),
    "softmax": (lambda a: ad.softmax(a, axis=-1) * Tensor(np.arange(4.0)), 1),
    "log_softmax": (lambda a: ad.log_softmax(a, axis=-1) * Tensor(np.arange(4.0)), 1),
    "minimum": (ad.minimum, 2),
    "clip": (lambda a: ad.clip(a, -0.5, 0.5), 1),
    "concat": (lambda a, b: ad.concat([a, b], axis=1) * Tensor(np.ones(8)), 2),
    "mean": (lambda a: a.mean(axis=0, keepdims=True) * Tensor(np.arange(4.0)), 1),
    "sum_axis": (lambda a: a.sum(axis=1, keepdims=True), 1),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_operator_gradients(name, rng):
    fn, arity = OPS[name]
    for _ in range(6):
        if name == "matmul":
            inputs = [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))]
        else:
            inputs = [rng.standard_normal((3, 4)) for _ in range(arity)]
        # keep clip/minimum inputs away from their kinks
        if name == "clip":
            inputs[0] = np.where(np.abs(np.abs(inputs[0]) - 0.5) < 1e-3,
                                 inputs[0] + 0.01, inputs[0])
        if name == "minimum":
            close = np.abs(inputs[0] - inputs[1]) < 1e-3
            inputs[1] = np.where(close, inputs[1] + 0.1, inputs[1])
        if name == "relu":
            inputs[0] = np.where(np.abs(inputs[0]) < 1e-3, inputs[0] + 0.01, inputs[0])
        _fd_check(fn, inputs)


def test_network_gradient_end_to_end(rng):
    store = ParamStore(dtype=np.float64)
    g = np.random.default_rng(0)
    mlp = Mlp(store, "m", [5, 7, 3], g)

    x = rng.standard_normal((4, 5))

    def loss():
        out = mlp(Tensor(x))
        return (out * out).mean()

    loss().backward()
    analytic = {k: v.grad.copy() for k, v in store.params.items()}
    h = 1e-6
    for k, p in store.params.items():
        flat = p.data.reshape(-1)
        for idx in [0, flat.size // 2, flat.size - 1]:
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(loss().data)
            flat[idx] = orig - h
            dn = float(loss().data)
            flat[idx] = orig
            num = (up - dn) / (2 * h)
            assert abs(analytic[k].reshape(-1)[idx] - num) < 1e-5


def test_linear_shape_error():
    store = ParamStore()
    lin = Linear(store, "l", 4, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        lin(Tensor(np.zeros((1, 5))))


def test_mlp_zero_last():
    store = ParamStore()
    mlp = Mlp(store, "m", [4, 8, 2], np.random.default_rng(0), zero_last=True)
    out = mlp(Tensor(np.random.default_rng(1).standard_normal((3, 4))))
    assert np.all(out.data == 0.0)


def test_adam_minimizes_quadratic():
    store = ParamStore(dtype=np.float64)
    p = store.add("p", np.array([5.0, -3.0]))
    opt = Adam([store], lr=0.1)
    for _ in range(500):
        loss = (Tensor(p.data * 0.0) + p * p).sum()
        loss.backward()
        opt.step()
    assert np.all(np.abs(p.data) < 1e-3)


def test_attention_permutation_invariance(rng):
    store = ParamStore()
    enc = AttentionEncoder(store, "e", (3, 2), 8, np.random.default_rng(0))
    for k in range(9):
        rows1 = rng.standard_normal((k, 3))
        rows2 = rng.standard_normal((k, 2))
        base = enc.encode_np([rows1, rows2])
        if k > 0:
            perm = rng.permutation(k)
            swapped = enc.encode_np([rows1[perm], rows2[perm]])
            assert np.max(np.abs(base - swapped)) < 1e-6
        else:
            assert np.all(base == 0.0)
    assert enc.out_dim == 16


def test_rng_for_counter_independence():
    a = rng_for(1, 2, 3, 4, NAV_NOISE).standard_normal(4)
    b = rng_for(1, 2, 3, 4, NAV_NOISE).standard_normal(4)
    assert np.array_equal(a, b)
    c = rng_for(1, 2, 3, 4, CF2_SAMPLE).standard_normal(4)
    assert not np.array_equal(a, c)
    d = rng_for(1, 2, 3, 5, NAV_NOISE).standard_normal(4)
    assert not np.array_equal(a, d)


def test_sample_continuous_logprob_oracle(rng):
    low = np.array([-2.0, -1.0])
    high = np.array([2.0, 1.0])
    for _ in range(50):
        mean = rng.standard_normal(2)
        log_std = rng.uniform(-2, 0, 2)
        g = np.random.default_rng(7)
        a, lp = sample_continuous(mean, log_std, g, low, high)
        ref = squashed_logprob_of_action(mean, log_std, a, low, high)
        assert lp == pytest.approx(ref, abs=1e-4)
        assert np.all(a >= low) and np.all(a <= high)


def test_sample_continuous_density_integrates_to_one():
    # quadrature over the 1-D squashed density must give total mass 1
    mean = np.array([0.3])
    log_std = np.array([-0.5])
    low, high = np.array([-2.0]), np.array([2.0])
    xs = np.linspace(low[0] + 1e-4, high[0] - 1e-4, 20001)
    dens = np.array(
        [
            math.exp(squashed_logprob_of_action(mean, log_std, np.array([x]), low, high))
            for x in xs
        ]
    )
    mass = np.trapezoid(dens, xs)
    assert mass == pytest.approx(1.0, abs=1e-3)


def test_sample_continuous_deterministic_is_squashed_mean():
    mean = np.array([0.5, -1.0])
    log_std = np.array([-1.0, -1.0])
    low, high = np.array([0.0, -1.0]), np.array([1.0, 1.0])
    a, _ = sample_continuous(mean, log_std, None, low, high, deterministic=True)
    expect = low + (np.tanh(mean) + 1.0) * 0.5 * (high - low)
    assert np.allclose(a, expect)


def test_sample_binary_frequencies():
    logits = np.array([0.3, -0.4])
    p1 = 1.0 / (1.0 + math.exp(logits[0] - logits[1]))
    g = np.random.default_rng(3)
    draws = sum(sample_binary(logits, g)[0] for _ in range(20000))
    assert draws / 20000 == pytest.approx(p1, abs=0.01)
    # deterministic tie favors moving
    f, _ = sample_binary(np.zeros(2), None, deterministic=True)
    assert f == 1


def test_squash_sample_t_gradient(rng):
    noise = rng.standard_normal((3, 2))

    def fn(mean, log_std):
        z, lp = squash_sample_t(mean, log_std, noise)
        return (z * z).sum() + lp.sum()

    _fd_check(fn, [rng.standard_normal((3, 2)), rng.uniform(-2, 0, (3, 2))])


def test_checkpoint_roundtrip(small_spec):
    b1 = PolicyBundle(small_spec, seed=3)
    blob = b1.save_bytes()
    b2 = PolicyBundle(small_spec, seed=99)
    b2.load_bytes(blob)
    assert b2.save_bytes() == blob
    with pytest.raises(ValueError):
        b2.load_bytes(b"XXXX" + blob[4:])


def test_bundle_spec_inference(small_spec):
    blob = PolicyBundle(small_spec, seed=3).save_bytes()
    b = bundle_from_bytes(blob)
    assert b.spec == small_spec
    assert b.dup_patience
    shapes = read_checkpoint_shapes(blob)
    assert shapes["solitary_actor/net.trunk0.W"] == (72, small_spec.trunk)
    blob2 = PolicyBundle(small_spec, seed=3, dup_patience=False).save_bytes()
    assert not bundle_from_bytes(blob2).dup_patience


def test_zero_init_actors_output_zero(small_bundle, rng):
    obs = rng.standard_normal(72).astype(np.float32)
    msg = rng.standard_normal(16).astype(np.float32)
    assert np.all(small_bundle.actor_forward_np("solitary", [obs]) == 0.0)
    assert np.all(small_bundle.actor_forward_np("nav", [obs, msg]) == 0.0)
    assert np.all(small_bundle.actor_forward_np("cf2", [obs, msg]) == 0.0)


def test_targets_start_as_copies(small_bundle):
    for name, tgt in small_bundle.targets.items():
        src = small_bundle.stores[name].state()
        for k, v in tgt.state().items():
            assert np.array_equal(src[k], v)
