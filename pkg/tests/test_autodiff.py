import math

import numpy as np
import pytest

import dialamr.autodiff as ad
from dialamr.autodiff import (
    Adam,
    Rng,
    ShapeMismatch,
    Tape,
    TapeError,
    Tensor,
    backward,
    finite_difference_check,
)


def rand_tensor(rng, shape, requires_grad=True):
    return Tensor(rng.uniform(-1.0, 1.0, shape), requires_grad=requires_grad)


def test_softmax_uniform():
    out = ad.softmax(Tensor(np.zeros((1, 4))))
    assert np.allclose(out.data, 0.25)
    assert abs(out.data.sum() - 1.0) < 1e-12


def test_softmax_rows_sum_to_one():
    rng = Rng(3)
    out = ad.softmax(Tensor(rng.uniform(-5, 5, (6, 9))))
    assert np.all(np.abs(out.data.sum(axis=-1) - 1.0) < 1e-12)


def test_layer_norm_constant_vector():
    gain = ad.ones_param((5,))
    bias = ad.zeros_param((5,))
    out = ad.layer_norm(Tensor(np.full((1, 5), 3.7)), gain, bias)
    assert np.allclose(out.data, 0.0)


def test_cross_entropy_uniform_is_log_v():
    loss = ad.cross_entropy(Tensor(np.zeros(36)), 7)
    assert abs(loss.item() - math.log(36)) < 1e-12


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError, match="out of range"):
        ad.cross_entropy(Tensor(np.zeros(4)), 9)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeMismatch) as exc:
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_backward_on_detached_value():
    x = Tensor(np.array(1.0), requires_grad=True)
    with Tape():
        with pytest.raises(TapeError, match="not produced"):
            backward(x)


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with Tape():
        y = ad.scale(x, 2.0)
        with pytest.raises(ShapeMismatch):
            backward(y)


def test_sum_gradient_is_ones():
    x = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
    with Tape():
        loss = ad.reduce_sum(x)
        backward(loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_elementwise_square_gradient():
    x = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
    with Tape():
        loss = ad.reduce_sum(ad.mul(x, x))
        backward(loss)
    assert np.allclose(x.grad, 2 * x.data)


def test_gradient_accumulates_across_reuse():
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    with Tape():
        loss = ad.reduce_sum(ad.add(x, x))
        backward(loss)
    assert np.allclose(x.grad, 2.0)


def _fd_case(name, build):
    """Run one op through the finite-difference oracle on random 3x4-ish
    inputs with a fixed seed."""
    rng = Rng(hash(name) % (2**31))
    params = build(rng)

    def run():
        with Tape():
            return build.loss(params).item()

    with Tape():
        loss = build.loss(params)
        backward(loss)
    err = finite_difference_check(run, params)
    assert err < 1e-4, (name, err)


class OpCase:
    def __init__(self, make_params, loss):
        self.make_params = make_params
        self.loss = loss

    def __call__(self, rng):
        return self.make_params(rng)


FD_CASES = {
    "matmul": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4)), rand_tensor(rng, (4, 2))],
        lambda ps: ad.reduce_sum(ad.matmul(ps[0], ps[1])),
    ),
    "add_broadcast": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4)), rand_tensor(rng, (4,))],
        lambda ps: ad.reduce_sum(ad.mul(ad.add(ps[0], ps[1]), ad.add(ps[0], ps[1]))),
    ),
    "mul": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4)), rand_tensor(rng, (3, 4))],
        lambda ps: ad.reduce_sum(ad.mul(ps[0], ps[1])),
    ),
    "scale": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4))],
        lambda ps: ad.reduce_sum(ad.mul(ad.scale(ps[0], 1.7), ps[0])),
    ),
    "concat": OpCase(
        lambda rng: [rand_tensor(rng, (3, 2)), rand_tensor(rng, (3, 4))],
        lambda ps: ad.reduce_sum(ad.mul(ad.concat(ps), ad.concat(ps))),
    ),
    "slice": OpCase(
        lambda rng: [rand_tensor(rng, (3, 6))],
        lambda ps: ad.reduce_sum(
            ad.mul(ad.slice_axis(ps[0], 1, 1, 4), ad.slice_axis(ps[0], 1, 2, 5))
        ),
    ),
    "transpose": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4))],
        lambda ps: ad.reduce_sum(ad.matmul(ps[0], ad.transpose(ps[0]))),
    ),
    "embedding": OpCase(
        lambda rng: [rand_tensor(rng, (5, 4))],
        lambda ps: ad.reduce_sum(
            ad.mul(
                ad.embedding_lookup(ps[0], [0, 3, 3, 1]),
                ad.embedding_lookup(ps[0], [1, 3, 2, 1]),
            )
        ),
    ),
    "relu": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4))],
        lambda ps: ad.reduce_sum(ad.relu(ps[0])),
    ),
    "softmax": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4)), rand_tensor(rng, (3, 4))],
        lambda ps: ad.reduce_sum(ad.mul(ad.softmax(ps[0]), ps[1])),
    ),
    "layer_norm": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4)), rand_tensor(rng, (4,)), rand_tensor(rng, (4,))],
        lambda ps: ad.reduce_sum(
            ad.mul(ad.layer_norm(ps[0], ps[1], ps[2]), ad.layer_norm(ps[0], ps[1], ps[2]))
        ),
    ),
    "cross_entropy": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4))],
        lambda ps: ad.cross_entropy(ps[0], [1, 0, 3]),
    ),
    "row_gather": OpCase(
        lambda rng: [rand_tensor(rng, (3, 4)), rand_tensor(rng, (3, 3))],
        lambda ps: ad.reduce_sum(
            ad.mul(ad.row_gather(ps[0], np.array([[0, 1, 3], [2, 2, 0], [1, 0, 3]])), ps[1])
        ),
    ),
    "row_scatter_add": OpCase(
        lambda rng: [rand_tensor(rng, (3, 3))],
        lambda ps: ad.reduce_sum(
            ad.mul(
                ad.row_scatter_add(ps[0], np.array([[0, 1, 1], [2, 2, 0], [1, 0, 3]]), 4),
                ad.row_scatter_add(ps[0], np.array([[0, 1, 1], [2, 2, 0], [1, 0, 3]]), 4),
            )
        ),
    ),
}


@pytest.mark.parametrize("name", sorted(FD_CASES))
def test_primitive_gradients_match_finite_differences(name):
    _fd_case(name, FD_CASES[name])


def test_two_layer_ffn_gradient():
    rng = Rng(99)
    w1 = rand_tensor(rng, (4, 8))
    b1 = rand_tensor(rng, (8,))
    w2 = rand_tensor(rng, (8, 2))
    b2 = rand_tensor(rng, (2,))
    x = Tensor(rng.uniform(-1, 1, (3, 4)))
    params = [w1, b1, w2, b2]

    def forward():
        h = ad.relu(ad.add(ad.matmul(x, w1), b1))
        return ad.reduce_sum(ad.mul(ad.add(ad.matmul(h, w2), b2),
                                    ad.add(ad.matmul(h, w2), b2)))

    with Tape():
        loss = forward()
        backward(loss)

    def run():
        with Tape():
            return forward().item()

    assert finite_difference_check(run, params) < 1e-4


def test_determinism_bit_identical():
    def build(seed):
        rng = Rng(seed)
        x = rand_tensor(rng, (4, 4))
        with Tape():
            loss = ad.reduce_sum(ad.softmax(ad.matmul(x, ad.transpose(x))))
            backward(loss)
        return x.data.copy(), x.grad.copy()

    d1, g1 = build(5)
    d2, g2 = build(5)
    assert np.array_equal(d1, d2) and np.array_equal(g1, g2)


def test_adam_zero_gradient_no_change():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.zeros_like(p.data)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)


def test_adam_first_step_is_signed_lr():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    p.grad = np.array([0.3, -0.7, 2.0])
    before = p.data.copy()
    opt.step()
    delta = p.data - before
    assert np.allclose(delta, -0.01 * np.sign(p.grad), atol=1e-6)


def test_adam_converges_on_quadratic():
    x = Tensor(np.array(5.0), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        with Tape():
            loss = ad.mul(x, x)
            backward(loss)
        opt.step()
    assert abs(x.item()) < 0.1


def test_rng_split_independent_and_deterministic():
    a = Rng(7).split(0).uniform(0, 1, 5)
    b = Rng(7).split(0).uniform(0, 1, 5)
    c = Rng(7).split(1).uniform(0, 1, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_param_bound():
    p = ad.init_param(Rng(1), (64, 64))
    assert np.all(np.abs(p.data) <= 1.0 / 8.0)
    assert p.requires_grad


def test_checkpoint_roundtrip(tmp_path):
    rng = Rng(4)
    params = {
        "emb": rand_tensor(rng, (5, 3)),
        "w": rand_tensor(rng, (3, 3)),
        "scalar": Tensor(np.array(2.5), requires_grad=True),
    }
    path = tmp_path / "model.ckpt"
    ad.save_params(params, str(path))
    loaded = ad.load_params(str(path))
    assert set(loaded) == set(params)
    for k in params:
        assert np.array_equal(loaded[k], params[k].data)
    fresh = {k: Tensor(np.zeros_like(v.data), requires_grad=True) for k, v in params.items()}
    ad.load_into(fresh, str(path))
    assert np.array_equal(fresh["emb"].data, params["emb"].data)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        ad.load_params(str(path))


def test_checkpoint_shape_mismatch(tmp_path):
    params = {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}
    path = tmp_path / "m.ckpt"
    ad.save_params(params, str(path))
    wrong = {"w": Tensor(np.zeros((3, 3)), requires_grad=True)}
    with pytest.raises(ShapeMismatch):
        ad.load_into(wrong, str(path))
