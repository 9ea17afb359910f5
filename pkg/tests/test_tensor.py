"""Tensor engine: kernel values, gradient checks, Adam, causality."""

import numpy as np
import pytest

from marionette import tensor as T

from oracles import finite_difference_grad, relative_error, adam_single_update

RNG = np.random.default_rng


def fd_check(build, x0, *params, step=1e-3, tol=1e-3, seed=99):
    """Compare tape gradients of a weighted readout of build(...) against
    central differences. The readout weights probe every output element;
    the finite-difference side accumulates in float64 (tests only)."""
    arrays = [np.asarray(a, np.float32) for a in (x0, *params)]
    with T.no_grad():
        out_shape = build(*[T.Tensor(a) for a in arrays]).shape
    w = RNG(seed).normal(size=out_shape).astype(np.float32)

    xs = [T.Tensor(a, requires_grad=True) for a in arrays]
    loss = T.tensor_sum(T.mul(build(*xs), T.Tensor(w)))
    loss.backward()
    grads = [x.grad for x in xs]

    for i in range(len(arrays)):
        def f(xi):
            args = [a.copy() for a in arrays]
            args[i] = xi.astype(np.float32)
            with T.no_grad():
                out = build(*[T.Tensor(a) for a in args])
            return float(np.sum(out.data.astype(np.float64) * w))
        fd = finite_difference_grad(f, arrays[i], step=step)
        assert grads[i] is not None, f"input {i} got no gradient"
        err = relative_error(grads[i], fd)
        assert err < tol, f"input {i}: rel err {err:.2e}"


# -- value examples ------------------------------------------------------

def test_matmul_identity():
    x = RNG(0).normal(size=(3, 5)).astype(np.float32)
    out = T.matmul(T.Tensor(np.eye(3, dtype=np.float32)), T.Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_softmax_symmetry():
    out = T.softmax_lastdim(T.Tensor([0.0, 0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.25] * 4, atol=1e-7)


def test_causal_conv_downsample_length():
    x = T.Tensor(RNG(1).normal(size=(16, 3)).astype(np.float32))
    k = T.Tensor(RNG(2).normal(size=(4, 3, 2)).astype(np.float32))
    out = T.causal_conv1d(x, k, stride=4)
    assert out.shape == (4, 2)
    assert T.causal_conv1d_output_len(16, 4) == 4


def test_causal_conv_causality_bit_identical():
    rng = RNG(3)
    x = rng.normal(size=(16, 3)).astype(np.float32)
    k = T.Tensor(rng.normal(size=(3, 3, 2)).astype(np.float32))
    base = T.causal_conv1d(T.Tensor(x), k, stride=2).data.copy()
    for t in range(15):
        xp = x.copy()
        xp[t + 1:] += rng.normal(size=xp[t + 1:].shape).astype(np.float32)
        out = T.causal_conv1d(T.Tensor(xp), k, stride=2).data
        keep = [i for i in range(base.shape[0]) if i * 2 <= t]
        np.testing.assert_array_equal(out[keep], base[keep])


def test_causal_attention_future_invariance():
    rng = RNG(4)
    x = rng.normal(size=(6, 8)).astype(np.float32)
    mask = T.causal_mask(6)
    base = T.multi_head_attention(T.Tensor(x), T.Tensor(x), 2, mask).data.copy()
    for t in range(5):
        xp = x.copy()
        xp[t + 1:] += rng.normal(size=xp[t + 1:].shape).astype(np.float32)
        out = T.multi_head_attention(T.Tensor(xp), T.Tensor(xp), 2, mask).data
        np.testing.assert_array_equal(out[: t + 1], base[: t + 1])


def test_attention_mask_exact_zero_weight():
    # Forbidden key position must contribute exactly nothing.
    rng = RNG(5)
    q = rng.normal(size=(3, 4)).astype(np.float32)
    kv = rng.normal(size=(4, 4)).astype(np.float32)
    mask = np.zeros((3, 4), np.float32)
    mask[:, -1] = -1e9
    base = T.multi_head_attention(T.Tensor(q), T.Tensor(kv), 2, mask).data.copy()
    kv2 = kv.copy()
    kv2[-1] += 100.0
    out = T.multi_head_attention(T.Tensor(q), T.Tensor(kv2), 2, mask).data
    np.testing.assert_array_equal(out, base)


def test_shape_errors_are_structured():
    with pytest.raises(T.ShapeError, match="matmul"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))
    with pytest.raises(T.ShapeError, match="add"):
        T.add(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4,))))
    with pytest.raises(T.ShapeError, match="causal_conv1d"):
        T.causal_conv1d(T.Tensor(np.zeros((5, 3))), T.Tensor(np.zeros((2, 4, 1))))


def test_debug_finite_check():
    T.set_debug_checks(True)
    try:
        with pytest.raises(T.NumericError):
            T.exp(T.Tensor([1000.0]))
    finally:
        T.set_debug_checks(False)


# -- backward contract ---------------------------------------------------

def test_backward_sum_of_squares():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    loss = T.tensor_sum(T.mul(x, x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-6)


def test_backward_constant_loss_zero_grad():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    c = T.Tensor([3.0], requires_grad=True)
    loss = T.mean(T.mul(c, c))
    loss.backward()
    assert x.grad is None  # never touched: gradient is identically zero


def test_backward_requires_scalar():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    y = T.mul(x, x)
    with pytest.raises(T.GraphError, match="scalar"):
        y.backward()


def test_backward_twice_fails():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    loss = T.tensor_sum(T.mul(x, x))
    loss.backward()
    with pytest.raises(T.GraphError, match="consumed"):
        loss.backward()


def test_backward_on_shared_consumed_graph_fails():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    y = T.mul(x, x)
    l1 = T.tensor_sum(y)
    l2 = T.mean(y)
    l1.backward()
    with pytest.raises(T.GraphError, match="consumed"):
        l2.backward()


def test_grad_accumulates_across_graphs():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    T.tensor_sum(T.mul(x, x)).backward()
    T.tensor_sum(T.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [4.0, 8.0], rtol=1e-6)


# -- finite-difference gradient suite ------------------------------------

def test_grad_matmul():
    rng = RNG(10)
    fd_check(T.matmul, rng.normal(size=(3, 2)), rng.normal(size=(2, 4)))


def test_grad_matmul_batched():
    rng = RNG(11)
    fd_check(T.matmul, rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 3)))


def test_grad_add_mul_broadcast():
    rng = RNG(12)
    fd_check(T.add, rng.normal(size=(3, 4)), rng.normal(size=(4,)))
    fd_check(T.mul, rng.normal(size=(3, 4)), rng.normal(size=(4,)))


def test_grad_layer_norm():
    rng = RNG(13)
    fd_check(T.layer_norm,
             rng.normal(size=(3, 4)), rng.normal(size=(4,)), rng.normal(size=(4,)))


def test_grad_softmax_logsoftmax_gelu_exp():
    rng = RNG(14)
    fd_check(T.softmax_lastdim, rng.normal(size=(3, 4)))
    fd_check(T.logsoftmax_lastdim, rng.normal(size=(3, 4)))
    fd_check(T.gelu, rng.normal(size=(3, 4)))
    fd_check(T.exp, rng.normal(size=(3, 4)) * 0.5)


def test_grad_causal_conv():
    rng = RNG(15)
    for stride in (1, 2):
        fd_check(lambda x, k: T.causal_conv1d(x, k, stride),
                 rng.normal(size=(4, 3)), rng.normal(size=(3, 3, 2)))


def test_grad_attention():
    rng = RNG(16)
    mask = T.causal_mask(4)
    fd_check(lambda q, k, v: T.attention(q, k, v, 2, mask),
             rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.normal(size=(4, 4)))


def test_grad_embedding_and_reductions():
    rng = RNG(17)
    ids = np.array([0, 2, 1, 2])

    def build(tb):
        e = T.embedding_lookup(tb, ids)
        return T.concat([T.reshape(T.mean(e), (1,)),
                         T.mean_axis(e, 0),
                         T.reshape(T.tensor_sum(e), (1,))], axis=0)

    fd_check(build, rng.normal(size=(3, 4)))


def test_grad_composite_of_all_kernels():
    rng = RNG(18)
    ids = np.array([1, 0, 2, 1])
    mask = T.causal_mask(4)

    def build(x, k, g, b, wproj, bias, tb):
        h = T.causal_conv1d(x, k, stride=1)          # [4, 4]
        h = T.layer_norm(h, g, b)
        h = T.attention(h, h, h, 2, mask)
        h = T.gelu(T.add(T.matmul(h, wproj), bias))
        e = T.embedding_lookup(tb, ids)
        sm = T.softmax_lastdim(h)
        d2 = T.add(T.scale(T.mul(sm, e), 3.0), T.mul(h, e))
        piece = T.swapaxes(T.reshape(d2, (2, 2, 4)), 0, 1)
        comp = T.exp(T.scale(T.sum_axis(T.reshape(piece, (4, 4)), 1), 0.3))
        return T.concat([T.mean_axis(T.mul(d2, h), 0), comp], axis=0)

    fd_check(build,
             rng.normal(size=(4, 3)) * 0.7, rng.normal(size=(2, 3, 4)) * 0.7,
             rng.normal(size=(4,)), rng.normal(size=(4,)),
             rng.normal(size=(4, 4)) * 0.7, rng.normal(size=(4,)) * 0.5,
             rng.normal(size=(3, 4)) * 0.7)


def test_determinism_bit_identical():
    def run():
        rng = RNG(42)
        x = T.Tensor(rng.normal(size=(5, 6)).astype(np.float32), requires_grad=True)
        w = T.Tensor(rng.normal(size=(6, 6)).astype(np.float32), requires_grad=True)
        h = T.gelu(T.matmul(x, w))
        h = T.softmax_lastdim(h)
        loss = T.mean(T.mul(h, h))
        loss.backward()
        return loss.data.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


# -- Adam ----------------------------------------------------------------

def test_adam_zero_grad_no_move():
    p = T.Parameter(np.array([1.0, -2.0], np.float32))
    opt = T.Adam({"p": p}, lr=0.1, clip_norm=None)
    p.grad = np.zeros(2, np.float32)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = T.Parameter(np.array([0.5], np.float32))
    opt = T.Adam({"p": p}, lr=0.1, clip_norm=None)
    p.grad = np.ones(1, np.float32)
    opt.step()
    # bias-corrected mhat/sqrt(vhat) == 1 on the first step
    np.testing.assert_allclose(p.data, [0.4], atol=1e-6)
    assert p.grad is None


def test_adam_constant_gradient_monotone():
    p = T.Parameter(np.array([0.0], np.float32))
    opt = T.Adam({"p": p}, lr=0.05, clip_norm=None)
    prev = 0.0
    for _ in range(4):
        p.grad = np.ones(1, np.float32)
        opt.step()
        assert p.data[0] < prev
        prev = p.data[0]


def test_adam_matches_hand_oracle():
    rng = RNG(19)
    p = T.Parameter(np.array([0.3], np.float32))
    opt = T.Adam({"p": p}, lr=0.01, clip_norm=None)
    ref, m, v = 0.3, 0.0, 0.0
    for t in range(1, 4):
        g = float(rng.normal())
        p.grad = np.full(1, g, np.float32)
        opt.step()
        ref, m, v = adam_single_update(ref, g, 0.01, m=m, v=v, t=t)
        np.testing.assert_allclose(p.data, [ref], rtol=1e-5)


def test_adam_missing_grad_errors():
    p = T.Parameter(np.zeros(2, np.float32))
    opt = T.Adam({"p": p})
    with pytest.raises(T.GraphError, match="missing gradient"):
        opt.step()


def test_adam_warmup_scales_lr():
    p = T.Parameter(np.array([0.0], np.float32))
    opt = T.Adam({"p": p}, lr=0.1, warmup=10, clip_norm=None)
    p.grad = np.ones(1, np.float32)
    opt.step()
    np.testing.assert_allclose(p.data, [-0.01], atol=1e-7)
