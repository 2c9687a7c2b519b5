import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sganvo.tensor import (
    Adam,
    Rng,
    Tensor,
    adam_step,
    clip_grad_norm,
    debug_mode,
    grad,
    load_checkpoint,
    no_grad,
    ops,
    reachable,
    save_checkpoint,
)


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


# -- forward values --------------------------------------------------------

def test_relu_example():
    np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_selu_constants():
    out = ops.selu(Tensor([1.0, -1.0])).data
    assert out[0] == pytest.approx(1.0507009873554805)
    assert out[1] == pytest.approx(1.0507009873554805 * 1.6732632423543772 * (np.exp(-1) - 1))


def test_pixel_shuffle_shape():
    x = Tensor(np.zeros((1, 4, 5, 7)))
    assert ops.pixel_shuffle(x, 2).shape == (1, 1, 10, 14)


def test_pixel_shuffle_channel_order():
    # channel k = 2*dy + dx lands at offset (dy, dx) of each 2x2 block
    x = np.arange(4, dtype=float).reshape(1, 4, 1, 1)
    out = ops.pixel_shuffle(Tensor(x), 2).data[0, 0]
    np.testing.assert_array_equal(out, [[0, 1], [2, 3]])


def test_conv2d_same_padding_table1_shape():
    x = Tensor(np.zeros((1, 3, 416, 128)))
    w = Tensor(np.zeros((16, 3, 5, 5)))
    assert ops.conv2d(x, w, stride=2, padding="same").shape == (1, 16, 208, 64)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding="same").data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 6, 5))
    for n in range(2):
        for o in range(4):
            for i in range(6):
                for j in range(5):
                    ref[n, o, i, j] = np.sum(xp[n, :, i:i + 3, j:j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_max_pool_and_upsample():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    np.testing.assert_array_equal(ops.max_pool2d(x, 2).data[0, 0], [[5, 7], [13, 15]])
    up = ops.nearest_upsample2x(Tensor([[[[1.0, 2.0]]]])).data[0, 0]
    np.testing.assert_array_equal(up, [[1, 1, 2, 2], [1, 1, 2, 2]])


def test_norms():
    x = Tensor([3.0, -4.0])
    assert ops.l1_norm(x).item() == 7.0
    assert ops.l2_norm(x).item() == 5.0


def test_bilinear_sample_midpoint_and_mask():
    img = Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    out, valid = ops.bilinear_sample(img, Tensor([[[0.5, 1.5]]]), Tensor([[[0.5, 0.5]]]))
    assert out.data[0, 0, 0, 0] == pytest.approx(1.5)
    assert valid[0, 0, 0, 0] and not valid[0, 0, 0, 1]


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


def test_debug_mode_detects_non_finite():
    with debug_mode():
        with pytest.raises(FloatingPointError):
            ops.exp(Tensor([np.nan]))


def test_float32_selectable():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    y = ops.sum(ops.mul(x, x))
    assert y.dtype == np.float32
    (g,) = grad(y, [x])
    assert g.dtype == np.float32


# -- gradients --------------------------------------------------------------

def test_grad_square():
    x = leaf([1.0, 2.0, 3.0])
    (g,) = grad(ops.sum(ops.mul(x, x)), [x])
    np.testing.assert_array_equal(g.data, [2.0, 4.0, 6.0])


def test_second_derivative_cube():
    x = leaf(2.0)
    (g,) = grad(ops.sum(ops.power(x, 3.0)), [x], create_graph=True)
    (gg,) = grad(g, [x])
    assert gg.item() == pytest.approx(12.0, rel=1e-12)


def test_double_backward_fourth_power():
    xv = np.array([0.5, -1.25, 2.0, 3.0])
    x = leaf(xv)
    (g,) = grad(ops.sum(ops.power(x, 4.0)), [x], create_graph=True)
    # the Hessian is diagonal, so the gradient of sum(g) is its diagonal
    (h,) = grad(ops.sum(g), [x])
    np.testing.assert_allclose(h.data, 12 * xv**2, rtol=1e-6)


def test_unreachable_gets_zero_gradient():
    x, y = leaf([1.0, 2.0]), leaf([3.0])
    gx, gy = grad(ops.sum(x), [x, y])
    np.testing.assert_array_equal(gy.data, [0.0])
    assert not reachable(ops.sum(x), y)


def test_non_scalar_output_is_error():
    x = leaf([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        grad(ops.mul(x, 2.0), [x])


def test_backward_accumulates_into_leaves():
    x = leaf([1.0, -2.0])
    ops.sum(ops.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, -4.0])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with no_grad():
        y = ops.mul(x, 3.0)
    assert not y.requires_grad


def test_shared_subexpression_visited_once():
    x = leaf(3.0)
    y = ops.mul(x, x)
    z = ops.add(y, y)
    (g,) = grad(z, [x])
    assert g.item() == 12.0


@pytest.mark.parametrize("fn", [
    lambda a: ops.sum(ops.tanh(a) * ops.sigmoid(a)),
    lambda a: ops.sum(ops.selu(a) * a),
    lambda a: ops.sum(ops.exp(a * 0.3) + ops.log(ops.abs(a) + 1.0)),
    lambda a: ops.l2_norm(ops.matmul(a, ops.transpose(a))),
    lambda a: ops.mean(ops.concat([a, ops.relu(a)], axis=1) ** 2.0),
    lambda a: ops.sum(a[1:, ::2] * 2.0),
])
def test_composite_gradients_match_finite_differences(fn):
    xv = np.random.default_rng(3).normal(size=(3, 4))
    x = leaf(xv)
    (g,) = grad(fn(x), [x])
    num = numeric_grad(lambda v: fn(Tensor(v)).item(), xv)
    assert np.linalg.norm(g.data - num) / max(np.linalg.norm(num), 1e-12) < 1e-6


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (2, 3), elements=st.floats(-3, 3)),
       hnp.arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_matmul_adjoint_identity(a, b):
    # <A@B, C> gradients: dA = C @ B^T, dB = A^T @ C
    c = np.arange(4.0).reshape(2, 2) - 1.5
    ta, tb = leaf(a), leaf(b)
    ga, gb = grad(ops.sum(ops.mul(ops.matmul(ta, tb), Tensor(c))), [ta, tb])
    np.testing.assert_allclose(ga.data, c @ b.T, atol=1e-12)
    np.testing.assert_allclose(gb.data, a.T @ c, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_pixel_shuffle_roundtrip(c, h, w, seed):
    x = np.random.default_rng(seed).normal(size=(1, 4 * c, h, w))
    back = ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), 2), 2)
    np.testing.assert_array_equal(back.data, x)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2]))
def test_conv_transpose_is_adjoint_of_conv(seed, stride):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 6, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    y = ops.conv2d(Tensor(x), Tensor(w), stride=stride, padding="same")
    u = rng.normal(size=y.shape)
    xt = ops.conv2d_transpose(Tensor(u), Tensor(w), stride=stride, padding="same", output_size=(6, 4))
    assert np.sum(y.data * u) == pytest.approx(np.sum(x * xt.data), rel=1e-10)


def test_determinism_same_seed():
    def run():
        r = Rng(11)
        x = leaf(r.normal((3, 4)))
        w = leaf(r.normal((4, 2)))
        y = ops.sum(ops.tanh(ops.matmul(x, w)))
        return y.data, [g.data for g in grad(y, [x, w])]

    a, b = run(), run()
    assert a[0] == b[0]
    for ga, gb in zip(a[1], b[1]):
        np.testing.assert_array_equal(ga, gb)


# -- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = leaf([1.0, 2.0])
    opt = Adam([p])
    adam_step([p], [np.zeros(2)], opt, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert opt.t == 1


def test_adam_zero_gradient_decays_moments():
    p = leaf([1.0])
    opt = Adam([p])
    opt.step([np.ones(1)], lr=0.1)
    opt.step([np.zeros(1)], lr=0.1)
    assert opt.m[0][0] == pytest.approx(0.9 * 0.1)
    assert opt.v[0][0] == pytest.approx(0.999 * 0.001)


def test_adam_first_step_moves_by_lr():
    p = leaf([0.0])
    adam_step([p], [np.ones(1)], Adam([p]), lr=0.1)
    # m_hat = v_hat = 1 at t=1, so the step is lr / (1 + eps)
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_converges_on_quadratic():
    x = leaf([0.0])
    opt = Adam([x])
    for _ in range(500):
        (g,) = grad(ops.sum((x - 3.0) ** 2.0), [x])
        opt.step([g], lr=0.1)
        if abs(x.data[0] - 3.0) < 1e-3:
            break
    assert abs(x.data[0] - 3.0) < 1e-3


def test_adam_nan_gradient_names_parameter():
    p = Tensor([1.0], requires_grad=True, name="layer0/pose/w")
    opt = Adam([p])
    with pytest.raises(FloatingPointError, match="layer0/pose/w"):
        opt.step([np.array([np.nan])], lr=0.1)
    assert p.data[0] == 1.0 and opt.t == 0


def test_clip_grad_norm():
    grads = [Tensor([3.0]), Tensor([4.0])]
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 5.0
    assert np.hypot(clipped[0].item(), clipped[1].item()) == pytest.approx(1.0)


# -- rng and checkpoints ---------------------------------------------------

def test_rng_reproducible_and_restorable():
    a, b = Rng(5), Rng(5)
    np.testing.assert_array_equal(a.uniform((4,)), b.uniform((4,)))
    state = a.get_state()
    first = a.normal((3,))
    a.set_state(state)
    np.testing.assert_array_equal(a.normal((3,)), first)
    assert not np.array_equal(Rng(5).uniform((4,)), Rng(6).uniform((4,)))


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"layer0/pose/w": np.arange(6.0).reshape(2, 3), "layer1/cell/b": np.ones(2, dtype=np.float32)}
    path = save_checkpoint(tmp_path / "c.npz", arrays, {"iteration": 3})
    loaded, meta = load_checkpoint(path)
    assert list(loaded) == list(arrays) and meta == {"iteration": 3}
    for k in arrays:
        assert loaded[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(loaded[k], arrays[k])


def test_checkpoint_rejects_foreign_zip(tmp_path):
    import zipfile

    path = tmp_path / "x.npz"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("__manifest__", '{"format": "other"}')
    with pytest.raises(ValueError, match="not a"):
        load_checkpoint(path)
