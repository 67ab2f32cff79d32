import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from collagan import autodiff as ad
from collagan import nn
from collagan.autodiff import Tensor, backward, precision
from oracles import conv2d_naive, conv2d_scipy, conv_transpose_naive, instance_norm_direct

rng0 = np.random.default_rng(0)


def T64(a, grad=False):
    return Tensor(a, requires_grad=grad, dtype=np.float64)


def test_pointwise_identity_conv():
    x = T64(rng0.standard_normal((1, 3, 5, 5)))
    w = T64(np.eye(3).reshape(3, 3, 1, 1))
    assert np.array_equal(nn.conv2d(x, w).data, x.data)


def test_all_ones_kernel_on_constant_field():
    c = 0.7
    y = nn.conv2d(T64(np.full((1, 1, 6, 6), c)), T64(np.ones((1, 1, 3, 3))), T64(np.zeros(1)), padding="valid")
    assert y.shape == (1, 1, 4, 4)
    assert np.allclose(y.data, 9 * c)


@pytest.mark.parametrize("stride,padding,pad", [(1, "same", 1), (1, "valid", 0), (2, 1, 1)])
def test_conv2d_matches_naive_loops(stride, padding, pad):
    rng = np.random.default_rng(3)
    x, w, b = rng.standard_normal((1, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    with precision(np.float64):
        y = nn.conv2d(T64(x), T64(w), T64(b), stride=stride, padding=padding)
    expected = conv2d_naive(x, w, b, stride=stride, pad=pad)
    assert y.shape == expected.shape
    assert np.max(np.abs(y.data - expected)) < 1e-6


def test_conv2d_matches_scipy_correlate():
    rng = np.random.default_rng(8)
    x, w, b = rng.standard_normal((2, 3, 7, 6)), rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2)
    with precision(np.float64):
        y = nn.conv2d(T64(x), T64(w), T64(b)).data
    assert np.max(np.abs(y - conv2d_scipy(x, w, b))) < 1e-9


def test_conv2d_output_size_formula():
    for H, k, s, p in [(7, 4, 2, 1), (32, 4, 2, 1), (9, 3, 1, 0), (10, 3, 3, 1)]:
        y = nn.conv2d(Tensor(np.zeros((1, 1, H, H))), Tensor(np.zeros((1, 1, k, k))), stride=s, padding=p)
        assert y.shape[-1] == (H + 2 * p - k) // s + 1


def test_conv2d_channel_mismatch_names_layer():
    layer = nn.Conv2d(3, 4, 3, np.random.default_rng(0), name="enc1")
    with pytest.raises(ValueError, match="enc1"):
        layer(Tensor(np.zeros((1, 2, 4, 4))))


def test_conv_transpose_shape_and_constant():
    y = nn.conv_transpose2d(Tensor(np.full((1, 1, 4, 4), 0.3)), Tensor(np.ones((1, 1, 2, 2))))
    assert y.shape == (1, 1, 8, 8)
    assert np.allclose(y.data, 0.3)


def test_conv_transpose_matches_scatter_loops_and_conv_gradient():
    rng = np.random.default_rng(4)
    x, w, b = rng.standard_normal((2, 3, 3, 4)), rng.standard_normal((5, 3, 2, 2)), rng.standard_normal(5)
    with precision(np.float64):
        y = nn.conv_transpose2d(T64(x), T64(w), T64(b)).data
        assert np.max(np.abs(y - conv_transpose_naive(x, w, b))) < 1e-6
        # transpose conv is the input-gradient of the matching strided conv
        z = T64(np.zeros((2, 5, 6, 8)), grad=True)
        out = nn.conv2d(z, T64(w.transpose(1, 0, 2, 3)), stride=2, padding="valid")
        backward(ad.tsum(out * T64(x)))
    assert np.max(np.abs(z.grad - (y - b[None, :, None, None]))) < 1e-6


def test_instance_norm_constant_channel_is_zero():
    y = nn.instance_norm(Tensor(np.full((1, 2, 4, 4), 3.0)))
    assert np.all(y.data == 0)


def test_instance_norm_matches_direct_formula():
    rng = np.random.default_rng(5)
    x, s, t = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal(3), rng.standard_normal(3)
    with precision(np.float64):
        y = nn.instance_norm(T64(x), T64(s), T64(t)).data
    assert np.max(np.abs(y - instance_norm_direct(x, s, t))) < 1e-6


@given(arrays(np.float64, (1, 2, 4, 4), elements=st.floats(-5, 5)))
def test_instance_norm_moments(x):
    # non-degenerate: variance well above the stabilizer
    assume(np.all(x.reshape(2, -1).std(axis=1) > 0.5))
    y = nn.instance_norm(T64(x)).data.reshape(2, -1)
    assert np.all(np.abs(y.mean(axis=1)) < 1e-6)
    assert np.all(np.abs(y.var(axis=1) - 1) < 1e-4)


@given(arrays(np.float64, (1, 2, 3, 3), elements=st.floats(-2, 2)),
       st.floats(0.5, 4.0), st.sampled_from([-1.0, 1.0]), st.floats(-3, 3))
def test_instance_norm_affine_invariance(x, mag, sign, shift):
    assume(np.all(x.reshape(2, -1).std(axis=1) > 0.3))
    a = mag * sign
    base = nn.instance_norm(T64(x), eps=1e-12).data
    moved = nn.instance_norm(T64(a * x + shift), eps=1e-12).data
    assert np.allclose(moved, np.sign(a) * base, atol=1e-5)


def test_leaky_relu_values():
    assert nn.leaky_relu(Tensor([5.0])).data[0] == 5.0
    assert np.isclose(nn.leaky_relu(Tensor([-1.0])).data[0], -0.2)
    x = np.linspace(-3, 3, 7)
    assert np.array_equal(nn.leaky_relu(T64(x), alpha=1.0).data, x)


def test_leaky_relu_subgradient_at_zero_is_one():
    x = T64([0.0], grad=True)
    backward(ad.tsum(nn.leaky_relu(x)))
    assert x.grad[0] == 1.0


def test_avg_pool_values_grad_and_odd_error():
    assert np.allclose(nn.avg_pool2(Tensor(np.full((1, 1, 4, 4), 0.3))).data, 0.3)
    x = T64(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), grad=True)
    y = nn.avg_pool2(x)
    assert y.data.item() == 2.5
    backward(ad.tsum(y))
    assert np.allclose(x.grad, 0.25)
    with pytest.raises(ValueError):
        nn.avg_pool2(Tensor(np.zeros((1, 1, 3, 4))))


def test_dropout_identities_and_errors():
    x = Tensor(np.arange(10.0))
    rng = np.random.default_rng(0)
    assert np.array_equal(nn.dropout(x, 0.0, True, rng).data, x.data)
    assert np.array_equal(nn.dropout(x, 0.0, False).data, x.data)
    assert np.array_equal(nn.dropout(x, 0.5, False).data, x.data)
    with pytest.raises(ValueError):
        nn.dropout(x, 1.0, True, rng)


def test_dropout_statistics():
    x = Tensor(np.ones(100_000))
    y = nn.dropout(x, 0.5, True, np.random.default_rng(1)).data
    assert abs(np.mean(y == 0) - 0.5) < 0.01
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(y)) <= {0.0, 2.0}


def test_fully_connected_cases():
    x = T64(np.array([[1.0, -2.0, 3.0]]))
    assert np.array_equal(nn.fully_connected(x, T64(np.eye(3)), T64(np.zeros(3))).data, x.data)
    b = np.array([0.5, -1.0])
    assert np.array_equal(nn.fully_connected(T64(np.zeros((1, 3))), T64(np.ones((2, 3))), T64(b)).data[0], b)
    rng = np.random.default_rng(6)
    xs, W, bias = rng.standard_normal((4, 2, 2, 2)), rng.standard_normal((3, 8)), rng.standard_normal(3)
    with precision(np.float64):
        y = nn.fully_connected(T64(xs), T64(W), T64(bias)).data
    flat = xs.reshape(4, 8)
    expected = np.array([[sum(flat[n, i] * W[o, i] for i in range(8)) + bias[o] for o in range(3)] for n in range(4)])
    assert np.max(np.abs(y - expected)) < 1e-6
    with pytest.raises(ValueError):
        nn.fully_connected(T64(np.zeros((1, 5))), T64(W))


def test_concat_channels_contract():
    a, b = Tensor(rng0.standard_normal((1, 2, 4, 4))), Tensor(rng0.standard_normal((1, 3, 4, 4)))
    assert np.array_equal(nn.concat_channels([a]).data, a.data)
    c = nn.concat_channels([a, b])
    assert c.shape == (1, 5, 4, 4)
    assert np.array_equal(c.data[:, :2], a.data) and np.array_equal(c.data[:, 2:], b.data)
    with pytest.raises(ValueError):
        nn.concat_channels([a, Tensor(np.zeros((1, 1, 3, 4)))])


def test_sigmoid_and_softmax_basics():
    assert nn.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert np.allclose(nn.softmax(Tensor(np.zeros(4))).data, 0.25)
    big = nn.sigmoid(T64([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] >= 0 and big[1] <= 1


@given(arrays(np.float64, (3, 5), elements=st.floats(-20, 20)), st.floats(-100, 100))
def test_softmax_shift_invariance_and_normalization(logits, c):
    p = nn.softmax(T64(logits), axis=1).data
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.max(np.abs(nn.softmax(T64(logits + c), axis=1).data - p)) < 1e-7


def test_same_conv_preserves_shape_and_pool_transpose_restore():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((1, 2, 8, 8)))
    y = nn.Conv2d(2, 3, 3, rng)(x)
    assert y.shape[-2:] == (8, 8)
    z = nn.ConvTranspose2d(3, 3, rng)(nn.avg_pool2(y))
    assert z.shape == y.shape


def test_init_is_seeded_and_truncated():
    a = nn.Conv2d(3, 8, 3, np.random.default_rng(11))
    b = nn.Conv2d(3, 8, 3, np.random.default_rng(11))
    assert a.weight.data.tobytes() == b.weight.data.tobytes()
    assert np.max(np.abs(a.weight.data)) <= 2 * nn.INIT_STD + 1e-7
    assert a.weight.shape == (8, 3, 3, 3) and a.bias.shape == (8,)
    norm = nn.InstanceNorm(4)
    assert np.all(norm.scale.data == 1) and np.all(norm.shift.data == 0)
