import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lindpo.autodiff import Tensor, sigmoid, softplus
from lindpo.nn import finite_diff_grad

elems = st.floats(-3, 3, allow_nan=False)


def _grad(fn, x):
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    fn(t).backward()
    return t.grad


OPS = {
    "tanh": lambda t: t.tanh().sum(),
    "sigmoid": lambda t: t.sigmoid().sum(),
    "silu": lambda t: t.silu().sum(),
    "softplus": lambda t: t.softplus().sum(),
    "square-mean": lambda t: t.square().mean(),
    "reciprocal": lambda t: (t * t + 1.0).reciprocal().sum(),
    "quotient": lambda t: (t / (t * t + 2.0)).sum(),
    "broadcast": lambda t: (t.slice_reshape(0, 4, (2, 2)) + t.slice_reshape(4, 6, (2,))).square().sum(),
    "matmul": lambda t: (t.slice_reshape(0, 4, (2, 2)) @ t.slice_reshape(2, 6, (2, 2))).tanh().sum(),
    "rsub-neg": lambda t: (1.0 - (-t)).square().sum(axis=0),
}


@pytest.mark.parametrize("name", sorted(OPS))
@given(x=arrays(np.float64, 6, elements=elems))
def test_op_gradient_matches_finite_differences(name, x):
    fn = OPS[name]
    auto = _grad(fn, x)
    fd = finite_diff_grad(lambda p: float(fn(Tensor(p)).value), x, h=1e-6)
    np.testing.assert_allclose(auto, fd, rtol=1e-5, atol=1e-7)


def test_reused_node_accumulates():
    # d/dx of x * x + x at 2 is 5
    assert _grad(lambda t: t * t + t, 2.0) == pytest.approx(5.0, abs=1e-15)


def test_detach_blocks_gradient():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    (x * x.detach()).sum().backward()
    np.testing.assert_array_equal(x.grad, [1.5, -2.0])


@given(st.floats(-800, 800))
def test_stable_sigmoid_and_softplus(x):
    s, sp = sigmoid(x), softplus(x)
    assert 0.0 <= s <= 1.0 and np.isfinite(sp) and sp >= 0.0
    assert sp >= x


def test_softplus_reference_values():
    assert softplus(2.5) == pytest.approx(np.log1p(np.exp(2.5)), rel=1e-15)
    assert softplus(-40.0) == pytest.approx(np.exp(-40.0), rel=1e-12)
