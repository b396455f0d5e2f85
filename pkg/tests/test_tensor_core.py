"""
Tests for the tensor engine, the gradient checker, modules and DCT1 encoding.
"""

import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.append(str(Path(__file__).parent.parent / "src"))

from src.tensor.core import (
    Tape,
    TapeError,
    Tensor,
    add,
    argmax,
    concat,
    depthwise_conv2d,
    elementwise,
    layernorm,
    log,
    log_softmax,
    matmul,
    reduce,
    sigmoid,
    softmax,
    softplus,
    take,
    transpose,
)
from src.tensor.gradcheck import grad_check, significant_indices
from src.tensor.module import Module
from src.tensor.serialization import FormatError, decode_dct1, encode_dct1


class TestElementwise:
    """Point values and error contracts of the elementwise primitives."""

    def test_point_values(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5
        assert softplus(Tensor(0.0)).item() == pytest.approx(np.log(2.0), abs=1e-15)
        np.testing.assert_array_equal(add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])

    def test_dispatch_by_name(self):
        x = Tensor([1.0, 4.0])
        np.testing.assert_array_equal(elementwise("power", x, 0.5).data, [1.0, 2.0])
        np.testing.assert_array_equal(elementwise("mul", x, x).data, [1.0, 16.0])
        with pytest.raises(ValueError):
            elementwise("cosh", x)

    def test_broadcast_mismatch_raises(self):
        with pytest.raises(ValueError):
            add(Tensor(np.ones(3)), Tensor(np.ones(2)))

    def test_log_of_non_positive_raises(self):
        with pytest.raises(ValueError):
            log(Tensor([1.0, 0.0]))

    def test_overflow_is_reported(self):
        with pytest.raises(FloatingPointError):
            elementwise("exp", Tensor([1000.0]))

    def test_broadcast_gradient_is_summed(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            out = reduce("sum", a * b)
        tape.backward(out)
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))

    def test_scalars_keep_rank_zero(self):
        x = Tensor(2.0, requires_grad=True)
        assert x.shape == ()
        with Tape() as tape:
            out = x * Tensor(np.ones(3))
            total = reduce("sum", out)
        assert total.shape == ()
        tape.backward(total)
        assert np.shape(x.grad) == ()
        assert float(x.grad) == 3.0


class TestLinearAlgebra:
    """matmul, reductions and argmax."""

    def test_matmul_identity_and_orthogonal(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
        np.testing.assert_array_equal(matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [1.0]])).data, [[0.0]])

    def test_matmul_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, atol=1e-12, rtol=0)

    def test_matmul_inner_mismatch_raises(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_reductions(self):
        assert reduce("sum", Tensor([1.0, 2.0, 3.0])).item() == 6.0
        assert reduce("mean", Tensor([2.0, 4.0])).item() == 3.0
        assert argmax(Tensor([0.1, 2.0, -1.0])) == 1
        assert argmax(Tensor([1.0, 1.0])) == 0

    def test_empty_reduction_raises(self):
        with pytest.raises(ValueError):
            reduce("sum", Tensor(np.zeros((0, 2))), 0)

    def test_max_gradient_goes_to_first_maximum(self):
        x = Tensor([1.0, 3.0, 3.0], requires_grad=True)
        with Tape() as tape:
            out = reduce("max", x)
        tape.backward(out)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


class TestCompositeOps:
    """layernorm, softmax and the depthwise convolution."""

    def test_layernorm_zero_variance_collapses_to_bias(self):
        out = layernorm(Tensor([1.0, 1.0, 1.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_layernorm_normalized_input(self):
        out = layernorm(Tensor([-1.0, 1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-9)

    def test_layernorm_matches_formula(self):
        rng = np.random.default_rng(5)
        x, gain, bias = rng.normal(size=7), rng.normal(size=7), rng.normal(size=7)
        expected = (x - x.mean()) / np.sqrt(x.var() + 1e-5) * gain + bias
        out = layernorm(Tensor(x), Tensor(gain), Tensor(bias))
        np.testing.assert_allclose(out.data, expected, atol=1e-12, rtol=0)

    def test_softmax_rows_sum_to_one(self):
        logits = Tensor(np.random.default_rng(0).normal(size=(4, 3)) * 50)
        np.testing.assert_allclose(softmax(logits).data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(np.isfinite(log_softmax(logits).data))

    def test_depthwise_delta_kernel_is_identity(self):
        x = np.random.default_rng(1).normal(size=(4, 5, 2))
        kernels = np.zeros((3, 3, 2))
        kernels[1, 1] = 1.0
        np.testing.assert_array_equal(depthwise_conv2d(Tensor(x), Tensor(kernels)).data, x)

    def test_depthwise_ones_kernel_on_constant_image(self):
        out = depthwise_conv2d(Tensor(np.full((4, 4, 1), 2.0)), Tensor(np.ones((3, 3, 1)))).data[..., 0]
        assert out[1, 1] == 18.0
        assert out[0, 0] == 8.0
        assert out[0, 1] == 12.0

    def test_depthwise_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x, k = rng.normal(size=(5, 5, 2)), rng.normal(size=(3, 3, 2))
        expected = np.zeros_like(x)
        for i in range(5):
            for j in range(5):
                for c in range(2):
                    for di in range(-1, 2):
                        for dj in range(-1, 2):
                            if 0 <= i + di < 5 and 0 <= j + dj < 5:
                                expected[i, j, c] += x[i + di, j + dj, c] * k[di + 1, dj + 1, c]
        np.testing.assert_allclose(depthwise_conv2d(Tensor(x), Tensor(k)).data, expected, atol=1e-12, rtol=0)

    def test_depthwise_channel_mismatch_raises(self):
        with pytest.raises(ValueError):
            depthwise_conv2d(Tensor(np.zeros((3, 3, 2))), Tensor(np.zeros((3, 3, 1))))


class TestTape:
    """Recording and replay rules."""

    def test_second_backward_raises(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = reduce("sum", x * x)
        tape.backward(out)
        with pytest.raises(TapeError):
            tape.backward(out)

    def test_non_scalar_backward_needs_seed(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = x * 2.0
        with pytest.raises(TapeError):
            tape.backward(out)

    def test_shared_subexpression_accumulates(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            y = x * x
            out = y + y
        tape.backward(out)
        assert x.grad == pytest.approx(12.0)

    def test_nothing_recorded_without_tape(self):
        x = Tensor(1.0, requires_grad=True)
        out = x * 2.0
        assert out.is_leaf
        with pytest.raises(TapeError):
            out.backward()


class TestGradCheck:
    """Tape gradients against central differences."""

    def test_square_is_exact(self):
        assert grad_check(lambda x: reduce("sum", x * x), [Tensor([3.0])]) < 1e-9

    def test_sigmoid_affine(self):
        rng = np.random.default_rng(0)
        w, x = Tensor(rng.normal(size=(3, 4)) * 0.5), Tensor(rng.normal(size=(4, 2)))
        assert grad_check(lambda w, x: reduce("sum", sigmoid(matmul(w, x))), [w, x]) < 1e-6

    def test_structural_ops(self):
        rng = np.random.default_rng(1)
        a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 2)))

        def f(a, b):
            joined = concat([a, b], axis=-1)
            picked = take(transpose(joined), np.array([4, 0, 0]), axis=0)
            return reduce("sum", softmax(picked) * Tensor(np.arange(2.0)))

        assert grad_check(f, [a, b]) < 1e-6

    def test_layernorm_and_conv(self):
        rng = np.random.default_rng(2)
        x, k = Tensor(rng.normal(size=(3, 3, 4))), Tensor(rng.normal(size=(3, 3, 4)))
        gain, bias = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))

        def f(x, k, gain, bias):
            return reduce("sum", sigmoid(layernorm(depthwise_conv2d(x, k), gain, bias)))

        indices = significant_indices(f, [x, k, gain, bias])
        assert all(len(i) > 0 for i in indices)
        assert grad_check(f, [x, k, gain, bias], indices=indices) < 1e-5

    def test_significant_indices_skip_dead_inputs(self):
        x = Tensor([1.0, 0.0, -2.0])
        indices = significant_indices(lambda x: reduce("sum", x * x), [x], floor=0.5)
        np.testing.assert_array_equal(indices[0], [2, 0])
        assert x.grad is None

    def test_non_finite_function_raises(self):
        with pytest.raises(FloatingPointError):
            grad_check(lambda x: reduce("sum", x * np.inf), [Tensor([1.0])])

    def test_non_scalar_function_raises(self):
        with pytest.raises(ValueError):
            grad_check(lambda x: x * 2.0, [Tensor([1.0, 2.0])])


class _Pair(Module):
    def __init__(self):
        super().__init__()
        self.add_parameter("w", np.ones((2, 2)))
        child = Module()
        child.add_parameter("b", np.zeros(2))
        self.add_module("child", child)


class TestModule:
    """Named parameter containers."""

    def test_dotted_names_and_count(self):
        module = _Pair()
        assert list(module.parameters()) == ["w", "child.b"]
        assert module.num_parameters() == 6

    def test_assign_replaces_values(self):
        module = _Pair()
        module.assign({"child.b": np.array([1.0, 2.0])})
        np.testing.assert_array_equal(module.child.b.data, [1.0, 2.0])
        assert module.child.b.requires_grad

    def test_assign_rejects_bad_names_and_shapes(self):
        module = _Pair()
        with pytest.raises(KeyError):
            module.assign({"child.c": np.zeros(2)})
        with pytest.raises(ValueError):
            module.assign({"w": np.zeros(3)})


class TestSerialization:
    """DCT1 encoding."""

    def test_round_trip_is_bitwise(self):
        array = np.random.default_rng(4).normal(size=(2, 3, 4))
        decoded = decode_dct1(encode_dct1(array))
        assert decoded.shape == array.shape
        assert decoded.tobytes() == array.tobytes()

    def test_rank_zero(self):
        assert decode_dct1(encode_dct1(np.array(2.5))).shape == ()
        assert decode_dct1(encode_dct1(2.5)).item() == 2.5

    def test_layout(self):
        payload = encode_dct1(np.zeros((2, 3)))
        assert payload[:4] == b"DCT1"
        assert len(payload) == 4 + 4 + 2 * 4 + 6 * 8

    def test_bad_magic_reports_offset(self):
        with pytest.raises(FormatError) as excinfo:
            decode_dct1(b"XXXX" + encode_dct1(np.zeros(2))[4:])
        assert excinfo.value.offset == 0

    def test_truncated_payload_raises(self):
        with pytest.raises(FormatError):
            decode_dct1(encode_dct1(np.zeros(4))[:-3])


if __name__ == "__main__":
    pytest.main([__file__])
